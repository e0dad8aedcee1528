//! Finite-difference checks of every differentiable tape primitive.
//!
//! Each case feeds random trainable inputs through one operation and
//! reduces the output with a fixed random weighting, so every output
//! coordinate contributes a distinct gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{
    analytic_gradients, compare_gradients, grad_check, GradCheckOptions, GradCheckReport,
};
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{NumericError, Tensor};

type Forward = fn(&mut Tape<'_>, &[ParamId]) -> Result<Var, NumericError>;

struct Case {
    name: &'static str,
    inputs: &'static [&'static [usize]],
    forward: Forward,
    /// Differentiable stand-in whose finite differences the analytic
    /// gradient must match, for ops whose forward value is piecewise constant.
    surrogate: Option<Forward>,
}

fn p(tape: &mut Tape<'_>, ids: &[ParamId], i: usize) -> Var {
    tape.param(ids[i])
}

const CASES: &[Case] = &[
    Case {
        name: "matmul",
        inputs: &[&[3, 4], &[4, 2]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.matmul(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "add",
        inputs: &[&[3, 2], &[3, 2]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.add(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "sub",
        inputs: &[&[3, 2], &[3, 2]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.sub(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "mul",
        inputs: &[&[3, 2], &[3, 2]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.mul(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "add_bias",
        inputs: &[&[3, 4], &[4]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.add_bias(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "mul_col",
        inputs: &[&[3, 4], &[3, 1]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.mul_col(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "div_col",
        inputs: &[&[3, 4], &[3, 1]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            // Keep the divisor away from zero.
            let b = t.abs(b);
            let b = t.add_scalar(b, 0.5);
            t.div_col(a, b)
        },
        surrogate: None,
    },
    Case {
        name: "add_n",
        inputs: &[&[2, 3], &[2, 3], &[2, 3]],
        forward: |t, ids| {
            let xs: Vec<Var> = (0..3).map(|i| p(t, ids, i)).collect();
            t.add_n(&xs)
        },
        surrogate: None,
    },
    Case {
        name: "max_n",
        inputs: &[&[2, 3], &[2, 3], &[2, 3]],
        forward: |t, ids| {
            let xs: Vec<Var> = (0..3).map(|i| p(t, ids, i)).collect();
            t.max_n(&xs)
        },
        surrogate: None,
    },
    Case {
        name: "scale",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.scale(a, -1.7))
        },
        surrogate: None,
    },
    Case {
        name: "add_scalar",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.add_scalar(a, 0.3))
        },
        surrogate: None,
    },
    Case {
        name: "one_minus",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.one_minus(a))
        },
        surrogate: None,
    },
    Case {
        name: "sigmoid",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.sigmoid(a))
        },
        surrogate: None,
    },
    Case {
        name: "tanh",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.tanh(a))
        },
        surrogate: None,
    },
    Case {
        name: "abs",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.abs(a))
        },
        surrogate: None,
    },
    Case {
        name: "softmax",
        inputs: &[&[2, 4]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.softmax(a))
        },
        surrogate: None,
    },
    Case {
        name: "log_softmax",
        inputs: &[&[2, 4]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.log_softmax(a))
        },
        surrogate: None,
    },
    Case {
        name: "concat_cols",
        inputs: &[&[3, 2], &[3, 1]],
        forward: |t, ids| {
            let (a, b) = (p(t, ids, 0), p(t, ids, 1));
            t.concat_cols(&[a, b])
        },
        surrogate: None,
    },
    Case {
        name: "slice_cols",
        inputs: &[&[3, 5]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            t.slice_cols(a, 1, 4)
        },
        surrogate: None,
    },
    Case {
        name: "sum",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.sum(a))
        },
        surrogate: None,
    },
    Case {
        name: "mean",
        inputs: &[&[2, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.mean(a))
        },
        surrogate: None,
    },
    Case {
        name: "sum_cols",
        inputs: &[&[3, 4]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            Ok(t.sum_cols(a))
        },
        surrogate: None,
    },
    Case {
        name: "embedding",
        inputs: &[&[5, 3]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            t.embedding(a, &[4, 0, 2, 4])
        },
        surrogate: None,
    },
    Case {
        name: "straight_through",
        inputs: &[&[3, 1]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            let s = t.sigmoid(a);
            t.straight_through(s, Tensor::new(vec![3, 1], vec![1.0, 0.0, 1.0])?)
        },
        surrogate: Some(|t, ids| {
            let a = p(t, ids, 0);
            Ok(t.sigmoid(a))
        }),
    },
    Case {
        name: "pick_negative",
        inputs: &[&[3, 4]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            t.pick_negative(a, &[2, 0, 3])
        },
        surrogate: None,
    },
    Case {
        name: "cross_entropy",
        inputs: &[&[3, 4]],
        forward: |t, ids| {
            let a = p(t, ids, 0);
            t.cross_entropy(a, &[1, 3, 0])
        },
        surrogate: None,
    },
];

/// Names of the primitives covered by [`check_primitives`].
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Values in `±[0.2, 1.2)`, bounded away from the kinks of `abs` and `max`.
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.2);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn check_case(
    case: &Case,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, NumericError> {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            store.add(
                format!("{}.x{i}", case.name),
                random_tensor(rng, shape),
                true,
            )
        })
        .collect();
    let out_shape = {
        let mut tape = Tape::new(&store);
        let out = (case.forward)(&mut tape, &ids)?;
        tape.shape(out).to_vec()
    };
    let weights = random_tensor(rng, &out_shape);
    let reduce = |forward: Forward| {
        let weights = weights.clone();
        let ids = ids.clone();
        move |tape: &mut Tape<'_>| {
            let out = forward(tape, &ids)?;
            let w = tape.constant(weights.clone());
            let weighted = tape.mul(out, w)?;
            Ok(tape.sum(weighted))
        }
    };
    match case.surrogate {
        None => grad_check(&mut store, reduce(case.forward), opts),
        Some(surrogate) => {
            let analytic = analytic_gradients(&store, reduce(case.forward))?;
            compare_gradients(&mut store, reduce(surrogate), &analytic, opts)
        }
    }
}

/// Runs the check for every primitive, returning `(name, report)` pairs in
/// a fixed order. `opts.seed` also seeds the random inputs.
pub fn check_primitives(
    opts: &GradCheckOptions,
) -> Result<Vec<(&'static str, GradCheckReport)>, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    CASES
        .iter()
        .map(|case| Ok((case.name, check_case(case, opts, &mut rng)?)))
        .collect()
}
