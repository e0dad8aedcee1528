//! Gated recurrent units over per-timestep `[batch, dim]` inputs.
//!
//! Gate layout in the fused weights is `[reset | update | candidate]`:
//!
//! ```text
//! r  = sigmoid(x Wr + bir + h Ur + bhr)
//! z  = sigmoid(x Wz + biz + h Uz + bhz)
//! n  = tanh(x Wn + bin + r * (h Un + bhn))
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Rows whose position is past their true length keep their previous state,
//! so a sequence's encoding does not depend on how much padding its batch
//! carries.

use rand::Rng;

use crate::numeric::{NumericError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    w_input: ParamId,
    w_hidden: ParamId,
    b_input: ParamId,
    b_hidden: ParamId,
}

pub(crate) fn uniform(rng: &mut rng::Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-bound..bound);
    }
    t
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let g = 3 * hidden_size;
        GruCell {
            input_size,
            hidden_size,
            w_input: store.add(
                format!("{prefix}.w_input"),
                uniform(rng, &[input_size, g], bound),
                true,
            ),
            w_hidden: store.add(
                format!("{prefix}.w_hidden"),
                uniform(rng, &[hidden_size, g], bound),
                true,
            ),
            b_input: store.add(format!("{prefix}.b_input"), uniform(rng, &[g], bound), true),
            b_hidden: store.add(
                format!("{prefix}.b_hidden"),
                uniform(rng, &[g], bound),
                true,
            ),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_input, self.w_hidden, self.b_input, self.b_hidden]
    }

    fn step(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        h: Var,
        valid: Option<(Var, Var)>,
    ) -> Result<Var, NumericError> {
        let hs = self.hidden_size;
        let (wi, wh) = (tape.param(self.w_input), tape.param(self.w_hidden));
        let (bi, bh) = (tape.param(self.b_input), tape.param(self.b_hidden));
        let gx = tape.matmul(x, wi)?;
        let gx = tape.add_bias(gx, bi)?;
        let gh = tape.matmul(h, wh)?;
        let gh = tape.add_bias(gh, bh)?;

        let xr = tape.slice_cols(gx, 0, hs)?;
        let hr = tape.slice_cols(gh, 0, hs)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);

        let xz = tape.slice_cols(gx, hs, 2 * hs)?;
        let hz = tape.slice_cols(gh, hs, 2 * hs)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);

        let xn = tape.slice_cols(gx, 2 * hs, 3 * hs)?;
        let hn = tape.slice_cols(gh, 2 * hs, 3 * hs)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n);

        // h' = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        let next = tape.add(n, zd)?;

        match valid {
            None => Ok(next),
            Some((keep_new, keep_old)) => {
                let a = tape.mul_col(next, keep_new)?;
                let b = tape.mul_col(h, keep_old)?;
                tape.add(a, b)
            }
        }
    }

    /// Runs the cell over `inputs` in the given order of positions.
    fn run(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Var],
        valid: &[Option<(Var, Var)>],
        order: impl Iterator<Item = usize>,
    ) -> Result<Vec<Option<Var>>, NumericError> {
        let rows = tape.value(inputs[0]).rows();
        let mut h = tape.constant(Tensor::zeros(&[rows, self.hidden_size]));
        let mut out = vec![None; inputs.len()];
        for t in order {
            h = self.step(tape, inputs[t], h, valid[t])?;
            out[t] = Some(h);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        BiGru {
            forward: GruCell::new(
                store,
                &format!("{prefix}.fwd"),
                input_size,
                hidden_size,
                rng,
            ),
            backward: GruCell::new(
                store,
                &format!("{prefix}.bwd"),
                input_size,
                hidden_size,
                rng,
            ),
        }
    }

    pub fn output_size(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.forward.param_ids();
        ids.extend(self.backward.param_ids());
        ids
    }

    /// Encodes a sequence of `[batch, input]` steps into `[batch, 2*hidden]`
    /// states. `lengths` gives each row's true length; `None` means every
    /// row spans all steps.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Var],
        lengths: Option<&[usize]>,
    ) -> Result<Vec<Var>, NumericError> {
        if inputs.is_empty() {
            return Err(NumericError::EmptyInput("bigru"));
        }
        let steps = inputs.len();
        let valid: Vec<Option<(Var, Var)>> = (0..steps)
            .map(|t| {
                let lengths = lengths?;
                if lengths.iter().all(|&l| t < l) {
                    return None;
                }
                let keep: Vec<f64> = lengths
                    .iter()
                    .map(|&l| if t < l { 1.0 } else { 0.0 })
                    .collect();
                let old: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
                let n = keep.len();
                let kn = tape.constant(Tensor::new(vec![n, 1], keep).expect("rows"));
                let ko = tape.constant(Tensor::new(vec![n, 1], old).expect("rows"));
                Some((kn, ko))
            })
            .collect();
        let fwd = self.forward.run(tape, inputs, &valid, 0..steps)?;
        let bwd = self.backward.run(tape, inputs, &valid, (0..steps).rev())?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_cols(&[f.expect("visited"), b.expect("visited")]))
            .collect()
    }
}
