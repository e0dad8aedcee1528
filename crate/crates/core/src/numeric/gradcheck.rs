//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NumericError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates per parameter beyond which a fixed random subsample is used.
    pub max_coords: usize,
    /// Magnitudes below this are compared absolutely rather than relatively.
    pub abs_floor: f64,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Default::default()
        }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-4,
            step: 1e-5,
            max_coords: 64,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Set when a non-finite value was met; names the location.
    pub failure: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    /// True when every checked parameter passed; vacuously true when empty.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(store: &ParamStore, forward: &mut F) -> Result<f64, NumericError>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var, NumericError>,
{
    let mut tape = Tape::new(store);
    let loss = forward(&mut tape)?;
    tape.value(loss).item()
}

/// Analytic gradients of `forward` at the current parameter values.
pub fn analytic_gradients<F>(store: &ParamStore, mut forward: F) -> Result<Gradients, NumericError>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var, NumericError>,
{
    let mut tape = Tape::new(store);
    let loss = forward(&mut tape)?;
    tape.backward(loss)
}

/// Checks `analytic` against central differences of `forward` for every
/// trainable parameter in `store`. Parameter values are restored bitwise.
pub fn compare_gradients<F>(
    store: &mut ParamStore,
    mut forward: F,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var, NumericError>,
{
    if !(opts.tolerance > 0.0) {
        return Err(NumericError::InvalidHyperparameter(format!(
            "tolerance={}",
            opts.tolerance
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let mut params = Vec::with_capacity(ids.len());

    for id in ids {
        let name = store.name(id).to_string();
        let numel = store.value(id).numel();
        let coords: Vec<usize> = if numel > opts.max_coords {
            let mut picked = sample(&mut rng, numel, opts.max_coords).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..numel).collect()
        };
        let zeros;
        let grad = match analytic.get(id) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; numel];
                &zeros
            }
        };

        let mut check = ParamCheck {
            name: name.clone(),
            coords_checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            failure: None,
            passed: true,
        };
        for &i in &coords {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + opts.step;
            let plus = eval(store, &mut forward);
            store.value_mut(id).data_mut()[i] = original - opts.step;
            let minus = eval(store, &mut forward);
            store.value_mut(id).data_mut()[i] = original;
            let (plus, minus) = (plus?, minus?);
            check.coords_checked += 1;

            let numeric = (plus - minus) / (2.0 * opts.step);
            if !numeric.is_finite() || !grad[i].is_finite() {
                check.failure = Some(format!("{name}[{i}]: non-finite value"));
                check.passed = false;
                check.worst_index = i;
                check.max_rel_error = f64::INFINITY;
                break;
            }
            let err = relative_error(grad[i], numeric, opts.abs_floor);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        check.passed = check.passed && check.max_rel_error <= opts.tolerance;
        params.push(check);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}

/// Compares the tape's gradients of `forward` with central differences on
/// every trainable parameter (or a fixed random subsample of large ones).
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&mut Tape<'_>) -> Result<Var, NumericError>,
{
    let analytic = analytic_gradients(store, &mut forward)?;
    compare_gradients(store, forward, &analytic, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn linear_store() -> (ParamStore, ParamId, ParamId) {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            Tensor::new(vec![3, 2], vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.5]).unwrap(),
            true,
        );
        let b = store.add("b", Tensor::new(vec![2], vec![0.05, -0.02]).unwrap(), true);
        (store, w, b)
    }

    fn linear_loss(
        w: ParamId,
        b: ParamId,
    ) -> impl FnMut(&mut Tape<'_>) -> Result<Var, NumericError> {
        move |tape| {
            let x = tape.constant(Tensor::new(
                vec![2, 3],
                vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0],
            )?);
            let (wv, bv) = (tape.param(w), tape.param(b));
            let y = tape.matmul(x, wv)?;
            let y = tape.add_bias(y, bv)?;
            let y = tape.tanh(y);
            let sq = tape.mul(y, y)?;
            Ok(tape.sum(sq))
        }
    }

    #[test]
    fn linear_layer_passes() {
        let (mut store, w, b) = linear_store();
        let before = store.value(w).clone();
        let report =
            grad_check(&mut store, linear_loss(w, b), &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.params.len(), 2);
        assert_eq!(store.value(w), &before);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (mut store, w, b) = linear_store();
        let mut grads = analytic_gradients(&store, linear_loss(w, b)).unwrap();
        grads.map.get_mut(&w).unwrap().data_mut()[0] += 0.1;
        let report = compare_gradients(
            &mut store,
            linear_loss(w, b),
            &grads,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        let wcheck = &report.params[0];
        assert!(!wcheck.passed && wcheck.worst_index == 0);
        assert!(report.params[1].passed);
    }

    #[test]
    fn empty_fragment_passes_vacuously() {
        let mut store = ParamStore::new();
        let report = grad_check(
            &mut store,
            |tape| {
                let x = tape.constant(Tensor::scalar(2.0));
                Ok(tape.sum(x))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.params.is_empty());
    }

    #[test]
    fn non_finite_loss_reports_location() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0), true);
        let report = grad_check(
            &mut store,
            move |tape| {
                let wv = tape.param(w);
                let zero = tape.constant(Tensor::scalar(0.0));
                let inv = tape.div_col(wv, zero)?;
                Ok(tape.sum(inv))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.params[0]
            .failure
            .as_deref()
            .unwrap()
            .contains("w[0]"));
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        let (mut store, w, b) = linear_store();
        let opts = GradCheckOptions::with_tolerance(0.0);
        assert!(grad_check(&mut store, linear_loss(w, b), &opts).is_err());
    }
}
