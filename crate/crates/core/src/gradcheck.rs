//! Central finite differences: the independent oracle for every gradient test.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for relative error. Gradients smaller than this sit at the
/// rounding noise of a central difference with `h = 1e-5` and are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective while perturbing coordinate {i}"
            )));
        }
        out[i] = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub shape: Vec<usize>,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Compares reverse-mode gradients of `loss` against finite differences for every
/// parameter in `store`. `loss_and_grad` must fill the store's gradient slots;
/// `loss` evaluates the objective only.
pub fn check_parameters<L, G>(
    store: &ParamStore,
    mut loss: L,
    loss_and_grad: G,
    h: f64,
) -> Result<Vec<ParamCheck>>
where
    L: FnMut(&ParamStore) -> Result<f64>,
    G: FnOnce(&mut ParamStore) -> Result<()>,
{
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    loss_and_grad(&mut with_grads)?;

    let mut probe = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let p = store.get(id);
        let analytic = with_grads
            .get(id)
            .value
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; p.value.len()]);
        let numeric = finite_diff_grad(
            |t| {
                probe.get_mut(id).value = t.clone();
                loss(&probe)
            },
            &p.value,
            h,
        )?;
        probe.get_mut(id).value = p.value.clone();
        report.push(ParamCheck {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            max_rel_err: max_relative_error(&analytic, numeric.data()),
            max_abs_grad: analytic.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn polynomial() {
        let x = Tensor::vector(&[1.0, 2.0]);
        let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn softmax_sum_is_flat() {
        let x = Tensor::vector(&[0.3, -1.2, 2.5, 0.0]);
        let g = finite_diff_grad(
            |t| Ok(ops::softmax(t, 0)?.data().iter().sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn non_finite_objective_is_error() {
        let x = Tensor::vector(&[0.0]);
        let r = finite_diff_grad(|t| Ok(t.data()[0].ln()), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
