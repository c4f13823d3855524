use super::{AutodiffError, Graph, ParamStore, Var};
use crate::scalar::Scalar;

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Elements whose disagreement is within finite-difference round-off.
    pub noise_limited: usize,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Relative error after subtracting `noise`, the round-off bound of the
/// numeric estimate. A zero gradient checked by differences has no
/// meaningful relative error otherwise.
pub fn relative_error_beyond_noise(analytic: f64, numeric: f64, noise: f64) -> f64 {
    let excess = ((analytic - numeric).abs() - noise).max(0.0);
    excess / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Rounding in `f(w + eps) - f(w - eps)` is a few ulps of the operands,
/// taken at unit scale or more since intermediates of order one can cancel
/// into a small `f`. Dividing by `2 eps` bounds the error in the estimate.
fn round_off_bound(plus: f64, minus: f64, eps: f64, machine_eps: f64) -> f64 {
    16.0 * machine_eps * plus.abs().max(minus.abs()).max(1.0) / (2.0 * eps)
}

/// Checks every trainable scalar of `params` against the central difference
/// `(f(w + eps) - f(w - eps)) / 2 eps`, using
/// [`relative_error_beyond_noise`] per element.
///
/// `f` must be deterministic (dropout off) and return a one-element value.
pub fn finite_diff_check<T, F>(
    mut f: F,
    params: &mut ParamStore<T>,
    eps: f64,
) -> Result<GradCheck, AutodiffError>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(loss)?;

    let mut eval = |params: &ParamStore<T>| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let out = f(&mut g, params)?;
        g.value(out)
            .item()
            .map(|v| v.as_f64())
            .ok_or_else(|| AutodiffError::NonScalarLoss(g.shape(out).to_vec()))
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        noise_limited: 0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().filter(|&id| !params.is_frozen(id)).collect();
    for id in ids {
        let analytic = grads.get(id).cloned();
        for k in 0..params.value(id).len() {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + T::lit(eps);
            let plus = eval(params)?;
            params.value_mut(id).data_mut()[k] = orig - T::lit(eps);
            let minus = eval(params)?;
            params.value_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[k].as_f64());
            let noise = round_off_bound(plus, minus, eps, T::epsilon().as_f64());
            let err = relative_error_beyond_noise(a, numeric, noise);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if a != numeric && (a - numeric).abs() <= noise {
                report.noise_limited += 1;
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
