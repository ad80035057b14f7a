use nalgebra::DVector;

use crate::model::ModelParams;
use crate::num::Real;

/// Root mean squared density and speed errors over every segment and every
/// step. Relative-flow errors are not scored.
pub fn rmse<T: Real>(params: &ModelParams<T>, truth: &[DVector<T>], estimate: &[DVector<T>]) -> (T, T) {
    assert_eq!(truth.len(), estimate.len(), "trajectories differ in length");
    if truth.is_empty() {
        return (T::zero(), T::zero());
    }
    let mut se_rho = T::zero();
    let mut se_v = T::zero();
    let mut count = 0usize;
    for (xt, xe) in truth.iter().zip(estimate) {
        for s in 0..xt.len() / 2 {
            let dr = xt[2 * s] - xe[2 * s];
            let dv = params.speed(xt[2 * s], xt[2 * s + 1]) - params.speed(xe[2 * s], xe[2 * s + 1]);
            se_rho += dr * dr;
            se_v += dv * dv;
            count += 1;
        }
    }
    let c = T::lit(count as f64);
    ((se_rho / c).sqrt(), (se_v / c).sqrt())
}

/// Trailing mean over the last `min(window, k + 1)` entries.
pub fn moving_average<T: Real>(series: &[DVector<T>], window: usize) -> Vec<DVector<T>> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let Some(first) = series.first() else {
        return out;
    };
    let mut sum = DVector::zeros(first.len());
    for (k, x) in series.iter().enumerate() {
        sum += x;
        if k >= window {
            sum -= &series[k - window];
        }
        let len = (k + 1).min(window);
        out.push(&sum / T::lit(len as f64));
    }
    out
}
