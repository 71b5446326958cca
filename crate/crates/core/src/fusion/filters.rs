//! Per-voxel update rules. Each takes the stored state and a non-χ
//! measurement and returns the new state, applying the χ cutoff at `|T| > δ`.

#[inline]
fn cutoff(t: f64, truncation: f64) -> Option<f64> {
    (t.abs() <= truncation).then_some(t)
}

/// Fixed-weight running blend.
#[inline]
pub fn fuse_simple(t: Option<f64>, measured: f64, weight: f64, truncation: f64) -> Option<f64> {
    let next = match t {
        None => measured,
        Some(t) => (1.0 - weight) * t + weight * measured,
    };
    cutoff(next, truncation)
}

/// Weighted average with accumulated weight capped at `max_weight`.
/// Returns the new distance and accumulated weight.
#[inline]
pub fn fuse_weighted(
    t: Option<f64>,
    accumulated: f64,
    measured: f64,
    weight: f64,
    max_weight: f64,
    truncation: f64,
) -> (Option<f64>, f64) {
    let (next, w) = match t {
        None => (measured, weight),
        Some(t) => (
            (accumulated * t + weight * measured) / (accumulated + weight),
            (accumulated + weight).min(max_weight),
        ),
    };
    match cutoff(next, truncation) {
        Some(next) => (Some(next), w),
        None => (None, 0.0),
    }
}

/// Scalar Kalman filter with a constant-state model. Returns the new distance
/// and estimate variance.
#[inline]
pub fn fuse_kalman(
    t: Option<f64>,
    variance: f64,
    measured: f64,
    measured_variance: f64,
    process_variance: f64,
    truncation: f64,
) -> (Option<f64>, f64) {
    let (next, p) = match t {
        None => (measured, measured_variance),
        Some(t) => {
            let predicted = variance + process_variance;
            let gain = predicted / (predicted + measured_variance);
            (t + gain * (measured - t), (1.0 - gain) * predicted)
        }
    };
    match cutoff(next, truncation) {
        Some(next) => (Some(next), p),
        None => (None, 0.0),
    }
}
