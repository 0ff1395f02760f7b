//! Daily load profiles and the synthetic ground truth drawn around them.

use crate::linalg::{CVector, C64};
use crate::measurement::perturb_relative;
use crate::rng;

/// Hourly residential shape with morning and evening peaks (mean 1 after scaling).
const HOURLY_SHAPE: [f64; 24] = [
    0.55, 0.48, 0.45, 0.44, 0.46, 0.55, 0.80, 1.10, 1.20, 1.05, 0.95, 0.90, 0.88, 0.85, 0.88,
    0.98, 1.15, 1.45, 1.65, 1.70, 1.55, 1.30, 1.00, 0.72,
];

/// Load multiplier for step `t` of a day split into `steps` intervals.
pub fn shape_factor(t: usize, steps: usize) -> f64 {
    let mean = HOURLY_SHAPE.iter().sum::<f64>() / 24.0;
    let hour = (t * 24 / steps.max(1)).min(23);
    HOURLY_SHAPE[hour] / mean
}

/// Forecast injections per step: the base load scaled by the daily shape.
pub fn generate_profiles(base: &CVector, steps: usize) -> Vec<CVector> {
    (0..steps)
        .map(|t| base * C64::new(shape_factor(t, steps), 0.0))
        .collect()
}

/// True injections for `(t, trial)`: the forecast with independent relative
/// errors of standard deviation `sigma` on real and imaginary parts.
pub fn true_injections(forecast: &CVector, sigma: f64, seed: u64, t: usize, trial: usize) -> CVector {
    let mut r = rng::stream(seed, &[rng::tag::TRUTH_LOAD, t as u64, trial as u64]);
    perturb_relative(forecast, sigma, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_has_unit_mean_over_a_day() {
        let m: f64 = (0..96).map(|t| shape_factor(t, 96)).sum::<f64>() / 96.0;
        assert!((m - 1.0).abs() < 1e-12);
        assert!(shape_factor(19 * 4, 96) > shape_factor(3 * 4, 96));
    }

    #[test]
    fn truth_keeps_zero_entries_and_is_reproducible() {
        let f = CVector::from_vec(vec![C64::new(-0.1, -0.05), C64::new(0.0, 0.0)]);
        let a = true_injections(&f, 0.5, 9, 3, 1);
        assert_eq!(a, true_injections(&f, 0.5, 9, 3, 1));
        assert_ne!(a, true_injections(&f, 0.5, 9, 3, 2));
        assert_eq!(a[1], C64::new(0.0, 0.0));
    }
}
