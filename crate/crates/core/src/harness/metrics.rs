//! Error metric and order statistics.

use serde::Serialize;

use crate::linalg::CVector;

/// `sqrt(mean |v_est - v_true|^2) / |v_base|`.
pub fn nrmse(v_est: &CVector, v_true: &CVector, v_base: f64) -> f64 {
    assert_eq!(v_est.len(), v_true.len(), "nrmse of vectors with different lengths");
    if v_est.is_empty() {
        return 0.0;
    }
    let sq: f64 = v_est.iter().zip(v_true.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
    (sq / v_est.len() as f64).sqrt() / v_base
}

/// Quantile with linear interpolation between order statistics (the usual
/// "type 7" definition). `NaN` for an empty sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Summary {
            count: values.len(),
            min: quantile(values, 0.0),
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
            max: quantile(values, 1.0),
            mean,
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}
