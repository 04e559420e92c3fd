//! Standard-operation selection.
//!
//! An operation is standard when it lasts at least `t_min_s`, and the
//! current in the middle of the operation (ramp-up and ramp-down trimmed by
//! `trim_fraction` of the duration at each end) is well described by a
//! constant: the least-squares constant has magnitude of at least `c_th_a`
//! and the fit RMSE stays within `eps_rmse_a`.

use serde::{Deserialize, Serialize};

use crate::ingest::OperationSegment;
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectError {
    #[error("empty middle window: no sample within [t1 + {trim_s} s, tn - {trim_s} s]")]
    EmptyMiddleWindow { trim_s: f64 },
    #[error("invalid selection parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub t_min_s: f64,
    pub c_th_a: f64,
    pub eps_rmse_a: f64,
    pub trim_fraction: f64,
    /// Compare the signed constant against `c_th_a` instead of its magnitude.
    /// Under the discharge-positive convention this rejects every charge.
    pub signed_threshold: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            t_min_s: 5400.0,
            c_th_a: 110.0,
            eps_rmse_a: 15.0,
            trim_fraction: 1.0 / 6.0,
            signed_threshold: false,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectError> {
        let positive = [
            ("t_min_s", self.t_min_s),
            ("c_th_a", self.c_th_a),
            ("eps_rmse_a", self.eps_rmse_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SelectError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction < 0.5) {
            return Err(SelectError::InvalidParams(format!(
                "trim_fraction must lie in (0, 0.5), got {}",
                self.trim_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub c_star: f64,
    pub rmse: f64,
    pub middle_index_count: usize,
}

/// Least-squares constant fit over the closed middle window.
pub fn fit_constant(op: &OperationSegment, trim_fraction: f64) -> Result<FitResult, SelectError> {
    fit_constant_raw(op.timestamps(), op.current(), trim_fraction)
}

pub(crate) fn fit_constant_raw(t: &[f64], current: &[f64], trim_fraction: f64) -> Result<FitResult, SelectError> {
    let (first, last) = (t[0], t[t.len() - 1]);
    let trim = (last - first) * trim_fraction;
    // Offsets from the endpoints keep membership exact under time shifts.
    let middle: Vec<f64> = t
        .iter()
        .zip(current)
        .filter(|(&tj, _)| tj - first >= trim && last - tj >= trim)
        .map(|(_, &i)| i)
        .collect();
    if middle.is_empty() {
        return Err(SelectError::EmptyMiddleWindow { trim_s: trim });
    }
    let count = middle.len() as f64;
    let c_star = middle.iter().sum::<f64>() / count;
    let mse = middle.iter().map(|i| (i - c_star).powi(2)).sum::<f64>() / count;
    Ok(FitResult {
        c_star,
        rmse: mse.sqrt(),
        middle_index_count: middle.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ShortDuration,
    LowCurrent,
    LargeFittingError,
    EmptyMiddleWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub duration_s: f64,
    pub fit: Option<FitResult>,
    pub rejected: Option<RejectReason>,
}

impl Decision {
    pub fn accepted(&self) -> bool {
        self.rejected.is_none()
    }
}

/// Applies the selection rule to one operation, short-circuiting in the
/// order duration, current magnitude, fit error.
pub fn decide(op: &OperationSegment, params: &SelectionParams) -> Decision {
    let duration_s = op.duration_s();
    let reject = |fit, reason| Decision {
        duration_s,
        fit,
        rejected: Some(reason),
    };
    if duration_s < params.t_min_s {
        return reject(None, RejectReason::ShortDuration);
    }
    let fit = match fit_constant(op, params.trim_fraction) {
        Ok(fit) => fit,
        Err(_) => return reject(None, RejectReason::EmptyMiddleWindow),
    };
    let level = if params.signed_threshold { fit.c_star } else { fit.c_star.abs() };
    if level < params.c_th_a {
        return reject(Some(fit), RejectReason::LowCurrent);
    }
    if fit.rmse > params.eps_rmse_a {
        return reject(Some(fit), RejectReason::LargeFittingError);
    }
    Decision {
        duration_s,
        fit: Some(fit),
        rejected: None,
    }
}

/// Decisions for a batch of operations, in input order.
pub fn decide_all(ops: &[OperationSegment], params: &SelectionParams, mode: ExecMode) -> Vec<Decision> {
    par::map(mode, ops, |op| decide(op, params))
}

/// Keeps the standard operations, order preserved.
pub fn select_standard_ops(
    ops: &[OperationSegment],
    params: &SelectionParams,
) -> Vec<(OperationSegment, FitResult)> {
    ops.iter()
        .zip(decide_all(ops, params, ExecMode::Parallel))
        .filter_map(|(op, d)| match (d.rejected, d.fit) {
            (None, Some(fit)) => Some((op.clone(), fit)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    pub(crate) fn op_with_current(current: Vec<f64>, dt: f64) -> OperationSegment {
        let n = current.len();
        let t = (0..n).map(|i| i as f64 * dt).collect();
        OperationSegment::new(
            1,
            t,
            DMatrix::from_element(n, 2, 3.3),
            DMatrix::from_element(n, 2, 25.0),
            current,
            vec![0.5; n],
        )
        .unwrap()
    }

    #[test]
    fn constant_signal_fits_exactly() {
        let op = op_with_current(vec![120.0; 721], 10.0);
        let fit = fit_constant(&op, 1.0 / 6.0).unwrap();
        assert_eq!(fit.c_star, 120.0);
        assert_eq!(fit.rmse, 0.0);
        // 7200 s, window [1200, 6000] closed: samples 120..=600.
        assert_eq!(fit.middle_index_count, 481);
    }

    #[test]
    fn middle_window_mean_and_rmse() {
        // Seven samples at 1 s: trim = 1 s, window keeps indices 1..=5.
        let op = op_with_current(vec![999.0, 100.0, 110.0, 120.0, 110.0, 110.0, -999.0], 1.0);
        let fit = fit_constant(&op, 1.0 / 6.0).unwrap();
        let middle = [100.0, 110.0, 120.0, 110.0, 110.0];
        let mean = middle.iter().sum::<f64>() / 5.0;
        let rmse = (middle.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0).sqrt();
        assert_eq!(fit.middle_index_count, 5);
        assert!((fit.c_star - mean).abs() < 1e-12);
        assert!((fit.rmse - rmse).abs() < 1e-12);
    }

    #[test]
    fn three_sample_window_matches_hand_values() {
        // Window of exactly {100, 110, 120}: c* = 110, rmse = sqrt(200/3).
        let op = op_with_current(vec![0.0, 0.0, 100.0, 110.0, 120.0, 0.0, 0.0], 1.0);
        let fit = fit_constant(&op, 1.0 / 3.0).unwrap();
        assert_eq!(fit.middle_index_count, 3);
        assert!((fit.c_star - 110.0).abs() < 1e-12);
        assert!((fit.rmse - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((fit.rmse - 8.165).abs() < 1e-3);
    }

    #[test]
    fn two_samples_have_empty_window() {
        let op = op_with_current(vec![120.0, 120.0], 100.0);
        assert!(matches!(
            fit_constant(&op, 1.0 / 6.0),
            Err(SelectError::EmptyMiddleWindow { .. })
        ));
    }

    #[test]
    fn threshold_cases() {
        let p = SelectionParams::default();
        let stable = op_with_current(vec![120.0; 721], 10.0);
        assert!(decide(&stable, &p).accepted());
        let short = op_with_current(vec![120.0; 361], 10.0);
        assert_eq!(decide(&short, &p).rejected, Some(RejectReason::ShortDuration));
        let weak = op_with_current(vec![50.0; 721], 10.0);
        assert_eq!(decide(&weak, &p).rejected, Some(RejectReason::LowCurrent));
        // Square wave 100/140: mean 120, rmse 20.
        let noisy = op_with_current((0..721).map(|i| if i % 2 == 0 { 100.0 } else { 140.0 }).collect(), 10.0);
        let d = decide(&noisy, &p);
        assert_eq!(d.rejected, Some(RejectReason::LargeFittingError));
        assert!((d.fit.unwrap().rmse - 20.0).abs() < 0.1);
    }

    #[test]
    fn charge_uses_magnitude_unless_signed() {
        let charge = op_with_current(vec![-120.0; 721], 10.0);
        assert!(decide(&charge, &SelectionParams::default()).accepted());
        let signed = SelectionParams {
            signed_threshold: true,
            ..Default::default()
        };
        assert_eq!(decide(&charge, &signed).rejected, Some(RejectReason::LowCurrent));
    }

    #[test]
    fn c_star_minimizes_mse() {
        let current: Vec<f64> = (0..721).map(|i| 120.0 + ((i * 37) % 11) as f64 - 5.0).collect();
        let op = op_with_current(current.clone(), 10.0);
        let fit = fit_constant(&op, 1.0 / 6.0).unwrap();
        let middle = &current[120..=600];
        let cost = |c: f64| middle.iter().map(|x| (x - c).powi(2)).sum::<f64>() / middle.len() as f64;
        assert!(cost(fit.c_star + 0.1) > cost(fit.c_star));
        assert!(cost(fit.c_star - 0.1) > cost(fit.c_star));
    }

    #[test]
    fn params_validation() {
        assert!(SelectionParams::default().validate().is_ok());
        let bad = SelectionParams {
            trim_fraction: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SelectionParams {
            c_th_a: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
