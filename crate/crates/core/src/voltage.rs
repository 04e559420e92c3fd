//! Electrical inconsistency of one pack.
//!
//! Spread statistics come straight from the per-sample voltage range. The
//! cell scores project every cell's voltage trace onto the dominant temporal
//! pattern of the robust low-rank part of the voltage matrix, then
//! standardize across cells; cells far above the rest are flagged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::rpca::{rpca_decompose, RpcaError, RpcaParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VoltageError {
    #[error("need at least 2 cells and 1 sample, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error(transparent)]
    Rpca(#[from] RpcaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoltageParams {
    pub rpca: RpcaParams,
    pub threshold: f64,
    /// Flag `|score| > threshold` instead of `score > threshold`.
    pub two_sided: bool,
}

impl Default for VoltageParams {
    fn default() -> Self {
        Self {
            rpca: RpcaParams::default(),
            threshold: 4.5,
            two_sided: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageEvaluation {
    pub dv_max: f64,
    pub dv_mean: f64,
    pub inconsistent_count: usize,
    pub scores: Vec<f64>,
    pub flagged_cells: Vec<usize>,
    pub rpca_iterations: usize,
    pub rpca_converged: bool,
}

/// Below this the score spread counts as zero and every cell scores 0.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Per-sample cell spread, reduced to its maximum and mean.
pub fn voltage_ranges(a: &DMatrix<f64>) -> Result<(f64, f64), VoltageError> {
    let (n, m) = a.shape();
    if n < 1 || m < 2 {
        return Err(VoltageError::Shape { rows: n, cols: m });
    }
    let spreads = row_spreads(a);
    let max = spreads.iter().copied().fold(0.0, f64::max);
    // The mean cannot exceed the max; min() only absorbs summation rounding.
    let mean = (spreads.iter().sum::<f64>() / n as f64).min(max);
    Ok((max, mean))
}

pub(crate) fn row_spreads(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter()
        .map(|row| {
            let (lo, hi) = row
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            hi - lo
        })
        .collect()
}

/// Standardized projection scores, one per cell (column).
pub fn inconsistency_scores(a: &DMatrix<f64>, params: &RpcaParams) -> Result<Vec<f64>, VoltageError> {
    Ok(scores_with_rpca(a, params)?.0)
}

fn scores_with_rpca(a: &DMatrix<f64>, params: &RpcaParams) -> Result<(Vec<f64>, usize, bool), VoltageError> {
    let (n, m) = a.shape();
    if n < 2 || m < 2 {
        return Err(VoltageError::Shape { rows: n, cols: m });
    }
    let rpca = rpca_decompose(a, params)?;
    let row_mean: DVector<f64> = a.column_mean();

    let svd = rpca.low_rank.clone().svd(true, false);
    let top = svd
        .singular_values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (k, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((k, s)),
        });
    let mut pattern: DVector<f64> = match top {
        Some((k, s)) if s > 0.0 => svd.u.as_ref().expect("U requested").column(k).into_owned(),
        // Empty low-rank part: fall back to the mean profile itself.
        _ => {
            let norm = row_mean.norm();
            if norm == 0.0 {
                return Ok((vec![0.0; m], rpca.iterations, rpca.converged));
            }
            &row_mean / norm
        }
    };
    if pattern.dot(&row_mean) < 0.0 {
        pattern.neg_mut();
    }

    let projection: Vec<f64> = (0..m).map(|j| a.column(j).dot(&pattern)).collect();
    Ok((standardize(&projection), rpca.iterations, rpca.converged))
}

/// `(x − mean) / std` with the population std; all zeros when degenerate.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
    if !(std >= DEGENERATE_STD) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|x| (x - mean) / std).collect()
}

pub fn evaluate_pack_voltage(a: &DMatrix<f64>, params: &VoltageParams) -> Result<VoltageEvaluation, VoltageError> {
    let (dv_max, dv_mean) = voltage_ranges(a)?;
    let (scores, rpca_iterations, rpca_converged) = scores_with_rpca(a, &params.rpca)?;
    let flagged_cells: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| {
            let level = if params.two_sided { s.abs() } else { s };
            level > params.threshold
        })
        .map(|(j, _)| j)
        .collect();
    Ok(VoltageEvaluation {
        dv_max,
        dv_mean,
        inconsistent_count: flagged_cells.len(),
        scores,
        flagged_cells,
        rpca_iterations,
        rpca_converged,
    })
}
