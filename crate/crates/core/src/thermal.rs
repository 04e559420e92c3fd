//! Thermal inconsistency of one pack: sensor spread statistics and the
//! thermal consistency coefficient (TCC).
//!
//! The TCC sums, over every sample after the first, the mean temperature rise
//! since the first sample divided by the elapsed sample count and by the
//! current sensor spread. Samples where all sensors agree exactly contribute
//! nothing and are counted in `skipped_terms`. The value is unbounded above
//! and is reported raw.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::voltage::row_spreads;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThermalError {
    #[error("temperature matrix is {rows}x{cols}; {need}")]
    Shape {
        rows: usize,
        cols: usize,
        need: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalEvaluation {
    pub dt_max: f64,
    pub dt_mean: f64,
    pub tcc: f64,
    pub skipped_terms: usize,
}

pub fn temp_ranges(b: &DMatrix<f64>) -> Result<(f64, f64), ThermalError> {
    let (q, p) = b.shape();
    if q < 1 || p < 2 {
        return Err(ThermalError::Shape {
            rows: q,
            cols: p,
            need: "need at least 1 sample and 2 sensors",
        });
    }
    let spreads = row_spreads(b);
    let max = spreads.iter().copied().fold(0.0, f64::max);
    Ok((max, (spreads.iter().sum::<f64>() / q as f64).min(max)))
}

/// Returns `(tcc, skipped_terms)`.
pub fn tcc(b: &DMatrix<f64>) -> Result<(f64, usize), ThermalError> {
    let (q, p) = b.shape();
    if q < 2 || p < 1 {
        return Err(ThermalError::Shape {
            rows: q,
            cols: p,
            need: "need at least 2 samples and 1 sensor",
        });
    }
    let spreads = row_spreads(b);
    let first = b.row(0);
    let mut total = 0.0;
    let mut skipped = 0;
    for t in 1..q {
        if spreads[t] == 0.0 {
            skipped += 1;
            continue;
        }
        let rise: f64 = b.row(t).iter().zip(first.iter()).map(|(x, x0)| x - x0).sum();
        total += rise / (p as f64 * t as f64 * spreads[t]);
    }
    Ok((total, skipped))
}

pub fn evaluate_pack_thermal(b: &DMatrix<f64>) -> Result<ThermalEvaluation, ThermalError> {
    let (dt_max, dt_mean) = temp_ranges(b)?;
    let (tcc, skipped_terms) = tcc(b)?;
    Ok(ThermalEvaluation {
        dt_max,
        dt_mean,
        tcc,
        skipped_terms,
    })
}
