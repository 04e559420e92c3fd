//! Pack capacity and state of health.
//!
//! Steady current stretches (LOF inliers) are integrated into
//! (SOC change, charge throughput) pairs. Capacity is the slope that
//! minimizes an errors-in-variables weighted cost over those pairs, found by
//! golden-section search on a bracket around the nominal capacity.

use serde::{Deserialize, Serialize};

use crate::ingest::OperationSegment;
pub use crate::lof::{SteadyParams, SteadySegment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HealthError {
    #[error("segment {k1}..{k2} has no SOC change")]
    ZeroSocChange { k1: usize, k2: usize },
    #[error("segment {k1}..{k2} is out of range for a series of {len} samples")]
    BadSegment { k1: usize, k2: usize, len: usize },
    #[error("no capacity pairs available")]
    NoPairs,
    #[error("invalid health parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HealthParams {
    pub steady: SteadyParams,
    /// Coulombic efficiency.
    pub eta: f64,
    pub q_nom_ah: f64,
    pub sigma_x: f64,
    /// `sigma_y = sigma_y_rel·|y| + sigma_y_abs` in Ah.
    pub sigma_y_rel: f64,
    pub sigma_y_abs: f64,
    /// Search bracket as fractions of `q_nom_ah`.
    pub bracket: (f64, f64),
    pub tol_ah: f64,
}

impl Default for HealthParams {
    fn default() -> Self {
        Self {
            steady: SteadyParams::default(),
            eta: 1.0,
            q_nom_ah: 300.0,
            sigma_x: 0.01,
            sigma_y_rel: 0.005,
            sigma_y_abs: 0.1,
            bracket: (0.3, 1.2),
            tol_ah: 1e-4,
        }
    }
}

impl HealthParams {
    pub fn validate(&self) -> Result<(), HealthError> {
        let bad = |m: String| Err(HealthError::InvalidParams(m));
        if !(self.q_nom_ah > 0.0) {
            return bad(format!("q_nom_ah must be > 0, got {}", self.q_nom_ah));
        }
        if !(self.eta > 0.0) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.sigma_x > 0.0) || !(self.sigma_y_abs > 0.0) || !(self.sigma_y_rel >= 0.0) {
            return bad("sigma_x and sigma_y_abs must be > 0, sigma_y_rel >= 0".into());
        }
        let (lo, hi) = self.bracket;
        if !(lo > 0.0 && hi > lo) {
            return bad(format!("bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"));
        }
        if !(self.tol_ah > 0.0) {
            return bad(format!("tol_ah must be > 0, got {}", self.tol_ah));
        }
        Ok(())
    }

    pub fn sigma_y(&self, y: f64) -> f64 {
        self.sigma_y_rel * y.abs() + self.sigma_y_abs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityPair {
    /// SOC change over the segment.
    pub x: f64,
    /// Charge into the pack over the segment, Ah.
    pub y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResult {
    pub q_hat: f64,
    pub soh: f64,
    pub pairs_used: usize,
    pub cost_at_min: f64,
    /// The minimum sits on the edge of the search bracket.
    pub at_boundary: bool,
}

/// Left-endpoint Ah count over `[k1, k2)` at a fixed sample period.
/// Discharge current is positive, so charging yields positive `y`.
pub fn ah_integrate(
    seg: &SteadySegment,
    current: &[f64],
    soc: &[f64],
    dt_s: f64,
    params: &HealthParams,
) -> Result<CapacityPair, HealthError> {
    check_segment(seg, current.len().min(soc.len()))?;
    let sum: f64 = current[seg.k1..seg.k2].iter().map(|i| params.eta * i).sum();
    make_pair(seg, -dt_s / 3600.0 * sum, soc, params)
}

/// Same as [`ah_integrate`] with per-step periods taken from timestamps.
pub fn ah_integrate_timed(
    seg: &SteadySegment,
    timestamps: &[f64],
    current: &[f64],
    soc: &[f64],
    params: &HealthParams,
) -> Result<CapacityPair, HealthError> {
    check_segment(seg, timestamps.len().min(current.len()).min(soc.len()))?;
    let sum: f64 = (seg.k1..seg.k2)
        .map(|k| params.eta * current[k] * (timestamps[k + 1] - timestamps[k]))
        .sum();
    make_pair(seg, -sum / 3600.0, soc, params)
}

fn check_segment(seg: &SteadySegment, len: usize) -> Result<(), HealthError> {
    if seg.k1 >= seg.k2 || seg.k2 >= len {
        return Err(HealthError::BadSegment {
            k1: seg.k1,
            k2: seg.k2,
            len,
        });
    }
    Ok(())
}

fn make_pair(seg: &SteadySegment, y: f64, soc: &[f64], params: &HealthParams) -> Result<CapacityPair, HealthError> {
    let x = soc[seg.k2] - soc[seg.k1];
    if x == 0.0 {
        return Err(HealthError::ZeroSocChange { k1: seg.k1, k2: seg.k2 });
    }
    Ok(CapacityPair {
        x,
        y,
        sigma_x: params.sigma_x,
        sigma_y: params.sigma_y(y),
    })
}

/// Errors-in-variables cost of slope `q` over all pairs.
pub fn rawtls_cost(q: f64, pairs: &[CapacityPair]) -> f64 {
    let q2 = q * q;
    pairs
        .iter()
        .map(|p| {
            let r = p.y - q * p.x;
            r * r / ((1.0 + q2) * (1.0 + q2)) * (q2 / (p.sigma_x * p.sigma_x) + 1.0 / (p.sigma_y * p.sigma_y))
        })
        .sum()
}

/// Golden-section minimum of `f` on `[lo, hi]`, stopping once the bracket is
/// narrower than `tol`. Returns the final bracket midpoint.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

pub fn estimate_capacity(pairs: &[CapacityPair], params: &HealthParams) -> Result<HealthResult, HealthError> {
    params.validate()?;
    if pairs.is_empty() {
        return Err(HealthError::NoPairs);
    }
    let lo = params.bracket.0 * params.q_nom_ah;
    let hi = params.bracket.1 * params.q_nom_ah;
    let q_hat = golden_section(|q| rawtls_cost(q, pairs), lo, hi, params.tol_ah);
    let at_boundary = q_hat - lo <= params.tol_ah || hi - q_hat <= params.tol_ah;
    if at_boundary {
        tracing::warn!(q_hat, lo, hi, "capacity minimum on search bracket edge");
    }
    Ok(HealthResult {
        q_hat,
        soh: q_hat / params.q_nom_ah,
        pairs_used: pairs.len(),
        cost_at_min: rawtls_cost(q_hat, pairs),
        at_boundary,
    })
}

/// Capacity pairs from every steady stretch of one operation. Stretches with
/// no SOC change are skipped.
pub fn capacity_pairs(op: &OperationSegment, params: &HealthParams) -> Vec<CapacityPair> {
    let segs = crate::lof::detect_steady_segments(op.current(), op.timestamps(), &params.steady);
    segs.iter()
        .filter_map(|seg| ah_integrate_timed(seg, op.timestamps(), op.current(), op.soc(), params).ok())
        .collect()
}

pub fn estimate_operation_health(op: &OperationSegment, params: &HealthParams) -> Result<HealthResult, HealthError> {
    estimate_capacity(&capacity_pairs(op, params), params)
}
