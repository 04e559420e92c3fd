//! Local Outlier Factor over scalar samples.
//!
//! Points are sorted once, so each k-nearest-neighbour query is a two-pointer
//! walk outward from the point's sorted position. Distances are floored at
//! [`MIN_DISTANCE`] to keep densities finite on repeated values; a block of
//! identical values therefore scores exactly 1.

use serde::{Deserialize, Serialize};

use crate::par::{self, ExecMode};

pub const MIN_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LofError {
    #[error("LOF needs more than k = {k} points, got {len}")]
    TooFewPoints { len: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

struct Sorted {
    values: Vec<f64>,
    /// `rank[i]` is the sorted position of input index `i`.
    rank: Vec<usize>,
}

impl Sorted {
    fn new(values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut rank = vec![0; values.len()];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos;
        }
        Self {
            values: order.iter().map(|&i| values[i]).collect(),
            rank,
        }
    }

    /// Distance to the k-th nearest other point, floored.
    fn k_distance(&self, pos: usize, k: usize) -> f64 {
        let v = &self.values;
        let x = v[pos];
        let (mut left, mut right) = (pos, pos + 1);
        let mut dist = 0.0;
        for _ in 0..k {
            let dl = if left > 0 { x - v[left - 1] } else { f64::INFINITY };
            let dr = if right < v.len() { v[right] - x } else { f64::INFINITY };
            if dl <= dr {
                dist = dl;
                left -= 1;
            } else {
                dist = dr;
                right += 1;
            }
        }
        dist.max(MIN_DISTANCE)
    }

    /// Sorted positions `lo..hi` of every point within `radius` of `pos`,
    /// the point itself included.
    fn neighbourhood(&self, pos: usize, radius: f64) -> (usize, usize) {
        let x = self.values[pos];
        let lo = self.values[..pos].partition_point(|&v| x - v > radius);
        let hi = pos + 1 + self.values[pos + 1..].partition_point(|&v| v - x <= radius);
        (lo, hi)
    }
}

/// LOF score of every point, in input order.
pub fn lof_scores(values: &[f64], k: usize) -> Result<Vec<f64>, LofError> {
    lof_scores_with(values, k, ExecMode::Sequential)
}

pub fn lof_scores_with(values: &[f64], k: usize, mode: ExecMode) -> Result<Vec<f64>, LofError> {
    if k == 0 {
        return Err(LofError::ZeroK);
    }
    if values.len() <= k {
        return Err(LofError::TooFewPoints { len: values.len(), k });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(LofError::NonFinite(i));
    }
    let s = Sorted::new(values);
    let n = values.len();
    let kdist = par::map_range(mode, n, |pos| s.k_distance(pos, k));
    let hoods = par::map_range(mode, n, |pos| s.neighbourhood(pos, kdist[pos]));

    let lrd = par::map_range(mode, n, |pos| {
        let (lo, hi) = hoods[pos];
        let x = s.values[pos];
        let reach: f64 = (lo..hi)
            .filter(|&o| o != pos)
            .map(|o| kdist[o].max((s.values[o] - x).abs().max(MIN_DISTANCE)))
            .sum();
        (hi - lo - 1) as f64 / reach
    });
    let by_pos = par::map_range(mode, n, |pos| {
        let (lo, hi) = hoods[pos];
        let ratio_sum: f64 = (lo..hi).filter(|&o| o != pos).map(|o| lrd[o] / lrd[pos]).sum();
        ratio_sum / (hi - lo - 1) as f64
    });
    Ok(s.rank.iter().map(|&pos| by_pos[pos]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadyParams {
    pub k: usize,
    pub lof_threshold: f64,
    pub min_len_s: f64,
}

impl Default for SteadyParams {
    fn default() -> Self {
        Self {
            k: 20,
            lof_threshold: 1.5,
            min_len_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySegment {
    /// First sample of the run.
    pub k1: usize,
    /// Last sample of the run (inclusive).
    pub k2: usize,
    pub mean_current: f64,
}

/// Maximal runs of LOF inliers lasting at least `min_len_s`. Series too
/// short for the neighbourhood size yield no segments.
pub fn detect_steady_segments(current: &[f64], timestamps: &[f64], params: &SteadyParams) -> Vec<SteadySegment> {
    assert_eq!(current.len(), timestamps.len(), "current and timestamps differ in length");
    let scores = match lof_scores(current, params.k) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut start = None;
    for i in 0..=current.len() {
        let inlier = i < current.len() && scores[i] <= params.lof_threshold;
        match (inlier, start) {
            (true, None) => start = Some(i),
            (false, Some(k1)) => {
                let k2 = i - 1;
                if k2 > k1 && timestamps[k2] - timestamps[k1] >= params.min_len_s {
                    let run = &current[k1..=k2];
                    out.push(SteadySegment {
                        k1,
                        k2,
                        mean_current: run.iter().sum::<f64>() / run.len() as f64,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}
