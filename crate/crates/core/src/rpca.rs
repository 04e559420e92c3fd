//! Robust PCA by the inexact augmented Lagrange multiplier method.
//!
//! Splits `A` into a low-rank part `L` and a sparse part `S` by solving the
//! convex surrogate `min ‖L‖_* + λ‖S‖_1  s.t.  L + S = A` with alternating
//! directions: singular-value thresholding for `L`, entrywise soft
//! thresholding for `S`, then a dual ascent step on `Y` with a geometrically
//! growing penalty `μ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RpcaError {
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("matrix is {rows}x{cols}; both dimensions must be at least 2")]
    TooSmall { rows: usize, cols: usize },
    #[error("invalid RPCA parameters: {0}")]
    InvalidParams(String),
}

/// Solver settings. `lambda` and `mu_init` default to `1/sqrt(max(n, m))`
/// and `1.25/σ_max(A)` when left unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpcaParams {
    pub lambda: Option<f64>,
    pub mu_init: Option<f64>,
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Cap on μ as a multiple of its initial value.
    pub mu_max_factor: f64,
}

impl Default for RpcaParams {
    fn default() -> Self {
        Self {
            lambda: None,
            mu_init: None,
            rho: 1.5,
            tol: 1e-7,
            max_iter: 500,
            mu_max_factor: 1e7,
        }
    }
}

impl RpcaParams {
    pub fn validate(&self) -> Result<(), RpcaError> {
        let bad = |m: String| Err(RpcaError::InvalidParams(m));
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return bad(format!("lambda must be > 0, got {l}"));
            }
        }
        if let Some(mu) = self.mu_init {
            if !(mu > 0.0) {
                return bad(format!("mu_init must be > 0, got {mu}"));
            }
        }
        if !(self.rho > 1.0) {
            return bad(format!("rho must be > 1, got {}", self.rho));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be >= 1".into());
        }
        if !(self.mu_max_factor >= 1.0) {
            return bad(format!("mu_max_factor must be >= 1, got {}", self.mu_max_factor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    /// `‖A − L − S‖_F / ‖A‖_F` after the last iteration.
    pub residual: f64,
    pub converged: bool,
}

/// Entrywise soft thresholding `sign(x)·max(|x| − τ, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

/// Singular-value thresholding: shrinks every singular value by `tau` and
/// drops those that reach zero. Returns the result and its rank.
pub fn singular_value_threshold(m: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vt requested");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tau {
            out.ger(s - tau, &u.column(k), &v_t.row(k).transpose(), 1.0);
            rank += 1;
        }
    }
    (out, rank)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn rpca_decompose(a: &DMatrix<f64>, params: &RpcaParams) -> Result<RpcaResult, RpcaError> {
    params.validate()?;
    let (n, m) = a.shape();
    if n < 2 || m < 2 {
        return Err(RpcaError::TooSmall { rows: n, cols: m });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(RpcaError::NonFinite);
    }
    let norm_a = a.norm();
    if norm_a == 0.0 {
        return Ok(RpcaResult {
            low_rank: DMatrix::zeros(n, m),
            sparse: DMatrix::zeros(n, m),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let sigma_max = spectral_norm(a);
    let lambda = params.lambda.unwrap_or(1.0 / (n.max(m) as f64).sqrt());
    let inf_norm = a.amax();
    let mut y = a / sigma_max.max(inf_norm / lambda);
    let mut mu = params.mu_init.unwrap_or(1.25 / sigma_max);
    let mu_max = mu * params.mu_max_factor;

    let mut low_rank = DMatrix::zeros(n, m);
    let mut sparse = DMatrix::zeros(n, m);
    let mut residual = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iter {
        iterations += 1;
        let inv_mu = 1.0 / mu;
        (low_rank, _) = singular_value_threshold(&(a - &sparse + &y * inv_mu), inv_mu);
        sparse = soft_threshold(&(a - &low_rank + &y * inv_mu), lambda * inv_mu);
        let gap = a - &low_rank - &sparse;
        residual = gap.norm() / norm_a;
        y += gap * mu;
        mu = (mu * params.rho).min(mu_max);
        if residual <= params.tol {
            converged = true;
            break;
        }
    }

    Ok(RpcaResult {
        low_rank,
        sparse,
        iterations,
        residual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rank_one(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        DMatrix::from_fn(n, m, |i, j| u[i] * v[j])
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero() {
        let m = DMatrix::from_row_slice(1, 4, &[-2.0, -0.5, 0.5, 3.0]);
        let s = soft_threshold(&m, 1.0);
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn svt_reduces_rank() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, 0.5]));
        let (out, rank) = singular_value_threshold(&m, 1.0);
        assert_eq!(rank, 2);
        let sv = out.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!((sv[0] - 4.0).abs() < 1e-12 && (sv[1] - 1.0).abs() < 1e-12 && sv[2].abs() < 1e-12);
    }

    #[test]
    fn uncorrupted_rank_one_goes_to_low_rank() {
        let a = rank_one(30, 50, 3);
        let res = rpca_decompose(&a, &RpcaParams::default()).unwrap();
        assert!(res.converged);
        assert!(res.sparse.amax() <= 1e-6, "max |S| = {}", res.sparse.amax());
        assert!((&res.low_rank - &a).norm() / a.norm() < 1e-6);
    }

    #[test]
    fn zero_matrix_is_trivial() {
        let res = rpca_decompose(&DMatrix::zeros(4, 5), &RpcaParams::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
        assert_eq!(res.low_rank.amax(), 0.0);
        assert_eq!(res.sparse.amax(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut a = DMatrix::from_element(3, 3, 1.0);
        a[(1, 1)] = f64::NAN;
        assert_eq!(rpca_decompose(&a, &RpcaParams::default()), Err(RpcaError::NonFinite));
        assert!(matches!(
            rpca_decompose(&DMatrix::from_element(1, 3, 1.0), &RpcaParams::default()),
            Err(RpcaError::TooSmall { .. })
        ));
        let p = RpcaParams {
            rho: 1.0,
            ..Default::default()
        };
        assert!(matches!(rpca_decompose(&a, &p), Err(RpcaError::InvalidParams(_))));
    }

    #[test]
    fn non_convergence_is_flagged_not_raised() {
        let a = rank_one(20, 30, 9) + DMatrix::from_fn(20, 30, |i, j| if (i + j) % 7 == 0 { 1.0 } else { 0.0 });
        let p = RpcaParams {
            max_iter: 2,
            ..Default::default()
        };
        let res = rpca_decompose(&a, &p).unwrap();
        assert_eq!(res.iterations, 2);
        assert!(!res.converged);
        assert!(res.residual > p.tol);
    }
}
