use std::time::Instant;

use bess_core::health::{estimate_capacity, rawtls_cost, HealthParams};
use bess_core::rpca::{rpca_decompose, RpcaParams};
use bess_core::synth;
use bess_core::voltage::{evaluate_pack_voltage, VoltageParams};

/// Capacity minimizer by brute force: 10^5 points over the bracket, then
/// 10^5 points over the two cells around the best one.
fn grid_oracle(pairs: &[bess_core::CapacityPair], lo: f64, hi: f64) -> f64 {
    let argmin = |lo: f64, hi: f64| {
        let n = 100_000;
        let step = (hi - lo) / (n - 1) as f64;
        let best = (0..n)
            .map(|i| lo + step * i as f64)
            .min_by(|a, b| rawtls_cost(*a, pairs).total_cmp(&rawtls_cost(*b, pairs)))
            .unwrap();
        (best, step)
    };
    let (coarse, step) = argmin(lo, hi);
    argmin((coarse - step).max(lo), (coarse + step).min(hi)).0
}

#[test]
fn rpca_recovers_rank_two_under_sparse_corruption() {
    let (low, sparse) = synth::low_rank_plus_sparse(40, 200, 2, 0.05, 0.5, 11);
    let a = &low + &sparse;
    let t0 = Instant::now();
    let res = rpca_decompose(&a, &RpcaParams::default()).unwrap();
    let elapsed = t0.elapsed();
    let err = (&res.low_rank - &low).norm() / low.norm();
    println!(
        "iterations {} residual {:.3e} error {:.3e} time {:?}",
        res.iterations, res.residual, err, elapsed
    );
    assert!(res.converged);
    assert!(res.residual <= 1e-7);
    assert!(res.iterations < 500);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn rpca_sparse_support_grows_with_corruption() {
    let counts: Vec<usize> = [0.01, 0.05, 0.10]
        .iter()
        .map(|&frac| {
            let (low, sparse) = synth::low_rank_plus_sparse(40, 200, 2, frac, 0.5, 5);
            let res = rpca_decompose(&(&low + &sparse), &RpcaParams::default()).unwrap();
            res.sparse.iter().filter(|x| x.abs() > 1e-9).count()
        })
        .collect();
    assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
}

#[test]
fn deviant_cells_are_flagged_in_396_cell_pack() {
    let deviants = [(17, 0.08), (201, 0.10), (350, 0.12)];
    let a = synth::pack_voltage_matrix(200, 396, &deviants, 3);
    let t0 = Instant::now();
    let eval = evaluate_pack_voltage(&a, &VoltageParams::default()).unwrap();
    println!("396-cell evaluation took {:?}, {} RPCA iterations", t0.elapsed(), eval.rpca_iterations);
    let top: Vec<f64> = deviants.iter().map(|(j, _)| eval.scores[*j]).collect();
    println!("deviant scores {top:?}");
    assert_eq!(eval.flagged_cells, vec![17, 201, 350]);
    let m = eval.scores.len() as f64;
    let mean = eval.scores.iter().sum::<f64>() / m;
    let std = (eval.scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
    assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
}

#[test]
fn capacity_noiseless_and_noisy() {
    let params = HealthParams::default();
    let clean = synth::capacity_pairs(300.0, 20, 0.0, 1);
    let r = estimate_capacity(&clean, &params).unwrap();
    assert!((r.q_hat - 300.0).abs() <= 1e-3);

    let truth = 270.0;
    let mut worst_truth: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..20 {
        let pairs = synth::capacity_pairs(truth, 20, 0.01, 100 + seed);
        let r = estimate_capacity(&pairs, &params).unwrap();
        let oracle = grid_oracle(&pairs, 90.0, 360.0);
        worst_truth = worst_truth.max((r.q_hat - truth).abs() / truth);
        worst_oracle = worst_oracle.max((r.q_hat - oracle).abs());
    }
    println!("worst relative error {worst_truth:.3e}, worst oracle gap {worst_oracle:.3e}");
    assert!(worst_truth < 0.02);
    assert!(worst_oracle < 1e-3);
}
