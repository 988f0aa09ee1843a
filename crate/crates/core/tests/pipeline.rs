//! Cross-module checks through the public API.

use std::sync::Arc;

use smallball_core::chaining::{mm_lower_exponent, ChainBound, SieveChain, SieveVariant};
use smallball_core::covernum::{entropy_curve, FiniteMetricSpace};
use smallball_core::loud::LoudFamily;
use smallball_core::procs::{build_process, leaf_grid, sequence_grid, time_grid, LogPower, ProcessModel, ProcessParams};
use smallball_core::smallball::{
    independent_product, loudseries_sandwich, loudseries_sandwich_grid, mc_small_ball, mc_small_ball_curve,
    scaled_loud_exact,
};
use smallball_core::ultra::{z_small_ball_upper, UltrametricTree, ZProcess};
use smallball_core::{Execution, SeedSpec};

fn loud() -> LoudFamily {
    LoudFamily::new(2, 2, 0.5).unwrap()
}

#[test]
fn monte_carlo_is_identical_across_strategies() {
    let model = ProcessModel::LoudSeries(loud());
    let grid = time_grid(2, 8).unwrap();
    let eps = [0.3, 0.6, 1.2];
    let seq = mc_small_ball_curve(&model, &grid, &eps, 3000, SeedSpec::new(11, 2), Execution::Sequential).unwrap();
    let par = mc_small_ball_curve(&model, &grid, &eps, 3000, SeedSpec::new(11, 2), Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert!(seq.windows(2).all(|w| w[0].p_hat <= w[1].p_hat));
}

#[test]
fn entropy_is_identical_across_strategies() {
    let model = ProcessModel::ScaledLoud(loud());
    let space = FiniteMetricSpace::from_model(&model, &time_grid(2, 9).unwrap()).unwrap();
    let d = space.diameter(Execution::Sequential);
    let eps: Vec<f64> = (2..=6).map(|j| d * 2f64.powi(-j)).collect();
    let a = entropy_curve(&space, &eps, Execution::Sequential).unwrap();
    let b = entropy_curve(&space, &eps, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn built_processes_match_direct_models() {
    let json = r#"{"kind": "loud_series", "p": 2, "a": 2, "alpha": 0.5}"#;
    let params: ProcessParams = serde_json::from_str(json).unwrap();
    let built = build_process(&params).unwrap();
    let grid = time_grid(2, 6).unwrap();
    let a = mc_small_ball(&built, &grid, 0.8, 2000, SeedSpec::new(3, 0), Execution::Parallel).unwrap();
    let b = mc_small_ball(&ProcessModel::LoudSeries(loud()), &grid, 0.8, 2000, SeedSpec::new(3, 0), Execution::Parallel)
        .unwrap();
    assert_eq!(a.hits, b.hits);
}

#[test]
fn grid_sandwich_contains_monte_carlo() {
    let fam = loud();
    let grid = time_grid(2, 10).unwrap();
    let model = ProcessModel::LoudSeries(fam.clone());
    for eps in [0.5, 1.0] {
        let est = mc_small_ball(&model, &grid, eps, 20_000, SeedSpec::new(5, 1), Execution::Parallel).unwrap();
        let s = loudseries_sandwich_grid(&fam, eps, 10).unwrap();
        assert!(s.log_lower.exp() - 4.0 * est.std_err <= est.p_hat, "{eps}: {s:?} {est:?}");
        assert!(est.p_hat <= s.log_upper.exp() + 4.0 * est.std_err, "{eps}: {s:?} {est:?}");
    }
}

#[test]
fn full_sandwich_is_ordered_and_tightens_on_the_grid() {
    let fam = loud();
    for j in [4, 10, 20] {
        let eps = 2f64.powi(-j);
        let full = loudseries_sandwich(&fam, eps).unwrap();
        assert!(full.log_lower <= full.log_upper);
        let grid = loudseries_sandwich_grid(&fam, eps, 12).unwrap();
        assert!(grid.log_upper >= full.log_upper - 1e-12);
    }
}

#[test]
fn scaled_loud_monte_carlo_agrees_with_exact() {
    let fam = loud();
    let grid = time_grid(2, 8).unwrap();
    let model = ProcessModel::ScaledLoud(fam.clone());
    let eps = 0.05;
    let exact = scaled_loud_exact(&fam, &grid, eps).unwrap();
    let est = mc_small_ball(&model, &grid, eps, 50_000, SeedSpec::new(9, 0), Execution::Parallel).unwrap();
    assert!((est.p_hat - exact.prob_grid).abs() <= 4.0 * est.std_err, "{exact:?} {est:?}");
}

#[test]
fn truncated_sequence_matches_certified_product() {
    let phi = Arc::new(LogPower { beta: 1.0 });
    let model = ProcessModel::Sequence { phi: phi.clone(), n_max: 500 };
    let est = mc_small_ball(&model, &sequence_grid(500), 1.2, 40_000, SeedSpec::new(1, 4), Execution::Parallel).unwrap();
    let exact = independent_product(phi.as_ref(), 1.2, 1e-6).unwrap().log_value.exp();
    let slack = 4.0 * est.std_err + est.bias_note.unwrap();
    assert!((est.p_hat - exact).abs() <= slack, "{} vs {exact}", est.p_hat);
}

#[test]
fn sieve_exponent_shrinks_with_epsilon() {
    let chain = SieveChain::new(Arc::new(LogPower { beta: 1.0 }), 12, SieveVariant::Shifted).unwrap();
    let sigma = chain.sigma();
    let a = mm_lower_exponent(&chain, 0.3, sigma).unwrap();
    let b = mm_lower_exponent(&chain, 0.6, sigma).unwrap();
    assert!(a.level >= b.level);
    assert!(a.ln_exponent >= b.ln_exponent);
    assert!(chain.h(0).unwrap().total() >= chain.h(5).unwrap().total());
}

#[test]
fn ultrametric_tree_survives_json_and_bounds_monte_carlo() {
    let tree = UltrametricTree::balanced(2, 6, 1.0).unwrap();
    let back = UltrametricTree::from_json(&tree.to_json().unwrap()).unwrap();
    assert_eq!(tree, back);
    let z = ZProcess::new(Arc::new(tree.clone()));
    let model = ProcessModel::Ultrametric(Arc::new(z.clone()));
    let eps = tree.eps(2);
    let est = mc_small_ball(&model, &leaf_grid(tree.n_leaves()), eps, 20_000, SeedSpec::new(2, 2), Execution::Parallel)
        .unwrap();
    let ub = z_small_ball_upper(&z, eps).unwrap();
    assert!(est.p_hat <= ub.log_bound.exp() + 4.0 * est.std_err);
}
