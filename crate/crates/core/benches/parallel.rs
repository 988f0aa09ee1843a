use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smallball_core::covernum::{entropy_curve, FiniteMetricSpace};
use smallball_core::loud::LoudFamily;
use smallball_core::procs::{time_grid, ProcessModel};
use smallball_core::smallball::mc_small_ball_curve;
use smallball_core::{Execution, SeedSpec};

fn strategies() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn monte_carlo(c: &mut Criterion) {
    let fam = LoudFamily::new(2, 2, 0.5).unwrap();
    let model = ProcessModel::LoudSeries(fam);
    let grid = time_grid(2, 10).unwrap();
    let eps = [0.2, 0.5, 1.0];
    let mut g = c.benchmark_group("mc_small_ball_curve");
    g.sample_size(10);
    for (name, exec) in strategies() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mc_small_ball_curve(&model, &grid, &eps, 4000, SeedSpec::new(7, 0), exec).unwrap())
        });
    }
    g.finish();
}

fn covering(c: &mut Criterion) {
    let fam = LoudFamily::new(2, 2, 0.5).unwrap();
    let model = ProcessModel::ScaledLoud(fam);
    let grid = time_grid(2, 11).unwrap();
    let space = FiniteMetricSpace::from_model(&model, &grid).unwrap();
    let d = space.diameter(Execution::Sequential);
    let eps: Vec<f64> = (3..=8).map(|j| d * 2f64.powi(-j)).collect();
    let mut g = c.benchmark_group("entropy_curve");
    g.sample_size(10);
    for (name, exec) in strategies() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| entropy_curve(&space, &eps, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, covering);
criterion_main!(benches);
