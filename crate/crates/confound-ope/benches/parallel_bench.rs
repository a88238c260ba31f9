//! Parallel vs sequential benchmarks for the hot paths: episode generation,
//! bound assembly over a Γ grid, and the expectile solver.
//!
//! With the default `parallel` feature, `ExecMode::Auto` runs on rayon and
//! `ExecMode::Sequential` on the plain iterator path; built with
//! `--no-default-features` both modes are sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use confound_ope::behavior::{fit_tabular, FitOptions, StateBucketer, TimeBlockSpec};
use confound_ope::bounds::{BoundProblem, EstimatorOptions, KappaBucketing, KappaSpec};
use confound_ope::exec::ExecMode;
use confound_ope::sepsis::{simulate_confounded, SepsisDynamicsConfig, SepsisWorld};

fn bench_generation(c: &mut Criterion) {
    let world = SepsisWorld::build(SepsisDynamicsConfig::default()).unwrap();
    let mut group = c.benchmark_group("sepsis_generate_10k");
    for (label, mode) in [("parallel", ExecMode::Auto), ("sequential", ExecMode::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &mode| {
            b.iter(|| simulate_confounded(&world, 2.0, 10_000, 7, mode).unwrap());
        });
    }
    group.finish();
}

fn bench_bound_sweep(c: &mut Criterion) {
    let world = SepsisWorld::build(SepsisDynamicsConfig::default()).unwrap();
    let dataset = simulate_confounded(&world, 2.0, 10_000, 7, ExecMode::Auto).unwrap();
    let behavior = fit_tabular(
        &dataset,
        &TimeBlockSpec::first_vs_rest(dataset.horizon(), StateBucketer::DiscreteState),
        &FitOptions::default(),
    )
    .unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| 1.0 + 0.5 * i as f64).collect();
    let mut group = c.benchmark_group("final_bound_sweep_10k_grid11");
    for (label, mode) in [("parallel", ExecMode::Auto), ("sequential", ExecMode::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &mode| {
            let opts = EstimatorOptions {
                exec: mode,
                ..EstimatorOptions::default()
            };
            let problem = BoundProblem::new(
                &dataset,
                &behavior,
                &world.w_policy,
                1,
                KappaSpec::Tabular {
                    bucketing: KappaBucketing::State(StateBucketer::DiscreteState),
                },
                &opts,
            )
            .unwrap();
            b.iter(|| problem.final_bound_sweep(&grid).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generation, bench_bound_sweep);
criterion_main!(benches);
