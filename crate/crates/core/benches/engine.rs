//! Benchmarks for the replicate engine: the data-parallel scheduler
//! against the sequential fallback on the same scenario, plus the
//! underlying single-replicate pipeline (generate → fit → infer) and a
//! single permutation test, so regressions can be localized.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use stepwedge::covariance::{icc_to_components, IccSpec, Structure};
use stepwedge::datagen::{generate, GenSpec};
use stepwedge::design::TrialDesign;
use stepwedge::inference::{DofRule, VarianceSource};
use stepwedge::lmm::{reml_fit, CollapsedData};
use stepwedge::permutation::{permutation_test_collapsed, PermutationOptions};
use stepwedge::rve::{robust_vcov, Estimator};
use stepwedge::sim::{run_scenario, run_scenario_sequential, AnalysisPlan, Scenario, WorkingModel};

fn small_scenario() -> Scenario {
    let icc = IccSpec { rho0: 0.01, rho1: 0.05, cac: 0.8, sigma_eps: 1.0 };
    Scenario {
        index: 0,
        generator: Structure::NestedExchangeableRi,
        design: TrialDesign::new(8, 4, 10).unwrap(),
        icc,
        vc: icc_to_components(&icc, Structure::NestedExchangeableRi).unwrap(),
        theta: 0.0,
        seed: 7,
    }
}

fn standard_plan() -> AnalysisPlan {
    AnalysisPlan {
        models: vec![WorkingModel::Fixed(Structure::Exchangeable), WorkingModel::True],
        cells: vec![
            (VarianceSource::Model, DofRule::FixedIMinus2),
            (VarianceSource::Robust(Estimator::Cr0), DofRule::FixedIMinus2),
            (VarianceSource::Robust(Estimator::Cr2), DofRule::Satterthwaite),
            (VarianceSource::Robust(Estimator::Cr3), DofRule::FixedIMinus2),
        ],
    }
}

fn bench_schedulers(c: &mut Criterion) {
    let sc = small_scenario();
    let plan = standard_plan();
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    for n_reps in [8usize, 32] {
        group.bench_with_input(
            BenchmarkId::new("parallel_default", n_reps),
            &n_reps,
            |b, &n| b.iter(|| black_box(run_scenario(&sc, &plan, n, 0.05))),
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", n_reps),
            &n_reps,
            |b, &n| b.iter(|| black_box(run_scenario_sequential(&sc, &plan, n, 0.05))),
        );
    }
    group.finish();
}

fn bench_replicate_pipeline(c: &mut Criterion) {
    let sc = small_scenario();
    let data = generate(&GenSpec {
        design: sc.design,
        generator: sc.generator,
        vc: sc.vc,
        theta: sc.theta,
        mu: 0.0,
        seed: sc.seed,
        replicate_id: 0,
    })
    .unwrap();
    let collapsed = CollapsedData::from_dataset(&data);

    c.bench_function("generate_one_dataset", |b| {
        b.iter(|| {
            black_box(
                generate(&GenSpec {
                    design: sc.design,
                    generator: sc.generator,
                    vc: sc.vc,
                    theta: sc.theta,
                    mu: 0.0,
                    seed: sc.seed,
                    replicate_id: 1,
                })
                .unwrap(),
            )
        })
    });
    c.bench_function("reml_fit_exchangeable", |b| {
        b.iter(|| black_box(reml_fit(&data, Structure::Exchangeable).unwrap()))
    });
    c.bench_function("reml_fit_generating_structure", |b| {
        b.iter(|| black_box(reml_fit(&data, Structure::NestedExchangeableRi).unwrap()))
    });
    let fit = reml_fit(&data, Structure::Exchangeable).unwrap();
    c.bench_function("robust_vcov_cr2", |b| {
        b.iter(|| black_box(robust_vcov(&fit, Estimator::Cr2).unwrap()))
    });
    c.bench_function("permutation_test_200", |b| {
        b.iter(|| {
            black_box(
                permutation_test_collapsed(
                    &collapsed,
                    Structure::Exchangeable,
                    &PermutationOptions {
                        n_permutations: 200,
                        alpha: 0.05,
                        seed: 5,
                        fit: Default::default(),
                    },
                )
                .unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_schedulers, bench_replicate_pipeline);
criterion_main!(benches);
