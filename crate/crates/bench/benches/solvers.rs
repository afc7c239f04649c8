use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybrid_bai::design::{DesignProblem, FwConfig};
use hybrid_bai::estimation::constrained_mle_stats;
use hybrid_bai::harness::run_seeded;
use hybrid_bai::problem::gen_appendix_d_case;
use hybrid_bai::{AlgoConfig, MleConfig};
use hybrid_bai_bench::{instance, stats};

fn mle(c: &mut Criterion) {
    let mut g = c.benchmark_group("mle");
    for (k, d) in [(5, 4), (10, 8)] {
        let inst = instance(k, d);
        let st = stats(&inst, 10_000, 3);
        g.bench_function(BenchmarkId::from_parameter(format!("K{k}_d{d}")), |b| {
            b.iter(|| constrained_mle_stats(&st, inst.view(), &MleConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn design(c: &mut Criterion) {
    let mut g = c.benchmark_group("design");
    for (k, d) in [(5, 4), (10, 8)] {
        let inst = instance(k, d);
        let view = inst.view();
        let best = inst.best_arm_and_gaps().unwrap().index;
        let all: Vec<usize> = (0..view.num_actions()).collect();
        let p = DesignProblem::hybrid(view, inst.theta_star(), best, &all, None).unwrap();
        let cold = p.solve(&FwConfig::default(), None).unwrap();
        g.bench_function(BenchmarkId::new("cold", format!("K{k}_d{d}")), |b| {
            b.iter(|| p.solve(&FwConfig::default(), None).unwrap())
        });
        let capped = FwConfig {
            max_iterations: 50,
            ..FwConfig::default()
        };
        g.bench_function(BenchmarkId::new("warm", format!("K{k}_d{d}")), |b| {
            b.iter(|| p.solve(&capped, Some(&cold.warm)).unwrap())
        });
    }
    g.finish();
}

fn full_run(c: &mut Criterion) {
    let inst = gen_appendix_d_case(1).unwrap();
    let cfg = AlgoConfig::default();
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    g.bench_function("appendix_d_case1_hybrid", |b| {
        b.iter(|| run_seeded(&inst, &cfg, 1, 2, None).unwrap())
    });
    g.finish();
}

criterion_group!(benches, mle, design, full_run);
criterion_main!(benches);
