//! Parallel versus sequential execution of the randomized suites.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxreg::evolve::{self, EvolutionProblem};
use maxreg::forms::FormDecomposition;
use maxreg::linalg::Vector;
use maxreg::{oracle, par, sqrtop, suite};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn resolvent_forms(count: usize) -> Vec<FormDecomposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..count).map(|_| suite::random_symmetric_form(&mut rng, 20).unwrap()).collect()
}

fn mr_problems(count: usize) -> Vec<EvolutionProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..count).map(|_| suite::random_mr_problem(&mut rng, 10).unwrap()).collect()
}

fn bench_resolvent_suite(c: &mut Criterion) {
    let forms = resolvent_forms(200);
    let grid = suite::lambda_grid(11);
    let run = |f: &FormDecomposition| sqrtop::verify_resolvent_bounds(f, 0.0, &grid).unwrap().len();
    let mut group = c.benchmark_group("resolvent_suite");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| par::map(&forms, run)));
    group.bench_function("sequential", |b| b.iter(|| par::sequential::map(&forms, run)));
    group.finish();
}

fn bench_mr_suite(c: &mut Criterion) {
    let problems = mr_problems(24);
    let times = evolve::uniform_grid(0.0, 1.0, 500);
    let run = |p: &EvolutionProblem| {
        let reference = oracle::reference_solve(p, 1e-8).unwrap();
        evolve::mr_diagnostics(p, &reference.sample(&times).unwrap()).unwrap().norm_mr
    };
    let mut group = c.benchmark_group("mr_suite");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| par::map(&problems, run)));
    group.bench_function("sequential", |b| b.iter(|| par::sequential::map(&problems, run)));
    group.finish();
}

fn bench_quadrature(c: &mut Criterion) {
    let form = maxreg::forms::robin_uniform_beta(64, |t| 1.0 + t, 1.0, 1.0).unwrap();
    let x = Vector::from_fn(65, |i, _| (i as f64).sin());
    let mut group = c.benchmark_group("invsqrt_quadrature");
    group.sample_size(10);
    for nodes in [50, 200] {
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &nodes, |b, &n| {
            b.iter(|| sqrtop::invsqrt_quadrature(&form, 0.5, &x, n).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_resolvent_suite, bench_mr_suite, bench_quadrature);
criterion_main!(benches);
