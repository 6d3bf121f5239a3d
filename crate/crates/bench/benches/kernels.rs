use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ks_para_bench::{cosine_sigma, test_field};
use ks_para_core::enhancement::{counterterm_at, counterterm_path, CountertermRule};
use ks_para_core::littlewood_paley::LittlewoodPaley;
use ks_para_core::noise::{stochastic_convolution, BrownianField, Mollifier};
use ks_para_core::solver::{solve_rho_delta, SolverOptions};
use ks_para_core::spectral::DuhamelRule;
use ks_para_core::{Lattice, TimeGrid};
use std::hint::black_box;

fn products(c: &mut Criterion) {
    let mut group = c.benchmark_group("product");
    for n in [8usize, 16, 32, 64] {
        let l = Lattice::new(n).unwrap();
        let (u, v) = (test_field(&l, 1), test_field(&l, 2));
        group.bench_with_input(BenchmarkId::new("padded_fft", n), &n, |b, _| {
            b.iter(|| black_box(&u).product(black_box(&v)).unwrap())
        });
        if n <= 16 {
            group.bench_with_input(BenchmarkId::new("direct", n), &n, |b, _| {
                b.iter(|| black_box(&u).product_direct(black_box(&v)))
            });
        }
    }
    group.finish();
}

fn littlewood_paley(c: &mut Criterion) {
    let mut group = c.benchmark_group("littlewood_paley");
    for n in [16usize, 32] {
        let l = Lattice::new(n).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let (u, v) = (test_field(&l, 3), test_field(&l, 4));
        group.bench_with_input(BenchmarkId::new("blocks", n), &n, |b, _| b.iter(|| lp.blocks(black_box(&u))));
        group.bench_with_input(BenchmarkId::new("bony", n), &n, |b, _| {
            b.iter(|| lp.bony(black_box(&u), black_box(&v)))
        });
    }
    group.finish();
}

fn counterterm(c: &mut Criterion) {
    let mut group = c.benchmark_group("counterterm");
    group.sample_size(10);
    for inv_delta in [4usize, 8, 16] {
        let l = Lattice::new(2 * inv_delta).unwrap();
        let sigma = cosine_sigma(&l);
        let moll = Mollifier::smooth(1.0 / inv_delta as f64).unwrap();
        group.bench_with_input(BenchmarkId::new("closed_form", inv_delta), &inv_delta, |b, _| {
            b.iter(|| counterterm_at(&sigma, &moll, 0.5, true).unwrap())
        });
    }
    let l = Lattice::new(8).unwrap();
    let sigma = cosine_sigma(&l);
    let moll = Mollifier::smooth(0.25).unwrap();
    let grid = TimeGrid::new(0.1, 20).unwrap();
    group.bench_function("path_20_steps", |b| {
        b.iter(|| counterterm_path(&sigma, &moll, grid, CountertermRule::Continuous, DuhamelRule::LeftPoint).unwrap())
    });
    group.finish();
}

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    let l = Lattice::new(16).unwrap();
    let sigma = cosine_sigma(&l);
    let moll = Mollifier::smooth(0.25).unwrap();
    let grid = TimeGrid::new(0.05, 8).unwrap();
    let w = BrownianField::sample(&l, grid, 1, None);
    let ti = stochastic_convolution(&w, &sigma, &moll).unwrap();
    let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Discrete, DuhamelRule::LeftPoint).unwrap();
    let rho0 = sigma.at_step(0).clone();
    let opts = SolverOptions::default();
    group.bench_function("noise_path_n16", |b| {
        b.iter(|| stochastic_convolution(&BrownianField::sample(&l, grid, 2, None), &sigma, &moll).unwrap())
    });
    group.bench_function("direct_n16_8_steps", |b| b.iter(|| solve_rho_delta(&rho0, &ti, &tl, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, products, littlewood_paley, counterterm, solver);
criterion_main!(benches);
