use ks_para_core::enhancement::{canonical_ty, counterterm_path, renormalized_ty, CountertermRule};
use ks_para_core::noise::{stochastic_convolution, BrownianField, Heterogeneity, Mollifier, TrigTerm};
use ks_para_core::spectral::DuhamelRule;
use ks_para_core::{Lattice, SpectralField, TimeGrid};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

const SAMPLES: u64 = 10_000;

/// Per-mode sample mean and standard error of `ty_can(T)` over independent noises.
fn monte_carlo_ty(sigma: &Heterogeneity, moll: &Mollifier, grid: TimeGrid) -> (Vec<C64>, Vec<C64>) {
    let l = sigma.lattice().clone();
    let (sum, sq) = (0..SAMPLES)
        .into_par_iter()
        .map(|seed| {
            let w = BrownianField::sample(&l, grid, 1_000 + seed, None);
            let ti = stochastic_convolution(&w, sigma, moll).unwrap();
            let ty = canonical_ty(&ti, DuhamelRule::LeftPoint).unwrap();
            let c = ty.last().coeffs().to_vec();
            let s: Vec<C64> = c.iter().map(|z| C64::new(z.re * z.re, z.im * z.im)).collect();
            (c, s)
        })
        .reduce(
            || (vec![C64::new(0.0, 0.0); l.len()], vec![C64::new(0.0, 0.0); l.len()]),
            |(mut a, mut b), (c, d)| {
                for i in 0..a.len() {
                    a[i] += c[i];
                    b[i] += d[i];
                }
                (a, b)
            },
        );
    let n = SAMPLES as f64;
    let mean: Vec<C64> = sum.iter().map(|z| z / n).collect();
    let se = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| {
            let var = |e2: f64, e: f64| ((e2 / n - e * e).max(0.0) * n / (n - 1.0) / n).sqrt();
            C64::new(var(s.re, m.re), var(s.im, m.im))
        })
        .collect();
    (mean, se)
}

fn assert_within(mean: &[C64], se: &[C64], expect: &SpectralField, k: f64) {
    let l = expect.lattice();
    for i in 0..l.len() {
        let e = expect.coeffs()[i];
        let d = mean[i] - e;
        assert!(
            d.re.abs() <= k * se[i].re + 1e-14 && d.im.abs() <= k * se[i].im + 1e-14,
            "mode {:?}: mc {} +- {}, exact {}",
            l.freq(i),
            mean[i],
            se[i],
            e
        );
    }
}

#[test]
fn counterterm_is_the_mean_of_canonical_ty() {
    let l = Lattice::new(8).unwrap();
    let grid = TimeGrid::new(0.05, 10).unwrap();
    let sigma = Heterogeneity::trig(&l, 1.0, &[TrigTerm { k: (1, 0), cos_amp: 0.5, sin_amp: 0.0 }]).unwrap();
    let moll = Mollifier::smooth(0.25).unwrap();
    let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Discrete, DuhamelRule::LeftPoint).unwrap();
    let (mean, se) = monte_carlo_ty(&sigma, &moll, grid);
    assert!(tl.last().sup_norm() > 0.0);
    let strongest = (0..l.len()).map(|i| tl.last().coeffs()[i].norm() / se[i].re.max(1e-300)).fold(0.0, f64::max);
    assert!(strongest > 3.0, "the counterterm is not resolved by the sample size");
    assert_within(&mean, &se, tl.last(), 3.0);
}

#[test]
fn constant_sigma_canonical_ty_has_zero_mean() {
    let l = Lattice::new(6).unwrap();
    let grid = TimeGrid::new(0.05, 8).unwrap();
    let sigma = Heterogeneity::constant(&l, 1.0);
    let moll = Mollifier::smooth(0.25).unwrap();
    let (mean, se) = monte_carlo_ty(&sigma, &moll, grid);
    assert_within(&mean, &se, &SpectralField::zeros(&l), 4.0);
}

#[test]
fn renormalized_ty_splits_exactly() {
    let l = Lattice::new(8).unwrap();
    let grid = TimeGrid::new(0.05, 10).unwrap();
    let sigma = Heterogeneity::trig(&l, 1.0, &[TrigTerm { k: (0, 1), cos_amp: 0.3, sin_amp: 0.2 }]).unwrap();
    let moll = Mollifier::smooth(0.25).unwrap();
    let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Discrete, DuhamelRule::LeftPoint).unwrap();
    let w = BrownianField::sample(&l, grid, 5, None);
    let ti = stochastic_convolution(&w, &sigma, &moll).unwrap();
    let can = canonical_ty(&ti, DuhamelRule::LeftPoint).unwrap();
    let ty = renormalized_ty(&can, &tl).unwrap();
    for i in 0..=grid.steps {
        assert!((&ty.fields[i] + &tl.fields[i]).max_abs_diff(&can.fields[i]) < 1e-10);
    }
}
