use ks_para_core::littlewood_paley::LittlewoodPaley;
use ks_para_core::noise::{
    ou_variance_discrete, sample_ti_exact, stochastic_convolution, BrownianField, Heterogeneity, Mollifier, TrigTerm,
};
use ks_para_core::{Lattice, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn trig_sigma(lattice: &Lattice) -> Heterogeneity {
    let terms = [
        TrigTerm { k: (1, 0), cos_amp: 0.5, sin_amp: 0.0 },
        TrigTerm { k: (0, 1), cos_amp: 0.0, sin_amp: 0.25 },
    ];
    Heterogeneity::trig(lattice, 1.0, &terms).unwrap()
}

#[test]
fn ito_isometry_at_random_times_and_frequencies() {
    const SAMPLES: usize = 4000;
    let lattice = Lattice::new(4).unwrap();
    let grid = TimeGrid::new(0.01, 100).unwrap();
    let sigma = trig_sigma(&lattice);
    let moll = Mollifier::smooth(0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x170);
    let pairs: Vec<(usize, (i64, i64))> = (0..5)
        .map(|_| {
            let step = rng.random_range(1..=grid.steps);
            loop {
                let w = (rng.random_range(-2..=2), rng.random_range(-2..=2));
                if w != (0, 0) {
                    return (step, w);
                }
            }
        })
        .collect();
    let draws: Vec<Vec<f64>> = (0..SAMPLES as u64)
        .into_par_iter()
        .map(|s| {
            let w = BrownianField::sample(&lattice, grid, 1000 + s, None);
            let ti = stochastic_convolution(&w, &sigma, &moll).unwrap();
            pairs.iter().map(|&(i, k)| ti.fields[i].get(k.0, k.1).norm_sqr()).collect()
        })
        .collect();
    for (p, &(step, k)) in pairs.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|d| d[p]).collect();
        let (mean, se) = mean_and_se(&xs);
        let exact = ou_variance_discrete(sigma.at_step(0), &moll, k, grid.dt(), step);
        assert!((mean - exact).abs() <= 3.0 * se, "t = {}, w = {k:?}: {mean} vs {exact} (se {se})", grid.time(step));
    }
}

#[test]
fn paths_are_real_and_parseval_matches_total_variance() {
    const SAMPLES: usize = 2000;
    let lattice = Lattice::new(4).unwrap();
    let grid = TimeGrid::new(0.01, 50).unwrap();
    let sigma = trig_sigma(&lattice);
    let moll = Mollifier::smooth(0.5).unwrap();
    let energies: Vec<f64> = (0..SAMPLES as u64)
        .into_par_iter()
        .map(|s| {
            let w = BrownianField::sample(&lattice, grid, 77 + s, None);
            let ti = stochastic_convolution(&w, &sigma, &moll).unwrap();
            for f in &ti.fields {
                assert!(f.hermitian_defect() <= 1e-15);
            }
            let last = ti.last();
            let energy = last.l2_norm().powi(2);
            let grid_energy = last.values().iter().map(|v| v * v).sum::<f64>() / last.values().len() as f64;
            assert!((energy - grid_energy).abs() <= 1e-12 * energy.max(1e-300));
            energy
        })
        .collect();
    let (mean, se) = mean_and_se(&energies);
    let exact: f64 = (0..lattice.len())
        .map(|i| ou_variance_discrete(sigma.at_step(0), &moll, lattice.freq(i), grid.dt(), grid.steps))
        .sum();
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn block_growth_has_the_regularity_of_a_derivative_of_white_noise() {
    const SAMPLES: u64 = 100;
    let lattice = Lattice::new(64).unwrap();
    let lp = LittlewoodPaley::new(&lattice);
    let blocks: Vec<i32> = (2..=5).collect();
    let slopes: Vec<f64> = (0..SAMPLES)
        .into_par_iter()
        .map(|s| {
            let (ti, _) = sample_ti_exact(&lattice, 1.0, &Mollifier::Sharp, 0.1, 500 + s).unwrap();
            let pts: Vec<(f64, f64)> = blocks.iter().map(|&k| (k as f64, lp.block(&ti, k).sup_norm().log2())).collect();
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            sxy / sxx
        })
        .collect();
    let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    println!("mean block slope {slope}");
    assert!((0.8..=1.3).contains(&slope), "slope {slope}");
}
