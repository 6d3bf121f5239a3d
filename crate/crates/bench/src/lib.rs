//! Fixtures shared by the kernel benchmarks.

use ks_para_core::noise::{Heterogeneity, TrigTerm};
use ks_para_core::{Lattice, SpectralField};
use num_complex::Complex64 as C64;

/// Real field with deterministic pseudo-random coefficients decaying like `|k|^{-1}`.
pub fn test_field(lattice: &Lattice, seed: u64) -> SpectralField {
    let mut f = SpectralField::from_fn(lattice, |k1, k2| {
        let h = (k1 * 7919 + k2 * 104_729 + seed as i64 * 15_485_863).rem_euclid(1_000_003) as f64 / 1_000_003.0;
        let r = 1.0 + ((k1 * k1 + k2 * k2) as f64).sqrt();
        C64::from_polar(1.0 / r, std::f64::consts::TAU * h)
    });
    f.symmetrize();
    f
}

/// `1 + cos(2 pi x1) / 2`.
pub fn cosine_sigma(lattice: &Lattice) -> Heterogeneity {
    Heterogeneity::trig(lattice, 1.0, &[TrigTerm { k: (1, 0), cos_amp: 0.5, sin_amp: 0.0 }])
        .expect("lattice holds (1, 0)")
}
