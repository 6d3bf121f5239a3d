//! Dyadic partition of unity, Littlewood-Paley blocks, Besov norms and the Bony
//! decomposition `uv = u < v + v < u + u o v` on the lattice.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::spectral::{Lattice, PaddedValues, SpectralField};

/// Inner radius of the annulus carrying `rho_0`.
pub const ANNULUS_INNER: f64 = 9.0 / 32.0;
/// Radius beyond which `rho_{-1}` vanishes.
pub const BALL_RADIUS: f64 = 0.5;

fn bump_edge(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth radial cutoff: 1 on `[0, 9/32]`, 0 on `[1/2, inf)`.
pub fn chi(r: f64) -> f64 {
    let s = (r - ANNULUS_INNER) / (BALL_RADIUS - ANNULUS_INNER);
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let a = bump_edge(1.0 - s);
        a / (a + bump_edge(s))
    }
}

/// Dyadic partition `rho_{-1} = chi`, `rho_k(r) = chi(r / 2^{k+1}) - chi(r / 2^k)`,
/// truncated to the blocks `-1..=k_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DyadicPartition {
    k_max: i32,
}

impl DyadicPartition {
    pub fn new(k_max: i32) -> Result<Self> {
        if k_max < 0 {
            return Err(KsError::InvalidArgument("k_max must be non-negative".into()));
        }
        Ok(DyadicPartition { k_max })
    }

    /// Smallest `k_max` for which the truncated partition sums to one on `|w| <= sqrt(2) N`.
    pub fn required_blocks(n: usize) -> i32 {
        let r = std::f64::consts::SQRT_2 * n as f64;
        let mut k = 0;
        while ANNULUS_INNER * 2f64.powi(k + 1) < r {
            k += 1;
        }
        k
    }

    /// The partition covering `lattice` exactly.
    pub fn for_lattice(lattice: &Lattice) -> Self {
        DyadicPartition { k_max: Self::required_blocks(lattice.n()) }
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    pub fn blocks(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.k_max
    }

    pub fn rho(&self, k: i32, r: f64) -> f64 {
        if k < -1 || k > self.k_max {
            0.0
        } else {
            rho(k, r)
        }
    }

    fn check_covers(&self, lattice: &Lattice) -> Result<()> {
        let needed = Self::required_blocks(lattice.n());
        if self.k_max < needed {
            Err(KsError::PartitionTooShort { k_max: self.k_max, needed })
        } else {
            Ok(())
        }
    }
}

/// Untruncated `rho_k(r)`, `k >= -1`.
pub fn rho(k: i32, r: f64) -> f64 {
    if k == -1 {
        chi(r)
    } else {
        let s = 2f64.powi(k);
        chi(r / (2.0 * s)) - chi(r / s)
    }
}

/// `sum_{|k - l| <= 1} rho_k(a) rho_l(b)`.
pub fn sim_weight(a: f64, b: f64, k_max: i32) -> f64 {
    let mut s = 0.0;
    for k in -1..=k_max {
        let rk = rho(k, a);
        if rk != 0.0 {
            for l in (k - 1).max(-1)..=(k + 1).min(k_max) {
                s += rk * rho(l, b);
            }
        }
    }
    s
}

/// `sum_{k >= 1} sum_{l <= k - 2} rho_l(a) rho_k(b)`.
pub fn precsim_weight(a: f64, b: f64, k_max: i32) -> f64 {
    let mut s = 0.0;
    for k in 1..=k_max {
        let rk = rho(k, b);
        if rk != 0.0 {
            for l in -1..=k - 2 {
                s += rho(l, a) * rk;
            }
        }
    }
    s
}

/// Besov index `(alpha, p, q)`; `p` or `q` may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovIndex {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovIndex {
    /// Hoelder-Besov space `C^alpha = B^alpha_{inf, inf}`.
    pub fn holder(alpha: f64) -> Self {
        BesovIndex { alpha, p: f64::INFINITY, q: f64::INFINITY }
    }
}

/// Littlewood-Paley blocks of one field, as point values on the padded grid.
#[derive(Clone, Debug)]
pub struct BlockSet {
    blocks: Vec<Option<PaddedValues>>,
}

impl BlockSet {
    fn get(&self, k: i32) -> Option<&PaddedValues> {
        if k < -1 {
            None
        } else {
            self.blocks.get((k + 1) as usize).and_then(|b| b.as_ref())
        }
    }
}

/// Block weights of a [`DyadicPartition`] tabulated on a lattice.
#[derive(Clone, Debug)]
pub struct LittlewoodPaley {
    lattice: Lattice,
    partition: DyadicPartition,
    weights: Vec<Vec<(usize, f64)>>,
}

impl LittlewoodPaley {
    pub fn new(lattice: &Lattice) -> Self {
        Self::with_partition(lattice, DyadicPartition::for_lattice(lattice))
            .expect("the lattice partition always covers its lattice")
    }

    pub fn with_partition(lattice: &Lattice, partition: DyadicPartition) -> Result<Self> {
        partition.check_covers(lattice)?;
        let weights = partition
            .blocks()
            .map(|k| {
                (0..lattice.len())
                    .filter_map(|i| {
                        let w = rho(k, lattice.norm(i));
                        (w != 0.0).then_some((i, w))
                    })
                    .collect()
            })
            .collect();
        Ok(LittlewoodPaley { lattice: lattice.clone(), partition, weights })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn partition(&self) -> DyadicPartition {
        self.partition
    }

    fn weights(&self, k: i32) -> &[(usize, f64)] {
        if k < -1 || k > self.partition.k_max {
            &[]
        } else {
            &self.weights[(k + 1) as usize]
        }
    }

    /// `Delta_k u`.
    pub fn block(&self, u: &SpectralField, k: i32) -> SpectralField {
        let mut out = SpectralField::zeros(&self.lattice);
        let c = out.coeffs_mut();
        for &(i, w) in self.weights(k) {
            c[i] = u.coeffs()[i] * w;
        }
        out
    }

    /// All blocks of `u` on the padded product grid.
    pub fn blocks(&self, u: &SpectralField) -> BlockSet {
        let blocks = self
            .partition
            .blocks()
            .map(|k| {
                let w = self.weights(k);
                if w.iter().all(|&(i, _)| u.coeffs()[i] == C64::new(0.0, 0.0)) {
                    None
                } else {
                    Some(self.block(u, k).padded())
                }
            })
            .collect();
        BlockSet { blocks }
    }

    /// `u < v = sum_k Delta_{<k-1} u Delta_k v`.
    pub fn paraproduct_blocks(&self, u: &BlockSet, v: &BlockSet) -> SpectralField {
        let mut acc = PaddedValues::zeros(&self.lattice);
        let mut low: Option<PaddedValues> = None;
        for k in 1..=self.partition.k_max {
            if let Some(b) = u.get(k - 2) {
                match low.as_mut() {
                    Some(l) => l.add_assign(b),
                    None => low = Some(b.clone()),
                }
            }
            if let (Some(l), Some(vk)) = (low.as_ref(), v.get(k)) {
                acc.add_product(l, vk);
            }
        }
        SpectralField::from_padded(&self.lattice, &acc)
    }

    /// `u o v = sum_{|k - l| <= 1} Delta_k u Delta_l v`.
    pub fn resonant_blocks(&self, u: &BlockSet, v: &BlockSet) -> SpectralField {
        let mut acc = PaddedValues::zeros(&self.lattice);
        for k in self.partition.blocks() {
            if let Some(uk) = u.get(k) {
                for l in k - 1..=k + 1 {
                    if let Some(vl) = v.get(l) {
                        acc.add_product(uk, vl);
                    }
                }
            }
        }
        SpectralField::from_padded(&self.lattice, &acc)
    }

    pub fn paraproduct(&self, u: &SpectralField, v: &SpectralField) -> SpectralField {
        self.paraproduct_blocks(&self.blocks(u), &self.blocks(v))
    }

    pub fn resonant(&self, u: &SpectralField, v: &SpectralField) -> SpectralField {
        self.resonant_blocks(&self.blocks(u), &self.blocks(v))
    }

    /// `(u < v, v < u, u o v)`.
    pub fn bony(&self, u: &SpectralField, v: &SpectralField) -> [SpectralField; 3] {
        let bu = self.blocks(u);
        let bv = self.blocks(v);
        [
            self.paraproduct_blocks(&bu, &bv),
            self.paraproduct_blocks(&bv, &bu),
            self.resonant_blocks(&bu, &bv),
        ]
    }

    /// `C(f, g, h) = (f < g) o h - f (g o h)`.
    pub fn commutator(&self, f: &SpectralField, g: &SpectralField, h: &SpectralField) -> Result<SpectralField> {
        let bh = self.blocks(h);
        let left = self.resonant_blocks(&self.blocks(&self.paraproduct(f, g)), &bh);
        let right = f.product(&self.resonant_blocks(&self.blocks(g), &bh))?;
        Ok(&left - &right)
    }

    /// `sum_{w1 + w2 = w} f(w1) g(w2) sum_{|k-l|<=1} rho_k(w1) rho_l(w2)` by direct summation.
    pub fn sim_restricted_convolution(&self, f: &SpectralField, g: &SpectralField) -> SpectralField {
        self.weighted_convolution(f, g, |a, b| sim_weight(a, b, self.partition.k_max))
    }

    /// Direct summation with the paraproduct cutoff.
    pub fn precsim_restricted_convolution(&self, f: &SpectralField, g: &SpectralField) -> SpectralField {
        self.weighted_convolution(f, g, |a, b| precsim_weight(a, b, self.partition.k_max))
    }

    fn weighted_convolution(
        &self,
        f: &SpectralField,
        g: &SpectralField,
        weight: impl Fn(f64, f64) -> f64,
    ) -> SpectralField {
        let l = &self.lattice;
        let mut out = SpectralField::zeros(l);
        for i in 0..l.len() {
            if f.coeffs()[i] == C64::new(0.0, 0.0) {
                continue;
            }
            let (a1, a2) = l.freq(i);
            for j in 0..l.len() {
                let (b1, b2) = l.freq(j);
                if let Some(k) = l.index(a1 + b1, a2 + b2) {
                    let w = weight(l.norm(i), l.norm(j));
                    if w != 0.0 {
                        out.coeffs_mut()[k] += f.coeffs()[i] * g.coeffs()[j] * w;
                    }
                }
            }
        }
        out
    }

    /// `|| (2^{k alpha} ||Delta_k u||_{L^p})_k ||_{l^q}` with equal-weight grid quadrature.
    pub fn besov_norm(&self, u: &SpectralField, index: BesovIndex) -> f64 {
        let terms: Vec<f64> = self
            .partition
            .blocks()
            .map(|k| {
                let w = self.weights(k);
                if w.iter().all(|&(i, _)| u.coeffs()[i] == C64::new(0.0, 0.0)) {
                    return 0.0;
                }
                let values = self.block(u, k).values();
                let lp = if index.p.is_infinite() {
                    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                } else {
                    let n = values.len() as f64;
                    (values.iter().map(|v| v.abs().powf(index.p)).sum::<f64>() / n).powf(1.0 / index.p)
                };
                2f64.powf(k as f64 * index.alpha) * lp
            })
            .collect();
        if index.q.is_infinite() {
            terms.into_iter().fold(0.0, f64::max)
        } else {
            terms.iter().map(|t| t.powf(index.q)).sum::<f64>().powf(1.0 / index.q)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(lattice: &Lattice, seed: u64) -> SpectralField {
        let mut s = seed.wrapping_add(0x2545_F491_4F6C_DD1D) | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = SpectralField::from_fn(lattice, |_, _| C64::new(next(), next()));
        f.symmetrize();
        f
    }

    #[test]
    fn partition_sums_to_one_on_lattice() {
        for n in [1, 3, 8, 16, 64] {
            let l = Lattice::new(n).unwrap();
            let p = DyadicPartition::for_lattice(&l);
            for i in 0..l.len() {
                let s: f64 = p.blocks().map(|k| p.rho(k, l.norm(i))).sum();
                assert!((s - 1.0).abs() < 1e-12, "n = {n}, |w| = {}", l.norm(i));
            }
        }
    }

    #[test]
    fn supports_and_disjointness() {
        for j in 0..4000 {
            let r = j as f64 * 0.01;
            assert!(rho(-1, r) == 0.0 || r < BALL_RADIUS);
            assert!(rho(0, r) == 0.0 || (ANNULUS_INNER..=1.0).contains(&r));
            for k in -1..8 {
                assert!(rho(k, r) >= 0.0);
                for l in k + 2..10 {
                    assert_eq!(rho(k, r) * rho(l, r), 0.0);
                }
            }
        }
        assert_eq!(rho(-1, 1.0), 0.0);
    }

    #[test]
    fn short_partition_is_rejected() {
        let l = Lattice::new(16).unwrap();
        let needed = DyadicPartition::required_blocks(16);
        let p = DyadicPartition::new(needed - 1).unwrap();
        assert_eq!(
            LittlewoodPaley::with_partition(&l, p).unwrap_err(),
            KsError::PartitionTooShort { k_max: needed - 1, needed }
        );
    }

    #[test]
    fn blocks_reconstruct_field() {
        let l = Lattice::new(9).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let u = field(&l, 4);
        let mut sum = SpectralField::zeros(&l);
        for k in lp.partition().blocks() {
            sum += &lp.block(&u, k);
        }
        assert!(sum.max_abs_diff(&u) < 1e-12);
    }

    #[test]
    fn bony_reconstructs_product() {
        let l = Lattice::new(10).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let u = field(&l, 1);
        let v = field(&l, 2);
        let [uv, vu, res] = lp.bony(&u, &v);
        let sum = &(&uv + &vu) + &res;
        assert!(sum.max_abs_diff(&u.product(&v).unwrap()) < 1e-12);
    }

    #[test]
    fn resonant_and_paraproduct_match_direct_sums() {
        let l = Lattice::new(5).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let u = field(&l, 8);
        let v = field(&l, 9);
        assert!(lp.resonant(&u, &v).max_abs_diff(&lp.sim_restricted_convolution(&u, &v)) < 1e-12);
        assert!(lp.paraproduct(&u, &v).max_abs_diff(&lp.precsim_restricted_convolution(&u, &v)) < 1e-12);
    }

    #[test]
    fn paraproduct_with_constants() {
        let l = Lattice::new(6).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let u = field(&l, 3);
        let c = SpectralField::constant(&l, 2.5);
        assert!(lp.paraproduct(&u, &c).l2_norm() < 1e-14);
        let mut expect = SpectralField::zeros(&l);
        for k in 1..=lp.partition().k_max() {
            expect += &lp.block(&u, k).scale(2.5);
        }
        assert!(lp.paraproduct(&c, &u).max_abs_diff(&expect) < 1e-13);
    }

    #[test]
    fn frequency_localisation_of_cutoffs() {
        let k_max = 8;
        for a in 1..40 {
            for b in 1..40 {
                let (a, b) = (a as f64 * 0.7, b as f64 * 0.9);
                if sim_weight(a, b, k_max) != 0.0 {
                    assert!(9.0 / 64.0 * a <= b && b <= 64.0 / 9.0 * a);
                }
                if precsim_weight(a, b, k_max) != 0.0 {
                    assert!(a <= 8.0 / 9.0 * b);
                }
            }
        }
    }

    #[test]
    fn besov_norm_of_single_mode() {
        let l = Lattice::new(8).unwrap();
        let lp = LittlewoodPaley::new(&l);
        // |w| = 3 straddles blocks 1 and 2; each block is a multiple of 2 cos(6 pi x1).
        let mut u = SpectralField::zeros(&l);
        u.set(3, 0, C64::new(1.0, 0.0));
        u.set(-3, 0, C64::new(1.0, 0.0));
        let alpha = -0.3;
        let expect: f64 = (-1..=lp.partition().k_max())
            .map(|k| 2f64.powf(k as f64 * alpha) * rho(k, 3.0) * 2.0)
            .fold(0.0, f64::max);
        let got = lp.besov_norm(&u, BesovIndex::holder(alpha));
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        let l2 = lp.besov_norm(&u, BesovIndex { alpha: 0.0, p: 2.0, q: 2.0 });
        let direct: f64 = lp
            .partition()
            .blocks()
            .map(|k| (rho(k, 3.0) * std::f64::consts::SQRT_2).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((l2 - direct).abs() < 1e-12);
    }

    #[test]
    fn commutator_vanishes_for_constant_first_argument() {
        // f constant: (f < g) o h = f (g_{>=1} o h) and f (g o h) differ only by f (Delta_{-1}g + Delta_0 g) o h.
        let l = Lattice::new(6).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let g = field(&l, 5);
        let h = field(&l, 6);
        let f = SpectralField::constant(&l, 1.5);
        let c = lp.commutator(&f, &g, &h).unwrap();
        let low = &lp.block(&g, -1) + &lp.block(&g, 0);
        let expect = lp.resonant(&low, &h).scale(-1.5);
        assert!(c.max_abs_diff(&expect) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn bony_identity_holds(seed in 0u64..10_000, n in 2usize..9) {
            let l = Lattice::new(n).unwrap();
            let lp = LittlewoodPaley::new(&l);
            let u = field(&l, seed);
            let v = field(&l, seed ^ 0xff);
            let [uv, vu, res] = lp.bony(&u, &v);
            let sum = &(&uv + &vu) + &res;
            prop_assert!(sum.max_abs_diff(&u.product(&v).unwrap()) < 1e-12);
        }

        #[test]
        fn partition_of_unity_off_lattice(r in 0.0f64..200.0) {
            let s: f64 = (-1..12).map(|k| rho(k, r)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dilation_relation(r in 0.0f64..50.0, k in 0i32..6) {
            prop_assert!((rho(k, r) - rho(0, r / 2f64.powi(k))).abs() < 1e-15);
        }
    }
}
