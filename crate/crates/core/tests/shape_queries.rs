use ks_para_core::shape::{shape_d, shape_d_tolerance, Freq, ShapeKind, ShapeQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const QUERIES: usize = 1000;

fn random_freq(rng: &mut ChaCha8Rng) -> Freq {
    loop {
        let w = (rng.random_range(-8..=8), rng.random_range(-8..=8));
        if w != (0, 0) {
            return w;
        }
    }
}

fn random_times(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut time = || if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..0.1) };
    (time(), time())
}

fn relative_gap(q: &ShapeQuery) -> f64 {
    let c = q.closed_form();
    let n = q.quadrature(1e-12).unwrap();
    if c == n {
        0.0
    } else {
        (c - n).abs() / n.abs().max(c.abs())
    }
}

#[test]
fn y_closed_form_agrees_with_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut worst = 0.0f64;
    for _ in 0..QUERIES {
        let (s, t) = random_times(&mut rng);
        let w1 = random_freq(&mut rng);
        let w2 = loop {
            let w = random_freq(&mut rng);
            if (w1.0 + w.0, w1.1 + w.1) != (0, 0) {
                break w;
            }
        };
        let q = ShapeQuery::new(ShapeKind::Y, s, t, vec![w1, w2]).unwrap();
        let gap = relative_gap(&q);
        assert!(gap <= 1e-8, "{w1:?} {w2:?} s = {s} t = {t}: relative gap {gap:e}");
        worst = worst.max(gap);
        assert!(shape_d(s, t, w1, w2) >= -shape_d_tolerance(s, t, w1, w2));
    }
    println!("worst relative gap for Y: {worst:e}");
}

#[test]
fn l_closed_form_agrees_with_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a7e);
    for _ in 0..QUERIES {
        let (s, t) = random_times(&mut rng);
        let w = random_freq(&mut rng);
        let q = ShapeQuery::new(ShapeKind::L, s, t, vec![w]).unwrap();
        let gap = relative_gap(&q);
        assert!(gap <= 1e-8, "{w:?} s = {s} t = {t}: relative gap {gap:e}");
    }
}
