use ks_para_core::estimates::{verify_bound, Lemma};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lemmas: Vec<Lemma> = if args.len() > 1 { vec![args[1].parse().unwrap()] } else { Lemma::ALL.to_vec() };
    let caps: Vec<i64> = if args.len() > 2 { args[2].split(',').map(|c| c.parse().unwrap()).collect() } else { vec![32, 64] };
    for l in lemmas {
        let t0 = std::time::Instant::now();
        let r = verify_bound(l, &caps).unwrap();
        println!("{:<24} pass={} growth={:+.4} max={:?} ({:.1}s)", l.id(), r.pass, r.growth, r.max_ratio, t0.elapsed().as_secs_f64());
        for row in &r.rows {
            println!("    cap={} {:<28} ratio={:.4e} at {}", row.cap, row.params, row.ratio, row.at);
        }
    }
}
