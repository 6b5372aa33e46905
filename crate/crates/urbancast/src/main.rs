// Temporary tuning probe; the real CLI replaces this.
use urbancast::bench::*;

fn main() {
    let seeds: Vec<u64> = (1..=5).collect();
    for (epochs, lr, batch) in [(40usize, 2e-3, 16usize), (80, 1e-3, 16), (80, 2e-3, 32), (120, 1e-3, 32)] {
        let mut base = default_benchmark(1);
        base.train.epochs = epochs;
        base.train.learning_rate = lr;
        base.train.batch_size = batch;
        let t0 = std::time::Instant::now();
        let rt = ablate_multi_seed("retrieval", &base, &seeds).unwrap();
        let wt = ablate_multi_seed("weighting", &base, &seeds).unwrap();
        println!("== epochs {epochs} lr {lr} batch {batch} ({:.0?})", t0.elapsed());
        for (m, r2, p) in summarize_by(&rt, |r| r.mechanism.as_str().to_string()) {
            println!("  {m:18} R2 {r2:+.4} prec {:?}", p.map(|x| (x * 1000.0).round() / 1000.0));
        }
        for (m, r2, _) in summarize_by(&wt, |r| r.weighting.as_str().to_string()) {
            println!("  {m:18} R2 {r2:+.4}");
        }
    }
}
