//! Search vs exhaustive enumeration on the bundled synthetic problem.
//!
//! `cargo run --release --example synthetic_study -- [seeds] [key=value ...]`

use std::time::Instant;

use autodim::data::{PreparedData, SplitSpec};
use autodim::search::DerivedArchitecture;
use autodim::synthetic::{generate, SyntheticSpec};
use autodim::trainer::{probe_field, retrain, run_search};

fn main() -> autodim::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut cfg = autodim::synthetic::study_config();
    for kv in args {
        cfg = autodim::config::apply_override(&cfg, &kv)?;
    }
    let ds = generate(&SyntheticSpec::default())?;
    let data = PreparedData::from_dataset(&ds, &SplitSpec::with_seed(0))?;
    let dims = cfg.candidates_for(&data.schema)?;

    for f in 0..data.schema.len() {
        let t = Instant::now();
        let p = probe_field(f, &data, &cfg)?;
        println!("probe {:8} auc={:.4} logloss={:.4} ({:.1}s)", p.field, p.auc, p.logloss, t.elapsed().as_secs_f64());
    }
    for seed in 0..seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let t = Instant::now();
        let s = run_search(&data, &c)?;
        let alpha: Vec<String> = s.network.alpha().unwrap().iter().map(|a| format!("{:.3}", a[1])).collect();
        println!("seed {seed}: derived {:?} alpha(8)={alpha:?} steps={} ({:.1}s)", s.arch.dims(), s.steps, t.elapsed().as_secs_f64());
        let mut best = (f64::INFINITY, Vec::new());
        let mut derived = f64::NAN;
        for code in 0..8usize {
            let idx: Vec<usize> = (0..3).map(|m| (code >> (2 - m)) & 1).collect();
            let arch = DerivedArchitecture::from_indices(&data.schema, &dims, &idx)?;
            let t = Instant::now();
            let r = retrain(&data, &arch, &c)?;
            println!(
                "  {:?} test logloss={:.4} auc={:.4} epochs={} ({:.1}s)",
                arch.dims(),
                r.test.mean_logloss,
                r.test.auc,
                r.history.len(),
                t.elapsed().as_secs_f64()
            );
            if r.test.mean_logloss < best.0 {
                best = (r.test.mean_logloss, arch.dims());
            }
            if arch.dims() == s.arch.dims() {
                derived = r.test.mean_logloss;
            }
        }
        println!("  best {:?} {:.4}; derived gap {:.4}", best.1, best.0, derived - best.0);
    }
    Ok(())
}
