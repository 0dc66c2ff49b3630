//! Writes the synthetic click data used by the bundled config.
//!
//! `cargo run --example make_synthetic -- [out.csv] [rows] [seed]`

use std::fs::File;
use std::io::BufWriter;

use autodim::synthetic::{generate, write_csv, SyntheticSpec};

fn main() -> autodim::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "crates/core/data/synthetic.csv".into());
    let mut spec = SyntheticSpec::default();
    if let Some(rows) = args.next() {
        spec.rows = rows.parse().map_err(|_| autodim::Error::Config(format!("bad row count `{rows}`")))?;
    }
    if let Some(seed) = args.next() {
        spec.seed = seed.parse().map_err(|_| autodim::Error::Config(format!("bad seed `{seed}`")))?;
    }
    let ds = generate(&spec)?;
    write_csv(&ds, BufWriter::new(File::create(&path)?))?;
    eprintln!("wrote {} rows to {path}", ds.len());
    Ok(())
}
