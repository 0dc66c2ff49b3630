//! Seeded three-field click data with known field importance.
//!
//! * `item` (100 values) decides the label through a main effect and a
//!   rank-6 interaction with `context`;
//! * `noise` (4 values) is independent of the label;
//! * `context` (10 values) carries a weak main effect.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, FieldSchema};
use crate::embedding::CandidateDims;
use crate::error::Result;
use crate::trainer::SearchConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub item_values: usize,
    pub noise_values: usize,
    pub context_values: usize,
    pub latent_dim: usize,
    pub item_scale: f64,
    pub interaction_scale: f64,
    pub context_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 20_000,
            item_values: 100,
            noise_values: 4,
            context_values: 10,
            latent_dim: 6,
            item_scale: 2.0,
            interaction_scale: 1.5,
            context_scale: 0.4,
            seed: 7,
        }
    }
}

pub const FIELD_NAMES: [&str; 3] = ["item", "noise", "context"];

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| std.sample(rng)).collect() };
    let item_main = draw(spec.item_values, &mut rng);
    let context_main = draw(spec.context_values, &mut rng);
    let item_latent: Vec<Vec<f64>> = (0..spec.item_values).map(|_| draw(spec.latent_dim, &mut rng)).collect();
    let context_latent: Vec<Vec<f64>> = (0..spec.context_values).map(|_| draw(spec.latent_dim, &mut rng)).collect();
    let norm = (spec.latent_dim as f64).sqrt();

    let mut features = Vec::with_capacity(spec.rows * 3);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let i = rng.random_range(0..spec.item_values);
        let n = rng.random_range(0..spec.noise_values);
        let c = rng.random_range(0..spec.context_values);
        let dot: f64 = item_latent[i].iter().zip(&context_latent[c]).map(|(a, b)| a * b).sum();
        let logit = spec.item_scale * item_main[i] + spec.interaction_scale * dot / norm + spec.context_scale * context_main[c];
        let p = 1.0 / (1.0 + (-logit).exp());
        features.extend([i as u32, n as u32, c as u32]);
        labels.push(u8::from(rng.random::<f64>() < p));
    }
    let schema = vec![
        FieldSchema::categorical(FIELD_NAMES[0], spec.item_values),
        FieldSchema::categorical(FIELD_NAMES[1], spec.noise_values),
        FieldSchema::categorical(FIELD_NAMES[2], spec.context_values),
    ];
    Dataset::new(schema, features, labels)
}

/// Writes `ds` in the loader's format, tokens prefixed by field initial
/// (`i17`, `n2`, `c5`).
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend(ds.schema().iter().map(|f| format!("{}:{}", f.name, f.kind)));
    out.write_record(&header)?;
    for r in 0..ds.len() {
        let mut rec = vec![ds.label(r).to_string()];
        rec.extend(
            ds.row(r)
                .iter()
                .zip(ds.schema())
                .map(|(v, f)| format!("{}{v}", &f.name[..1])),
        );
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Training settings sized for this problem: candidates {2, 8}, a small MLP
/// and short epochs.
pub fn study_config() -> SearchConfig {
    SearchConfig {
        batch_size: 256,
        candidate_dims: CandidateDims::new(vec![2, 8]).expect("valid dims"),
        hidden: vec![32, 32],
        dropout: 0.0,
        lr_w: 0.003,
        lr_alpha: 0.03,
        search_epochs: 30,
        retrain_epochs: 60,
        ..SearchConfig::default()
    }
}
