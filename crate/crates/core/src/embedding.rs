//! Candidate embedding tables per field, in separate or weight-sharing layout.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::data::FieldSchema;
use crate::error::{Error, Result};

/// Standard deviation of the embedding initializer.
pub const INIT_STD: f64 = 0.01;

/// Strictly increasing candidate embedding dimensions `d_1 < ... < d_N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CandidateDims(Vec<usize>);

impl CandidateDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("candidate dimension set is empty".into()));
        }
        if dims[0] == 0 || dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "candidate dimensions must be positive and strictly increasing: {dims:?}"
            )));
        }
        Ok(Self(dims))
    }

    /// `{2, 8, 16, 24, 32}`.
    pub fn ctr_default() -> Self {
        Self(vec![2, 8, 16, 24, 32])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dimension of candidate `n` (0-based).
    pub fn dim(&self, n: usize) -> usize {
        self.0[n]
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn index_of(&self, dim: usize) -> Option<usize> {
        self.0.iter().position(|&d| d == dim)
    }

    /// Reals stored per feature value under `layout`.
    pub fn storage_per_feature(&self, layout: Layout) -> usize {
        match layout {
            Layout::Separate => self.0.iter().sum(),
            Layout::WeightSharing => self.max(),
        }
    }
}

impl TryFrom<Vec<usize>> for CandidateDims {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CandidateDims> for Vec<usize> {
    fn from(c: CandidateDims) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// One table per candidate dimension.
    Separate,
    /// One `d_N`-wide table; candidate `n` is the first `d_n` columns.
    WeightSharing,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Layout::Separate),
            "weight-sharing" | "shared" => Ok(Layout::WeightSharing),
            other => Err(Error::Config(format!("unknown lookup layout `{other}`"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Separate => "separate",
            Layout::WeightSharing => "weight-sharing",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTables {
    pub name: String,
    pub cardinality: usize,
    pub dims: CandidateDims,
    tables: Vec<ParamId>,
}

impl FieldTables {
    pub fn tables(&self) -> &[ParamId] {
        &self.tables
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    layout: Layout,
    fields: Vec<FieldTables>,
}

impl EmbeddingStore {
    /// Allocates zeroed tables for every field; call [`init_embeddings`] to
    /// draw initial values.
    pub fn new(
        schema: &[FieldSchema],
        dims: &[CandidateDims],
        layout: Layout,
        params: &mut ParamStore,
    ) -> Result<Self> {
        if dims.len() != schema.len() {
            return Err(Error::Config(format!(
                "{} candidate sets for {} fields",
                dims.len(),
                schema.len()
            )));
        }
        let mut fields = Vec::with_capacity(schema.len());
        for (f, d) in schema.iter().zip(dims) {
            let widths: Vec<usize> = match layout {
                Layout::Separate => d.as_slice().to_vec(),
                Layout::WeightSharing => vec![d.max()],
            };
            let tables = widths
                .iter()
                .map(|&w| {
                    params.add(
                        format!("emb/{}/{}", f.name, w),
                        ParamGroup::Embedding,
                        Tensor::zeros(vec![f.cardinality, w], true),
                    )
                })
                .collect();
            fields.push(FieldTables {
                name: f.name.clone(),
                cardinality: f.cardinality,
                dims: d.clone(),
                tables,
            });
        }
        Ok(Self { layout, fields })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn fields(&self) -> &[FieldTables] {
        &self.fields
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    fn locate(&self, field: usize, candidate: usize) -> Result<(ParamId, usize)> {
        let f = self
            .fields
            .get(field)
            .ok_or_else(|| Error::Index(format!("field {field} >= {}", self.fields.len())))?;
        if candidate >= f.dims.len() {
            return Err(Error::Index(format!(
                "candidate {candidate} >= {} for field `{}`",
                f.dims.len(),
                f.name
            )));
        }
        let width = f.dims.dim(candidate);
        Ok(match self.layout {
            Layout::Separate => (f.tables[candidate], width),
            Layout::WeightSharing => (f.tables[0], width),
        })
    }

    /// Embedding of one value under candidate `candidate` (0-based).
    pub fn lookup(
        &self,
        params: &ParamStore,
        field: usize,
        value: usize,
        candidate: usize,
    ) -> Result<Tensor> {
        let (id, width) = self.locate(field, candidate)?;
        let table = params.get(id);
        let card = table.rows_cols().0;
        if value >= card {
            return Err(Error::Index(format!(
                "value {value} >= cardinality {card} of field `{}`",
                self.fields[field].name
            )));
        }
        Tensor::new(vec![width], table.row(value)[..width].to_vec(), false)
    }

    /// Batched lookup recorded on `graph`; gradients flow only to the
    /// accessed entries.
    pub fn lookup_batch(
        &self,
        graph: &mut Graph,
        field: usize,
        values: &[usize],
        candidate: usize,
    ) -> Result<Var> {
        let (id, width) = self.locate(field, candidate)?;
        let table = graph.param(id);
        graph.gather(table, values, width)
    }

    /// Reals held by all tables.
    pub fn storage(&self) -> usize {
        self.fields
            .iter()
            .map(|f| f.cardinality * f.dims.storage_per_feature(self.layout))
            .sum()
    }
}

/// Fills every table with i.i.d. `Normal(0, 0.01^2)` draws.
pub fn init_embeddings<R: Rng + ?Sized>(store: &EmbeddingStore, params: &mut ParamStore, rng: &mut R) {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for f in &store.fields {
        for &id in &f.tables {
            for v in params.get_mut(id).values_mut() {
                *v = normal.sample(rng);
            }
        }
    }
}

/// Embedding parameters of an assignment: `Σ_m cardinality_m * dim_m`.
pub fn param_count(schema: &[FieldSchema], assignment: &[usize]) -> u64 {
    schema
        .iter()
        .zip(assignment)
        .map(|(f, &d)| f.cardinality as u64 * d as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn schema() -> Vec<FieldSchema> {
        vec![FieldSchema::categorical("a", 3), FieldSchema::categorical("b", 5)]
    }

    #[test]
    fn candidate_dims_validation() {
        assert!(CandidateDims::new(vec![2, 2]).is_err());
        assert!(CandidateDims::new(vec![4, 2]).is_err());
        assert!(CandidateDims::new(vec![]).is_err());
        assert!(CandidateDims::new(vec![0, 2]).is_err());
        let d = CandidateDims::ctr_default();
        assert_eq!(d.storage_per_feature(Layout::Separate), 82);
        assert_eq!(d.storage_per_feature(Layout::WeightSharing), 32);
        let parsed: CandidateDims = serde_json::from_str("[2, 8]").unwrap();
        assert_eq!(parsed.as_slice(), &[2, 8]);
        assert!(serde_json::from_str::<CandidateDims>("[8, 2]").is_err());
    }

    #[test]
    fn weight_sharing_prefix_lookup() {
        let mut params = ParamStore::new();
        let s = vec![FieldSchema::categorical("a", 2)];
        let dims = CandidateDims::new(vec![2, 4]).unwrap();
        let store = EmbeddingStore::new(&s, &[dims], Layout::WeightSharing, &mut params).unwrap();
        let id = store.fields()[0].tables()[0];
        params.get_mut(id).values_mut()[4..8].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(store.lookup(&params, 0, 1, 0).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(store.lookup(&params, 0, 1, 1).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(store.lookup(&params, 0, 2, 0), Err(Error::Index(_))));
        assert!(matches!(store.lookup(&params, 0, 1, 2), Err(Error::Index(_))));

        let mut g = Graph::new(&params);
        let x = store.lookup_batch(&mut g, 0, &[1], 0).unwrap();
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(&grads.param(id).unwrap()[4..8], &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn separate_layout_storage_and_independence() {
        let mut params = ParamStore::new();
        let s = schema();
        let dims = vec![CandidateDims::ctr_default(); 2];
        let store = EmbeddingStore::new(&s, &dims, Layout::Separate, &mut params).unwrap();
        assert_eq!(store.storage(), (3 + 5) * 82);
        let shared = EmbeddingStore::new(&s, &dims, Layout::WeightSharing, &mut ParamStore::new()).unwrap();
        assert_eq!(shared.storage(), (3 + 5) * 32);

        init_embeddings(&store, &mut params, &mut ChaCha8Rng::seed_from_u64(1));
        let before = store.lookup(&params, 1, 2, 3).unwrap();
        let t0 = store.fields()[1].tables()[0];
        params.get_mut(t0).values_mut().iter_mut().for_each(|v| *v += 1.0);
        assert_eq!(store.lookup(&params, 1, 2, 3).unwrap(), before);
    }

    #[test]
    fn init_is_seeded_and_has_declared_spread() {
        let s = vec![FieldSchema::categorical("a", 10_000)];
        let dims = vec![CandidateDims::new(vec![2, 10]).unwrap()];
        let build = |seed| {
            let mut params = ParamStore::new();
            let store = EmbeddingStore::new(&s, &dims, Layout::WeightSharing, &mut params).unwrap();
            init_embeddings(&store, &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
            params.get(store.fields()[0].tables()[0]).values().to_vec()
        };
        let a = build(0);
        assert_eq!(a[..10], build(0)[..10]);
        assert_ne!(a, build(1));
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - INIT_STD).abs() / INIT_STD < 0.05, "{std}");
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&schema(), &[2, 4]), 26);
        let criteo = vec![FieldSchema::categorical("all", 1_086_810)];
        assert_eq!(param_count(&criteo, &[32]), 34_777_920);
        let avazu = vec![FieldSchema::categorical("all", 2_018_012)];
        assert_eq!(param_count(&avazu, &[32]), 64_576_384);
    }
}
