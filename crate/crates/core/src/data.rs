//! Dataset ingestion, numeric bucketing, vocabularies, splits and batching.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index reserved in every vocabulary for values not seen in training.
pub const OOV_INDEX: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numerical,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(FieldKind::Categorical),
            "numerical" => Ok(FieldKind::Numerical),
            other => Err(Error::Schema(format!("unknown field kind `{other}`"))),
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Categorical => "categorical",
            FieldKind::Numerical => "numerical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    /// Vocabulary size including the OOV slot.
    pub cardinality: usize,
}

impl FieldSchema {
    pub fn new(name: impl Into<String>, kind: FieldKind, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            cardinality,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Self::new(name, FieldKind::Categorical, cardinality)
    }
}

/// Encoded interactions: `M` feature indices and a binary label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<FieldSchema>,
    features: Vec<u32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: Vec<FieldSchema>, features: Vec<u32>, labels: Vec<u8>) -> Result<Self> {
        let m = schema.len();
        if m == 0 {
            return Err(Error::Schema("dataset has no fields".into()));
        }
        if let Some(f) = schema.iter().find(|f| f.cardinality < 2) {
            return Err(Error::Schema(format!(
                "field `{}` has cardinality {} (< 2)",
                f.name, f.cardinality
            )));
        }
        if features.len() != labels.len() * m {
            return Err(Error::Schema(format!(
                "{} feature values for {} rows of {m} fields",
                features.len(),
                labels.len()
            )));
        }
        for (row, chunk) in features.chunks(m).enumerate() {
            for (f, &v) in schema.iter().zip(chunk) {
                if v as usize >= f.cardinality {
                    return Err(Error::Index(format!(
                        "row {row}: value {v} of field `{}` >= cardinality {}",
                        f.name, f.cardinality
                    )));
                }
            }
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Label(format!("row {row} has label {}", labels[row])));
        }
        Ok(Self {
            schema,
            features,
            labels,
        })
    }

    pub fn schema(&self) -> &[FieldSchema] {
        &self.schema
    }

    pub fn num_fields(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let m = self.schema.len();
        &self.features[i * m..(i + 1) * m]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.schema.iter().map(|f| f.cardinality).collect()
    }

    /// Rows in the given order; the schema is shared.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let m = self.schema.len();
        let mut features = Vec::with_capacity(indices.len() * m);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            features,
            labels,
        }
    }

    /// Single-field view used by the field probe.
    pub fn project(&self, field: usize) -> Result<Dataset> {
        if field >= self.schema.len() {
            return Err(Error::Index(format!(
                "field {field} >= {} fields",
                self.schema.len()
            )));
        }
        let features = (0..self.len()).map(|i| self.row(i)[field]).collect();
        Ok(Dataset {
            schema: vec![self.schema[field].clone()],
            features,
            labels: self.labels.clone(),
        })
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    /// Column-major view of the given rows.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let m = self.schema.len();
        let mut columns = vec![Vec::with_capacity(indices.len()); m];
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            for (col, &v) in columns.iter_mut().zip(self.row(i)) {
                col.push(v as usize);
            }
            labels.push(self.labels[i] as f64);
        }
        Batch { columns, labels }
    }

    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

/// Column-major mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub columns: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Maps `v > 2` to `floor(ln(v)^2)` and anything else to `floor(v)`.
pub fn criteo_numeric_transform(v: f64, row: usize) -> Result<i64> {
    if !v.is_finite() {
        return Err(Error::Ingestion {
            row,
            detail: format!("non-finite numeric value {v}"),
        });
    }
    let out = if v > 2.0 {
        let l = v.ln();
        (l * l).floor()
    } else {
        v.floor()
    };
    Ok(out as i64)
}

/// Token to index map built from training tokens in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self { tokens, index }
    }

    pub fn cardinality(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn encode(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    pub fn decode(&self, index: u32) -> Option<&str> {
        if index == OOV_INDEX {
            return None;
        }
        self.tokens.get(index as usize - 1).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds a vocabulary from training tokens and records its cardinality on `field`.
pub fn build_vocab<I, S>(tokens: I, field: &mut FieldSchema) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashMap::new();
    let mut ordered = Vec::new();
    for t in tokens {
        let t = t.as_ref();
        if !seen.contains_key(t) {
            seen.insert(t.to_string(), ordered.len() as u32 + 1);
            ordered.push(t.to_string());
        }
    }
    if ordered.is_empty() {
        return Err(Error::Schema(format!("field `{}` has an empty column", field.name)));
    }
    field.cardinality = ordered.len() + 1;
    Ok(Vocab {
        tokens: ordered,
        index: seen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        // 90% train/validation at 8:1, 10% test
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }

    /// Seeded permutation of `0..n` cut into train / validation / test.
    pub fn partition(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        self.validate()?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        order.shuffle(&mut rng);
        let n_train = (n as f64 * self.train).round() as usize;
        let n_val = ((n as f64 * self.validation).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let test = order.split_off(n_train + n_val);
        let val = order.split_off(n_train);
        if order.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::Config(format!(
                "split of {n} rows leaves an empty partition ({}/{}/{})",
                order.len(),
                val.len(),
                test.len()
            )));
        }
        Ok([order, val, test])
    }
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = spec.partition(ds.len())?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Epoch-wise shuffled mini-batch iterator over row indices.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if len == 0 {
            return Err(Error::Config("cannot batch an empty split".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            pos: 0,
            batch_size,
            epoch: 0,
            rng,
        })
    }

    /// Completed passes over the data.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Next batch; the last batch of an epoch may be short. Reshuffles and
    /// starts a new epoch once the current one is exhausted.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        if self.pos >= self.order.len() {
            self.epoch += 1;
        }
        out
    }
}

/// How a numerical column becomes categorical tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NumericTransform {
    #[default]
    Criteo,
    /// Equal-frequency buckets with boundaries taken from the training split.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldOverride {
    pub name: String,
    pub kind: Option<FieldKind>,
    pub transform: Option<NumericTransform>,
    pub buckets: Option<usize>,
}

/// Optional schema sidecar overriding field kinds and numeric bucketing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSidecar {
    #[serde(default, rename = "field")]
    pub fields: Vec<FieldOverride>,
}

impl SchemaSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    fn get(&self, name: &str) -> Option<&FieldOverride> {
        self.fields.iter().find(|f| f.name == name)
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed but not yet encoded rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub kinds: Vec<FieldKind>,
    pub tokens: Vec<Vec<String>>,
    pub labels: Vec<u8>,
}

impl RawTable {
    /// Reads a delimited file whose header is `label,name:kind,...`.
    pub fn read(path: &Path, delimiter: u8) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file, delimiter)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Schema("header needs a label column and at least one field".into()));
        }
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        for h in header.iter().skip(1) {
            let (name, kind) = h
                .rsplit_once(':')
                .ok_or_else(|| Error::Schema(format!("header entry `{h}` is not name:kind")))?;
            names.push(name.trim().to_string());
            kinds.push(kind.trim().parse()?);
        }
        let mut tokens = vec![Vec::new(); names.len()];
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let label = match rec.get(0).map(str::trim) {
                Some("0") => 0,
                Some("1") => 1,
                other => {
                    return Err(Error::Label(format!(
                        "row {row}: label {:?} is not 0 or 1",
                        other.unwrap_or("")
                    )))
                }
            };
            labels.push(label);
            for (col, v) in tokens.iter_mut().zip(rec.iter().skip(1)) {
                col.push(v.trim().to_string());
            }
        }
        if labels.is_empty() {
            return Err(Error::Schema("data file has no rows".into()));
        }
        Ok(Self {
            names,
            kinds,
            tokens,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train / validation / test splits encoded with training-only vocabularies.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: Vec<FieldSchema>,
    pub vocabs: Vec<Vocab>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl PreparedData {
    /// Encodes a raw table. Vocabularies and numeric bucket boundaries are
    /// computed on the training partition only.
    pub fn from_raw(raw: &RawTable, split: &SplitSpec, sidecar: Option<&SchemaSidecar>) -> Result<Self> {
        let [tr, va, te] = split.partition(raw.len())?;
        let mut schema = Vec::with_capacity(raw.names.len());
        let mut vocabs = Vec::with_capacity(raw.names.len());
        let mut encoded: Vec<Vec<u32>> = Vec::with_capacity(raw.names.len());
        for (f, name) in raw.names.iter().enumerate() {
            let over = sidecar.and_then(|s| s.get(name));
            let kind = over.and_then(|o| o.kind).unwrap_or(raw.kinds[f]);
            let column: Vec<String> = match kind {
                FieldKind::Categorical => raw.tokens[f].clone(),
                FieldKind::Numerical => {
                    let transform = over.and_then(|o| o.transform).unwrap_or_default();
                    numeric_tokens(&raw.tokens[f], &tr, transform, over.and_then(|o| o.buckets))?
                }
            };
            let mut field = FieldSchema::new(name.clone(), kind, 0);
            let vocab = build_vocab(tr.iter().map(|&i| &column[i]), &mut field)?;
            encoded.push(column.iter().map(|t| vocab.encode(t)).collect());
            schema.push(field);
            vocabs.push(vocab);
        }
        let m = schema.len();
        let labels = &raw.labels;
        let make = |rows: &[usize]| -> Result<Dataset> {
            let mut feats = Vec::with_capacity(rows.len() * m);
            for &i in rows {
                feats.extend(encoded.iter().map(|col| col[i]));
            }
            Dataset::new(schema.clone(), feats, rows.iter().map(|&i| labels[i]).collect())
        };
        Ok(Self {
            train: make(&tr)?,
            val: make(&va)?,
            test: make(&te)?,
            schema,
            vocabs,
        })
    }

    pub fn load(
        path: &Path,
        delimiter: u8,
        split: &SplitSpec,
        sidecar: Option<&SchemaSidecar>,
    ) -> Result<Self> {
        let raw = RawTable::read(path, delimiter)?;
        Self::from_raw(&raw, split, sidecar)
    }

    /// Builds splits from an already encoded dataset.
    pub fn from_dataset(ds: &Dataset, split_spec: &SplitSpec) -> Result<Self> {
        let (train, val, test) = split(ds, split_spec)?;
        Ok(Self {
            schema: ds.schema().to_vec(),
            vocabs: Vec::new(),
            train,
            val,
            test,
        })
    }

    /// Restricts every split to one field.
    pub fn project(&self, field: usize) -> Result<Self> {
        Ok(Self {
            schema: vec![self.schema[field].clone()],
            vocabs: self.vocabs.get(field).cloned().into_iter().collect(),
            train: self.train.project(field)?,
            val: self.val.project(field)?,
            test: self.test.project(field)?,
        })
    }
}

const MISSING_TOKEN: &str = "<missing>";

fn numeric_tokens(
    column: &[String],
    train_rows: &[usize],
    transform: NumericTransform,
    buckets: Option<usize>,
) -> Result<Vec<String>> {
    let parse = |row: usize, s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        let v: f64 = s.parse().map_err(|_| Error::Ingestion {
            row,
            detail: format!("`{s}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Ingestion {
                row,
                detail: format!("non-finite numeric value {v}"),
            });
        }
        Ok(Some(v))
    };
    let values = column
        .iter()
        .enumerate()
        .map(|(i, s)| parse(i, s))
        .collect::<Result<Vec<_>>>()?;
    match transform {
        NumericTransform::Criteo => values
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                None => Ok(MISSING_TOKEN.to_string()),
                Some(v) => criteo_numeric_transform(*v, i).map(|t| t.to_string()),
            })
            .collect(),
        NumericTransform::Quantile => {
            let k = buckets.unwrap_or(10).max(1);
            let mut train_vals: Vec<f64> = train_rows.iter().filter_map(|&i| values[i]).collect();
            train_vals.sort_by(f64::total_cmp);
            let bounds: Vec<f64> = if train_vals.is_empty() {
                Vec::new()
            } else {
                (1..k)
                    .map(|q| train_vals[(q * train_vals.len() / k).min(train_vals.len() - 1)])
                    .collect()
            };
            Ok(values
                .iter()
                .map(|v| match v {
                    None => MISSING_TOKEN.to_string(),
                    Some(v) => format!("q{}", bounds.partition_point(|b| b <= v)),
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn criteo_transform_examples() {
        assert_eq!(criteo_numeric_transform(2.0, 0).unwrap(), 2);
        assert_eq!(criteo_numeric_transform(100.0, 0).unwrap(), 21);
        assert_eq!(criteo_numeric_transform(std::f64::consts::E.powi(2), 0).unwrap(), 4);
        assert_eq!(criteo_numeric_transform(7.39, 0).unwrap(), 4);
        assert_eq!(criteo_numeric_transform(1.5, 0).unwrap(), 1);
        assert_eq!(criteo_numeric_transform(-0.5, 0).unwrap(), -1);
        let err = criteo_numeric_transform(f64::NAN, 17).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 17, .. }));
    }

    #[test]
    fn vocab_first_appearance_and_oov() {
        let mut f = FieldSchema::categorical("x", 0);
        let v = build_vocab(["a", "b", "a"], &mut f).unwrap();
        assert_eq!(v.encode("a"), 1);
        assert_eq!(v.encode("b"), 2);
        assert_eq!(f.cardinality, 3);
        assert_eq!(v.encode("zzz"), OOV_INDEX);
        assert_eq!(v.decode(0), None);

        let toks: Vec<String> = (0..1000).map(|i| format!("t{i}")).collect();
        build_vocab(&toks, &mut f).unwrap();
        assert_eq!(f.cardinality, 1001);

        let empty: [&str; 0] = [];
        assert!(matches!(build_vocab(empty, &mut f), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn vocab_round_trip(tokens in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let mut f = FieldSchema::categorical("x", 0);
            let v = build_vocab(&tokens, &mut f).unwrap();
            for t in &tokens {
                prop_assert_eq!(v.decode(v.encode(t)), Some(t.as_str()));
            }
            let rebuilt = Vocab::from_tokens(v.tokens().to_vec());
            for t in &tokens {
                prop_assert_eq!(rebuilt.encode(t), v.encode(t));
            }
        }

        #[test]
        fn partition_is_exhaustive_and_disjoint(n in 3usize..500, seed in 0u64..1000) {
            let spec = SplitSpec::with_seed(seed);
            if let Ok([a, b, c]) = spec.partition(n) {
                prop_assert_eq!(a.len() + b.len() + c.len(), n);
                let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }

    fn toy_dataset(n: usize) -> Dataset {
        let schema = vec![FieldSchema::categorical("a", 5)];
        let feats = (0..n).map(|i| (i % 4 + 1) as u32).collect();
        Dataset::new(schema, feats, (0..n).map(|i| (i % 2) as u8).collect()).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy_dataset(10);
        let spec = SplitSpec::default();
        let (a, b, c) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a2, b2, c2) = split(&ds, &spec).unwrap();
        assert_eq!((a, b, c), (a2, b2, c2));
        assert!(split(&toy_dataset(3), &SplitSpec { train: 0.98, validation: 0.01, test: 0.01, seed: 0 }).is_err());
        let bad = SplitSpec { train: 0.5, validation: 0.1, test: 0.1, seed: 0 };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn batcher_sizes_and_determinism() {
        let mut b = Batcher::new(5, 2, 3).unwrap();
        let sizes: Vec<usize> = (0..6).map(|_| b.next_batch().len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 2, 2, 1]);
        assert_eq!(b.epoch(), 2);

        let run = || {
            let mut b = Batcher::new(7, 3, 42).unwrap();
            (0..6).map(|_| b.next_batch()).collect::<Vec<_>>()
        };
        let seq = run();
        assert_eq!(seq, run());
        // each epoch covers every row exactly once
        let mut first: Vec<usize> = seq[..3].concat();
        first.sort_unstable();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        assert!(matches!(Batcher::new(5, 0, 0), Err(Error::Config(_))));
        assert_eq!(Batcher::new(4000, 2000, 0).unwrap().batches_per_epoch(), 2);
    }

    #[test]
    fn dataset_validation() {
        let schema = vec![FieldSchema::categorical("a", 3)];
        assert!(matches!(Dataset::new(schema.clone(), vec![3], vec![0]), Err(Error::Index(_))));
        assert!(matches!(Dataset::new(schema.clone(), vec![1], vec![2]), Err(Error::Label(_))));
        assert!(Dataset::new(vec![FieldSchema::categorical("a", 1)], vec![0], vec![0]).is_err());
    }

    const CSV: &str = "label,user:categorical,count:numerical\n\
1,u1,100\n0,u2,1.5\n1,u1,\n0,u3,7.39\n1,u2,100\n0,u4,3\n1,u1,2\n0,u2,50\n1,u5,9\n0,u1,1000\n";

    #[test]
    fn raw_ingestion_and_training_only_vocab() {
        let raw = RawTable::from_reader(CSV.as_bytes(), b',').unwrap();
        assert_eq!(raw.names, vec!["user", "count"]);
        assert_eq!(raw.kinds, vec![FieldKind::Categorical, FieldKind::Numerical]);
        let spec = SplitSpec::with_seed(1);
        let prep = PreparedData::from_raw(&raw, &spec, None).unwrap();
        let [tr, _, _] = spec.partition(raw.len()).unwrap();
        let train_users: std::collections::HashSet<&str> =
            tr.iter().map(|&i| raw.tokens[0][i].as_str()).collect();
        assert_eq!(prep.schema[0].cardinality, train_users.len() + 1);
        assert_eq!(prep.train.len() + prep.val.len() + prep.test.len(), raw.len());
    }

    #[test]
    fn raw_ingestion_errors() {
        let bad_label = "label,a:categorical\n2,x\n";
        assert!(matches!(RawTable::from_reader(bad_label.as_bytes(), b','), Err(Error::Label(_))));
        let bad_header = "label,a\n1,x\n";
        assert!(matches!(RawTable::from_reader(bad_header.as_bytes(), b','), Err(Error::Schema(_))));
        let bad_num = "label,a:numerical\n1,inf\n0,1\n1,2\n0,3\n1,4\n0,5\n1,6\n0,7\n1,8\n0,9\n";
        let raw = RawTable::from_reader(bad_num.as_bytes(), b',').unwrap();
        let err = PreparedData::from_raw(&raw, &SplitSpec::default(), None).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 0, .. }));
    }

    #[test]
    fn sidecar_quantile_bucketing() {
        let raw = RawTable::from_reader(CSV.as_bytes(), b',').unwrap();
        let sidecar: SchemaSidecar = toml::from_str(
            "[[field]]\nname = \"count\"\ntransform = \"quantile\"\nbuckets = 2\n",
        )
        .unwrap();
        let prep = PreparedData::from_raw(&raw, &SplitSpec::with_seed(1), Some(&sidecar)).unwrap();
        // two buckets plus possibly the missing token, plus OOV
        assert!(prep.schema[1].cardinality <= 4);
        let bad: std::result::Result<SchemaSidecar, _> = toml::from_str("[[field]]\nname = \"x\"\ncolour = 1\n");
        assert!(bad.is_err());
    }
}
