//! On-disk model: `manifest.toml` describes structure and parameter layout,
//! `params.bin` holds every parameter as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGroup;
use crate::data::read_to_string;
use crate::error::{Error, Result};
use crate::network::{ModelSpec, Network};

pub const FORMAT: &str = "autodim-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";
pub const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in f64 values.
    pub offset: usize,
    pub len: usize,
}

/// Embedding tables of one field, for readers that only want embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub field: String,
    pub cardinality: usize,
    pub dims: Vec<usize>,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(rename = "embedding")]
    pub embeddings: Vec<EmbeddingEntry>,
    #[serde(rename = "param")]
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn of(net: &Network, seed: u64) -> Self {
        let mut offset = 0;
        let params = net
            .params
            .iter()
            .map(|(_, p)| {
                let e = ParamEntry {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.tensor.shape().to_vec(),
                    offset,
                    len: p.tensor.len(),
                };
                offset += e.len;
                e
            })
            .collect();
        let embeddings = net
            .embeddings()
            .fields()
            .iter()
            .map(|f| EmbeddingEntry {
                field: f.name.clone(),
                cardinality: f.cardinality,
                dims: f.dims.as_slice().to_vec(),
                tables: f.tables().iter().map(|&id| net.params.param(id).name.clone()).collect(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            model: net.spec().clone(),
            embeddings,
            params,
        }
    }
}

/// Writes `dir/manifest.toml` and `dir/params.bin`, creating `dir`.
pub fn save(net: &Network, seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest::of(net, seed);
    let mut blob = Vec::with_capacity(manifest.params.iter().map(|p| p.len * 8).sum());
    for (_, p) in net.params.iter() {
        for v in p.tensor.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST), toml::to_string(&manifest)?)?;
    fs::write(dir.join(PARAMS), blob)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = toml::from_str(&read_to_string(&dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Rebuilds the network described by the manifest and fills in its values.
pub fn load(dir: &Path) -> Result<(Network, Manifest)> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(PARAMS);
    let blob = fs::read(&path).map_err(|source| Error::MissingFile {
        path: path.clone(),
        source,
    })?;
    let mut net = Network::new(manifest.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    if net.params.len() != manifest.params.len() {
        return Err(Error::Parse(format!(
            "checkpoint lists {} parameters, model has {}",
            manifest.params.len(),
            net.params.len()
        )));
    }
    for e in &manifest.params {
        let id = net
            .params
            .find(&e.name)
            .ok_or_else(|| Error::Parse(format!("unknown parameter `{}`", e.name)))?;
        let t = net.params.get_mut(id);
        if t.shape() != e.shape.as_slice() || e.len != t.len() {
            return Err(Error::Parse(format!("parameter `{}` has shape {:?}, expected {:?}", e.name, e.shape, t.shape())));
        }
        let bytes = blob
            .get(e.offset * 8..(e.offset + e.len) * 8)
            .ok_or_else(|| Error::Parse(format!("{PARAMS} is too short for `{}`", e.name)))?;
        for (v, chunk) in t.values_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldSchema;
    use crate::embedding::{CandidateDims, Layout};
    use crate::models::{MlpConfig, ModelKind};
    use crate::unify::UnifyMethod;

    fn net(seed: u64) -> Network {
        let schema = vec![FieldSchema::categorical("a", 5), FieldSchema::categorical("b", 3)];
        let dims = vec![CandidateDims::new(vec![2, 4]).unwrap(); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::for_search(&schema, dims, ModelKind::DeepFm, Layout::WeightSharing, UnifyMethod::Linear, MlpConfig::default(), false, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = net(11);
        save(&a, 11, dir.path()).unwrap();
        let (b, m) = load(dir.path()).unwrap();
        assert_eq!(a.params.snapshot(|_| true), b.params.snapshot(|_| true));
        assert_eq!(b.spec(), a.spec());
        assert_eq!(m.seed, 11);
        assert_eq!(m.embeddings.len(), 2);
        assert_eq!(m.embeddings[0].tables, vec!["emb/a/4".to_string()]);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path()), Err(Error::MissingFile { .. })));
        save(&net(1), 1, dir.path()).unwrap();
        let blob = fs::read(dir.path().join(PARAMS)).unwrap();
        fs::write(dir.path().join(PARAMS), &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Parse(_))));
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        fs::write(dir.path().join(MANIFEST), text.replace("version = 1", "version = 9")).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Parse(_))));
    }
}
