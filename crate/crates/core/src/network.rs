//! Full model graphs for the search stage (soft mixture over candidates) and
//! the retrain stage (one table per field at its derived dimension).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, Graph, ParamGroup, ParamStore, Var};
use crate::data::{Batch, FieldSchema};
use crate::embedding::{init_embeddings, CandidateDims, EmbeddingStore, Layout};
use crate::error::{Error, Result};
use crate::models::{Head, MlpConfig, ModelKind};
use crate::search::{sample_gumbel_vec, ArchWeights, DerivedArchitecture};
use crate::unify::{UnifyMethod, UnifyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Search,
    Retrain,
}

/// Everything needed to rebuild a network's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub stage: Stage,
    pub kind: ModelKind,
    pub layout: Layout,
    pub unify: UnifyMethod,
    pub mlp: MlpConfig,
    #[serde(default)]
    pub straight_through: bool,
    pub schema: Vec<FieldSchema>,
    pub candidates: Vec<CandidateDims>,
    /// Chosen candidate index per field (retrain stage only).
    #[serde(default)]
    pub chosen: Vec<usize>,
}

impl ModelSpec {
    /// Common width the candidates are unified to.
    pub fn unified_width(&self) -> usize {
        self.candidates.iter().map(CandidateDims::max).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema.is_empty() {
            return Err(Error::Config("model has no fields".into()));
        }
        if self.candidates.len() != self.schema.len() {
            return Err(Error::Config(format!(
                "{} candidate sets for {} fields",
                self.candidates.len(),
                self.schema.len()
            )));
        }
        if self.stage == Stage::Retrain {
            if self.chosen.len() != self.schema.len() {
                return Err(Error::Config(format!(
                    "{} chosen dims for {} fields",
                    self.chosen.len(),
                    self.schema.len()
                )));
            }
            if let Some((i, _)) = self
                .chosen
                .iter()
                .zip(&self.candidates)
                .enumerate()
                .find(|(_, (&k, d))| k >= d.len())
            {
                return Err(Error::Index(format!("field {i}: chosen candidate out of range")));
            }
        }
        Ok(())
    }

    pub fn chosen_dims(&self) -> Vec<usize> {
        self.chosen
            .iter()
            .zip(&self.candidates)
            .map(|(&k, d)| d.dim(k))
            .collect()
    }
}

/// How per-field selection weights are formed in a search-stage forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Fresh Gumbel noise per field at temperature `tau`.
    Gumbel { tau: f64 },
    /// Noise-free `α_m`.
    Alpha,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    pub params: ParamStore,
    embeddings: EmbeddingStore,
    unify: Option<UnifyParams>,
    arch: Option<ArchWeights>,
    head: Head,
}

impl Network {
    /// Builds and initializes a network. All draws come from `rng` in a fixed order.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let names: Vec<String> = spec.schema.iter().map(|f| f.name.clone()).collect();
        let target = spec.unified_width();
        let m = spec.schema.len();

        let (embeddings, unify, arch, deep_width) = match spec.stage {
            Stage::Search => {
                let emb = EmbeddingStore::new(&spec.schema, &spec.candidates, spec.layout, &mut params)?;
                init_embeddings(&emb, &mut params, rng);
                let unify = UnifyParams::new(&names, &spec.candidates, target, spec.unify, &mut params, rng)?;
                let arch = ArchWeights::new(&names, &spec.candidates, &mut params);
                (emb, Some(unify), Some(arch), m * target)
            }
            Stage::Retrain => {
                let single: Vec<CandidateDims> = spec
                    .chosen_dims()
                    .into_iter()
                    .map(|d| CandidateDims::new(vec![d]))
                    .collect::<Result<_>>()?;
                let emb = EmbeddingStore::new(&spec.schema, &single, Layout::Separate, &mut params)?;
                init_embeddings(&emb, &mut params, rng);
                if spec.kind.needs_interaction() {
                    let unify = UnifyParams::new(&names, &single, target, spec.unify, &mut params, rng)?;
                    (emb, Some(unify), None, m * target)
                } else {
                    let width = single.iter().map(CandidateDims::max).sum();
                    (emb, None, None, width)
                }
            }
        };
        let head = Head::new(spec.kind, &spec.schema, deep_width, &spec.mlp, &mut params, rng)?;
        Ok(Self {
            spec,
            params,
            embeddings,
            unify,
            arch,
            head,
        })
    }

    /// Search-stage network over every candidate.
    pub fn for_search<R: Rng + ?Sized>(
        schema: &[FieldSchema],
        candidates: Vec<CandidateDims>,
        kind: ModelKind,
        layout: Layout,
        unify: UnifyMethod,
        mlp: MlpConfig,
        straight_through: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            ModelSpec {
                stage: Stage::Search,
                kind,
                layout,
                unify,
                mlp,
                straight_through,
                schema: schema.to_vec(),
                candidates,
                chosen: Vec::new(),
            },
            rng,
        )
    }

    /// Retrain-stage network for a derived architecture.
    pub fn for_retrain<R: Rng + ?Sized>(
        arch: &DerivedArchitecture,
        schema: &[FieldSchema],
        kind: ModelKind,
        unify: UnifyMethod,
        mlp: MlpConfig,
        rng: &mut R,
    ) -> Result<Self> {
        arch.check_schema(schema)?;
        let candidates = arch
            .fields
            .iter()
            .map(|f| CandidateDims::new(f.candidates.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            ModelSpec {
                stage: Stage::Retrain,
                kind,
                layout: Layout::Separate,
                unify,
                mlp,
                straight_through: false,
                schema: schema.to_vec(),
                candidates,
                chosen: arch.indices(),
            },
            rng,
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn stage(&self) -> Stage {
        self.spec.stage
    }

    pub fn embeddings(&self) -> &EmbeddingStore {
        &self.embeddings
    }

    pub fn unify(&self) -> Option<&UnifyParams> {
        self.unify.as_ref()
    }

    pub fn arch(&self) -> Option<&ArchWeights> {
        self.arch.as_ref()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn num_fields(&self) -> usize {
        self.spec.schema.len()
    }

    /// Per-field `α_m` (search stage only).
    pub fn alpha(&self) -> Option<Vec<Vec<f64>>> {
        self.arch.as_ref().map(|a| a.alpha(&self.params))
    }

    /// Trainable parameters outside the architecture logits.
    pub fn weight_count(&self) -> usize {
        self.params.count(ParamGroup::is_model_weight)
    }

    /// Pre-sigmoid logits (`B x 1`) for a batch.
    ///
    /// Gumbel noise is drawn once per field per call, in ascending field
    /// order, from `noise_rng`; dropout masks come from `dropout_rng`.
    pub fn forward<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        batch: &Batch,
        selection: Selection,
        training: bool,
        noise_rng: &mut R1,
        dropout_rng: &mut R2,
    ) -> Result<Var> {
        if batch.columns.len() != self.num_fields() {
            return Err(Error::Config(format!(
                "batch has {} fields, model has {}",
                batch.columns.len(),
                self.num_fields()
            )));
        }
        let mut fields = Vec::with_capacity(self.num_fields());
        match self.spec.stage {
            Stage::Search => {
                let unify = self.unify.as_ref().expect("search network unifies");
                let arch = self.arch.as_ref().expect("search network has logits");
                for (m, col) in batch.columns.iter().enumerate() {
                    let n_cand = self.spec.candidates[m].len();
                    let mut cands = Vec::with_capacity(n_cand);
                    for n in 0..n_cand {
                        let x = self.embeddings.lookup_batch(graph, m, col, n)?;
                        cands.push(unify.unify(graph, x, m, n, BatchNormMode::BatchStats)?);
                    }
                    let p = match selection {
                        Selection::Gumbel { tau } => {
                            let g = sample_gumbel_vec(noise_rng, n_cand);
                            arch.selection(graph, m, Some(&g), tau, self.spec.straight_through)?
                        }
                        Selection::Alpha => arch.selection(graph, m, None, 1.0, false)?,
                    };
                    fields.push(graph.mix(p, &cands)?);
                }
            }
            Stage::Retrain => {
                for (m, col) in batch.columns.iter().enumerate() {
                    let x = self.embeddings.lookup_batch(graph, m, col, 0)?;
                    fields.push(match &self.unify {
                        Some(u) => u.unify(graph, x, m, 0, BatchNormMode::Disabled)?,
                        None => x,
                    });
                }
            }
        }
        self.head.logits(graph, &fields, &batch.columns, training, dropout_rng)
    }
}
