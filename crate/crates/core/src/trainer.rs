//! Two-stage pipeline: pretrain, alternating search, derivation, retrain.
//! Also the comparison baselines, the single-field probe and the seed
//! stability study.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, ParamGroup, ParamStore};
use crate::data::{Batch, Batcher, Dataset, FieldSchema, PreparedData};
use crate::embedding::{CandidateDims, Layout};
use crate::error::{Error, Result};
use crate::metrics::{auc, mean_logloss, pearson, EvalReport};
use crate::models::{probability, MlpConfig, ModelKind};
use crate::network::{Network, Selection, Stage};
use crate::optim::{Optimizer, OptimizerKind};
use crate::search::{derive, DerivedArchitecture, TemperatureSchedule};
use crate::unify::UnifyMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub seed: u64,
    pub lr_w: f64,
    pub lr_alpha: f64,
    pub batch_size: usize,
    /// Architecture-update period: θ is stepped when `t % f == 0`.
    #[serde(alias = "f")]
    pub arch_update_period: u64,
    pub pretrain_epochs: usize,
    pub search_epochs: usize,
    pub retrain_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub layout: Layout,
    pub unify: UnifyMethod,
    pub model: ModelKind,
    pub candidate_dims: CandidateDims,
    /// Per-field candidate sets, keyed by field name.
    pub field_candidates: BTreeMap<String, CandidateDims>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub straight_through: bool,
    pub ras_trials: usize,
    pub temperature_floor: f64,
    pub temperature_anneal_steps: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let mlp = MlpConfig::default();
        let tau = TemperatureSchedule::default();
        Self {
            seed: 42,
            lr_w: 0.001,
            lr_alpha: 0.001,
            batch_size: 2000,
            arch_update_period: 10,
            pretrain_epochs: 1,
            search_epochs: 10,
            retrain_epochs: 10,
            patience: 3,
            layout: Layout::WeightSharing,
            unify: UnifyMethod::ZeroPad,
            model: ModelKind::WideDeep,
            candidate_dims: CandidateDims::ctr_default(),
            field_candidates: BTreeMap::new(),
            hidden: mlp.hidden,
            activation: mlp.activation,
            dropout: mlp.dropout,
            optimizer: OptimizerKind::Adam,
            straight_through: false,
            ras_trials: 8,
            temperature_floor: tau.floor,
            temperature_anneal_steps: tau.anneal_steps,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.arch_update_period < 1 {
            return bad("arch_update_period must be >= 1".into());
        }
        if !(self.lr_w > 0.0) || !(self.lr_alpha > 0.0) {
            return bad(format!("learning rates must be > 0 (lr_w={}, lr_alpha={})", self.lr_w, self.lr_alpha));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.ras_trials == 0 {
            return bad("ras_trials must be >= 1".into());
        }
        if self.temperature_anneal_steps == 0 || !(self.temperature_floor > 0.0) {
            return bad("temperature schedule needs anneal_steps >= 1 and floor > 0".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule {
            floor: self.temperature_floor,
            anneal_steps: self.temperature_anneal_steps,
        }
    }

    /// Candidate set for every field of `schema`, applying per-field overrides.
    pub fn candidates_for(&self, schema: &[FieldSchema]) -> Result<Vec<CandidateDims>> {
        if let Some(name) = self
            .field_candidates
            .keys()
            .find(|k| !schema.iter().any(|f| &f.name == *k))
        {
            return Err(Error::Schema(format!("candidate override for unknown field `{name}`")));
        }
        Ok(schema
            .iter()
            .map(|f| self.field_candidates.get(&f.name).unwrap_or(&self.candidate_dims).clone())
            .collect())
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    SearchInit = 1,
    SearchTrainBatches,
    SearchValBatches,
    Noise,
    SearchDropout,
    RetrainInit,
    RetrainBatches,
    RetrainDropout,
    Ras,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn check_finite(loss: f64, step: u64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("{what} loss is {loss}"),
        })
    }
}

/// Draws a batch of at least two rows (batch statistics need two).
fn draw(batcher: &mut Batcher, ds: &Dataset) -> Batch {
    let mut idx = batcher.next_batch();
    while idx.len() < 2 {
        idx.extend(batcher.next_batch());
    }
    ds.batch(&idx)
}

/// Row ranges of at most `size` rows; a one-row tail joins the previous chunk.
fn chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s < 2) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

fn hash_group(params: &ParamStore, select: impl Fn(ParamGroup) -> bool) -> u64 {
    let mut h = DefaultHasher::new();
    params.snapshot(select).hash(&mut h);
    h.finish()
}

/// Click probabilities for every row of `ds` (eval mode, noise-free α).
pub fn predict(net: &Network, ds: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len());
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    for (s, e) in chunks(ds.len(), batch_size.max(2)) {
        let idx: Vec<usize> = (s..e).collect();
        let batch = ds.batch(&idx);
        let mut g = Graph::new(&net.params);
        let z = net.forward(&mut g, &batch, Selection::Alpha, false, &mut unused.clone(), &mut unused)?;
        out.extend(g.value(z).iter().map(|&v| probability(v)));
    }
    Ok(out)
}

/// Mean logloss on `ds`.
pub fn eval_logloss(net: &Network, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let probs = predict(net, ds, batch_size)?;
    let labels: Vec<f64> = ds.labels().iter().map(|&y| f64::from(y)).collect();
    mean_logloss(&probs, &labels)
}

/// AUC and logloss on `ds`; `params` is the embedding parameter count to report.
pub fn evaluate(net: &Network, ds: &Dataset, batch_size: usize, params: u64) -> Result<EvalReport> {
    let probs = predict(net, ds, batch_size)?;
    let labels: Vec<f64> = ds.labels().iter().map(|&y| f64::from(y)).collect();
    Ok(EvalReport {
        auc: auc(&probs, &labels)?,
        mean_logloss: mean_logloss(&probs, &labels)?,
        params,
        n_examples: ds.len(),
    })
}

/// Per-step bookkeeping returned by [`Searcher::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub t: u64,
    pub tau: f64,
    pub train_loss: f64,
    /// Validation loss of the α-step, when one happened.
    pub val_loss: Option<f64>,
}

/// Bit-level evidence that the two updates touch disjoint parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateAudit {
    pub alpha_steps: u64,
    pub weight_steps: u64,
    /// Steps at which an α-update changed a model weight.
    pub weights_changed_by_alpha: Vec<u64>,
    /// Steps at which a weight update changed θ.
    pub theta_changed_by_weights: Vec<u64>,
}

impl UpdateAudit {
    pub fn is_clean(&self) -> bool {
        self.weights_changed_by_alpha.is_empty() && self.theta_changed_by_weights.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchVariant {
    /// θ on validation batches every `f` steps, W on training batches.
    Alternating,
    /// θ and W from the same training-batch loss.
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogRow {
    pub phase: Phase,
    pub epoch: usize,
    /// Search steps taken so far.
    pub step: u64,
    pub tau: f64,
    pub train_logloss: f64,
    pub val_logloss: f64,
    pub alpha: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub fields: Vec<String>,
    pub candidates: Vec<CandidateDims>,
    pub rows: Vec<SearchLogRow>,
}

impl SearchLog {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["phase", "epoch", "step", "tau", "train_logloss", "val_logloss"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (name, dims) in self.fields.iter().zip(&self.candidates) {
            h.extend(dims.as_slice().iter().map(|d| format!("alpha/{name}/{d}")));
        }
        h
    }

    /// One row per epoch, α columns flattened as `alpha/<field>/<dim>`.
    pub fn write_delimited<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        out.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                phase_name(r.phase).to_string(),
                r.epoch.to_string(),
                r.step.to_string(),
                r.tau.to_string(),
                r.train_logloss.to_string(),
                r.val_logloss.to_string(),
            ];
            rec.extend(r.alpha.iter().flatten().map(f64::to_string));
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format `epoch,metric,value` for plotting; search epochs only.
    pub fn write_long<W: Write>(&self, w: W) -> Result<()> {
        let header = self.header();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "metric", "value"])?;
        for r in self.rows.iter().filter(|r| r.phase == Phase::Search) {
            let e = r.epoch.to_string();
            out.write_record([e.as_str(), "tau", &r.tau.to_string()])?;
            out.write_record([e.as_str(), "train_logloss", &r.train_logloss.to_string()])?;
            out.write_record([e.as_str(), "val_logloss", &r.val_logloss.to_string()])?;
            for (name, v) in header[6..].iter().zip(r.alpha.iter().flatten()) {
                out.write_record([e.as_str(), name, &v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pretrain => "pretrain",
        Phase::Search => "search",
    }
}

/// Stateful search over one dataset.
pub struct Searcher<'d> {
    cfg: SearchConfig,
    schedule: TemperatureSchedule,
    data: &'d PreparedData,
    net: Network,
    opt_w: Optimizer,
    opt_a: Optimizer,
    train_batches: Batcher,
    val_batches: Batcher,
    noise_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    t: u64,
    alpha_updates: u64,
    val_batches_used: u64,
    audit: Option<UpdateAudit>,
}

impl<'d> Searcher<'d> {
    pub fn new(data: &'d PreparedData, cfg: &SearchConfig) -> Result<Self> {
        cfg.validate()?;
        if data.train.len() < 2 || data.val.len() < 2 {
            return Err(Error::Config("search needs at least two training and two validation rows".into()));
        }
        let candidates = cfg.candidates_for(&data.schema)?;
        let net = Network::for_search(
            &data.schema,
            candidates,
            cfg.model,
            cfg.layout,
            cfg.unify,
            cfg.mlp(),
            cfg.straight_through,
            &mut stream(cfg.seed, Stream::SearchInit),
        )?;
        let train_batches = Batcher::new(
            data.train.len(),
            cfg.batch_size,
            stream(cfg.seed, Stream::SearchTrainBatches).next_u64(),
        )?;
        let val_batches = Batcher::new(
            data.val.len(),
            cfg.batch_size,
            stream(cfg.seed, Stream::SearchValBatches).next_u64(),
        )?;
        Ok(Self {
            schedule: cfg.schedule(),
            cfg: cfg.clone(),
            data,
            net,
            opt_w: Optimizer::new(cfg.optimizer, cfg.lr_w)?,
            opt_a: Optimizer::new(cfg.optimizer, cfg.lr_alpha)?,
            train_batches,
            val_batches,
            noise_rng: stream(cfg.seed, Stream::Noise),
            dropout_rng: stream(cfg.seed, Stream::SearchDropout),
            t: 0,
            alpha_updates: 0,
            val_batches_used: 0,
            audit: None,
        })
    }

    /// Records parameter hashes around every update from now on.
    pub fn enable_audit(&mut self) {
        self.audit = Some(UpdateAudit::default());
    }

    pub fn audit(&self) -> Option<&UpdateAudit> {
        self.audit.as_ref()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn alpha_updates(&self) -> u64 {
        self.alpha_updates
    }

    pub fn val_batches_used(&self) -> u64 {
        self.val_batches_used
    }

    pub fn tau(&self) -> f64 {
        self.schedule.at(self.t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_batches.batches_per_epoch()
    }

    /// Forward + backward on one batch, leaving gradients accumulated.
    fn loss_and_grads(&mut self, batch: &Batch, tau: f64, what: &str) -> Result<f64> {
        let grads = {
            let mut g = Graph::new(&self.net.params);
            let z = self.net.forward(
                &mut g,
                batch,
                Selection::Gumbel { tau },
                true,
                &mut self.noise_rng,
                &mut self.dropout_rng,
            )?;
            let loss = g.bce_with_logits(z, &batch.labels)?;
            let value = check_finite(g.scalar(loss), self.t, what)?;
            (value, g.backward(loss)?)
        };
        self.net.params.accumulate(&grads.1);
        Ok(grads.0)
    }

    /// One pass over the training split with θ frozen at uniform α and τ = 1.
    pub fn pretrain_epoch(&mut self) -> Result<f64> {
        let n = self.steps_per_epoch();
        let mut total = 0.0;
        for _ in 0..n {
            let batch = draw(&mut self.train_batches, &self.data.train);
            self.net.params.zero_grads();
            total += self.loss_and_grads(&batch, 1.0, "pretrain")?;
            self.opt_w.step(&mut self.net.params, ParamGroup::is_model_weight);
        }
        self.net.params.zero_grads();
        Ok(total / n as f64)
    }

    /// One alternating step: every `f` steps update θ alone on a validation
    /// batch, then update W alone on a training batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let tau = self.schedule.at(self.t);
        let mut val_loss = None;
        if self.t.is_multiple_of(self.cfg.arch_update_period) {
            let batch = draw(&mut self.val_batches, &self.data.val);
            self.val_batches_used += 1;
            self.net.params.zero_grads();
            let before = self.audit.as_ref().map(|_| hash_group(&self.net.params, ParamGroup::is_model_weight));
            val_loss = Some(self.loss_and_grads(&batch, tau, "validation")?);
            self.opt_a.step(&mut self.net.params, |g| g == ParamGroup::Arch);
            self.alpha_updates += 1;
            if let (Some(audit), Some(before)) = (self.audit.as_mut(), before) {
                audit.alpha_steps += 1;
                if hash_group(&self.net.params, ParamGroup::is_model_weight) != before {
                    audit.weights_changed_by_alpha.push(self.t);
                }
            }
        }
        self.net.params.zero_grads();
        let batch = draw(&mut self.train_batches, &self.data.train);
        let before = self.audit.as_ref().map(|_| hash_group(&self.net.params, |g| g == ParamGroup::Arch));
        let train_loss = self.loss_and_grads(&batch, tau, "training")?;
        self.opt_w.step(&mut self.net.params, ParamGroup::is_model_weight);
        self.net.params.zero_grads();
        if let (Some(audit), Some(before)) = (self.audit.as_mut(), before) {
            audit.weight_steps += 1;
            if hash_group(&self.net.params, |g| g == ParamGroup::Arch) != before {
                audit.theta_changed_by_weights.push(self.t);
            }
        }
        let report = StepReport {
            t: self.t,
            tau,
            train_loss,
            val_loss,
        };
        self.t += 1;
        Ok(report)
    }

    /// Ablation step: θ and W both updated from one training-batch loss.
    pub fn simultaneous_step(&mut self) -> Result<StepReport> {
        let tau = self.schedule.at(self.t);
        self.net.params.zero_grads();
        let batch = draw(&mut self.train_batches, &self.data.train);
        let train_loss = self.loss_and_grads(&batch, tau, "training")?;
        self.opt_w.step(&mut self.net.params, ParamGroup::is_model_weight);
        self.opt_a.step(&mut self.net.params, |g| g == ParamGroup::Arch);
        self.alpha_updates += 1;
        self.net.params.zero_grads();
        let report = StepReport {
            t: self.t,
            tau,
            train_loss,
            val_loss: None,
        };
        self.t += 1;
        Ok(report)
    }

    pub fn alpha(&self) -> Vec<Vec<f64>> {
        self.net.alpha().expect("search network")
    }

    pub fn derive(&self) -> Result<DerivedArchitecture> {
        derive(&self.alpha(), &self.data.schema, &self.net.spec().candidates)
    }

    pub fn val_logloss(&self) -> Result<f64> {
        eval_logloss(&self.net, &self.data.val, self.cfg.batch_size)
    }

    fn log_row(&self, phase: Phase, epoch: usize, train: f64) -> Result<SearchLogRow> {
        Ok(SearchLogRow {
            phase,
            epoch,
            step: self.t,
            tau: if phase == Phase::Pretrain { 1.0 } else { self.tau() },
            train_logloss: train,
            val_logloss: self.val_logloss()?,
            alpha: self.alpha(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub network: Network,
    pub arch: DerivedArchitecture,
    pub log: SearchLog,
    pub steps: u64,
    pub alpha_updates: u64,
    pub val_batches_used: u64,
}

/// Pretrain, then search for up to `search_epochs` epochs with early stopping
/// on noise-free validation logloss, then derive from the final α.
pub fn run_search(data: &PreparedData, cfg: &SearchConfig) -> Result<SearchOutcome> {
    run_search_variant(data, cfg, SearchVariant::Alternating)
}

pub fn run_search_variant(data: &PreparedData, cfg: &SearchConfig, variant: SearchVariant) -> Result<SearchOutcome> {
    let mut s = Searcher::new(data, cfg)?;
    let mut log = SearchLog {
        fields: data.schema.iter().map(|f| f.name.clone()).collect(),
        candidates: s.net.spec().candidates.clone(),
        rows: Vec::new(),
    };
    for epoch in 1..=cfg.pretrain_epochs {
        let train = s.pretrain_epoch()?;
        log.rows.push(s.log_row(Phase::Pretrain, epoch, train)?);
    }
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.search_epochs {
        let n = s.steps_per_epoch();
        let mut total = 0.0;
        for _ in 0..n {
            total += match variant {
                SearchVariant::Alternating => s.step()?,
                SearchVariant::Simultaneous => s.simultaneous_step()?,
            }
            .train_loss;
        }
        let row = s.log_row(Phase::Search, epoch, total / n as f64)?;
        let val = row.val_logloss;
        log.rows.push(row);
        if val < best {
            best = val;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let arch = s.derive()?;
    Ok(SearchOutcome {
        arch,
        log,
        steps: s.t,
        alpha_updates: s.alpha_updates,
        val_batches_used: s.val_batches_used,
        network: s.net,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainEpoch {
    pub epoch: usize,
    pub train_logloss: f64,
    pub val_logloss: f64,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub network: Network,
    pub arch: DerivedArchitecture,
    pub test: EvalReport,
    /// Validation logloss of the restored best epoch.
    pub val_logloss: f64,
    pub best_epoch: usize,
    pub history: Vec<RetrainEpoch>,
}

/// Trains a fresh network at the derived dimensions; keeps the parameters of
/// the epoch with the best validation logloss and reports on the test split.
pub fn retrain(data: &PreparedData, arch: &DerivedArchitecture, cfg: &SearchConfig) -> Result<RetrainOutcome> {
    cfg.validate()?;
    let mut net = Network::for_retrain(
        arch,
        &data.schema,
        cfg.model,
        cfg.unify,
        cfg.mlp(),
        &mut stream(cfg.seed, Stream::RetrainInit),
    )?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_w)?;
    let mut batches = Batcher::new(
        data.train.len(),
        cfg.batch_size,
        stream(cfg.seed, Stream::RetrainBatches).next_u64(),
    )?;
    let mut dropout = stream(cfg.seed, Stream::RetrainDropout);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let steps_per_epoch = batches.batches_per_epoch();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut t = 0u64;
    for epoch in 1..=cfg.retrain_epochs.max(1) {
        let mut total = 0.0;
        for _ in 0..steps_per_epoch {
            let batch = data.train.batch(&batches.next_batch());
            net.params.zero_grads();
            let grads = {
                let mut g = Graph::new(&net.params);
                let z = net.forward(&mut g, &batch, Selection::Alpha, true, &mut unused, &mut dropout)?;
                let loss = g.bce_with_logits(z, &batch.labels)?;
                total += check_finite(g.scalar(loss), t, "retrain")?;
                g.backward(loss)?
            };
            net.params.accumulate(&grads);
            opt.step(&mut net.params, ParamGroup::is_model_weight);
            t += 1;
        }
        net.params.zero_grads();
        let val = eval_logloss(&net, &data.val, cfg.batch_size)?;
        history.push(RetrainEpoch {
            epoch,
            train_logloss: total / steps_per_epoch as f64,
            val_logloss: val,
        });
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, epoch, net.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    let (val_logloss, best_epoch, params) = best.expect("at least one epoch");
    net.params = params;
    let test = evaluate(&net, &data.test, cfg.batch_size, arch.param_count)?;
    Ok(RetrainOutcome {
        network: net,
        arch: arch.clone(),
        test,
        val_logloss,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Fde,
    Ras,
    AutodimS,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fde" => Ok(BaselineMethod::Fde),
            "ras" => Ok(BaselineMethod::Ras),
            "autodim-s" => Ok(BaselineMethod::AutodimS),
            other => Err(Error::Config(format!("unknown baseline `{other}` (fde|ras|autodim-s)"))),
        }
    }
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineMethod::Fde => "fde",
            BaselineMethod::Ras => "ras",
            BaselineMethod::AutodimS => "autodim-s",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub method: BaselineMethod,
    /// The reported run (best by validation logloss for RaS).
    pub best: RetrainOutcome,
    /// Every RaS trial in trial order: (architecture, validation logloss, test report).
    pub trials: Vec<(DerivedArchitecture, f64, EvalReport)>,
    pub search: Option<SearchOutcome>,
}

/// `K` seeded uniformly random assignments.
pub fn ras_assignments(schema: &[FieldSchema], dims: &[CandidateDims], k: usize, seed: u64) -> Result<Vec<DerivedArchitecture>> {
    let mut rng = stream(seed, Stream::Ras);
    (0..k)
        .map(|_| {
            let idx: Vec<usize> = dims.iter().map(|d| rng.random_range(0..d.len())).collect();
            DerivedArchitecture::from_indices(schema, dims, &idx)
        })
        .collect()
}

pub fn run_baseline(method: BaselineMethod, data: &PreparedData, cfg: &SearchConfig) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let dims = cfg.candidates_for(&data.schema)?;
    match method {
        BaselineMethod::Fde => {
            let arch = DerivedArchitecture::full(&data.schema, &dims)?;
            Ok(BaselineOutcome {
                method,
                best: retrain(data, &arch, cfg)?,
                trials: Vec::new(),
                search: None,
            })
        }
        BaselineMethod::Ras => {
            let archs = ras_assignments(&data.schema, &dims, cfg.ras_trials, cfg.seed)?;
            let runs: Vec<RetrainOutcome> = archs
                .par_iter()
                .map(|a| retrain(data, a, cfg))
                .collect::<Result<_>>()?;
            let trials = runs.iter().map(|r| (r.arch.clone(), r.val_logloss, r.test)).collect();
            // first trial wins ties, so the choice does not depend on scheduling
            let best = runs
                .into_iter()
                .reduce(|a, b| if b.val_logloss < a.val_logloss { b } else { a })
                .expect("ras_trials >= 1");
            Ok(BaselineOutcome {
                method,
                best,
                trials,
                search: None,
            })
        }
        BaselineMethod::AutodimS => {
            let search = run_search_variant(data, cfg, SearchVariant::Simultaneous)?;
            Ok(BaselineOutcome {
                method,
                best: retrain(data, &search.arch, cfg)?,
                trials: Vec::new(),
                search: Some(search),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub field: String,
    pub auc: f64,
    pub logloss: f64,
}

/// Trains the configured model on one field at its largest candidate and
/// evaluates it on the test split.
pub fn probe_field(field: usize, data: &PreparedData, cfg: &SearchConfig) -> Result<ProbeResult> {
    if field >= data.schema.len() {
        return Err(Error::Index(format!("field {field} of {}", data.schema.len())));
    }
    let dims = cfg.candidates_for(&data.schema)?;
    let single = data.project(field)?;
    let mut one = cfg.clone();
    one.field_candidates = BTreeMap::new();
    one.candidate_dims = dims[field].clone();
    let arch = DerivedArchitecture::full(&single.schema, &[dims[field].clone()])?;
    let run = retrain(&single, &arch, &one)?;
    Ok(ProbeResult {
        field: data.schema[field].name.clone(),
        auc: run.test.auc,
        logloss: run.test.mean_logloss,
    })
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub seeds: Vec<u64>,
    /// Derived dimension per field, one row per seed.
    pub dims: Vec<Vec<usize>>,
    /// Pairwise Pearson correlation; `None` when a seed derived identical
    /// dimensions for every field.
    pub pearson: Vec<Vec<Option<f64>>>,
}

impl StabilityReport {
    pub fn from_dims(seeds: Vec<u64>, dims: Vec<Vec<usize>>) -> Self {
        let as_f64: Vec<Vec<f64>> = dims.iter().map(|d| d.iter().map(|&v| v as f64).collect()).collect();
        let pearson = as_f64
            .iter()
            .map(|a| as_f64.iter().map(|b| pearson(a, b).ok()).collect())
            .collect();
        Self { seeds, dims, pearson }
    }

    /// Off-diagonal coefficients in row-major order (i < j).
    pub fn pairs(&self) -> Vec<Option<f64>> {
        let n = self.seeds.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.pearson[i][j])
            .collect()
    }
}

/// Runs the search once per seed and correlates the derived dimensions.
pub fn stability(data: &PreparedData, cfg: &SearchConfig, seeds: &[u64]) -> Result<StabilityReport> {
    let dims: Vec<Vec<usize>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            run_search(data, &c).map(|o| o.arch.dims())
        })
        .collect::<Result<_>>()?;
    Ok(StabilityReport::from_dims(seeds.to_vec(), dims))
}

/// Whether the network was built for search or retraining.
pub fn stage_name(net: &Network) -> &'static str {
    match net.stage() {
        Stage::Search => "search",
        Stage::Retrain => "retrain",
    }
}
