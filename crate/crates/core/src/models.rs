//! Prediction heads over per-field embeddings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, sigmoid, Activation, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::unify::xavier_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Fm,
    WideDeep,
    #[serde(rename = "deepfm")]
    DeepFm,
}

impl ModelKind {
    pub fn has_mlp(self) -> bool {
        self != ModelKind::Fm
    }

    /// Heads with pairwise inner products need equal-width embeddings.
    pub fn needs_interaction(self) -> bool {
        self != ModelKind::WideDeep
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(ModelKind::Fm),
            "wide-deep" | "wd" | "w&d" => Ok(ModelKind::WideDeep),
            "deepfm" => Ok(ModelKind::DeepFm),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Fm => "fm",
            ModelKind::WideDeep => "wide-deep",
            ModelKind::DeepFm => "deepfm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            activation: Activation::Relu,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Hidden layers `h_l = act(h_{l-1} W_l + b_l)` and a linear output logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_width: usize,
    hidden: Vec<Layer>,
    output: Layer,
    activation: Activation,
    dropout: f64,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input_width: usize, cfg: &MlpConfig, params: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", cfg.dropout)));
        }
        if input_width == 0 || cfg.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: input {input_width}, hidden {:?}",
                cfg.hidden
            )));
        }
        let mut layer = |l: usize, fan_in: usize, fan_out: usize, params: &mut ParamStore| Layer {
            w: params.add(format!("mlp/{l}/w"), ParamGroup::Mlp, xavier_tensor(fan_in, fan_out, rng)),
            b: params.add(format!("mlp/{l}/b"), ParamGroup::Mlp, Tensor::zeros(vec![fan_out], true)),
        };
        let mut width = input_width;
        let mut hidden = Vec::with_capacity(cfg.hidden.len());
        for (l, &h) in cfg.hidden.iter().enumerate() {
            hidden.push(layer(l, width, h, params));
            width = h;
        }
        let output = layer(cfg.hidden.len(), width, 1, params);
        Ok(Self {
            input_width,
            hidden,
            output,
            activation: cfg.activation,
            dropout: cfg.dropout,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// Pre-sigmoid logits (`B x 1`). Training mode applies inverted dropout
    /// after every hidden activation, with masks drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        h0: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let width = graph.shape(h0).1;
        if width != self.input_width {
            return Err(Error::dim(
                "mlp",
                format!("input width {width}, first layer expects {}", self.input_width),
            ));
        }
        let mut h = h0;
        for layer in &self.hidden {
            let w = graph.param(layer.w);
            let b = graph.param(layer.b);
            h = graph.affine(h, w, b)?;
            h = graph.activation(h, self.activation);
            if training && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let (r, c) = graph.shape(h);
                let mask = (0..r * c)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                h = graph.dropout(h, mask)?;
            }
        }
        let w = graph.param(self.output.w);
        let b = graph.param(self.output.b);
        graph.affine(h, w, b)
    }

    #[cfg(test)]
    pub(crate) fn param_ids(&self) -> Vec<ParamId> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.output))
            .flat_map(|l| [l.w, l.b])
            .collect()
    }
}

/// Linear part over one-hot features: a scalar per feature value plus a global bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Wide {
    tables: Vec<ParamId>,
    bias: ParamId,
}

impl Wide {
    pub fn new(schema: &[FieldSchema], params: &mut ParamStore) -> Self {
        let tables = schema
            .iter()
            .map(|f| {
                params.add(
                    format!("wide/{}", f.name),
                    ParamGroup::Wide,
                    Tensor::zeros(vec![f.cardinality, 1], true),
                )
            })
            .collect();
        let bias = params.add("wide/bias", ParamGroup::Wide, Tensor::zeros(vec![1, 1], true));
        Self { tables, bias }
    }

    /// `B x 1` linear logits.
    pub fn forward(&self, graph: &mut Graph, columns: &[Vec<usize>]) -> Result<Var> {
        if columns.len() != self.tables.len() {
            return Err(Error::dim(
                "wide",
                format!("{} columns for {} fields", columns.len(), self.tables.len()),
            ));
        }
        let mut terms = Vec::with_capacity(columns.len());
        for (&t, col) in self.tables.iter().zip(columns) {
            let table = graph.param(t);
            terms.push(graph.gather(table, col, 1)?);
        }
        let sum = graph.add(&terms)?;
        let bias = graph.param(self.bias);
        graph.add_row(sum, bias)
    }
}

/// Head combining wide, FM and deep parts according to [`ModelKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    kind: ModelKind,
    wide: Wide,
    mlp: Option<Mlp>,
}

impl Head {
    /// `deep_width` is the width of the concatenated field embeddings.
    pub fn new<R: Rng + ?Sized>(
        kind: ModelKind,
        schema: &[FieldSchema],
        deep_width: usize,
        mlp: &MlpConfig,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let wide = Wide::new(schema, params);
        let mlp = if kind.has_mlp() {
            Some(Mlp::new(deep_width, mlp, params, rng)?)
        } else {
            None
        };
        Ok(Self { kind, wide, mlp })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        self.mlp.as_ref()
    }

    /// Pre-sigmoid logits `B x 1`:
    /// fm = bias + wide + fm, wide-deep = wide + mlp, deepfm = wide + fm + mlp.
    pub fn logits<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        fields: &[Var],
        columns: &[Vec<usize>],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut parts = vec![self.wide.forward(graph, columns)?];
        if self.kind.needs_interaction() {
            parts.push(graph.fm_interaction(fields)?);
        }
        if let Some(mlp) = &self.mlp {
            let h0 = graph.concat(fields)?;
            parts.push(mlp.forward(graph, h0, training, rng)?);
        }
        graph.add(&parts)
    }
}

/// `Σ_{i<j} <x_i, x_j>` for plain vectors (one row).
pub fn fm_interaction(fields: &[&[f64]]) -> Result<f64> {
    let Some(first) = fields.first() else {
        return Err(Error::dim("fm_interaction", "no fields"));
    };
    let d = first.len();
    if fields.iter().any(|f| f.len() != d) {
        return Err(Error::dim("fm_interaction", "field widths differ"));
    }
    let mut sum = vec![0.0; d];
    let mut sq = 0.0;
    for f in fields {
        for (s, v) in sum.iter_mut().zip(f.iter()) {
            *s += v;
            sq += v * v;
        }
    }
    Ok(0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq))
}

/// Binary logloss with the `[1e-7, 1 - 1e-7]` clamp; `y` must be 0 or 1.
pub fn logloss(p: f64, y: f64) -> Result<f64> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::Label(format!("label {y} is not 0 or 1")));
    }
    Ok(autodiff::logloss(p, y))
}

/// Probability from a logit, kept strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(autodiff::PROB_CLAMP, 1.0 - autodiff::PROB_CLAMP)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::finite_diff_check;

    fn schema(m: usize) -> Vec<FieldSchema> {
        (0..m).map(|i| FieldSchema::categorical(format!("f{i}"), 4)).collect()
    }

    fn zero_all(params: &mut ParamStore) {
        for (_, p) in params.iter_mut() {
            p.tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_mlp_gives_zero_logit() {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(4, &MlpConfig::default(), &mut params, &mut rng).unwrap();
        zero_all(&mut params);
        let mut g = Graph::new(&params);
        let x = g.constant(2, 4, vec![1.0, -2.0, 3.0, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let z = mlp.forward(&mut g, x, false, &mut rng).unwrap();
        assert_eq!(g.value(z), &[0.0, 0.0]);
        let bad = g.constant(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(mlp.forward(&mut g, bad, false, &mut rng), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(3, &MlpConfig::default(), &mut params, &mut rng).unwrap();
        let run = |seed| {
            let mut g = Graph::new(&params);
            let x = g.constant(2, 3, vec![0.3, -0.1, 0.9, 1.2, 0.4, -0.7]).unwrap();
            let z = mlp.forward(&mut g, x, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            g.value(z).to_vec()
        };
        assert_eq!(run(5), run(6));
    }

    #[test]
    fn training_mode_gradients_match_finite_differences() {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = MlpConfig {
            hidden: vec![5, 4],
            ..MlpConfig::default()
        };
        let mlp = Mlp::new(3, &cfg, &mut params, &mut rng).unwrap();
        for (_, p) in params.iter_mut() {
            p.tensor.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let ids = mlp.param_ids();
        let theta: Vec<f64> = ids.iter().flat_map(|&i| params.get(i).values().to_vec()).collect();
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let f = |t: &[f64]| {
            let mut p = params.clone();
            let mut off = 0;
            for &id in &ids {
                let n = p.get(id).len();
                p.get_mut(id).values_mut().copy_from_slice(&t[off..off + n]);
                off += n;
            }
            let mut g = Graph::new(&p);
            let xv = g.constant(4, 3, x.clone()).unwrap();
            // fixed dropout mask through the seed
            let z = mlp.forward(&mut g, xv, true, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
            let l = g.bce_with_logits(z, &labels).unwrap();
            let grads = g.backward(l).unwrap();
            let flat = ids.iter().flat_map(|&id| grads.param(id).unwrap().to_vec()).collect();
            Ok((g.scalar(l), flat))
        };
        assert!(finite_diff_check(f, &theta, 1e-3).unwrap() <= 1e-4);
    }

    #[test]
    fn fm_interaction_examples() {
        assert_eq!(fm_interaction(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(), 0.0);
        let one = [1.0, 1.0];
        assert_eq!(fm_interaction(&[&one, &one, &one]).unwrap(), 6.0);
        assert_eq!(fm_interaction(&[&one]).unwrap(), 0.0);
        assert!(fm_interaction(&[&one, &[1.0]]).is_err());
    }

    #[test]
    fn all_zero_parameters_predict_one_half() {
        for kind in [ModelKind::Fm, ModelKind::WideDeep, ModelKind::DeepFm] {
            let s = schema(3);
            let mut params = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let head = Head::new(kind, &s, 6, &MlpConfig::default(), &mut params, &mut rng).unwrap();
            zero_all(&mut params);
            let mut g = Graph::new(&params);
            let mut fields = Vec::new();
            for i in 0..3 {
                let v = g.constant(2, 2, vec![0.1 * i as f64, 0.5, -0.3, 0.2]).unwrap();
                fields.push(g.scale(v, 0.0));
            }
            let cols = vec![vec![1, 2]; 3];
            let z = head.logits(&mut g, &fields, &cols, false, &mut rng).unwrap();
            for &v in g.value(z) {
                assert_eq!(probability(v), 0.5);
            }
        }
        assert!("xdeepfm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn deepfm_logit_is_sum_of_parts() {
        let s = schema(3);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Head::new(ModelKind::DeepFm, &s, 6, &MlpConfig::default(), &mut params, &mut rng).unwrap();
        for (_, p) in params.iter_mut() {
            if p.group == ParamGroup::Wide {
                p.tensor.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
        }
        let vals: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let cols = vec![vec![0, 3], vec![1, 1], vec![2, 0]];
        let mut g = Graph::new(&params);
        let fields: Vec<Var> = vals.iter().map(|v| g.constant(2, 2, v.clone()).unwrap()).collect();
        let total = head.logits(&mut g, &fields, &cols, false, &mut rng).unwrap();
        let wide = head.wide.forward(&mut g, &cols).unwrap();
        let fm = g.fm_interaction(&fields).unwrap();
        let h0 = g.concat(&fields).unwrap();
        let deep = head.mlp.as_ref().unwrap().forward(&mut g, h0, false, &mut rng).unwrap();
        for i in 0..2 {
            let parts = g.value(wide)[i] + g.value(fm)[i] + g.value(deep)[i];
            assert!((g.value(total)[i] - parts).abs() < 1e-12);
            // the fm part equals the row-wise brute force
            let rows: Vec<&[f64]> = vals.iter().map(|v| &v[i * 2..i * 2 + 2]).collect();
            assert!((g.value(fm)[i] - fm_interaction(&rows).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn fm_head_has_no_mlp_and_single_field_has_no_interaction() {
        let s = schema(1);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = Head::new(ModelKind::Fm, &s, 4, &MlpConfig::default(), &mut params, &mut rng).unwrap();
        assert!(head.mlp().is_none());
        assert_eq!(params.count(|g| g == ParamGroup::Mlp), 0);
        let mut g = Graph::new(&params);
        let f = g.constant(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = head.logits(&mut g, &[f], &[vec![1]], false, &mut rng).unwrap();
        assert_eq!(g.value(z), &[0.0]);
    }

    #[test]
    fn logloss_examples() {
        assert!((logloss(0.5, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((logloss(1e-7, 0.0).unwrap() - 1e-7).abs() < 1e-13);
        let capped = logloss(1.0, 0.0).unwrap();
        assert!(capped.is_finite() && capped > 16.0);
        assert!(logloss(1.0, 1.0).unwrap().is_finite());
        assert!(matches!(logloss(0.5, 0.5), Err(Error::Label(_))));
        assert!(probability(100.0) < 1.0 && probability(-100.0) > 0.0);
    }
}
