use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Lower and upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchNormMode {
    BatchStats,
    Disabled,
}

/// Normalization without learnable scale or shift. The batch statistics of the
/// most recent forward pass are recorded here.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub eps: f64,
    pub mode: BatchNormMode,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(mode: BatchNormMode) -> Self {
        Self {
            eps: Self::DEFAULT_EPS,
            mode,
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Act { x: Var, kind: Activation },
    BatchNorm { x: Var, inv_std: Vec<f64> },
    Concat { parts: Vec<Var> },
    Gather { table: Var, rows: Vec<usize>, width: usize },
    PadCols { x: Var },
    Add { parts: Vec<Var> },
    AddRow { x: Var, b: Var },
    Scale { x: Var, s: f64 },
    LogSoftmax { x: Var },
    Softmax { x: Var },
    StraightThrough { soft: Var },
    Mix { p: Var, cands: Vec<Var> },
    Dropout { x: Var, mask: Vec<f64> },
    FmInteraction { parts: Vec<Var> },
    BceWithLogits { z: Var, labels: Vec<f64>, probs: Vec<f64> },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    param: Option<ParamId>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamId, Vec<f64>>,
    inputs: BTreeMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn input(&self, v: Var) -> Option<&[f64]> {
        self.inputs.get(&v).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

/// A tape of operations recorded in creation (topological) order.
///
/// Parameters are borrowed from a [`ParamStore`]; their values are never
/// copied into the tape.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            param: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = self.node(v);
        match n.param {
            Some(id) => self.params.get(id).values(),
            None => &n.value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = self.params.get(id);
        let (rows, cols) = t.rows_cols();
        self.nodes.push(Node {
            rows,
            cols,
            value: Vec::new(),
            param: Some(id),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Leaf holding caller data. With `requires_grad` its gradient is
    /// reported through [`Gradients::input`].
    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if rows == 0 || cols == 0 || rows * cols != values.len() {
            return Err(Error::dim(
                "input",
                format!("{rows}x{cols} cannot hold {} values", values.len()),
            ));
        }
        Ok(self.push(rows, cols, values, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        self.input(rows, cols, values, false)
    }

    /// `x W + b` with `x: B x d_in`, `W: d_in x d_out`, `b: d_out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bsz, din) = self.shape(x);
        let (wr, dout) = self.shape(w);
        let (br, bc) = self.shape(b);
        if wr != din {
            return Err(Error::dim(
                "affine",
                format!("x is {bsz}x{din} but W is {wr}x{dout}"),
            ));
        }
        if br * bc != dout {
            return Err(Error::dim(
                "affine",
                format!("W has {dout} outputs but b has {} entries", br * bc),
            ));
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(bsz * dout);
        for _ in 0..bsz {
            out.extend_from_slice(bv);
        }
        for i in 0..bsz {
            let orow = &mut out[i * dout..(i + 1) * dout];
            for k in 0..din {
                let a = xv[i * din + k];
                if a == 0.0 {
                    continue;
                }
                let wrow = &wv[k * dout..(k + 1) * dout];
                for (o, w) in orow.iter_mut().zip(wrow) {
                    *o += a * w;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(bsz, dout, out, Op::Affine { x, w, b }, needs))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let (r, c) = self.shape(x);
        let out = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::Sigmoid => sigmoid(v),
                Activation::Tanh => v.tanh(),
            })
            .collect();
        let needs = self.needs(x);
        self.push(r, c, out, Op::Act { x, kind }, needs)
    }

    /// Per-column normalization with biased batch variance. In disabled mode
    /// `x` is returned unchanged.
    pub fn batch_norm(&mut self, x: Var, state: &mut BatchNormState) -> Result<Var> {
        if state.mode == BatchNormMode::Disabled {
            return Ok(x);
        }
        let (b, d) = self.shape(x);
        if b < 2 {
            return Err(Error::BatchSize(format!(
                "batch_norm needs at least 2 rows in batch-stats mode, got {b}"
            )));
        }
        if !(state.eps > 0.0) {
            return Err(Error::Config(format!("batch_norm eps must be > 0, got {}", state.eps)));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; d];
        for i in 0..b {
            for j in 0..d {
                mean[j] += xv[i * d + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; d];
        for i in 0..b {
            for j in 0..d {
                let c = xv[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            for j in 0..d {
                out[i * d + j] = (xv[i * d + j] - mean[j]) * inv_std[j];
            }
        }
        state.batch_mean = mean;
        state.batch_var = var;
        let needs = self.needs(x);
        Ok(self.push(b, d, out, Op::BatchNorm { x, inv_std }, needs))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no parts"));
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let b = self.shape(first).0;
        let mut total = 0;
        for (i, &p) in parts.iter().enumerate() {
            let (r, c) = self.shape(p);
            if r != b {
                return Err(Error::dim(
                    "concat",
                    format!("part 0 has {b} rows but part {i} has {r}"),
                ));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(b * total);
        for i in 0..b {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            b,
            total,
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Row lookup: output row `i` is the first `width` entries of `table[rows[i]]`.
    pub fn gather(&mut self, table: Var, rows: &[usize], width: usize) -> Result<Var> {
        let (tr, tc) = self.shape(table);
        if width == 0 || width > tc {
            return Err(Error::dim(
                "gather",
                format!("prefix width {width} outside 1..={tc}"),
            ));
        }
        if rows.is_empty() {
            return Err(Error::dim("gather", "empty index list"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= tr) {
            return Err(Error::Index(format!("row {bad} >= table rows {tr}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&tv[r * tc..r * tc + width]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            rows.len(),
            width,
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
                width,
            },
            needs,
        ))
    }

    /// Appends zero columns up to `width`.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Result<Var> {
        let (b, d) = self.shape(x);
        if width < d {
            return Err(Error::dim("pad", format!("cannot pad width {d} down to {width}")));
        }
        if width == d {
            return Ok(x);
        }
        let xv = self.value(x);
        let mut out = vec![0.0; b * width];
        for i in 0..b {
            out[i * width..i * width + d].copy_from_slice(&xv[i * d..(i + 1) * d]);
        }
        let needs = self.needs(x);
        Ok(self.push(b, width, out, Op::PadCols { x }, needs))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn add(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("add", "no parts"));
        };
        let shape = self.shape(first);
        let mut out = self.value(first).to_vec();
        for &p in &parts[1..] {
            if self.shape(p) != shape {
                return Err(Error::dim(
                    "add",
                    format!("{:?} vs {:?}", shape, self.shape(p)),
                ));
            }
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            shape.0,
            shape.1,
            out,
            Op::Add {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Adds the single row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (br, bc) = self.shape(b);
        if br * bc != c {
            return Err(Error::dim("add_row", format!("x has {c} cols, b has {}", br * bc)));
        }
        let bv = self.value(b).to_vec();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            for (o, v) in row.iter_mut().zip(&bv) {
                *o += v;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(r, c, out, Op::AddRow { x, b }, needs))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * s).collect();
        let needs = self.needs(x);
        self.push(r, c, out, Op::Scale { x, s }, needs)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let needs = self.needs(x);
        self.push(r, c, out, Op::LogSoftmax { x }, needs)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let needs = self.needs(x);
        self.push(r, c, out, Op::Softmax { x }, needs)
    }

    /// One-hot of the row-wise argmax in the forward pass, identity in the
    /// backward pass.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let (r, c) = self.shape(soft);
        let mut out = vec![0.0; r * c];
        for (i, row) in self.value(soft).chunks(c).enumerate() {
            out[i * c + argmax(row)] = 1.0;
        }
        let needs = self.needs(soft);
        self.push(r, c, out, Op::StraightThrough { soft }, needs)
    }

    /// `Σ_n p[n] * cands[n]` where `p` is a single row of length N.
    pub fn mix(&mut self, p: Var, cands: &[Var]) -> Result<Var> {
        let (pr, pc) = self.shape(p);
        if pr * pc != cands.len() || cands.is_empty() {
            return Err(Error::dim(
                "mix",
                format!("{} weights for {} candidates", pr * pc, cands.len()),
            ));
        }
        let shape = self.shape(cands[0]);
        if let Some(&bad) = cands.iter().find(|&&c| self.shape(c) != shape) {
            return Err(Error::dim(
                "mix",
                format!("candidate shapes differ: {:?} vs {:?}", shape, self.shape(bad)),
            ));
        }
        let pv = self.value(p).to_vec();
        let mut out = vec![0.0; shape.0 * shape.1];
        for (w, &c) in pv.iter().zip(cands) {
            for (o, v) in out.iter_mut().zip(self.value(c)) {
                *o += w * v;
            }
        }
        let needs = self.needs(p) || cands.iter().any(|&c| self.needs(c));
        Ok(self.push(
            shape.0,
            shape.1,
            out,
            Op::Mix {
                p,
                cands: cands.to_vec(),
            },
            needs,
        ))
    }

    /// Multiplies by a fixed mask (already carrying any inverted-dropout scale).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if mask.len() != r * c {
            return Err(Error::dim("dropout", format!("mask {} vs {}", mask.len(), r * c)));
        }
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let needs = self.needs(x);
        Ok(self.push(r, c, out, Op::Dropout { x, mask }, needs))
    }

    /// Pairwise inner products `Σ_{i<j} <x_i, x_j>` per row, as a `B x 1` column.
    pub fn fm_interaction(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("fm_interaction", "no fields"));
        };
        let (b, d) = self.shape(first);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p) != (b, d)) {
            return Err(Error::dim(
                "fm_interaction",
                format!("field widths differ: {:?} vs {:?}", (b, d), self.shape(bad)),
            ));
        }
        let mut out = vec![0.0; b];
        let mut sum = vec![0.0; d];
        for i in 0..b {
            sum.iter_mut().for_each(|s| *s = 0.0);
            let mut sq = 0.0;
            for &p in parts {
                let row = &self.value(p)[i * d..(i + 1) * d];
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                    sq += v * v;
                }
            }
            out[i] = 0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            b,
            1,
            out,
            Op::FmInteraction {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Mean binary logloss of `sigmoid(z)` against `labels`; the probability is
    /// clamped to `[1e-7, 1 - 1e-7]` before the logs. The gradient with respect
    /// to each logit is `(sigmoid(z) - y) / B`.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[f64]) -> Result<Var> {
        let (r, c) = self.shape(z);
        if r * c != labels.len() {
            return Err(Error::dim(
                "logloss",
                format!("{} logits vs {} labels", r * c, labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Label(format!("label {bad} is not 0 or 1")));
        }
        let probs: Vec<f64> = self.value(z).iter().map(|&v| sigmoid(v)).collect();
        let total: f64 = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| logloss(p, y))
            .sum();
        let mean = total / labels.len() as f64;
        let needs = self.needs(z);
        Ok(self.push(
            1,
            1,
            vec![mean],
            Op::BceWithLogits {
                z,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(1, 1, vec![s], Op::Sum { x }, needs)
    }

    /// Reverse-mode sweep from a scalar root in reverse creation order.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (r, c) = self.shape(root);
        if r * c != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = vec![1.0];
        let mut out = Gradients::default();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            match &node.op {
                Op::Leaf => match node.param {
                    Some(id) => {
                        out.params.insert(id, g);
                    }
                    None => {
                        out.inputs.insert(Var(idx), g);
                    }
                },
                Op::Affine { x, w, b } => {
                    let (bsz, din) = self.shape(*x);
                    let dout = node.cols;
                    if self.needs(*x) {
                        let wv = self.value(*w);
                        let dx = self.slot(&mut grads, *x);
                        for i in 0..bsz {
                            let gi = &g[i * dout..(i + 1) * dout];
                            for k in 0..din {
                                let wrow = &wv[k * dout..(k + 1) * dout];
                                dx[i * din + k] += dot(gi, wrow);
                            }
                        }
                    }
                    if self.needs(*w) {
                        let xv = self.value(*x);
                        let dw = self.slot(&mut grads, *w);
                        for i in 0..bsz {
                            let gi = &g[i * dout..(i + 1) * dout];
                            for k in 0..din {
                                let a = xv[i * din + k];
                                if a == 0.0 {
                                    continue;
                                }
                                for (d, gv) in dw[k * dout..(k + 1) * dout].iter_mut().zip(gi) {
                                    *d += a * gv;
                                }
                            }
                        }
                    }
                    if self.needs(*b) {
                        let db = self.slot(&mut grads, *b);
                        for row in g.chunks(dout) {
                            for (d, gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x);
                    let yv = &node.value;
                    let dx = self.slot(&mut grads, *x);
                    for i in 0..g.len() {
                        let d = match kind {
                            Activation::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => yv[i] * (1.0 - yv[i]),
                            Activation::Tanh => 1.0 - yv[i] * yv[i],
                        };
                        dx[i] += g[i] * d;
                    }
                }
                Op::BatchNorm { x, inv_std } => {
                    let (b, d) = (node.rows, node.cols);
                    let xhat = &node.value;
                    let mut sum_g = vec![0.0; d];
                    let mut sum_gx = vec![0.0; d];
                    for i in 0..b {
                        for j in 0..d {
                            sum_g[j] += g[i * d + j];
                            sum_gx[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                    let bf = b as f64;
                    let dx = self.slot(&mut grads, *x);
                    for i in 0..b {
                        for j in 0..d {
                            let k = i * d + j;
                            dx[k] += inv_std[j] / bf * (bf * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                        }
                    }
                }
                Op::Concat { parts } => {
                    let total = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.shape(p).1;
                        if self.needs(p) {
                            let dp = self.slot(&mut grads, p);
                            for i in 0..node.rows {
                                for j in 0..c {
                                    dp[i * c + j] += g[i * total + offset + j];
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::Gather { table, rows, width } => {
                    let tc = self.shape(*table).1;
                    let dt = self.slot(&mut grads, *table);
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..*width {
                            dt[r * tc + j] += g[i * width + j];
                        }
                    }
                }
                Op::PadCols { x } => {
                    let (b, d) = self.shape(*x);
                    let w = node.cols;
                    let dx = self.slot(&mut grads, *x);
                    for i in 0..b {
                        for j in 0..d {
                            dx[i * d + j] += g[i * w + j];
                        }
                    }
                }
                Op::Add { parts } => {
                    for &p in parts {
                        if self.needs(p) {
                            add_into(self.slot(&mut grads, p), &g);
                        }
                    }
                }
                Op::AddRow { x, b } => {
                    if self.needs(*x) {
                        add_into(self.slot(&mut grads, *x), &g);
                    }
                    if self.needs(*b) {
                        let c = node.cols;
                        let db = self.slot(&mut grads, *b);
                        for row in g.chunks(c) {
                            add_into(db, row);
                        }
                    }
                }
                Op::Scale { x, s } => {
                    let dx = self.slot(&mut grads, *x);
                    for (d, gv) in dx.iter_mut().zip(&g) {
                        *d += s * gv;
                    }
                }
                Op::LogSoftmax { x } => {
                    let c = node.cols;
                    let dx = self.slot(&mut grads, *x);
                    for (i, (grow, yrow)) in g.chunks(c).zip(node.value.chunks(c)).enumerate() {
                        let gs: f64 = grow.iter().sum();
                        for j in 0..c {
                            dx[i * c + j] += grow[j] - yrow[j].exp() * gs;
                        }
                    }
                }
                Op::Softmax { x } => {
                    let c = node.cols;
                    let dx = self.slot(&mut grads, *x);
                    for (i, (grow, yrow)) in g.chunks(c).zip(node.value.chunks(c)).enumerate() {
                        let dotp = dot(grow, yrow);
                        for j in 0..c {
                            dx[i * c + j] += yrow[j] * (grow[j] - dotp);
                        }
                    }
                }
                Op::StraightThrough { soft } => {
                    add_into(self.slot(&mut grads, *soft), &g);
                }
                Op::Mix { p, cands } => {
                    if self.needs(*p) {
                        let dp_vals: Vec<f64> =
                            cands.iter().map(|&c| dot(&g, self.value(c))).collect();
                        add_into(self.slot(&mut grads, *p), &dp_vals);
                    }
                    let pv = self.value(*p).to_vec();
                    for (&c, w) in cands.iter().zip(pv) {
                        if self.needs(c) {
                            let dc = self.slot(&mut grads, c);
                            for (d, gv) in dc.iter_mut().zip(&g) {
                                *d += w * gv;
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = self.slot(&mut grads, *x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::FmInteraction { parts } => {
                    let (b, d) = self.shape(parts[0]);
                    let mut sum = vec![0.0; b * d];
                    for &p in parts {
                        add_into(&mut sum, self.value(p));
                    }
                    for &p in parts {
                        if !self.needs(p) {
                            continue;
                        }
                        let pv = self.value(p);
                        let dp = self.slot(&mut grads, p);
                        for i in 0..b {
                            for j in 0..d {
                                let k = i * d + j;
                                dp[k] += g[i] * (sum[k] - pv[k]);
                            }
                        }
                    }
                }
                Op::BceWithLogits { z, labels, probs } => {
                    let scale = g[0] / labels.len() as f64;
                    let dz = self.slot(&mut grads, *z);
                    for i in 0..labels.len() {
                        dz[i] += scale * (probs[i] - labels[i]);
                    }
                }
                Op::Sum { x } => {
                    let dx = self.slot(&mut grads, *x);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Vec<f64>], v: Var) -> &'g mut Vec<f64> {
        let slot = &mut grads[v.0];
        if slot.is_empty() {
            let n = &self.nodes[v.0];
            *slot = vec![0.0; n.rows * n.cols];
        }
        slot
    }
}

/// Binary logloss of a probability with the standard clamp.
pub fn logloss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
