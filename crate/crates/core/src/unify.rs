//! Maps candidate embeddings of width `d_n` to the common width `d_N`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, BatchNormState, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::embedding::CandidateDims;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnifyMethod {
    /// Per-(field, candidate) affine map to `d_N`, then batch normalization.
    Linear,
    /// Batch normalization, then zero padding to `d_N`.
    ZeroPad,
}

impl FromStr for UnifyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(UnifyMethod::Linear),
            "zero-pad" | "zeropad" | "padding" => Ok(UnifyMethod::ZeroPad),
            other => Err(Error::Config(format!("unknown unify method `{other}`"))),
        }
    }
}

impl fmt::Display for UnifyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnifyMethod::Linear => "linear",
            UnifyMethod::ZeroPad => "zero-pad",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LinearMap {
    w: ParamId,
    b: ParamId,
}

/// Unification parameters. Linear maps exist iff the method is `Linear`; one
/// map per (field, candidate) is shared by every value of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifyParams {
    method: UnifyMethod,
    target: usize,
    eps: f64,
    linear: Vec<Vec<LinearMap>>,
    dims: Vec<CandidateDims>,
}

/// Uniform Xavier bound for a `fan_in x fan_out` matrix.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn xavier_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = xavier_bound(rows, cols);
    let vals = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], vals, true).expect("positive shape")
}

impl UnifyParams {
    pub fn new<R: Rng + ?Sized>(
        names: &[String],
        dims: &[CandidateDims],
        target: usize,
        method: UnifyMethod,
        params: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(d) = dims.iter().find(|d| d.max() > target) {
            return Err(Error::Config(format!(
                "candidate dims {:?} exceed unified width {target}",
                d.as_slice()
            )));
        }
        let linear = match method {
            UnifyMethod::ZeroPad => Vec::new(),
            UnifyMethod::Linear => names
                .iter()
                .zip(dims)
                .map(|(name, d)| {
                    d.as_slice()
                        .iter()
                        .map(|&dn| LinearMap {
                            w: params.add(
                                format!("unify/{name}/{dn}/w"),
                                ParamGroup::Unify,
                                xavier_tensor(dn, target, rng),
                            ),
                            b: params.add(
                                format!("unify/{name}/{dn}/b"),
                                ParamGroup::Unify,
                                Tensor::zeros(vec![target], true),
                            ),
                        })
                        .collect()
                })
                .collect(),
        };
        Ok(Self {
            method,
            target,
            eps: BatchNormState::DEFAULT_EPS,
            linear,
            dims: dims.to_vec(),
        })
    }

    pub fn method(&self) -> UnifyMethod {
        self.method
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Weight and bias of the linear map for (field, candidate).
    pub fn linear_params(&self, field: usize, candidate: usize) -> Option<(ParamId, ParamId)> {
        self.linear
            .get(field)
            .and_then(|f| f.get(candidate))
            .map(|m| (m.w, m.b))
    }

    /// Unified `B x d_N` representation of candidate `candidate` of `field`.
    pub fn unify(
        &self,
        graph: &mut Graph,
        x: Var,
        field: usize,
        candidate: usize,
        bn_mode: BatchNormMode,
    ) -> Result<Var> {
        let dn = self
            .dims
            .get(field)
            .and_then(|d| d.as_slice().get(candidate))
            .copied()
            .ok_or_else(|| Error::Index(format!("no candidate {candidate} for field {field}")))?;
        let width = graph.shape(x).1;
        if width != dn {
            return Err(Error::dim(
                "unify",
                format!("field {field} candidate {candidate} expects width {dn}, got {width}"),
            ));
        }
        let mut bn = BatchNormState::new(bn_mode);
        bn.eps = self.eps;
        match self.method {
            UnifyMethod::Linear => {
                let map = self.linear[field][candidate];
                let w = graph.param(map.w);
                let b = graph.param(map.b);
                let t = graph.affine(x, w, b)?;
                graph.batch_norm(t, &mut bn)
            }
            UnifyMethod::ZeroPad => {
                let t = graph.batch_norm(x, &mut bn)?;
                graph.pad_cols(t, self.target)
            }
        }
    }
}
