//! Architecture logits, Gumbel-softmax relaxation, temperature annealing and
//! hard derivation of the per-field dimension.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, softmax_in_place, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::data::FieldSchema;
use crate::embedding::{param_count, CandidateDims};
use crate::error::{Error, Result};

/// Bounds applied to the uniform draw before the double logarithm.
pub const UNIFORM_CLAMP: f64 = 1e-10;

/// Trainable logits `θ_m` per field; `α_m = softmax(θ_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchWeights {
    logits: Vec<ParamId>,
}

impl ArchWeights {
    /// All-zero logits, i.e. uniform `α_m`.
    pub fn new(names: &[String], dims: &[CandidateDims], params: &mut ParamStore) -> Self {
        let logits = names
            .iter()
            .zip(dims)
            .map(|(name, d)| {
                params.add(
                    format!("arch/{name}"),
                    ParamGroup::Arch,
                    Tensor::zeros(vec![1, d.len()], true),
                )
            })
            .collect();
        Self { logits }
    }

    pub fn logits(&self) -> &[ParamId] {
        &self.logits
    }

    pub fn theta(&self, params: &ParamStore) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|&id| params.get(id).values().to_vec())
            .collect()
    }

    pub fn alpha(&self, params: &ParamStore) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|&id| {
                let mut a = params.get(id).values().to_vec();
                softmax_in_place(&mut a);
                a
            })
            .collect()
    }

    /// Selection weights `p_m` for one field recorded on `graph`.
    ///
    /// With `noise` the result is `softmax((log_softmax(θ_m) + g) / τ)`,
    /// otherwise plain `α_m`. `straight_through` replaces the forward value by
    /// its one-hot argmax while keeping the soft gradient.
    pub fn selection(
        &self,
        graph: &mut Graph,
        field: usize,
        noise: Option<&[f64]>,
        tau: f64,
        straight_through: bool,
    ) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
        }
        let theta = graph.param(self.logits[field]);
        let soft = match noise {
            None => graph.softmax(theta),
            Some(g) => {
                let n = graph.shape(theta).1;
                if g.len() != n {
                    return Err(Error::dim(
                        "gumbel_softmax",
                        format!("{} noises for {n} candidates", g.len()),
                    ));
                }
                let log_alpha = graph.log_softmax(theta);
                let g = graph.constant(1, n, g.to_vec())?;
                let perturbed = graph.add(&[log_alpha, g])?;
                let scaled = graph.scale(perturbed, 1.0 / tau);
                graph.softmax(scaled)
            }
        };
        Ok(if straight_through {
            graph.straight_through(soft)
        } else {
            soft
        })
    }
}

/// `-ln(-ln(u))` with `u` clamped to `[1e-10, 1 - 1e-10]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// One standard Gumbel draw.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    gumbel_from_uniform(rng.random::<f64>())
}

pub fn sample_gumbel_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_gumbel(rng)).collect()
}

/// Relaxed one-hot `p_n ∝ exp((ln α_n + g_n) / τ)`, computed with max subtraction.
pub fn gumbel_softmax(alpha: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    if alpha.len() != noise.len() {
        return Err(Error::dim(
            "gumbel_softmax",
            format!("{} weights vs {} noises", alpha.len(), noise.len()),
        ));
    }
    let mut p: Vec<f64> = alpha
        .iter()
        .zip(noise)
        .map(|(a, g)| (a.ln() + g) / tau)
        .collect();
    softmax_in_place(&mut p);
    Ok(p)
}

/// `τ(t) = max(floor, 1 - t / anneal_steps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub floor: f64,
    /// Reciprocal of the per-step slope.
    pub anneal_steps: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        // slope 0.00005 per step
        Self {
            floor: 0.01,
            anneal_steps: 20_000,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, t: u64) -> f64 {
        if t >= self.anneal_steps {
            return self.floor;
        }
        // Exact rational form keeps τ(19_800) == 0.01 bit-for-bit.
        let n = self.anneal_steps as f64;
        ((n - t as f64) / n).max(self.floor)
    }
}

/// Temperature under the default schedule.
pub fn temperature(t: u64) -> f64 {
    TemperatureSchedule::default().at(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedField {
    pub name: String,
    /// 0-based index into the field's candidate set.
    pub index: usize,
    pub dim: usize,
    pub cardinality: usize,
    pub candidates: Vec<usize>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

/// Discrete per-field dimension choice after search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedArchitecture {
    pub param_count: u64,
    #[serde(rename = "field")]
    pub fields: Vec<DerivedField>,
}

impl DerivedArchitecture {
    /// Builds an assignment from explicit candidate indices.
    pub fn from_indices(schema: &[FieldSchema], dims: &[CandidateDims], indices: &[usize]) -> Result<Self> {
        if schema.len() != dims.len() || schema.len() != indices.len() {
            return Err(Error::Config(format!(
                "{} fields, {} candidate sets, {} choices",
                schema.len(),
                dims.len(),
                indices.len()
            )));
        }
        let fields = schema
            .iter()
            .zip(dims)
            .zip(indices)
            .map(|((f, d), &k)| {
                if k >= d.len() {
                    return Err(Error::Index(format!(
                        "candidate {k} >= {} for field `{}`",
                        d.len(),
                        f.name
                    )));
                }
                Ok(DerivedField {
                    name: f.name.clone(),
                    index: k,
                    dim: d.dim(k),
                    cardinality: f.cardinality,
                    candidates: d.as_slice().to_vec(),
                    alpha: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let assignment: Vec<usize> = fields.iter().map(|f| f.dim).collect();
        Ok(Self {
            param_count: param_count(schema, &assignment),
            fields,
        })
    }

    /// Every field at its largest candidate.
    pub fn full(schema: &[FieldSchema], dims: &[CandidateDims]) -> Result<Self> {
        let idx: Vec<usize> = dims.iter().map(|d| d.len() - 1).collect();
        Self::from_indices(schema, dims, &idx)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.dim).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.index).collect()
    }

    /// Checks the architecture was derived for this schema.
    pub fn check_schema(&self, schema: &[FieldSchema]) -> Result<()> {
        if schema.len() != self.fields.len() {
            return Err(Error::Config(format!(
                "architecture has {} fields, data has {}",
                self.fields.len(),
                schema.len()
            )));
        }
        for (a, s) in self.fields.iter().zip(schema) {
            if a.name != s.name || a.cardinality != s.cardinality {
                return Err(Error::Config(format!(
                    "architecture field `{}` (cardinality {}) does not match data field `{}` (cardinality {})",
                    a.name, a.cardinality, s.name, s.cardinality
                )));
            }
            if a.candidates.get(a.index) != Some(&a.dim) {
                return Err(Error::Config(format!(
                    "field `{}`: dim {} is not candidate {} of {:?}",
                    a.name, a.dim, a.index, a.candidates
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::data::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}

/// Picks `argmax_n α_m^n` per field (ties go to the smaller dimension).
pub fn derive(alpha: &[Vec<f64>], schema: &[FieldSchema], dims: &[CandidateDims]) -> Result<DerivedArchitecture> {
    if alpha.len() != schema.len() {
        return Err(Error::Config(format!(
            "{} weight vectors for {} fields",
            alpha.len(),
            schema.len()
        )));
    }
    let idx: Vec<usize> = alpha.iter().map(|a| argmax(a)).collect();
    let mut arch = DerivedArchitecture::from_indices(schema, dims, &idx)?;
    for (f, a) in arch.fields.iter_mut().zip(alpha) {
        f.alpha = a.clone();
    }
    Ok(arch)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn gumbel_closed_forms() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
        let g = gumbel_from_uniform(1e-10);
        assert!((g - (-3.1366175382420014)).abs() < 1e-12, "{g}");
        assert_eq!(gumbel_from_uniform(0.0), g);
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_gumbel(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "{mean}");
    }

    #[test]
    fn gumbel_softmax_examples() {
        assert_eq!(gumbel_softmax(&[0.5, 0.5], &[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = gumbel_softmax(&[0.5, 0.5], &[0.0, 1.0], 0.01).unwrap();
        assert!((p[0] - (-100.0f64).exp()).abs() < 1e-50, "{p:?}");
        assert!((p[1] - 1.0).abs() < 1e-15);
        assert!(matches!(gumbel_softmax(&[1.0], &[0.0], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn gumbel_max_reproduces_alpha() {
        let alpha = [0.1, 0.6, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let scores: Vec<f64> = alpha.iter().map(|a: &f64| a.ln() + sample_gumbel(&mut rng)).collect();
            counts[argmax(&scores)] += 1;
        }
        for (c, a) in counts.iter().zip(alpha) {
            assert!((*c as f64 / n as f64 - a).abs() < 0.02);
        }
    }

    #[test]
    fn graph_selection_matches_direct_formula() {
        let mut params = ParamStore::new();
        let names = vec!["a".to_string()];
        let dims = vec![CandidateDims::new(vec![2, 4, 8]).unwrap()];
        let arch = ArchWeights::new(&names, &dims, &mut params);
        params.get_mut(arch.logits()[0]).values_mut().copy_from_slice(&[0.3, -1.0, 0.8]);
        let alpha = arch.alpha(&params);
        let noise = [0.2, -0.4, 1.1];
        let direct = gumbel_softmax(&alpha[0], &noise, 0.5).unwrap();
        let mut g = Graph::new(&params);
        let p = arch.selection(&mut g, 0, Some(&noise), 0.5, false).unwrap();
        for (a, b) in g.value(p).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        let hard = arch.selection(&mut g, 0, Some(&noise), 0.5, true).unwrap();
        assert_eq!(g.value(hard), &[0.0, 0.0, 1.0]);
        let plain = arch.selection(&mut g, 0, None, 1.0, false).unwrap();
        assert_eq!(g.value(plain), alpha[0].as_slice());
    }

    #[test]
    fn temperature_schedule() {
        assert_eq!(temperature(0), 1.0);
        assert_eq!(temperature(19_800), 0.01);
        assert_eq!(temperature(1_000_000), 0.01);
        assert_eq!(temperature(10_000), 0.5);
        let mut prev = f64::INFINITY;
        for t in (0..25_000).step_by(37) {
            let tau = temperature(t);
            assert!(tau <= prev);
            prev = tau;
        }
    }

    fn schema(cards: &[usize]) -> Vec<FieldSchema> {
        cards
            .iter()
            .enumerate()
            .map(|(i, &c)| FieldSchema::categorical(format!("f{i}"), c))
            .collect()
    }

    #[test]
    fn derive_examples() {
        let dims = vec![CandidateDims::new(vec![2, 8]).unwrap(); 3];
        let alpha = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4]];
        let arch = derive(&alpha, &schema(&[5, 5, 5]), &dims).unwrap();
        assert_eq!(arch.dims(), vec![2, 8, 2]);
        assert_eq!(arch.indices(), vec![0, 1, 0]);

        let tie = derive(&[vec![0.5, 0.5]], &schema(&[4]), &dims[..1]).unwrap();
        assert_eq!(tie.dims(), vec![2]);

        let uniform = derive(&[vec![0.5, 0.5], vec![0.5, 0.5]], &schema(&[10, 10]), &dims[..2]).unwrap();
        assert_eq!(uniform.dims(), vec![2, 2]);
        assert_eq!(uniform.param_count, 40);
    }

    #[test]
    fn derive_ignores_logit_shift() {
        let mut params = ParamStore::new();
        let names = vec!["a".to_string(), "b".to_string()];
        let dims = vec![CandidateDims::new(vec![2, 4, 8]).unwrap(); 2];
        let arch = ArchWeights::new(&names, &dims, &mut params);
        params.get_mut(arch.logits()[0]).values_mut().copy_from_slice(&[0.1, 0.9, 0.3]);
        params.get_mut(arch.logits()[1]).values_mut().copy_from_slice(&[1.5, 0.9, 0.3]);
        let s = schema(&[3, 3]);
        let before = derive(&arch.alpha(&params), &s, &dims).unwrap();
        for &id in arch.logits() {
            params.get_mut(id).values_mut().iter_mut().for_each(|v| *v += 7.25);
        }
        let after = derive(&arch.alpha(&params), &s, &dims).unwrap();
        assert_eq!(before.indices(), after.indices());
        for a in arch.alpha(&params) {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn entropy_falls_with_temperature() {
        let alpha = [0.2, 0.5, 0.3];
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.1, 0.01] {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut h = 0.0;
            let n = 10_000;
            for _ in 0..n {
                let g = sample_gumbel_vec(&mut rng, 3);
                let p = gumbel_softmax(&alpha, &g, tau).unwrap();
                let s: f64 = p.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                h -= p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
            }
            let h = h / n as f64;
            assert!(h <= prev, "entropy {h} at tau {tau} exceeds {prev}");
            prev = h;
        }
    }

    #[test]
    fn arch_file_round_trip_and_schema_check() {
        let dims = vec![CandidateDims::new(vec![2, 8]).unwrap(); 2];
        let s = schema(&[5, 7]);
        let arch = derive(&[vec![0.3, 0.7], vec![0.9, 0.1]], &s, &dims).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arch.toml");
        arch.save(&path).unwrap();
        let back = DerivedArchitecture::load(&path).unwrap();
        assert_eq!(back, arch);
        back.check_schema(&s).unwrap();
        assert!(back.check_schema(&schema(&[5, 8])).is_err());
        assert!(back.check_schema(&s[..1]).is_err());
    }
}
