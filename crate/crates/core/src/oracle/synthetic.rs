//! Seeded ground-truth objectives over item features.
//!
//! * additive: `f = Σᵢ uᵢ·xᵢ`
//! * bilinear: additive plus `λ Σ_{i<j} xᵢᵀ W xⱼ`, a tunable departure from
//!   independence across vectors
//! * noisy-additive: additive plus Gaussian noise that is a pure function of the
//!   candidate's item ids and the oracle seed

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose, FNV_OFFSET};
use crate::space::{Candidate, ProductSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Additive,
    Bilinear,
    NoisyAdditive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticOracleSpec {
    pub kind: OracleKind,
    pub seed: u64,
    /// Per-vector utility weight vectors; drawn from N(0, 1) when absent.
    pub weights: Option<Vec<Vec<f64>>>,
    /// Interaction strength λ for the bilinear kind.
    pub interaction: f64,
    /// `d × d` interaction matrix, row-major; drawn from N(0, 1) when absent.
    pub interaction_matrix: Option<Vec<f64>>,
    pub noise_std: f64,
}

impl Default for SyntheticOracleSpec {
    fn default() -> Self {
        Self {
            kind: OracleKind::Additive,
            seed: 0,
            weights: None,
            interaction: 0.3,
            interaction_matrix: None,
            noise_std: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    kind: OracleKind,
    seed: u64,
    noise_std: f64,
    interaction: f64,
    /// Per-vector, per-item utilities.
    utilities: Vec<Vec<f64>>,
    /// Row-major `d × d` matrix for the bilinear term.
    matrix: Option<(usize, Vec<f64>)>,
}

impl SyntheticOracle {
    /// Binds a spec to a space, precomputing item utilities in O(Σ|Sᵢ|·d).
    pub fn new(spec: &SyntheticOracleSpec, space: &ProductSpace) -> Result<Self> {
        if !(spec.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise std {} must be ≥ 0", spec.noise_std)));
        }
        let d = space.dim();
        let mut rng = rng::stream(spec.seed, Purpose::Oracle, &[]);
        let weights = match &spec.weights {
            Some(w) => {
                if w.len() != space.n_vectors() || w.iter().any(|wi| wi.len() != d) {
                    return Err(Error::Config(format!(
                        "utility weights must be {} vectors of dimension {d}",
                        space.n_vectors()
                    )));
                }
                w.clone()
            }
            None => (0..space.n_vectors())
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
        };
        let utilities = space
            .sets()
            .iter()
            .zip(&weights)
            .map(|(set, w)| {
                set.feature_matrix()
                    .chunks_exact(d.max(1))
                    .take(set.len())
                    .map(|x| dot(x, w))
                    .collect()
            })
            .collect();
        let matrix = if spec.kind == OracleKind::Bilinear {
            let m = match &spec.interaction_matrix {
                Some(m) if m.len() == d * d => m.clone(),
                Some(m) => {
                    return Err(Error::Config(format!(
                        "interaction matrix has {} entries, expected {d}×{d}",
                        m.len()
                    )))
                }
                None => (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            Some((d, m))
        } else {
            None
        };
        Ok(Self {
            kind: spec.kind,
            seed: spec.seed,
            noise_std: spec.noise_std,
            interaction: spec.interaction,
            utilities,
            matrix,
        })
    }

    /// Additive oracle with explicit per-item utility tables.
    pub fn additive_from_tables(utilities: Vec<Vec<f64>>) -> Self {
        Self {
            kind: OracleKind::Additive,
            seed: 0,
            noise_std: 0.0,
            interaction: 0.0,
            utilities,
            matrix: None,
        }
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn utilities(&self, vector: usize) -> &[f64] {
        &self.utilities[vector]
    }

    pub fn score(&self, space: &ProductSpace, candidate: &Candidate) -> f64 {
        let mut total: f64 = candidate
            .indices()
            .enumerate()
            .map(|(v, i)| self.utilities[v][i])
            .sum();
        if let Some((d, m)) = &self.matrix {
            let n = candidate.len();
            let mut inter = 0.0;
            for a in 0..n {
                let xa = space.set(a).features(candidate.index(a));
                for b in a + 1..n {
                    let xb = space.set(b).features(candidate.index(b));
                    inter += bilinear(xa, m, xb, *d);
                }
            }
            total += self.interaction * inter;
        }
        if self.kind == OracleKind::NoisyAdditive && self.noise_std > 0.0 {
            total += self.noise_std * self.noise(space, candidate);
        }
        total
    }

    fn noise(&self, space: &ProductSpace, candidate: &Candidate) -> f64 {
        let mut h = FNV_OFFSET;
        for (v, i) in candidate.indices().enumerate() {
            h = rng::fnv1a(space.set(v).id(i).as_bytes(), h);
            h = rng::fnv1a(&[0x1f], h);
        }
        let mut r = rng::stream(self.seed, Purpose::Noise, &[h]);
        StandardNormal.sample(&mut r)
    }
}

impl Objective for SyntheticOracle {
    fn describe(&self) -> String {
        match self.kind {
            OracleKind::Additive => "additive".into(),
            OracleKind::Bilinear => format!("bilinear(λ={})", self.interaction),
            OracleKind::NoisyAdditive => format!("noisy-additive(σ={})", self.noise_std),
        }
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        for c in candidates {
            space.check(c)?;
            if c.indices().enumerate().any(|(v, i)| i >= self.utilities[v].len()) {
                return Err(Error::Objective(format!(
                    "candidate {c} is outside the space this oracle was built for"
                )));
            }
        }
        Ok(candidates.iter().map(|c| self.score(space, c)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bilinear(xa: &[f64], m: &[f64], xb: &[f64], d: usize) -> f64 {
    let mut acc = 0.0;
    for (r, &xr) in xa.iter().enumerate() {
        acc += xr * dot(&m[r * d..(r + 1) * d], xb);
    }
    acc
}
