use super::Objective;
use crate::error::{Error, Result};
use crate::space::{Candidate, ProductSpace};

/// One term of a linear multi-parameter objective.
pub struct MpoComponent {
    pub objective: Box<dyn Objective>,
    pub weight: f64,
    /// Raw value mapped to 0.
    pub lo: f64,
    /// Raw value mapped to 1.
    pub hi: f64,
}

/// `Σ wᵢ · clamp((fᵢ − loᵢ) / (hiᵢ − loᵢ), 0, 1)`; weights are used as given.
pub struct MpoObjective {
    components: Vec<MpoComponent>,
}

impl MpoObjective {
    pub fn new(components: Vec<MpoComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("an MPO needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) {
                return Err(Error::Config(format!("MPO component {i}: weight must be > 0")));
            }
            if !(c.hi > c.lo) {
                return Err(Error::Config(format!("MPO component {i}: need hi > lo")));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[MpoComponent] {
        &self.components
    }

    pub fn mpo_score(&self, space: &ProductSpace, candidate: &Candidate) -> Result<f64> {
        Ok(self.score_batch(space, std::slice::from_ref(candidate))?[0])
    }
}

/// Combines raw component values with `(weight, lo, hi)` scales.
pub fn mpo_combine(scales: &[(f64, f64, f64)], values: &[f64]) -> f64 {
    scales
        .iter()
        .zip(values)
        .map(|(&(w, lo, hi), &f)| w * ((f - lo) / (hi - lo)).clamp(0.0, 1.0))
        .sum()
}

impl Objective for MpoObjective {
    fn describe(&self) -> String {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|c| format!("{}×{}", c.weight, c.objective.describe()))
            .collect();
        format!("mpo[{}]", parts.join(" + "))
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        let mut total = vec![0.0; candidates.len()];
        for c in &self.components {
            let raw = c.objective.score_batch(space, candidates)?;
            for (t, f) in total.iter_mut().zip(raw) {
                *t += mpo_combine(&[(c.weight, c.lo, c.hi)], &[f]);
            }
        }
        Ok(total)
    }
}
