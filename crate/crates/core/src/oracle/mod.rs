//! Expensive objective functions and the deduplicated score ledger.

mod external;
mod ground_truth;
mod mpo;
mod synthetic;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use external::{format_request, parse_response, ExternalScorer};
pub use ground_truth::{brute_force_top_k, GroundTruth, TruthEntry, DEFAULT_ENUMERATION_CAP};
pub use mpo::{mpo_combine, MpoComponent, MpoObjective};
pub use synthetic::{OracleKind, SyntheticOracle, SyntheticOracleSpec};

use crate::error::{Error, Result};
use crate::space::{Candidate, ProductSpace};

/// An objective `f: Candidate → ℝ`, evaluated in batches.
pub trait Objective: Send + Sync {
    fn describe(&self) -> String;

    /// Scores every candidate; the output is aligned with the input.
    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>>;
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn describe(&self) -> String {
        (**self).describe()
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        (**self).score_batch(space, candidates)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn describe(&self) -> String {
        (**self).describe()
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        (**self).score_batch(space, candidates)
    }
}

/// Wraps an objective and counts every candidate it is asked to score.
///
/// Also remembers which candidates were seen, so callers can audit that
/// nothing was evaluated twice.
pub struct CountedObjective<O> {
    inner: O,
    calls: AtomicU64,
    seen: Mutex<HashSet<Candidate>>,
    repeats: AtomicU64,
}

impl<O: Objective> CountedObjective<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            seen: Mutex::new(HashSet::new()),
            repeats: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of candidates that were submitted more than once.
    pub fn repeats(&self) -> u64 {
        self.repeats.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Objective> Objective for CountedObjective<O> {
    fn describe(&self) -> String {
        self.inner.describe()
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        {
            let mut seen = self.seen.lock().expect("poisoned");
            for c in candidates {
                if !seen.insert(c.clone()) {
                    self.repeats.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
        self.calls
            .fetch_add(candidates.len() as u64, Ordering::SeqCst);
        self.inner.score_batch(space, candidates)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub candidate: Candidate,
    pub score: f64,
    pub round: usize,
    /// False for warm-up evaluations that do not count against the budget.
    pub budgeted: bool,
}

/// Deduplicated record of every scored candidate, with budget accounting.
///
/// Scores are frozen at first evaluation; nothing is ever rescored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreLedger {
    entries: Vec<LedgerEntry>,
    budget: u64,
    total_calls: u64,
    #[serde(skip)]
    index: HashMap<Candidate, usize>,
}

impl ScoreLedger {
    pub fn new(budget: u64) -> Self {
        Self {
            entries: Vec::new(),
            budget,
            total_calls: 0,
            index: HashMap::new(),
        }
    }

    /// Restores the lookup index after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.candidate.clone(), i))
            .collect();
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Budgeted objective calls made so far.
    pub fn total_calls(&self) -> u64 {
        self.total_calls
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.total_calls
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, candidate: &Candidate) -> bool {
        self.index.contains_key(candidate)
    }

    pub fn get(&self, candidate: &Candidate) -> Option<f64> {
        self.index.get(candidate).map(|&i| self.entries[i].score)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| e.score)
            .max_by(|a, b| a.total_cmp(b))
    }

    fn validate(&self, candidates: &[Candidate], budgeted: bool) -> Result<()> {
        let mut batch = HashSet::with_capacity(candidates.len());
        for c in candidates {
            if self.contains(c) || !batch.insert(c) {
                return Err(Error::DuplicateCandidate(c.to_string()));
            }
        }
        let requested = candidates.len() as u64;
        if budgeted && requested > self.remaining() {
            return Err(Error::BudgetExhausted {
                requested,
                remaining: self.remaining(),
            });
        }
        Ok(())
    }

    fn insert(&mut self, candidate: Candidate, score: f64, round: usize, budgeted: bool) {
        self.index.insert(candidate.clone(), self.entries.len());
        self.entries.push(LedgerEntry {
            candidate,
            score,
            round,
            budgeted,
        });
        if budgeted {
            self.total_calls += 1;
        }
    }
}

/// Scores unseen candidates against the budget and records them.
///
/// The whole batch is validated before the objective is called, so a rejected
/// batch leaves the ledger untouched.
pub fn score_batch(
    ledger: &mut ScoreLedger,
    objective: &dyn Objective,
    space: &ProductSpace,
    candidates: &[Candidate],
    round: usize,
) -> Result<Vec<(Candidate, f64)>> {
    score_into(ledger, objective, space, candidates, round, true)
}

/// Like [`score_batch`] but outside the budget (tabular warm-up).
pub fn score_unbudgeted(
    ledger: &mut ScoreLedger,
    objective: &dyn Objective,
    space: &ProductSpace,
    candidates: &[Candidate],
    round: usize,
) -> Result<Vec<(Candidate, f64)>> {
    score_into(ledger, objective, space, candidates, round, false)
}

fn score_into(
    ledger: &mut ScoreLedger,
    objective: &dyn Objective,
    space: &ProductSpace,
    candidates: &[Candidate],
    round: usize,
    budgeted: bool,
) -> Result<Vec<(Candidate, f64)>> {
    for c in candidates {
        space.check(c)?;
    }
    ledger.validate(candidates, budgeted)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let scores = objective.score_batch(space, candidates)?;
    if scores.len() != candidates.len() {
        return Err(Error::Objective(format!(
            "{} returned {} scores for {} candidates",
            objective.describe(),
            scores.len(),
            candidates.len()
        )));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Objective(format!(
            "non-finite score {} for candidate {}",
            scores[bad], candidates[bad]
        )));
    }
    let out: Vec<(Candidate, f64)> = candidates.iter().cloned().zip(scores).collect();
    for (c, s) in &out {
        ledger.insert(c.clone(), *s, round, budgeted);
    }
    Ok(out)
}
