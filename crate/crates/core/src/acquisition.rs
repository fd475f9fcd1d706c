//! Acquisition strategies over per-item Gaussian predictions and the
//! rejection-sampling composer that turns them into unseen candidates.

use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::oracle::ScoreLedger;
use crate::rng::{self, Purpose};
use crate::space::{Candidate, ProductSpace};
use crate::surrogate::GaussianPrediction;

/// Items per counter-based random block; fixed so draws do not depend on how
/// blocks are scheduled across threads.
const DRAW_BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Ts,
    TsOneshot,
    Greedy,
    EpsGreedy,
    Ucb,
    Ei,
    Pi,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Ts,
        StrategyKind::TsOneshot,
        StrategyKind::Greedy,
        StrategyKind::EpsGreedy,
        StrategyKind::Ucb,
        StrategyKind::Ei,
        StrategyKind::Pi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Ts => "ts",
            StrategyKind::TsOneshot => "ts-oneshot",
            StrategyKind::Greedy => "greedy",
            StrategyKind::EpsGreedy => "eps-greedy",
            StrategyKind::Ucb => "ucb",
            StrategyKind::Ei => "ei",
            StrategyKind::Pi => "pi",
        }
    }

    /// Scores change from one attempt to the next.
    pub fn redraws_per_attempt(self) -> bool {
        self == StrategyKind::Ts
    }

    fn needs_incumbent(self) -> bool {
        matches!(self, StrategyKind::Ei | StrategyKind::Pi)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub strategy: StrategyKind,
    /// Per-slot probability of a uniform random item (eps-greedy).
    pub epsilon: f64,
    /// Exploration weight for ucb.
    pub beta: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Ts,
            epsilon: 0.05,
            beta: 2.0,
        }
    }
}

impl AcquisitionConfig {
    pub fn new(strategy: StrategyKind) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be ≥ 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn upper_confidence_bound(p: GaussianPrediction, beta: f64) -> f64 {
    p.mean + beta * p.std
}

/// `Φ((μ − y*) / σ)`; a step at `μ = y*` when `σ = 0`.
pub fn probability_of_improvement(p: GaussianPrediction, best: f64) -> f64 {
    if p.std > 0.0 {
        normal_cdf((p.mean - best) / p.std)
    } else if p.mean > best {
        1.0
    } else if p.mean < best {
        0.0
    } else {
        0.5
    }
}

/// `(μ − y*) Φ(z) + σ φ(z)` with `z = (μ − y*) / σ`; `max(μ − y*, 0)` when `σ = 0`.
pub fn expected_improvement(p: GaussianPrediction, best: f64) -> f64 {
    let gain = p.mean - best;
    if p.std > 0.0 {
        let z = gain / p.std;
        gain * normal_cdf(z) + p.std * normal_pdf(z)
    } else {
        gain.max(0.0)
    }
}

/// Acquisition scores for one vector's items.
///
/// `ts` draws fresh samples for every `attempt`; `ts-oneshot` ignores
/// `attempt` so all calls within a round agree. Deterministic strategies
/// ignore the random stream entirely. eps-greedy returns means; its random
/// replacement happens in the composer.
pub fn score_items(
    config: &AcquisitionConfig,
    predictions: &[GaussianPrediction],
    best: Option<f64>,
    seed: u64,
    round: u64,
    vector: u64,
    attempt: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if predictions.is_empty() {
        return Err(Error::Config("cannot score an empty item pool".into()));
    }
    let incumbent = || {
        best.ok_or_else(|| Error::Config(format!("{} needs a best-so-far score", config.strategy)))
    };
    Ok(match config.strategy {
        StrategyKind::Ts => thompson_draws(predictions, seed, &[round, vector, attempt]),
        StrategyKind::TsOneshot => thompson_draws(predictions, seed, &[round, vector, u64::MAX]),
        StrategyKind::Greedy | StrategyKind::EpsGreedy => predictions.iter().map(|p| p.mean).collect(),
        StrategyKind::Ucb => predictions
            .iter()
            .map(|p| upper_confidence_bound(*p, config.beta))
            .collect(),
        StrategyKind::Pi => {
            let y = incumbent()?;
            predictions.iter().map(|p| probability_of_improvement(*p, y)).collect()
        }
        StrategyKind::Ei => {
            let y = incumbent()?;
            predictions.iter().map(|p| expected_improvement(*p, y)).collect()
        }
    })
}

fn thompson_draws(predictions: &[GaussianPrediction], seed: u64, key: &[u64]) -> Vec<f64> {
    let mut out = vec![0.0; predictions.len()];
    let fill = |(b, (dst, src)): (usize, (&mut [f64], &[GaussianPrediction]))| {
        let mut path = key.to_vec();
        path.push(b as u64);
        let mut r = rng::stream(seed, Purpose::Acquire, &path);
        for (d, p) in dst.iter_mut().zip(src) {
            let z: f64 = r.sample(StandardNormal);
            *d = p.mean + p.std * z;
        }
    };
    if predictions.len() > DRAW_BLOCK {
        out.par_chunks_mut(DRAW_BLOCK)
            .zip(predictions.par_chunks(DRAW_BLOCK))
            .enumerate()
            .for_each(fill);
    } else {
        out.chunks_mut(DRAW_BLOCK)
            .zip(predictions.chunks(DRAW_BLOCK))
            .enumerate()
            .for_each(fill);
    }
    out
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn molecule_acquisition_score(per_vector: &[f64]) -> f64 {
    per_vector.iter().sum()
}

/// Produces one proposed item per vector for each attempt.
pub struct Proposer<'a> {
    config: &'a AcquisitionConfig,
    predictions: &'a [Vec<GaussianPrediction>],
    best: Option<f64>,
    seed: u64,
    round: u64,
    /// Argmax per vector when scores do not change between attempts.
    fixed: Option<Vec<usize>>,
}

impl<'a> Proposer<'a> {
    pub fn new(
        config: &'a AcquisitionConfig,
        predictions: &'a [Vec<GaussianPrediction>],
        best: Option<f64>,
        seed: u64,
        round: u64,
    ) -> Result<Self> {
        config.validate()?;
        if predictions.is_empty() || predictions.iter().any(Vec::is_empty) {
            return Err(Error::Config("every vector needs at least one prediction".into()));
        }
        if config.strategy.needs_incumbent() && best.is_none() {
            return Err(Error::Config(format!("{} needs a best-so-far score", config.strategy)));
        }
        let mut p = Self {
            config,
            predictions,
            best,
            seed,
            round,
            fixed: None,
        };
        if !config.strategy.redraws_per_attempt() {
            p.fixed = Some(p.argmaxes(0)?);
        }
        Ok(p)
    }

    fn argmaxes(&self, attempt: u64) -> Result<Vec<usize>> {
        self.predictions
            .iter()
            .enumerate()
            .map(|(v, preds)| {
                let s = score_items(self.config, preds, self.best, self.seed, self.round, v as u64, attempt)?;
                Ok(argmax(&s))
            })
            .collect()
    }

    pub fn propose(&self, attempt: u64) -> Vec<usize> {
        let mut picks = match &self.fixed {
            Some(f) => f.clone(),
            None => self.argmaxes(attempt).expect("validated in constructor"),
        };
        if self.config.strategy == StrategyKind::EpsGreedy {
            let mut r = rng::stream(self.seed, Purpose::Epsilon, &[self.round, attempt]);
            for (v, pick) in picks.iter_mut().enumerate() {
                if r.random::<f64>() < self.config.epsilon {
                    *pick = r.random_range(0..self.predictions[v].len());
                }
            }
        }
        picks
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub candidates: Vec<Candidate>,
    /// Attempts made, successful or not.
    pub attempts: usize,
    /// The attempt cap was reached before the batch was filled.
    pub converged: bool,
}

/// Composes up to `k` unseen candidates by repeated per-vector argmax.
///
/// Every attempt counts toward `max_attempts`, whether it yields a new
/// candidate or a duplicate of one in the ledger or in this batch.
#[allow(clippy::too_many_arguments)]
pub fn sample_round(
    config: &AcquisitionConfig,
    predictions: &[Vec<GaussianPrediction>],
    ledger: &ScoreLedger,
    k: usize,
    max_attempts: usize,
    seed: u64,
    round: u64,
) -> Result<RoundOutcome> {
    if k == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    if max_attempts < k {
        return Err(Error::Config(format!(
            "max attempts ({max_attempts}) must be at least the batch size ({k})"
        )));
    }
    let proposer = Proposer::new(config, predictions, ledger.best(), seed, round)?;
    let mut batch = HashSet::with_capacity(k);
    let mut candidates = Vec::with_capacity(k);
    let mut attempts = 0;
    while candidates.len() < k && attempts < max_attempts {
        let c = Candidate::new(&proposer.propose(attempts as u64));
        attempts += 1;
        if !ledger.contains(&c) && batch.insert(c.clone()) {
            candidates.push(c);
        }
    }
    Ok(RoundOutcome {
        converged: candidates.len() < k,
        candidates,
        attempts,
    })
}

/// Monte-Carlo estimate, per vector, of how often each item is the argmax.
pub fn estimate_acquisition_probability(
    config: &AcquisitionConfig,
    predictions: &[Vec<GaussianPrediction>],
    best: Option<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_draws == 0 {
        return Err(Error::Config("need at least one draw".into()));
    }
    let seed = rng::derive_seed(seed, Purpose::Probability, &[]);
    let proposer = Proposer::new(config, predictions, best, seed, 0)?;
    let mut counts: Vec<Vec<u64>> = predictions.iter().map(|p| vec![0; p.len()]).collect();
    for d in 0..n_draws {
        for (v, i) in proposer.propose(d as u64).into_iter().enumerate() {
            counts[v][i] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|n| n as f64 / n_draws as f64).collect())
        .collect())
}

/// Columnar acquisition-probability table, one row per item.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityTable {
    pub ids: Vec<Vec<String>>,
    pub probabilities: Vec<Vec<f64>>,
}

impl ProbabilityTable {
    pub fn new(space: &ProductSpace, probabilities: Vec<Vec<f64>>) -> Result<Self> {
        if probabilities.len() != space.n_vectors()
            || probabilities.iter().zip(space.sets()).any(|(p, s)| p.len() != s.len())
        {
            return Err(Error::Config("probability arrays do not match the item pools".into()));
        }
        Ok(Self {
            ids: space.sets().iter().map(|s| s.ids().to_vec()).collect(),
            probabilities,
        })
    }

    pub fn rows(&self) -> usize {
        self.ids.iter().map(Vec::len).sum()
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "vector_index\titem_id\tprobability")?;
        for (v, (ids, ps)) in self.ids.iter().zip(&self.probabilities).enumerate() {
            for (id, p) in ids.iter().zip(ps) {
                writeln!(w, "{v}\t{id}\t{p}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let mut ids: Vec<Vec<String>> = Vec::new();
        let mut probabilities: Vec<Vec<f64>> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if n == 0 || line.is_empty() {
                continue;
            }
            let bad = || Error::parse(origin, format!("line {}: expected vector_index, item_id, probability", n + 1));
            let mut f = line.split('\t');
            let v: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let id = f.next().ok_or_else(bad)?.to_string();
            let p: f64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if v > ids.len() {
                return Err(bad());
            }
            if v == ids.len() {
                ids.push(Vec::new());
                probabilities.push(Vec::new());
            }
            ids[v].push(id);
            probabilities[v].push(p);
        }
        Ok(Self { ids, probabilities })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?), path)
    }
}
