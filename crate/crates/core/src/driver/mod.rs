//! The round loop and its baselines.
//!
//! All four methods share the same loop: propose a batch, score it against
//! the budget, record the round, checkpoint. Only the proposal step differs.

mod config;

use std::collections::BinaryHeap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    apply_override, ComponentConfig, Method, ObjectiveConfig, ObjectiveKind, OutputConfig, RunConfig, SpaceConfig,
};

use crate::acquisition::{estimate_acquisition_probability, sample_round, ProbabilityTable};
use crate::error::{Error, Result};
use crate::metrics::{heatmap_export, PhaseTimes, RecallCurve, RunSummary, TimingRollup, TopKDistribution, TruthIndex};
use crate::oracle::{score_batch, score_unbudgeted, GroundTruth, Objective, ScoreLedger};
use crate::rng::{self, Purpose};
use crate::space::{Candidate, ProductSpace};
use crate::surrogate::{
    FeedForwardModel, GaussianPrediction, ModelKind, SurrogateBank, SynthonDataset, TabularGaussian, TrainingReport,
};

const CHECKPOINT_VERSION: u32 = 1;
const ENUMERATION_CHUNK: u128 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquired {
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// `None` for a shared model.
    pub vector: Option<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
}

impl TrainingSummary {
    fn new(vector: Option<usize>, r: &TrainingReport) -> Self {
        Self {
            vector,
            n_train: r.n_train,
            n_val: r.n_val,
            stopped_epoch: r.stopped_epoch,
            best_epoch: r.best_epoch,
            final_train_loss: r.train_loss.last().copied().unwrap_or(f64::NAN),
            best_val_loss: r.val_loss.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the unbudgeted tabular warm-up.
    pub round: usize,
    pub acquired: Vec<Acquired>,
    pub attempts: usize,
    pub converged: bool,
    pub ledger_size: usize,
    pub budget_used: u64,
    pub best_so_far: Option<f64>,
    pub recall: Option<f64>,
    /// Per-item model evaluations spent on inference this round.
    pub forward_passes: u64,
    pub training: Vec<TrainingSummary>,
    /// Wall-clock seconds per phase.
    pub timing: PhaseTimes,
    pub checkpoint: Option<String>,
    pub model: Option<String>,
}

impl RoundRecord {
    /// The record with wall-clock timings zeroed, for replay comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: PhaseTimes::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub ledger: ScoreLedger,
    pub summary: RunSummary,
}

/// A configured experiment: the space, objective and (optional) ground truth.
pub struct Experiment {
    pub config: RunConfig,
    pub space: ProductSpace,
    pub objective: Box<dyn Objective>,
    pub truth: Option<GroundTruth>,
}

impl Experiment {
    /// Builds the space and objective, and the ground truth when recall is
    /// requested: read from `ground_truth_file`, or enumerated when the
    /// space fits the enumeration cap. Relative paths resolve against `base`.
    pub fn prepare(config: RunConfig, base: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let space = config.space.build(base)?;
        let objective = config.objective.build(&space)?;
        let truth = if config.ground_truth_k == 0 {
            None
        } else if let Some(path) = &config.ground_truth_file {
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path.clone(),
            };
            Some(GroundTruth::load(&path)?)
        } else if space.size().fits_within(config.enumeration_cap) {
            Some(GroundTruth::compute(
                &space,
                objective.as_ref(),
                config.ground_truth_k,
                config.enumeration_cap,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            space,
            objective,
            truth,
        })
    }

    pub fn new(
        config: RunConfig,
        space: ProductSpace,
        objective: Box<dyn Objective>,
        truth: Option<GroundTruth>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            space,
            objective,
            truth,
        })
    }

    pub fn run(&self, options: RunOptions<'_>) -> Result<RunResult> {
        self.run_with(self.objective.as_ref(), options)
    }

    /// Runs against `objective` instead of the configured one (used to
    /// interpose call counting).
    pub fn run_with(&self, objective: &dyn Objective, options: RunOptions<'_>) -> Result<RunResult> {
        Session::start(self, objective, options)?.run()
    }
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Directory for records, checkpoints, models and reports.
    pub out_dir: Option<PathBuf>,
    /// Stop after this round, as if interrupted.
    pub stop_after: Option<usize>,
    /// Continue from the latest checkpoint in `out_dir`.
    pub resume: bool,
    pub progress: Option<&'a mut dyn FnMut(&RoundRecord)>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: RunConfig,
    round: usize,
    ledger: ScoreLedger,
    records: Vec<RoundRecord>,
    tabular: Option<TabularGaussian>,
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let dir = dir.join("checkpoints");
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("round_") && n.ends_with(".json"))
        })
        .collect();
    found.sort();
    Ok(found.pop())
}

/// Uniformly random unseen candidates, without replacement.
///
/// Dense situations enumerate the unseen remainder exactly; sparse ones use
/// rejection sampling of independent per-vector draws.
pub fn random_unseen(space: &ProductSpace, ledger: &ScoreLedger, k: usize, seed: u64, round: usize) -> Vec<Candidate> {
    let mut r = rng::stream(seed, Purpose::Initial, &[round as u64]);
    let dense_limit = 4 * (ledger.len() + k) as u128;
    match space.size().exact() {
        Some(total) if total <= dense_limit.max(ENUMERATION_CHUNK) => {
            let unseen: Vec<Candidate> = (0..total)
                .map(|l| space.candidate_at(l))
                .filter(|c| !ledger.contains(c))
                .collect();
            let take = k.min(unseen.len());
            rand::seq::index::sample(&mut r, unseen.len(), take)
                .into_iter()
                .map(|i| unseen[i].clone())
                .collect()
        }
        _ => {
            let sizes = space.pool_sizes();
            let mut batch = std::collections::HashSet::with_capacity(k);
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let idx: Vec<usize> = sizes.iter().map(|&n| r.random_range(0..n)).collect();
                let c = Candidate::new(&idx);
                if !ledger.contains(&c) && batch.insert(c.clone()) {
                    out.push(c);
                }
            }
            out
        }
    }
}

struct Proposal {
    candidates: Vec<Candidate>,
    attempts: usize,
    converged: bool,
    training: Vec<TrainingSummary>,
    forward_passes: u64,
    timing: PhaseTimes,
    model: Option<String>,
}

impl Proposal {
    fn random(candidates: Vec<Candidate>, k: usize, elapsed: f64) -> Self {
        Self {
            attempts: candidates.len(),
            converged: candidates.len() < k,
            candidates,
            training: Vec::new(),
            forward_passes: 0,
            timing: PhaseTimes {
                acquisition: elapsed,
                ..PhaseTimes::default()
            },
            model: None,
        }
    }
}

struct Session<'a, 'o> {
    exp: &'a Experiment,
    objective: &'a dyn Objective,
    truth: Option<TruthIndex>,
    ledger: ScoreLedger,
    records: Vec<RoundRecord>,
    tabular: Option<TabularGaussian>,
    bank: SurrogateBank,
    next_round: usize,
    options: RunOptions<'o>,
}

impl<'a, 'o> Session<'a, 'o> {
    fn start(exp: &'a Experiment, objective: &'a dyn Objective, options: RunOptions<'o>) -> Result<Self> {
        let config = &exp.config;
        config.validate()?;
        if config.method == Method::PoolAl && !exp.space.size().fits_within(config.enumeration_cap) {
            return Err(Error::TooLargeToEnumerate {
                size: exp.space.size().to_string(),
                cap: config.enumeration_cap,
            });
        }
        let truth = match &exp.truth {
            Some(t) if config.ground_truth_k > 0 && !t.is_empty() => {
                Some(TruthIndex::new(t, &exp.space, config.ground_truth_k.min(t.len()))?)
            }
            _ => None,
        };
        let mut session = Self {
            exp,
            objective,
            truth,
            ledger: ScoreLedger::new(config.budget()),
            records: Vec::new(),
            tabular: None,
            bank: SurrogateBank::new(config.surrogate.clone(), exp.space.n_vectors()),
            next_round: if config.method == Method::TabularTs { 0 } else { 1 },
            options,
        };
        if let Some(dir) = session.options.out_dir.clone() {
            std::fs::create_dir_all(dir.join("checkpoints"))?;
            if session.options.resume {
                session.restore(&dir)?;
            } else {
                std::fs::File::create(dir.join("records.jsonl"))?;
            }
        } else if session.options.resume {
            return Err(Error::Config("resuming needs an output directory".into()));
        }
        Ok(session)
    }

    fn restore(&mut self, dir: &Path) -> Result<()> {
        let Some(path) = latest_checkpoint(dir)? else {
            std::fs::File::create(dir.join("records.jsonl"))?;
            return Ok(());
        };
        let text = std::fs::read_to_string(&path)?;
        let mut ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(&path, format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.config != self.exp.config {
            return Err(Error::Config(format!(
                "checkpoint {} was written by a different configuration",
                path.display()
            )));
        }
        ck.ledger.reindex();
        self.ledger = ck.ledger;
        self.tabular = ck.tabular;
        self.next_round = ck.round + 1;
        let mut f = std::fs::File::create(dir.join("records.jsonl"))?;
        for r in &ck.records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        self.records = ck.records;
        Ok(())
    }

    fn finished(&self) -> bool {
        self.records.last().is_some_and(|r| r.converged) || self.next_round > self.exp.config.rounds
    }

    fn run(mut self) -> Result<RunResult> {
        while !self.finished() {
            if self.options.stop_after.is_some_and(|s| self.next_round > s) {
                break;
            }
            let round = self.next_round;
            let proposal = match self.exp.config.method {
                Method::Salsa => self.propose_salsa(round)?,
                Method::Random => self.propose_random(round),
                Method::TabularTs => self.propose_tabular(round)?,
                Method::PoolAl => self.propose_pool_al(round)?,
            };
            self.complete_round(round, proposal)?;
            self.next_round += 1;
        }
        self.finish()
    }

    fn k(&self) -> usize {
        self.exp.config.batch_size
    }

    fn seed(&self) -> u64 {
        self.exp.config.seed
    }

    fn propose_random(&self, round: usize) -> Proposal {
        let t = Instant::now();
        let cands = random_unseen(&self.exp.space, &self.ledger, self.k(), self.seed(), round);
        Proposal::random(cands, self.k(), t.elapsed().as_secs_f64())
    }

    fn propose_salsa(&mut self, round: usize) -> Result<Proposal> {
        if round == 1 {
            return Ok(self.propose_random(round));
        }
        let space = &self.exp.space;
        let config = &self.exp.config;
        let mut timing = PhaseTimes::default();

        let t = Instant::now();
        let data = SynthonDataset::from_ledger(&self.ledger);
        let fit_seed = rng::derive_seed(self.seed(), Purpose::Init, &[round as u64]);
        let reports = self.bank.fit(space, &data, fit_seed, round)?;
        timing.training = t.elapsed().as_secs_f64();
        let shared = reports.len() == 1 && space.n_vectors() > 1;
        let training = reports
            .iter()
            .enumerate()
            .map(|(v, r)| TrainingSummary::new((!shared).then_some(v), r))
            .collect();

        let t = Instant::now();
        let before = self.bank.forward_passes();
        let preds: Vec<Vec<GaussianPrediction>> = (0..space.n_vectors())
            .map(|v| self.bank.predict_all(space.set(v), v))
            .collect::<Result<_>>()?;
        let forward_passes = self.bank.forward_passes() - before;
        timing.inference = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let outcome = sample_round(
            &config.acquisition,
            &preds,
            &self.ledger,
            self.k(),
            config.attempt_cap(),
            self.seed(),
            round as u64,
        )?;
        timing.acquisition = t.elapsed().as_secs_f64();

        self.export_heatmap(round, &preds)?;
        let model = match &self.options.out_dir {
            Some(dir) if config.output.save_models => {
                let rel = format!("models/round_{round:03}.json");
                std::fs::create_dir_all(dir.join("models"))?;
                self.bank.save(&dir.join(&rel))?;
                Some(rel)
            }
            _ => None,
        };
        Ok(Proposal {
            candidates: outcome.candidates,
            attempts: outcome.attempts,
            converged: outcome.converged,
            training,
            forward_passes,
            timing,
            model,
        })
    }

    fn export_heatmap(&self, round: usize, preds: &[Vec<GaussianPrediction>]) -> Result<()> {
        let config = &self.exp.config;
        let (Some(dir), Some(truth)) = (&self.options.out_dir, &self.exp.truth) else {
            return Ok(());
        };
        if config.output.heatmap_draws == 0 {
            return Ok(());
        }
        let seed = rng::derive_seed(self.seed(), Purpose::Probability, &[round as u64]);
        let probs = estimate_acquisition_probability(
            &config.acquisition,
            preds,
            self.ledger.best(),
            config.output.heatmap_draws,
            seed,
        )?;
        let table = ProbabilityTable::new(&self.exp.space, probs)?;
        let hdir = dir.join("heatmaps");
        std::fs::create_dir_all(&hdir)?;
        table.save(&hdir.join(format!("probabilities_round_{round:03}.tsv")))?;
        heatmap_export(&self.exp.space, &table, truth, round)?.save(&hdir)?;
        Ok(())
    }

    fn variance_floor_std(&self) -> f64 {
        self.exp.config.surrogate.network.variance_floor.sqrt()
    }

    fn propose_tabular(&mut self, round: usize) -> Result<Proposal> {
        let space = &self.exp.space;
        let config = &self.exp.config;
        if round == 0 {
            let t = Instant::now();
            let cands = warmup_candidates(space, &self.ledger, config.warmup_trials, self.seed())?;
            return Ok(Proposal {
                attempts: cands.len(),
                converged: false,
                candidates: cands,
                training: Vec::new(),
                forward_passes: 0,
                timing: PhaseTimes {
                    acquisition: t.elapsed().as_secs_f64(),
                    ..PhaseTimes::default()
                },
                model: None,
            });
        }
        let model = self
            .tabular
            .as_ref()
            .ok_or_else(|| Error::Model("tabular model missing after warm-up".into()))?;
        let mut timing = PhaseTimes::default();
        let t = Instant::now();
        let floor = self.variance_floor_std();
        let preds: Vec<Vec<GaussianPrediction>> = (0..space.n_vectors())
            .map(|v| {
                let mut p = model.predict(v);
                p.iter_mut().for_each(|g| g.std = g.std.max(floor));
                p
            })
            .collect();
        timing.inference = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let outcome = sample_round(
            &config.acquisition,
            &preds,
            &self.ledger,
            self.k(),
            config.attempt_cap(),
            self.seed(),
            round as u64,
        )?;
        timing.acquisition = t.elapsed().as_secs_f64();
        Ok(Proposal {
            candidates: outcome.candidates,
            attempts: outcome.attempts,
            converged: outcome.converged,
            training: Vec::new(),
            forward_passes: space.pool_total() as u64,
            timing,
            model: None,
        })
    }

    fn propose_pool_al(&mut self, round: usize) -> Result<Proposal> {
        if round == 1 {
            return Ok(self.propose_random(round));
        }
        let space = &self.exp.space;
        let config = &self.exp.config;
        let kind = match config.surrogate.kind {
            ModelKind::Tabular => ModelKind::Mve,
            k => k,
        };
        let mut timing = PhaseTimes::default();

        let t = Instant::now();
        let entries = self.ledger.entries();
        let width = space.dim() * space.n_vectors();
        let mut x = Array2::zeros((entries.len(), width));
        for (r, e) in entries.iter().enumerate() {
            fill_concatenated(space, &e.candidate, x.row_mut(r).as_slice_mut().expect("contiguous"));
        }
        let y: Vec<f64> = entries.iter().map(|e| e.score).collect();
        let fit_seed = rng::derive_seed(self.seed(), Purpose::Init, &[round as u64]);
        let (model, report) =
            FeedForwardModel::fit(&config.surrogate.network, kind, x.view(), &y, fit_seed, &[round as u64])?;
        timing.training = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let total = space.size().exact().expect("checked against the enumeration cap");
        let k = self.k();
        // min-heap on (mean, reversed linear index) keeps the best k
        let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        let mut forward = 0u64;
        let mut start = 0u128;
        while start < total {
            let end = (start + ENUMERATION_CHUNK).min(total);
            let unseen: Vec<(u128, Candidate)> = (start..end)
                .map(|l| (l, space.candidate_at(l)))
                .filter(|(_, c)| !self.ledger.contains(c))
                .collect();
            if !unseen.is_empty() {
                let mut xc = Array2::zeros((unseen.len(), width));
                for (r, (_, c)) in unseen.iter().enumerate() {
                    fill_concatenated(space, c, xc.row_mut(r).as_slice_mut().expect("contiguous"));
                }
                let preds = model.predict(xc.view(), &[round as u64, start as u64]);
                forward += unseen.len() as u64;
                for ((l, _), p) in unseen.iter().zip(preds) {
                    heap.push(std::cmp::Reverse(Ranked { score: p.mean, linear: *l }));
                    if heap.len() > k {
                        heap.pop();
                    }
                }
            }
            start = end;
        }
        timing.inference = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut best: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
        best.sort_by(|a, b| b.cmp(a));
        let candidates: Vec<Candidate> = best.iter().map(|r| space.candidate_at(r.linear)).collect();
        timing.acquisition = t.elapsed().as_secs_f64();
        Ok(Proposal {
            attempts: candidates.len(),
            converged: candidates.len() < k,
            candidates,
            training: vec![TrainingSummary::new(None, &report)],
            forward_passes: forward,
            timing,
            model: None,
        })
    }

    fn complete_round(&mut self, round: usize, proposal: Proposal) -> Result<()> {
        let space = &self.exp.space;
        let mut timing = proposal.timing;
        let t = Instant::now();
        let scored = if round == 0 {
            score_unbudgeted(&mut self.ledger, self.objective, space, &proposal.candidates, round)?
        } else {
            score_batch(&mut self.ledger, self.objective, space, &proposal.candidates, round)?
        };
        timing.scoring = t.elapsed().as_secs_f64();

        if self.exp.config.method == Method::TabularTs {
            let t = Instant::now();
            if round == 0 {
                let data = SynthonDataset::from_ledger(&self.ledger);
                self.tabular = Some(TabularGaussian::from_dataset(
                    &self.exp.config.surrogate.tabular,
                    &space.pool_sizes(),
                    &data,
                )?);
            } else if let Some(model) = self.tabular.as_mut() {
                for (c, y) in &scored {
                    for (v, i) in c.indices().enumerate() {
                        model.observe(v, i, *y);
                    }
                }
            }
            timing.training += t.elapsed().as_secs_f64();
        }

        let checkpoint = self.options.out_dir.as_ref().map(|_| format!("checkpoints/round_{round:03}.json"));
        let record = RoundRecord {
            round,
            acquired: scored
                .iter()
                .map(|(c, s)| Acquired {
                    indices: c.to_vec(),
                    ids: space.candidate_ids(c),
                    score: *s,
                })
                .collect(),
            attempts: proposal.attempts,
            converged: proposal.converged,
            ledger_size: self.ledger.len(),
            budget_used: self.ledger.total_calls(),
            best_so_far: self.ledger.best(),
            recall: self.truth.as_ref().map(|t| t.recall(&self.ledger)),
            forward_passes: proposal.forward_passes,
            training: proposal.training,
            timing,
            checkpoint: checkpoint.clone(),
            model: proposal.model,
        };
        self.records.push(record);
        if let (Some(dir), Some(rel)) = (&self.options.out_dir, checkpoint) {
            let record = self.records.last().expect("just pushed");
            let mut f = std::fs::OpenOptions::new().append(true).create(true).open(dir.join("records.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(record)?)?;
            let ck = Checkpoint {
                version: CHECKPOINT_VERSION,
                config: self.exp.config.clone(),
                round,
                ledger: self.ledger.clone(),
                records: self.records.clone(),
                tabular: self.tabular.clone(),
            };
            let tmp = dir.join(format!("{rel}.tmp"));
            std::fs::write(&tmp, serde_json::to_vec(&ck)?)?;
            std::fs::rename(&tmp, dir.join(&rel))?;
        }
        if let Some(cb) = self.options.progress.as_mut() {
            cb(self.records.last().expect("just pushed"));
        }
        Ok(())
    }

    fn finish(self) -> Result<RunResult> {
        let config = &self.exp.config;
        let mut timing = PhaseTimes::default();
        for r in &self.records {
            timing.scoring += r.timing.scoring;
            timing.training += r.timing.training;
            timing.inference += r.timing.inference;
            timing.acquisition += r.timing.acquisition;
        }
        let summary = RunSummary {
            name: config.name.clone(),
            method: config.method.name().to_string(),
            strategy: match config.method {
                Method::Salsa | Method::TabularTs => config.acquisition.strategy.name().to_string(),
                Method::PoolAl => "greedy".to_string(),
                Method::Random => "random".to_string(),
            },
            seed: config.seed,
            rounds_completed: self.records.iter().filter(|r| r.round > 0).count(),
            molecules_acquired: self.ledger.total_calls(),
            budget: self.ledger.budget(),
            best_score: self.ledger.best(),
            final_recall: self.records.last().and_then(|r| r.recall),
            converged: self.records.last().is_some_and(|r| r.converged),
            forward_passes: self.records.iter().map(|r| r.forward_passes).sum(),
            timing,
        };
        if let Some(dir) = &self.options.out_dir {
            summary.save(&dir.join("summary.json"))?;
            let topk = TopKDistribution::from_ledger(&self.ledger, config.ground_truth_k.max(1));
            topk.write(std::fs::File::create(dir.join("topk.tsv"))?)?;
            topk.write_final(std::fs::File::create(dir.join("topk_final.tsv"))?)?;
            if self.truth.is_some() {
                RecallCurve::from_records(&self.records).write(std::fs::File::create(dir.join("recall_curve.tsv"))?)?;
            }
            let rollup: TimingRollup = crate::metrics::timing_rollup(std::slice::from_ref(&self.records))?;
            rollup.write(std::fs::File::create(dir.join("timing.tsv"))?)?;
        }
        Ok(RunResult {
            records: self.records,
            ledger: self.ledger,
            summary,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ranked {
    score: f64,
    linear: u128,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Higher score first, then the lexicographically smaller candidate.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.linear.cmp(&self.linear))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn fill_concatenated(space: &ProductSpace, c: &Candidate, row: &mut [f64]) {
    let d = space.dim();
    for (v, i) in c.indices().enumerate() {
        row[v * d..(v + 1) * d].copy_from_slice(space.set(v).features(i));
    }
}

/// `trials` molecules per item of every vector, each pairing the item with
/// random unseen complements.
pub fn warmup_candidates(space: &ProductSpace, ledger: &ScoreLedger, trials: usize, seed: u64) -> Result<Vec<Candidate>> {
    let needed = space.pool_total() as u128 * trials as u128;
    let feasible = match space.size().exact() {
        Some(total) => needed <= total,
        None => true,
    };
    if !feasible {
        return Err(Error::Config(format!(
            "warm-up needs {needed} distinct molecules but the space has only {}",
            space.size()
        )));
    }
    let sizes = space.pool_sizes();
    let mut r = rng::stream(seed, Purpose::Warmup, &[]);
    let mut batch = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(needed as usize);
    for t in 0..trials {
        for (v, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                let mut placed = false;
                for _ in 0..10_000 {
                    let idx: Vec<usize> = sizes
                        .iter()
                        .enumerate()
                        .map(|(w, &m)| if w == v { i } else { r.random_range(0..m) })
                        .collect();
                    let c = Candidate::new(&idx);
                    if !ledger.contains(&c) && batch.insert(c.clone()) {
                        out.push(c);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::Config(format!(
                        "warm-up trial {t}: no unseen complement found for item {i} of vector {v}"
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Reads `records.jsonl`.
pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::StrategyKind;
    use crate::oracle::{CountedObjective, SyntheticOracle};

    fn small(method: Method) -> RunConfig {
        let mut c = RunConfig {
            method,
            rounds: 4,
            batch_size: 20,
            ground_truth_k: 20,
            ..RunConfig::default()
        };
        c.space.sizes = vec![20, 20];
        c.space.dim = 4;
        c.surrogate.network.hidden_width = 32;
        c.surrogate.network.max_epochs = 15;
        c
    }

    #[test]
    fn single_round_is_a_random_screen() {
        let mut c = small(Method::Salsa);
        c.rounds = 1;
        let exp = Experiment::prepare(c.clone(), None).unwrap();
        let salsa = exp.run(RunOptions::default()).unwrap();
        assert_eq!(salsa.records.len(), 1);
        assert!(salsa.records[0].training.is_empty());
        assert_eq!(salsa.records[0].forward_passes, 0);
        c.method = Method::Random;
        let random = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
        assert_eq!(salsa.records[0].acquired, random.records[0].acquired);
    }

    #[test]
    fn budget_is_conserved_and_nothing_is_rescored() {
        for method in [Method::Salsa, Method::Random, Method::TabularTs, Method::PoolAl] {
            let c = small(method);
            let exp = Experiment::prepare(c.clone(), None).unwrap();
            let counted = CountedObjective::new(exp.objective.as_ref());
            let res = exp.run_with(&counted, RunOptions::default()).unwrap();
            let budgeted: u64 = res.records.iter().filter(|r| r.round > 0).map(|r| r.acquired.len() as u64).sum();
            assert!(budgeted <= c.budget());
            assert_eq!(res.ledger.total_calls(), budgeted);
            assert_eq!(counted.repeats(), 0, "{method:?}");
            assert_eq!(counted.calls() as usize, res.ledger.len());
            if !res.records.iter().any(|r| r.converged) {
                assert_eq!(budgeted, c.budget(), "{method:?}");
            }
            let best: Vec<f64> = res.records.iter().filter_map(|r| r.best_so_far).collect();
            assert!(best.windows(2).all(|w| w[1] >= w[0]));
            assert!(RecallCurve::from_records(&res.records).is_monotone());
        }
    }

    #[test]
    fn forward_passes_are_sum_of_pools_for_salsa_and_product_minus_seen_for_pool_al() {
        let mut c = small(Method::Salsa);
        c.space.sizes = vec![15, 25];
        let res = Experiment::prepare(c.clone(), None).unwrap().run(RunOptions::default()).unwrap();
        for r in &res.records[1..] {
            assert_eq!(r.forward_passes, 40);
        }
        c.method = Method::PoolAl;
        let res = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
        for (prev, r) in res.records.iter().zip(&res.records[1..]) {
            assert_eq!(r.forward_passes, 375 - prev.ledger_size as u64);
        }
    }

    #[test]
    fn exhausting_a_tiny_space_converges_early() {
        let mut c = small(Method::Salsa);
        c.space.sizes = vec![5, 5];
        c.batch_size = 10;
        c.rounds = 10;
        c.ground_truth_k = 5;
        let res = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
        assert!(res.records.last().unwrap().converged);
        assert!(res.records.len() < 10);
        assert!(res.ledger.len() <= 25);
    }

    #[test]
    fn full_budget_random_and_pool_al_recall_everything() {
        let mut c = small(Method::Random);
        c.space.sizes = vec![6, 5];
        c.batch_size = 30;
        c.rounds = 1;
        c.ground_truth_k = 10;
        let res = Experiment::prepare(c.clone(), None).unwrap().run(RunOptions::default()).unwrap();
        assert_eq!(res.records[0].recall, Some(1.0));
        c.method = Method::PoolAl;
        c.batch_size = 40;
        c.rounds = 2;
        let res = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
        assert_eq!(res.records[0].recall, Some(1.0));
    }

    #[test]
    fn pool_al_rejects_large_spaces() {
        let mut c = small(Method::PoolAl);
        c.enumeration_cap = 100;
        c.ground_truth_k = 0;
        let exp = Experiment::prepare(c, None).unwrap();
        assert!(matches!(exp.run(RunOptions::default()), Err(Error::TooLargeToEnumerate { .. })));
    }

    #[test]
    fn warmup_covers_every_item_outside_the_budget() {
        let mut c = small(Method::TabularTs);
        c.space.sizes = vec![10, 10];
        c.warmup_trials = 1;
        c.rounds = 2;
        c.batch_size = 5;
        c.ground_truth_k = 5;
        let res = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
        let warm = &res.records[0];
        assert_eq!(warm.round, 0);
        assert_eq!(warm.budget_used, 0);
        assert_eq!(warm.acquired.len(), 20);
        for v in 0..2 {
            let seen: std::collections::HashSet<usize> = warm.acquired.iter().map(|a| a.indices[v]).collect();
            assert_eq!(seen.len(), 10);
        }
        assert_eq!(res.ledger.total_calls(), 10);
        assert_eq!(res.ledger.len(), 30);
    }

    #[test]
    fn warmup_larger_than_space_is_an_error() {
        let space = ProductSpace::generate(&[3, 3], 1, 0).unwrap();
        let err = warmup_candidates(&space, &ScoreLedger::new(1), 2, 0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn tabular_with_vanishing_noise_ranks_items_by_observed_mean() {
        let mut c = small(Method::TabularTs);
        c.space.sizes = vec![8, 8];
        c.warmup_trials = 3;
        c.rounds = 1;
        c.batch_size = 1;
        c.ground_truth_k = 0;
        c.surrogate.tabular.obs_variance = Some(1e-12);
        let exp = Experiment::prepare(c, None).unwrap();
        let warm = warmup_candidates(&exp.space, &ScoreLedger::new(1), 3, exp.config.seed).unwrap();
        let mut ledger = ScoreLedger::new(1);
        score_unbudgeted(&mut ledger, exp.objective.as_ref(), &exp.space, &warm, 0).unwrap();
        let data = SynthonDataset::from_ledger(&ledger);
        let model = TabularGaussian::from_dataset(&exp.config.surrogate.tabular, &exp.space.pool_sizes(), &data).unwrap();
        for v in 0..2 {
            let mut sums = [(0.0, 0usize); 8];
            for p in data.for_vector(v).points() {
                sums[p.item].0 += p.y;
                sums[p.item].1 += 1;
            }
            let observed: Vec<f64> = sums.iter().map(|(s, n)| s / *n as f64).collect();
            let posterior: Vec<f64> = model.predict(v).iter().map(|p| p.mean).collect();
            let rank = |xs: &[f64]| {
                let mut o: Vec<usize> = (0..xs.len()).collect();
                o.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]));
                o
            };
            assert_eq!(rank(&observed), rank(&posterior));
        }
    }

    #[test]
    fn random_baseline_matches_hypergeometric_mean() {
        let k_truth = 25;
        let (n, b) = (2500.0, 250.0);
        let p = k_truth as f64 / n;
        let var_hits = b * p * (1.0 - p) * (n - b) / (n - 1.0);
        let sd_recall = var_hits.sqrt() / k_truth as f64;
        let mut recalls = Vec::new();
        for seed in 0..20 {
            let mut c = small(Method::Random);
            c.seed = seed;
            c.space.sizes = vec![50, 50];
            c.batch_size = 50;
            c.rounds = 5;
            c.ground_truth_k = k_truth;
            let res = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
            recalls.push(res.summary.final_recall.unwrap());
        }
        let mean = recalls.iter().sum::<f64>() / 20.0;
        let expected = b / n;
        assert!((mean - expected).abs() <= 3.0 * sd_recall / 20f64.sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        for method in [Method::Salsa, Method::PoolAl, Method::TabularTs] {
            let c = small(method);
            let a = Experiment::prepare(c.clone(), None).unwrap().run(RunOptions::default()).unwrap();
            let b = Experiment::prepare(c, None).unwrap().run(RunOptions::default()).unwrap();
            let strip = |r: &[RoundRecord]| r.iter().map(RoundRecord::without_timing).collect::<Vec<_>>();
            assert_eq!(strip(&a.records), strip(&b.records), "{method:?}");
        }
    }

    #[test]
    fn resume_replays_bitwise() {
        for method in [Method::Salsa, Method::TabularTs] {
            let mut c = small(method);
            c.acquisition.strategy = StrategyKind::Ts;
            let exp = Experiment::prepare(c, None).unwrap();
            let dir_a = tempfile::tempdir().unwrap();
            let dir_b = tempfile::tempdir().unwrap();
            let full = exp
                .run(RunOptions { out_dir: Some(dir_a.path().into()), ..RunOptions::default() })
                .unwrap();
            exp.run(RunOptions { out_dir: Some(dir_b.path().into()), stop_after: Some(2), ..RunOptions::default() })
                .unwrap();
            let resumed = exp
                .run(RunOptions { out_dir: Some(dir_b.path().into()), resume: true, ..RunOptions::default() })
                .unwrap();
            let json = |r: &[RoundRecord]| {
                r.iter().map(|x| serde_json::to_string(&x.without_timing()).unwrap()).collect::<Vec<_>>()
            };
            assert_eq!(json(&full.records), json(&resumed.records), "{method:?}");
            let on_disk = read_records(&dir_b.path().join("records.jsonl")).unwrap();
            assert_eq!(json(&on_disk), json(&full.records));
            assert!(dir_a.path().join("summary.json").is_file());
            assert!(dir_a.path().join("recall_curve.tsv").is_file());
        }
    }

    #[test]
    fn resume_refuses_a_different_configuration() {
        let c = small(Method::Random);
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::prepare(c.clone(), None).unwrap();
        exp.run(RunOptions { out_dir: Some(dir.path().into()), stop_after: Some(1), ..RunOptions::default() })
            .unwrap();
        let mut other = c;
        other.seed = 99;
        let exp = Experiment::prepare(other, None).unwrap();
        let err = exp
            .run(RunOptions { out_dir: Some(dir.path().into()), resume: true, ..RunOptions::default() })
            .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn objective_failure_keeps_completed_rounds_on_disk() {
        struct FailsLater(std::sync::atomic::AtomicUsize, SyntheticOracle);
        impl Objective for FailsLater {
            fn describe(&self) -> String {
                "fails-later".into()
            }
            fn score_batch(&self, space: &ProductSpace, c: &[Candidate]) -> Result<Vec<f64>> {
                if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 2 {
                    return Err(Error::Objective("scorer crashed".into()));
                }
                self.1.score_batch(space, c)
            }
        }
        let c = small(Method::Random);
        let exp = Experiment::prepare(c, None).unwrap();
        let oracle = SyntheticOracle::additive_from_tables(vec![vec![0.0; 20], vec![0.0; 20]]);
        let failing = FailsLater(std::sync::atomic::AtomicUsize::new(0), oracle);
        let dir = tempfile::tempdir().unwrap();
        let err = exp
            .run_with(&failing, RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() })
            .unwrap_err();
        assert!(matches!(err, Error::Objective(_)));
        assert_eq!(read_records(&dir.path().join("records.jsonl")).unwrap().len(), 2);
    }

    #[test]
    fn heatmaps_are_written_when_requested() {
        let mut c = small(Method::Salsa);
        c.rounds = 3;
        c.output.heatmap_draws = 200;
        let dir = tempfile::tempdir().unwrap();
        Experiment::prepare(c, None)
            .unwrap()
            .run(RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() })
            .unwrap();
        let h = dir.path().join("heatmaps");
        for round in [2, 3] {
            assert!(h.join(format!("heatmap_items_round_{round:03}.tsv")).is_file());
            assert!(h.join(format!("probabilities_round_{round:03}.tsv")).is_file());
        }
        assert!(dir.path().join("models/round_002.json").is_file());
    }
}
