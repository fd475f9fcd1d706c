//! Recall, score-distribution summaries, heatmap data, diversity and timing
//! rollups. Every exported file is headered, tab-separated text with a
//! matching reader.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::ProbabilityTable;
use crate::driver::RoundRecord;
use crate::error::{Error, Result};
use crate::oracle::{GroundTruth, ScoreLedger};
use crate::space::{Candidate, ProductSpace};

/// Ground-truth top-k resolved against one space, for repeated recall queries.
#[derive(Clone, Debug)]
pub struct TruthIndex {
    members: Vec<Option<Candidate>>,
}

impl TruthIndex {
    pub fn new(truth: &GroundTruth, space: &ProductSpace, k: usize) -> Result<Self> {
        if k == 0 || k > truth.len() {
            return Err(Error::Config(format!(
                "recall@{k} needs 1 ≤ k ≤ ground-truth size {}",
                truth.len()
            )));
        }
        Ok(Self {
            members: truth.entries()[..k]
                .iter()
                .map(|e| space.candidate_from_ids(&e.ids))
                .collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.members.iter().flatten()
    }

    /// `|acquired ∩ truth| / k`, by candidate identity.
    pub fn recall(&self, ledger: &ScoreLedger) -> f64 {
        let hits = self.candidates().filter(|c| ledger.contains(c)).count();
        hits as f64 / self.k() as f64
    }
}

/// `|acquired ∩ truth_top_k| / k` on item-id tuples.
pub fn recall_at_k(ledger: &ScoreLedger, space: &ProductSpace, truth: &GroundTruth, k: usize) -> Result<f64> {
    Ok(TruthIndex::new(truth, space, k)?.recall(ledger))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    /// `(round, molecules acquired, recall)`.
    pub points: Vec<(usize, u64, f64)>,
}

impl RecallCurve {
    pub fn from_records(records: &[RoundRecord]) -> Self {
        Self {
            points: records
                .iter()
                .filter_map(|r| r.recall.map(|rc| (r.round, r.budget_used, rc)))
                .collect(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].1 >= w[0].1 && w[1].2 >= w[0].2)
    }

    pub fn final_recall(&self) -> Option<f64> {
        self.points.last().map(|p| p.2)
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "round\tmolecules_acquired\trecall")?;
        for (r, n, rc) in &self.points {
            writeln!(w, "{r}\t{n}\t{rc}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let rows = read_rows(reader, origin, 3)?;
        let mut points = Vec::with_capacity(rows.len());
        for (line, f) in rows {
            let bad = || Error::parse(origin, format!("line {line}: bad recall row"));
            points.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            ));
        }
        Ok(Self { points })
    }
}

fn read_rows(reader: impl BufRead, origin: &Path, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != width {
            return Err(Error::parse(
                origin,
                format!("line {}: expected {width} fields, found {}", n + 1, fields.len()),
            ));
        }
        rows.push((n + 1, fields));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKRound {
    pub round: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Raw top-k scores, descending, for density estimation downstream.
    pub scores: Vec<f64>,
}

/// Per-round summary of the best `k` scores seen so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopKDistribution {
    pub k: usize,
    pub rounds: Vec<TopKRound>,
    /// Final top-k as `(acquisition round, score)`, descending by score.
    pub final_top: Vec<(usize, f64)>,
}

impl TopKDistribution {
    pub fn from_ledger(ledger: &ScoreLedger, k: usize) -> Self {
        let entries = ledger.entries();
        let last = entries.iter().map(|e| e.round).max().unwrap_or(0);
        let first = entries.iter().map(|e| e.round).min().unwrap_or(0);
        let mut rounds = Vec::new();
        for r in first..=last {
            let mut scores: Vec<f64> = entries.iter().filter(|e| e.round <= r).map(|e| e.score).collect();
            if scores.is_empty() {
                continue;
            }
            scores.sort_by(|a, b| b.total_cmp(a));
            scores.truncate(k);
            rounds.push(TopKRound {
                round: r,
                min: *scores.last().expect("non-empty"),
                max: scores[0],
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                scores,
            });
        }
        let mut final_top: Vec<(usize, f64)> = entries.iter().map(|e| (e.round, e.score)).collect();
        final_top.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        final_top.truncate(k);
        Self { k, rounds, final_top }
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "round\tcount\tmin\tmax\tmean")?;
        for r in &self.rounds {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.round, r.scores.len(), r.min, r.max, r.mean)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `rank  acquired_round  score` for the final top-k.
    pub fn write_final(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "rank\tacquired_round\tscore")?;
        for (i, (r, s)) in self.final_top.iter().enumerate() {
            writeln!(w, "{}\t{r}\t{s}", i + 1)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the per-round summary table (raw score lists are not stored there).
    pub fn read_summary(reader: impl BufRead, origin: &Path) -> Result<Vec<(usize, usize, f64, f64, f64)>> {
        read_rows(reader, origin, 5)?
            .into_iter()
            .map(|(line, f)| {
                let bad = || Error::parse(origin, format!("line {line}: bad top-k row"));
                Ok((
                    f[0].parse().map_err(|_| bad())?,
                    f[1].parse().map_err(|_| bad())?,
                    f[2].parse().map_err(|_| bad())?,
                    f[3].parse().map_err(|_| bad())?,
                    f[4].parse().map_err(|_| bad())?,
                ))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapItem {
    pub vector_index: usize,
    /// Position after sorting by ascending probability (0-based).
    pub rank: usize,
    pub item_id: String,
    pub probability: f64,
}

/// Data behind an acquisition-probability heatmap for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub round: usize,
    pub items: Vec<HeatmapItem>,
    /// `(truth rank, per-vector rank coordinates)` for each truth member in
    /// the space.
    pub truth: Vec<(usize, Vec<usize>)>,
}

pub fn heatmap_export(
    space: &ProductSpace,
    probabilities: &ProbabilityTable,
    truth: &GroundTruth,
    round: usize,
) -> Result<Heatmap> {
    if probabilities.ids.len() != space.n_vectors() {
        return Err(Error::Config("probability table does not cover every vector".into()));
    }
    let mut items = Vec::with_capacity(space.pool_total());
    let mut rank_of: Vec<Vec<usize>> = Vec::with_capacity(space.n_vectors());
    for (v, set) in space.sets().iter().enumerate() {
        if probabilities.probabilities[v].len() != set.len() || probabilities.ids[v].as_slice() != set.ids() {
            return Err(Error::Config(format!("missing acquisition probabilities for vector {v}")));
        }
        let probs = &probabilities.probabilities[v];
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
        let mut ranks = vec![0; set.len()];
        for (rank, &i) in order.iter().enumerate() {
            ranks[i] = rank;
            items.push(HeatmapItem {
                vector_index: v,
                rank,
                item_id: set.id(i).to_string(),
                probability: probs[i],
            });
        }
        rank_of.push(ranks);
    }
    let truth = truth
        .entries()
        .iter()
        .enumerate()
        .filter_map(|(t, e)| {
            space
                .candidate_from_ids(&e.ids)
                .map(|c| (t + 1, c.indices().enumerate().map(|(v, i)| rank_of[v][i]).collect()))
        })
        .collect();
    Ok(Heatmap { round, items, truth })
}

impl Heatmap {
    pub fn write_items(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "vector_index\trank\titem_id\tprobability")?;
        for it in &self.items {
            writeln!(w, "{}\t{}\t{}\t{}", it.vector_index, it.rank, it.item_id, it.probability)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_truth(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let n = self.truth.first().map_or(0, |t| t.1.len());
        write!(w, "truth_rank")?;
        for v in 0..n {
            write!(w, "\trank_{v}")?;
        }
        writeln!(w)?;
        for (t, coords) in &self.truth {
            write!(w, "{t}")?;
            for c in coords {
                write!(w, "\t{c}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let items = dir.join(format!("heatmap_items_round_{:03}.tsv", self.round));
        let truth = dir.join(format!("heatmap_truth_round_{:03}.tsv", self.round));
        self.write_items(std::fs::File::create(&items)?)?;
        self.write_truth(std::fs::File::create(&truth)?)?;
        Ok((items, truth))
    }

    pub fn read(round: usize, items: impl BufRead, truth: impl BufRead, origin: &Path) -> Result<Self> {
        let mut out = Vec::new();
        for (line, f) in read_rows(items, origin, 4)? {
            let bad = || Error::parse(origin, format!("line {line}: bad heatmap row"));
            out.push(HeatmapItem {
                vector_index: f[0].parse().map_err(|_| bad())?,
                rank: f[1].parse().map_err(|_| bad())?,
                item_id: f[2].clone(),
                probability: f[3].parse().map_err(|_| bad())?,
            });
        }
        let mut coords = Vec::new();
        for (n, line) in truth.lines().enumerate() {
            let line = line?;
            if n == 0 || line.is_empty() {
                continue;
            }
            let nums: std::result::Result<Vec<usize>, _> = line.split('\t').map(str::parse).collect();
            let nums = nums.map_err(|_| Error::parse(origin, format!("line {}: bad truth row", n + 1)))?;
            if nums.len() < 2 {
                return Err(Error::parse(origin, format!("line {}: bad truth row", n + 1)));
            }
            coords.push((nums[0], nums[1..].to_vec()));
        }
        Ok(Self {
            round,
            items: out,
            truth: coords,
        })
    }

    /// Mean rank coordinate over all truth members and vectors.
    pub fn mean_truth_rank(&self) -> Option<f64> {
        let n: usize = self.truth.iter().map(|t| t.1.len()).sum();
        (n > 0).then(|| self.truth.iter().flat_map(|t| t.1.iter()).sum::<usize>() as f64 / n as f64)
    }
}

/// Distinct vector-0 items among candidates scoring strictly above
/// `threshold`.
pub fn diversity_count(ledger: &ScoreLedger, threshold: f64) -> usize {
    ledger
        .entries()
        .iter()
        .filter(|e| e.score > threshold)
        .map(|e| e.candidate.index(0))
        .collect::<HashSet<_>>()
        .len()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub scoring: f64,
    pub training: f64,
    pub inference: f64,
    pub acquisition: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.scoring + self.training + self.inference + self.acquisition
    }

    fn add(&mut self, other: &PhaseTimes) {
        self.scoring += other.scoring;
        self.training += other.training;
        self.inference += other.inference;
        self.acquisition += other.acquisition;
    }

    fn as_array(&self) -> [f64; 5] {
        [self.scoring, self.training, self.inference, self.acquisition, self.total()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStat {
    pub phase: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRollup {
    /// Per-trial phase totals.
    pub trials: Vec<PhaseTimes>,
    /// Across-trial mean and sample standard deviation per phase, plus total.
    pub stats: Vec<PhaseStat>,
}

/// Sample mean and standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn timing_rollup(trials: &[Vec<RoundRecord>]) -> Result<TimingRollup> {
    if trials.is_empty() {
        return Err(Error::Config("timing rollup needs at least one trial".into()));
    }
    let totals: Vec<PhaseTimes> = trials
        .iter()
        .map(|records| {
            let mut t = PhaseTimes::default();
            for r in records {
                t.add(&r.timing);
            }
            t
        })
        .collect();
    let names = ["scoring", "training", "inference", "acquisition", "total"];
    let stats = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let xs: Vec<f64> = totals.iter().map(|t| t.as_array()[i]).collect();
            let (mean, std) = mean_std(&xs);
            PhaseStat {
                phase: name.to_string(),
                mean,
                std,
            }
        })
        .collect();
    Ok(TimingRollup { trials: totals, stats })
}

impl TimingRollup {
    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "phase\tmean_secs\tstd_secs")?;
        for s in &self.stats {
            writeln!(w, "{}\t{}\t{}", s.phase, s.mean, s.std)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config("linear fit needs ≥ 2 paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Machine-readable summary of one trial, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub strategy: String,
    pub seed: u64,
    pub rounds_completed: usize,
    pub molecules_acquired: u64,
    pub budget: u64,
    pub best_score: Option<f64>,
    pub final_recall: Option<f64>,
    pub converged: bool,
    pub forward_passes: u64,
    pub timing: PhaseTimes,
}

impl RunSummary {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Mean ± std of the key outcomes over a group of trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub method: String,
    pub strategy: String,
    pub trials: usize,
    pub recall_mean: Option<f64>,
    pub recall_std: Option<f64>,
    pub best_mean: Option<f64>,
    pub best_std: Option<f64>,
    pub acquired_mean: f64,
    pub seconds_mean: f64,
}

/// Groups summaries by (name, method, strategy), in first-seen order.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<usize, (String, String, String, Vec<&RunSummary>)> = BTreeMap::new();
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for s in summaries {
        let key = (s.name.clone(), s.method.clone(), s.strategy.clone());
        let pos = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
            keys.push(key.clone());
            keys.len() - 1
        });
        groups
            .entry(pos)
            .or_insert_with(|| (key.0, key.1, key.2, Vec::new()))
            .3
            .push(s);
    }
    groups
        .into_values()
        .map(|(name, method, strategy, members)| {
            let opt = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
                let xs: Vec<f64> = members.iter().filter_map(|s| f(s)).collect();
                if xs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&xs);
                    (Some(m), Some(s))
                }
            };
            let (recall_mean, recall_std) = opt(&|s| s.final_recall);
            let (best_mean, best_std) = opt(&|s| s.best_score);
            let acquired: Vec<f64> = members.iter().map(|s| s.molecules_acquired as f64).collect();
            let secs: Vec<f64> = members.iter().map(|s| s.timing.total()).collect();
            GroupSummary {
                name,
                method,
                strategy,
                trials: members.len(),
                recall_mean,
                recall_std,
                best_mean,
                best_std,
                acquired_mean: mean_std(&acquired).0,
                seconds_mean: mean_std(&secs).0,
            }
        })
        .collect()
}

pub fn write_group_table(groups: &[GroupSummary], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
    writeln!(
        w,
        "name\tmethod\tstrategy\ttrials\trecall_mean\trecall_std\tbest_mean\tbest_std\tacquired_mean\tseconds_mean"
    )?;
    for g in groups {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            g.name,
            g.method,
            g.strategy,
            g.trials,
            opt(g.recall_mean),
            opt(g.recall_std),
            opt(g.best_mean),
            opt(g.best_std),
            g.acquired_mean,
            g.seconds_mean
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Every `summary.json` under `dir`, in sorted path order.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(PathBuf, RunSummary)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "summary.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|p| {
            let s = RunSummary::load(&p)?;
            Ok((p, s))
        })
        .collect()
}
