//! Per-item score-distribution models.
//!
//! Each scored candidate contributes one datapoint per vector: the item chosen
//! at that vector paired with the candidate's score. Models predict a Gaussian
//! over the score of a candidate containing the item. The spread is largely
//! aleatoric, coming from the unobserved choice of complementary items.

mod network;
mod tabular;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use network::{learning_rate, sample_mean_std, softplus, FeedForwardModel, Head, Layer, Network};
pub use tabular::{conjugate_posterior, Posterior, TabularGaussian};

use crate::error::{Error, Result};
use crate::oracle::ScoreLedger;
use crate::space::{ProductSpace, SynthonSet};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub std: f64,
}

/// Negative log-likelihood of `y` under `N(μ, σ²)`:
/// `½ log 2π + log σ + ½ ((y − μ) / σ)²`.
pub fn mve_loss(y: f64, prediction: GaussianPrediction) -> Result<f64> {
    let GaussianPrediction { mean, std } = prediction;
    if !(std > 0.0) {
        return Err(Error::Model(format!("standard deviation must be positive, got {std}")));
    }
    let z = (y - mean) / std;
    Ok(HALF_LN_2PI + std.ln() + 0.5 * z * z)
}

/// Mean MVE loss over a batch.
pub fn mve_batch_loss(ys: &[f64], predictions: &[GaussianPrediction]) -> Result<f64> {
    let mut total = 0.0;
    for (&y, &p) in ys.iter().zip(predictions) {
        total += mve_loss(y, p)?;
    }
    Ok(total / ys.len() as f64)
}

/// Appends a one-hot vector tag to an item's features.
pub fn attach_vector_onehot(features: &[f64], vector_index: usize, n_vectors: usize) -> Result<Vec<f64>> {
    if vector_index >= n_vectors {
        return Err(Error::Model(format!(
            "vector index {vector_index} out of range for {n_vectors} vectors"
        )));
    }
    let mut out = Vec::with_capacity(features.len() + n_vectors);
    out.extend_from_slice(features);
    out.extend((0..n_vectors).map(|v| if v == vector_index { 1.0 } else { 0.0 }));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthonPoint {
    pub vector: usize,
    pub item: usize,
    pub y: f64,
    /// Position of the source candidate in the ledger.
    pub molecule: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthonDataset {
    points: Vec<SynthonPoint>,
}

impl SynthonDataset {
    pub fn new(points: Vec<SynthonPoint>) -> Self {
        Self { points }
    }

    /// One datapoint per vector for every ledger entry, in ledger order.
    pub fn from_ledger(ledger: &ScoreLedger) -> Self {
        let mut points = Vec::new();
        for (m, e) in ledger.entries().iter().enumerate() {
            for (v, i) in e.candidate.indices().enumerate() {
                points.push(SynthonPoint {
                    vector: v,
                    item: i,
                    y: e.score,
                    molecule: m,
                });
            }
        }
        Self { points }
    }

    pub fn points(&self) -> &[SynthonPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn for_vector(&self, vector: usize) -> Self {
        Self {
            points: self.points.iter().filter(|p| p.vector == vector).copied().collect(),
        }
    }

    /// One score per distinct source molecule.
    pub fn unique_scores(&self) -> Vec<f64> {
        let mut seen = std::collections::HashSet::new();
        self.points
            .iter()
            .filter(|p| seen.insert(p.molecule))
            .map(|p| p.y)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Feed-forward network trained with the MVE loss.
    Mve,
    /// Feed-forward network trained with squared error; uncertainty from
    /// stochastic dropout passes at inference.
    Dropout,
    /// Conjugate Gaussian table per item.
    Tabular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    PerVector,
    /// One shared model; features carry a one-hot vector tag.
    OneModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub holdout: f64,
    pub patience: usize,
    pub lr_initial: f64,
    pub lr_max: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub variance_floor: f64,
    /// Dropout probability for the dropout model kind.
    pub dropout: f64,
    /// Stochastic inference passes for the dropout model kind.
    pub mc_passes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_width: 300,
            hidden_layers: 2,
            max_epochs: 50,
            batch_size: 64,
            holdout: 0.2,
            patience: 10,
            lr_initial: 1e-4,
            lr_max: 1e-3,
            lr_final: 1e-4,
            weight_decay: 0.0,
            variance_floor: 1e-6,
            dropout: 0.2,
            mc_passes: 10,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad("holdout fraction must lie in (0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be ≥ 1");
        }
        if self.hidden_width == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("width, batch size and epochs must be ≥ 1");
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.mc_passes == 0 {
            return bad("mc_passes must be ≥ 1");
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance floor must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    /// Defaults to the mean of all observed scores.
    pub prior_mean: Option<f64>,
    /// Defaults to the observation variance.
    pub prior_variance: Option<f64>,
    /// Defaults to the sample variance of all observed scores.
    pub obs_variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub kind: ModelKind,
    pub layout: Layout,
    pub network: NetworkConfig,
    pub tabular: TabularConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mve,
            layout: Layout::PerVector,
            network: NetworkConfig::default(),
            tabular: TabularConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Trained {
    Network(FeedForwardModel),
    Tabular(TabularGaussian),
}

/// The surrogate models for a run, either one per vector or one shared model.
///
/// Both layouts expose the same interface, so the driver never branches on
/// which one is configured.
#[derive(Debug)]
pub struct SurrogateBank {
    config: SurrogateConfig,
    n_vectors: usize,
    models: Vec<Trained>,
    forward_passes: AtomicU64,
}

impl SurrogateBank {
    pub fn new(config: SurrogateConfig, n_vectors: usize) -> Self {
        Self {
            config,
            n_vectors,
            models: Vec::new(),
            forward_passes: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        !self.models.is_empty()
    }

    /// Per-item model evaluations performed by [`SurrogateBank::predict_all`].
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    fn shared(&self) -> bool {
        self.config.layout == Layout::OneModel && self.config.kind != ModelKind::Tabular
    }

    fn design(&self, set: &SynthonSet, rows: &[usize]) -> Array2<f64> {
        let d = set.dim();
        let extra = if self.shared() { self.n_vectors } else { 0 };
        let mut x = Array2::zeros((rows.len(), d + extra));
        for (r, &i) in rows.iter().enumerate() {
            let mut row = x.row_mut(r);
            for (k, v) in set.features(i).iter().enumerate() {
                row[k] = *v;
            }
            if extra > 0 {
                row[d + set.vector_index()] = 1.0;
            }
        }
        x
    }

    /// Retrains every model from scratch on `data`.
    pub fn fit(
        &mut self,
        space: &ProductSpace,
        data: &SynthonDataset,
        seed: u64,
        round: usize,
    ) -> Result<Vec<TrainingReport>> {
        if data.is_empty() {
            return Err(Error::Model("cannot fit surrogates to an empty dataset".into()));
        }
        self.models.clear();
        let mut reports = Vec::new();
        if self.config.kind == ModelKind::Tabular {
            let model = TabularGaussian::from_dataset(&self.config.tabular, &space.pool_sizes(), data)?;
            self.models.push(Trained::Tabular(model));
            return Ok(reports);
        }
        if self.shared() {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for v in 0..self.n_vectors {
                let sub = data.for_vector(v);
                let rows: Vec<usize> = sub.points().iter().map(|p| p.item).collect();
                xs.push(self.design(space.set(v), &rows));
                ys.extend(sub.points().iter().map(|p| p.y));
            }
            let views: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
            let x = ndarray::concatenate(ndarray::Axis(0), &views)
                .map_err(|e| Error::Model(e.to_string()))?;
            let (model, report) =
                FeedForwardModel::fit(&self.config.network, self.config.kind, x.view(), &ys, seed, &[round as u64, u64::MAX])?;
            self.models.push(Trained::Network(model));
            reports.push(report);
        } else {
            for v in 0..self.n_vectors {
                let sub = data.for_vector(v);
                let rows: Vec<usize> = sub.points().iter().map(|p| p.item).collect();
                let x = self.design(space.set(v), &rows);
                let ys: Vec<f64> = sub.points().iter().map(|p| p.y).collect();
                let (model, report) =
                    FeedForwardModel::fit(&self.config.network, self.config.kind, x.view(), &ys, seed, &[round as u64, v as u64])?;
                self.models.push(Trained::Network(model));
                reports.push(report);
            }
        }
        Ok(reports)
    }

    /// One prediction per item of `set`: Σ|Sᵢ| evaluations per round across
    /// all vectors, never the product.
    pub fn predict_all(&self, set: &SynthonSet, vector_index: usize) -> Result<Vec<GaussianPrediction>> {
        if self.models.is_empty() {
            return Err(Error::Untrained);
        }
        if vector_index >= self.n_vectors || set.vector_index() != vector_index {
            return Err(Error::Model(format!(
                "vector index {vector_index} does not match set {} of a {}-vector bank",
                set.vector_index(),
                self.n_vectors
            )));
        }
        let preds = match &self.models[if self.models.len() == 1 { 0 } else { vector_index }] {
            Trained::Tabular(t) => {
                if t.pool_len(vector_index) != set.len() {
                    return Err(Error::Model("tabular model was fit to a different pool".into()));
                }
                let floor = self.config.network.variance_floor.sqrt();
                let mut preds = t.predict(vector_index);
                preds.iter_mut().for_each(|p| p.std = p.std.max(floor));
                preds
            }
            Trained::Network(net) => {
                let rows: Vec<usize> = (0..set.len()).collect();
                let shard = network::PREDICT_CHUNK * 8;
                let parts: Vec<Vec<GaussianPrediction>> = rows
                    .par_chunks(shard)
                    .enumerate()
                    .map(|(s, chunk)| {
                        let x = self.design(set, chunk);
                        net.predict(x.view(), &[vector_index as u64, s as u64])
                    })
                    .collect();
                parts.into_iter().flatten().collect()
            }
        };
        self.forward_passes.fetch_add(set.len() as u64, Ordering::Relaxed);
        Ok(preds)
    }

    /// Individual dropout passes for every item of `set` (dropout kind only),
    /// drawn from the same substreams [`SurrogateBank::predict_all`] uses.
    pub fn dropout_passes(&self, set: &SynthonSet, vector_index: usize) -> Result<Vec<Vec<f64>>> {
        let model = self
            .models
            .get(if self.models.len() == 1 { 0 } else { vector_index })
            .ok_or(Error::Untrained)?;
        let Trained::Network(net) = model else {
            return Err(Error::Model("dropout passes need a network model".into()));
        };
        let rows: Vec<usize> = (0..set.len()).collect();
        let shard = network::PREDICT_CHUNK * 8;
        let mut passes: Vec<Vec<f64>> = Vec::new();
        for (s, chunk) in rows.chunks(shard).enumerate() {
            let x = self.design(set, chunk);
            let part = net.dropout_passes(x.view(), &[vector_index as u64, s as u64]);
            if passes.is_empty() {
                passes = part;
            } else {
                for (dst, src) in passes.iter_mut().zip(part) {
                    dst.extend(src);
                }
            }
        }
        Ok(passes)
    }

    /// Writes the trained parameters as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Checkpoint<'a> {
            version: u32,
            config: &'a SurrogateConfig,
            models: &'a [Trained],
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            file,
            &Checkpoint {
                version: 1,
                config: &self.config,
                models: &self.models,
            },
        )?;
        Ok(())
    }

    pub fn load(path: &Path, n_vectors: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Checkpoint {
            version: u32,
            config: SurrogateConfig,
            models: Vec<Trained>,
        }
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.version != 1 {
            return Err(Error::parse(path, format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(Self {
            config: ck.config,
            n_vectors,
            models: ck.models,
            forward_passes: AtomicU64::new(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Candidate;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mve_closed_form_values() {
        let p = |mean, std| GaussianPrediction { mean, std };
        assert!(approx(mve_loss(1.0, p(1.0, 1.0)).unwrap(), 0.918939, 1e-6));
        assert!(approx(mve_loss(0.0, p(1.0, 1.0)).unwrap(), 1.418939, 1e-6));
        assert!(approx(mve_loss(0.0, p(0.0, std::f64::consts::E)).unwrap(), 1.918939, 1e-6));
        assert!(mve_loss(0.0, p(0.0, 0.0)).is_err());
        assert!(mve_loss(0.0, p(0.0, -1.0)).is_err());
    }

    #[test]
    fn onehot_layout() {
        assert_eq!(attach_vector_onehot(&[0.3, 0.7], 0, 2).unwrap(), vec![0.3, 0.7, 1.0, 0.0]);
        assert_eq!(attach_vector_onehot(&[0.3, 0.7], 1, 2).unwrap()[2..], [0.0, 1.0]);
        assert!(attach_vector_onehot(&[0.3], 2, 2).is_err());
    }

    proptest::proptest! {
        #[test]
        fn onehot_sums_to_one(xs in proptest::collection::vec(-10.0f64..10.0, 0..20), n in 1usize..6, v in 0usize..6) {
            let v = v % n;
            let out = attach_vector_onehot(&xs, v, n).unwrap();
            proptest::prop_assert_eq!(out.len(), xs.len() + n);
            let tail = &out[xs.len()..];
            proptest::prop_assert_eq!(tail.iter().sum::<f64>(), 1.0);
            proptest::prop_assert_eq!(tail[v], 1.0);
        }
    }

    #[test]
    fn dataset_has_one_point_per_vector_per_molecule() {
        let space = ProductSpace::generate(&[4, 4], 2, 0).unwrap();
        let oracle = crate::oracle::SyntheticOracle::additive_from_tables(vec![vec![0.0, 1.0, 2.0, 3.0]; 2]);
        let mut ledger = ScoreLedger::new(10);
        let cands = vec![Candidate::new(&[0, 1]), Candidate::new(&[0, 2]), Candidate::new(&[3, 3])];
        crate::oracle::score_batch(&mut ledger, &oracle, &space, &cands, 1).unwrap();
        let data = SynthonDataset::from_ledger(&ledger);
        assert_eq!(data.len(), 6);
        let v0 = data.for_vector(0);
        assert_eq!(v0.points().iter().map(|p| p.item).collect::<Vec<_>>(), vec![0, 0, 3]);
        assert_eq!(v0.points().iter().map(|p| p.y).collect::<Vec<_>>(), vec![1.0, 2.0, 6.0]);
        assert_eq!(data.unique_scores(), vec![1.0, 2.0, 6.0]);
    }

    #[test]
    fn untrained_bank_refuses_to_predict() {
        let space = ProductSpace::generate(&[3, 3], 2, 0).unwrap();
        let bank = SurrogateBank::new(SurrogateConfig::default(), 2);
        assert!(matches!(bank.predict_all(space.set(0), 0), Err(Error::Untrained)));
    }

    fn small_config(kind: ModelKind, layout: Layout) -> SurrogateConfig {
        SurrogateConfig {
            kind,
            layout,
            network: NetworkConfig {
                hidden_width: 32,
                ..NetworkConfig::default()
            },
            tabular: TabularConfig::default(),
        }
    }

    /// Ledger of `n` random candidates scored by an additive table oracle.
    fn scored(space: &ProductSpace, tables: Vec<Vec<f64>>, n: usize, seed: u64) -> ScoreLedger {
        let oracle = crate::oracle::SyntheticOracle::additive_from_tables(tables);
        let mut ledger = ScoreLedger::new(n as u64);
        let total = space.size().exact().unwrap() as usize;
        let mut r = crate::rng::stream(seed, crate::rng::Purpose::Trial, &[]);
        let picks: Vec<Candidate> = rand::seq::index::sample(&mut r, total, n)
            .into_iter()
            .map(|l| space.candidate_at(l as u128))
            .collect();
        crate::oracle::score_batch(&mut ledger, &oracle, space, &picks, 1).unwrap();
        ledger
    }

    #[test]
    fn constant_targets_are_recovered() {
        let space = ProductSpace::generate(&[20, 20], 3, 4).unwrap();
        let ledger = scored(&space, vec![vec![1.5; 20], vec![1.5; 20]], 400, 1);
        let data = SynthonDataset::from_ledger(&ledger);
        let mut bank = SurrogateBank::new(SurrogateConfig::default(), 2);
        let reports = bank.fit(&space, &data, 7, 2).unwrap();
        for r in &reports {
            assert!(r.stopped_epoch <= 50);
        }
        for v in 0..2 {
            for p in bank.predict_all(space.set(v), v).unwrap() {
                assert!((p.mean - 3.0).abs() < 0.05, "mean {}", p.mean);
            }
        }
    }

    #[test]
    fn training_loss_is_non_increasing_on_noiseless_linear_data() {
        let space = ProductSpace::generate(&[60, 60], 2, 5).unwrap();
        let lin = |s: &SynthonSet| (0..s.len()).map(|i| s.features(i)[0] - 0.5 * s.features(i)[1]).collect::<Vec<_>>();
        let ledger = scored(&space, vec![lin(space.set(0)), lin(space.set(1))], 600, 2);
        let x: Vec<f64> = ledger.entries().iter().flat_map(|e| {
            let mut row = space.set(0).features(e.candidate.index(0)).to_vec();
            row.extend_from_slice(space.set(1).features(e.candidate.index(1)));
            row
        }).collect();
        let x = Array2::from_shape_vec((ledger.len(), 4), x).unwrap();
        let y: Vec<f64> = ledger.entries().iter().map(|e| e.score).collect();
        // floor keeps the optimum finite on noiseless data
        let cfg = NetworkConfig { variance_floor: 1e-2, ..NetworkConfig::default() };
        for seed in 0..5 {
            let (_, report) = FeedForwardModel::fit(&cfg, ModelKind::Mve, x.view(), &y, seed, &[]).unwrap();
            let curve = &report.train_loss;
            assert!(curve.len() >= 10);
            for w in curve.windows(2) {
                assert!(w[1] <= w[0] + 0.5, "seed {seed}: {curve:?}");
            }
            assert!(*curve.last().unwrap() < curve[0] - 1.0);
        }
    }

    #[test]
    fn predicted_std_respects_floor() {
        let space = ProductSpace::generate(&[15, 15], 2, 6).unwrap();
        let ledger = scored(&space, vec![vec![0.0; 15], vec![0.0; 15]], 120, 3);
        let data = SynthonDataset::from_ledger(&ledger);
        for kind in [ModelKind::Mve, ModelKind::Dropout, ModelKind::Tabular] {
            let cfg = small_config(kind, Layout::PerVector);
            let floor = cfg.network.variance_floor.sqrt();
            let mut bank = SurrogateBank::new(cfg, 2);
            bank.fit(&space, &data, 1, 2).unwrap();
            for v in 0..2 {
                for p in bank.predict_all(space.set(v), v).unwrap() {
                    assert!(p.std >= floor, "{kind:?}: {}", p.std);
                }
            }
        }
    }

    #[test]
    fn dropout_statistics_match_recomputation() {
        let space = ProductSpace::generate(&[30, 30], 3, 8).unwrap();
        let tables = vec![(0..30).map(|i| i as f64 / 30.0).collect(), vec![0.1; 30]];
        let ledger = scored(&space, tables, 300, 4);
        let data = SynthonDataset::from_ledger(&ledger);
        let mut cfg = small_config(ModelKind::Dropout, Layout::PerVector);
        cfg.network.variance_floor = 1e-30;
        assert_eq!((cfg.network.dropout, cfg.network.mc_passes), (0.2, 10));
        let mut bank = SurrogateBank::new(cfg, 2);
        bank.fit(&space, &data, 2, 2).unwrap();
        let preds = bank.predict_all(space.set(0), 0).unwrap();
        let passes = bank.dropout_passes(space.set(0), 0).unwrap();
        assert_eq!(passes.len(), 10);
        for (i, p) in preds.iter().enumerate() {
            let xs: Vec<f64> = passes.iter().map(|pass| pass[i]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((p.mean - mean).abs() < 1e-12);
            assert!((p.std - sd).abs() < 1e-12);
        }
    }

    #[test]
    fn one_prediction_per_item_and_counter_is_sum_of_pools() {
        let space = ProductSpace::generate(&[1, 40], 2, 9).unwrap();
        let ledger = scored(&space, vec![vec![0.0], (0..40).map(|i| i as f64).collect()], 30, 5);
        let data = SynthonDataset::from_ledger(&ledger);
        for layout in [Layout::PerVector, Layout::OneModel] {
            let mut bank = SurrogateBank::new(small_config(ModelKind::Mve, layout), 2);
            bank.fit(&space, &data, 3, 2).unwrap();
            assert_eq!(bank.predict_all(space.set(0), 0).unwrap().len(), 1);
            assert_eq!(bank.predict_all(space.set(1), 1).unwrap().len(), 40);
            assert_eq!(bank.forward_passes(), 41);
        }
    }

    #[test]
    fn fit_is_deterministic_and_checkpoint_round_trips() {
        let space = ProductSpace::generate(&[12, 12], 2, 10).unwrap();
        let ledger = scored(&space, vec![(0..12).map(|i| i as f64).collect(), vec![0.0; 12]], 60, 6);
        let data = SynthonDataset::from_ledger(&ledger);
        let mut a = SurrogateBank::new(small_config(ModelKind::Mve, Layout::OneModel), 2);
        let mut b = SurrogateBank::new(small_config(ModelKind::Mve, Layout::OneModel), 2);
        a.fit(&space, &data, 4, 3).unwrap();
        b.fit(&space, &data, 4, 3).unwrap();
        let pa = a.predict_all(space.set(0), 0).unwrap();
        assert_eq!(pa, b.predict_all(space.set(0), 0).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        a.save(&path).unwrap();
        let c = SurrogateBank::load(&path, 2).unwrap();
        assert_eq!(pa, c.predict_all(space.set(0), 0).unwrap());
    }
}
