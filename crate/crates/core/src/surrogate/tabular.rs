//! Per-item conjugate Gaussian model with known observation variance.

use serde::{Deserialize, Serialize};

use super::{GaussianPrediction, SynthonDataset, TabularConfig};
use crate::error::{Error, Result};

const MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGaussian {
    prior_mean: f64,
    prior_variance: f64,
    obs_variance: f64,
    posteriors: Vec<Vec<Posterior>>,
}

/// Closed-form posterior of a normal mean after observing `ys` with known
/// variance, starting from a normal prior.
pub fn conjugate_posterior(prior_mean: f64, prior_variance: f64, obs_variance: f64, ys: &[f64]) -> (f64, f64) {
    let precision = 1.0 / prior_variance + ys.len() as f64 / obs_variance;
    let sum: f64 = ys.iter().sum();
    let mean = (prior_mean / prior_variance + sum / obs_variance) / precision;
    (mean, 1.0 / precision)
}

impl TabularGaussian {
    pub fn new(pool_sizes: &[usize], prior_mean: f64, prior_variance: f64, obs_variance: f64) -> Result<Self> {
        if !(prior_variance > 0.0) || !(obs_variance > 0.0) {
            return Err(Error::Config(format!(
                "tabular variances must be positive (prior {prior_variance}, observation {obs_variance})"
            )));
        }
        let prior = Posterior {
            mean: prior_mean,
            variance: prior_variance,
            count: 0,
        };
        Ok(Self {
            prior_mean,
            prior_variance,
            obs_variance,
            posteriors: pool_sizes.iter().map(|&n| vec![prior; n]).collect(),
        })
    }

    /// Priors from the data (mean and sample variance of all observed scores
    /// unless overridden), then every observation replayed in order.
    pub fn from_dataset(config: &TabularConfig, pool_sizes: &[usize], data: &SynthonDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Model("cannot fit a tabular model to an empty dataset".into()));
        }
        let ys = data.unique_scores();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = if ys.len() > 1 {
            ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            1.0
        };
        let var = var.max(MIN_VARIANCE);
        let obs = config.obs_variance.unwrap_or(var);
        let mut model = Self::new(
            pool_sizes,
            config.prior_mean.unwrap_or(mean),
            config.prior_variance.unwrap_or(var),
            obs,
        )?;
        for p in data.points() {
            model.observe(p.vector, p.item, p.y);
        }
        Ok(model)
    }

    pub fn observe(&mut self, vector: usize, item: usize, y: f64) {
        let post = &mut self.posteriors[vector][item];
        let precision = 1.0 / post.variance + 1.0 / self.obs_variance;
        post.mean = (post.mean / post.variance + y / self.obs_variance) / precision;
        post.variance = 1.0 / precision;
        post.count += 1;
    }

    pub fn posterior(&self, vector: usize, item: usize) -> Posterior {
        self.posteriors[vector][item]
    }

    pub fn prior(&self) -> (f64, f64, f64) {
        (self.prior_mean, self.prior_variance, self.obs_variance)
    }

    /// Posterior over each item's mean score.
    pub fn predict(&self, vector: usize) -> Vec<GaussianPrediction> {
        self.posteriors[vector]
            .iter()
            .map(|p| GaussianPrediction {
                mean: p.mean,
                std: p.variance.sqrt(),
            })
            .collect()
    }

    pub fn pool_len(&self, vector: usize) -> usize {
        self.posteriors[vector].len()
    }
}
