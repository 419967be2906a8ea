//! Unconditional quantile estimation from small samples: the sample
//! quantile, Harrell-Davis, and a linear-in-τ lattice model trained with a
//! Beta-distributed training quantile.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{harrell_davis, mean_ci, sample_quantile};
use crate::data::{sample_exponential, Examples};
use crate::error::{Error, Result};
use crate::loss::{expected_pinball_batch, TauDistribution, TauSampler};
use crate::model::{ModelConfig, QuantileModel};
use crate::train::{adam_step, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UqeDistribution {
    Exponential { lambda: f64 },
    /// Every draw equals `value`.
    Constant { value: f64 },
}

impl UqeDistribution {
    pub fn draw(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            UqeDistribution::Exponential { lambda } => Ok(sample_exponential(*lambda, n, seed)?.0),
            UqeDistribution::Constant { value } => Ok(vec![*value; n]),
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        match self {
            UqeDistribution::Exponential { lambda } => -(1.0 - tau).ln() / lambda,
            UqeDistribution::Constant { value } => *value,
        }
    }
}

/// Training settings for the linear-in-τ model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub epochs: usize,
    /// Examples per step; `None` uses the whole sample.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
}

impl Default for LinearFit {
    fn default() -> Self {
        LinearFit {
            epochs: 300,
            batch_size: None,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqeConfig {
    pub distribution: UqeDistribution,
    pub n: usize,
    pub taus: Vec<f64>,
    pub repeats: usize,
    /// Beta concentrations for the linear model; empty skips it.
    pub concentrations: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: LinearFit,
}

/// MSE of one estimator at one τ across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqeRow {
    pub estimator: String,
    pub concentration: Option<f64>,
    pub tau: f64,
    pub mse: f64,
    pub ci_half_width: f64,
}

/// Estimates from a single repeat, in the column order of
/// [`UqeResult::estimators`].
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatEstimates {
    pub repeat: usize,
    pub tau: f64,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqeResult {
    /// `(name, concentration)` per estimator column.
    pub estimators: Vec<(String, Option<f64>)>,
    pub rows: Vec<UqeRow>,
    pub repeats: Vec<RepeatEstimates>,
}

impl UqeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.repeats == 0 {
            return Err(Error::config("n and repeats must be at least 1"));
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::config("taus must be a nonempty list inside (0, 1)"));
        }
        if self.concentrations.iter().any(|c| !(*c >= 2.0 && c.is_finite())) {
            return Err(Error::config("Beta concentrations must be finite and >= 2"));
        }
        if self.fit.epochs == 0 || self.fit.batch_size == Some(0) || !(self.fit.learning_rate > 0.0) {
            return Err(Error::config("linear fit needs positive epochs, batch size and learning rate"));
        }
        if let UqeDistribution::Exponential { lambda } = self.distribution {
            if !(lambda > 0.0) {
                return Err(Error::config("exponential rate must be positive"));
            }
        }
        Ok(())
    }

    /// Per-repeat sample seed.
    pub fn sample_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }
}

/// Model `f(τ) = bias + w · (θ₀ + c(τ)(θ₁ − θ₀))` with a two-keypoint `c`,
/// i.e. linear in τ, trained on `samples` with `BetaMode(tau, concentration)`.
pub fn fit_linear_in_tau(samples: &[f64], tau: f64, concentration: f64, fit: &LinearFit, seed: u64) -> Result<QuantileModel> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let config = ModelConfig {
        tau_knots: 2,
        tau_calibrator_keypoints: 2,
        output_range: Some([lo, hi]),
        init_noise: 0.0,
        ..ModelConfig::default()
    };
    let mut model = QuantileModel::init(config, seed)?;
    let data = Examples::unconditional(samples);
    let sampler = TauSampler::new(&TauDistribution::BetaMode { mode: tau, concentration })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::with_learning_rate(model.num_params(), fit.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch_size = fit.batch_size.unwrap_or(samples.len()).max(1);
    for _ in 0..fit.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let (_, grad) = expected_pinball_batch(&model, &data, batch, &sampler, &mut rng)?;
            let mut p = model.params();
            adam_step(&mut p, &grad, &mut adam)?;
            model.set_params(&p)?;
            model = model.project(1e-9)?;
        }
    }
    Ok(model)
}

/// Runs every repeat (in parallel; results do not depend on thread count)
/// and reports the MSE of each estimator against the true quantile.
pub fn run_uqe(config: &UqeConfig) -> Result<UqeResult> {
    config.validate()?;
    let mut estimators: Vec<(String, Option<f64>)> = vec![("sample".into(), None), ("harrell_davis".into(), None)];
    estimators.extend(config.concentrations.iter().map(|c| ("linear".to_string(), Some(*c))));

    let jobs: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..config.taus.len()).map(move |t| (r, t)))
        .collect();
    let repeats: Vec<RepeatEstimates> = jobs
        .par_iter()
        .map(|&(r, ti)| {
            let tau = config.taus[ti];
            let samples = config.distribution.draw(config.n, config.sample_seed(r))?;
            let mut est = vec![sample_quantile(&samples, tau)?, harrell_davis(&samples, tau)?];
            for (ci, &c) in config.concentrations.iter().enumerate() {
                let fit_seed = config
                    .sample_seed(r)
                    .wrapping_mul(1_000_003)
                    .wrapping_add((ti * 1000 + ci) as u64);
                let model = fit_linear_in_tau(&samples, tau, c, &config.fit, fit_seed)?;
                est.push(model.predict(&[], tau)?);
            }
            Ok(RepeatEstimates {
                repeat: r,
                tau,
                estimates: est,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &tau in &config.taus {
        let truth = config.distribution.quantile(tau);
        for (j, (name, c)) in estimators.iter().enumerate() {
            let sq: Vec<f64> = repeats
                .iter()
                .filter(|r| r.tau == tau)
                .map(|r| (r.estimates[j] - truth).powi(2))
                .collect();
            let (mse, half) = if sq.len() >= 2 { mean_ci(&sq)? } else { (sq[0], 0.0) };
            rows.push(UqeRow {
                estimator: name.clone(),
                concentration: *c,
                tau,
                mse,
                ci_half_width: half,
            });
        }
    }
    Ok(UqeResult {
        estimators,
        rows,
        repeats,
    })
}
