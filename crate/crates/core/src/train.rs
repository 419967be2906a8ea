//! Adam and the projected stochastic training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Examples;
use crate::error::{Error, Result};
use crate::eval::{average_pinball, percentile_grid, PinballSummary};
use crate::loss::{pinball_batch_with_taus, TauDistribution, TauSampler};
use crate::model::QuantileModel;
use crate::rates::{
    best_iterate, default_temperature, lagrangian_step, max_violation, sample_constraint_rows, BoundConstraint,
    LagrangianBatch, MultiplierState,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self::with_learning_rate(num_params, 0.001)
    }

    pub fn with_learning_rate(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grad.len() || grad.len() != state.m.len() {
        return Err(Error::input(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::numerical("gradient is not finite", *g));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_multiplier_lr() -> f64 {
    0.01
}
fn default_projection_tol() -> f64 {
    1e-9
}
fn default_eval_taus() -> Vec<f64> {
    percentile_grid()
}

const VALIDATION_QUADRATURE: usize = 19;

/// What the per-epoch validation score measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Mean pinball loss over `eval_taus`.
    #[default]
    EvalTaus,
    /// Pinball loss averaged over the training quantile law (equal-mass
    /// quadrature), i.e. the training objective on held-out data.
    TrainingDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "uniform")]
    pub tau_distribution: TauDistribution,
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    /// Quantiles at which validation pinball loss is averaged.
    #[serde(default = "default_eval_taus")]
    pub eval_taus: Vec<f64>,
    #[serde(default)]
    pub validation: ValidationMetric,
    #[serde(default = "default_multiplier_lr")]
    pub multiplier_lr: f64,
    /// Sigmoid temperature for rate surrogates; defaults to 5% of the label
    /// standard deviation.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Violation tolerance for best-iterate selection in constrained runs.
    #[serde(default)]
    pub violation_tolerance: Option<f64>,
}

fn uniform() -> TauDistribution {
    TauDistribution::Uniform
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            learning_rate: default_learning_rate(),
            tau_distribution: uniform(),
            projection_tol: default_projection_tol(),
            eval_taus: default_eval_taus(),
            validation: ValidationMetric::EvalTaus,
            multiplier_lr: default_multiplier_lr(),
            temperature: None,
            violation_tolerance: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.projection_tol > 0.0) {
            return Err(Error::config("projection_tol must be positive"));
        }
        if self.eval_taus.is_empty() || self.eval_taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::config("eval_taus must be a nonempty list inside (0, 1)"));
        }
        self.tau_distribution.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training pinball loss over the epoch's batches.
    pub train_loss: f64,
    pub val_pinball: f64,
    /// Largest true rate-constraint violation after the epoch.
    pub max_violation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: QuantileModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
    /// Set when training stopped on an error after at least one epoch.
    pub stopped_early: Option<String>,
}

/// Mean pinball loss of `model` on `data` per τ and overall.
pub fn evaluate(model: &QuantileModel, data: &Examples, taus: &[f64]) -> Result<PinballSummary> {
    average_pinball(model, data, taus)
}

fn weighted_pinball(model: &QuantileModel, data: &Examples, taus: &[(f64, f64)]) -> Result<f64> {
    let t: Vec<f64> = taus.iter().map(|p| p.0).collect();
    let s = evaluate(model, data, &t)?;
    Ok(s.per_tau.iter().zip(taus).map(|((_, v), (_, w))| v * w).sum())
}

/// Trains `model` on `train` with projected Adam, one fresh τ per example per
/// batch, selecting the epoch with the best validation pinball (or, when
/// `constraints` is nonempty, the best iterate).
pub fn fit(
    model: QuantileModel,
    train: &Examples,
    val: &Examples,
    config: &TrainConfig,
    constraints: &[BoundConstraint],
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::input("training and validation data must be nonempty"));
    }
    let sampler = TauSampler::new(&config.tau_distribution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model.project(config.projection_tol)?;
    let mut adam = AdamState::with_learning_rate(model.num_params(), config.learning_rate);
    let temperature = config.temperature.unwrap_or_else(|| default_temperature(&train.ys));
    let mut multipliers = MultiplierState::new(constraints.len(), config.multiplier_lr, temperature)?;

    let val_taus: Vec<(f64, f64)> = match config.validation {
        ValidationMetric::EvalTaus => {
            let w = 1.0 / config.eval_taus.len() as f64;
            config.eval_taus.iter().map(|t| (*t, w)).collect()
        }
        ValidationMetric::TrainingDistribution => config.tau_distribution.quadrature(VALIDATION_QUADRATURE)?,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(config.epochs);
    let mut stopped_early = None;

    for epoch in 1..=config.epochs {
        let outcome = run_epoch(
            &mut model,
            train,
            config,
            constraints,
            &sampler,
            &mut rng,
            &mut order,
            &mut adam,
            &mut multipliers,
        )
        .and_then(|train_loss| {
            let val_pinball = weighted_pinball(&model, val, &val_taus)?;
            let viol = if constraints.is_empty() {
                None
            } else {
                Some(max_violation(&model, constraints)?)
            };
            Ok((train_loss, val_pinball, viol))
        });
        match outcome {
            Ok((train_loss, val_pinball, max_viol)) => {
                multipliers.record(snapshots.len(), val_pinball, max_viol.unwrap_or(0.0));
                snapshots.push(model.params());
                history.push(EpochRecord {
                    epoch,
                    train_loss,
                    val_pinball,
                    max_violation: max_viol,
                });
            }
            Err(e) if !snapshots.is_empty() => {
                stopped_early = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let selected = if constraints.is_empty() {
        history
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.val_pinball.total_cmp(&b.1.val_pinball))
            .map(|(i, _)| i)
    } else {
        best_iterate(&multipliers.log, config.violation_tolerance)
    }
    .expect("at least one epoch completed");
    model.set_params(&snapshots[selected])?;
    Ok(FitResult {
        model,
        history,
        selected_epoch: selected + 1,
        stopped_early,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut QuantileModel,
    train: &Examples,
    config: &TrainConfig,
    constraints: &[BoundConstraint],
    sampler: &TauSampler,
    rng: &mut ChaCha8Rng,
    order: &mut [usize],
    adam: &mut AdamState,
    multipliers: &mut MultiplierState,
) -> Result<f64> {
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let taus: Vec<f64> = batch.iter().map(|_| sampler.sample(rng)).collect();
        let (loss, grad) = pinball_batch_with_taus(model, train, batch, &taus)?;
        total += loss * batch.len() as f64;
        if constraints.is_empty() {
            let mut params = model.params();
            adam_step(&mut params, &grad, adam)?;
            model.set_params(&params)?;
            *model = model.project(config.projection_tol)?;
        } else {
            let rows = sample_constraint_rows(constraints, config.batch_size, rng);
            let batch = LagrangianBatch {
                loss,
                loss_grad: grad,
                constraint_rows: &rows,
            };
            lagrangian_step(model, batch, constraints, multipliers, adam, config.projection_tol)?;
        }
    }
    Ok(total / train.len() as f64)
}

/// Writes `epoch,train_loss,val_pinball,max_violation`; the last column is
/// empty for unconstrained runs.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["epoch", "train_loss", "val_pinball", "max_violation"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_pinball.to_string(),
            r.max_violation.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
