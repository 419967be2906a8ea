//! Rate constraints on the empirical quantile property of data subsets.
//!
//! A constraint asks that the fraction of a subset with `y <= f(x, τ_s)`
//! stays within `[τ_s − ε⁻, τ_s + ε⁺]`. Training uses a proxy Lagrangian:
//! the model descends on `loss + Σ λ · (smooth rate constraint)` where the
//! indicator is replaced by a sigmoid, while each multiplier ascends on the
//! true indicator-based constraint value.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Examples};
use crate::error::{Error, Result};
use crate::eval::empirical_rate;
use crate::model::QuantileModel;
use crate::train::{adam_step, AdamState};

/// Which rows a constraint applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "subset", rename_all = "snake_case")]
pub enum SubsetSelector {
    All,
    /// Rows whose `column` holds `value` (a category name or a number).
    Column { column: String, value: String },
}

impl SubsetSelector {
    pub fn label(&self) -> String {
        match self {
            SubsetSelector::All => "all".into(),
            SubsetSelector::Column { column, value } => format!("{column}={value}"),
        }
    }

    pub fn resolve(&self, data: &Dataset) -> Result<Vec<usize>> {
        let rows = match self {
            SubsetSelector::All => (0..data.len()).collect(),
            SubsetSelector::Column { column, value } => data.rows_matching(column, value)?,
        };
        if rows.is_empty() {
            return Err(Error::config(format!("subset '{}' selects no rows", self.label())));
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstraintSpec {
    #[serde(flatten)]
    pub selector: SubsetSelector,
    pub tau: f64,
    pub eps_minus: f64,
    pub eps_plus: f64,
}

impl RateConstraintSpec {
    pub fn new(selector: SubsetSelector, tau: f64, eps_minus: f64, eps_plus: f64) -> Self {
        RateConstraintSpec {
            selector,
            tau,
            eps_minus,
            eps_plus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("constraint tau must lie in (0, 1), got {}", self.tau)));
        }
        for e in [self.eps_minus, self.eps_plus] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config(format!("constraint slack must lie in [0, 1], got {e}")));
            }
        }
        Ok(())
    }

    /// Attaches the selected rows. `examples` must be `data` converted to
    /// model inputs, row for row.
    pub fn bind(&self, data: &Dataset, examples: &Examples) -> Result<BoundConstraint> {
        self.validate()?;
        if data.len() != examples.len() {
            return Err(Error::input("dataset and examples differ in length"));
        }
        let rows = self.selector.resolve(data)?;
        Ok(BoundConstraint {
            spec: self.clone(),
            data: examples.select(&rows),
        })
    }
}

/// A constraint together with the examples it is measured on.
#[derive(Debug, Clone)]
pub struct BoundConstraint {
    pub spec: RateConstraintSpec,
    pub data: Examples,
}

impl BoundConstraint {
    pub fn new(spec: RateConstraintSpec, data: Examples) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::config(format!("subset '{}' is empty", spec.selector.label())));
        }
        Ok(BoundConstraint { spec, data })
    }

    pub fn name(&self) -> String {
        format!("{}@{}", self.spec.selector.label(), self.spec.tau)
    }

    pub fn rate(&self, model: &QuantileModel) -> Result<f64> {
        empirical_rate(model, &self.data, self.spec.tau)
    }

    pub fn violation(&self, model: &QuantileModel) -> Result<(f64, f64)> {
        Ok(violation(&self.spec, self.rate(model)?))
    }
}

/// `(max(0, τ − ε⁻ − rate), max(0, rate − τ − ε⁺))`.
pub fn violation(spec: &RateConstraintSpec, rate: f64) -> (f64, f64) {
    (
        (spec.tau - spec.eps_minus - rate).max(0.0),
        (rate - spec.tau - spec.eps_plus).max(0.0),
    )
}

/// Signed constraint values `(τ − ε⁻ − rate, rate − τ − ε⁺)`; positive
/// means violated.
pub fn signed_violation(spec: &RateConstraintSpec, rate: f64) -> (f64, f64) {
    (spec.tau - spec.eps_minus - rate, rate - spec.tau - spec.eps_plus)
}

/// Largest one-sided violation over all constraints.
pub fn max_violation(model: &QuantileModel, constraints: &[BoundConstraint]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for c in constraints {
        let (lo, hi) = c.violation(model)?;
        worst = worst.max(lo).max(hi);
    }
    Ok(worst)
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Smoothed rate and its gradient over all model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateRate {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl SurrogateRate {
    /// Gradient direction that raises the rate; its negation lowers it.
    pub fn increase_direction(&self) -> &[f64] {
        &self.grad
    }

    pub fn decrease_direction(&self) -> Vec<f64> {
        self.grad.iter().map(|g| -g).collect()
    }
}

/// Mean of `sigmoid((f(x, τ) − y) / temperature)` over `rows` of `data`.
pub fn surrogate_rate_grad(
    model: &QuantileModel,
    data: &Examples,
    rows: &[usize],
    tau: f64,
    temperature: f64,
) -> Result<SurrogateRate> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if rows.is_empty() {
        return Err(Error::config("surrogate rate on an empty subset"));
    }
    let layout = model.layout();
    let mut grad = vec![0.0; layout.len];
    let inv_n = 1.0 / rows.len() as f64;
    let mut value = 0.0;
    for &i in rows {
        let x = data.x(i);
        let f = model.predict(x, tau)?;
        let s = sigmoid((f - data.y(i)) / temperature);
        value += s * inv_n;
        let ds = s * (1.0 - s) / temperature * inv_n;
        if ds != 0.0 {
            model.accumulate_grad(&layout, x, tau, ds, &mut grad);
        }
    }
    Ok(SurrogateRate { value, grad })
}

/// One logged training iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub snapshot: usize,
    pub objective: f64,
    pub max_violation: f64,
}

/// Lagrange multipliers (`[lower, upper]` per constraint) and iterate log.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub multipliers: Vec<[f64; 2]>,
    pub learning_rate: f64,
    pub temperature: f64,
    pub log: Vec<IterateRecord>,
}

impl MultiplierState {
    pub fn new(num_constraints: usize, learning_rate: f64, temperature: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::config("multiplier learning rate must be positive"));
        }
        if !(temperature > 0.0) {
            return Err(Error::config("surrogate temperature must be positive"));
        }
        Ok(MultiplierState {
            multipliers: vec![[0.0; 2]; num_constraints],
            learning_rate,
            temperature,
            log: Vec::new(),
        })
    }

    pub fn record(&mut self, snapshot: usize, objective: f64, max_violation: f64) {
        self.log.push(IterateRecord {
            snapshot,
            objective,
            max_violation,
        });
    }
}

/// Default surrogate temperature: 5% of the label standard deviation.
pub fn default_temperature(labels: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let sd = (labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        0.05 * sd
    } else {
        0.05
    }
}

/// Inputs of one constrained optimizer step.
pub struct LagrangianBatch<'a> {
    pub loss: f64,
    pub loss_grad: Vec<f64>,
    /// Rows of each constraint's data used for this step, one list per
    /// constraint.
    pub constraint_rows: &'a [Vec<usize>],
}

/// Per-step summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Batch rates per constraint before the step.
    pub rates: Vec<f64>,
}

/// Descends on `loss + Σ λ⁻(τ − ε⁻ − R̃) + λ⁺(R̃ − τ − ε⁺)` with the sigmoid
/// rate `R̃`, projects the model, then moves each multiplier by the signed
/// true constraint value on the same rows: `λ ← max(0, λ + η · g)`.
pub fn lagrangian_step(
    model: &mut QuantileModel,
    batch: LagrangianBatch<'_>,
    constraints: &[BoundConstraint],
    state: &mut MultiplierState,
    optimizer: &mut AdamState,
    projection_tol: f64,
) -> Result<StepReport> {
    if constraints.len() != state.multipliers.len() || constraints.len() != batch.constraint_rows.len() {
        return Err(Error::config("constraint, multiplier and row counts differ"));
    }
    if !batch.loss.is_finite() {
        return Err(Error::numerical("training loss is not finite", batch.loss));
    }
    let mut grad = batch.loss_grad;
    let mut rates = Vec::with_capacity(constraints.len());
    for ((c, rows), lam) in constraints.iter().zip(batch.constraint_rows).zip(&state.multipliers) {
        let mut below = 0usize;
        for &i in rows {
            if c.data.y(i) <= model.predict(c.data.x(i), c.spec.tau)? {
                below += 1;
            }
        }
        rates.push(if rows.is_empty() { f64::NAN } else { below as f64 / rows.len() as f64 });
        let coef = lam[1] - lam[0];
        if coef != 0.0 && !rows.is_empty() {
            let s = surrogate_rate_grad(model, &c.data, rows, c.spec.tau, state.temperature)?;
            for (g, sg) in grad.iter_mut().zip(&s.grad) {
                *g += coef * sg;
            }
        }
    }
    let mut params = model.params();
    adam_step(&mut params, &grad, optimizer)?;
    model.set_params(&params)?;
    *model = model.project(projection_tol)?;
    for ((c, lam), rate) in constraints.iter().zip(&mut state.multipliers).zip(&rates) {
        if rate.is_nan() {
            continue;
        }
        let (lo, hi) = signed_violation(&c.spec, *rate);
        lam[0] = (lam[0] + state.learning_rate * lo).max(0.0);
        lam[1] = (lam[1] + state.learning_rate * hi).max(0.0);
    }
    Ok(StepReport {
        loss: batch.loss,
        rates,
    })
}

/// Draws `min(size, n)` distinct rows of each constraint's data.
pub fn sample_constraint_rows<R: Rng + ?Sized>(constraints: &[BoundConstraint], size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    constraints
        .iter()
        .map(|c| {
            let n = c.data.len();
            let mut rows = sample(rng, n, size.min(n)).into_vec();
            rows.sort_unstable();
            rows
        })
        .collect()
}

/// Picks the logged iterate with the lowest objective among those whose
/// violation is at most `tolerance` (default: smallest violation + 0.005).
pub fn best_iterate(log: &[IterateRecord], tolerance: Option<f64>) -> Option<usize> {
    let min_viol = log.iter().map(|r| r.max_violation).fold(f64::INFINITY, f64::min);
    let tol = tolerance.unwrap_or(min_viol + 0.005);
    let feasible = log
        .iter()
        .filter(|r| r.max_violation <= tol)
        .min_by(|a, b| a.objective.total_cmp(&b.objective));
    feasible
        .or_else(|| log.iter().min_by(|a, b| a.max_violation.total_cmp(&b.max_violation)))
        .map(|r| r.snapshot)
}
