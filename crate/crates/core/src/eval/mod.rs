//! Evaluation metrics and classical unconditional quantile estimators.

pub mod unconditional;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Examples, QuantileOracle};
use crate::error::{Error, Result};
use crate::loss::pinball_unchecked;
use crate::model::QuantileModel;

/// Anything that predicts conditional quantiles.
pub trait QuantilePredictor: Sync {
    fn predict_quantile(&self, x: &[f64], tau: f64) -> Result<f64>;

    fn predict_quantiles(&self, x: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|&t| self.predict_quantile(x, t)).collect()
    }
}

impl QuantilePredictor for QuantileModel {
    fn predict_quantile(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.predict(x, tau)
    }

    fn predict_quantiles(&self, x: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        if taus.windows(2).all(|w| w[0] <= w[1]) {
            self.predict_curve(x, taus)
        } else {
            taus.iter().map(|&t| self.predict(x, t)).collect()
        }
    }
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn percentile_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::input("no quantiles requested"));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::input(format!("tau must lie in (0, 1), got {t}")));
    }
    Ok(())
}

fn check_sorted(taus: &[f64]) -> Result<()> {
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::input("taus must be sorted"));
    }
    Ok(())
}

/// Mean pinball loss for each requested τ and over all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinballSummary {
    pub per_tau: Vec<(f64, f64)>,
    pub mean: f64,
}

pub fn average_pinball<P: QuantilePredictor + ?Sized>(
    model: &P,
    data: &Examples,
    taus: &[f64],
) -> Result<PinballSummary> {
    check_taus(taus)?;
    if data.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    let per_example: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let preds = model.predict_quantiles(data.x(i), taus)?;
            Ok(preds
                .iter()
                .zip(taus)
                .map(|(p, t)| pinball_unchecked(data.y(i), *p, *t))
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let per_tau: Vec<(f64, f64)> = taus
        .iter()
        .enumerate()
        .map(|(j, t)| (*t, per_example.iter().map(|r| r[j]).sum::<f64>() / n))
        .collect();
    let mean = per_tau.iter().map(|p| p.1).sum::<f64>() / per_tau.len() as f64;
    Ok(PinballSummary { per_tau, mean })
}

/// Mean over `xs` and `taus` of the squared gap to the true quantile.
pub fn quantile_mse<P, O>(model: &P, oracle: &O, xs: &[Vec<f64>], taus: &[f64]) -> Result<f64>
where
    P: QuantilePredictor + ?Sized,
    O: QuantileOracle + Sync + ?Sized,
{
    check_taus(taus)?;
    if xs.is_empty() {
        return Err(Error::input("no evaluation inputs"));
    }
    let sums: Vec<f64> = xs
        .par_iter()
        .map(|x| {
            let preds = model.predict_quantiles(x, taus)?;
            Ok(preds
                .iter()
                .zip(taus)
                .map(|(p, t)| (p - oracle.true_quantile(x, *t)).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / (xs.len() * taus.len()) as f64)
}

/// Fraction of inputs whose predicted curve strictly decreases somewhere
/// along the sorted `taus`.
pub fn crossing_rate<P: QuantilePredictor + ?Sized>(model: &P, xs: &[Vec<f64>], taus: &[f64]) -> Result<f64> {
    check_taus(taus)?;
    check_sorted(taus)?;
    if xs.is_empty() {
        return Err(Error::input("no evaluation inputs"));
    }
    let crossed: Vec<bool> = xs
        .par_iter()
        .map(|x| {
            let c = model.predict_quantiles(x, taus)?;
            Ok(c.windows(2).any(|w| w[1] < w[0]))
        })
        .collect::<Result<_>>()?;
    Ok(crossed.iter().filter(|c| **c).count() as f64 / xs.len() as f64)
}

/// Fraction of `data` with `y <= f(x, tau)`.
pub fn empirical_rate<P: QuantilePredictor + ?Sized>(model: &P, data: &Examples, tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("rate requested on an empty subset"));
    }
    let mut below = 0usize;
    for i in 0..data.len() {
        if data.y(i) <= model.predict_quantile(data.x(i), tau)? {
            below += 1;
        }
    }
    Ok(below as f64 / data.len() as f64)
}

/// A named data subset with its target quantile.
#[derive(Debug, Clone)]
pub struct EvalSubset {
    pub name: String,
    pub tau: f64,
    pub data: Examples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRate {
    pub subset: String,
    pub tau: f64,
    pub rate: f64,
}

impl SubsetRate {
    pub fn abs_error(&self) -> f64 {
        (self.tau - self.rate).abs()
    }
}

pub fn subset_rates<P: QuantilePredictor + ?Sized>(model: &P, subsets: &[EvalSubset]) -> Result<Vec<SubsetRate>> {
    subsets
        .iter()
        .map(|s| {
            Ok(SubsetRate {
                subset: s.name.clone(),
                tau: s.tau,
                rate: empirical_rate(model, &s.data, s.tau)?,
            })
        })
        .collect()
}

/// `max_s |τ_s − rate_s|`.
pub fn max_quantile_violation<P: QuantilePredictor + ?Sized>(model: &P, subsets: &[EvalSubset]) -> Result<f64> {
    if subsets.is_empty() {
        return Err(Error::config("no subsets given"));
    }
    Ok(subset_rates(model, subsets)?
        .iter()
        .map(SubsetRate::abs_error)
        .fold(0.0, f64::max))
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::input("empty sample"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::input("sample contains NaN"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Smallest order statistic `y_(k)` with `k / n >= tau`.
pub fn sample_quantile(samples: &[f64], tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::input(format!("tau must lie in [0, 1], got {tau}")));
    }
    let s = sorted(samples)?;
    let n = s.len();
    let mut k = ((tau * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / n as f64 >= tau {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < tau {
        k += 1;
    }
    Ok(s[k - 1])
}

const BETA_TOL: f64 = 1e-10;
const BETA_TINY: f64 = 1e-300;
const BETA_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < BETA_TINY {
        d = BETA_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_TINY {
            d = BETA_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_TINY {
            c = BETA_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < BETA_TINY {
            d = BETA_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < BETA_TINY {
            c = BETA_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_TOL * 1e-3 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::input("beta parameters must be positive"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::input(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x) / b)
    }
}

/// Weights `I_{i/n}(α, β) − I_{(i−1)/n}(α, β)` with `α = (n+1)τ`,
/// `β = (n+1)(1−τ)`, for `i = 1..=n`.
pub fn harrell_davis_weights(n: usize, tau: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::input("empty sample"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::input(format!("tau must lie in (0, 1), got {tau}")));
    }
    let a = (n as f64 + 1.0) * tau;
    let b = (n as f64 + 1.0) * (1.0 - tau);
    let cdf = (0..=n)
        .map(|i| regularized_incomplete_beta(a, b, i as f64 / n as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(cdf.windows(2).map(|w| w[1] - w[0]).collect())
}

pub fn harrell_davis(samples: &[f64], tau: f64) -> Result<f64> {
    let s = sorted(samples)?;
    let w = harrell_davis_weights(s.len(), tau)?;
    Ok(w.iter().zip(&s).map(|(w, y)| w * y).sum())
}

/// Mean and 95% normal-approximation half-width `1.96 · s / √n`.
pub fn mean_ci(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::input("a confidence interval needs at least two values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * (var / n).sqrt()))
}

/// One metric value, optionally tied to a quantile and a subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub subset: Option<String>,
    pub tau: Option<f64>,
    pub value: f64,
    /// Half-width of the 95% interval when `value` is a mean over repeats.
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

/// What [`MetricReport::compute`] should include.
#[derive(Clone, Default)]
pub struct ReportSpec<'a> {
    pub taus: Vec<f64>,
    pub oracle: Option<&'a (dyn QuantileOracle + Sync)>,
    pub subsets: Vec<EvalSubset>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, subset: Option<&str>, tau: Option<f64>, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.into(),
            subset: subset.map(str::to_string),
            tau,
            value,
            ci_half_width: None,
        });
    }

    pub fn get(&self, metric: &str, subset: Option<&str>, tau: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.subset.as_deref() == subset && r.tau == tau)
            .map(|r| r.value)
    }

    /// Pinball per τ and overall, crossing rate on the data inputs, quantile
    /// MSE when an oracle is given, and subset rates when subsets are given.
    pub fn compute<P: QuantilePredictor + ?Sized>(model: &P, data: &Examples, spec: &ReportSpec) -> Result<Self> {
        let mut report = MetricReport::default();
        let pin = average_pinball(model, data, &spec.taus)?;
        for (t, v) in &pin.per_tau {
            report.push("pinball", None, Some(*t), *v);
        }
        report.push("mean_pinball", None, None, pin.mean);
        let mut taus = spec.taus.clone();
        taus.sort_by(f64::total_cmp);
        report.push("crossing_rate", None, None, crossing_rate(model, &data.xs, &taus)?);
        if let Some(oracle) = spec.oracle {
            report.push("quantile_mse", None, None, quantile_mse(model, oracle, &data.xs, &taus)?);
        }
        if !spec.subsets.is_empty() {
            let rates = subset_rates(model, &spec.subsets)?;
            for r in &rates {
                report.push("rate", Some(&r.subset), Some(r.tau), r.rate);
            }
            let worst = rates.iter().map(SubsetRate::abs_error).fold(0.0, f64::max);
            report.push("max_quantile_violation", None, None, worst);
        }
        Ok(report)
    }

    /// Averages matching rows across repeated reports and attaches 95%
    /// half-widths. Every report must have the same rows in the same order.
    pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports.first().ok_or_else(|| Error::input("no reports to aggregate"))?;
        let mut out = MetricReport::default();
        for (j, row) in first.rows.iter().enumerate() {
            let mut values = Vec::with_capacity(reports.len());
            for r in reports {
                let other = r
                    .rows
                    .get(j)
                    .filter(|o| o.metric == row.metric && o.subset == row.subset && o.tau == row.tau)
                    .ok_or_else(|| Error::input("reports have different rows"))?;
                values.push(other.value);
            }
            let (value, half) = if values.len() >= 2 {
                let (m, h) = mean_ci(&values)?;
                (m, Some(h))
            } else {
                (values[0], None)
            };
            out.rows.push(MetricRow {
                value,
                ci_half_width: half,
                ..row.clone()
            });
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["metric", "subset", "tau", "value", "ci_half_width"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.metric.clone(),
                r.subset.clone().unwrap_or_default(),
                opt(r.tau),
                r.value.to_string(),
                opt(r.ci_half_width),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Metric values keyed by `metric[subset]@tau`, handy for comparisons.
    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .map(|r| {
                let mut key = r.metric.clone();
                if let Some(s) = &r.subset {
                    key.push_str(&format!("[{s}]"));
                }
                if let Some(t) = r.tau {
                    key.push_str(&format!("@{t}"));
                }
                (key, r.value)
            })
            .collect()
    }
}
