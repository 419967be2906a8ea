//! Simulated regression problems with closed-form conditional quantiles.
//!
//! Every family draws `x` uniformly on its domain and sets
//! `y = m(x) + ε(x)` with two-piece half-normal noise: with probability
//! `b / (a + b)` the noise is `+b·s(x)·|Z|`, otherwise `−a·s(x)·|Z|`, where
//! `Z ~ N(0, 1)` and `s(x) = noise_scale · (0.5 + t̄(x))`, with `t̄` the mean
//! of the coordinates rescaled to `[0, 1]`. The density is continuous at 0;
//! `a = b` gives symmetric noise and `a ≠ b` a skewed one.
//!
//! | family      | D | domain       | m(x)                                           | (a, b)   |
//! |-------------|---|--------------|------------------------------------------------|----------|
//! | sine-skew   | 1 | [-1, 1]      | `2 sin(πx)`                                    | given    |
//! | griewank    | 2 | [-5, 5]^2    | `1 + Σ x²/4000 − Π cos(x_i/√i)`                | (1, 3)   |
//! | michalewicz | 1 | [0, π]       | `−Σ sin(x_i) sin(i x_i²/π)^20`                 | (3, 1)   |
//! | ackley      | 9 | [-5, 5]^9    | `−20 e^{−0.2√(mean x²)} − e^{mean cos 2πx} + 20 + e` | (1, 1) |

use std::f64::consts::{E, PI};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ColumnSpec, Dataset, Schema};
use crate::error::{Error, Result};

/// True conditional quantile function of a data-generating process.
pub trait QuantileOracle {
    fn true_quantile(&self, x: &[f64], tau: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SimFamily {
    SineSkew { a: f64, b: f64 },
    Griewank,
    Michalewicz,
    Ackley,
}

fn default_noise_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(flatten)]
    pub family: SimFamily,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

impl SimFamily {
    pub fn dimension(&self) -> usize {
        match self {
            SimFamily::SineSkew { .. } | SimFamily::Michalewicz => 1,
            SimFamily::Griewank => 2,
            SimFamily::Ackley => 9,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            SimFamily::SineSkew { .. } => (-1.0, 1.0),
            SimFamily::Griewank | SimFamily::Ackley => (-5.0, 5.0),
            SimFamily::Michalewicz => (0.0, PI),
        }
    }

    /// Noise asymmetry `(a, b)`: left and right half-normal scales.
    pub fn skew(&self) -> (f64, f64) {
        match self {
            SimFamily::SineSkew { a, b } => (*a, *b),
            SimFamily::Griewank => (1.0, 3.0),
            SimFamily::Michalewicz => (3.0, 1.0),
            SimFamily::Ackley => (1.0, 1.0),
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match self {
            SimFamily::SineSkew { .. } => 2.0 * (PI * x[0]).sin(),
            SimFamily::Griewank => {
                let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
                let prod: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                    .product();
                1.0 + sum - prod
            }
            SimFamily::Michalewicz => -x
                .iter()
                .enumerate()
                .map(|(i, v)| v.sin() * ((i + 1) as f64 * v * v / PI).sin().powi(20))
                .sum::<f64>(),
            SimFamily::Ackley => {
                let d = x.len() as f64;
                let sq = (x.iter().map(|v| v * v).sum::<f64>() / d).sqrt();
                let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                -20.0 * (-0.2 * sq).exp() - cs.exp() + 20.0 + E
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimFamily::SineSkew { .. } => "sine-skew",
            SimFamily::Griewank => "griewank",
            SimFamily::Michalewicz => "michalewicz",
            SimFamily::Ackley => "ackley",
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.family.skew();
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::config("noise parameters a and b must be positive"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("noise_scale must be positive"));
        }
        if self.n == 0 {
            return Err(Error::config("simulation needs n >= 1"));
        }
        Ok(())
    }

    /// Positive noise modulation `s(x)`.
    pub fn noise_modulation(&self, x: &[f64]) -> f64 {
        let (lo, hi) = self.family.domain();
        let t = x.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).sum::<f64>() / x.len() as f64;
        self.noise_scale * (0.5 + t)
    }

    /// `τ`-quantile of the noise at `x`.
    pub fn noise_quantile(&self, x: &[f64], tau: f64) -> f64 {
        let (a, b) = self.family.skew();
        let s = self.noise_modulation(x);
        let p_neg = a / (a + b);
        let p_pos = b / (a + b);
        let n = std_normal();
        if tau <= p_neg {
            -a * s * n.inverse_cdf(1.0 - tau / (2.0 * p_neg))
        } else {
            b * s * n.inverse_cdf(0.5 + (tau - p_neg) / (2.0 * p_pos))
        }
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: (1..=self.family.dimension())
                .map(|i| ColumnSpec::continuous(format!("x{i}")))
                .collect(),
            label: "y".into(),
        }
    }

    /// Draws `n` examples. Example `i` uses its own ChaCha stream, so the
    /// output does not depend on the number of threads.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let d = self.family.dimension();
        let (lo, hi) = self.family.domain();
        let (a, b) = self.family.skew();
        let p_pos = b / (a + b);
        let pairs: Vec<(Vec<f64>, f64)> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64);
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
                let positive = rng.random::<f64>() < p_pos;
                let z: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                let s = self.noise_modulation(&x);
                let eps = if positive { b * s * z } else { -a * s * z };
                let y = self.family.mean(&x) + eps;
                (x, y)
            })
            .collect();
        let (rows, labels) = pairs.into_iter().unzip();
        let mut data = Dataset::new(self.schema(), rows, labels)?;
        data.sim = Some(self.clone());
        Ok(data)
    }
}

impl QuantileOracle for SimSpec {
    fn true_quantile(&self, x: &[f64], tau: f64) -> f64 {
        self.family.mean(x) + self.noise_quantile(x, tau)
    }
}

/// Sidecar path for a simulated CSV: `<file>.sim.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".sim.json");
    PathBuf::from(s)
}

pub fn write_sidecar(csv: &Path, spec: &SimSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(csv), text + "\n")?;
    Ok(())
}

/// Reads the sidecar of `csv` if one exists.
pub fn read_sidecar(csv: &Path) -> Result<Option<SimSpec>> {
    let p = sidecar_path(csv);
    if !p.exists() {
        return Ok(None);
    }
    let spec = serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Some(spec))
}

/// Exponential distribution with rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponential {
    pub lambda: f64,
}

impl Exponential {
    pub fn quantile(&self, tau: f64) -> f64 {
        -(1.0 - tau).ln() / self.lambda
    }
}

impl QuantileOracle for Exponential {
    fn true_quantile(&self, _x: &[f64], tau: f64) -> f64 {
        self.quantile(tau)
    }
}

/// Inverse-CDF sampling of `n` exponential draws.
pub fn sample_exponential(lambda: f64, n: usize, seed: u64) -> Result<(Vec<f64>, Exponential)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input("exponential rate must be positive"));
    }
    let dist = Exponential { lambda };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|_| dist.quantile(rng.random::<f64>())).collect();
    Ok((samples, dist))
}
