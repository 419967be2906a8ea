//! Pinball loss and the expected pinball loss over a random quantile `T ~ P_T`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::distribution::{Beta as BetaLaw, ContinuousCDF};
use serde::{Deserialize, Serialize};

use crate::data::Examples;
use crate::error::{Error, Result};
use crate::model::QuantileModel;

/// Sampled quantiles are clipped to `[TAU_CLIP, 1 - TAU_CLIP]`.
pub const TAU_CLIP: f64 = 1e-4;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// `max(τ(y − ŷ), (τ − 1)(y − ŷ))`.
pub fn pinball(y: f64, yhat: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_unchecked(y, yhat, tau))
}

#[inline]
pub(crate) fn pinball_unchecked(y: f64, yhat: f64, tau: f64) -> f64 {
    let r = y - yhat;
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Subgradient of the pinball loss in `ŷ`; 0 is chosen at `y = ŷ`.
#[inline]
pub fn pinball_subgrad_yhat(y: f64, yhat: f64, tau: f64) -> f64 {
    if y > yhat {
        -tau
    } else if y < yhat {
        1.0 - tau
    } else {
        0.0
    }
}

/// Sampling law for the training quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TauDistribution {
    Uniform,
    /// Finite set of quantiles; equal probabilities unless `probs` is given.
    Discrete {
        taus: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<f64>>,
    },
    /// Beta law with mode `mode` and `α + β = concentration`; concentration 2
    /// is the uniform distribution, large values approach `Point(mode)`.
    BetaMode { mode: f64, concentration: f64 },
    Point { tau: f64 },
}

impl TauDistribution {
    /// `(α, β) = (mode·(C−2) + 1, (1−mode)·(C−2) + 1)`.
    pub fn beta_params(mode: f64, concentration: f64) -> (f64, f64) {
        let k = concentration - 2.0;
        (mode * k + 1.0, (1.0 - mode) * k + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TauDistribution::Uniform => Ok(()),
            TauDistribution::Point { tau } => check_tau(*tau),
            TauDistribution::BetaMode { mode, concentration } => {
                check_tau(*mode)?;
                if !(*concentration >= 2.0 && concentration.is_finite()) {
                    return Err(Error::config(format!(
                        "beta concentration must be a finite number >= 2, got {concentration}"
                    )));
                }
                Ok(())
            }
            TauDistribution::Discrete { taus, probs } => {
                if taus.is_empty() {
                    return Err(Error::config("discrete tau distribution needs at least one tau"));
                }
                for t in taus {
                    check_tau(*t)?;
                }
                if let Some(p) = probs {
                    if p.len() != taus.len() {
                        return Err(Error::config("discrete probabilities must match taus"));
                    }
                    if p.iter().any(|v| !(*v >= 0.0)) {
                        return Err(Error::config("discrete probabilities must be nonnegative"));
                    }
                    let s: f64 = p.iter().sum();
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::config(format!("discrete probabilities sum to {s}, not 1")));
                    }
                }
                Ok(())
            }
        }
    }
}

impl TauDistribution {
    /// Deterministic `(τ, weight)` pairs whose weighted pinball average
    /// approximates the expectation over this law: `m` equal-mass midpoints
    /// for continuous laws, the support itself for discrete ones.
    pub fn quadrature(&self, m: usize) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        if m == 0 {
            return Err(Error::config("quadrature needs at least one point"));
        }
        let mids = (0..m).map(|j| (j as f64 + 0.5) / m as f64);
        let w = 1.0 / m as f64;
        let clip = |t: f64| t.clamp(TAU_CLIP, 1.0 - TAU_CLIP);
        Ok(match self {
            TauDistribution::Uniform => mids.map(|p| (clip(p), w)).collect(),
            TauDistribution::Point { tau } => vec![(*tau, 1.0)],
            TauDistribution::BetaMode { mode, concentration } => {
                let (a, b) = Self::beta_params(*mode, *concentration);
                let law = BetaLaw::new(a, b).map_err(|e| Error::config(e.to_string()))?;
                mids.map(|p| (clip(law.inverse_cdf(p)), w)).collect()
            }
            TauDistribution::Discrete { taus, probs } => {
                let n = taus.len() as f64;
                taus.iter()
                    .enumerate()
                    .map(|(i, t)| (*t, probs.as_ref().map_or(1.0 / n, |p| p[i])))
                    .collect()
            }
        })
    }
}

/// Prepared sampler for a [`TauDistribution`].
#[derive(Debug, Clone)]
pub struct TauSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Uniform,
    Point(f64),
    Beta(Beta<f64>),
    Discrete(Vec<f64>, Option<WeightedIndex<f64>>),
}

impl TauSampler {
    pub fn new(dist: &TauDistribution) -> Result<Self> {
        dist.validate()?;
        let kind = match dist {
            TauDistribution::Uniform => SamplerKind::Uniform,
            TauDistribution::Point { tau } => SamplerKind::Point(*tau),
            TauDistribution::BetaMode { mode, concentration } => {
                let (a, b) = TauDistribution::beta_params(*mode, *concentration);
                SamplerKind::Beta(Beta::new(a, b).map_err(|e| Error::config(e.to_string()))?)
            }
            TauDistribution::Discrete { taus, probs } => {
                let w = match probs {
                    Some(p) => Some(WeightedIndex::new(p).map_err(|e| Error::config(e.to_string()))?),
                    None => None,
                };
                SamplerKind::Discrete(taus.clone(), w)
            }
        };
        Ok(TauSampler { kind })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = match &self.kind {
            SamplerKind::Uniform => rng.random::<f64>(),
            SamplerKind::Point(t) => *t,
            SamplerKind::Beta(b) => b.sample(rng),
            SamplerKind::Discrete(taus, None) => taus[rng.random_range(0..taus.len())],
            SamplerKind::Discrete(taus, Some(w)) => taus[w.sample(rng)],
        };
        t.clamp(TAU_CLIP, 1.0 - TAU_CLIP)
    }
}

pub fn sample_tau<R: Rng + ?Sized>(dist: &TauDistribution, rng: &mut R) -> Result<f64> {
    Ok(TauSampler::new(dist)?.sample(rng))
}

/// Mean pinball loss over `batch` with the given per-example quantiles, and
/// its gradient over all model parameters.
pub fn pinball_batch_with_taus(
    model: &QuantileModel,
    data: &Examples,
    batch: &[usize],
    taus: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if taus.len() != batch.len() {
        return Err(Error::input("one tau per batch example is required"));
    }
    let layout = model.layout();
    let mut grad = vec![0.0; layout.len];
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (&i, &tau) in batch.iter().zip(taus) {
        check_tau(tau)?;
        let x = data.x(i);
        let y = data.y(i);
        model.check_features(x)?;
        let yhat = model.predict_unchecked(x, tau);
        loss += pinball_unchecked(y, yhat, tau) * inv_n;
        let s = pinball_subgrad_yhat(y, yhat, tau) * inv_n;
        if s != 0.0 {
            model.accumulate_grad(&layout, x, tau, s, &mut grad);
        }
    }
    if !loss.is_finite() {
        return Err(Error::numerical("batch loss is not finite", loss));
    }
    Ok((loss, grad))
}

/// Draws one fresh τ per example from `sampler` and evaluates
/// [`pinball_batch_with_taus`].
pub fn expected_pinball_batch<R: Rng + ?Sized>(
    model: &QuantileModel,
    data: &Examples,
    batch: &[usize],
    sampler: &TauSampler,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let taus: Vec<f64> = batch.iter().map(|_| sampler.sample(rng)).collect();
    pinball_batch_with_taus(model, data, batch, &taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pinball_examples() {
        assert!((pinball(10.0, 0.0, 0.9).unwrap() - 9.0).abs() < 1e-12);
        assert!((pinball(0.0, 10.0, 0.9).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pinball(3.0, 3.0, 0.3).unwrap(), 0.0);
        assert!(pinball(1.0, 0.0, 1.0).is_err());
        assert!(pinball(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn subgradient_cases() {
        assert_eq!(pinball_subgrad_yhat(10.0, 0.0, 0.9), -0.9);
        assert!((pinball_subgrad_yhat(0.0, 10.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(pinball_subgrad_yhat(1.0, 1.0, 0.9), 0.0);
    }

    #[test]
    fn point_distribution_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = TauSampler::new(&TauDistribution::Point { tau: 0.5 }).unwrap();
        assert!((0..100).all(|_| s.sample(&mut rng) == 0.5));
    }

    #[test]
    fn beta_mode_parameters() {
        assert_eq!(TauDistribution::beta_params(0.5, 2.0), (1.0, 1.0));
        let (a, b) = TauDistribution::beta_params(0.9, 1000.0);
        assert!((a + b - 1000.0).abs() < 1e-9);
        // mode of Beta(a, b) for a, b > 1
        assert!(((a - 1.0) / (a + b - 2.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn discrete_respects_probabilities() {
        let d = TauDistribution::Discrete {
            taus: vec![0.1, 0.9],
            probs: Some(vec![0.25, 0.75]),
        };
        let s = TauSampler::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let hi = (0..n).filter(|_| s.sample(&mut rng) == 0.9).count() as f64 / n as f64;
        assert!((hi - 0.75).abs() < 0.01);
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(TauSampler::new(&TauDistribution::BetaMode { mode: 0.5, concentration: 1.5 }).is_err());
        assert!(TauSampler::new(&TauDistribution::BetaMode { mode: 1.0, concentration: 10.0 }).is_err());
        assert!(TauSampler::new(&TauDistribution::Point { tau: 1.2 }).is_err());
        assert!(TauSampler::new(&TauDistribution::Discrete { taus: vec![], probs: None }).is_err());
        assert!(TauSampler::new(&TauDistribution::Discrete {
            taus: vec![0.2, 0.4],
            probs: Some(vec![0.5, 0.6])
        })
        .is_err());
    }

    #[test]
    fn quadrature_weights_and_locations() {
        let q = TauDistribution::Uniform.quadrature(4).unwrap();
        assert_eq!(q, vec![(0.125, 0.25), (0.375, 0.25), (0.625, 0.25), (0.875, 0.25)]);
        let q = TauDistribution::BetaMode { mode: 0.5, concentration: 1e4 }.quadrature(9).unwrap();
        assert!(q.iter().all(|(t, _)| (t - 0.5).abs() < 0.02));
        assert!((q.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let d = TauDistribution::Discrete { taus: vec![0.1, 0.9], probs: None };
        assert_eq!(d.quadrature(50).unwrap(), vec![(0.1, 0.5), (0.9, 0.5)]);
    }

    #[test]
    fn samples_are_clipped() {
        let s = TauSampler::new(&TauDistribution::BetaMode {
            mode: 0.5,
            concentration: 2.0,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let t = s.sample(&mut rng);
            assert!((TAU_CLIP..=1.0 - TAU_CLIP).contains(&t));
        }
    }
}
