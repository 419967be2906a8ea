//! Calibrated lattice ensembles with τ as a monotonic input.
//!
//! A [`QuantileModel`] computes
//!
//! ```text
//! f(x, τ) = bias + Σ_k w_k · lattice_k(calibrated features of k, c(τ))
//! ```
//!
//! where every feature passes through a 1-D calibrator into `[0, 1]`
//! (categorical features use one learned value per category), `c` is the τ
//! calibrator with `c(0) = 0` and `c(1) = 1`, and the combination weights are
//! nonnegative. With `non_crossing` every lattice is nondecreasing in its τ
//! input (always the last lattice dimension) and `c` is nondecreasing, so
//! predicted quantiles cannot cross.

mod config;
mod serialize;

pub use config::{FeatureKind, FeatureSpec, LatticeSpec, ModelConfig};
pub use serialize::MODEL_FORMAT_VERSION;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    check_monotone, pav_nondecreasing, project_monotone, DimVec, Grid, LatticeParams, MonotoneSpec,
    PiecewiseLinearFn,
};

/// Per-feature input transform into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Calibrator {
    Continuous { plf: PiecewiseLinearFn },
    Categorical { values: Vec<f64> },
}

impl Calibrator {
    fn num_params(&self) -> usize {
        match self {
            Calibrator::Continuous { plf } => plf.len(),
            Calibrator::Categorical { values } => values.len(),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Calibrator::Continuous { plf } => plf.output_values(),
            Calibrator::Categorical { values } => values,
        }
    }

    fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Calibrator::Continuous { plf } => plf.output_values_mut(),
            Calibrator::Categorical { values } => values,
        }
    }
}

/// One ensemble member: a lattice over a subset of features plus τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeUnit {
    /// Indices into the model's feature list, in lattice-dimension order.
    pub features: Vec<usize>,
    pub grid: Grid,
    pub theta: LatticeParams,
}

impl LatticeUnit {
    pub fn tau_dim(&self) -> usize {
        self.features.len()
    }
}

/// Outcome of [`QuantileModel::location_scale_residual`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocationScaleReport {
    pub residual: f64,
    /// Indices of inputs whose predicted scale `f(x,1) - f(x,0)` vanished.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    config: ModelConfig,
    calibrators: Vec<Calibrator>,
    tau_calibrator: PiecewiseLinearFn,
    lattices: Vec<LatticeUnit>,
    weights: Vec<f64>,
    bias: f64,
}

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub calibrators: Vec<usize>,
    pub tau_calibrator: usize,
    pub lattices: Vec<usize>,
    pub weights: usize,
    pub bias: usize,
    pub len: usize,
}

impl QuantileModel {
    /// Builds a model whose quantile curves are non-crossing from the start:
    /// identity-like calibrators, a linear ramp in τ across the output range
    /// and small noise that varies only along non-monotone dimensions.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [lo, hi] = config.output_range.unwrap_or([0.0, 1.0]);
        let span = hi - lo;
        let noise_scale = config.init_noise * if span > 0.0 { span } else { 1.0 };

        let calibrators = config
            .features
            .iter()
            .map(|f| {
                Ok(match &f.kind {
                    FeatureKind::Continuous { lower, upper } => Calibrator::Continuous {
                        plf: PiecewiseLinearFn::ramp(*lower, *upper, f.keypoints, 0.0, 1.0)?,
                    },
                    FeatureKind::Categorical { categories, .. } => {
                        let n = categories.len() as f64;
                        Calibrator::Categorical {
                            values: (0..categories.len()).map(|i| (i as f64 + 0.5) / n).collect(),
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tau_calibrator = PiecewiseLinearFn::ramp(0.0, 1.0, config.tau_calibrator_keypoints, 0.0, 1.0)?;

        let ensemble = config.resolved_ensemble();
        let mut lattices = Vec::with_capacity(ensemble.len());
        for spec in &ensemble {
            let features: Vec<usize> = spec
                .features
                .iter()
                .map(|n| config.feature_index(n).expect("validated"))
                .collect();
            let mut knots = vec![spec.knots; features.len()];
            knots.push(config.tau_knots);
            let grid = Grid::unit(&knots)?;
            let tau_dim = features.len();
            let frozen: Vec<bool> = features
                .iter()
                .map(|&j| config.features[j].monotone)
                .chain(std::iter::once(true))
                .collect();
            let noise: Vec<f64> = (0..grid.size())
                .map(|_| rng.random_range(-1.0..=1.0) * noise_scale)
                .collect();
            let theta = (0..grid.size())
                .map(|i| {
                    let mut coords = grid.coords(i);
                    let ramp = coords[tau_dim] as f64 / (config.tau_knots - 1) as f64;
                    for (c, f) in coords.iter_mut().zip(&frozen) {
                        if *f {
                            *c = 0;
                        }
                    }
                    lo + span * ramp + noise[grid.flat_index(&coords)]
                })
                .collect();
            lattices.push(LatticeUnit {
                features,
                grid,
                theta: LatticeParams(theta),
            });
        }
        let k = lattices.len() as f64;
        let weights = vec![1.0 / k; lattices.len()];
        let model = QuantileModel {
            config,
            calibrators,
            tau_calibrator,
            lattices,
            weights,
            bias: 0.0,
        };
        model.project(1e-9)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn calibrators(&self) -> &[Calibrator] {
        &self.calibrators
    }

    pub fn tau_calibrator(&self) -> &PiecewiseLinearFn {
        &self.tau_calibrator
    }

    pub fn lattices(&self) -> &[LatticeUnit] {
        &self.lattices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn num_features(&self) -> usize {
        self.config.features.len()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut off = 0;
        let calibrators = self
            .calibrators
            .iter()
            .map(|c| {
                let o = off;
                off += c.num_params();
                o
            })
            .collect();
        let tau_calibrator = off;
        off += self.tau_calibrator.len();
        let lattices = self
            .lattices
            .iter()
            .map(|l| {
                let o = off;
                off += l.theta.len();
                o
            })
            .collect();
        let weights = off;
        off += self.weights.len();
        let bias = off;
        ParamLayout {
            calibrators,
            tau_calibrator,
            lattices,
            weights,
            bias,
            len: off + 1,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }

    /// All trainable parameters in [`ParamLayout`] order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.calibrators {
            out.extend_from_slice(c.values());
        }
        out.extend_from_slice(self.tau_calibrator.output_values());
        for l in &self.lattices {
            out.extend_from_slice(l.theta.as_slice());
        }
        out.extend_from_slice(&self.weights);
        out.push(self.bias);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.num_params();
        if params.len() != n {
            return Err(Error::input(format!("expected {n} parameters, got {}", params.len())));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite model parameter", f64::NAN));
        }
        let mut it = params.iter().copied();
        for c in &mut self.calibrators {
            c.values_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.tau_calibrator
            .output_values_mut()
            .iter_mut()
            .for_each(|v| *v = it.next().unwrap());
        for l in &mut self.lattices {
            l.theta.0.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.weights.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.bias = it.next().unwrap();
        Ok(())
    }

    pub(crate) fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.features.len() {
            return Err(Error::input(format!(
                "expected {} features, got {}",
                self.config.features.len(),
                x.len()
            )));
        }
        for (v, spec) in x.iter().zip(&self.config.features) {
            match &spec.kind {
                FeatureKind::Continuous { .. } => {
                    if !v.is_finite() {
                        return Err(Error::input(format!("feature '{}' is not finite", spec.name)));
                    }
                }
                FeatureKind::Categorical { categories, .. } => {
                    if !(v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < categories.len()) {
                        return Err(Error::input(format!(
                            "feature '{}': unknown category index {v}",
                            spec.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_tau(tau: f64) -> Result<()> {
        if tau > 0.0 && tau < 1.0 {
            Ok(())
        } else {
            Err(Error::input(format!("tau must lie in (0, 1), got {tau}")))
        }
    }

    fn calibrate(&self, x: &[f64]) -> DimVec<f64> {
        x.iter()
            .zip(&self.calibrators)
            .map(|(v, c)| match c {
                Calibrator::Continuous { plf } => plf.evaluate(*v),
                Calibrator::Categorical { values } => values[*v as usize],
            })
            .collect()
    }

    /// Model output with the τ calibrator output `u` given directly; `u = 0`
    /// and `u = 1` are the τ endpoints.
    pub(crate) fn evaluate_calibrated(&self, z: &[f64], u: f64) -> f64 {
        let mut inputs: DimVec<f64> = DimVec::new();
        let mut out = self.bias;
        for (lat, w) in self.lattices.iter().zip(&self.weights) {
            inputs.clear();
            inputs.extend(lat.features.iter().map(|&j| z[j]));
            inputs.push(u);
            out += w * lat.grid.evaluate_unchecked(lat.theta.as_slice(), &inputs);
        }
        out
    }

    pub fn predict(&self, x: &[f64], tau: f64) -> Result<f64> {
        self.check_features(x)?;
        Self::check_tau(tau)?;
        Ok(self.predict_unchecked(x, tau))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64], tau: f64) -> f64 {
        let z = self.calibrate(x);
        self.evaluate_calibrated(&z, self.tau_calibrator.evaluate(tau))
    }

    /// Predictions at each of the sorted `taus` for one input.
    pub fn predict_curve(&self, x: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        if taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::input("taus must be sorted"));
        }
        let z = self.calibrate(x);
        taus.iter()
            .map(|&t| {
                Self::check_tau(t)?;
                Ok(self.evaluate_calibrated(&z, self.tau_calibrator.evaluate(t)))
            })
            .collect()
    }

    /// Value and gradient over all parameters in [`ParamLayout`] order.
    pub fn forward_with_grad(&self, x: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
        self.check_features(x)?;
        Self::check_tau(tau)?;
        let layout = self.layout();
        let mut grad = vec![0.0; layout.len];
        let v = self.accumulate_grad(&layout, x, tau, 1.0, &mut grad);
        Ok((v, grad))
    }

    /// Adds `scale · ∂f(x, τ)/∂params` into `grad` and returns `f(x, τ)`.
    /// Inputs must already be validated.
    pub(crate) fn accumulate_grad(&self, layout: &ParamLayout, x: &[f64], tau: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let z = self.calibrate(x);
        let u = self.tau_calibrator.evaluate(tau);
        let mut dz: DimVec<f64> = DimVec::from_elem(0.0, z.len());
        let mut du = 0.0;
        let mut inputs: DimVec<f64> = DimVec::new();
        let mut gx: DimVec<f64> = DimVec::new();
        let mut out = self.bias;
        for (k, (lat, &w)) in self.lattices.iter().zip(&self.weights).enumerate() {
            inputs.clear();
            inputs.extend(lat.features.iter().map(|&j| z[j]));
            inputs.push(u);
            gx.clear();
            gx.resize(inputs.len(), 0.0);
            let value = lat.grid.value_and_grad_x(lat.theta.as_slice(), &inputs, &mut gx);
            out += w * value;
            grad[layout.weights + k] += scale * value;
            let off = layout.lattices[k];
            lat.grid
                .for_each_corner(&inputs, |i, wt| grad[off + i] += scale * w * wt);
            for (d, &j) in lat.features.iter().enumerate() {
                dz[j] += w * gx[d];
            }
            du += w * gx[lat.tau_dim()];
        }
        grad[layout.bias] += scale;
        for (j, (cal, &v)) in self.calibrators.iter().zip(x).enumerate() {
            if dz[j] == 0.0 {
                continue;
            }
            let off = layout.calibrators[j];
            match cal {
                Calibrator::Continuous { plf } => {
                    for (i, wt) in plf.grad_outputs(v) {
                        grad[off + i] += scale * dz[j] * wt;
                    }
                }
                Calibrator::Categorical { .. } => grad[off + v as usize] += scale * dz[j],
            }
        }
        if du != 0.0 {
            for (i, wt) in self.tau_calibrator.grad_outputs(tau) {
                grad[layout.tau_calibrator + i] += scale * du * wt;
            }
        }
        out
    }

    fn lattice_monotone_spec(&self, lat: &LatticeUnit) -> MonotoneSpec {
        let mut dims: Vec<usize> = lat
            .features
            .iter()
            .enumerate()
            .filter(|(_, &j)| self.config.features[j].monotone)
            .map(|(d, _)| d)
            .collect();
        if self.config.non_crossing {
            dims.push(lat.tau_dim());
        }
        MonotoneSpec::new(dims)
    }

    /// Projects every parameter group onto its constraint set: calibrator
    /// outputs into `[0, 1]` (nondecreasing when monotone), `c(0) = 0` and
    /// `c(1) = 1`, monotone lattice dimensions, and nonnegative weights.
    pub fn project(&self, tol: f64) -> Result<Self> {
        let mut out = self.clone();
        for (cal, spec) in out.calibrators.iter_mut().zip(&self.config.features) {
            let values = cal.values_mut();
            if spec.monotone {
                pav_nondecreasing(values);
            }
            values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        {
            let c = out.tau_calibrator.output_values_mut();
            let n = c.len();
            c[0] = 0.0;
            c[n - 1] = 1.0;
            if self.config.non_crossing {
                pav_nondecreasing(&mut c[1..n - 1]);
            }
            c.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        for k in 0..out.lattices.len() {
            let spec = out.lattice_monotone_spec(&out.lattices[k]);
            let lat = &mut out.lattices[k];
            lat.theta = project_monotone(&lat.theta, &lat.grid, &spec, tol)?;
        }
        out.weights.iter_mut().for_each(|w| *w = w.max(0.0));
        Ok(out)
    }

    /// Largest violation of any model constraint (0 when feasible).
    pub fn constraint_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (cal, spec) in self.calibrators.iter().zip(&self.config.features) {
            let v = cal.values();
            for x in v {
                worst = worst.max(-x).max(x - 1.0);
            }
            if spec.monotone {
                for w in v.windows(2) {
                    worst = worst.max(w[0] - w[1]);
                }
            }
        }
        let c = self.tau_calibrator.output_values();
        worst = worst.max(c[0].abs()).max((c[c.len() - 1] - 1.0).abs());
        for x in c {
            worst = worst.max(-x).max(x - 1.0);
        }
        if self.config.non_crossing {
            for w in c.windows(2) {
                worst = worst.max(w[0] - w[1]);
            }
        }
        for lat in &self.lattices {
            let spec = self.lattice_monotone_spec(lat);
            let check = check_monotone(&lat.theta, &lat.grid, &spec, 0.0).expect("consistent lattice");
            worst = worst.max(check.worst_violation);
        }
        for w in &self.weights {
            worst = worst.max(-w);
        }
        worst
    }

    /// Maximum over `xs × taus` of `|(f(x,τ) − f(x,0)) / (f(x,1) − f(x,0)) − c(τ)|`.
    ///
    /// Only defined for two τ knots, where every conditional quantile
    /// function is an affine image of `c`.
    pub fn location_scale_residual(&self, xs: &[Vec<f64>], taus: &[f64]) -> Result<LocationScaleReport> {
        if self.config.tau_knots != 2 {
            return Err(Error::config("location-scale residual requires tau_knots = 2"));
        }
        let mut residual: f64 = 0.0;
        let mut skipped = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            self.check_features(x)?;
            let z = self.calibrate(x);
            let f0 = self.evaluate_calibrated(&z, 0.0);
            let f1 = self.evaluate_calibrated(&z, 1.0);
            let scale = f1 - f0;
            if scale.abs() <= 1e-12 * (f0.abs() + f1.abs()) || scale == 0.0 {
                skipped.push(i);
                continue;
            }
            for &t in taus {
                Self::check_tau(t)?;
                let f = self.evaluate_calibrated(&z, self.tau_calibrator.evaluate(t));
                let r = ((f - f0) / scale - self.tau_calibrator.evaluate(t)).abs();
                residual = residual.max(r);
            }
        }
        Ok(LocationScaleReport { residual, skipped })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        calibrators: Vec<Calibrator>,
        tau_calibrator: PiecewiseLinearFn,
        lattices: Vec<LatticeUnit>,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self> {
        config.validate()?;
        let model = QuantileModel {
            config,
            calibrators,
            tau_calibrator,
            lattices,
            weights,
            bias,
        };
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        let cfg = &self.config;
        if self.calibrators.len() != cfg.features.len() {
            return Err(Error::Format("calibrator count does not match features".into()));
        }
        for (c, f) in self.calibrators.iter().zip(&cfg.features) {
            let ok = match (c, &f.kind) {
                (Calibrator::Continuous { .. }, FeatureKind::Continuous { .. }) => true,
                (Calibrator::Categorical { values }, FeatureKind::Categorical { categories, .. }) => {
                    values.len() == categories.len()
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Format(format!("calibrator for '{}' does not match its feature", f.name)));
            }
        }
        if self.tau_calibrator.input_keypoints().first() != Some(&0.0)
            || self.tau_calibrator.input_keypoints().last() != Some(&1.0)
        {
            return Err(Error::Format("tau calibrator must span [0, 1]".into()));
        }
        if self.weights.len() != self.lattices.len() {
            return Err(Error::Format("one combination weight per lattice is required".into()));
        }
        for lat in &self.lattices {
            if lat.grid.dims() != lat.features.len() + 1 || lat.features.iter().any(|&j| j >= cfg.features.len()) {
                return Err(Error::Format("lattice dimensions do not match its features".into()));
            }
            if lat.grid.num_knots(lat.tau_dim()) != cfg.tau_knots {
                return Err(Error::Format("lattice tau dimension does not match tau_knots".into()));
            }
            lat.grid.check_params(&lat.theta)?;
        }
        Ok(())
    }
}
