use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous {
        lower: f64,
        upper: f64,
    },
    /// Values are fed to the model as the 0-based category index. `other`
    /// names the category that absorbs unseen values at load time.
    Categorical {
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        other: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub monotone: bool,
    #[serde(default = "default_keypoints")]
    pub keypoints: usize,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous { lower, upper },
            monotone: false,
            keypoints: default_keypoints(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                categories,
                other: None,
            },
            monotone: false,
            keypoints: default_keypoints(),
        }
    }

    pub fn with_monotone(mut self, monotone: bool) -> Self {
        self.monotone = monotone;
        self
    }

    pub fn with_keypoints(mut self, keypoints: usize) -> Self {
        self.keypoints = keypoints;
        self
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// Index of `value` among the categories, falling back to `other`.
    pub fn category_index(&self, value: &str) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { categories, other } => categories
                .iter()
                .position(|c| c == value)
                .or_else(|| other.as_ref().and_then(|o| categories.iter().position(|c| c == o))),
            FeatureKind::Continuous { .. } => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureKind::Continuous { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && upper > lower) {
                    return Err(Error::config(format!(
                        "feature '{}' needs finite bounds with upper > lower",
                        self.name
                    )));
                }
                if self.keypoints < 2 {
                    return Err(Error::config(format!(
                        "feature '{}' needs at least 2 calibrator keypoints",
                        self.name
                    )));
                }
            }
            FeatureKind::Categorical { categories, other } => {
                if categories.is_empty() {
                    return Err(Error::config(format!("feature '{}' has no categories", self.name)));
                }
                if self.monotone {
                    return Err(Error::config(format!(
                        "categorical feature '{}' cannot be monotone",
                        self.name
                    )));
                }
                if let Some(o) = other {
                    if !categories.contains(o) {
                        return Err(Error::config(format!(
                            "feature '{}': 'other' category '{o}' is not listed",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn default_keypoints() -> usize {
    10
}

fn default_knots() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_noise() -> f64 {
    0.01
}

/// One lattice of the ensemble. τ is always appended as the last input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub features: Vec<String>,
    /// Knots per feature dimension.
    #[serde(default = "default_knots")]
    pub knots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    /// Lattice knots along τ; 2 restricts every conditional distribution to
    /// the location-scale family of the τ calibrator.
    #[serde(default = "default_knots")]
    pub tau_knots: usize,
    #[serde(default = "default_keypoints")]
    pub tau_calibrator_keypoints: usize,
    /// Empty means a single lattice over all features.
    #[serde(default)]
    pub ensemble: Vec<LatticeSpec>,
    #[serde(default = "default_true")]
    pub non_crossing: bool,
    /// Label range used to initialize the τ ramp of each lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_range: Option<[f64; 2]>,
    /// Half-width of the uniform init noise on non-monotone dimensions,
    /// relative to the output range.
    #[serde(default = "default_noise")]
    pub init_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: Vec::new(),
            tau_knots: default_knots(),
            tau_calibrator_keypoints: default_keypoints(),
            ensemble: Vec::new(),
            non_crossing: true,
            output_range: None,
            init_noise: default_noise(),
        }
    }
}

impl ModelConfig {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Ensemble with the empty-means-all default applied.
    pub fn resolved_ensemble(&self) -> Vec<LatticeSpec> {
        if self.ensemble.is_empty() {
            vec![LatticeSpec {
                features: self.features.iter().map(|f| f.name.clone()).collect(),
                knots: default_knots(),
            }]
        } else {
            self.ensemble.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.features.iter().enumerate() {
            f.validate()?;
            if self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::config(format!("duplicate feature name '{}'", f.name)));
            }
        }
        if self.tau_knots < 2 {
            return Err(Error::config("tau_knots must be at least 2"));
        }
        if self.tau_calibrator_keypoints < 2 {
            return Err(Error::config("tau_calibrator_keypoints must be at least 2"));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(Error::config("init_noise must be a nonnegative number"));
        }
        if let Some([lo, hi]) = self.output_range {
            if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
                return Err(Error::config("output_range must be finite with hi >= lo"));
            }
        }
        let ensemble = self.resolved_ensemble();
        for (k, lat) in ensemble.iter().enumerate() {
            if lat.knots < 2 {
                return Err(Error::config(format!("lattice {k} needs at least 2 knots per feature")));
            }
            for (i, name) in lat.features.iter().enumerate() {
                if self.feature_index(name).is_none() {
                    return Err(Error::config(format!("lattice {k} references unknown feature '{name}'")));
                }
                if lat.features[..i].contains(name) {
                    return Err(Error::config(format!("lattice {k} lists feature '{name}' twice")));
                }
            }
        }
        for f in self.features.iter().filter(|f| f.monotone) {
            if !ensemble.iter().any(|l| l.features.contains(&f.name)) {
                return Err(Error::config(format!(
                    "monotone feature '{}' does not appear in any lattice",
                    f.name
                )));
            }
        }
        Ok(())
    }
}
