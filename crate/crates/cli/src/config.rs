//! Run configuration: one TOML file per experiment.
//!
//! Any value can be swept by listing alternatives under `[grid]`, keyed by a
//! dotted path into the rest of the file. `*` matches every element of an
//! array, so `"model.features.*.keypoints" = [5, 10]` sets all calibrators.
//! The cartesian product of all grid entries is expanded into runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use quantlat::data::{
    load_csv, read_sidecar, split, ColumnKind, SimFamily, SimSpec, SplitMode,
};
use quantlat::eval::percentile_grid;
use quantlat::eval::unconditional::UqeConfig;
use quantlat::{Dataset, FeatureSpec, ModelConfig, RateConstraintSpec, Schema, SubsetSelector, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub constraints: Vec<RateConstraintSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub uqe: Option<UqeConfig>,
}

/// Simulation settings; seeds come from the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSource {
    #[serde(flatten)]
    pub family: SimFamily,
    /// Training rows.
    pub n: usize,
    #[serde(default)]
    pub validation_n: Option<usize>,
    #[serde(default)]
    pub test_n: Option<usize>,
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Sim(SimSource),
    /// Pre-split files. The schema falls back to the simulation sidecar.
    Files {
        train: PathBuf,
        validation: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        schema: Option<Schema>,
    },
    /// One file split into train, validation and test.
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Option<Schema>,
        split: SplitMode,
    },
}

/// A quantile-rate check on a subset, reported by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetSpec {
    #[serde(flatten)]
    pub selector: SubsetSelector,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    #[default]
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "percentile_grid")]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub subsets: Vec<SubsetSpec>,
    #[serde(default)]
    pub split: Split,
    /// Fresh simulated test sets to average over (simulated data only).
    #[serde(default = "one_usize")]
    pub repeats: usize,
    /// Inputs at which quantile curves are written.
    #[serde(default = "curve_points")]
    pub curve_points: usize,
}

fn one_usize() -> usize {
    1
}

fn curve_points() -> usize {
    100
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            taus: percentile_grid(),
            subsets: Vec::new(),
            split: Split::Test,
            repeats: 1,
            curve_points: curve_points(),
        }
    }
}

/// One expanded run: its configuration and the grid values that produced it.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub assignment: Vec<(String, String)>,
}

/// A loaded configuration file before grid expansion.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub value: toml::Table,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir, seed, out)
    }

    pub fn from_str(text: &str, base_dir: PathBuf, seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
        if let Some(s) = seed {
            value.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        if let Some(o) = out {
            value.insert("out".into(), toml::Value::String(o.display().to_string()));
        }
        Ok(LoadedConfig { value, base_dir })
    }

    /// SHA-256 of the effective configuration in canonical JSON form. The
    /// output directory is left out: it does not change any result.
    pub fn hash(&self) -> String {
        let mut value = self.value.clone();
        value.remove("out");
        let json = serde_json::to_vec(&value).expect("TOML values serialize to JSON");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.value.get("seed").and_then(toml::Value::as_integer).unwrap_or(0) as u64
    }

    pub fn out_dir(&self) -> PathBuf {
        let out = self.value.get("out").and_then(toml::Value::as_str).unwrap_or("out");
        self.resolve(Path::new(out))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Expands `[grid]` into one configuration per combination, in
    /// lexicographic order of grid keys with the last key varying fastest.
    pub fn runs(&self) -> CliResult<Vec<Run>> {
        let mut base = self.value.clone();
        let grid = match base.remove("grid") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(CliError::config("[grid] must be a table of lists")),
        };
        let mut axes: Vec<(String, Vec<toml::Value>)> = Vec::new();
        for (key, values) in grid {
            match values {
                toml::Value::Array(v) if !v.is_empty() => axes.push((key, v)),
                _ => return Err(CliError::config(format!("grid entry '{key}' must be a nonempty list"))),
            }
        }
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let mut runs = Vec::with_capacity(total);
        for mut index in 0..total {
            let mut table = base.clone();
            let mut assignment = Vec::with_capacity(axes.len());
            for (key, values) in axes.iter().rev() {
                let v = &values[index % values.len()];
                index /= values.len();
                let path: Vec<&str> = key.split('.').collect();
                if set_path(&mut table, &path, v) == 0 {
                    return Err(CliError::config(format!("grid key '{key}' does not match the configuration")));
                }
                assignment.push((key.clone(), value_label(v)));
            }
            assignment.reverse();
            let mut config: RunConfig = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| CliError::config(e.to_string()))?;
            config.resolve_paths(self);
            config.validate()?;
            runs.push(Run { config, assignment });
        }
        Ok(runs)
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Sets `value` at `path`, creating the final key when missing. Returns the
/// number of places written.
fn set_path(table: &mut toml::Table, path: &[&str], value: &toml::Value) -> usize {
    let (head, rest) = match path.split_first() {
        Some(p) => p,
        None => return 0,
    };
    if rest.is_empty() {
        table.insert(head.to_string(), value.clone());
        return 1;
    }
    let child = table
        .entry(head.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    set_in_value(child, rest, value)
}

fn set_in_value(target: &mut toml::Value, path: &[&str], value: &toml::Value) -> usize {
    match target {
        toml::Value::Table(t) => set_path(t, path, value),
        toml::Value::Array(items) => {
            let (head, rest) = path.split_first().expect("nonempty path");
            let chosen: Vec<usize> = if *head == "*" {
                (0..items.len()).collect()
            } else {
                match head.parse::<usize>() {
                    Ok(i) if i < items.len() => vec![i],
                    _ => return 0,
                }
            };
            chosen
                .into_iter()
                .map(|i| {
                    if rest.is_empty() {
                        items[i] = value.clone();
                        1
                    } else {
                        set_in_value(&mut items[i], rest, value)
                    }
                })
                .sum()
        }
        _ => 0,
    }
}

impl RunConfig {
    fn resolve_paths(&mut self, loaded: &LoadedConfig) {
        self.out = Some(loaded.out_dir());
        match &mut self.data {
            Some(DataSource::Files { train, validation, test, .. }) => {
                *train = loaded.resolve(train);
                *validation = loaded.resolve(validation);
                if let Some(t) = test {
                    *t = loaded.resolve(t);
                }
            }
            Some(DataSource::Csv { path, .. }) => *path = loaded.resolve(path),
            _ => {}
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        for c in &self.constraints {
            c.validate()?;
        }
        let taus_ok = |t: &f64| *t > 0.0 && *t < 1.0;
        if self.eval.taus.is_empty() || !self.eval.taus.iter().all(taus_ok) {
            return Err(CliError::config("eval.taus must be a nonempty list inside (0, 1)"));
        }
        if !self.eval.subsets.iter().all(|s| taus_ok(&s.tau)) {
            return Err(CliError::config("subset taus must lie inside (0, 1)"));
        }
        if self.eval.repeats == 0 {
            return Err(CliError::config("eval.repeats must be at least 1"));
        }
        if let Some(u) = &self.uqe {
            u.validate()?;
        }
        Ok(())
    }

    pub fn data_source(&self) -> CliResult<&DataSource> {
        self.data.as_ref().ok_or_else(|| CliError::config("this command needs a [data] section"))
    }
}

/// Train, validation and optional test data plus the simulation behind
/// them, if any.
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    pub fn get(&self, which: Split) -> CliResult<&Dataset> {
        match which {
            Split::Train => Ok(&self.train),
            Split::Validation => Ok(&self.validation),
            Split::Test => self.test.as_ref().ok_or_else(|| CliError::config("no test data configured")),
        }
    }
}

impl SimSource {
    /// Specs for the train, validation and test draws, seeded with the run
    /// seed plus 0, 1 and 2.
    pub fn specs(&self, seed: u64) -> [SimSpec; 3] {
        let spec = |n: usize, k: u64| SimSpec {
            family: self.family.clone(),
            n,
            seed: seed.wrapping_add(k),
            noise_scale: self.noise_scale,
        };
        [
            spec(self.n, 0),
            spec(self.validation_n.unwrap_or(self.n), 1),
            spec(self.test_n.unwrap_or(self.n), 2),
        ]
    }
}

fn schema_for(path: &Path, schema: &Option<Schema>) -> CliResult<Schema> {
    if let Some(s) = schema {
        s.validate()?;
        return Ok(s.clone());
    }
    match read_sidecar(path)? {
        Some(spec) => Ok(spec.schema()),
        None => Err(CliError::config(format!(
            "no schema given and no simulation sidecar next to {}",
            path.display()
        ))),
    }
}

fn load_with_sidecar(path: &Path, schema: &Schema) -> CliResult<Dataset> {
    let mut d = load_csv(path, schema)?;
    d.sim = read_sidecar(path)?;
    Ok(d)
}

pub fn load_splits(source: &DataSource, seed: u64) -> CliResult<Splits> {
    match source {
        DataSource::Sim(sim) => {
            let [a, b, c] = sim.specs(seed);
            Ok(Splits {
                train: a.generate()?,
                validation: b.generate()?,
                test: Some(c.generate()?),
            })
        }
        DataSource::Files { train, validation, test, schema } => {
            let schema = schema_for(train, schema)?;
            Ok(Splits {
                train: load_with_sidecar(train, &schema)?,
                validation: load_with_sidecar(validation, &schema)?,
                test: test.as_ref().map(|t| load_with_sidecar(t, &schema)).transpose()?,
            })
        }
        DataSource::Csv { path, schema, split: mode } => {
            let schema = schema_for(path, schema)?;
            let all = load_with_sidecar(path, &schema)?;
            let (a, b, c) = split(&all, mode)?;
            Ok(Splits {
                train: a,
                validation: b,
                test: (!c.is_empty()).then_some(c),
            })
        }
    }
}

/// Features used when the config lists none: every schema column, with
/// continuous bounds taken from the simulation domain or the training data.
pub fn default_features(train: &Dataset) -> Vec<FeatureSpec> {
    train
        .schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| match &c.kind {
            ColumnKind::Continuous => {
                let (lo, hi) = match &train.sim {
                    Some(sim) => sim.family.domain(),
                    None => {
                        let lo = train.rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                        let hi = train.rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                        if hi > lo {
                            (lo, hi)
                        } else {
                            (lo - 0.5, lo + 0.5)
                        }
                    }
                };
                FeatureSpec::continuous(c.name.clone(), lo, hi)
            }
            ColumnKind::Categorical { categories, other } => {
                let mut f = FeatureSpec::categorical(c.name.clone(), categories.clone());
                if let quantlat::model::FeatureKind::Categorical { other: o, .. } = &mut f.kind {
                    *o = other.clone();
                }
                f
            }
        })
        .collect()
}

/// The model configuration with features and output range filled in from
/// the training data where the config leaves them open.
pub fn complete_model_config(model: &ModelConfig, train: &Dataset) -> CliResult<ModelConfig> {
    let mut m = model.clone();
    if m.features.is_empty() {
        m.features = default_features(train);
    }
    for f in &m.features {
        if train.column_index(&f.name).is_none() {
            return Err(CliError::config(format!("feature '{}' is not a data column", f.name)));
        }
    }
    if m.output_range.is_none() && !train.labels.is_empty() {
        let lo = train.labels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train.labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m.output_range = Some([lo, hi]);
    }
    m.validate()?;
    Ok(m)
}

/// Grid values rendered for tables, e.g. `train.epochs=50;model.tau_knots=2`.
pub fn assignment_label(assignment: &[(String, String)]) -> String {
    assignment
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Metadata stored with every model file.
pub fn model_metadata(hash: &str, seed: u64, assignment: &[(String, String)]) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("config_hash".into(), hash.to_string());
    m.insert("seed".into(), seed.to_string());
    if !assignment.is_empty() {
        m.insert("grid".into(), assignment_label(assignment));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> LoadedConfig {
        LoadedConfig::from_str(text, PathBuf::from("/tmp"), None, None).unwrap()
    }

    #[test]
    fn grid_expands_cartesian_product() {
        let cfg = load(
            r#"
            [train]
            epochs = 3
            [grid]
            "train.epochs" = [1, 2]
            "model.tau_knots" = [2, 3, 4]
            "#,
        );
        let runs = cfg.runs().unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[0].config.model.tau_knots, 2);
        assert_eq!(runs[0].config.train.epochs, 1);
        assert_eq!(runs[1].config.train.epochs, 2);
        assert_eq!(runs[5].config.model.tau_knots, 4);
        assert_eq!(runs[5].assignment[0], ("model.tau_knots".to_string(), "4".to_string()));
    }

    #[test]
    fn wildcard_reaches_every_array_element() {
        let cfg = load(
            r#"
            [[model.features]]
            name = "a"
            kind = { type = "continuous", lower = 0.0, upper = 1.0 }
            [[model.features]]
            name = "b"
            kind = { type = "continuous", lower = 0.0, upper = 1.0 }
            [grid]
            "model.features.*.keypoints" = [3, 7]
            "#,
        );
        let runs = cfg.runs().unwrap();
        assert!(runs[1].config.model.features.iter().all(|f| f.keypoints == 7));
    }

    #[test]
    fn bad_grid_key_is_rejected() {
        let cfg = load("[grid]\n\"model.features.3.keypoints\" = [3]\n");
        assert!(matches!(cfg.runs(), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = LoadedConfig::from_str("seed = 1", PathBuf::new(), None, None).unwrap();
        let b = LoadedConfig::from_str("seed = 1", PathBuf::new(), Some(2), None).unwrap();
        assert_ne!(a.hash(), b.hash());
        let c = LoadedConfig::from_str("seed = 1", PathBuf::new(), None, Some(Path::new("elsewhere"))).unwrap();
        assert_eq!(a.hash(), c.hash());
        assert_eq!(a.hash(), LoadedConfig::from_str("seed = 1", PathBuf::new(), None, None).unwrap().hash());
        assert_eq!(b.seed(), 2);
    }

    #[test]
    fn sim_source_parses() {
        let cfg = load(
            r#"
            [data]
            source = "sim"
            family = "sine-skew"
            a = 1
            b = 7
            n = 250
            "#,
        );
        let run = &cfg.runs().unwrap()[0];
        match run.config.data.as_ref().unwrap() {
            DataSource::Sim(s) => {
                assert_eq!(s.family, SimFamily::SineSkew { a: 1.0, b: 7.0 });
                assert_eq!(s.n, 250);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_family_is_a_config_error() {
        let cfg = load("[data]\nsource = \"sim\"\nfamily = \"rosenbrock\"\nn = 10\n");
        assert!(matches!(cfg.runs(), Err(CliError::Config(_))));
    }

    #[test]
    fn shipped_configs_expand_and_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let runs = LoadedConfig::from_path(&path, None, None)
                    .and_then(|c| c.runs())
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert!(!runs.is_empty());
                seen += 1;
            }
        }
        assert!(seen >= 3);
    }
}
