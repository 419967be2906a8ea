//! Tabular datasets, CSV input/output, splits and simulated data.

mod csvio;
mod sim;

pub use csvio::{load_csv, write_csv};
pub use sim::{
    read_sidecar, sample_exponential, sidecar_path, write_sidecar, Exponential, QuantileOracle, SimFamily, SimSpec,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureKind, FeatureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical {
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        other: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|s| s.to_string()).collect(),
                other: None,
            },
        }
    }

    /// Parses one raw cell: a number for continuous columns, a category
    /// index (falling back to `other`) for categorical ones.
    pub(crate) fn parse(&self, raw: &str) -> std::result::Result<f64, String> {
        let raw = raw.trim();
        match &self.kind {
            ColumnKind::Continuous => raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("column '{}': '{raw}' is not a finite number", self.name)),
            ColumnKind::Categorical { categories, other } => categories
                .iter()
                .position(|c| c == raw)
                .or_else(|| other.as_ref().and_then(|o| categories.iter().position(|c| c == o)))
                .map(|i| i as f64)
                .ok_or_else(|| format!("column '{}': unknown category '{raw}'", self.name)),
        }
    }

    pub(crate) fn format(&self, v: f64) -> String {
        match &self.kind {
            ColumnKind::Continuous => format!("{v}"),
            ColumnKind::Categorical { categories, .. } => categories[v as usize].clone(),
        }
    }
}

/// Column layout of a CSV file: feature columns plus the label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
}

impl Schema {
    /// Schema matching a model's feature list.
    pub fn from_features(features: &[FeatureSpec], label: impl Into<String>) -> Self {
        let columns = features
            .iter()
            .map(|f| ColumnSpec {
                name: f.name.clone(),
                kind: match &f.kind {
                    FeatureKind::Continuous { .. } => ColumnKind::Continuous,
                    FeatureKind::Categorical { categories, other } => ColumnKind::Categorical {
                        categories: categories.clone(),
                        other: other.clone(),
                    },
                },
            })
            .collect();
        Schema {
            columns,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.columns.iter().enumerate() {
            if c.name == self.label || self.columns[..i].iter().any(|d| d.name == c.name) {
                return Err(Error::config(format!("duplicate column name '{}'", c.name)));
            }
            if let ColumnKind::Categorical { categories, other } = &c.kind {
                if categories.is_empty() {
                    return Err(Error::config(format!("column '{}' has no categories", c.name)));
                }
                if let Some(o) = other {
                    if !categories.contains(o) {
                        return Err(Error::config(format!(
                            "column '{}': 'other' category '{o}' is not listed",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rows of typed feature values plus labels. Categorical cells hold the
/// category index as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Present for simulated data; reconstructs the true conditional quantiles.
    pub sim: Option<SimSpec>,
}

/// Model-ready inputs: one feature vector per example in model feature order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Examples {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Examples {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::input("feature and label counts differ"));
        }
        Ok(Examples { xs, ys })
    }

    /// Feature-less examples, as used for unconditional quantile estimation.
    pub fn unconditional(ys: &[f64]) -> Self {
        Examples {
            xs: vec![Vec::new(); ys.len()],
            ys: ys.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i]
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn select(&self, idx: &[usize]) -> Examples {
        Examples {
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        if rows.len() != labels.len() {
            return Err(Error::input("row and label counts differ"));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != schema.columns.len()) {
            return Err(Error::input(format!("row {r} has the wrong number of columns")));
        }
        Ok(Dataset {
            schema,
            rows,
            labels,
            sim: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.columns.iter().position(|c| c.name == name)
    }

    /// Rows whose column `name` equals `value` (category name or number).
    pub fn rows_matching(&self, name: &str, value: &str) -> Result<Vec<usize>> {
        let c = self
            .column_index(name)
            .ok_or_else(|| Error::config(format!("unknown column '{name}'")))?;
        let spec = &self.schema.columns[c];
        let target = match &spec.kind {
            ColumnKind::Continuous => value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("'{value}' is not a number for column '{name}'")))?,
            ColumnKind::Categorical { categories, .. } => categories
                .iter()
                .position(|x| x == value)
                .ok_or_else(|| Error::config(format!("column '{name}' has no category '{value}'")))?
                as f64,
        };
        Ok((0..self.len()).filter(|&r| self.rows[r][c] == target).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            sim: self.sim.clone(),
        }
    }

    /// Maps the dataset onto a model's features by column name, remapping
    /// category indices by category name.
    pub fn examples(&self, features: &[FeatureSpec]) -> Result<Examples> {
        let mut maps: Vec<(usize, Option<Vec<usize>>)> = Vec::with_capacity(features.len());
        for f in features {
            let c = self
                .column_index(&f.name)
                .ok_or_else(|| Error::config(format!("dataset has no column for feature '{}'", f.name)))?;
            let remap = match (&self.schema.columns[c].kind, &f.kind) {
                (ColumnKind::Continuous, FeatureKind::Continuous { .. }) => None,
                (ColumnKind::Categorical { categories, .. }, FeatureKind::Categorical { .. }) => Some(
                    categories
                        .iter()
                        .map(|cat| {
                            f.category_index(cat).ok_or_else(|| {
                                Error::input(format!("feature '{}': unknown category '{cat}'", f.name))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => {
                    return Err(Error::config(format!(
                        "feature '{}' and its dataset column disagree on kind",
                        f.name
                    )))
                }
            };
            maps.push((c, remap));
        }
        let xs = self
            .rows
            .iter()
            .map(|row| {
                maps.iter()
                    .map(|(c, remap)| match remap {
                        None => row[*c],
                        Some(m) => m[row[*c] as usize] as f64,
                    })
                    .collect()
            })
            .collect();
        Ok(Examples {
            xs,
            ys: self.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Random partition with a seeded permutation; rows keep their original
    /// relative order within each part.
    Iid { fractions: [f64; 3], seed: u64 },
    /// Earliest rows to train, then validation, then test.
    Ordered { fractions: [f64; 3] },
}

/// Splits into `(train, validation, test)`.
pub fn split(data: &Dataset, mode: &SplitMode) -> Result<(Dataset, Dataset, Dataset)> {
    let fractions = match mode {
        SplitMode::Iid { fractions, .. } | SplitMode::Ordered { fractions } => fractions,
    };
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must be nonnegative and sum to 1"));
    }
    let n = data.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    for (name, count, f) in [
        ("train", n_train, fractions[0]),
        ("validation", n_val, fractions[1]),
        ("test", n_test, fractions[2]),
    ] {
        if f > 0.0 && count == 0 {
            return Err(Error::config(format!("{name} split is empty")));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let SplitMode::Iid { seed, .. } = mode {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
    }
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok((data.subset(&parts[0]), data.subset(&parts[1]), data.subset(&parts[2])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_rows() -> Dataset {
        let schema = Schema {
            columns: vec![ColumnSpec::continuous("x")],
            label: "y".into(),
        };
        Dataset::new(schema, (0..10).map(|i| vec![i as f64]).collect(), (0..10).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn ordered_split() {
        let (a, b, c) = split(&ten_rows(), &SplitMode::Ordered { fractions: [0.6, 0.2, 0.2] }).unwrap();
        assert_eq!(a.labels, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b.labels, vec![6.0, 7.0]);
        assert_eq!(c.labels, vec![8.0, 9.0]);
    }

    #[test]
    fn iid_split_is_reproducible_partition() {
        let d = ten_rows();
        let mode = SplitMode::Iid {
            fractions: [0.5, 0.3, 0.2],
            seed: 4,
        };
        let s1 = split(&d, &mode).unwrap();
        let s2 = split(&d, &mode).unwrap();
        assert_eq!(s1, s2);
        let mut all: Vec<f64> = [&s1.0, &s1.1, &s1.2].iter().flat_map(|p| p.labels.clone()).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, d.labels);
        assert_eq!((s1.0.len(), s1.1.len(), s1.2.len()), (5, 3, 2));
    }

    #[test]
    fn split_rejects_degenerate() {
        let d = ten_rows();
        assert!(split(&d, &SplitMode::Ordered { fractions: [0.5, 0.3, 0.3] }).is_err());
        assert!(split(&d, &SplitMode::Ordered { fractions: [0.98, 0.01, 0.01] }).is_err());
        assert!(split(&d, &SplitMode::Ordered { fractions: [0.8, 0.2, 0.0] }).is_ok());
    }

    #[test]
    fn examples_remap_categories_by_name() {
        let schema = Schema {
            columns: vec![ColumnSpec::categorical("g", &["b", "a"]), ColumnSpec::continuous("x")],
            label: "y".into(),
        };
        let d = Dataset::new(schema, vec![vec![0.0, 1.5], vec![1.0, 2.5]], vec![1.0, 2.0]).unwrap();
        let features = vec![
            FeatureSpec::continuous("x", 0.0, 3.0),
            FeatureSpec::categorical("g", vec!["a".into(), "b".into()]),
        ];
        let ex = d.examples(&features).unwrap();
        assert_eq!(ex.xs, vec![vec![1.5, 1.0], vec![2.5, 0.0]]);
        let missing = vec![FeatureSpec::continuous("z", 0.0, 1.0)];
        assert!(d.examples(&missing).is_err());
    }

    #[test]
    fn rows_matching_by_category_and_number() {
        let schema = Schema {
            columns: vec![ColumnSpec::categorical("g", &["p", "q"]), ColumnSpec::continuous("x")],
            label: "y".into(),
        };
        let d = Dataset::new(schema, vec![vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0, 1.0]], vec![0.0; 3]).unwrap();
        assert_eq!(d.rows_matching("g", "q").unwrap(), vec![1, 2]);
        assert_eq!(d.rows_matching("x", "1").unwrap(), vec![0, 2]);
        assert!(d.rows_matching("g", "r").is_err());
        assert!(d.rows_matching("h", "p").is_err());
    }
}
