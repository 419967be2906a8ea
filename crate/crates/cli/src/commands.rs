use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use quantlat::data::{write_csv, write_sidecar, QuantileOracle, SimSpec};
use quantlat::eval::unconditional::{run_uqe, UqeResult};
use quantlat::eval::{EvalSubset, ReportSpec};
use quantlat::rates::{best_iterate, IterateRecord};
use quantlat::train::{write_history_csv, FitResult};
use quantlat::{fit, BoundConstraint, Dataset, MetricReport, QuantileModel};
use serde_json::json;

use crate::config::{
    assignment_label, complete_model_config, load_splits, model_metadata, DataSource, LoadedConfig, Run, Split,
};
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Header plus rows, written in one go with the `csv` crate.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: impl IntoIterator<Item = String>) {
        self.rows.push(cells.into_iter().collect());
    }

    fn save(&self, path: &Path) -> CliResult<()> {
        let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_manifest(dir: &Path, command: &str, loaded: &LoadedConfig, extra: serde_json::Value) -> CliResult<()> {
    let mut doc = json!({
        "command": command,
        "config_hash": loaded.hash(),
        "seed": loaded.seed(),
        "config": loaded.value,
    });
    if let (Some(d), serde_json::Value::Object(e)) = (doc.as_object_mut(), extra) {
        d.extend(e);
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    write_text(&dir.join("manifest.json"), &text)
}

/// Directory for run `i`: the output directory itself for a single run,
/// `runs/<i>` otherwise.
fn run_dir(out: &Path, i: usize, total: usize) -> PathBuf {
    if total == 1 {
        out.to_path_buf()
    } else {
        out.join("runs").join(i.to_string())
    }
}

pub fn simulate(loaded: &LoadedConfig) -> CliResult<()> {
    let runs = loaded.runs()?;
    let out = loaded.out_dir();
    create_dir(&out)?;
    for (i, run) in runs.iter().enumerate() {
        let sim = match run.config.data_source()? {
            DataSource::Sim(s) => s,
            _ => return Err(CliError::config("simulate needs a [data] section with source = \"sim\"")),
        };
        let dir = run_dir(&out, i, runs.len());
        create_dir(&dir)?;
        for (name, spec) in ["train", "validation", "test"].iter().zip(sim.specs(run.config.seed)) {
            let data = spec.generate()?;
            let path = dir.join(format!("{name}.csv"));
            write_csv(&path, &data)?;
            write_sidecar(&path, &spec)?;
        }
    }
    let grid: Vec<String> = runs.iter().map(|r| assignment_label(&r.assignment)).collect();
    write_manifest(&out, "simulate", loaded, json!({ "runs": grid }))
}

struct TrainedRun {
    fit: FitResult,
    /// Validation score and violation of the selected epoch.
    score: f64,
    violation: Option<f64>,
}

fn train_one(run: &Run) -> CliResult<TrainedRun> {
    let cfg = &run.config;
    let splits = load_splits(cfg.data_source()?, cfg.seed)?;
    let model_config = complete_model_config(&cfg.model, &splits.train)?;
    let train = splits.train.examples(&model_config.features)?;
    let val = splits.validation.examples(&model_config.features)?;
    let constraints: Vec<BoundConstraint> = cfg
        .constraints
        .iter()
        .map(|c| c.bind(&splits.train, &train))
        .collect::<quantlat::Result<_>>()?;
    let mut train_config = cfg.train.clone();
    train_config.seed = cfg.seed.wrapping_add(cfg.train.seed);
    let model = QuantileModel::init(model_config, train_config.seed)?;
    let fit = fit(model, &train, &val, &train_config, &constraints)?;
    let record = &fit.history[fit.selected_epoch - 1];
    Ok(TrainedRun {
        score: record.val_pinball,
        violation: record.max_violation,
        fit,
    })
}

pub fn train(loaded: &LoadedConfig) -> CliResult<()> {
    let runs = loaded.runs()?;
    let out = loaded.out_dir();
    create_dir(&out)?;
    let hash = loaded.hash();
    let mut trained = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let t = train_one(run)?;
        if let Some(reason) = &t.fit.stopped_early {
            eprintln!("run {i}: training stopped early: {reason}");
        }
        if runs.len() > 1 {
            let dir = run_dir(&out, i, runs.len());
            create_dir(&dir)?;
            write_history_csv(dir.join("history.csv"), &t.fit.history)?;
            t.fit.model.save(dir.join("model.json"), &metadata(&hash, run, &t))?;
        }
        trained.push(t);
    }

    // Constrained sweeps pick with the same rule as epochs within a run.
    let constrained = trained.iter().any(|t| t.violation.is_some());
    let best = if constrained {
        let log: Vec<IterateRecord> = trained
            .iter()
            .enumerate()
            .map(|(i, t)| IterateRecord {
                snapshot: i,
                objective: t.score,
                max_violation: t.violation.unwrap_or(0.0),
            })
            .collect();
        best_iterate(&log, runs[0].config.train.violation_tolerance)
    } else {
        (0..trained.len()).min_by(|&a, &b| trained[a].score.total_cmp(&trained[b].score))
    }
    .expect("at least one run");

    let mut table = Table::new(&["run", "grid", "selected_epoch", "val_pinball", "max_violation", "stopped_early", "best"]);
    for (i, (run, t)) in runs.iter().zip(&trained).enumerate() {
        table.row([
            i.to_string(),
            assignment_label(&run.assignment),
            t.fit.selected_epoch.to_string(),
            t.score.to_string(),
            opt(t.violation),
            t.fit.stopped_early.clone().unwrap_or_default(),
            (i == best).to_string(),
        ]);
    }
    table.save(&out.join("runs.csv"))?;

    let chosen = &trained[best];
    write_history_csv(out.join("history.csv"), &chosen.fit.history)?;
    chosen.fit.model.save(out.join("model.json"), &metadata(&hash, &runs[best], chosen))?;
    write_manifest(
        &out,
        "train",
        loaded,
        json!({
            "runs": runs.len(),
            "best_run": best,
            "selected_epoch": chosen.fit.selected_epoch,
            "val_pinball": chosen.score,
            "max_violation": chosen.violation,
        }),
    )
}

fn metadata(hash: &str, run: &Run, t: &TrainedRun) -> BTreeMap<String, String> {
    let mut m = model_metadata(hash, run.config.seed, &run.assignment);
    m.insert("selected_epoch".into(), t.fit.selected_epoch.to_string());
    m
}

/// The oracle is only usable when the model reads the data columns in
/// schema order, since it is called with model inputs.
fn oracle_for<'a>(data: &'a Dataset, xs: &[Vec<f64>]) -> Option<&'a SimSpec> {
    data.sim.as_ref().filter(|_| xs == data.rows.as_slice())
}

fn evaluate_on(model: &QuantileModel, data: &Dataset, run: &Run) -> CliResult<MetricReport> {
    let cfg = &run.config;
    let features = &model.config().features;
    let examples = data.examples(features)?;
    let mut subsets = Vec::new();
    let specs = cfg
        .eval
        .subsets
        .iter()
        .map(|s| (s.selector.clone(), s.tau))
        .chain(cfg.constraints.iter().map(|c| (c.selector.clone(), c.tau)));
    for (selector, tau) in specs {
        let rows = selector.resolve(data)?;
        subsets.push(EvalSubset {
            name: selector.label(),
            tau,
            data: examples.select(&rows),
        });
    }
    let oracle = oracle_for(data, &examples.xs);
    let spec = ReportSpec {
        taus: cfg.eval.taus.clone(),
        oracle: oracle.map(|o| o as &(dyn QuantileOracle + Sync)),
        subsets,
    };
    Ok(MetricReport::compute(model, &examples, &spec)?)
}

/// Seed of the `r`-th fresh test draw. Repeat 0 is the regular test split.
fn repeat_seed(base: u64, r: usize) -> u64 {
    if r == 0 {
        base
    } else {
        base ^ ((r as u64) << 32)
    }
}

pub fn eval(loaded: &LoadedConfig, model_path: Option<&Path>) -> CliResult<()> {
    let runs = loaded.runs()?;
    let run = &runs[0];
    let cfg = &run.config;
    let out = loaded.out_dir();
    create_dir(&out)?;
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("model.json"));
    let (model, _) = QuantileModel::load(&model_path)
        .map_err(|e| CliError::config(format!("cannot load model {}: {e}", model_path.display())))?;

    let source = cfg.data_source()?;
    let splits = load_splits(source, cfg.seed)?;
    let base = splits.get(cfg.eval.split)?;
    let mut reports = vec![evaluate_on(&model, base, run)?];
    if cfg.eval.repeats > 1 {
        let sim = match (source, cfg.eval.split) {
            (DataSource::Sim(s), Split::Test) => s,
            _ => return Err(CliError::config("eval.repeats > 1 needs simulated data and the test split")),
        };
        let [_, _, test] = sim.specs(cfg.seed);
        for r in 1..cfg.eval.repeats {
            let spec = SimSpec {
                seed: repeat_seed(test.seed, r),
                ..test.clone()
            };
            reports.push(evaluate_on(&model, &spec.generate()?, run)?);
        }
    }
    let report = MetricReport::aggregate(&reports)?;
    report.write_csv(out.join("report.csv"))?;
    write_text(&out.join("report.json"), &report.to_json()?)?;
    write_curves(&out.join("curves.csv"), &model, base, cfg.eval.curve_points, &cfg.eval.taus)?;
    write_manifest(
        &out,
        "eval",
        loaded,
        json!({
            "model": model_path.display().to_string(),
            "repeats": cfg.eval.repeats,
        }),
    )
}

/// Quantile curves at up to `points` inputs. One-dimensional simulated
/// data uses an even grid over the domain; otherwise the first rows.
fn write_curves(path: &Path, model: &QuantileModel, data: &Dataset, points: usize, taus: &[f64]) -> CliResult<()> {
    let features = &model.config().features;
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    let curve_data = match &data.sim {
        Some(sim) if data.schema.columns.len() == 1 && points >= 2 => {
            let (lo, hi) = sim.family.domain();
            let rows: Vec<Vec<f64>> = (0..points)
                .map(|i| vec![lo + (hi - lo) * i as f64 / (points - 1) as f64])
                .collect();
            let mut d = Dataset::new(data.schema.clone(), rows, vec![0.0; points])?;
            d.sim = data.sim.clone();
            d
        }
        _ => {
            let idx: Vec<usize> = (0..points.min(data.len())).collect();
            data.subset(&idx)
        }
    };
    let examples = curve_data.examples(features)?;
    let oracle = oracle_for(&curve_data, &examples.xs);

    let mut header = vec!["point".to_string()];
    header.extend(features.iter().map(|f| f.name.clone()));
    header.extend(["tau", "prediction", "truth"].map(String::from));
    let mut table = Table::new(&header);
    for (i, x) in examples.xs.iter().enumerate() {
        let preds = model.predict_curve(x, &taus)?;
        for (tau, pred) in taus.iter().zip(preds) {
            let mut row = vec![i.to_string()];
            row.extend(x.iter().map(f64::to_string));
            row.push(tau.to_string());
            row.push(pred.to_string());
            row.push(opt(oracle.map(|o| o.true_quantile(x, *tau))));
            table.row(row);
        }
    }
    table.save(path)
}

pub fn uqe(loaded: &LoadedConfig) -> CliResult<()> {
    let runs = loaded.runs()?;
    let out = loaded.out_dir();
    create_dir(&out)?;
    for (i, run) in runs.iter().enumerate() {
        let mut cfg = run
            .config
            .uqe
            .clone()
            .ok_or_else(|| CliError::config("uqe needs a [uqe] section"))?;
        cfg.seed = run.config.seed.wrapping_add(cfg.seed);
        let result = run_uqe(&cfg)?;
        let dir = run_dir(&out, i, runs.len());
        create_dir(&dir)?;
        write_uqe(&dir, &result)?;
    }
    let grid: Vec<String> = runs.iter().map(|r| assignment_label(&r.assignment)).collect();
    write_manifest(&out, "uqe", loaded, json!({ "runs": grid }))
}

fn estimator_column(name: &str, c: Option<f64>) -> String {
    match c {
        Some(c) => format!("{name}_c{c}"),
        None => name.to_string(),
    }
}

fn write_uqe(dir: &Path, result: &UqeResult) -> CliResult<()> {
    let mut summary = Table::new(&["estimator", "concentration", "tau", "mse", "ci_half_width"]);
    for r in &result.rows {
        summary.row([
            r.estimator.clone(),
            opt(r.concentration),
            r.tau.to_string(),
            r.mse.to_string(),
            r.ci_half_width.to_string(),
        ]);
    }
    summary.save(&dir.join("uqe.csv"))?;

    let mut header = vec!["repeat".to_string(), "tau".to_string()];
    header.extend(result.estimators.iter().map(|(n, c)| estimator_column(n, *c)));
    let mut repeats = Table::new(&header);
    for r in &result.repeats {
        let mut row = vec![r.repeat.to_string(), r.tau.to_string()];
        row.extend(r.estimates.iter().map(f64::to_string));
        repeats.row(row);
    }
    repeats.save(&dir.join("uqe_repeats.csv"))
}
