use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibrate::final_max_relative_gap;
use super::export::{export_csv, export_field_vtk, log10_error_field};
use super::metrics::{
    aggregate_over_seeds, error_accumulation_curve, mape, max_relative_error, simulation_metrics,
    AggregateRecord, MetricRecord, Stat,
};
use crate::datasets::{
    build_dataset, load_bundle, DatasetBundle, DatasetConfig, DesignRecord, Role, Scale,
};
use crate::error::{Error, Result};
use crate::fem::SimulationSeries;
use crate::nncore::MinMaxScaler;
use crate::twin::{
    correct_series, rollout_mgn, train_hybrid, train_mgn, training_frames, FrameSplit, Hyperparams,
    ModelKind, PairedDesign, TrainReport, TrainedModel,
};

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_MANIFEST_FILE: &str = "manifest.json";

/// How the designs of one dataset enter an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataUse {
    /// By design role; a dataset without evaluation designs is also
    /// evaluated on its training designs.
    #[default]
    Auto,
    Train,
    Eval,
    Both,
}

/// One dataset source: exactly one of `preset`, `config` or `bundle`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    /// Overrides the experiment scale for a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[serde(default, rename = "use")]
    pub usage: DataUse,
}

impl DataSpec {
    pub fn preset(name: &str, usage: DataUse) -> Self {
        DataSpec {
            preset: Some(name.to_string()),
            usage,
            ..DataSpec::default()
        }
    }
}

fn default_fraction() -> f64 {
    0.1
}

fn default_scale() -> Scale {
    Scale::Desk
}

fn yes() -> bool {
    true
}

/// Declarative experiment: data, model, seeds. `hyperparams.seed` is
/// replaced by each run's seed, which also seeds the frame split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    pub data: Vec<DataSpec>,
    /// Final-frame VTK and CSV snapshots per evaluated design.
    #[serde(default = "yes")]
    pub export_fields: bool,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML spec; relative bundle paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut spec = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut spec.data {
            if let Some(b) = d.bundle.as_mut().filter(|b| b.is_relative()) {
                *b = base.join(&*b);
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("experiment {:?}: {msg}", self.name)));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("duplicate seeds".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!(
                "train_fraction {} outside (0, 1]",
                self.train_fraction
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("invalid noise_std {}", self.noise_std));
        }
        self.hyperparams.validate()?;
        if self.data.is_empty() {
            return bad("no data".into());
        }
        for d in &self.data {
            let sources = [d.preset.is_some(), d.config.is_some(), d.bundle.is_some()];
            if sources.iter().filter(|&&s| s).count() != 1 {
                return bad("each data entry needs exactly one of preset, config, bundle".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum Status {
    Complete,
    Failed { stage: String, message: String },
}

/// Corrected (or rolled-out) and uncorrected linear metrics of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEvaluation {
    pub dataset: String,
    pub design: String,
    pub seed: u64,
    pub corrected: MetricRecord,
    pub uncorrected: MetricRecord,
    /// Corrected MAPE over uncorrected MAPE.
    pub reduction_ratio: f64,
    /// Final frame, percent.
    pub final_mape: f64,
    /// Final frame, percent.
    pub final_max_relative_error: f64,
    /// Final frame linear vs ground truth, percent.
    pub final_max_relative_gap: f64,
    /// Per-frame RMSE of the prediction, K.
    pub error_curve: Vec<f64>,
    /// Per-frame RMSE of the linear model, K.
    pub gap_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub train: TrainReport,
    pub evaluations: Vec<DesignEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAggregate {
    pub dataset: String,
    pub design: String,
    pub corrected: AggregateRecord,
    pub uncorrected: AggregateRecord,
    pub reduction_ratio: Stat,
    pub final_max_relative_error: Stat,
    pub final_max_relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub config_hash: String,
    pub train_designs: Vec<String>,
    pub eval_designs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub model: ModelKind,
    pub status: Status,
    pub spec: ExperimentSpec,
    pub datasets: Vec<DatasetSummary>,
    pub seeds: Vec<SeedReport>,
    pub aggregates: Vec<DesignAggregate>,
}

impl ExperimentReport {
    pub fn is_complete(&self) -> bool {
        self.status == Status::Complete
    }

    pub fn evaluation(&self, dataset: &str, design: &str, seed: u64) -> Option<&DesignEvaluation> {
        self.seeds
            .iter()
            .filter(|s| s.seed == seed)
            .flat_map(|s| &s.evaluations)
            .find(|e| e.dataset == dataset && e.design == design)
    }

    pub fn aggregate(&self, dataset: &str, design: &str) -> Option<&DesignAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.dataset == dataset && a.design == design)
    }

    /// Copy with wall-clock fields zeroed.
    pub fn without_timing(&self) -> ExperimentReport {
        let mut r = self.clone();
        r.seeds
            .iter_mut()
            .for_each(|s| s.train.wall_clock_seconds = 0.0);
        r
    }
}

struct Selection<'a> {
    bundle: usize,
    dataset: &'a str,
    design: &'a DesignRecord,
}

fn load_data(spec: &ExperimentSpec) -> Result<Vec<DatasetBundle>> {
    spec.data
        .iter()
        .map(|d| match (&d.preset, &d.config, &d.bundle) {
            (Some(name), _, _) => {
                build_dataset(&DatasetConfig::preset(name, d.scale.unwrap_or(spec.scale))?)
            }
            (_, Some(config), _) => build_dataset(config),
            (_, _, Some(dir)) => load_bundle(dir),
            _ => Err(Error::Config("data entry without a source".into())),
        })
        .collect()
}

fn select<'a>(
    spec: &ExperimentSpec,
    bundles: &'a [DatasetBundle],
) -> (Vec<Selection<'a>>, Vec<Selection<'a>>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (k, (d, b)) in spec.data.iter().zip(bundles).enumerate() {
        let has_eval = b.designs.iter().any(|r| r.role == Role::Eval);
        for r in &b.designs {
            let (t, e) = match d.usage {
                DataUse::Train => (true, false),
                DataUse::Eval => (false, true),
                DataUse::Both => (true, true),
                DataUse::Auto => (r.role == Role::Train, r.role == Role::Eval || !has_eval),
            };
            let sel = || Selection {
                bundle: k,
                dataset: &b.config.name,
                design: r,
            };
            if t {
                train.push(sel());
            }
            if e {
                eval.push(sel());
            }
        }
    }
    (train, eval)
}

/// Normalization of the reported RMSE: the gap range over the training
/// frames of the training designs, as the gap learner's target scaler.
pub fn gap_scaler(train: &[&DesignRecord], split: &FrameSplit) -> Result<MinMaxScaler> {
    let mut gaps = Vec::new();
    for (d, r) in train.iter().enumerate() {
        let (lin, nl) = (&r.linear, &r.nonlinear);
        for f in training_frames(lin.n_frames(), split, d)? {
            gaps.extend(nl.frames[f].iter().zip(&lin.frames[f]).map(|(a, b)| a - b));
        }
    }
    MinMaxScaler::fit(&gaps, 1)
}

/// Hybrid: corrected linear series. MGN: rollout from the ground-truth
/// initial frame over the full horizon.
pub fn predict_design(trained: &TrainedModel, design: &DesignRecord) -> Result<SimulationSeries> {
    match trained.kind {
        ModelKind::Hybrid => correct_series(trained, &design.mesh, &design.linear),
        ModelKind::Mgn => rollout_mgn(
            trained,
            &design.mesh,
            &design.nonlinear.frames[0],
            design.nonlinear.n_frames() - 1,
            design.nonlinear.dt,
        ),
    }
    .map_err(|e| Error::Design {
        design: design.id.clone(),
        source: Box::new(e),
    })
}

struct SeedOutcome {
    trained: TrainedModel,
    report: SeedReport,
    predictions: Vec<Vec<Vec<f64>>>,
}

struct StageFailure {
    stage: &'static str,
    error: Error,
}

fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageFailure> {
    r.map_err(|error| StageFailure { stage, error })
}

fn run_seed(
    spec: &ExperimentSpec,
    train: &[Selection],
    eval: &[Selection],
    seed: u64,
) -> std::result::Result<SeedOutcome, StageFailure> {
    let hp = Hyperparams {
        seed,
        ..spec.hyperparams.clone()
    };
    let split = FrameSplit {
        fraction: spec.train_fraction,
        seed,
    };
    let (trained, train_report) = at(
        "train",
        match spec.model {
            ModelKind::Hybrid => {
                let paired: Vec<PairedDesign> = train
                    .iter()
                    .map(|s| PairedDesign {
                        mesh: &s.design.mesh,
                        linear: &s.design.linear,
                        nonlinear: &s.design.nonlinear,
                    })
                    .collect();
                train_hybrid(&paired, &split, &hp, spec.noise_std)
            }
            ModelKind::Mgn => {
                let series: Vec<_> = train
                    .iter()
                    .map(|s| (&s.design.mesh, &s.design.nonlinear))
                    .collect();
                train_mgn(&series, &split, &hp, spec.noise_std)
            }
        },
    )?;
    let train_records: Vec<&DesignRecord> = train.iter().map(|s| s.design).collect();
    let scaler = at("evaluate", gap_scaler(&train_records, &split))?;
    let mut evaluations = Vec::with_capacity(eval.len());
    let mut predictions = Vec::with_capacity(eval.len());
    for s in eval {
        let predicted = at("evaluate", predict_design(&trained, s.design))?;
        let evaluation = at(
            "evaluate",
            evaluate_design(s.dataset, s.design, &predicted.frames, &scaler, seed),
        )?;
        evaluations.push(evaluation);
        predictions.push(predicted.frames);
    }
    Ok(SeedOutcome {
        trained,
        report: SeedReport {
            seed,
            train: train_report,
            evaluations,
        },
        predictions,
    })
}

/// Corrected and uncorrected metrics of `predicted` against the design's
/// ground truth.
pub fn evaluate_design(
    dataset: &str,
    d: &DesignRecord,
    predicted: &[Vec<f64>],
    scaler: &MinMaxScaler,
    seed: u64,
) -> Result<DesignEvaluation> {
    let gt = &d.nonlinear.frames;
    let corrected = simulation_metrics(gt, predicted, scaler, Some(seed))?;
    let uncorrected = simulation_metrics(gt, &d.linear.frames, scaler, Some(seed))?;
    let last = gt.len() - 1;
    Ok(DesignEvaluation {
        dataset: dataset.to_string(),
        design: d.id.clone(),
        seed,
        reduction_ratio: corrected.mape / uncorrected.mape,
        corrected,
        uncorrected,
        final_mape: mape(&gt[last], &predicted[last])?,
        final_max_relative_error: 100.0 * max_relative_error(&gt[last], &predicted[last])?,
        final_max_relative_gap: final_max_relative_gap(&d.linear, &d.nonlinear)?,
        error_curve: error_accumulation_curve(gt, predicted)?,
        gap_curve: error_accumulation_curve(gt, &d.linear.frames)?,
    })
}

fn aggregates(seeds: &[SeedReport]) -> Result<Vec<DesignAggregate>> {
    let Some(first) = seeds.first() else {
        return Ok(Vec::new());
    };
    first
        .evaluations
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let per_seed: Vec<&DesignEvaluation> =
                seeds.iter().map(|s| &s.evaluations[k]).collect();
            let corrected: Vec<MetricRecord> = per_seed.iter().map(|e| e.corrected).collect();
            let uncorrected: Vec<MetricRecord> = per_seed.iter().map(|e| e.uncorrected).collect();
            Ok(DesignAggregate {
                dataset: e.dataset.clone(),
                design: e.design.clone(),
                corrected: aggregate_over_seeds(&corrected)?,
                uncorrected: aggregate_over_seeds(&uncorrected)?,
                reduction_ratio: Stat::of(
                    &per_seed
                        .iter()
                        .map(|e| e.reduction_ratio)
                        .collect::<Vec<_>>(),
                )?,
                final_max_relative_error: Stat::of(
                    &per_seed
                        .iter()
                        .map(|e| e.final_max_relative_error)
                        .collect::<Vec<_>>(),
                )?,
                final_max_relative_gap: e.final_max_relative_gap,
            })
        })
        .collect()
}

fn file_stem(dataset: &str, design: &str) -> String {
    format!("{dataset}_{design}")
}

fn export_seed(
    out: &Path,
    spec: &ExperimentSpec,
    eval: &[Selection],
    outcome: &SeedOutcome,
) -> Result<()> {
    let dir = out.join(format!("seed_{}", outcome.report.seed));
    fs::create_dir_all(&dir)?;
    let meta = BTreeMap::from([
        ("experiment".to_string(), spec.name.clone()),
        ("seed".to_string(), outcome.report.seed.to_string()),
    ]);
    outcome.trained.save(&dir.join("model.json"), meta)?;
    fs::write(
        dir.join("train_report.json"),
        serde_json::to_string_pretty(&outcome.report.train)?,
    )?;
    for ((s, e), pred) in eval
        .iter()
        .zip(&outcome.report.evaluations)
        .zip(&outcome.predictions)
    {
        let stem = file_stem(&e.dataset, &e.design);
        let dt = s.design.nonlinear.dt;
        let rows: Vec<Vec<f64>> = (0..e.error_curve.len())
            .map(|k| vec![k as f64, k as f64 * dt, e.error_curve[k], e.gap_curve[k]])
            .collect();
        export_csv(
            &["frame", "time", "rmse_prediction", "rmse_linear"],
            &rows,
            &dir.join(format!("{stem}_curve.csv")),
        )?;
        if spec.export_fields {
            let mesh = &s.design.mesh;
            let gt = s.design.nonlinear.final_frame();
            let p = pred.last().expect("non-empty prediction");
            let err: Vec<f64> = gt.iter().zip(p).map(|(g, p)| p - g).collect();
            export_field_vtk(
                mesh,
                gt,
                "ground_truth",
                &dir.join(format!("{stem}_gt.vtk")),
            )?;
            export_field_vtk(
                mesh,
                p,
                "prediction",
                &dir.join(format!("{stem}_prediction.vtk")),
            )?;
            export_field_vtk(mesh, &err, "error", &dir.join(format!("{stem}_error.vtk")))?;
            let log = log10_error_field(&err);
            let rows: Vec<Vec<f64>> = (0..mesh.n_nodes())
                .map(|i| vec![i as f64, mesh.nodes[i][0], mesh.nodes[i][1], err[i], log[i]])
                .collect();
            export_csv(
                &["node", "x", "y", "error", "log10_abs_error"],
                &rows,
                &dir.join(format!("{stem}_final_error.csv")),
            )?;
        }
    }
    Ok(())
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            hash_tree(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("inside root")
                .to_string_lossy()
                .replace('\\', "/");
            if rel != REPORT_MANIFEST_FILE {
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path)?)));
            }
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    let mut files = BTreeMap::new();
    hash_tree(out, out, &mut files)?;
    fs::write(
        out.join(REPORT_MANIFEST_FILE),
        serde_json::to_string_pretty(&files)?,
    )?;
    Ok(())
}

/// Generates or loads the data, trains one model per seed (seeds run
/// concurrently on the current rayon pool), evaluates every evaluation
/// design and writes the report directory.
///
/// An invalid spec is an error. A failing stage yields a report whose status
/// names the stage; it is written to `out` as well.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut report = ExperimentReport {
        name: spec.name.clone(),
        model: spec.model,
        status: Status::Complete,
        spec: spec.clone(),
        datasets: Vec::new(),
        seeds: Vec::new(),
        aggregates: Vec::new(),
    };
    let fail = |mut report: ExperimentReport, stage: &str, e: Error| -> Result<ExperimentReport> {
        report.status = Status::Failed {
            stage: stage.to_string(),
            message: e.to_string(),
        };
        write_report(out, &report)?;
        Ok(report)
    };

    let bundles = match load_data(spec) {
        Ok(b) => b,
        Err(e) => return fail(report, "data", e),
    };
    let (train, eval) = select(spec, &bundles);
    for (k, b) in bundles.iter().enumerate() {
        let ids = |list: &[Selection]| {
            list.iter()
                .filter(|s| s.bundle == k)
                .map(|s| s.design.id.clone())
                .collect()
        };
        report.datasets.push(DatasetSummary {
            name: b.config.name.clone(),
            config_hash: b.config_hash.clone(),
            train_designs: ids(&train),
            eval_designs: ids(&eval),
        });
    }
    if train.is_empty() || eval.is_empty() {
        let e = Error::Config("experiment selects no training or no evaluation designs".into());
        return fail(report, "data", e);
    }

    let outcomes: Vec<_> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, &train, &eval, seed))
        .collect();
    let mut done = Vec::with_capacity(outcomes.len());
    let mut failure = None;
    for o in outcomes {
        match o {
            Ok(o) => done.push(o),
            Err(f) if failure.is_none() => failure = Some(f),
            Err(_) => {}
        }
    }
    report.seeds = done.iter().map(|o| o.report.clone()).collect();
    if let Some(f) = failure {
        return fail(report, f.stage, f.error);
    }
    match aggregates(&report.seeds) {
        Ok(a) => report.aggregates = a,
        Err(e) => return fail(report, "aggregate", e),
    }
    for o in &done {
        if let Err(e) = export_seed(out, spec, &eval, o) {
            return fail(report, "export", e);
        }
    }
    write_report(out, &report)?;
    Ok(report)
}
