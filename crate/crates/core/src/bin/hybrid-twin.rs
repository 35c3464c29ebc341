use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_twin::datasets::{
    build_dataset, load_bundle, save_bundle, DatasetBundle, DatasetConfig, DesignRecord, Role,
    Scale,
};
use hybrid_twin::harness::{
    calibration_check, evaluate_design, export_csv, export_field_vtk, gap_scaler, predict_design,
    run_experiment, ExperimentSpec, Status,
};
use hybrid_twin::twin::{
    train_hybrid, train_mgn, FrameSplit, Hyperparams, PairedDesign, TrainedModel,
};
use hybrid_twin::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "hybrid-twin",
    version,
    about = "Hybrid FEM + graph network twin for transient heat transfer"
)]
struct Cli {
    /// Experiment spec (TOML) for report; dataset config (JSON or TOML)
    /// for every other subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training and split seed; for report, replaces the spec's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Scale {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Hybrid,
    Mgn,
}

#[derive(Args)]
struct Source {
    /// Dataset preset name (A1..A8, B1, B2).
    #[arg(long, conflicts_with = "bundle")]
    preset: Option<String>,
    /// Saved dataset bundle directory.
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Args)]
struct Split {
    /// Fraction of frames per design used for training.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset bundle from a preset or a config file.
    Generate {
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a model on the training designs of a bundle.
    Train {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "hybrid")]
        model: ModelArg,
        #[command(flatten)]
        split: Split,
        /// Std of Gaussian noise on input temperatures, K.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Hyperparameter TOML; defaults to the desk settings.
        #[arg(long)]
        hyperparams: Option<PathBuf>,
    },
    /// Score a checkpoint on the evaluation designs of a bundle.
    Evaluate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        split: Split,
    },
    /// Predict one design over the full horizon and export the result.
    Rollout {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        design: String,
    },
    /// Run an experiment spec end to end and write its report directory.
    Report,
    /// Check the final-frame linear vs nonlinear gap of a dataset.
    Calibrate {
        #[command(flatten)]
        source: Source,
    },
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn dataset_config(path: &Path) -> Result<DatasetConfig> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn load_source(cli: &Cli, source: &Source) -> Result<DatasetBundle> {
    let scale = cli.scale.map_or(Scale::Desk, Scale::from);
    match (&source.preset, &source.bundle, &cli.config) {
        (Some(name), _, _) => build_dataset(&DatasetConfig::preset(name, scale)?),
        (None, Some(dir), _) => load_bundle(dir),
        (None, None, Some(path)) => build_dataset(&dataset_config(path)?),
        (None, None, None) => Err(Error::Usage("give --preset, --bundle or --config".into())),
    }
}

/// Evaluation designs, or every design when the bundle has none.
fn eval_designs(bundle: &DatasetBundle) -> Vec<&DesignRecord> {
    let eval = bundle.with_role(Role::Eval);
    if eval.is_empty() {
        bundle.designs.iter().collect()
    } else {
        eval
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn generate(cli: &Cli, preset: &Option<String>) -> Result<bool> {
    let source = Source {
        preset: preset.clone(),
        bundle: None,
    };
    let bundle = load_source(cli, &source)?;
    let manifest = save_bundle(&bundle, &cli.out)?;
    println!(
        "{}: {} designs written to {}",
        manifest.config.name,
        manifest.designs.len(),
        cli.out.display()
    );
    Ok(true)
}

fn train(
    cli: &Cli,
    source: &Source,
    model: ModelArg,
    split: &Split,
    noise: f64,
    hyperparams: Option<&Path>,
) -> Result<bool> {
    let bundle = load_source(cli, source)?;
    let mut hp = match hyperparams {
        Some(path) => toml::from_str::<Hyperparams>(&read_text(path)?)
            .map_err(|e| Error::Config(e.to_string()))?,
        None => Hyperparams::desk(),
    };
    let seed = cli.seed.unwrap_or(0);
    hp.seed = seed;
    let split = FrameSplit {
        fraction: split.fraction,
        seed,
    };
    let train = bundle.with_role(Role::Train);
    let (trained, report) = match model {
        ModelArg::Hybrid => {
            let paired: Vec<PairedDesign> = train
                .iter()
                .map(|d| PairedDesign {
                    mesh: &d.mesh,
                    linear: &d.linear,
                    nonlinear: &d.nonlinear,
                })
                .collect();
            train_hybrid(&paired, &split, &hp, noise)?
        }
        ModelArg::Mgn => {
            let series: Vec<_> = train.iter().map(|d| (&d.mesh, &d.nonlinear)).collect();
            train_mgn(&series, &split, &hp, noise)?
        }
    };
    let meta = BTreeMap::from([
        ("dataset".to_string(), bundle.config.name.clone()),
        ("config_hash".to_string(), bundle.config_hash.clone()),
    ]);
    fs::create_dir_all(&cli.out)?;
    trained.save(&cli.out.join("model.json"), meta)?;
    write_json(&cli.out.join("train_report.json"), &report)?;
    println!(
        "trained {} on {} designs, final loss {:.3e}, {:.1} s",
        trained.kind.as_str(),
        train.len(),
        report.final_loss().unwrap_or(f64::NAN),
        report.wall_clock_seconds
    );
    Ok(true)
}

fn evaluate(cli: &Cli, source: &Source, checkpoint: &Path, split: &Split) -> Result<bool> {
    let bundle = load_source(cli, source)?;
    let trained = TrainedModel::load(checkpoint)?;
    let seed = cli.seed.unwrap_or(0);
    let split = FrameSplit {
        fraction: split.fraction,
        seed,
    };
    let scaler = gap_scaler(&bundle.with_role(Role::Train), &split)?;
    let mut evaluations = Vec::new();
    for d in eval_designs(&bundle) {
        let predicted = predict_design(&trained, d)?;
        let e = evaluate_design(&bundle.config.name, d, &predicted.frames, &scaler, seed)?;
        println!(
            "{}/{}: MAPE {:.4}% (linear {:.4}%), final max relative error {:.3}% (gap {:.3}%)",
            e.dataset,
            e.design,
            e.corrected.mape,
            e.uncorrected.mape,
            e.final_max_relative_error,
            e.final_max_relative_gap
        );
        evaluations.push(e);
    }
    write_json(&cli.out.join("evaluation.json"), &evaluations)?;
    Ok(true)
}

fn rollout(cli: &Cli, source: &Source, checkpoint: &Path, design: &str) -> Result<bool> {
    let bundle = load_source(cli, source)?;
    let trained = TrainedModel::load(checkpoint)?;
    let d = bundle.design(design)?;
    let predicted = predict_design(&trained, d)?;
    fs::create_dir_all(&cli.out)?;
    let stem = format!("{}_{}", bundle.config.name, d.id);
    let rows: Vec<Vec<f64>> = predicted
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![k as f64, k as f64 * predicted.dt, mean, max]
        })
        .collect();
    export_csv(
        &["frame", "time", "mean_temperature", "max_temperature"],
        &rows,
        &cli.out.join(format!("{stem}_rollout.csv")),
    )?;
    export_field_vtk(
        &d.mesh,
        predicted.final_frame(),
        "prediction",
        &cli.out.join(format!("{stem}_final.vtk")),
    )?;
    println!(
        "{} frames of {stem} written to {}",
        predicted.n_frames(),
        cli.out.display()
    );
    Ok(true)
}

fn report(cli: &Cli) -> Result<bool> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("report needs --config <experiment.toml>".into()))?;
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
    }
    if let Some(scale) = cli.scale {
        spec.scale = scale.into();
    }
    let report = run_experiment(&spec, &cli.out)?;
    for a in &report.aggregates {
        println!(
            "{}/{}: MAPE {:.4} +- {:.4}% (linear {:.4}%), ratio {:.4}, final max relative error {:.3}% (gap {:.3}%)",
            a.dataset,
            a.design,
            a.corrected.mape.mean,
            a.corrected.mape.std,
            a.uncorrected.mape.mean,
            a.reduction_ratio.mean,
            a.final_max_relative_error.mean,
            a.final_max_relative_gap
        );
    }
    if let Status::Failed { stage, message } = &report.status {
        eprintln!("experiment {} failed at {stage}: {message}", report.name);
    }
    println!("report written to {}", cli.out.display());
    Ok(report.is_complete())
}

fn calibrate(cli: &Cli, source: &Source) -> Result<bool> {
    let bundle = load_source(cli, source)?;
    let report = calibration_check(&bundle)?;
    for d in &report.designs {
        println!(
            "{}/{}: final max relative gap {:.3}% {}",
            report.dataset,
            d.design,
            d.gap_percent,
            if d.passed { "ok" } else { "outside range" }
        );
    }
    write_json(&cli.out.join("calibration.json"), &report)?;
    Ok(report.passed)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate { preset } => generate(cli, preset),
        Command::Train {
            source,
            model,
            split,
            noise,
            hyperparams,
        } => train(cli, source, *model, split, *noise, hyperparams.as_deref()),
        Command::Evaluate {
            source,
            checkpoint,
            split,
        } => evaluate(cli, source, checkpoint, split),
        Command::Rollout {
            source,
            checkpoint,
            design,
        } => rollout(cli, source, checkpoint, design),
        Command::Report => report(cli),
        Command::Calibrate { source } => calibrate(cli, source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
