use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use dimml_core::checkpoint::{load_checkpoint, save_checkpoint};
use dimml_core::config::{key_help, ExperimentConfig};
use dimml_core::dimsep::compute_partition;
use dimml_core::experiment::{compare, export_dims, export_features, run_experiment, write_epoch_log};
use dimml_core::inference::{evaluate_all, write_per_sample_csv, EvalMode};
use dimml_core::models::{init_model, ModelState};
use dimml_core::synthdata::{export_csv, generate, load_dataset, save_dataset, Dataset, GeneratedData};
use dimml_core::trainer::{train_encoders, train_fusion, train_joint, train_probes, Mode};
use dimml_core::Error;

const OUTPUT_DIR_ENV: &str = "DIMML_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "dimml", version, about = "Detached multimodal training on synthetic data")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set plan.mode=joint`. Values are read as JSON, else as strings.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Override the config seed (also clears `seeds`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct Source {
    /// Checkpoint to load; its embedded config is used unless `--config` is given.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file; regenerated from the config recipe when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        /// Dataset file [default: <output_dir>/dataset.dml]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-split, per-modality CSV files into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the encoders (or the whole network for `joint`) and write `encoders.ckpt`.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [default: <output_dir>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the fusion head over frozen encoders.
    Fuse {
        #[command(flatten)]
        source: Source,
        /// Fused checkpoint [default: fused.ckpt next to the input]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score feature dimensions and write `dims.json` and `dims.csv`.
    Dims {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Output directory [default: the checkpoint's directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report accuracy of every prediction path as JSON.
    Evaluate {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Also report one path's accuracy under `accuracy`: uni1, uni2, .., fusion, preds_avg, weighted.
        #[arg(long)]
        mode: Option<String>,
        /// Write the JSON record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-sample predictions, certainties and weights as CSV.
        #[arg(long)]
        per_sample: Option<PathBuf>,
    },
    /// Write each modality's encoder features as `modality<i>.csv`.
    ExportFeatures {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side summary table of finished experiments.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage for every seed and write the summary.
    Run,
}

fn validation(key: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        reason: reason.into(),
    }
}

fn read_json(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(validation("config", "top level must be a JSON object").into()),
        Err(e) => Err(validation("config", format!("{}: {e}", path.display())).into()),
    }
}

/// Config precedence: file (or checkpoint echo) < environment < `--set` < `--seed`.
fn resolve_config(args: &ConfigArgs, echo: Option<&Value>) -> Result<ExperimentConfig> {
    let mut map = match (&args.config, echo) {
        (Some(path), _) => read_json(path)?,
        (None, Some(Value::Object(map))) => map.clone(),
        _ => Map::new(),
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        map.insert("output_dir".into(), Value::String(dir));
    }
    for item in &args.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| validation(item, "expected KEY=VALUE"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
    }
    if let Some(seed) = args.seed {
        map.insert("seed".into(), json!(seed));
        map.insert("seeds".into(), json!([]));
    }
    Ok(ExperimentConfig::from_json_str(&Value::Object(map).to_string())?)
}

fn dataset_for(config: &ExperimentConfig, path: Option<&Path>) -> Result<GeneratedData> {
    let data = match path {
        Some(p) => load_dataset(p)?,
        None => generate(&config.recipe)?,
    };
    if data.recipe.num_classes != config.model.num_classes {
        return Err(validation("model.num_classes", "dataset disagrees with config").into());
    }
    Ok(data)
}

fn split_of(data: &GeneratedData, split: Split) -> &Dataset {
    match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    }
}

fn load_source(args: &ConfigArgs, source: &Source) -> Result<(ExperimentConfig, ModelState, GeneratedData)> {
    let (model, manifest) = load_checkpoint(&source.checkpoint)?;
    let config = resolve_config(args, Some(&manifest.config))?;
    let data = dataset_for(&config, source.data.as_deref())?;
    Ok((config, model, data))
}

fn parent_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let args = &cli.config;
    match cli.command {
        Command::GenData { out, csv } => {
            let config = resolve_config(args, None)?;
            let data = generate(&config.recipe)?;
            let out = out.unwrap_or_else(|| Path::new(&config.output_dir).join("dataset.dml"));
            create_dir(&parent_of(&out))?;
            save_dataset(&data, &out)?;
            println!("{}", out.display());
            if let Some(dir) = csv {
                create_dir(&dir)?;
                for p in export_csv(&data, &dir)? {
                    println!("{}", p.display());
                }
            }
        }
        Command::Train { data, out } => {
            let config = resolve_config(args, None)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&config.output_dir));
            create_dir(&dir)?;
            config.write(&dir.join("config.json"))?;
            let data = dataset_for(&config, data.as_deref())?;
            let model = init_model(&config.model_config())?;
            let (model, log, partition) = if config.plan.mode == Mode::Joint {
                let (model, mut log) = train_joint(&config.plan, &data.train, model)?;
                let (model, probes) = train_probes(&config.plan, &data.train, model)?;
                log.extend(probes);
                (model, log, None)
            } else {
                let out = train_encoders(&config.plan, &data.train, model)?;
                (out.model, out.log, out.partition)
            };
            write_epoch_log(&log, &dir.join("epochs.jsonl"))?;
            if let Some(p) = &partition {
                export_dims(p, &dir)?;
            }
            let path = dir.join("encoders.ckpt");
            save_checkpoint(&model, &config.to_flat_json()?, &path)?;
            println!("{}", path.display());
        }
        Command::Fuse { source, out } => {
            let (config, model, data) = load_source(args, &source)?;
            if config.plan.mode == Mode::Joint {
                return Err(validation("plan.mode", "joint training already fits the fusion head in `train`").into());
            }
            let (model, log) = train_fusion(&config.plan, &data.train, model)?;
            let out = out.unwrap_or_else(|| parent_of(&source.checkpoint).join("fused.ckpt"));
            create_dir(&parent_of(&out))?;
            save_checkpoint(&model, &config.to_flat_json()?, &out)?;
            write_epoch_log(&log, &out.with_extension("epochs.jsonl"))?;
            println!("{}", out.display());
        }
        Command::Dims { source, split, out } => {
            let (config, model, data) = load_source(args, &source)?;
            let partition = compute_partition(&model, split_of(&data, split), config.plan.score_metric)?;
            let dir = out.unwrap_or_else(|| parent_of(&source.checkpoint));
            create_dir(&dir)?;
            export_dims(&partition, &dir)?;
            println!("{}", dir.join("dims.csv").display());
        }
        Command::Evaluate {
            source,
            split,
            mode,
            out,
            per_sample,
        } => {
            let (config, model, data) = load_source(args, &source)?;
            let ds = split_of(&data, split);
            let metrics = evaluate_all(&model, ds, config.t_lw)?;
            let mut record = json!({
                "checkpoint": source.checkpoint.display().to_string(),
                "split": match split { Split::Train => "train", Split::Test => "test" },
                "samples": ds.len(),
                "t_lw": config.t_lw,
                "metrics": metrics,
            });
            if let Some(name) = mode {
                let mode: EvalMode = name.parse()?;
                record["mode"] = json!(mode.to_string());
                record["accuracy"] = json!(metrics.get(mode)?);
            }
            if let Some(path) = per_sample {
                write_per_sample_csv(&model, ds, config.t_lw, &path)?;
            }
            let text = serde_json::to_string_pretty(&record)? + "\n";
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::ExportFeatures { source, split, out } => {
            let (_, model, data) = load_source(args, &source)?;
            create_dir(&out)?;
            for p in export_features(&model, split_of(&data, split), &out)? {
                println!("{}", p.display());
            }
        }
        Command::Compare { dirs, out } => {
            let table = compare(&dirs)?;
            match out {
                Some(path) => fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{table}"),
            }
        }
        Command::Run => {
            let config = resolve_config(args, None)?;
            let (root, summary) = run_experiment(&config)?;
            println!("results: {}", root.display());
            println!("{:<12} {:>8} {:>8} {:>3}", "metric", "mean", "std", "n");
            for r in &summary.rows {
                println!("{:<12} {:>8.4} {:>8.4} {:>3}", r.metric, r.mean, r.std, r.n);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = format!("Config keys (flat JSON, dotted names):\n{}", key_help());
    let matches = Cli::command().after_long_help(help).try_get_matches();
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
