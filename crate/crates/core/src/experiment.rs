//! End-to-end runs: data generation, both training stages, checkpoints,
//! logs, dimension export, metrics and multi-seed summaries.
//!
//! Per-seed layout under `output_dir/seed_{s}/`:
//!
//! ```text
//! config.json     flat config pinned to this seed
//! dataset.dml     generated data
//! encoders.ckpt   after the encoder stage
//! fused.ckpt      after the fusion stage
//! epochs.jsonl    one JSON record per epoch
//! dims.json/.csv  dimension partition (modes that use one)
//! metrics.json    test and train accuracy of every prediction path
//! FAILED          present only when a stage failed; holds the error
//! ```
//!
//! The run root holds `config.json`, `summary.json` and `summary.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::config::ExperimentConfig;
use crate::dimsep::PartitionSet;
use crate::error::{Error, Result};
use crate::inference::{evaluate_all, Metrics};
use crate::models::{head_logits, init_model, ModelState};
use crate::synthdata::{generate, save_dataset, write_modality_csv, Dataset};
use crate::trainer::{train_baseline, EpochRecord};

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: String,
    pub seed: u64,
    /// Prediction path reported as the mode's multimodal accuracy.
    pub headline: String,
    pub multimodal: f64,
    pub test: Metrics,
    pub train: Metrics,
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn get(&self, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Everything produced by training one seed, before anything touches disk.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub data: crate::synthdata::GeneratedData,
    pub encoders: ModelState,
    pub model: ModelState,
    pub partition: Option<PartitionSet>,
    pub log: Vec<EpochRecord>,
    pub metrics: RunMetrics,
}

/// Trains and evaluates `config` (already pinned to one seed) in memory.
pub fn train_seed(config: &ExperimentConfig) -> Result<SeedRun> {
    config.validate()?;
    let data = generate(&config.recipe)?;
    let model = init_model(&config.model_config())?;
    let out = train_baseline(&config.plan, &data.train, model)?;
    let test = evaluate_all(&out.model, &data.test, config.t_lw)?;
    let train = evaluate_all(&out.model, &data.train, config.t_lw)?;
    let headline = config.plan.mode.headline();
    let metrics = RunMetrics {
        mode: config.plan.mode.to_string(),
        seed: config.seed,
        headline: headline.to_string(),
        multimodal: test.get(headline)?,
        test,
        train,
    };
    Ok(SeedRun {
        data,
        encoders: out.encoders,
        model: out.model,
        partition: out.partition,
        log: out.log,
        metrics,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serialized `metrics.json` text.
pub fn metrics_json(m: &RunMetrics) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)? + "\n")
}

pub fn write_epoch_log(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes `dims.json` (the whole partition) and `dims.csv`
/// (`modality,dim,score,effective`, modalities numbered from 1).
pub fn export_dims(partition: &PartitionSet, dir: &Path) -> Result<()> {
    write_text(&dir.join("dims.json"), &(serde_json::to_string_pretty(partition)? + "\n"))?;
    write_text(&dir.join("dims.csv"), &dims_csv(partition))
}

pub fn dims_csv(partition: &PartitionSet) -> String {
    let mut out = String::from("modality,dim,score,effective\n");
    for (i, (s, p)) in partition.scores.iter().zip(&partition.partitions).enumerate() {
        for (m, score) in s.scores.iter().enumerate() {
            let _ = writeln!(out, "{},{m},{score},{}", i + 1, p.effective.contains(&m));
        }
    }
    out
}

fn persist_seed(config: &ExperimentConfig, dir: &Path) -> Result<RunMetrics> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    config.write(&dir.join("config.json"))?;
    let run = train_seed(config)?;
    let echo = config.to_flat_json()?;
    save_dataset(&run.data, &dir.join("dataset.dml"))?;
    save_checkpoint(&run.encoders, &echo, &dir.join("encoders.ckpt"))?;
    save_checkpoint(&run.model, &echo, &dir.join("fused.ckpt"))?;
    write_epoch_log(&run.log, &dir.join("epochs.jsonl"))?;
    if let Some(p) = &run.partition {
        export_dims(p, dir)?;
    }
    write_text(&dir.join("metrics.json"), &metrics_json(&run.metrics)?)?;
    Ok(run.metrics)
}

fn run_seed_dir(config: &ExperimentConfig, root: &Path) -> Result<RunMetrics> {
    let dir = root.join(format!("seed_{}", config.seed));
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    persist_seed(config, &dir).inspect_err(|e| {
        log::error!("seed {} failed: {e}", config.seed);
        let _ = fs::create_dir_all(&dir);
        let _ = fs::write(&marker, format!("{e}\n"));
    })
}

/// Mean and sample standard deviation of every metric across seeds.
pub fn summarize(runs: &[RunMetrics]) -> Result<Summary> {
    let first = runs.first().ok_or_else(|| Error::invalid("nothing to summarize"))?;
    let mut names = vec!["multimodal".to_string()];
    names.extend((1..=first.test.uni.len()).map(|i| format!("uni{i}")));
    names.extend(["fusion", "preds_avg", "weighted"].map(String::from));
    let value = |m: &RunMetrics, name: &str| -> f64 {
        match name {
            "multimodal" => m.multimodal,
            "fusion" => m.test.fusion,
            "preds_avg" => m.test.preds_avg,
            "weighted" => m.test.weighted,
            uni => m.test.uni[uni[3..].parse::<usize>().unwrap() - 1],
        }
    };
    let rows = names
        .into_iter()
        .map(|name| {
            let xs: Vec<f64> = runs.iter().map(|m| value(m, &name)).collect();
            let (mean, std) = mean_std(&xs);
            SummaryRow {
                metric: name,
                mean,
                std,
                n: xs.len(),
            }
        })
        .collect();
    Ok(Summary {
        mode: first.mode.clone(),
        seeds: runs.iter().map(|m| m.seed).collect(),
        rows,
    })
}

/// Sample standard deviation (`n − 1`); zero for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary_csv(s: &Summary) -> String {
    let mut out = String::from("metric,mean,std,n\n");
    for r in &s.rows {
        let _ = writeln!(out, "{},{},{},{}", r.metric, r.mean, r.std, r.n);
    }
    out
}

/// Runs every seed of `config` under `config.output_dir` and writes the summary.
///
/// A failing seed leaves its partial artifacts plus a `FAILED` marker; the
/// remaining seeds still run and the first error is returned at the end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(PathBuf, Summary)> {
    config.validate()?;
    let root = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    config.write(&root.join("config.json"))?;
    let seeded: Vec<ExperimentConfig> = config.run_seeds().into_iter().map(|s| config.with_seed(s)).collect();
    let results: Vec<Result<RunMetrics>> = if config.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeded
                .iter()
                .map(|c| scope.spawn(|| run_seed_dir(c, &root)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("worker panicked".into()))))
                .collect()
        })
    } else {
        seeded.iter().map(|c| run_seed_dir(c, &root)).collect()
    };
    let mut runs = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(m) => runs.push(m),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let summary = summarize(&runs)?;
    write_text(&root.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    write_text(&root.join("summary.csv"), &summary_csv(&summary))?;
    Ok((root, summary))
}

/// Writes each modality's encoder features as `modality{i}.csv` under `dir`.
pub fn export_features(model: &ModelState, dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let feats = model.features(dataset.inputs())?;
    let mut written = Vec::new();
    for (i, h) in feats.iter().enumerate() {
        let path = dir.join(format!("modality{}.csv", i + 1));
        write_modality_csv(h, dataset.labels(), &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Accuracy of a modality's own head applied to imported feature rows.
pub fn head_accuracy_on_features(model: &ModelState, modality: usize, features: &crate::Tensor, labels: &[usize]) -> Result<f64> {
    let head = model
        .uni_heads
        .get(modality)
        .ok_or_else(|| Error::invalid(format!("no modality {}", modality + 1)))?;
    let z = head_logits(head, features)?;
    Ok(crate::dimsep::accuracy(&crate::numerics::ops::argmax_rows(&z), labels))
}

/// Loads `summary.json` from each results directory and lays them side by side.
///
/// Output CSV: `run,mode,metric,mean,std,n`.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    let mut out = String::from("run,mode,metric,mean,std,n\n");
    for dir in dirs {
        let path = dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let s: Summary = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        for r in &s.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", dir.display(), s.mode, r.metric, r.mean, r.std, r.n);
        }
    }
    Ok(out)
}
