//! Prediction paths and certainty-aware logit weighting.
//!
//! Each source (every modality's own head, plus the fusion head) is scored per
//! sample by its maximum softmax probability. Sources are then mixed with
//! weights `softmax_s(c_s / T)`, so a source that is confident on a given
//! sample dominates that sample's final logits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dimsep::accuracy;
use crate::error::{Error, Result};
use crate::models::{fuse_concat, head_logits, ModelState};
use crate::numerics::{ops, Tensor};
use crate::synthdata::Dataset;

/// `c_j = max_k softmax(z_j)_k`.
pub fn certainty(logits: &Tensor) -> Result<Tensor> {
    let p = ops::softmax(logits)?;
    let k = p.cols();
    let c = (0..p.rows())
        .map(|r| p.data()[r * k..(r + 1) * k].iter().copied().fold(f64::MIN, f64::max))
        .collect();
    Tensor::vector(c)
}

/// Per-sample certainty-weighted combination of `sources` (each `B×K`).
///
/// Returns the combined logits and a `B×S` weight matrix whose column `s`
/// belongs to `sources[s]`.
pub fn weighted_logits(sources: &[Tensor], t_lw: f64) -> Result<(Tensor, Tensor)> {
    let first = sources
        .first()
        .ok_or_else(|| Error::invalid("weighted_logits needs at least one source"))?;
    if t_lw.is_nan() || t_lw <= 0.0 {
        return Err(Error::invalid(format!("t_lw must be positive, got {t_lw}")));
    }
    if sources.iter().any(|s| s.shape() != first.shape() || !s.is_matrix()) {
        return Err(Error::shape("weighted_logits", "sources differ in shape"));
    }
    let (b, k, n) = (first.rows(), first.cols(), sources.len());
    let certs = sources.iter().map(certainty).collect::<Result<Vec<_>>>()?;
    let mut scaled = Vec::with_capacity(b * n);
    for j in 0..b {
        scaled.extend(certs.iter().map(|c| c.data()[j] / t_lw));
    }
    let weights = ops::softmax(&Tensor::matrix(b, n, scaled)?)?;
    let mut out = vec![0.0; b * k];
    for j in 0..b {
        for (s, src) in sources.iter().enumerate() {
            let w = weights.get(j, s);
            for (o, z) in out[j * k..(j + 1) * k].iter_mut().zip(src.row(j)) {
                *o += w * z;
            }
        }
    }
    Ok((Tensor::matrix(b, k, out)?, weights))
}

/// Every prediction path for one input set.
#[derive(Debug, Clone)]
pub struct PredictionBundle {
    pub uni_logits: Vec<Tensor>,
    pub fusion_logits: Tensor,
    /// Per source, modalities first then fusion.
    pub certainties: Vec<Tensor>,
    /// `B×(M+1)`, columns ordered like `certainties`.
    pub weights: Tensor,
    pub final_logits: Tensor,
}

impl PredictionBundle {
    /// Argmax of the mean of per-modality softmax outputs.
    pub fn preds_avg(&self) -> Result<Vec<usize>> {
        let mut acc = ops::softmax(&self.uni_logits[0])?;
        for z in &self.uni_logits[1..] {
            acc = ops::add(&acc, &ops::softmax(z)?)?;
        }
        let acc = ops::scale(&acc, 1.0 / self.uni_logits.len() as f64);
        Ok(ops::argmax_rows(&acc))
    }
}

pub fn predict(model: &ModelState, inputs: &[Tensor], t_lw: f64) -> Result<PredictionBundle> {
    let feats = model.features(inputs)?;
    let uni_logits = feats
        .iter()
        .zip(&model.uni_heads)
        .map(|(h, head)| head_logits(head, h))
        .collect::<Result<Vec<_>>>()?;
    let fusion_logits = head_logits(&model.fusion_head, &fuse_concat(&feats)?)?;
    let mut sources = uni_logits.clone();
    sources.push(fusion_logits.clone());
    let certainties = sources.iter().map(certainty).collect::<Result<Vec<_>>>()?;
    let (final_logits, weights) = weighted_logits(&sources, t_lw)?;
    Ok(PredictionBundle {
        uni_logits,
        fusion_logits,
        certainties,
        weights,
        final_logits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Uni(usize),
    Fusion,
    PredsAvg,
    Weighted,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Self::Fusion),
            "preds_avg" => Ok(Self::PredsAvg),
            "weighted" => Ok(Self::Weighted),
            _ => s
                .strip_prefix("uni")
                .and_then(|n| n.trim_start_matches([':', '_']).parse::<usize>().ok())
                .and_then(|n| n.checked_sub(1))
                .map(Self::Uni)
                .ok_or_else(|| Error::UnknownMode(s.to_string())),
        }
    }
}

/// Modalities are numbered from 1 in every user-facing name.
impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Uni(i) => write!(f, "uni{}", i + 1),
            Self::Fusion => f.write_str("fusion"),
            Self::PredsAvg => f.write_str("preds_avg"),
            Self::Weighted => f.write_str("weighted"),
        }
    }
}

/// Top-1 accuracy for every prediction path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub uni: Vec<f64>,
    pub fusion: f64,
    pub preds_avg: f64,
    pub weighted: f64,
}

impl Metrics {
    pub fn get(&self, mode: EvalMode) -> Result<f64> {
        match mode {
            EvalMode::Uni(i) => self
                .uni
                .get(i)
                .copied()
                .ok_or_else(|| Error::UnknownMode(mode.to_string())),
            EvalMode::Fusion => Ok(self.fusion),
            EvalMode::PredsAvg => Ok(self.preds_avg),
            EvalMode::Weighted => Ok(self.weighted),
        }
    }
}

pub fn evaluate_all(model: &ModelState, dataset: &Dataset, t_lw: f64) -> Result<Metrics> {
    let bundle = predict(model, dataset.inputs(), t_lw)?;
    let labels = dataset.labels();
    Ok(Metrics {
        uni: bundle
            .uni_logits
            .iter()
            .map(|z| accuracy(&ops::argmax_rows(z), labels))
            .collect(),
        fusion: accuracy(&ops::argmax_rows(&bundle.fusion_logits), labels),
        preds_avg: accuracy(&bundle.preds_avg()?, labels),
        weighted: accuracy(&ops::argmax_rows(&bundle.final_logits), labels),
    })
}

pub fn evaluate(model: &ModelState, dataset: &Dataset, mode: EvalMode, t_lw: f64) -> Result<f64> {
    if let EvalMode::Uni(i) = mode {
        if i >= model.num_modalities() {
            return Err(Error::UnknownMode(mode.to_string()));
        }
    }
    evaluate_all(model, dataset, t_lw)?.get(mode)
}

/// Per-sample CSV: `sample,label,pred_uni1..,pred_fusion,pred_weighted,c1..,cf,w1..,wf`.
pub fn write_per_sample_csv(model: &ModelState, dataset: &Dataset, t_lw: f64, path: &Path) -> Result<()> {
    let bundle = predict(model, dataset.inputs(), t_lw)?;
    let m = bundle.uni_logits.len();
    let uni_preds: Vec<Vec<usize>> = bundle.uni_logits.iter().map(ops::argmax_rows).collect();
    let fusion_preds = ops::argmax_rows(&bundle.fusion_logits);
    let final_preds = ops::argmax_rows(&bundle.final_logits);

    let mut out = String::from("sample,label");
    for i in 1..=m {
        let _ = write!(out, ",pred_uni{i}");
    }
    out.push_str(",pred_fusion,pred_weighted");
    for i in 1..=m {
        let _ = write!(out, ",c{i}");
    }
    out.push_str(",cf");
    for i in 1..=m {
        let _ = write!(out, ",w{i}");
    }
    out.push_str(",wf\n");
    for (j, y) in dataset.labels().iter().enumerate() {
        let _ = write!(out, "{j},{y}");
        for p in &uni_preds {
            let _ = write!(out, ",{}", p[j]);
        }
        let _ = write!(out, ",{},{}", fusion_preds[j], final_preds[j]);
        for c in &bundle.certainties {
            let _ = write!(out, ",{}", c.data()[j]);
        }
        for s in 0..=m {
            let _ = write!(out, ",{}", bundle.weights.get(j, s));
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
