//! Training objectives, all built on a [`Tape`].
//!
//! The dimension-decoupled unidirectional contrastive (DUC) term compares a
//! learner modality's features with a teacher modality's features restricted
//! to a cross set of dimensions. Row `i` of the score matrix is
//! `−‖learner_i − teacher_j‖₂ / T` over every `j` in the batch, the positive
//! pair is `j = i`, and the teacher side is cut from the gradient.

use serde::{Deserialize, Serialize};

use crate::dimsep::{cross_sets_of, DimensionPartition, PartitionSet};
use crate::error::{Error, Result};
use crate::models::{encode_on_tape, head_on_tape, ModelVars};
use crate::numerics::{ops, Tape, Tensor, Var};
use crate::synthdata::MultimodalBatch;

/// Loss mixing coefficients and temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the shared-classifier cross-entropy.
    pub lambda_s: f64,
    /// Weight of the cross-modal transfer term.
    #[serde(rename = "lambda_D")]
    pub lambda_d: f64,
    pub t_duc: f64,
    /// Distillation temperature for the logit-distillation baseline.
    pub t_kd: f64,
    /// Distillation weight for the logit-distillation baseline.
    pub lambda_kd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_d: 1.0,
            t_duc: 1.0,
            t_kd: 2.0,
            lambda_kd: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("loss.lambda_s", self.lambda_s),
            ("loss.lambda_D", self.lambda_d),
            ("loss.lambda_kd", self.lambda_kd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (key, v) in [("loss.t_duc", self.t_duc), ("loss.t_kd", self.t_kd)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::validation(key, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Batch mean of `−log softmax(logits)[y]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

fn check_temperature(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// InfoNCE with Euclidean similarity: rows are anchors, columns candidates.
fn euclidean_infonce(tape: &mut Tape, anchors: Var, candidates: Var, t: f64) -> Result<Var> {
    let b = tape.value(anchors).rows();
    if tape.value(candidates).rows() != b {
        return Err(Error::shape("contrastive", "paired batches differ in size"));
    }
    let dist = tape.pairwise_euclidean(anchors, candidates)?;
    let scores = tape.scale(dist, -1.0 / t);
    let positives: Vec<usize> = (0..b).collect();
    tape.cross_entropy(scores, &positives)
}

/// A transfer term plus whether it degenerated to zero for lack of dimensions.
#[derive(Debug, Clone, Copy)]
pub struct DucTerm {
    pub loss: Var,
    pub empty_cross_set: bool,
}

/// Contrastive pull of `learner` toward `teacher` on `dims`.
///
/// With `stop_teacher`, the teacher features receive no gradient. An empty
/// `dims` yields an exact zero and sets [`DucTerm::empty_cross_set`].
pub fn duc_directed(
    tape: &mut Tape,
    learner: Var,
    teacher: Var,
    dims: &[usize],
    t: f64,
    stop_teacher: bool,
) -> Result<DucTerm> {
    check_temperature(t)?;
    if dims.is_empty() {
        return Ok(DucTerm {
            loss: tape.constant(Tensor::scalar(0.0)),
            empty_cross_set: true,
        });
    }
    let teacher = if stop_teacher { tape.stop_gradient(teacher) } else { teacher };
    let l = tape.select_cols(learner, dims)?;
    let r = tape.select_cols(teacher, dims)?;
    Ok(DucTerm {
        loss: euclidean_infonce(tape, l, r, t)?,
        empty_cross_set: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Modality 1 learns on `ineffective₁ ∩ effective₂`; modality 2 is held fixed.
    First,
    /// Modality 2 learns on `effective₁ ∩ ineffective₂`; modality 1 is held fixed.
    Second,
}

/// Two-modality transfer loss in one direction.
pub fn duc_loss(
    tape: &mut Tape,
    h1: Var,
    h2: Var,
    partitions: (&DimensionPartition, &DimensionPartition),
    t: f64,
    direction: Direction,
) -> Result<DucTerm> {
    let (ne1_e2, e1_ne2) = cross_sets_of(partitions.0, partitions.1)?;
    let term = match direction {
        Direction::First => duc_directed(tape, h1, h2, &ne1_e2, t, true)?,
        Direction::Second => duc_directed(tape, h2, h1, &e1_ne2, t, true)?,
    };
    if term.empty_cross_set {
        log::warn!("transfer term {direction:?} has an empty cross set; contributing 0");
    }
    Ok(term)
}

/// Both directions of [`duc_loss`], summed, with gradient flowing to both sides.
pub fn dbc_loss(
    tape: &mut Tape,
    h1: Var,
    h2: Var,
    partitions: (&DimensionPartition, &DimensionPartition),
    t: f64,
) -> Result<Var> {
    let (ne1_e2, e1_ne2) = cross_sets_of(partitions.0, partitions.1)?;
    let a = duc_directed(tape, h1, h2, &ne1_e2, t, false)?;
    let b = duc_directed(tape, h2, h1, &e1_ne2, t, false)?;
    tape.add(a.loss, b.loss)
}

/// Symmetric full-dimension InfoNCE with Euclidean similarity, no stop-gradient.
pub fn contrastive_loss_full(tape: &mut Tape, h1: Var, h2: Var, t: f64) -> Result<Var> {
    check_temperature(t)?;
    let a = euclidean_infonce(tape, h1, h2, t)?;
    let b = euclidean_infonce(tape, h2, h1, t)?;
    let sum = tape.add(a, b)?;
    Ok(tape.scale(sum, 0.5))
}

/// `T² · KL(softmax(z_other/T) ‖ softmax(z_self/T))`, batch mean; `z_other` is a fixed teacher.
pub fn cm_dist_loss(tape: &mut Tape, z_self: Var, z_other: Var, t_kd: f64) -> Result<Var> {
    check_temperature(t_kd)?;
    let target = ops::softmax(&ops::scale(tape.value(z_other), 1.0 / t_kd))?;
    let student = tape.scale(z_self, 1.0 / t_kd);
    let kl = tape.kl_to_target(student, target)?;
    Ok(tape.scale(kl, t_kd * t_kd))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectivePhase {
    Warmup,
    Main,
}

/// Cross-modal term added in the main phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferTerm {
    None,
    /// Unidirectional, dimension-decoupled, teacher stop-gradient.
    Duc,
    /// Both cross sets, no stop-gradient.
    Dbc,
    /// All dimensions, symmetric, no stop-gradient.
    FullContrastive,
    /// Logit distillation from the other modalities (weighted by `lambda_kd`).
    CmDist,
}

impl TransferTerm {
    pub fn needs_partition(self) -> bool {
        matches!(self, TransferTerm::Duc | TransferTerm::Dbc)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOutput {
    pub loss: Var,
    /// Modality logits from its own head.
    pub logits: Var,
    pub empty_cross_sets: usize,
}

/// The per-modality objective.
///
/// Warmup: `CE(uniᵢ) + λ_s·CE(sharedᵢ)`. Main: adds `λ_D` times the mean of
/// the transfer term over every partner modality (or `λ_kd` times the
/// distillation term for [`TransferTerm::CmDist`]). Terms with a zero weight
/// are left off the tape entirely.
#[allow(clippy::too_many_arguments)]
pub fn modality_objective(
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &MultimodalBatch,
    modality: usize,
    partition: Option<&PartitionSet>,
    weights: &LossWeights,
    phase: ObjectivePhase,
    term: TransferTerm,
) -> Result<ObjectiveOutput> {
    let m = vars.encoders.len();
    if modality >= m || batch.num_modalities() != m {
        return Err(Error::invalid(format!(
            "modality {modality} invalid for a {m}-modality model / {}-modality batch",
            batch.num_modalities()
        )));
    }
    let main = phase == ObjectivePhase::Main;
    if main && term.needs_partition() && partition.is_none() {
        return Err(Error::invalid("main-phase objective needs a dimension partition"));
    }

    let encode = |tape: &mut Tape, i: usize| -> Result<Var> {
        let x = tape.constant(batch.inputs[i].clone());
        encode_on_tape(tape, &vars.encoders[i], x)
    };
    let h = encode(tape, modality)?;
    let logits = head_on_tape(tape, vars.uni_heads[modality], h)?;
    let mut loss = tape.cross_entropy(logits, &batch.labels)?;

    if weights.lambda_s != 0.0 {
        let sz = head_on_tape(tape, vars.shared_head, h)?;
        let ce = tape.cross_entropy(sz, &batch.labels)?;
        let scaled = tape.scale(ce, weights.lambda_s);
        loss = tape.add(loss, scaled)?;
    }

    let mut empty = 0;
    let (weight, active) = match term {
        TransferTerm::CmDist => (weights.lambda_kd, main),
        TransferTerm::None => (0.0, false),
        _ => (weights.lambda_d, main),
    };
    if active && weight != 0.0 {
        let mut terms = Vec::with_capacity(m - 1);
        for j in (0..m).filter(|&j| j != modality) {
            let hj = encode(tape, j)?;
            let v = match term {
                TransferTerm::Duc => {
                    let p = partition.expect("checked above");
                    let t = duc_directed(tape, h, hj, p.cross(modality, j), weights.t_duc, true)?;
                    empty += usize::from(t.empty_cross_set);
                    t.loss
                }
                TransferTerm::Dbc => {
                    let p = partition.expect("checked above");
                    let a = duc_directed(tape, h, hj, p.cross(modality, j), weights.t_duc, false)?;
                    let b = duc_directed(tape, hj, h, p.cross(j, modality), weights.t_duc, false)?;
                    empty += usize::from(a.empty_cross_set) + usize::from(b.empty_cross_set);
                    tape.add(a.loss, b.loss)?
                }
                TransferTerm::FullContrastive => contrastive_loss_full(tape, h, hj, weights.t_duc)?,
                TransferTerm::CmDist => {
                    let zj = head_on_tape(tape, vars.uni_heads[j], hj)?;
                    let zj = tape.stop_gradient(zj);
                    cm_dist_loss(tape, logits, zj, weights.t_kd)?
                }
                TransferTerm::None => unreachable!(),
            };
            terms.push(v);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let scaled = tape.scale(total, weight / terms.len() as f64);
        loss = tape.add(loss, scaled)?;
    }
    if empty > 0 {
        log::debug!("modality {modality}: {empty} empty cross set(s) in transfer term");
    }
    Ok(ObjectiveOutput {
        loss,
        logits,
        empty_cross_sets: empty,
    })
}
