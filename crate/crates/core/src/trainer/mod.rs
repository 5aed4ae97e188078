//! Two-stage training: detached encoder training (warmup, one-shot dimension
//! separation, transfer-augmented objective), then a fusion head over frozen
//! features. Also hosts the comparison baselines.

mod optimizer;
mod plan;

use serde::{Deserialize, Serialize};

pub use optimizer::{LrSchedule, OptimizerState};
pub use plan::{Mode, TrainPlan};

use crate::dimsep::{accuracy, compute_partition, PartitionSet};
use crate::error::{Error, Result};
use crate::losses::{modality_objective, LossWeights, ObjectivePhase, TransferTerm};
use crate::models::{
    encode_on_tape, encoder_prefix, fuse_concat, head_on_tape, uni_head_prefix, LinearHead, ModelState, Phase,
    FUSION_HEAD_PREFIX, SHARED_HEAD_PREFIX,
};
use crate::numerics::{derive_seed, ops, Tape, Tensor};
use crate::synthdata::{batch_indices, Dataset};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    /// Mean objective per trained component (one per modality, or one for fused stages).
    pub loss: Vec<f64>,
    /// Training accuracy per component, measured on the fly.
    pub accuracy: Vec<f64>,
}

/// Encoder-stage result.
#[derive(Debug, Clone)]
pub struct EncoderOutcome {
    pub model: ModelState,
    pub partition: Option<PartitionSet>,
    pub log: Vec<EpochRecord>,
}

fn owned_by(modality: usize, with_shared: bool) -> impl Fn(&str) -> bool {
    let enc = encoder_prefix(modality);
    let head = uni_head_prefix(modality);
    move |name: &str| {
        name.starts_with(&enc) || name.starts_with(&head) || (with_shared && name.starts_with(SHARED_HEAD_PREFIX))
    }
}

fn effective_weights(plan: &TrainPlan) -> LossWeights {
    let mut w = plan.loss;
    if !plan.mode.uses_shared_head() {
        w.lambda_s = 0.0;
        w.lambda_d = 0.0;
    }
    w
}

fn check_data(model: &ModelState, data: &Dataset) -> Result<()> {
    if data.num_modalities() != model.num_modalities() {
        return Err(Error::invalid(format!(
            "dataset has {} modalities, model {}",
            data.num_modalities(),
            model.num_modalities()
        )));
    }
    for (i, (x, enc)) in data.inputs().iter().zip(&model.encoders).enumerate() {
        if x.cols() != enc.input_dim() {
            return Err(Error::shape(
                "train",
                format!("modality {i}: data width {} vs encoder width {}", x.cols(), enc.input_dim()),
            ));
        }
    }
    if data.num_classes != model.meta.num_classes {
        return Err(Error::invalid("dataset and model disagree on class count"));
    }
    Ok(())
}

/// Detached per-modality encoder training.
///
/// Epochs `[0, warmup)` use `CE + λ_s·CE_shared` per modality. At epoch
/// `warmup` the dimension partition is computed once from full training-set
/// features; later epochs add the transfer term. Within each batch the
/// modalities step one after another, each touching only its own encoder,
/// its own head and (when used) the shared head.
pub fn train_encoders(plan: &TrainPlan, train: &Dataset, mut model: ModelState) -> Result<EncoderOutcome> {
    plan.validate()?;
    check_data(&model, train)?;
    if plan.mode == Mode::Joint {
        return Err(Error::invalid("joint mode does not use detached encoder training"));
    }
    let m = model.num_modalities();
    let modalities: Vec<usize> = match plan.mode {
        Mode::Unimodal(i) if i >= m => return Err(Error::invalid(format!("no modality {i}"))),
        Mode::Unimodal(i) => vec![i],
        _ => (0..m).collect(),
    };
    let weights = effective_weights(plan);
    let term = plan.mode.transfer_term();
    let staged = plan.mode.uses_shared_head();
    let with_shared = weights.lambda_s != 0.0;

    let mut opt = OptimizerState::new(plan.momentum, plan.weight_decay);
    let mut partition: Option<PartitionSet> = model.meta.partition.clone();
    let mut log = Vec::with_capacity(plan.epochs);

    for epoch in 0..plan.epochs {
        let main = !staged || epoch >= plan.warmup_epochs;
        if plan.mode.uses_partition()
            && epoch >= plan.warmup_epochs
            && (epoch == plan.warmup_epochs || plan.recompute_partition)
        {
            let p = compute_partition(&model, train, plan.score_metric)?;
            for c in p.cross_sets.iter().filter(|c| c.dims.is_empty()) {
                log::warn!(
                    "epoch {epoch}: cross set of modality {} learning from {} is empty; that transfer term contributes 0",
                    c.learner + 1,
                    c.teacher + 1
                );
            }
            partition = Some(p);
        }
        let phase = if main { ObjectivePhase::Main } else { ObjectivePhase::Warmup };
        model.meta.phase = if main { Phase::Main } else { Phase::Warmup };
        let lr = plan.lr.lr_at(epoch);

        let mut loss_sum = vec![0.0; m];
        let mut hits = vec![0usize; m];
        let batches = batch_indices(train.len(), plan.batch_size, derive_seed(plan.seed, &format!("encoder/{epoch}")))?;
        for rows in &batches {
            let batch = train.select(rows);
            for &i in &modalities {
                let mut tape = Tape::new();
                let vars = model.register(&mut tape)?;
                let out = modality_objective(
                    &mut tape,
                    &vars,
                    &batch,
                    i,
                    partition.as_ref(),
                    &weights,
                    phase,
                    if main { term } else { TransferTerm::None },
                )?;
                let value = tape.value(out.loss).item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("modality {i} loss diverged at epoch {epoch}")));
                }
                loss_sum[i] += value * rows.len() as f64;
                let preds = ops::argmax_rows(tape.value(out.logits));
                hits[i] += preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
                let grads = tape.backward(out.loss)?;
                opt.step_model(&mut model, grads.params(), lr, owned_by(i, with_shared))?;
            }
        }
        let n = train.len() as f64;
        log.push(EpochRecord {
            stage: "encoder".into(),
            epoch,
            phase: if main { "main" } else { "warmup" }.into(),
            lr,
            loss: modalities.iter().map(|&i| loss_sum[i] / n).collect(),
            accuracy: modalities.iter().map(|&i| hits[i] as f64 / n).collect(),
        });
    }

    if plan.mode.uses_partition() && plan.warmup_epochs == plan.epochs {
        log::warn!(
            "warmup spans all {} epochs: the dimension partition is computed but never used",
            plan.epochs
        );
        partition = Some(compute_partition(&model, train, plan.score_metric)?);
    }
    model.meta.phase = Phase::EncodersTrained;
    model.meta.partition = partition.clone();
    Ok(EncoderOutcome { model, partition, log })
}

/// Trains `head` with cross-entropy on fixed `features`.
fn train_head_on_features(
    plan: &TrainPlan,
    head: &mut LinearHead,
    features: &Tensor,
    labels: &[usize],
    stage: &str,
) -> Result<Vec<EpochRecord>> {
    let mut opt = OptimizerState::new(plan.momentum, plan.weight_decay);
    let mut log = Vec::with_capacity(plan.fusion_epochs);
    let n = labels.len();
    for epoch in 0..plan.fusion_epochs {
        let lr = plan.fusion_lr.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        let batches = batch_indices(n, plan.batch_size, derive_seed(plan.seed, &format!("{stage}/{epoch}")))?;
        for rows in &batches {
            let x = features.gather_rows(rows);
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let mut tape = Tape::new();
            let w = tape.param("weight", head.weight.clone())?;
            let b = tape.param("bias", head.bias.clone())?;
            let xv = tape.constant(x);
            let z = head_on_tape(&mut tape, (w, b), xv)?;
            let loss = tape.cross_entropy(z, &y)?;
            loss_sum += tape.value(loss).item() * rows.len() as f64;
            hits += ops::argmax_rows(tape.value(z))
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            let grads = tape.backward(loss)?;
            opt.sgd_step("weight", &mut head.weight, grads.get("weight").unwrap(), lr)?;
            opt.sgd_step("bias", &mut head.bias, grads.get("bias").unwrap(), lr)?;
        }
        log.push(EpochRecord {
            stage: stage.into(),
            epoch,
            phase: "frozen_encoders".into(),
            lr,
            loss: vec![loss_sum / n as f64],
            accuracy: vec![hits as f64 / n as f64],
        });
    }
    Ok(log)
}

/// Trains the fusion head on concatenated frozen features; nothing else changes.
pub fn train_fusion(plan: &TrainPlan, train: &Dataset, mut model: ModelState) -> Result<(ModelState, Vec<EpochRecord>)> {
    plan.validate()?;
    check_data(&model, train)?;
    let feats = fuse_concat(&model.features(train.inputs())?)?;
    let log = train_head_on_features(plan, &mut model.fusion_head, &feats, train.labels(), "fusion")?;
    model.meta.phase = Phase::Fused;
    Ok((model, log))
}

/// Fits each modality's own head as a linear probe over frozen encoder features.
pub fn train_probes(plan: &TrainPlan, train: &Dataset, mut model: ModelState) -> Result<(ModelState, Vec<EpochRecord>)> {
    check_data(&model, train)?;
    let feats = model.features(train.inputs())?;
    let mut log = Vec::new();
    for (i, h) in feats.iter().enumerate() {
        log.extend(train_head_on_features(
            plan,
            &mut model.uni_heads[i],
            h,
            train.labels(),
            &format!("probe{i}"),
        )?);
    }
    Ok((model, log))
}

/// Conventional joint training: one cross-entropy over the fusion head on
/// concatenated features, with gradients reaching every encoder.
pub fn train_joint(plan: &TrainPlan, train: &Dataset, mut model: ModelState) -> Result<(ModelState, Vec<EpochRecord>)> {
    plan.validate()?;
    check_data(&model, train)?;
    let m = model.num_modalities();
    let mut opt = OptimizerState::new(plan.momentum, plan.weight_decay);
    let mut log = Vec::with_capacity(plan.epochs);
    let owned = |name: &str| name.starts_with("encoder.") || name.starts_with(FUSION_HEAD_PREFIX);
    for epoch in 0..plan.epochs {
        let lr = plan.lr.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        let batches = batch_indices(train.len(), plan.batch_size, derive_seed(plan.seed, &format!("joint/{epoch}")))?;
        for rows in &batches {
            let batch = train.select(rows);
            let mut tape = Tape::new();
            let vars = model.register(&mut tape)?;
            let mut feats = Vec::with_capacity(m);
            for i in 0..m {
                let x = tape.constant(batch.inputs[i].clone());
                feats.push(encode_on_tape(&mut tape, &vars.encoders[i], x)?);
            }
            let cat = tape.concat_cols(&feats)?;
            let z = head_on_tape(&mut tape, vars.fusion_head, cat)?;
            let loss = tape.cross_entropy(z, &batch.labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("joint loss diverged at epoch {epoch}")));
            }
            loss_sum += value * rows.len() as f64;
            hits += ops::argmax_rows(tape.value(z))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count();
            let grads = tape.backward(loss)?;
            opt.step_model(&mut model, grads.params(), lr, owned)?;
        }
        let n = train.len() as f64;
        log.push(EpochRecord {
            stage: "joint".into(),
            epoch,
            phase: "joint".into(),
            lr,
            loss: vec![loss_sum / n],
            accuracy: vec![hits as f64 / n],
        });
    }
    model.meta.phase = Phase::Fused;
    Ok((model, log))
}

/// Output of a complete training run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// State after the encoder stage (before any fusion or probe training).
    pub encoders: ModelState,
    pub model: ModelState,
    pub partition: Option<PartitionSet>,
    pub log: Vec<EpochRecord>,
}

/// Runs every stage of `plan.mode` from an initialized model.
///
/// Detached modes train encoders then the fusion head. Joint mode trains
/// encoders and fusion head together, then fits per-modality linear probes
/// so unimodal accuracy can be compared.
pub fn train_baseline(plan: &TrainPlan, train: &Dataset, model: ModelState) -> Result<PipelineOutcome> {
    match plan.mode {
        Mode::Joint => {
            let (joint, mut log) = train_joint(plan, train, model)?;
            let (model, probe_log) = train_probes(plan, train, joint.clone())?;
            log.extend(probe_log);
            Ok(PipelineOutcome {
                encoders: joint,
                model,
                partition: None,
                log,
            })
        }
        _ => {
            let enc = train_encoders(plan, train, model)?;
            let (model, fusion_log) = train_fusion(plan, train, enc.model.clone())?;
            let mut log = enc.log;
            log.extend(fusion_log);
            Ok(PipelineOutcome {
                encoders: enc.model,
                model,
                partition: enc.partition,
                log,
            })
        }
    }
}

/// Training-set accuracy of one modality's own head.
pub fn unimodal_accuracy(model: &ModelState, data: &Dataset, modality: usize) -> Result<f64> {
    let h = crate::models::encode(&model.encoders[modality], &data.inputs()[modality])?;
    let z = crate::models::head_logits(&model.uni_heads[modality], &h)?;
    Ok(accuracy(&ops::argmax_rows(&z), data.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelConfig};
    use crate::synthdata::{generate, SyntheticRecipe};

    fn small(seed: u64) -> (Dataset, ModelState) {
        let mut r = SyntheticRecipe::complementary(seed);
        r.train_samples = 96;
        r.test_samples = 12;
        let data = generate(&r).unwrap();
        let model = init_model(&ModelConfig {
            input_dims: r.input_dims.clone(),
            hidden_dims: vec![16],
            feature_dim: 8,
            num_classes: r.num_classes,
            seed,
        })
        .unwrap();
        (data.train, model)
    }

    fn params_equal(a: &ModelState, b: &ModelState) -> bool {
        a.params().iter().zip(b.params()).all(|((_, x), (_, y))| x.bitwise_eq(y))
    }

    #[test]
    fn zero_epochs_leave_parameters_untouched() {
        let (train, model) = small(1);
        let mut plan = TrainPlan::desk(Mode::DiMml, 1);
        plan.epochs = 0;
        plan.warmup_epochs = 0;
        let out = train_encoders(&plan, &train, model.clone()).unwrap();
        assert!(params_equal(&out.model, &model));
        assert!(out.log.is_empty());
    }

    #[test]
    fn zero_fusion_epochs_leave_fusion_head() {
        let (train, model) = small(2);
        let mut plan = TrainPlan::desk(Mode::DiMml, 2);
        plan.fusion_epochs = 0;
        let (out, log) = train_fusion(&plan, &train, model.clone()).unwrap();
        assert_eq!(out.fusion_head, model.fusion_head);
        assert!(log.is_empty());
    }

    #[test]
    fn fusion_freezes_everything_else() {
        let (train, model) = small(3);
        let mut plan = TrainPlan::desk(Mode::DiMml, 3);
        plan.fusion_epochs = 2;
        let frozen = ["encoder.", "uni_head.", SHARED_HEAD_PREFIX];
        let before = model.checksum(&frozen);
        let (out, _) = train_fusion(&plan, &train, model.clone()).unwrap();
        assert_eq!(out.checksum(&frozen), before);
        assert_ne!(out.fusion_head, model.fusion_head);
    }

    #[test]
    fn partition_computed_when_warmup_spans_all_epochs() {
        let (train, model) = small(4);
        let mut plan = TrainPlan::desk(Mode::DiMml, 4);
        plan.epochs = 2;
        plan.warmup_epochs = 2;
        let out = train_encoders(&plan, &train, model).unwrap();
        assert!(out.partition.is_some());
        assert!(out.log.iter().all(|r| r.phase == "warmup"));
    }

    #[test]
    fn partition_is_computed_once_at_warmup_end() {
        let (train, model) = small(5);
        let mut plan = TrainPlan::desk(Mode::DiMml, 5);
        plan.epochs = 3;
        plan.warmup_epochs = 1;
        let out = train_encoders(&plan, &train, model).unwrap();
        let phases: Vec<&str> = out.log.iter().map(|r| r.phase.as_str()).collect();
        assert_eq!(phases, ["warmup", "main", "main"]);
        assert_eq!(out.model.meta.partition, out.partition);
        assert_eq!(out.partition.unwrap().cross_sets.len(), 2);
    }

    #[test]
    fn joint_mode_rejected_by_detached_trainer() {
        let (train, model) = small(6);
        assert!(train_encoders(&TrainPlan::desk(Mode::Joint, 0), &train, model).is_err());
    }

    #[test]
    fn unimodal_out_of_range() {
        let (train, model) = small(6);
        assert!(train_encoders(&TrainPlan::desk(Mode::Unimodal(5), 0), &train, model).is_err());
    }

    #[test]
    fn mm_clf_leaves_pretrained_encoders_alone_during_fusion() {
        let (train, model) = small(7);
        let mut plan = TrainPlan::desk(Mode::MmClf, 7);
        plan.epochs = 2;
        plan.warmup_epochs = 0;
        plan.fusion_epochs = 2;
        let out = train_baseline(&plan, &train, model).unwrap();
        assert_eq!(out.model.checksum(&["encoder."]), out.encoders.checksum(&["encoder."]));
        // independent unimodal training never touches the shared head
        assert_eq!(out.model.shared_head, out.encoders.shared_head);
    }
}
