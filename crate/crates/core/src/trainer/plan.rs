use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LrSchedule;
use crate::dimsep::ScoreMetric;
use crate::error::{Error, Result};
use crate::inference::EvalMode;
use crate::losses::{LossWeights, TransferTerm};

/// Training recipe: the full method or one of the comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Detached encoders + shared head + unidirectional transfer, then fusion.
    DiMml,
    /// One cross-entropy on concatenated features, updating every encoder.
    Joint,
    /// Independent unimodal encoders, then a linear head on their concatenation.
    MmClf,
    /// Independent unimodal encoders, predictions averaged.
    PredsAvg,
    /// Independent unimodal encoders with cross-modal logit distillation.
    CmDist,
    /// Full method with symmetric all-dimension contrastive transfer.
    OursC,
    /// Full method with bidirectional dimension-decoupled transfer.
    OursDbc,
    /// Train only the given modality (0-based; written `unimodal:1` for the first).
    Unimodal(usize),
}

impl Mode {
    pub fn transfer_term(self) -> TransferTerm {
        match self {
            Mode::DiMml => TransferTerm::Duc,
            Mode::OursC => TransferTerm::FullContrastive,
            Mode::OursDbc => TransferTerm::Dbc,
            Mode::CmDist => TransferTerm::CmDist,
            _ => TransferTerm::None,
        }
    }

    /// True when encoders train under the warmup → main schedule with a shared head.
    pub fn uses_shared_head(self) -> bool {
        matches!(self, Mode::DiMml | Mode::OursC | Mode::OursDbc)
    }

    pub fn uses_partition(self) -> bool {
        self.transfer_term().needs_partition()
    }

    /// The prediction path reported as this mode's multimodal accuracy.
    pub fn headline(self) -> EvalMode {
        match self {
            Mode::DiMml | Mode::OursC | Mode::OursDbc => EvalMode::Weighted,
            Mode::PredsAvg => EvalMode::PredsAvg,
            Mode::Unimodal(i) => EvalMode::Uni(i),
            Mode::Joint | Mode::MmClf | Mode::CmDist => EvalMode::Fusion,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::DiMml => f.write_str("di_mml"),
            Mode::Joint => f.write_str("joint"),
            Mode::MmClf => f.write_str("mm_clf"),
            Mode::PredsAvg => f.write_str("preds_avg"),
            Mode::CmDist => f.write_str("cm_dist"),
            Mode::OursC => f.write_str("ours_c"),
            Mode::OursDbc => f.write_str("ours_dbc"),
            Mode::Unimodal(i) => write!(f, "unimodal:{}", i + 1),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "di_mml" => Mode::DiMml,
            "joint" => Mode::Joint,
            "mm_clf" => Mode::MmClf,
            "preds_avg" => Mode::PredsAvg,
            "cm_dist" => Mode::CmDist,
            "ours_c" => Mode::OursC,
            "ours_dbc" => Mode::OursDbc,
            _ => s
                .strip_prefix("unimodal:")
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| i.checked_sub(1))
                .map(Mode::Unimodal)
                .ok_or_else(|| Error::UnknownMode(s.to_string()))?,
        })
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything the trainer needs besides data and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub mode: Mode,
    /// Total encoder epochs.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub fusion_epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub fusion_lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub score_metric: ScoreMetric,
    /// Recompute the partition every main-phase epoch instead of once.
    pub recompute_partition: bool,
    /// Seeds batch shuffling.
    pub seed: u64,
}

impl TrainPlan {
    /// Desk-scale schedule: 40 encoder epochs at 1e-3 decaying to 1e-4 at 20;
    /// 10 fusion epochs at 1e-2 decaying to 1e-3 at 5.
    pub fn desk(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            epochs: 40,
            warmup_epochs: 10,
            fusion_epochs: 10,
            batch_size: 16,
            lr: LrSchedule {
                initial: 1e-3,
                decay_epoch: 20,
                decayed: 1e-4,
            },
            fusion_lr: LrSchedule {
                initial: 1e-2,
                decay_epoch: 5,
                decayed: 1e-3,
            },
            momentum: 0.9,
            weight_decay: 1e-4,
            loss: LossWeights::default(),
            score_metric: ScoreMetric::Centroid,
            recompute_partition: false,
            seed,
        }
    }

    /// Full-scale schedule: 150 encoder epochs at 1e-3 decaying to 1e-4 after 70,
    /// 20 fusion epochs decaying after 10.
    pub fn full_scale(mode: Mode, seed: u64) -> Self {
        Self {
            epochs: 150,
            warmup_epochs: 10,
            fusion_epochs: 20,
            lr: LrSchedule {
                initial: 1e-3,
                decay_epoch: 70,
                decayed: 1e-4,
            },
            fusion_lr: LrSchedule {
                initial: 1e-3,
                decay_epoch: 10,
                decayed: 1e-4,
            },
            ..Self::desk(mode, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::validation(
                "plan.warmup_epochs",
                format!("{} exceeds plan.epochs = {}", self.warmup_epochs, self.epochs),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("plan.batch_size", "must be >= 1"));
        }
        self.lr.validate("plan.lr")?;
        self.fusion_lr.validate("plan.fusion_lr")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("plan.momentum", "must lie in [0, 1)"));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::validation("plan.weight_decay", "must be >= 0"));
        }
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trips_through_strings() {
        for m in [
            Mode::DiMml,
            Mode::Joint,
            Mode::MmClf,
            Mode::PredsAvg,
            Mode::CmDist,
            Mode::OursC,
            Mode::OursDbc,
            Mode::Unimodal(1),
        ] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!(matches!("fancy".parse::<Mode>(), Err(Error::UnknownMode(_))));
        assert_eq!("unimodal:1".parse::<Mode>().unwrap(), Mode::Unimodal(0));
        assert!("unimodal:0".parse::<Mode>().is_err());
    }

    #[test]
    fn warmup_cannot_exceed_epochs() {
        let mut p = TrainPlan::desk(Mode::DiMml, 0);
        p.warmup_epochs = 41;
        assert!(p.validate().is_err());
        p.warmup_epochs = 40;
        p.validate().unwrap();
    }
}
