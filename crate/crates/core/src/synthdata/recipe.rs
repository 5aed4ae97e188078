use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Construction parameters for a paired multimodal classification dataset.
///
/// Each modality `i` has `input_dims[i]` input columns split into three
/// disjoint groups:
/// - `informative_dims[i]`: a per-modality class prototype, distinct for each
///   class in `carried_classes[i]` and zero for every other class;
/// - `shared_dims`: a class prototype common to all modalities, scaled by
///   `shared_scale`;
/// - everything else: pure Gaussian noise.
///
/// With `corrupt_prob > 0`, each sample independently has one randomly
/// chosen modality stripped of its class signal, which makes per-sample
/// reliability vary across modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRecipe {
    pub num_classes: usize,
    pub input_dims: Vec<usize>,
    pub informative_dims: Vec<Vec<usize>>,
    /// Classes separated by each modality's informative dims; empty means all.
    pub carried_classes: Vec<Vec<usize>>,
    pub shared_dims: Vec<usize>,
    pub prototype_scale: f64,
    /// Per-modality multiplier on `prototype_scale`; empty means all 1.
    #[serde(default)]
    pub modality_scales: Vec<f64>,
    /// Modalities whose prototype is multiplied by a random sign per sample,
    /// so their class signal is not linearly separable; empty means none.
    #[serde(default)]
    pub random_sign: Vec<bool>,
    pub shared_scale: f64,
    pub noise_std: f64,
    pub corrupt_prob: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl SyntheticRecipe {
    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    /// Classes carried by modality `m`'s informative dims.
    pub fn carried(&self, m: usize) -> Vec<usize> {
        if self.carried_classes[m].is_empty() {
            (0..self.num_classes).collect()
        } else {
            self.carried_classes[m].clone()
        }
    }

    /// Prototype scale of modality `m`'s informative dims.
    pub fn scale_of(&self, m: usize) -> f64 {
        self.prototype_scale * self.modality_scales.get(m).copied().unwrap_or(1.0)
    }

    pub fn sign_flipped(&self, m: usize) -> bool {
        self.random_sign.get(m).copied().unwrap_or(false)
    }

    /// Informative and shared dims of modality `m`, sorted.
    pub fn signal_dims(&self, m: usize) -> Vec<usize> {
        let mut dims: BTreeSet<usize> = self.informative_dims[m].iter().copied().collect();
        if self.shared_scale != 0.0 {
            dims.extend(&self.shared_dims);
        }
        dims.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRecipe(msg));
        let m = self.num_modalities();
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if m < 2 {
            return bad(format!("need at least 2 modalities, got {m}"));
        }
        if self.informative_dims.len() != m || self.carried_classes.len() != m {
            return bad("informative_dims and carried_classes need one entry per modality".into());
        }
        if self.input_dims.contains(&0) {
            return bad("input dims must be positive".into());
        }
        for (i, info) in self.informative_dims.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &d in info.iter().chain(&self.shared_dims) {
                if d >= self.input_dims[i] {
                    return bad(format!(
                        "modality {i}: dim {d} outside input width {}",
                        self.input_dims[i]
                    ));
                }
                if !seen.insert(d) {
                    return bad(format!("modality {i}: dim {d} assigned to more than one set"));
                }
            }
            if let Some(&k) = self.carried_classes[i].iter().find(|&&k| k >= self.num_classes) {
                return bad(format!("modality {i}: carried class {k} out of range"));
            }
            let uniq: BTreeSet<_> = self.carried_classes[i].iter().collect();
            if uniq.len() != self.carried_classes[i].len() {
                return bad(format!("modality {i}: duplicate carried class"));
            }
        }
        if !self.random_sign.is_empty() && self.random_sign.len() != m {
            return bad("random_sign needs one entry per modality or none".into());
        }
        if !self.modality_scales.is_empty() && self.modality_scales.len() != m {
            return bad("modality_scales needs one entry per modality or none".into());
        }
        if self.modality_scales.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("modality_scales must be finite and >= 0".into());
        }
        for (name, v) in [
            ("prototype_scale", self.prototype_scale),
            ("shared_scale", self.shared_scale),
            ("noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.corrupt_prob) {
            return bad(format!("corrupt_prob must lie in [0, 1], got {}", self.corrupt_prob));
        }
        if self.train_samples < self.num_classes || self.test_samples < self.num_classes {
            return bad("every class needs at least one train and one test sample".into());
        }
        Ok(())
    }

    /// Six classes over two modalities: modality 0 alone separates classes
    /// 0..=3, modality 1 alone separates 2..=5, and a weak shared block
    /// separates all six. Modality 0's signal is linear and quick to learn;
    /// modality 1's prototype carries a random per-sample sign, so its classes
    /// are only separable through nonlinear features that take longer to fit.
    /// Under one joint objective modality 0 therefore dominates.
    pub fn complementary(seed: u64) -> Self {
        Self {
            num_classes: 6,
            input_dims: vec![24, 24],
            informative_dims: vec![(0..10).collect(), (0..6).collect()],
            carried_classes: vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5]],
            shared_dims: vec![16, 17, 18, 19],
            prototype_scale: 1.0,
            modality_scales: vec![],
            random_sign: vec![false, true],
            shared_scale: 0.35,
            noise_std: 1.0,
            corrupt_prob: 0.0,
            train_samples: 600,
            test_samples: 600,
            seed,
        }
    }

    /// Both modalities carry every class, but each sample has one modality
    /// blanked out with some probability, so which source to trust varies
    /// from sample to sample.
    pub fn reliability_skewed(seed: u64) -> Self {
        Self {
            num_classes: 6,
            input_dims: vec![24, 24],
            informative_dims: vec![(0..8).collect(), (0..8).collect()],
            carried_classes: vec![vec![], vec![]],
            shared_dims: vec![],
            prototype_scale: 1.0,
            modality_scales: vec![],
            random_sign: vec![],
            shared_scale: 0.0,
            noise_std: 1.0,
            corrupt_prob: 0.4,
            train_samples: 600,
            test_samples: 600,
            seed,
        }
    }

    /// Zero-noise, sign-free variant of [`Self::complementary`] with no shared block.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            noise_std: 0.0,
            shared_scale: 0.0,
            shared_dims: vec![],
            random_sign: vec![],
            ..Self::complementary(seed)
        }
    }

    /// `m` modalities over `k` classes, each modality carrying a sliding window of classes.
    pub fn rotating(m: usize, k: usize, seed: u64) -> Self {
        let window = (k * 2).div_ceil(3).max(2).min(k);
        let carried = (0..m)
            .map(|i| (0..window).map(|j| (i * k / m + j) % k).collect())
            .collect();
        Self {
            num_classes: k,
            input_dims: vec![20; m],
            informative_dims: vec![(0..8).collect(); m],
            carried_classes: carried,
            shared_dims: vec![12, 13, 14],
            prototype_scale: 1.0,
            modality_scales: vec![],
            random_sign: vec![],
            shared_scale: 0.35,
            noise_std: 1.0,
            corrupt_prob: 0.0,
            train_samples: 300,
            test_samples: 300,
            seed,
        }
    }
}
