//! Experiment configuration as flat JSON with dotted keys.
//!
//! A config file is a JSON object whose keys are dotted paths such as
//! `plan.loss.lambda_D`; nested objects are accepted too and flattened the
//! same way. Every key not listed in [`KEY_DOCS`] is rejected. Two selector
//! keys pick the defaults everything else overrides: `recipe_preset` and
//! `profile`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::synthdata::SyntheticRecipe;
use crate::trainer::{Mode, TrainPlan};

/// Architecture knobs not implied by the recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    /// Must equal `recipe.num_classes`.
    pub num_classes: usize,
    /// Must equal the recipe's modality count.
    pub num_modalities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe_preset: String,
    pub profile: String,
    /// Seed of a single-seed run.
    pub seed: u64,
    /// Seeds of a multi-seed run; empty means `[seed]`.
    pub seeds: Vec<u64>,
    pub recipe: SyntheticRecipe,
    pub model: ModelSection,
    pub plan: TrainPlan,
    pub t_lw: f64,
    pub output_dir: String,
    /// Run seeds concurrently instead of one after another.
    pub parallel: bool,
}

/// Documentation for every accepted key, shown by `--help`.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("recipe_preset", "default recipe: complementary | reliability_skewed | noiseless | rotating3"),
    ("profile", "default schedule: desk (E=40, E_f=10) | full (E=150, E_f=20)"),
    ("seed", "seed of a single-seed run (data, init and shuffling)"),
    ("seeds", "list of seeds for a multi-seed run; empty = [seed]"),
    ("recipe.num_classes", "number of classes K"),
    ("recipe.input_dims", "input width per modality"),
    ("recipe.informative_dims", "per modality, input indices carrying that modality's class prototype"),
    ("recipe.carried_classes", "per modality, classes with a nonzero prototype ([] = all)"),
    ("recipe.shared_dims", "input indices carrying a prototype common to all modalities"),
    ("recipe.prototype_scale", "scale of modality-specific prototypes"),
    ("recipe.modality_scales", "per-modality multiplier on prototype_scale ([] = all 1)"),
    ("recipe.random_sign", "per modality, flip the prototype sign at random per sample ([] = never)"),
    ("recipe.shared_scale", "scale of the shared prototype"),
    ("recipe.noise_std", "Gaussian feature noise"),
    ("recipe.corrupt_prob", "probability that one random modality loses its signal in a sample"),
    ("recipe.train_samples", "training set size"),
    ("recipe.test_samples", "test set size"),
    ("model.hidden_dims", "encoder hidden widths"),
    ("model.feature_dim", "encoder output width d"),
    ("model.num_classes", "must equal recipe.num_classes"),
    ("model.num_modalities", "must equal the number of recipe modalities"),
    ("plan.mode", "di_mml | joint | mm_clf | preds_avg | cm_dist | ours_c | ours_dbc | unimodal:N"),
    ("plan.epochs", "encoder epochs E"),
    ("plan.warmup_epochs", "warmup epochs E_w before the transfer term starts"),
    ("plan.fusion_epochs", "fusion head epochs E_f"),
    ("plan.batch_size", "mini-batch size"),
    ("plan.lr.initial", "encoder learning rate before the decay epoch"),
    ("plan.lr.decay_epoch", "first epoch at the decayed encoder learning rate"),
    ("plan.lr.decayed", "encoder learning rate from the decay epoch on"),
    ("plan.fusion_lr.initial", "fusion learning rate before the decay epoch"),
    ("plan.fusion_lr.decay_epoch", "first epoch at the decayed fusion learning rate"),
    ("plan.fusion_lr.decayed", "fusion learning rate from the decay epoch on"),
    ("plan.momentum", "SGD momentum"),
    ("plan.weight_decay", "SGD weight decay (weights and biases)"),
    ("plan.loss.lambda_s", "shared-head cross-entropy weight"),
    ("plan.loss.lambda_D", "transfer term weight"),
    ("plan.loss.t_duc", "contrastive temperature"),
    ("plan.loss.t_kd", "logit distillation temperature (cm_dist)"),
    ("plan.loss.lambda_kd", "logit distillation weight (cm_dist)"),
    ("plan.score_metric", "dimension score: centroid | l2_norm"),
    ("plan.recompute_partition", "recompute the dimension partition every main epoch"),
    ("t_lw", "logit weighting temperature"),
    ("output_dir", "results directory (overridden by DIMML_OUTPUT_DIR)"),
    ("parallel", "run seeds concurrently"),
];

/// Keys derived from `seed` and therefore not settable.
const DERIVED_KEYS: &[&str] = &["recipe.seed", "plan.seed"];

pub fn recipe_preset(name: &str, seed: u64) -> Result<SyntheticRecipe> {
    Ok(match name {
        "complementary" => SyntheticRecipe::complementary(seed),
        "reliability_skewed" => SyntheticRecipe::reliability_skewed(seed),
        "noiseless" => SyntheticRecipe::noiseless(seed),
        "rotating3" => SyntheticRecipe::rotating(3, 6, seed),
        other => return Err(Error::validation("recipe_preset", format!("unknown preset `{other}`"))),
    })
}

pub fn plan_profile(name: &str, mode: Mode, seed: u64) -> Result<TrainPlan> {
    match name {
        "desk" => Ok(TrainPlan::desk(mode, seed)),
        "full" => Ok(TrainPlan::full_scale(mode, seed)),
        other => Err(Error::validation("profile", format!("unknown profile `{other}`"))),
    }
}

impl ExperimentConfig {
    pub fn preset(recipe_preset: &str, profile: &str, mode: Mode, seed: u64) -> Result<Self> {
        let recipe = self::recipe_preset(recipe_preset, seed)?;
        let plan = plan_profile(profile, mode, seed)?;
        Ok(Self {
            recipe_preset: recipe_preset.into(),
            profile: profile.into(),
            seed,
            seeds: Vec::new(),
            model: ModelSection {
                hidden_dims: vec![64],
                feature_dim: 32,
                num_classes: recipe.num_classes,
                num_modalities: recipe.num_modalities(),
            },
            recipe,
            plan,
            t_lw: 1.0,
            output_dir: "runs".into(),
            parallel: false,
        })
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Sets the single seed and every seed-derived field.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.seeds = Vec::new();
        c.recipe.seed = seed;
        c.plan.seed = seed;
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dims: self.recipe.input_dims.clone(),
            hidden_dims: self.model.hidden_dims.clone(),
            feature_dim: self.model.feature_dim,
            num_classes: self.model.num_classes,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe
            .validate()
            .map_err(|e| Error::validation("recipe", e.to_string()))?;
        self.plan.validate().map_err(|e| match e {
            Error::Validation { key, reason } if !key.starts_with("plan.") => Error::Validation {
                key: format!("plan.{key}"),
                reason,
            },
            other => other,
        })?;
        self.model_config().validate()?;
        if self.model.num_classes != self.recipe.num_classes {
            return Err(Error::validation(
                "model.num_classes",
                format!("{} disagrees with recipe.num_classes = {}", self.model.num_classes, self.recipe.num_classes),
            ));
        }
        if self.model.num_modalities != self.recipe.num_modalities() {
            return Err(Error::validation(
                "model.num_modalities",
                format!(
                    "{} disagrees with the recipe's {} modalities",
                    self.model.num_modalities,
                    self.recipe.num_modalities()
                ),
            ));
        }
        if let Mode::Unimodal(i) = self.plan.mode {
            if i >= self.recipe.num_modalities() {
                return Err(Error::validation("plan.mode", format!("no modality {}", i + 1)));
            }
        }
        if !(self.t_lw > 0.0 && self.t_lw.is_finite()) {
            return Err(Error::validation("t_lw", "must be > 0"));
        }
        if self.output_dir.trim().is_empty() {
            return Err(Error::validation("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Flat JSON object holding every settable key.
    pub fn to_flat_json(&self) -> Result<Value> {
        let mut flat = flatten(&serde_json::to_value(self)?);
        for k in DERIVED_KEYS {
            flat.remove(*k);
        }
        Ok(Value::Object(flat.into_iter().collect()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_flat_json()?)? + "\n")
    }

    /// Parses a JSON document: defaults from the selected preset/profile, then
    /// each given key, type-checked against its default.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| Error::validation("config", format!("not valid JSON: {e}")))?;
        if !root.is_object() {
            return Err(Error::validation("config", "top level must be a JSON object"));
        }
        let given = flatten(&root);
        let string_of = |key: &str, default: &str| -> Result<String> {
            match given.get(key) {
                None => Ok(default.to_string()),
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::validation(key, "expected a string")),
            }
        };
        let preset = string_of("recipe_preset", "complementary")?;
        let profile = string_of("profile", "desk")?;
        let mode: Mode = match given.get("plan.mode") {
            None => Mode::DiMml,
            Some(Value::String(s)) => s.parse().map_err(|e: Error| Error::validation("plan.mode", e.to_string()))?,
            Some(_) => return Err(Error::validation("plan.mode", "expected a string")),
        };
        let seed = match given.get("seed") {
            None => 0,
            Some(v) => v.as_u64().ok_or_else(|| Error::validation("seed", "expected a non-negative integer"))?,
        };

        let base = Self::preset(&preset, &profile, mode, seed)?;
        let mut merged = flatten(&serde_json::to_value(&base)?);
        for (key, value) in given {
            if DERIVED_KEYS.contains(&key.as_str()) {
                return Err(Error::validation(key, "derived from `seed`; set `seed` instead"));
            }
            let Some(default) = merged.get(&key) else {
                return Err(Error::validation(key, "unknown key"));
            };
            check_type(&key, default, &value)?;
            merged.insert(key, value);
        }
        let config: Self = serde_json::from_value(unflatten(&merged))
            .map_err(|e| Error::validation("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Renders [`KEY_DOCS`] as help text.
pub fn key_help() -> String {
    let width = KEY_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    KEY_DOCS
        .iter()
        .map(|(k, d)| format!("  {k:width$}  {d}\n"))
        .collect()
}

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) if !prefix.is_empty() || !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", v, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("split yields at least one part");
        let mut node = &mut root;
        for p in parts {
            node = node
                .entry(p)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys never collide with leaves");
        }
        node.insert(last.to_string(), value.clone());
    }
    Value::Object(root)
}

fn check_type(key: &str, default: &Value, given: &Value) -> Result<()> {
    let ok = match default {
        Value::Bool(_) => given.is_boolean(),
        Value::String(_) => given.is_string(),
        Value::Number(n) if n.is_u64() => given.is_u64(),
        Value::Number(_) => given.is_number(),
        Value::Array(_) => given.is_array(),
        _ => true,
    };
    if ok {
        return Ok(());
    }
    let expected = match default {
        Value::Bool(_) => "a boolean",
        Value::String(_) => "a string",
        Value::Number(n) if n.is_u64() => "a non-negative integer",
        Value::Number(_) => "a number",
        _ => "an array",
    };
    Err(Error::validation(key, format!("expected {expected}, got {given}")))
}
