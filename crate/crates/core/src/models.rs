//! Per-modality MLP encoders, linear heads, and the full trainable state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dimsep::PartitionSet;
use crate::error::{Error, Result};
use crate::numerics::{ops, rng_for, Tape, Tensor, Var};

/// One affine layer; `weight` is `out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// MLP with ReLU between layers and no activation after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
}

/// Affine classifier; `weight` is `d_in×K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sizes agree")
}

impl EncoderParams {
    /// `widths = [in, hidden.., out]`.
    pub fn init(widths: &[usize], seed: u64, tag: &str) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad encoder widths {widths:?}")));
        }
        let mut rng = rng_for(seed, tag);
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: glorot(&mut rng, w[1], w[0], w[0], w[1]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self { layers })
    }

    /// Single layer with identity weight and zero bias.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Layer {
                weight: Tensor::eye(dim),
                bias: Tensor::zeros(&[dim]),
            }],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("encoder has no layers"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if !layer.weight.is_matrix() || layer.bias.len() != layer.weight.rows() {
                return Err(Error::shape("encoder", format!("layer {l} bias/weight mismatch")));
            }
            if l > 0 && layer.weight.cols() != self.layers[l - 1].weight.rows() {
                return Err(Error::shape("encoder", format!("layer {l} does not chain")));
            }
        }
        Ok(())
    }
}

impl LinearHead {
    pub fn init(d_in: usize, classes: usize, seed: u64, tag: &str) -> Self {
        let mut rng = rng_for(seed, tag);
        Self {
            weight: glorot(&mut rng, d_in, classes, d_in, classes),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }
}

/// Features `h = φ(x)` for a batch `x[B×d_in]`.
pub fn encode(enc: &EncoderParams, x: &Tensor) -> Result<Tensor> {
    if x.cols() != enc.input_dim() {
        return Err(Error::shape(
            "encode",
            format!("input width {} vs encoder width {}", x.cols(), enc.input_dim()),
        ));
    }
    let mut h = x.clone();
    for (l, layer) in enc.layers.iter().enumerate() {
        h = ops::add_bias(&ops::matmul_nt(&h, &layer.weight)?, &layer.bias)?;
        if l + 1 < enc.layers.len() {
            h = ops::relu(&h);
        }
    }
    Ok(h)
}

/// Logits `h·W + b`.
pub fn head_logits(head: &LinearHead, h: &Tensor) -> Result<Tensor> {
    if h.cols() != head.input_dim() {
        return Err(Error::shape(
            "head_logits",
            format!("feature width {} vs head width {}", h.cols(), head.input_dim()),
        ));
    }
    ops::add_bias(&ops::matmul(h, &head.weight)?, &head.bias)
}

/// Column-wise concatenation; block `i` holds modality `i`.
pub fn fuse_concat(features: &[Tensor]) -> Result<Tensor> {
    if let Some(first) = features.first() {
        if features.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::shape("fuse_concat", "modality features differ in shape"));
        }
    }
    ops::concat_cols(&features.iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initialized,
    Warmup,
    Main,
    EncodersTrained,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_modalities: usize,
    pub phase: Phase,
    pub partition: Option<PartitionSet>,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dims: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.len() < 2 {
            return Err(Error::validation("model.input_dims", "need at least 2 modalities"));
        }
        if self.input_dims.iter().chain(&self.hidden_dims).any(|&w| w == 0) {
            return Err(Error::validation("model.hidden_dims", "widths must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("model.feature_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("model.num_classes", "must be >= 2"));
        }
        Ok(())
    }

    /// Parameter count implied by the configured widths.
    pub fn expected_param_count(&self) -> usize {
        let (d, k, m) = (self.feature_dim, self.num_classes, self.input_dims.len());
        let encoders: usize = self
            .input_dims
            .iter()
            .map(|&input| {
                let mut widths = vec![input];
                widths.extend(&self.hidden_dims);
                widths.push(d);
                widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>()
            })
            .sum();
        let head = d * k + k;
        encoders + m * head + head + (m * d * k + k)
    }
}

/// Trainable parameters of the whole pipeline plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub encoders: Vec<EncoderParams>,
    pub uni_heads: Vec<LinearHead>,
    pub shared_head: LinearHead,
    pub fusion_head: LinearHead,
    pub meta: ModelMeta,
}

/// Tape handles for every parameter of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoders: Vec<Vec<(Var, Var)>>,
    pub uni_heads: Vec<(Var, Var)>,
    pub shared_head: (Var, Var),
    pub fusion_head: (Var, Var),
}

pub fn encoder_prefix(i: usize) -> String {
    format!("encoder.{i}.")
}

pub fn uni_head_prefix(i: usize) -> String {
    format!("uni_head.{i}.")
}

pub const SHARED_HEAD_PREFIX: &str = "shared_head.";
pub const FUSION_HEAD_PREFIX: &str = "fusion_head.";

/// Seeded initialization; each component draws from its own stream so
/// adding or removing a modality does not perturb the others.
pub fn init_model(config: &ModelConfig) -> Result<ModelState> {
    config.validate()?;
    let (d, k, m) = (config.feature_dim, config.num_classes, config.input_dims.len());
    let encoders = config
        .input_dims
        .iter()
        .enumerate()
        .map(|(i, &input)| {
            let mut widths = vec![input];
            widths.extend(&config.hidden_dims);
            widths.push(d);
            EncoderParams::init(&widths, config.seed, &format!("init/encoder/{i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let uni_heads = (0..m)
        .map(|i| LinearHead::init(d, k, config.seed, &format!("init/uni_head/{i}")))
        .collect();
    Ok(ModelState {
        encoders,
        uni_heads,
        shared_head: LinearHead::init(d, k, config.seed, "init/shared_head"),
        fusion_head: LinearHead::init(m * d, k, config.seed, "init/fusion_head"),
        meta: ModelMeta {
            feature_dim: d,
            num_classes: k,
            num_modalities: m,
            phase: Phase::Initialized,
            partition: None,
        },
    })
}

impl ModelState {
    pub fn num_modalities(&self) -> usize {
        self.encoders.len()
    }

    /// All parameters in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, enc) in self.encoders.iter().enumerate() {
            for (l, layer) in enc.layers.iter().enumerate() {
                out.push((format!("encoder.{i}.layer{l}.weight"), &layer.weight));
                out.push((format!("encoder.{i}.layer{l}.bias"), &layer.bias));
            }
        }
        for (i, h) in self.uni_heads.iter().enumerate() {
            out.push((format!("uni_head.{i}.weight"), &h.weight));
            out.push((format!("uni_head.{i}.bias"), &h.bias));
        }
        out.push(("shared_head.weight".into(), &self.shared_head.weight));
        out.push(("shared_head.bias".into(), &self.shared_head.bias));
        out.push(("fusion_head.weight".into(), &self.fusion_head.weight));
        out.push(("fusion_head.bias".into(), &self.fusion_head.bias));
        out
    }

    /// Mutable view in the same order as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            for (l, layer) in enc.layers.iter_mut().enumerate() {
                out.push((format!("encoder.{i}.layer{l}.weight"), &mut layer.weight));
                out.push((format!("encoder.{i}.layer{l}.bias"), &mut layer.bias));
            }
        }
        for (i, h) in self.uni_heads.iter_mut().enumerate() {
            out.push((format!("uni_head.{i}.weight"), &mut h.weight));
            out.push((format!("uni_head.{i}.bias"), &mut h.bias));
        }
        out.push(("shared_head.weight".into(), &mut self.shared_head.weight));
        out.push(("shared_head.bias".into(), &mut self.shared_head.bias));
        out.push(("fusion_head.weight".into(), &mut self.fusion_head.weight));
        out.push(("fusion_head.bias".into(), &mut self.fusion_head.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Digest over every parameter whose name starts with one of `prefixes`.
    pub fn checksum(&self, prefixes: &[&str]) -> u64 {
        let mut h: u64 = 0;
        for (name, t) in self.params() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                h = h.rotate_left(7) ^ t.checksum();
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k, m) = (
            self.meta.feature_dim,
            self.meta.num_classes,
            self.meta.num_modalities,
        );
        if self.encoders.len() != m || self.uni_heads.len() != m {
            return Err(Error::shape("ModelState", "component counts disagree with metadata"));
        }
        for enc in &self.encoders {
            enc.validate()?;
            if enc.output_dim() != d {
                return Err(Error::shape("ModelState", "encoder output width != feature_dim"));
            }
        }
        let heads = self.uni_heads.iter().chain([&self.shared_head]);
        for h in heads {
            if h.input_dim() != d || h.num_classes() != k || h.bias.len() != k {
                return Err(Error::shape("ModelState", "head shape disagrees with metadata"));
            }
        }
        let f = &self.fusion_head;
        if f.input_dim() != m * d || f.num_classes() != k || f.bias.len() != k {
            return Err(Error::shape("ModelState", "fusion head must consume M·d features"));
        }
        Ok(())
    }

    /// Registers every parameter on `tape` as trainable.
    pub fn register(&self, tape: &mut Tape) -> Result<ModelVars> {
        let pair = |tape: &mut Tape, prefix: String, w: &Tensor, b: &Tensor| -> Result<(Var, Var)> {
            Ok((
                tape.param(&format!("{prefix}weight"), w.clone())?,
                tape.param(&format!("{prefix}bias"), b.clone())?,
            ))
        };
        let encoders = self
            .encoders
            .iter()
            .enumerate()
            .map(|(i, enc)| {
                enc.layers
                    .iter()
                    .enumerate()
                    .map(|(l, layer)| pair(tape, format!("encoder.{i}.layer{l}."), &layer.weight, &layer.bias))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let uni_heads = self
            .uni_heads
            .iter()
            .enumerate()
            .map(|(i, h)| pair(tape, uni_head_prefix(i), &h.weight, &h.bias))
            .collect::<Result<Vec<_>>>()?;
        let shared_head = pair(tape, SHARED_HEAD_PREFIX.into(), &self.shared_head.weight, &self.shared_head.bias)?;
        let fusion_head = pair(tape, FUSION_HEAD_PREFIX.into(), &self.fusion_head.weight, &self.fusion_head.bias)?;
        Ok(ModelVars {
            encoders,
            uni_heads,
            shared_head,
            fusion_head,
        })
    }

    /// Features of every modality for a full input set.
    pub fn features(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        if inputs.len() != self.num_modalities() {
            return Err(Error::shape("features", "modality count mismatch"));
        }
        self.encoders.iter().zip(inputs).map(|(e, x)| encode(e, x)).collect()
    }
}

/// Encoder forward on a tape.
pub fn encode_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (l, &(w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul_nt(h, w)?;
        h = tape.add_bias(lin, b)?;
        if l + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Linear head forward on a tape.
pub fn head_on_tape(tape: &mut Tape, head: (Var, Var), h: Var) -> Result<Var> {
    let lin = tape.matmul(h, head.0)?;
    tape.add_bias(lin, head.1)
}
