//! Model checkpoints: a JSON manifest describing every tensor plus one blob of
//! little-endian `f64` values in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container;
use crate::error::{Error, Result};
use crate::models::{EncoderParams, Layer, LinearHead, ModelMeta, ModelState};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DIMMLCK1";
const FORMAT: &str = "dimml-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub byte_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Whatever configuration produced the model, echoed verbatim.
    pub config: Value,
    pub meta: ModelMeta,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &ModelState, config: &Value, path: &Path) -> Result<()> {
    model.validate()?;
    let mut blob = Vec::with_capacity(model.param_count() * 8);
    let mut tensors = Vec::new();
    for (name, t) in model.params() {
        let offset = blob.len();
        container::f64_to_bytes(t.data(), &mut blob);
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset,
            byte_len: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        meta: model.meta.clone(),
        tensors,
    };
    container::write(path, MAGIC, &serde_json::to_value(&manifest)?, &blob)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, Manifest)> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let (header, blob) = container::read(path, MAGIC)?;
    let manifest: Manifest = serde_json::from_value(header).map_err(|e| fail(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut cursor = 0;
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        if e.dtype != "f64" || e.offset != cursor || e.byte_len != len * 8 {
            return Err(fail(format!("tensor `{}` does not tile the blob", e.name)));
        }
        let end = cursor + e.byte_len;
        if end > blob.len() {
            return Err(fail(format!("tensor `{}` runs past the blob", e.name)));
        }
        let t = Tensor::new(e.shape.clone(), container::bytes_to_f64(&blob[cursor..end]))?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(fail(format!("duplicate tensor `{}`", e.name)));
        }
        cursor = end;
    }
    if cursor != blob.len() {
        return Err(fail("trailing bytes after last tensor".into()));
    }
    let model = assemble(&mut tensors, manifest.meta.clone()).map_err(|e| fail(e.to_string()))?;
    if let Some(extra) = tensors.keys().next() {
        return Err(fail(format!("unexpected tensor `{extra}`")));
    }
    model.validate()?;
    Ok((model, manifest))
}

fn assemble(tensors: &mut BTreeMap<String, Tensor>, meta: ModelMeta) -> Result<ModelState> {
    let mut take = |name: String| tensors.remove(&name).ok_or_else(|| Error::invalid(format!("missing `{name}`")));
    let m = meta.num_modalities;
    let mut encoders = Vec::with_capacity(m);
    for i in 0..m {
        let mut layers = Vec::new();
        loop {
            let w = format!("encoder.{i}.layer{}.weight", layers.len());
            let Ok(weight) = take(w) else { break };
            let bias = take(format!("encoder.{i}.layer{}.bias", layers.len()))?;
            layers.push(Layer { weight, bias });
        }
        encoders.push(EncoderParams { layers });
    }
    let mut head = |prefix: String| -> Result<LinearHead> {
        Ok(LinearHead {
            weight: take(format!("{prefix}weight"))?,
            bias: take(format!("{prefix}bias"))?,
        })
    };
    let uni_heads = (0..m)
        .map(|i| head(format!("uni_head.{i}.")))
        .collect::<Result<Vec<_>>>()?;
    let shared_head = head("shared_head.".into())?;
    let fusion_head = head("fusion_head.".into())?;
    Ok(ModelState {
        encoders,
        uni_heads,
        shared_head,
        fusion_head,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelConfig};

    fn model() -> ModelState {
        init_model(&ModelConfig {
            input_dims: vec![3, 5],
            hidden_dims: vec![4, 4],
            feature_dim: 3,
            num_classes: 2,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = model();
        m.encoders[0].layers[0].weight.data_mut()[0] = -0.0;
        m.fusion_head.bias.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        save_checkpoint(&m, &serde_json::json!({"seed": 9}), &path).unwrap();
        let (back, manifest) = load_checkpoint(&path).unwrap();
        for ((a, x), (b, y)) in m.params().iter().zip(back.params()) {
            assert_eq!(a, &b);
            assert!(x.bitwise_eq(y), "{a}");
        }
        assert_eq!(back.meta, m.meta);
        assert_eq!(manifest.config["seed"], 9);
        let total: usize = manifest.tensors.iter().map(|e| e.byte_len).sum();
        assert_eq!(total, m.param_count() * 8);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &Value::Null, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOTACKPT\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
