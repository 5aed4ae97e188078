//! `.dml` dataset container and CSV export.
//!
//! The container header is JSON:
//!
//! ```json
//! { "format": "dimml-dataset", "version": 1, "recipe": {..},
//!   "num_classes": 6,
//!   "splits": [ { "name": "train", "samples": 600,
//!                 "modalities": [ { "rows": 600, "cols": 24, "offset": 0, "byte_len": 115200 } ],
//!                 "labels": { "offset": .., "byte_len": .. } } ] }
//! ```
//!
//! Offsets index into the blob following the header. Feature blobs are
//! row-major little-endian `f64`; label blobs are little-endian `i32`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, GeneratedData, SyntheticRecipe};
use crate::container;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DIMMLDS\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Span {
    offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    rows: usize,
    cols: usize,
    offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct SplitHeader {
    name: String,
    samples: usize,
    modalities: Vec<BlockHeader>,
    labels: Span,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    recipe: SyntheticRecipe,
    num_classes: usize,
    splits: Vec<SplitHeader>,
}

fn encode_split(name: &str, ds: &Dataset, blob: &mut Vec<u8>) -> SplitHeader {
    let modalities = ds
        .inputs()
        .iter()
        .map(|x| {
            let offset = blob.len();
            container::f64_to_bytes(x.data(), blob);
            BlockHeader {
                rows: x.rows(),
                cols: x.cols(),
                offset,
                byte_len: blob.len() - offset,
            }
        })
        .collect();
    let offset = blob.len();
    for &y in ds.labels() {
        blob.extend_from_slice(&(y as i32).to_le_bytes());
    }
    SplitHeader {
        name: name.to_string(),
        samples: ds.len(),
        modalities,
        labels: Span {
            offset,
            byte_len: blob.len() - offset,
        },
    }
}

pub fn save_dataset(data: &GeneratedData, path: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let splits = vec![
        encode_split("train", &data.train, &mut blob),
        encode_split("test", &data.test, &mut blob),
    ];
    let header = Header {
        format: "dimml-dataset".into(),
        version: VERSION,
        recipe: data.recipe.clone(),
        num_classes: data.train.num_classes,
        splits,
    };
    container::write(path, MAGIC, &serde_json::to_value(&header)?, &blob)
}

pub fn load_dataset(path: &Path) -> Result<GeneratedData> {
    let (header, blob) = container::read(path, MAGIC)?;
    let header: Header = serde_json::from_value(header)?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if header.version != VERSION {
        return Err(fail(format!("unsupported version {}", header.version)));
    }
    let slice = |offset: usize, len: usize| -> Result<&[u8]> {
        blob.get(offset..offset + len)
            .ok_or_else(|| fail(format!("span {offset}+{len} outside blob")))
    };
    let mut splits = Vec::new();
    for s in &header.splits {
        let mut inputs = Vec::new();
        for b in &s.modalities {
            if b.byte_len != b.rows * b.cols * 8 || b.rows != s.samples {
                return Err(fail(format!("inconsistent block in split {}", s.name)));
            }
            let values = container::bytes_to_f64(slice(b.offset, b.byte_len)?);
            inputs.push(Tensor::matrix(b.rows, b.cols, values)?);
        }
        if s.labels.byte_len != s.samples * 4 {
            return Err(fail(format!("label blob size mismatch in split {}", s.name)));
        }
        let labels = slice(s.labels.offset, s.labels.byte_len)?
            .chunks_exact(4)
            .map(|c| {
                let y = i32::from_le_bytes(c.try_into().unwrap());
                usize::try_from(y).map_err(|_| fail(format!("negative label {y}")))
            })
            .collect::<Result<Vec<_>>>()?;
        splits.push((s.name.clone(), Dataset::new(inputs, labels, header.num_classes)?));
    }
    let mut take = |name: &str| {
        splits
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| splits.remove(i).1)
            .ok_or_else(|| fail(format!("missing split `{name}`")))
    };
    let train = take("train")?;
    let test = take("test")?;
    Ok(GeneratedData {
        recipe: header.recipe,
        train,
        test,
    })
}

/// Writes one CSV per modality with header `dim_0..dim_{d-1},label`.
pub fn write_modality_csv(features: &Tensor, labels: &[usize], path: &Path) -> Result<()> {
    let d = features.cols();
    let mut out = String::new();
    for c in 0..d {
        let _ = write!(out, "dim_{c},");
    }
    out.push_str("label\n");
    for (r, y) in labels.iter().enumerate() {
        for v in features.row(r) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y}");
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_modality_csv`].
pub fn read_modality_csv(path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let width = header.split(',').count() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(fail(format!("row {n} has {} fields", fields.len())));
        }
        for f in &fields[..width] {
            data.push(f.parse::<f64>().map_err(|e| fail(format!("row {n}: {e}")))?);
        }
        labels.push(
            fields[width]
                .parse::<usize>()
                .map_err(|e| fail(format!("row {n}: {e}")))?,
        );
    }
    Ok((Tensor::matrix(labels.len(), width, data)?, labels))
}

/// Exports every split and modality of `data` under `dir`; returns the written paths.
pub fn export_csv(data: &GeneratedData, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, ds) in [("train", &data.train), ("test", &data.test)] {
        for (i, x) in ds.inputs().iter().enumerate() {
            let path = dir.join(format!("{name}_modality{}.csv", i + 1));
            write_modality_csv(x, ds.labels(), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate;

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dml");
        let mut r = SyntheticRecipe::complementary(4);
        r.train_samples = 30;
        r.test_samples = 12;
        let g = generate(&r).unwrap();
        save_dataset(&g, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, g);
        for (a, b) in back.train.inputs().iter().zip(g.train.inputs()) {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dml");
        let mut r = SyntheticRecipe::complementary(4);
        r.train_samples = 12;
        r.test_samples = 12;
        save_dataset(&generate(&r).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_dataset(&path).is_err());
        fs::write(&path, b"nonsense").unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let x = Tensor::matrix(2, 3, vec![0.1, -2.5, 3.0, 1e-300, 7.0, -0.0]).unwrap();
        write_modality_csv(&x, &[1, 0], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("dim_0,dim_1,dim_2,label\n"));
        let (back, labels) = read_modality_csv(&path).unwrap();
        assert!(back.bitwise_eq(&x));
        assert_eq!(labels, vec![1, 0]);
    }
}
