//! Value-level kernels shared by the tape and by plain (untracked) forward passes.
//!
//! All reductions run in a fixed index order so results are bitwise reproducible.

use super::Tensor;
use crate::error::{Error, Result};

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [n] => Ok((1, *n)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

/// `a[n×k] · b[k×m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("matmul", a)?;
    let (k2, m) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// `a[n×k] · b[m×k]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("matmul_nt", a)?;
    let (m, k2) = require_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_nt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(n, m, out)
}

/// `a[k×n]ᵀ · b[k×m]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, n) = require_matrix("matmul_tn", a)?;
    let (k2, m) = require_matrix("matmul_tn", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_tn",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let brow = &bd[p * m..(p + 1) * m];
        for i in 0..n {
            let av = ad[p * n + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// Adds `bias[m]` to every row of `a[n×m]`.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = require_matrix("add_bias", a)?;
    if bias.len() != m {
        return Err(Error::shape(
            "add_bias",
            format!("rows of width {m}, bias of length {}", bias.len()),
        ));
    }
    let mut out = a.data().to_vec();
    for i in 0..n {
        for (o, b) in out[i * m..(i + 1) * m].iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Tensor::matrix(n, m, out)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} + {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| v * c)
}

/// Concatenates matrices with equal row counts along columns, preserving order.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let (n, _) = require_matrix("concat_cols", first)?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = require_matrix("concat_cols", p)?;
        if r != n {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts differ: {n} vs {r}"),
            ));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for i in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    Tensor::matrix(n, total, out)
}

/// Keeps the listed columns of `a`, in the listed order. `cols` must be non-empty.
pub fn select_cols(a: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let (n, m) = require_matrix("select_cols", a)?;
    if cols.is_empty() {
        return Err(Error::invalid("select_cols with an empty column set"));
    }
    if let Some(&bad) = cols.iter().find(|&&c| c >= m) {
        return Err(Error::shape(
            "select_cols",
            format!("column {bad} out of range for width {m}"),
        ));
    }
    let mut out = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        let row = &a.data()[i * m..(i + 1) * m];
        out.extend(cols.iter().map(|&c| row[c]));
    }
    Tensor::matrix(n, cols.len(), out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("softmax", logits)?;
    if !logits.all_finite() {
        return Err(Error::Numeric("softmax of non-finite logits".into()));
    }
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Row-wise log-softmax via the log-sum-exp trick.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("log_softmax", logits)?;
    if !logits.all_finite() {
        return Err(Error::Numeric("log_softmax of non-finite logits".into()));
    }
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// `out[i][j] = ‖a_i − b_j‖₂`.
pub fn pairwise_euclidean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("pairwise_euclidean", a)?;
    let (m, k2) = require_matrix("pairwise_euclidean", b)?;
    if k != k2 {
        return Err(Error::shape(
            "pairwise_euclidean",
            format!("feature widths {k} vs {k2}"),
        ));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a.data()[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b.data()[j * k..(j + 1) * k];
            let sq: f64 = ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum();
            out[i * m + j] = sq.sqrt();
        }
    }
    Tensor::matrix(n, m, out)
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.cols();
    (0..t.rows())
        .map(|i| {
            let row = &t.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
