//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] walks the records in reverse creation
//! order, so gradient accumulation follows one fixed sequence and repeated
//! runs are bitwise identical.
//!
//! Gradient flow is cut with [`Tape::stop_gradient`]: the returned handle
//! carries the same value but nothing upstream of it receives gradient
//! through that path.

use std::collections::BTreeMap;

use super::{ops, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    Sum(Var),
    PairwiseEuclidean(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    KlToTarget {
        logits: Var,
        target: Tensor,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    nodes: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a registered parameter; zeros when the loss does not depend on it.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    /// Gradient with respect to any recorded value (zeros if unreached).
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.nodes[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn register(&mut self, name: &str, value: Tensor, tracked: bool) -> Result<Var> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("parameter `{name}` registered twice")));
        }
        let v = self.push(value, Op::Leaf, tracked);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Registers a trainable parameter.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.register(name, value, true)
    }

    /// Registers a parameter that always receives an exactly-zero gradient.
    pub fn frozen_param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.register(name, value, false)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Same value as `v`, but gradient does not pass through it.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul_nt(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMulNt(a, b), tracked))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = ops::add_bias(self.value(a), self.value(bias))?;
        let tracked = self.tracked(a) || self.tracked(bias);
        Ok(self.push(value, Op::AddBias(a, bias), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = ops::scale(self.value(a), c);
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, c), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat_cols(&values)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let value = ops::select_cols(self.value(a), cols)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SelectCols(a, cols.to_vec()), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a), tracked)
    }

    /// `out[i][j] = ‖a_i − b_j‖₂`. The gradient at a zero distance is taken as zero.
    pub fn pairwise_euclidean(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::pairwise_euclidean(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::PairwiseEuclidean(a, b), tracked))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if !z.is_matrix() {
            return Err(Error::shape("cross_entropy", "logits must be B×K"));
        }
        let (b, k) = (z.rows(), z.cols());
        if labels.len() != b {
            return Err(Error::shape(
                "cross_entropy",
                format!("{b} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let logp = ops::log_softmax(z)?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            total -= logp.get(i, y);
        }
        let probs = logp.map(f64::exp);
        let value = Tensor::scalar(total / b as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Mean over rows of `KL(target_i ‖ softmax(logits_i))`; `target` rows are distributions.
    pub fn kl_to_target(&mut self, logits: Var, target: Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() || !z.is_matrix() {
            return Err(Error::shape(
                "kl_to_target",
                format!("logits {:?} vs target {:?}", z.shape(), target.shape()),
            ));
        }
        let logp = ops::log_softmax(z)?;
        let b = z.rows();
        let mut total = 0.0;
        for (q, lp) in target.data().iter().zip(logp.data()) {
            if *q > 0.0 {
                total += q * (q.ln() - lp);
            }
        }
        let probs = logp.map(f64::exp);
        let value = Tensor::scalar(total / b as f64);
        let tracked = self.tracked(logits);
        Ok(self.push(
            value,
            Op::KlToTarget {
                logits,
                target,
                probs,
            },
            tracked,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (name, v) in &self.params {
            let g = if self.nodes[v.0].tracked {
                grads[v.0].clone()
            } else {
                None
            };
            let g = g.unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
            }
            params.insert(name.clone(), g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            params,
            nodes: grads,
            shapes,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].tracked {
            return Ok(());
        }
        let slot = &mut grads[v.0];
        *slot = Some(match slot.take() {
            None => g,
            Some(prev) => ops::add(&prev, &g)?,
        });
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let ga = ops::matmul_nt(g, self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let gb = ops::matmul_tn(self.value(*a), g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::MatMulNt(a, b) => {
                if self.tracked(*a) {
                    let ga = ops::matmul(g, self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let gb = ops::matmul_tn(g, self.value(*a))?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.tracked(*bias) {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, gb)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let ga = Tensor::new(g.shape().to_vec(), data)?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb = Tensor::new(g.shape().to_vec(), data)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, ops::scale(g, *c))?,
            Op::Relu(a) => {
                let input = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.tracked(*p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        let shape = self.value(*p).shape().to_vec();
                        self.accumulate(grads, *p, Tensor::new(shape, data)?)?;
                    }
                    offset += w;
                }
            }
            Op::SelectCols(a, cols) => {
                if self.tracked(*a) {
                    let input = self.value(*a);
                    let m = input.cols();
                    let mut ga = Tensor::zeros(input.shape());
                    for i in 0..g.rows() {
                        let grow = g.row(i);
                        let out = &mut ga.data_mut()[i * m..(i + 1) * m];
                        for (&c, v) in cols.iter().zip(grow) {
                            out[c] += v;
                        }
                    }
                    self.accumulate(grads, *a, ga)?;
                }
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.value(*a).shape(), g.item());
                self.accumulate(grads, *a, ga)?;
            }
            Op::PairwiseEuclidean(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let dist = &self.nodes[idx].value;
                let (n, m, k) = (av.rows(), bv.rows(), av.cols());
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..n {
                    for j in 0..m {
                        let d = dist.get(i, j);
                        let gij = g.get(i, j);
                        if d == 0.0 || gij == 0.0 {
                            continue;
                        }
                        let coef = gij / d;
                        for c in 0..k {
                            let diff = av.get(i, c) - bv.get(j, c);
                            ga.data_mut()[i * k + c] += coef * diff;
                            gb.data_mut()[j * k + c] -= coef * diff;
                        }
                    }
                }
                if self.tracked(*a) {
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = probs.rows() as f64;
                let k = probs.cols();
                let scale = g.item() / b;
                let mut gz = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    gz.data_mut()[i * k + y] -= 1.0;
                }
                self.accumulate(grads, *logits, ops::scale(&gz, scale))?;
            }
            Op::KlToTarget {
                logits,
                target,
                probs,
            } => {
                let scale = g.item() / probs.rows() as f64;
                let data = probs
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, q)| (p - q) * scale)
                    .collect();
                self.accumulate(grads, *logits, Tensor::new(probs.shape().to_vec(), data)?)?;
            }
        }
        Ok(())
    }
}
