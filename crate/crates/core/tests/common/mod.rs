#![allow(dead_code)]

use std::collections::BTreeMap;

use dimml_core::dimsep::DimensionPartition;
use dimml_core::models::{ModelState, ModelVars};
use dimml_core::numerics::{rng_for, Tape, Tensor, Var};
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Tensor {
    let mut rng = rng_for(seed, tag);
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_labels(n: usize, k: usize, seed: u64, tag: &str) -> Vec<usize> {
    let mut rng = rng_for(seed, tag);
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Random effective set; every other dim is ineffective.
pub fn random_partition(dim: usize, seed: u64, tag: &str) -> DimensionPartition {
    let mut rng = rng_for(seed, tag);
    let effective: Vec<usize> = (0..dim).filter(|_| rng.random::<bool>()).collect();
    DimensionPartition {
        dim,
        ineffective: (0..dim).filter(|m| !effective.contains(m)).collect(),
        effective,
    }
}

/// Partition with a guaranteed nonempty `ne(p1) ∩ e(p2)` and `e(p1) ∩ ne(p2)`.
pub fn crossing_partitions(dim: usize, seed: u64) -> (DimensionPartition, DimensionPartition) {
    assert!(dim >= 2);
    for attempt in 0.. {
        let s = seed.wrapping_add(attempt * 7_919);
        let p1 = random_partition(dim, s, "p1");
        let p2 = random_partition(dim, s, "p2");
        let (a, b) = dimml_core::dimsep::cross_sets_of(&p1, &p2).unwrap();
        if !a.is_empty() && !b.is_empty() {
            return (p1, p2);
        }
    }
    unreachable!()
}

/// Builds [`ModelVars`] for `model`: names present in `vars` use those tape
/// handles, everything else enters the tape as a constant.
pub fn model_vars(tape: &mut Tape, model: &ModelState, vars: &BTreeMap<String, Var>) -> ModelVars {
    let mut get = |name: String, value: &Tensor| -> Var {
        match vars.get(&name) {
            Some(&v) => v,
            None => tape.constant(value.clone()),
        }
    };
    let encoders = model
        .encoders
        .iter()
        .enumerate()
        .map(|(i, enc)| {
            enc.layers
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    (
                        get(format!("encoder.{i}.layer{l}.weight"), &layer.weight),
                        get(format!("encoder.{i}.layer{l}.bias"), &layer.bias),
                    )
                })
                .collect()
        })
        .collect();
    let uni_heads = model
        .uni_heads
        .iter()
        .enumerate()
        .map(|(i, h)| {
            (
                get(format!("uni_head.{i}.weight"), &h.weight),
                get(format!("uni_head.{i}.bias"), &h.bias),
            )
        })
        .collect();
    let shared_head = (
        get("shared_head.weight".into(), &model.shared_head.weight),
        get("shared_head.bias".into(), &model.shared_head.bias),
    );
    let fusion_head = (
        get("fusion_head.weight".into(), &model.fusion_head.weight),
        get("fusion_head.bias".into(), &model.fusion_head.bias),
    );
    ModelVars {
        encoders,
        uni_heads,
        shared_head,
        fusion_head,
    }
}

/// Parameters of `model` whose names start with any of `prefixes`.
pub fn params_with(model: &ModelState, prefixes: &[&str]) -> BTreeMap<String, Tensor> {
    model
        .params()
        .into_iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, t)| (n, t.clone()))
        .collect()
}
