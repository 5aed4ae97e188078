//! Feature-dimension effectiveness analysis.
//!
//! Each feature dimension is rated by how well a one-dimensional
//! nearest-class-centroid rule classifies the training set using only that
//! dimension. Dimensions rated above the modality's mean score are
//! *effective*, the rest *ineffective*. For an ordered modality pair
//! `(learner, teacher)` the cross set `ineffective(learner) ∩ effective(teacher)`
//! lists the dimensions along which the learner is pulled toward the teacher.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{encode, head_logits, ModelState};
use crate::numerics::{ops, Tensor};
use crate::synthdata::Dataset;

/// Per-class feature means.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    /// `K×d`.
    pub centroids: Tensor,
    pub counts: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimScores {
    pub scores: Vec<f64>,
    pub mean: f64,
}

impl DimScores {
    pub fn new(scores: Vec<f64>) -> Self {
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        Self { scores, mean }
    }
}

/// Effective / ineffective split of one modality's feature dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionPartition {
    pub dim: usize,
    pub effective: Vec<usize>,
    pub ineffective: Vec<usize>,
}

/// Dimensions along which `learner` is pulled toward `teacher`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossSet {
    pub learner: usize,
    pub teacher: usize,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    /// One-dimensional nearest-centroid accuracy.
    #[default]
    Centroid,
    /// Root-mean-square activation.
    L2Norm,
}

/// Partitions for every modality, plus all ordered-pair cross sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSet {
    pub metric: ScoreMetric,
    pub scores: Vec<DimScores>,
    pub partitions: Vec<DimensionPartition>,
    pub cross_sets: Vec<CrossSet>,
}

impl PartitionSet {
    pub fn from_scores(metric: ScoreMetric, scores: Vec<DimScores>) -> Result<Self> {
        let partitions: Vec<_> = scores.iter().map(separate_dimensions).collect();
        let mut cross_sets = Vec::new();
        for (i, pi) in partitions.iter().enumerate() {
            for (j, pj) in partitions.iter().enumerate() {
                if i != j {
                    let (learner_side, _) = cross_sets_of(pi, pj)?;
                    cross_sets.push(CrossSet {
                        learner: i,
                        teacher: j,
                        dims: learner_side,
                    });
                }
            }
        }
        Ok(Self {
            metric,
            scores,
            partitions,
            cross_sets,
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.partitions.len()
    }

    /// `ineffective(learner) ∩ effective(teacher)`.
    pub fn cross(&self, learner: usize, teacher: usize) -> &[usize] {
        self.cross_sets
            .iter()
            .find(|c| c.learner == learner && c.teacher == teacher)
            .map(|c| c.dims.as_slice())
            .unwrap_or(&[])
    }
}

fn check_labels(features: &Tensor, labels: &[usize]) -> Result<()> {
    if !features.is_matrix() || features.rows() != labels.len() {
        return Err(Error::shape(
            "dimsep",
            format!("{:?} features for {} labels", features.shape(), labels.len()),
        ));
    }
    Ok(())
}

/// Mean feature vector of each class `0..num_classes`.
pub fn class_centroids(features: &Tensor, labels: &[usize], num_classes: usize) -> Result<CentroidTable> {
    check_labels(features, labels)?;
    let d = features.cols();
    let mut sums = vec![0.0; num_classes * d];
    let mut counts = vec![0usize; num_classes];
    for (r, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        counts[y] += 1;
        for (s, v) in sums[y * d..(y + 1) * d].iter_mut().zip(features.row(r)) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    for (k, &n) in counts.iter().enumerate() {
        for s in &mut sums[k * d..(k + 1) * d] {
            *s /= n as f64;
        }
    }
    Ok(CentroidTable {
        centroids: Tensor::matrix(num_classes, d, sums)?,
        counts,
        total: labels.len(),
    })
}

/// Fraction of samples whose nearest class centroid along dimension `m` alone
/// is their own class. Ties resolve to the lowest class index.
pub fn dimension_scores(features: &Tensor, labels: &[usize], table: &CentroidTable) -> Result<DimScores> {
    check_labels(features, labels)?;
    let d = features.cols();
    if table.centroids.cols() != d {
        return Err(Error::shape(
            "dimension_scores",
            format!("features have {d} dims, centroids {}", table.centroids.cols()),
        ));
    }
    let k = table.centroids.rows();
    let n = labels.len();
    let mut hits = vec![0usize; d];
    for (r, &y) in labels.iter().enumerate() {
        let row = features.row(r);
        for (m, hit) in hits.iter_mut().enumerate() {
            let v = row[m];
            let mut best = 0;
            let mut best_dist = (v - table.centroids.get(0, m)).abs();
            for class in 1..k {
                let dist = (v - table.centroids.get(class, m)).abs();
                if dist < best_dist {
                    best = class;
                    best_dist = dist;
                }
            }
            if best == y {
                *hit += 1;
            }
        }
    }
    Ok(DimScores::new(
        hits.into_iter().map(|h| h as f64 / n as f64).collect(),
    ))
}

/// Dimensions scoring strictly above the mean are effective; ties are ineffective.
pub fn separate_dimensions(scores: &DimScores) -> DimensionPartition {
    let (effective, ineffective) = (0..scores.scores.len()).partition(|&m| scores.scores[m] > scores.mean);
    DimensionPartition {
        dim: scores.scores.len(),
        effective,
        ineffective,
    }
}

/// `(ineffective₁ ∩ effective₂, effective₁ ∩ ineffective₂)`, both sorted.
pub fn cross_sets_of(p1: &DimensionPartition, p2: &DimensionPartition) -> Result<(Vec<usize>, Vec<usize>)> {
    if p1.dim != p2.dim {
        return Err(Error::shape(
            "cross_sets",
            format!("partitions over {} and {} dims", p1.dim, p2.dim),
        ));
    }
    let e2: BTreeSet<_> = p2.effective.iter().collect();
    let ne2: BTreeSet<_> = p2.ineffective.iter().collect();
    let a = p1.ineffective.iter().filter(|m| e2.contains(m)).copied().collect();
    let b = p1.effective.iter().filter(|m| ne2.contains(m)).copied().collect();
    Ok((a, b))
}

/// Root-mean-square of each dimension over samples.
pub fn l2norm_scores(features: &Tensor) -> Result<DimScores> {
    if !features.is_matrix() {
        return Err(Error::shape("l2norm_scores", "expected N×d"));
    }
    let (n, d) = (features.rows(), features.cols());
    let mut acc = vec![0.0; d];
    for r in 0..n {
        for (a, v) in acc.iter_mut().zip(features.row(r)) {
            *a += v * v;
        }
    }
    Ok(DimScores::new(acc.into_iter().map(|s| (s / n as f64).sqrt()).collect()))
}

/// Scores a single feature matrix under `metric`.
pub fn score_features(features: &Tensor, labels: &[usize], num_classes: usize, metric: ScoreMetric) -> Result<DimScores> {
    match metric {
        ScoreMetric::Centroid => {
            let table = class_centroids(features, labels, num_classes)?;
            dimension_scores(features, labels, &table)
        }
        ScoreMetric::L2Norm => l2norm_scores(features),
    }
}

/// Encodes the full dataset with every encoder and partitions each modality.
pub fn compute_partition(model: &ModelState, dataset: &Dataset, metric: ScoreMetric) -> Result<PartitionSet> {
    let feats = model.features(dataset.inputs())?;
    let scores = feats
        .iter()
        .map(|h| score_features(h, dataset.labels(), dataset.num_classes, metric))
        .collect::<Result<Vec<_>>>()?;
    PartitionSet::from_scores(metric, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Uni,
    Shared,
}

/// Top-1 accuracy of one modality with every feature outside `keep_dims` zeroed.
pub fn masked_accuracy(
    model: &ModelState,
    dataset: &Dataset,
    modality: usize,
    keep_dims: &[usize],
    head: HeadKind,
) -> Result<f64> {
    let enc = model
        .encoders
        .get(modality)
        .ok_or_else(|| Error::invalid(format!("no modality {modality}")))?;
    let d = enc.output_dim();
    if let Some(&bad) = keep_dims.iter().find(|&&m| m >= d) {
        return Err(Error::invalid(format!("keep dim {bad} out of range for {d}")));
    }
    let mut h = encode(enc, &dataset.inputs()[modality])?;
    let keep: BTreeSet<usize> = keep_dims.iter().copied().collect();
    let width = h.cols();
    for (idx, v) in h.data_mut().iter_mut().enumerate() {
        if !keep.contains(&(idx % width)) {
            *v = 0.0;
        }
    }
    let head = match head {
        HeadKind::Uni => &model.uni_heads[modality],
        HeadKind::Shared => &model.shared_head,
    };
    let preds = ops::argmax_rows(&head_logits(head, &h)?);
    Ok(accuracy(&preds, dataset.labels()))
}

pub(crate) fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelConfig};
    use crate::numerics::rng_for;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn centroid_examples() {
        let f = m(&[&[1.0, 3.0], &[3.0, 5.0], &[10.0, 10.0]]);
        let t = class_centroids(&f, &[0, 0, 1], 2).unwrap();
        assert_eq!(t.centroids.row(0), &[2.0, 4.0]);
        assert_eq!(t.centroids.row(1), &[10.0, 10.0]);
        assert_eq!(t.counts, vec![2, 1]);
        assert_eq!(t.total, 3);
    }

    #[test]
    fn missing_class_is_named() {
        let f = m(&[&[1.0], &[2.0]]);
        match class_centroids(&f, &[0, 2], 3) {
            Err(Error::MissingClass(1)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perfect_and_tied_dimensions() {
        let f = m(&[&[0.0, 5.0], &[0.0, 5.0], &[1.0, 5.0], &[1.0, 5.0]]);
        let labels = [0, 0, 1, 1];
        let t = class_centroids(&f, &labels, 2).unwrap();
        let s = dimension_scores(&f, &labels, &t).unwrap();
        assert_eq!(s.scores, vec![1.0, 0.5]);
        assert_eq!(s.mean, 0.75);
    }

    #[test]
    fn separation_examples() {
        let p = separate_dimensions(&DimScores::new(vec![0.9, 0.1]));
        assert_eq!((p.effective, p.ineffective), (vec![0], vec![1]));

        let s = DimScores {
            scores: vec![0.5, 0.6, 0.7],
            mean: 0.6,
        };
        let p = separate_dimensions(&s);
        assert_eq!((p.effective, p.ineffective), (vec![2], vec![0, 1]));

        let p = separate_dimensions(&DimScores::new(vec![0.3; 4]));
        assert!(p.effective.is_empty());
        assert_eq!(p.ineffective, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cross_set_examples() {
        let p1 = DimensionPartition {
            dim: 4,
            effective: vec![0, 1],
            ineffective: vec![2, 3],
        };
        let p2 = DimensionPartition {
            dim: 4,
            effective: vec![2],
            ineffective: vec![0, 1, 3],
        };
        assert_eq!(cross_sets_of(&p1, &p2).unwrap(), (vec![2], vec![0, 1]));
        assert_eq!(cross_sets_of(&p1, &p1).unwrap(), (vec![], vec![]));
        let p3 = DimensionPartition {
            dim: 5,
            ..p2.clone()
        };
        assert!(cross_sets_of(&p1, &p3).is_err());
    }

    #[test]
    fn l2norm_examples() {
        let f = m(&[&[0.0, -2.0, 3.0], &[0.0, -2.0, 4.0]]);
        let s = l2norm_scores(&f).unwrap();
        assert_eq!(s.scores[0], 0.0);
        assert_eq!(s.scores[1], 2.0);
        assert!((s.scores[2] - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn partition_set_lists_all_ordered_pairs() {
        let scores = vec![
            DimScores::new(vec![0.9, 0.1, 0.2, 0.8]),
            DimScores::new(vec![0.1, 0.9, 0.8, 0.2]),
            DimScores::new(vec![0.5, 0.5, 0.9, 0.1]),
        ];
        let ps = PartitionSet::from_scores(ScoreMetric::Centroid, scores).unwrap();
        assert_eq!(ps.cross_sets.len(), 6);
        assert_eq!(ps.cross(0, 1), &[1, 2]);
        assert_eq!(ps.cross(1, 0), &[0, 3]);
        assert_eq!(ps.cross(0, 2), &[2]);
    }

    #[test]
    fn masked_accuracy_extremes() {
        let cfg = ModelConfig {
            input_dims: vec![4, 4],
            hidden_dims: vec![5],
            feature_dim: 3,
            num_classes: 3,
            seed: 2,
        };
        let mut model = init_model(&cfg).unwrap();
        model.uni_heads[0].bias = Tensor::vector(vec![0.0, 0.5, -0.1]).unwrap();
        let mut rng = rng_for(1, "t");
        let n = 30;
        let x: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(n, 4, x).unwrap();
        let labels: Vec<usize> = (0..n).map(|j| j % 3).collect();
        let ds = Dataset::new(vec![x.clone(), x], labels.clone(), 3).unwrap();

        let full = masked_accuracy(&model, &ds, 0, &[0, 1, 2], HeadKind::Uni).unwrap();
        let h = encode(&model.encoders[0], &ds.inputs()[0]).unwrap();
        let preds = ops::argmax_rows(&head_logits(&model.uni_heads[0], &h).unwrap());
        assert_eq!(full, accuracy(&preds, &labels));

        let none = masked_accuracy(&model, &ds, 0, &[], HeadKind::Uni).unwrap();
        assert_eq!(none, 10.0 / 30.0); // always predicts class 1

        assert!(masked_accuracy(&model, &ds, 0, &[3], HeadKind::Uni).is_err());
    }
}
