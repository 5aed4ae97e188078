use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SyntheticRecipe;
use crate::error::{Error, Result};
use crate::numerics::{rng_for, Tensor};

/// Paired samples across modalities with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl MultimodalBatch {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("batch needs at least one modality"));
        }
        for (i, x) in inputs.iter().enumerate() {
            if !x.is_matrix() || x.rows() != labels.len() {
                return Err(Error::shape(
                    "MultimodalBatch",
                    format!(
                        "modality {i} has shape {:?}, expected {} rows",
                        x.shape(),
                        labels.len()
                    ),
                ));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.inputs.len()
    }
}

/// A full split: one batch holding every sample plus the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub data: MultimodalBatch,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Ok(Self {
            num_classes,
            data: MultimodalBatch::new(inputs, labels, num_classes)?,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.data.num_modalities()
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.data.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.data.labels
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.data.inputs.iter().map(Tensor::cols).collect()
    }

    pub fn select(&self, rows: &[usize]) -> MultimodalBatch {
        MultimodalBatch {
            inputs: self.data.inputs.iter().map(|x| x.gather_rows(rows)).collect(),
            labels: rows.iter().map(|&r| self.data.labels[r]).collect(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in self.labels() {
            counts[y] += 1;
        }
        counts
    }
}

/// Train and test splits produced from one recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub recipe: SyntheticRecipe,
    pub train: Dataset,
    pub test: Dataset,
}

/// Generates train and test splits; the output is a pure function of `recipe`.
pub fn generate(recipe: &SyntheticRecipe) -> Result<GeneratedData> {
    recipe.validate()?;
    let k = recipe.num_classes;
    let m = recipe.num_modalities();

    let mut proto_rng = rng_for(recipe.seed, "synthdata/prototypes");
    // prototypes[i][class] has one entry per informative dim of modality i
    let prototypes: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|i| {
            let carried = recipe.carried(i);
            (0..k)
                .map(|class| {
                    let row: Vec<f64> = recipe.informative_dims[i]
                        .iter()
                        .map(|_| proto_rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if carried.contains(&class) {
                        row
                    } else {
                        vec![0.0; row.len()]
                    }
                })
                .collect()
        })
        .collect();
    let shared: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            recipe
                .shared_dims
                .iter()
                .map(|_| proto_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let split = |n: usize, tag: &str| -> Result<Dataset> {
        let mut rng = rng_for(recipe.seed, tag);
        let mut labels: Vec<usize> = (0..n).map(|j| j % k).collect();
        labels.shuffle(&mut rng);

        let mut inputs: Vec<Vec<f64>> = recipe
            .input_dims
            .iter()
            .map(|&d| Vec::with_capacity(n * d))
            .collect();
        for &y in &labels {
            let corrupted = if recipe.corrupt_prob > 0.0 && rng.random::<f64>() < recipe.corrupt_prob {
                Some(rng.random_range(0..m))
            } else {
                None
            };
            for i in 0..m {
                let mut row = vec![0.0; recipe.input_dims[i]];
                for v in row.iter_mut() {
                    *v = recipe.noise_std * rng.sample::<f64, _>(StandardNormal);
                }
                if corrupted != Some(i) {
                    let sign = if recipe.sign_flipped(i) && rng.random::<bool>() { -1.0 } else { 1.0 };
                    for (&dim, &p) in recipe.informative_dims[i].iter().zip(&prototypes[i][y]) {
                        row[dim] += sign * recipe.scale_of(i) * p;
                    }
                    for (&dim, &p) in recipe.shared_dims.iter().zip(&shared[y]) {
                        row[dim] += recipe.shared_scale * p;
                    }
                }
                inputs[i].extend(row);
            }
        }
        let tensors = inputs
            .into_iter()
            .zip(&recipe.input_dims)
            .map(|(data, &d)| Tensor::matrix(n, d, data))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(tensors, labels, k)
    };

    Ok(GeneratedData {
        recipe: recipe.clone(),
        train: split(recipe.train_samples, "synthdata/train")?,
        test: split(recipe.test_samples, "synthdata/test")?,
    })
}

/// Sample indices for one epoch, grouped into batches. The last batch may be short.
pub fn batch_indices(len: usize, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::invalid("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(shuffle_seed, "synthdata/shuffle"));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of shuffled batches; every sample appears exactly once.
pub fn iterate_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<impl Iterator<Item = MultimodalBatch> + '_> {
    let chunks = batch_indices(dataset.len(), batch_size, shuffle_seed)?;
    Ok(chunks.into_iter().map(move |rows| dataset.select(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let x = Tensor::matrix(n, 1, (0..n).map(|v| v as f64).collect()).unwrap();
        Dataset::new(vec![x.clone(), x], (0..n).map(|j| j % 3).collect(), 3).unwrap()
    }

    #[test]
    fn batch_sizes_keep_partial_tail() {
        let ds = tiny(10);
        let sizes: Vec<usize> = iterate_batches(&ds, 4, 9).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn shuffle_is_seeded() {
        assert_eq!(batch_indices(50, 7, 3).unwrap(), batch_indices(50, 7, 3).unwrap());
        assert_ne!(batch_indices(50, 7, 3).unwrap(), batch_indices(50, 7, 4).unwrap());
    }

    #[test]
    fn labels_preserved_as_multiset() {
        let ds = tiny(17);
        let mut seen: Vec<usize> = iterate_batches(&ds, 5, 1)
            .unwrap()
            .flat_map(|b| b.labels)
            .collect();
        let mut want = ds.labels().to_vec();
        seen.sort_unstable();
        want.sort_unstable();
        assert_eq!(seen, want);
    }

    #[test]
    fn rows_stay_paired_across_modalities() {
        let ds = tiny(9);
        for b in iterate_batches(&ds, 4, 2).unwrap() {
            assert_eq!(b.inputs[0], b.inputs[1]);
            for (r, &y) in b.labels.iter().enumerate() {
                assert_eq!(b.inputs[0].get(r, 0) as usize % 3, y);
            }
        }
    }

    #[test]
    fn empty_and_zero_batch_errors() {
        assert!(batch_indices(0, 4, 0).is_err());
        assert!(batch_indices(4, 0, 0).is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let r = SyntheticRecipe::complementary(11);
        let a = generate(&r).unwrap();
        let b = generate(&r).unwrap();
        assert!(a.train.inputs()[0].bitwise_eq(&b.train.inputs()[0]));
        assert_eq!(a, b);
        let c = generate(&SyntheticRecipe::complementary(12)).unwrap();
        assert_ne!(a.train.inputs()[0], c.train.inputs()[0]);
    }

    #[test]
    fn classes_are_balanced() {
        let mut r = SyntheticRecipe::complementary(5);
        r.num_classes = 4;
        r.carried_classes = vec![vec![0, 1], vec![2, 3]];
        r.train_samples = 1000;
        let g = generate(&r).unwrap();
        for c in g.train.class_counts() {
            assert!((249..=251).contains(&c), "{c}");
        }
    }

    #[test]
    fn noiseless_informative_dims_identify_carried_classes() {
        let r = SyntheticRecipe::noiseless(3);
        let g = generate(&r).unwrap();
        for m in 0..2 {
            let carried = r.carried(m);
            let x = &g.train.inputs()[m];
            for &dim in &r.informative_dims[m] {
                // value is constant within a class and distinct across carried classes
                let mut per_class: Vec<Option<f64>> = vec![None; r.num_classes];
                for (row, &y) in g.train.labels().iter().enumerate() {
                    let v = x.get(row, dim);
                    match per_class[y] {
                        None => per_class[y] = Some(v),
                        Some(prev) => assert_eq!(prev, v),
                    }
                }
                for (a_i, &a) in carried.iter().enumerate() {
                    for &b in &carried[a_i + 1..] {
                        assert_ne!(per_class[a], per_class[b]);
                    }
                }
            }
            // pure-noise dims are identically zero without noise
            for dim in 0..r.input_dims[m] {
                if !r.informative_dims[m].contains(&dim) {
                    assert!((0..x.rows()).all(|row| x.get(row, dim) == 0.0));
                }
            }
        }
    }
}
