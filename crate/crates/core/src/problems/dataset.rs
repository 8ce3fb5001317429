use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled input. `id` is the 0-based position in its [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub input: Vec<f64>,
    pub label: usize,
}

/// Immutable labeled sample store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    input_dim: usize,
}

impl Dataset {
    /// Builds a dataset from `(input, label)` pairs, assigning ids `0..N`.
    pub fn from_pairs(pairs: Vec<(Vec<f64>, usize)>, num_classes: usize) -> Result<Self> {
        let samples = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (input, label))| Sample { id, input, label })
            .collect();
        Self::new(samples, num_classes)
    }

    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        let input_dim = samples[0].input.len();
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidArgument(format!(
                    "sample ids must be contiguous from 0; position {i} has id {}",
                    s.id
                )));
            }
            if s.input.len() != input_dim {
                return Err(Error::Shape {
                    context: "sample input",
                    expected: input_dim,
                    got: s.input.len(),
                });
            }
            if s.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} but there are {num_classes} classes",
                    s.label
                )));
            }
            if s.input.iter().any(|x| !x.is_finite()) {
                return Err(Error::non_finite(format!("input of sample {i}")));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            input_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// First `n` samples (all of them if `n ≥ len`).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.samples[..n.min(self.len())].to_vec(), self.num_classes)
    }

    /// Shuffles the sample ids and cuts them into consecutive batches; the
    /// last batch may be short.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 || batch_size > self.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} must be in 1..={}",
                self.len()
            )));
        }
        let mut ids: Vec<usize> = (0..self.len()).collect();
        ids.shuffle(rng);
        Ok(ids.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }
}

/// Gaussian blobs: class `k` is centred at `separation · e_{k mod dim}`
/// (negated on the second lap when `num_classes > dim`) with unit-free noise
/// of standard deviation 0.35. Labels cycle through the classes.
pub fn make_synthetic_dataset(
    num_samples: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_samples == 0 || dim == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs positive sample count, dimension and class count".into(),
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument("separation must be positive".into()));
    }
    if num_classes > 2 * dim {
        return Err(Error::InvalidArgument(format!(
            "at most {} classes fit in {dim} dimensions",
            2 * dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BLOB_SIGMA).expect("valid sigma");
    let pairs = (0..num_samples)
        .map(|i| {
            let label = i % num_classes;
            let mut x: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
            let sign = if label < dim { 1.0 } else { -1.0 };
            x[label % dim] += sign * separation;
            (x, label)
        })
        .collect();
    Dataset::from_pairs(pairs, num_classes)
}

pub const BLOB_SIGMA: f64 = 0.35;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = make_synthetic_dataset(100, 2, 2, 2.0, 7).unwrap();
        let b = make_synthetic_dataset(100, 2, 2, 2.0, 7).unwrap();
        let c = make_synthetic_dataset(100, 2, 2, 2.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 100);
        assert_eq!(a.samples().iter().filter(|s| s.label == 1).count(), 50);
        assert!(make_synthetic_dataset(0, 2, 2, 2.0, 7).is_err());
        assert!(make_synthetic_dataset(10, 1, 3, 2.0, 7).is_err());
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let d = make_synthetic_dataset(23, 3, 3, 1.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = d.shuffled_batches(5, &mut rng).unwrap();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches[4].len(), 3);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(d.shuffled_batches(0, &mut rng).is_err());
        assert!(d.shuffled_batches(24, &mut rng).is_err());
    }

    #[test]
    fn rejects_malformed_samples() {
        assert!(Dataset::from_pairs(vec![(vec![0.0], 2)], 2).is_err());
        assert!(Dataset::from_pairs(vec![(vec![0.0], 0), (vec![0.0, 1.0], 0)], 1).is_err());
        assert!(Dataset::from_pairs(vec![(vec![f64::NAN], 0)], 1).is_err());
        let bad_ids = vec![Sample {
            id: 3,
            input: vec![0.0],
            label: 0,
        }];
        assert!(Dataset::new(bad_ids, 1).is_err());
    }
}
