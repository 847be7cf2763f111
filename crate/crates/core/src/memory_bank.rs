//! Category-balanced sampling: one FIFO queue per predicted class, each capped
//! at `ceil(N / C)`, and uniform random batches drawn from everything stored.
//!
//! The cap is per class, so when `C` does not divide `N` the bank can hold up
//! to `C * ceil(N / C)` samples, slightly more than the nominal capacity.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredSample {
    pub features: Vec<f64>,
    pub predicted: usize,
    /// Position in the overall insertion sequence.
    pub arrival: u64,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    queues: Vec<VecDeque<StoredSample>>,
    capacity: usize,
    per_class_cap: usize,
    arrivals: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, num_classes: usize) -> Result<Self> {
        if capacity == 0 || num_classes == 0 {
            return Err(Error::InvalidParameter("memory bank needs capacity >= 1 and classes >= 1".into()));
        }
        Ok(Self {
            queues: vec![VecDeque::new(); num_classes],
            capacity,
            per_class_cap: capacity.div_ceil(num_classes),
            arrivals: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn per_class_cap(&self) -> usize {
        self.per_class_cap
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    pub fn len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn queue(&self, class: usize) -> impl Iterator<Item = &StoredSample> {
        self.queues[class].iter()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    /// Stores `x` under its predicted class, evicting that class's oldest
    /// samples so the queue stays within the cap. Returns the evicted samples.
    pub fn insert(&mut self, x: &[f64], predicted: usize) -> Result<Vec<StoredSample>> {
        let classes = self.queues.len();
        let queue = self.queues.get_mut(predicted).ok_or(Error::InvalidClass { class: predicted, classes })?;
        let mut evicted = Vec::new();
        while queue.len() >= self.per_class_cap {
            evicted.extend(queue.pop_front());
        }
        queue.push_back(StoredSample { features: x.to_vec(), predicted, arrival: self.arrivals });
        self.arrivals += 1;
        Ok(evicted)
    }

    /// Inserts every row of `x` with its predicted class, in row order.
    pub fn insert_batch(&mut self, x: &Matrix, predicted: &[usize]) -> Result<()> {
        if predicted.len() != x.rows() {
            return Err(Error::ShapeMismatch(format!("{} predictions for {} rows", predicted.len(), x.rows())));
        }
        for (row, &y) in x.row_iter().zip(predicted) {
            self.insert(row, y)?;
        }
        Ok(())
    }

    /// `batch_size` samples drawn uniformly with replacement from all stored
    /// samples.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut RandomSource) -> Result<Vec<&StoredSample>> {
        let total = self.len();
        if total == 0 {
            return Err(Error::EmptyBank);
        }
        Ok((0..batch_size).map(|_| self.nth(rng.index(total))).collect())
    }

    /// Feature matrix of a sampled batch.
    pub fn sample_features(&self, batch_size: usize, rng: &mut RandomSource) -> Result<Matrix> {
        let samples = self.sample_batch(batch_size, rng)?;
        Matrix::from_rows(&samples.iter().map(|s| s.features.as_slice()).collect::<Vec<_>>())
    }

    fn nth(&self, mut i: usize) -> &StoredSample {
        for q in &self.queues {
            if i < q.len() {
                return &q[i];
            }
            i -= q.len();
        }
        unreachable!("index below total count")
    }
}
