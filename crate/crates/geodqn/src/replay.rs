//! Prioritized experience replay: a bounded FIFO store whose sampling
//! distribution follows priority^alpha, with importance weights correcting
//! the induced bias.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

pub const PRIORITY_FLOOR: f64 = 1e-6;

pub struct PrioritizedReplay<T> {
    items: VecDeque<T>,
    priorities: VecDeque<f64>,
    capacity: usize,
}

/// Indices and importance weights for one sampled batch. Indices stay valid
/// until the next push.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl<T> PrioritizedReplay<T> {
    pub fn new(capacity: usize) -> Result<PrioritizedReplay<T>> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(PrioritizedReplay {
            items: VecDeque::with_capacity(capacity),
            priorities: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    pub fn priority(&self, index: usize) -> Option<f64> {
        self.priorities.get(index).copied()
    }

    /// Inserts with the maximum existing priority (1.0 into an empty
    /// buffer), evicting the oldest item at capacity.
    pub fn push(&mut self, item: T) {
        let priority = self
            .priorities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let priority = if self.items.is_empty() { 1.0 } else { priority };
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.priorities.pop_front();
        }
        self.items.push_back(item);
        self.priorities.push_back(priority);
    }

    /// P(i) = p_i^alpha / sum_j p_j^alpha over the whole buffer.
    pub fn probabilities(&self, alpha: f64) -> Vec<f64> {
        let powered: Vec<f64> = self.priorities.iter().map(|p| p.powf(alpha)).collect();
        let total: f64 = powered.iter().sum();
        powered.into_iter().map(|x| x / total).collect()
    }

    /// Draws `batch` independent indices by priority^alpha; weights are
    /// (n P(i))^{-beta} normalized so the largest possible weight is 1.
    pub fn sample(
        &self,
        batch: usize,
        alpha: f64,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<SampleBatch> {
        if self.items.len() < batch {
            return Err(Error::state(format!(
                "buffer holds {} items, cannot sample {batch}",
                self.items.len()
            )));
        }
        if batch == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        let probs = self.probabilities(alpha);
        let p_min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let x: f64 = rng.gen::<f64>() * acc;
            let idx = cumulative
                .partition_point(|&c| c <= x)
                .min(probs.len() - 1);
            indices.push(idx);
            weights.push((p_min / probs[idx]).powf(beta));
        }
        Ok(SampleBatch { indices, weights })
    }

    /// Refreshes priorities to |delta| plus a small floor keeping them
    /// positive.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::shape(format!(
                "{} indices vs {} errors",
                indices.len(),
                td_errors.len()
            )));
        }
        for (&i, &delta) in indices.iter().zip(td_errors) {
            let slot = self
                .priorities
                .get_mut(i)
                .ok_or_else(|| Error::domain(format!("replay index {i} out of range")))?;
            *slot = delta.abs() + PRIORITY_FLOOR;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn test_push_priorities_and_eviction() {
        let mut buf = PrioritizedReplay::new(2).unwrap();
        buf.push("a");
        assert_eq!(buf.priority(0), Some(1.0));
        buf.update_priorities(&[0], &[5.0]).unwrap();
        buf.push("b");
        assert_eq!(buf.priority(1), Some(5.0 + PRIORITY_FLOOR));
        buf.push("c");
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.get(0), Some(&"b"));
        assert_eq!(buf.get(1), Some(&"c"));
    }

    #[test]
    fn test_probability_formula() {
        let mut buf = PrioritizedReplay::new(4).unwrap();
        buf.push(0);
        buf.push(1);
        buf.update_priorities(&[0, 1], &[1.0 - PRIORITY_FLOOR, 3.0 - PRIORITY_FLOOR])
            .unwrap();
        let p = buf.probabilities(1.0);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
        let uniform = buf.probabilities(0.0);
        assert!((uniform[0] - 0.5).abs() < 1e-12);
        assert!((uniform[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn test_importance_weights() {
        let mut buf = PrioritizedReplay::new(4).unwrap();
        buf.push(0);
        buf.push(1);
        buf.update_priorities(&[0, 1], &[1.0 - PRIORITY_FLOOR, 3.0 - PRIORITY_FLOOR])
            .unwrap();
        let mut rng = derive_rng(3, "sample", 0);
        for _ in 0..32 {
            let batch = buf.sample(2, 1.0, 1.0, &mut rng).unwrap();
            for (&i, &w) in batch.indices.iter().zip(&batch.weights) {
                let expect = if i == 0 { 1.0 } else { 1.0 / 3.0 };
                assert!((w - expect).abs() < 1e-12, "index {i} weight {w}");
            }
            let batch = buf.sample(2, 1.0, 0.0, &mut rng).unwrap();
            assert!(batch.weights.iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn test_empirical_sampling_law() {
        let mut buf = PrioritizedReplay::new(8).unwrap();
        for i in 0..4 {
            buf.push(i);
        }
        buf.update_priorities(&[0, 1, 2, 3], &[0.5, 1.0, 2.0, 4.0])
            .unwrap();
        let mut rng = derive_rng(9, "law", 0);
        for &alpha in &[0.0, 0.6, 1.0] {
            let probs = buf.probabilities(alpha);
            let n = 100_000;
            let mut counts = [0usize; 4];
            for _ in 0..n / 4 {
                let batch = buf.sample(4, alpha, 0.4, &mut rng).unwrap();
                for &i in &batch.indices {
                    counts[i] += 1;
                }
            }
            for (i, &c) in counts.iter().enumerate() {
                let freq = c as f64 / n as f64;
                assert!(
                    (freq - probs[i]).abs() < 0.01,
                    "alpha {alpha}: index {i} freq {freq} vs {}",
                    probs[i]
                );
            }
        }
    }

    #[test]
    fn test_underfilled_and_bad_updates() {
        let mut buf = PrioritizedReplay::new(4).unwrap();
        buf.push(0);
        let mut rng = derive_rng(1, "sample", 0);
        assert!(matches!(
            buf.sample(2, 0.6, 0.4, &mut rng),
            Err(Error::State(_))
        ));
        assert!(matches!(
            buf.update_priorities(&[5], &[1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            buf.update_priorities(&[0, 1], &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(PrioritizedReplay::<i32>::new(0).is_err());
    }
}
