//! Momentum encoder and key queue.

use super::TrainError;
use crate::encoder::{EncoderParams, Scalar};

/// Key encoder parameters plus a FIFO ring buffer of past keys.
#[derive(Debug, Clone, PartialEq)]
pub struct MoCoState {
    pub momentum_params: EncoderParams<f32>,
    pub momentum: f64,
    capacity: usize,
    dim: usize,
    queue: Vec<f64>,
    ptr: usize,
    filled: usize,
}

impl MoCoState {
    pub fn new(online: &EncoderParams<f32>, capacity: usize, momentum: f64) -> Self {
        Self {
            momentum_params: online.clone(),
            momentum,
            capacity,
            dim: online.dim,
            queue: vec![0.0; capacity * online.dim],
            ptr: 0,
            filled: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ptr(&self) -> usize {
        self.ptr
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    /// The valid keys, row-major. Rows are written from index 0 upwards, so
    /// the first `filled` rows are exactly the valid ones.
    pub fn keys(&self) -> &[f64] {
        &self.queue[..self.filled * self.dim]
    }

    /// Valid keys from oldest to newest.
    pub fn keys_oldest_first(&self) -> Vec<&[f64]> {
        let rows: Vec<&[f64]> = self.keys().chunks_exact(self.dim.max(1)).collect();
        if self.filled < self.capacity {
            rows
        } else {
            rows[self.ptr..].iter().chain(&rows[..self.ptr]).copied().collect()
        }
    }

    /// Writes `keys` at the pointer with wraparound, overwriting the oldest
    /// entries once full.
    pub fn queue_push(&mut self, keys: &[Vec<f64>]) -> Result<(), TrainError> {
        if keys.len() > self.capacity {
            return Err(TrainError::BatchExceedsQueue {
                batch: keys.len(),
                capacity: self.capacity,
            });
        }
        let h = self.dim;
        for k in keys {
            if k.len() != h {
                return Err(TrainError::Shape(format!("key of dim {} for queue of dim {h}", k.len())));
            }
            self.queue[self.ptr * h..(self.ptr + 1) * h].copy_from_slice(k);
            self.ptr = (self.ptr + 1) % self.capacity;
        }
        self.filled = (self.filled + keys.len()).min(self.capacity);
        Ok(())
    }

    /// Adds embedding rows after a vocabulary extension, copied from the
    /// online encoder.
    pub fn grow_vocab(&mut self, online: &EncoderParams<f32>) {
        let h = self.dim;
        let from = self.momentum_params.vocab_size;
        self.momentum_params
            .embed
            .extend_from_slice(&online.embed[from * h..online.vocab_size * h]);
        self.momentum_params.vocab_size = online.vocab_size;
    }
}

/// `θₖ ← m·θₖ + (1−m)·θ_q`, elementwise, computed in f64.
pub fn momentum_update<T: Scalar>(key: &mut EncoderParams<T>, online: &EncoderParams<T>, m: f64) {
    assert_eq!(key.embed.len(), online.embed.len(), "parameter shapes differ");
    let mix = |k: &mut [T], q: &[T]| {
        for (a, &b) in k.iter_mut().zip(q) {
            let (af, bf) = (a.to_f64().unwrap_or(f64::NAN), b.to_f64().unwrap_or(f64::NAN));
            *a = T::from_f64(m * af + (1.0 - m) * bf).unwrap_or_else(T::nan);
        }
    };
    mix(&mut key.embed, &online.embed);
    mix(&mut key.proj, &online.proj);
    mix(&mut key.bias, &online.bias);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(k: usize) -> MoCoState {
        MoCoState::new(&EncoderParams::init(3, 2, 0), k, 0.999)
    }

    fn key(x: f64) -> Vec<f64> {
        vec![x, -x]
    }

    #[test]
    fn push_counts_and_wraps() {
        let mut s = state(4);
        s.queue_push(&[key(1.0), key(2.0)]).unwrap();
        s.queue_push(&[key(3.0), key(4.0)]).unwrap();
        assert_eq!((s.filled(), s.ptr()), (4, 0));
        s.queue_push(&[key(5.0), key(6.0)]).unwrap();
        let order: Vec<f64> = s.keys_oldest_first().iter().map(|k| k[0]).collect();
        assert_eq!(order, vec![3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(
            s.queue_push(&vec![key(0.0); 5]),
            Err(TrainError::BatchExceedsQueue { batch: 5, capacity: 4 })
        ));
    }

    #[test]
    fn momentum_cases() {
        let online = EncoderParams::<f64>::init(4, 3, 1);
        let mut key = EncoderParams::<f64>::init(4, 3, 2);
        let before = key.clone();
        momentum_update(&mut key, &online, 1.0);
        assert_eq!(key, before);
        momentum_update(&mut key, &online, 0.0);
        assert_eq!(key, online);

        let mut k = EncoderParams::<f64>::init(1, 1, 0);
        let mut q = k.clone();
        k.embed[0] = 1.0;
        q.embed[0] = 0.0;
        momentum_update(&mut k, &q, 0.9);
        assert_eq!(k.embed[0], 0.9);
    }
}
