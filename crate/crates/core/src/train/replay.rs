use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Pool of past generated images, one per slot (`[1, C, H, W]`).
///
/// Until full, every query is stored and returned unchanged. Once full, a
/// query returns a random stored image (replaced by the fresh one) with
/// probability 1/2, otherwise the fresh image.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T: Real = f64> {
    pub capacity: usize,
    pub images: Vec<Tensor<T>>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, images: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Returns the image to show the discriminator, and whether it came from the pool.
    pub fn query<R: Rng + ?Sized>(&mut self, fresh: Tensor<T>, rng: &mut R) -> (Tensor<T>, bool) {
        if self.capacity == 0 {
            return (fresh, false);
        }
        if self.images.len() < self.capacity {
            self.images.push(fresh.clone());
            return (fresh, false);
        }
        if rng.random_bool(0.5) {
            let k = rng.random_range(0..self.images.len());
            let old = std::mem::replace(&mut self.images[k], fresh);
            (old, true)
        } else {
            (fresh, false)
        }
    }

    /// Applies [`ReplayBuffer::query`] to every item of a batch.
    pub fn query_batch<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Tensor<T> {
        let items: Vec<Tensor<T>> =
            (0..batch.shape()[0]).map(|n| self.query(batch.batch_item(n).expect("index in range"), rng).0).collect();
        Tensor::stack_batch(&items).expect("items share a shape")
    }
}
