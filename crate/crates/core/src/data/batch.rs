//! Mini-batch iteration over a [`Dataset`].

use std::marker::PhantomData;

use crate::data::{Dataset, Pipeline};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One epoch of batches. Yields `([B, 3, H', W'], labels)`.
pub struct Batches<'a, T> {
    ds: &'a Dataset,
    pipeline: &'a Pipeline,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    drop_last: bool,
    augment: Rng,
    _scalar: PhantomData<T>,
}

/// Batches for one epoch. With `shuffle` the sample order is a seeded
/// permutation and random transforms draw from a stream derived from the
/// same generator; without it samples come in dataset order.
pub fn batches<'a, T: Scalar>(
    ds: &'a Dataset,
    pipeline: &'a Pipeline,
    batch_size: usize,
    shuffle: Option<Rng>,
    drop_last: bool,
) -> Result<Batches<'a, T>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let augment = match shuffle {
        Some(mut rng) => {
            let augment = rng.derive("augment");
            rng.shuffle(&mut order);
            augment
        }
        None => Rng::new(0).derive("augment"),
    };
    Ok(Batches {
        ds,
        pipeline,
        order,
        pos: 0,
        batch_size,
        drop_last,
        augment,
        _scalar: PhantomData,
    })
}

impl<T> Batches<'_, T> {
    /// Sample indices in the order they will be served.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        let n = self.order.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

impl<T: Scalar> Batches<'_, T> {
    fn assemble(&mut self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut data = Vec::new();
        let mut shape = None;
        for &i in idx {
            let img = self.pipeline.apply(&self.ds.image::<T>(i), &mut self.augment)?;
            match &shape {
                None => shape = Some(img.shape().to_vec()),
                Some(s) if s.as_slice() != img.shape() => {
                    return Err(Error::InvalidTransform(format!(
                        "pipeline produced mixed sizes {s:?} and {:?}",
                        img.shape()
                    )))
                }
                _ => {}
            }
            data.extend(img.into_data());
        }
        let mut full = vec![idx.len()];
        full.extend(shape.expect("non-empty batch"));
        let labels = idx.iter().map(|&i| self.ds.labels()[i]).collect();
        Ok((Tensor::from_vec(&full, data)?, labels))
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Result<(Tensor<T>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let end = self.pos + remaining.min(self.batch_size);
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.assemble(&idx))
    }
}
