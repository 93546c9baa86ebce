use rand::seq::SliceRandom;

use super::split::{DatasetSplit, SplitName};
use super::types::QaPair;
use crate::error::{Error, Result};
use crate::tensor::stream_rng;

/// One epoch of shuffled mini-batches over the pairs of a split.
#[derive(Debug)]
pub struct Batches<'a> {
    pairs: &'a [QaPair],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Batches<'a> {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a QaPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.pairs[i])
            .collect();
        self.cursor = end;
        Some(batch)
    }
}

/// Batches covering each pair of `which` exactly once, ordered by `(seed, epoch)`.
/// The last batch may be short.
pub fn batches<'a>(
    pairs: &'a [QaPair],
    split: &DatasetSplit,
    which: SplitName,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let ids = split.id_set(which);
    let mut order: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| ids.contains(p.image_id.as_str()))
        .map(|(i, _)| i)
        .collect();
    let mut rng = stream_rng(seed, &format!("batches/epoch{epoch}"));
    order.shuffle(&mut rng);
    Ok(Batches {
        pairs,
        order,
        batch_size,
        cursor: 0,
    })
}
