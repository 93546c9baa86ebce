use std::collections::HashMap;
use std::path::Path;

use crate::corpus::{
    load_image_tensors, split_corpus, Corpus, DatasetSplit, ImageRecord, QaPair, SplitName,
};
use crate::encoders::ImageTensor;
use crate::error::{Error, Result};

/// A corpus with decoded images and an image-level split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub images: HashMap<String, ImageTensor>,
    pub split: DatasetSplit,
}

impl Dataset {
    /// Checks that every image referenced by a pair has a tensor.
    pub fn new(corpus: Corpus, images: HashMap<String, ImageTensor>, split: DatasetSplit) -> Result<Self> {
        if let Some(p) = corpus.pairs.iter().find(|p| !images.contains_key(&p.image_id)) {
            return Err(Error::Integrity(format!(
                "pair `{}` references image `{}` with no tensor",
                p.pair_id, p.image_id
            )));
        }
        Ok(Self {
            corpus,
            images,
            split,
        })
    }

    /// Decodes the images under `root` and splits them with `ratios`/`seed`.
    pub fn load(root: &Path, corpus: Corpus, side: usize, channels: usize, ratios: [f64; 3], seed: u64) -> Result<Self> {
        let images = load_image_tensors(root, &corpus.images, side, channels)?;
        let outcome = split_corpus(&corpus.images, ratios, seed)?;
        for w in &outcome.warnings {
            log::warn!("{w}");
        }
        Self::new(corpus, images, outcome.split)
    }

    /// Pairs whose image belongs to `which`, in corpus order.
    pub fn pairs(&self, which: SplitName) -> Vec<QaPair> {
        let ids = self.split.id_set(which);
        self.corpus
            .pairs
            .iter()
            .filter(|p| ids.contains(p.image_id.as_str()))
            .cloned()
            .collect()
    }

    pub fn image(&self, image_id: &str) -> Result<&ImageTensor> {
        self.images
            .get(image_id)
            .ok_or_else(|| Error::Integrity(format!("no tensor for image `{image_id}`")))
    }

    pub fn record_index(&self) -> HashMap<&str, &ImageRecord> {
        self.corpus.image_index()
    }
}
