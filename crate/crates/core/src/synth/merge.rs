use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const ORIGINAL_TEMPLATE: &str = "original";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub total_pairs: usize,
    pub total_images: usize,
    pub duplicates_removed: usize,
    pub per_source: BTreeMap<String, usize>,
    pub per_answer: BTreeMap<String, usize>,
    /// Original pairs are counted under `"original"`.
    pub per_template: BTreeMap<String, usize>,
}

fn namespaced(tag: &str, id: &str) -> String {
    format!("{tag}/{id}")
}

/// Concatenates tagged corpora. Image ids, pair ids and image paths are
/// prefixed with `{tag}/`; exact (image_id, question, answer) duplicates
/// keep their first occurrence.
pub fn merge_corpora(sources: &[(String, Corpus)]) -> Result<(Corpus, SynthesisStats)> {
    let mut tags = HashSet::new();
    for (tag, _) in sources {
        if tag.is_empty() || tag.contains('/') {
            return Err(Error::Config(format!("invalid source tag `{tag}`")));
        }
        if !tags.insert(tag.as_str()) {
            return Err(Error::Config(format!("duplicate source tag `{tag}`")));
        }
    }
    let mut merged = Corpus::default();
    let mut stats = SynthesisStats::default();
    let mut triples = HashSet::new();
    let mut pair_ids = HashSet::new();
    for (tag, corpus) in sources {
        for img in &corpus.images {
            let mut img = img.clone();
            img.image_id = namespaced(tag, &img.image_id);
            img.path = namespaced(tag, &img.path);
            merged.images.push(img);
        }
        let mut kept = 0;
        for pair in &corpus.pairs {
            let mut pair = pair.clone();
            pair.image_id = namespaced(tag, &pair.image_id);
            pair.pair_id = namespaced(tag, &pair.pair_id);
            if !triples.insert((pair.image_id.clone(), pair.question.clone(), pair.answer.clone())) {
                stats.duplicates_removed += 1;
                continue;
            }
            if !pair_ids.insert(pair.pair_id.clone()) {
                return Err(Error::Integrity(format!("pair id `{}` collides", pair.pair_id)));
            }
            *stats.per_answer.entry(pair.answer.clone()).or_default() += 1;
            let template = pair
                .provenance
                .template_id
                .clone()
                .unwrap_or_else(|| ORIGINAL_TEMPLATE.to_string());
            *stats.per_template.entry(template).or_default() += 1;
            kept += 1;
            merged.pairs.push(pair);
        }
        stats.per_source.insert(tag.clone(), kept);
    }
    stats.total_pairs = merged.pairs.len();
    stats.total_images = merged.images.len();
    Ok((merged, stats))
}

impl SynthesisStats {
    /// Counts for a single corpus without namespacing or deduplication.
    pub fn of(tag: &str, corpus: &Corpus) -> Self {
        let mut stats = Self {
            total_pairs: corpus.pairs.len(),
            total_images: corpus.images.len(),
            ..Self::default()
        };
        stats.per_source.insert(tag.to_string(), corpus.pairs.len());
        for pair in &corpus.pairs {
            *stats.per_answer.entry(pair.answer.clone()).or_default() += 1;
            let template = pair.provenance.template_id.as_deref().unwrap_or(ORIGINAL_TEMPLATE);
            *stats.per_template.entry(template.to_string()).or_default() += 1;
        }
        stats
    }
}
