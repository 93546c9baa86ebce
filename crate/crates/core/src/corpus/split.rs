//! Image-level stratified train/val/test splitting.
//!
//! Images are grouped by `(body_part, modality)`. Each stratum is sorted by
//! `image_id`, shuffled with an RNG keyed by the split seed and the stratum
//! name, and cut according to largest-remainder quotas.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::types::ImageRecord;
use crate::error::{Error, Result};
use crate::tensor::stream_rng;

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Strata smaller than this go entirely to train.
pub const MIN_STRATUM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Disjoint image-id sets. Serialized as the split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn ids(&self, which: SplitName) -> &[String] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn id_set(&self, which: SplitName) -> HashSet<&str> {
        self.ids(which).iter().map(String::as_str).collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// A split plus the warnings raised while producing it.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub split: DatasetSplit,
    pub warnings: Vec<String>,
}

/// Largest-remainder apportionment of `n` items over `ratios`.
///
/// Leftover units go to the largest fractional parts; equal fractions are
/// served in train, val, test order.
pub fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| n as f64 * r);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let leftover = n.saturating_sub(assigned);
    // Fractions are compared on a 1e-9 grid so that equal ratios tie exactly.
    let mut order: Vec<usize> = vec![0, 1, 2];
    order.sort_by_key(|&i| {
        let frac = quotas[i] - quotas[i].floor();
        (std::cmp::Reverse((frac * 1e9).round() as i64), i)
    });
    for &i in order.iter().take(leftover) {
        sizes[i] += 1;
    }
    sizes
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1 (got {sum})"
        )));
    }
    Ok(())
}

pub fn split_corpus(images: &[ImageRecord], ratios: [f64; 3], seed: u64) -> Result<SplitOutcome> {
    validate_ratios(ratios)?;
    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for img in images {
        let key = format!("{}/{}", img.body_part, img.modality);
        strata.entry(key).or_default().push(&img.image_id);
    }

    let mut split = DatasetSplit {
        seed,
        ratios,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (key, mut ids) in strata {
        ids.sort_unstable();
        if ids.len() < MIN_STRATUM {
            let msg = format!(
                "stratum {key} has {} image(s) (< {MIN_STRATUM}); assigned to train",
                ids.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            split.train.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        let mut rng = stream_rng(seed, &key);
        ids.shuffle(&mut rng);
        let [n_train, n_val, _] = largest_remainder(ids.len(), ratios);
        let (train, rest) = ids.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        split.train.extend(train.iter().map(|s| s.to_string()));
        split.val.extend(val.iter().map(|s| s.to_string()));
        split.test.extend(test.iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.val.sort();
    split.test.sort();
    Ok(SplitOutcome { split, warnings })
}
