use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Component, Path};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{is_yes_no, AnswerType, ImageRecord, Language, PairSource, QaPair};
use crate::encoders::ImageTensor;
use crate::error::{Error, Result};

pub const QA_FILE: &str = "qa.jsonl";
pub const IMAGES_FILE: &str = "images.jsonl";

/// Images plus the QA pairs that reference them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub images: Vec<ImageRecord>,
    pub pairs: Vec<QaPair>,
}

impl Corpus {
    pub fn image_index(&self) -> HashMap<&str, &ImageRecord> {
        self.images
            .iter()
            .map(|img| (img.image_id.as_str(), img))
            .collect()
    }

    /// Writes `qa.jsonl` and `images.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(IMAGES_FILE), &self.images)?;
        write_jsonl(&dir.join(QA_FILE), &self.pairs)?;
        Ok(())
    }
}

/// Reads one JSON value per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::CorpusNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `qa.jsonl` (required) and `images.jsonl` (optional when the QA file
/// is empty) from `root` and validates referential integrity.
pub fn load_corpus(root: &Path, language_filter: Option<Language>) -> Result<Corpus> {
    if !root.is_dir() {
        return Err(Error::CorpusNotFound(root.to_path_buf()));
    }
    let qa_path = root.join(QA_FILE);
    if !qa_path.is_file() {
        return Err(Error::CorpusNotFound(qa_path));
    }
    let images_path = root.join(IMAGES_FILE);
    let images: Vec<ImageRecord> = if images_path.is_file() {
        read_jsonl(&images_path)?
    } else {
        Vec::new()
    };
    let mut pairs: Vec<QaPair> = read_jsonl(&qa_path)?;
    if let Some(lang) = language_filter {
        pairs.retain(|p| p.q_lang == lang);
    }
    let corpus = Corpus { images, pairs };
    validate_corpus(&corpus)?;
    Ok(corpus)
}

/// Checks the record-level invariants of a corpus.
pub fn validate_corpus(corpus: &Corpus) -> Result<()> {
    let mut ids = HashSet::new();
    for img in &corpus.images {
        if img.image_id.is_empty() {
            return Err(Error::Integrity("image with empty image_id".into()));
        }
        if !ids.insert(img.image_id.as_str()) {
            return Err(Error::Integrity(format!(
                "duplicate image_id `{}`",
                img.image_id
            )));
        }
        if !is_contained_relative(&img.path) {
            return Err(Error::Integrity(format!(
                "image `{}` path `{}` does not resolve under the corpus root",
                img.image_id, img.path
            )));
        }
    }
    for pair in &corpus.pairs {
        if !ids.contains(pair.image_id.as_str()) {
            return Err(Error::Integrity(format!(
                "pair `{}` references unknown image `{}`",
                pair.pair_id, pair.image_id
            )));
        }
        if pair.question.trim().is_empty() || pair.answer.trim().is_empty() {
            return Err(Error::Integrity(format!(
                "pair `{}` has an empty question or answer",
                pair.pair_id
            )));
        }
        if pair.answer_type == AnswerType::Closed && !is_yes_no(&pair.answer) {
            return Err(Error::Integrity(format!(
                "closed pair `{}` has non yes/no answer `{}`",
                pair.pair_id, pair.answer
            )));
        }
        if pair.provenance.source == PairSource::Synthesized
            && pair.provenance.template_id.is_none()
        {
            return Err(Error::Integrity(format!(
                "synthesized pair `{}` has no template_id",
                pair.pair_id
            )));
        }
    }
    Ok(())
}

fn is_contained_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Decodes every image of the corpus into model-ready tensors.
pub fn load_image_tensors(
    root: &Path,
    images: &[ImageRecord],
    side: usize,
    channels: usize,
) -> Result<HashMap<String, ImageTensor>> {
    let mut out = HashMap::with_capacity(images.len());
    for img in images {
        let bytes = fs::read(root.join(&img.path)).map_err(|e| {
            Error::Image(format!("cannot read `{}`: {e}", root.join(&img.path).display()))
        })?;
        let tensor = ImageTensor::decode(&bytes, side, channels)?;
        out.insert(img.image_id.clone(), tensor);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert!(is_contained_relative("images/a.png"));
        assert!(is_contained_relative("./images/a.png"));
        assert!(!is_contained_relative("../a.png"));
        assert!(!is_contained_relative("/etc/passwd"));
        assert!(!is_contained_relative(""));
    }
}
