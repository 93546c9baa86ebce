use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::corpus::{normalize_answer, AnswerType, AnswerVocabulary, QaPair};
use crate::error::{Error, Result};
use crate::fusion::{argmax, cross_entropy_from_logits};
use crate::model::VqaModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Gold answers missing from the vocabulary (always counted as misses).
    pub oov_gold: usize,
    /// Mean cross-entropy over pairs with an in-vocabulary gold answer.
    pub loss: Option<f64>,
    pub by_answer_type: BTreeMap<AnswerType, Tally>,
    /// Keyed by `"{modality}/{body_part}"`.
    pub by_stratum: BTreeMap<String, Tally>,
}

/// Top-1 accuracy with normalized string matching.
pub fn evaluate(
    model: &VqaModel,
    answers: &AnswerVocabulary,
    pairs: &[QaPair],
    data: &Dataset,
) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::Domain("cannot evaluate zero pairs".into()));
    }
    if model.n_answers() != answers.len() {
        return Err(Error::Shape(format!(
            "model has {} outputs, vocabulary has {} answers",
            model.n_answers(),
            answers.len()
        )));
    }
    let records = data.record_index();
    let mut image_cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut text_cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut overall = Tally::default();
    let mut oov_gold = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut by_answer_type = BTreeMap::new();
    let mut by_stratum = BTreeMap::new();
    for pair in pairs {
        if !image_cache.contains_key(pair.image_id.as_str()) {
            let emb = model.encode_image(data.image(&pair.image_id)?)?;
            image_cache.insert(&pair.image_id, emb);
        }
        if !text_cache.contains_key(pair.question.as_str()) {
            let emb = model.encode_text(&model.tokenize(&pair.question))?;
            text_cache.insert(&pair.question, emb);
        }
        let logits = model.logits_from_embeddings(
            &image_cache[pair.image_id.as_str()],
            &text_cache[pair.question.as_str()],
        )?;
        let predicted = &answers.answers()[argmax(&logits)];
        let hit = match answers.lookup(&pair.answer) {
            Some(target) => {
                loss_sum += cross_entropy_from_logits(&logits, target)?.loss;
                loss_n += 1;
                normalize_answer(predicted) == normalize_answer(&pair.answer)
            }
            None => {
                oov_gold += 1;
                false
            }
        };
        overall.add(hit);
        by_answer_type
            .entry(pair.answer_type)
            .or_insert_with(Tally::default)
            .add(hit);
        let stratum = records
            .get(pair.image_id.as_str())
            .map(|r| format!("{}/{}", r.modality, r.body_part))
            .unwrap_or_else(|| "unknown".into());
        by_stratum.entry(stratum).or_insert_with(Tally::default).add(hit);
    }
    Ok(EvalResult {
        accuracy: overall.accuracy(),
        correct: overall.correct,
        total: overall.total,
        oov_gold,
        loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
        by_answer_type,
        by_stratum,
    })
}
