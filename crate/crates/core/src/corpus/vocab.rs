use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::words;
use super::types::{normalize_answer, QaPair};
use crate::error::{Error, Result};

/// Reserved answer appended by [`UnkPolicy::MapToReserved`].
pub const RESERVED_ANSWER: &str = "<unk>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnkPolicy {
    #[default]
    Reject,
    MapToReserved,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    answers: Vec<String>,
    #[serde(default)]
    unk_policy: UnkPolicy,
}

/// Bijection between answer strings and class indices.
///
/// Lookups are case-insensitive and whitespace-normalized; `answers` keeps
/// the most frequent surface form of each answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index_of: HashMap<String, usize>,
    unk_policy: UnkPolicy,
}

impl TryFrom<VocabFile> for AnswerVocabulary {
    type Error = Error;

    fn try_from(file: VocabFile) -> Result<Self> {
        AnswerVocabulary::from_answers(file.answers, file.unk_policy)
    }
}

impl From<AnswerVocabulary> for VocabFile {
    fn from(v: AnswerVocabulary) -> Self {
        VocabFile {
            answers: v.answers,
            unk_policy: v.unk_policy,
        }
    }
}

impl AnswerVocabulary {
    pub fn from_answers(answers: Vec<String>, unk_policy: UnkPolicy) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index_of = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index_of.insert(normalize_answer(a), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate answer `{a}`")));
            }
        }
        if unk_policy == UnkPolicy::MapToReserved && !index_of.contains_key(RESERVED_ANSWER) {
            return Err(Error::Vocabulary(format!(
                "map_to_reserved vocabulary lacks `{RESERVED_ANSWER}`"
            )));
        }
        Ok(Self {
            answers,
            index_of,
            unk_policy,
        })
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn unk_policy(&self) -> UnkPolicy {
        self.unk_policy
    }

    /// Index of `answer` if it is in the vocabulary, ignoring the unknown policy.
    pub fn lookup(&self, answer: &str) -> Option<usize> {
        self.index_of.get(&normalize_answer(answer)).copied()
    }

    pub fn encode(&self, answer: &str) -> Result<usize> {
        match (self.lookup(answer), self.unk_policy) {
            (Some(i), _) => Ok(i),
            (None, UnkPolicy::MapToReserved) => Ok(self.index_of[RESERVED_ANSWER]),
            (None, UnkPolicy::Reject) => Err(Error::Vocabulary(format!(
                "answer `{answer}` is not in the vocabulary"
            ))),
        }
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Builds the answer vocabulary from training pairs with the reject policy.
pub fn build_vocab(train_pairs: &[QaPair], min_freq: usize) -> Result<AnswerVocabulary> {
    build_vocab_with_policy(train_pairs, min_freq, UnkPolicy::Reject)
}

pub fn build_vocab_with_policy(
    train_pairs: &[QaPair],
    min_freq: usize,
    unk_policy: UnkPolicy,
) -> Result<AnswerVocabulary> {
    if train_pairs.is_empty() {
        return Err(Error::Domain(
            "cannot build a vocabulary from zero training pairs".into(),
        ));
    }
    // normalized answer -> (total count, surface form -> count)
    let mut groups: HashMap<String, (usize, BTreeMap<&str, usize>)> = HashMap::new();
    for pair in train_pairs {
        let entry = groups.entry(normalize_answer(&pair.answer)).or_default();
        entry.0 += 1;
        *entry.1.entry(pair.answer.trim()).or_default() += 1;
    }
    let mut ranked: Vec<(usize, String)> = groups
        .into_values()
        .filter(|(count, _)| *count >= min_freq.max(1))
        .map(|(count, forms)| {
            // BTreeMap iterates lexicographically, so max_by_key keeps the
            // last maximum; reverse to prefer the smallest form on ties.
            let surface = forms
                .iter()
                .rev()
                .max_by_key(|(_, c)| **c)
                .map(|(f, _)| f.to_string())
                .unwrap_or_default();
            (count, surface)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut answers: Vec<String> = ranked.into_iter().map(|(_, a)| a).collect();
    if answers.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if unk_policy == UnkPolicy::MapToReserved {
        answers.push(RESERVED_ANSWER.to_string());
    }
    AnswerVocabulary::from_answers(answers, unk_policy)
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word-level question vocabulary; ids 0 and 1 are padding and unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TextVocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TryFrom<Vec<String>> for TextVocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN {
            return Err(Error::Vocabulary(
                "text vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate().skip(2) {
            if ids.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate word `{w}`")));
            }
        }
        Ok(Self { words, ids })
    }
}

impl From<TextVocab> for Vec<String> {
    fn from(v: TextVocab) -> Self {
        v.words
    }
}

impl TextVocab {
    /// Words ordered by descending frequency, then lexicographically.
    pub fn build<'a>(questions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for q in questions {
            for w in words(q) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(ranked.into_iter().map(|(w, _)| w));
        Self::try_from(all).expect("reserved tokens present")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}
