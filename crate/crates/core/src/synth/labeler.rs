//! Scoped trigger matcher that assigns a state to every lexicon finding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::lexicon::{report_tokens, FindingLexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingState {
    Positive,
    Negative,
    Uncertain,
    Unmentioned,
}

impl FindingState {
    /// Higher wins when mentions disagree.
    fn priority(self) -> u8 {
        match self {
            FindingState::Unmentioned => 0,
            FindingState::Negative => 1,
            FindingState::Uncertain => 2,
            FindingState::Positive => 3,
        }
    }

    pub fn combine(self, other: Self) -> Self {
        if other.priority() > self.priority() {
            other
        } else {
            self
        }
    }

    fn from_flag(value: &Value) -> Option<Self> {
        match value {
            Value::Bool(true) => Some(FindingState::Positive),
            Value::Bool(false) => Some(FindingState::Negative),
            Value::Number(n) => match n.as_f64()? {
                1.0 => Some(FindingState::Positive),
                0.0 => Some(FindingState::Negative),
                -1.0 => Some(FindingState::Uncertain),
                _ => None,
            },
            Value::String(s) => match s.to_lowercase().as_str() {
                "positive" | "yes" | "true" => Some(FindingState::Positive),
                "negative" | "no" | "false" => Some(FindingState::Negative),
                "uncertain" => Some(FindingState::Uncertain),
                _ => None,
            },
            _ => None,
        }
    }
}

/// One radiology report tied to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub image_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub image_id: String,
    pub states: BTreeMap<String, FindingState>,
}

impl LabelSet {
    pub fn state(&self, finding_id: &str) -> FindingState {
        self.states
            .get(finding_id)
            .copied()
            .unwrap_or(FindingState::Unmentioned)
    }

    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.states
            .iter()
            .filter(|(_, s)| **s == FindingState::Positive)
            .map(|(id, _)| id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry<'a> {
    Finding(&'a str),
    Negation,
    Uncertainty,
}

struct Matcher<'a> {
    patterns: Vec<(Vec<String>, Entry<'a>)>,
}

impl<'a> Matcher<'a> {
    fn new(lex: &'a FindingLexicon) -> Self {
        let mut patterns = Vec::new();
        for (id, f) in &lex.findings {
            for p in &f.phrases {
                patterns.push((report_tokens(p), Entry::Finding(id)));
            }
        }
        for t in &lex.negation_triggers {
            patterns.push((report_tokens(t), Entry::Negation));
        }
        for t in &lex.uncertainty_triggers {
            patterns.push((report_tokens(t), Entry::Uncertainty));
        }
        Self { patterns }
    }

    /// Left-to-right scan taking the longest entry at each position.
    fn scan(&self, tokens: &[String]) -> Vec<(Entry<'a>, usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let best = self
                .patterns
                .iter()
                .filter(|(p, _)| tokens[i..].starts_with(p))
                .max_by_key(|(p, _)| p.len());
            match best {
                Some((p, entry)) => {
                    out.push((*entry, i, i + p.len()));
                    i += p.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', ';', '\n'])
}

/// States from report text alone.
///
/// Each finding mention takes the state of the nearest negation or
/// uncertainty trigger ending at most `scope_window - 1` tokens before it in
/// the same sentence, otherwise Positive. Mentions are combined with
/// Positive > Uncertain > Negative.
pub fn label_text(text: &str, lexicon: &FindingLexicon) -> BTreeMap<String, FindingState> {
    let matcher = Matcher::new(lexicon);
    let mut states: BTreeMap<String, FindingState> = lexicon
        .finding_ids()
        .map(|id| (id.to_string(), FindingState::Unmentioned))
        .collect();
    for sentence in sentences(text) {
        let tokens = report_tokens(sentence);
        let matches = matcher.scan(&tokens);
        for &(entry, start, _) in &matches {
            let Entry::Finding(id) = entry else { continue };
            let governing = matches
                .iter()
                .filter(|(e, _, end)| {
                    !matches!(e, Entry::Finding(_))
                        && *end <= start
                        && start - end < lexicon.scope_window
                })
                .max_by_key(|(_, _, end)| *end);
            let state = match governing {
                Some((Entry::Negation, ..)) => FindingState::Negative,
                Some((Entry::Uncertainty, ..)) => FindingState::Uncertain,
                _ => FindingState::Positive,
            };
            let slot = states.get_mut(id).expect("finding from lexicon");
            *slot = slot.combine(state);
        }
    }
    states
}

/// Labels a report. Metadata keys naming a lexicon finding override the text
/// state; accepted values are booleans, 1/0/-1 and
/// "positive"/"negative"/"uncertain".
pub fn extract_labels(report: &ReportRecord, lexicon: &FindingLexicon) -> LabelSet {
    let mut states = label_text(&report.text, lexicon);
    for (key, value) in &report.metadata {
        if let (Some(slot), Some(flag)) = (states.get_mut(key), FindingState::from_flag(value)) {
            *slot = flag;
        }
    }
    LabelSet {
        image_id: report.image_id.clone(),
        states,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states(text: &str) -> BTreeMap<String, FindingState> {
        label_text(text, &FindingLexicon::builtin())
    }

    #[test]
    fn negated_pneumonia() {
        assert_eq!(states("No evidence of pneumonia.")["pneumonia"], FindingState::Negative);
    }

    #[test]
    fn empty_text_is_unmentioned() {
        assert!(states("").values().all(|s| *s == FindingState::Unmentioned));
    }

    #[test]
    fn uncertain_and_positive() {
        let s = states("Possible pleural effusion. There is a calcified granuloma.");
        assert_eq!(s["effusion"], FindingState::Uncertain);
        assert_eq!(s["calcified_granuloma"], FindingState::Positive);
    }

    #[test]
    fn scope_is_bounded() {
        // six tokens between trigger and phrase: out of scope
        let s = states("No acute bony abnormality in left lung pneumothorax");
        assert_eq!(s["pneumothorax"], FindingState::Positive);
        let s = states("No acute abnormality in left lung pneumothorax");
        assert_eq!(s["pneumothorax"], FindingState::Negative);
    }

    #[test]
    fn sentence_boundary_stops_scope() {
        let s = states("No acute disease; pneumothorax on the right");
        assert_eq!(s["pneumothorax"], FindingState::Positive);
    }

    #[test]
    fn positive_wins_conflicts() {
        let s = states("No effusion. Small effusion on the left.");
        assert_eq!(s["effusion"], FindingState::Positive);
        let s = states("No effusion. Possible effusion.");
        assert_eq!(s["effusion"], FindingState::Uncertain);
    }

    #[test]
    fn metadata_overrides_text() {
        let mut metadata = BTreeMap::new();
        metadata.insert("pneumonia".to_string(), Value::Bool(true));
        metadata.insert("unrelated".to_string(), Value::Bool(true));
        let report = ReportRecord {
            report_id: "r".into(),
            image_id: "i".into(),
            text: "No pneumonia.".into(),
            metadata,
            source: "t".into(),
        };
        let labels = extract_labels(&report, &FindingLexicon::builtin());
        assert_eq!(labels.state("pneumonia"), FindingState::Positive);
        assert_eq!(labels.states.len(), 14);
    }
}
