use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labeler::{FindingState, LabelSet};
use super::lexicon::FindingLexicon;
use crate::corpus::{AnswerType, ImageRecord, Language, Provenance, QaPair};
use crate::error::{Error, Result};

const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.json");

const SLOTS: [&str; 4] = ["finding", "body_part", "modality", "orientation"];

/// How a template derives its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerRule {
    /// One question per finding: "Yes" when Positive, "No" when Negative.
    Presence,
    Modality,
    BodyPart,
    /// Only for images with a recorded orientation.
    Orientation,
    /// Canonical name of the single Positive finding.
    Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTemplate {
    pub template_id: String,
    /// Pattern with `{finding}`, `{body_part}`, `{modality}`, `{orientation}` slots.
    pub question: String,
    pub answer_type: AnswerType,
    pub rule: AnswerRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: Vec<QaTemplate>,
}

fn slots(pattern: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Config(format!("unclosed slot in `{pattern}`")))?;
        out.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    Ok(out)
}

impl QaTemplate {
    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| Error::Config(format!("template `{}`: {m}", self.template_id));
        if self.template_id.is_empty() || self.question.trim().is_empty() {
            return Err(ctx("needs an id and a question".into()));
        }
        for slot in slots(&self.question)? {
            if !SLOTS.contains(&slot) {
                return Err(ctx(format!("unknown slot {{{slot}}}")));
            }
            if slot == "finding" && self.rule != AnswerRule::Presence {
                return Err(ctx("{finding} is only resolvable in presence templates".into()));
            }
            if slot == "orientation" && self.rule != AnswerRule::Orientation {
                return Err(ctx("{orientation} is only resolvable in orientation templates".into()));
            }
        }
        let closed = self.rule == AnswerRule::Presence;
        if closed != (self.answer_type == AnswerType::Closed) {
            return Err(ctx("presence templates are CLOSED and all others OPEN".into()));
        }
        Ok(())
    }

    fn render(&self, image: &ImageRecord, finding: Option<&str>) -> String {
        let mut q = self
            .question
            .replace("{modality}", image.modality.as_str())
            .replace("{body_part}", image.body_part.as_str());
        if let Some(o) = &image.orientation {
            q = q.replace("{orientation}", o);
        }
        if let Some(f) = finding {
            q = q.replace("{finding}", f);
        }
        q
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TEMPLATES).expect("builtin templates are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.templates {
            t.validate()?;
            if !seen.insert(t.template_id.as_str()) {
                return Err(Error::Config(format!("duplicate template id `{}`", t.template_id)));
            }
        }
        Ok(())
    }
}

/// Expands every applicable template for one labelled image. Pair ids are
/// `{prefix}:{template_id}` with `:{finding_id}` appended for presence
/// templates.
pub fn generate_qa(
    image: &ImageRecord,
    labels: &LabelSet,
    templates: &[QaTemplate],
    lexicon: &FindingLexicon,
    id_prefix: &str,
) -> Vec<QaPair> {
    debug_assert_eq!(labels.image_id, image.image_id);
    let pair = |t: &QaTemplate, id: String, question: String, answer: String| QaPair {
        pair_id: id,
        image_id: image.image_id.clone(),
        question,
        answer,
        q_lang: Language::En,
        answer_type: t.answer_type,
        provenance: Provenance::synthesized(&t.template_id),
    };
    let mut out = Vec::new();
    for t in templates {
        let base = format!("{id_prefix}:{}", t.template_id);
        match t.rule {
            AnswerRule::Presence => {
                for (fid, finding) in &lexicon.findings {
                    let answer = match labels.state(fid) {
                        FindingState::Positive => "Yes",
                        FindingState::Negative => "No",
                        FindingState::Uncertain | FindingState::Unmentioned => continue,
                    };
                    out.push(pair(
                        t,
                        format!("{base}:{fid}"),
                        t.render(image, Some(&finding.canonical_name)),
                        answer.into(),
                    ));
                }
            }
            AnswerRule::Modality => out.push(pair(
                t,
                base,
                t.render(image, None),
                image.modality.as_str().into(),
            )),
            AnswerRule::BodyPart => out.push(pair(
                t,
                base,
                t.render(image, None),
                image.body_part.as_str().into(),
            )),
            AnswerRule::Orientation => {
                if let Some(o) = &image.orientation {
                    out.push(pair(t, base, t.render(image, None), o.clone()));
                }
            }
            AnswerRule::Diagnosis => {
                let mut positives = labels.positives();
                if let (Some(only), None) = (positives.next(), positives.next()) {
                    if let Some(f) = lexicon.findings.get(only) {
                        out.push(pair(t, base, t.render(image, None), f.canonical_name.clone()));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BodyPart, Modality};
    use std::collections::BTreeMap;

    fn chest() -> ImageRecord {
        ImageRecord {
            image_id: "img".into(),
            path: "images/img.png".into(),
            modality: Modality::XRay,
            body_part: BodyPart::Chest,
            orientation: None,
            source: "test".into(),
        }
    }

    fn labels(pairs: &[(&str, FindingState)]) -> LabelSet {
        let lex = FindingLexicon::builtin();
        let mut states: BTreeMap<String, FindingState> = lex
            .finding_ids()
            .map(|id| (id.to_string(), FindingState::Unmentioned))
            .collect();
        for (id, s) in pairs {
            states.insert(id.to_string(), *s);
        }
        LabelSet {
            image_id: "img".into(),
            states,
        }
    }

    fn qa(pairs: &[QaPair]) -> Vec<(&str, &str)> {
        pairs
            .iter()
            .map(|p| (p.question.as_str(), p.answer.as_str()))
            .collect()
    }

    #[test]
    fn pneumonia_positive_chest_xray() {
        let set = TemplateSet::builtin();
        let out = generate_qa(
            &chest(),
            &labels(&[("pneumonia", FindingState::Positive)]),
            &set.templates,
            &FindingLexicon::builtin(),
            "r1",
        );
        let qa = qa(&out);
        assert!(qa.contains(&("Does the picture contain pneumonia?", "Yes")));
        assert!(qa.contains(&("What modality is used to take this image?", "X-Ray")));
        assert!(qa.contains(&("What disease is visible in this image?", "pneumonia")));
        assert!(out.iter().all(|p| p.provenance.template_id.is_some()));
    }

    #[test]
    fn unmentioned_gives_metadata_questions_only() {
        let set = TemplateSet::builtin();
        let out = generate_qa(&chest(), &labels(&[]), &set.templates, &FindingLexicon::builtin(), "r");
        let ids: Vec<_> = out
            .iter()
            .map(|p| p.provenance.template_id.as_deref().unwrap())
            .collect();
        assert_eq!(ids, vec!["modality", "body_part"]);
    }

    #[test]
    fn uncertain_emits_nothing_and_two_positives_no_diagnosis() {
        let set = TemplateSet::builtin();
        let out = generate_qa(
            &chest(),
            &labels(&[
                ("effusion", FindingState::Uncertain),
                ("edema", FindingState::Positive),
                ("fracture", FindingState::Positive),
                ("pneumothorax", FindingState::Negative),
            ]),
            &set.templates,
            &FindingLexicon::builtin(),
            "r",
        );
        let qa = qa(&out);
        assert!(!qa.iter().any(|(q, _)| q.contains("pleural effusion")));
        assert!(qa.contains(&("Does the picture contain pneumothorax?", "No")));
        assert!(!qa.iter().any(|(q, _)| q.starts_with("What disease")));
        assert_eq!(out.len(), 3 + 2);
    }

    #[test]
    fn orientation_slot() {
        let mut img = chest();
        img.orientation = Some("PA".into());
        let set = TemplateSet::builtin();
        let out = generate_qa(&img, &labels(&[]), &set.templates, &FindingLexicon::builtin(), "r");
        assert!(qa(&out).contains(&("In what plane is this X-Ray image taken?", "PA")));
    }

    #[test]
    fn bad_templates_rejected() {
        let bad = r#"{"templates":[{"template_id":"x","question":"Is {finding} here?","answer_type":"OPEN","rule":"modality"}]}"#;
        assert!(TemplateSet::from_json(bad).is_err());
        let bad = r#"{"templates":[{"template_id":"x","question":"{colour}?","answer_type":"OPEN","rule":"modality"}]}"#;
        assert!(TemplateSet::from_json(bad).is_err());
    }
}
