use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MRI", alias = "MR")]
    Mri,
    #[serde(rename = "X-Ray", alias = "XRay", alias = "X-ray", alias = "XR")]
    XRay,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
            Modality::XRay => "X-Ray",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Head,
    Neck,
    Chest,
    #[serde(alias = "abdominal")]
    Abdomen,
    #[serde(alias = "pelvic cavity", alias = "pelvic")]
    Pelvis,
    Other,
}

impl BodyPart {
    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::Head => "head",
            BodyPart::Neck => "neck",
            BodyPart::Chest => "chest",
            BodyPart::Abdomen => "abdomen",
            BodyPart::Pelvis => "pelvis",
            BodyPart::Other => "other",
        }
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One radiology image listed in `images.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Relative to the corpus root.
    pub path: String,
    pub modality: Modality,
    pub body_part: BodyPart,
    #[serde(default)]
    pub orientation: Option<String>,
    #[serde(default)]
    pub source: String,
}

impl ImageRecord {
    /// Stratum key used for image-level splitting.
    pub fn stratum(&self) -> (BodyPart, Modality) {
        (self.body_part, self.modality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerType {
    Open,
    Closed,
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerType::Open => "OPEN",
            AnswerType::Closed => "CLOSED",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    #[default]
    Original,
    Synthesized,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PairSource,
    #[serde(default)]
    pub template_id: Option<String>,
}

impl Provenance {
    pub fn synthesized(template_id: impl Into<String>) -> Self {
        Self {
            source: PairSource::Synthesized,
            template_id: Some(template_id.into()),
        }
    }
}

/// One (image, question, answer) example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub pair_id: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    pub q_lang: Language,
    pub answer_type: AnswerType,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Case-insensitive, whitespace-normalized form used for every answer comparison.
pub fn normalize_answer(answer: &str) -> String {
    answer
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn is_yes_no(answer: &str) -> bool {
    matches!(normalize_answer(answer).as_str(), "yes" | "no")
}
