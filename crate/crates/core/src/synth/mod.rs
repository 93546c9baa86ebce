//! Rule-based QA synthesis from radiology reports.
//!
//! Reports are labelled with a scoped negation/uncertainty matcher over a
//! finding lexicon, then question templates are expanded against the labels
//! and the image metadata. Synthesized corpora can be merged with existing
//! ones under namespaced ids.

mod labeler;
mod lexicon;
mod merge;
mod pipeline;
mod templates;

pub use labeler::{extract_labels, label_text, sentences, FindingState, LabelSet, ReportRecord};
pub use lexicon::{report_tokens, Finding, FindingLexicon, DEFAULT_SCOPE_WINDOW};
pub use merge::{merge_corpora, SynthesisStats, ORIGINAL_TEMPLATE};
pub use pipeline::{image_from_report, read_reports, synthesize};
pub use templates::{generate_qa, AnswerRule, QaTemplate, TemplateSet};
