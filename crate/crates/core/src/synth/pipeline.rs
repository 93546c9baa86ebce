use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde_json::Value;

use super::labeler::{extract_labels, ReportRecord};
use super::lexicon::FindingLexicon;
use super::templates::{generate_qa, TemplateSet};
use crate::corpus::{read_jsonl, BodyPart, Corpus, ImageRecord, Modality};
use crate::error::{Error, Result};

pub fn read_reports(path: &Path) -> Result<Vec<ReportRecord>> {
    read_jsonl(path)
}

fn meta_enum<T: serde::de::DeserializeOwned>(report: &ReportRecord, key: &str) -> Result<Option<T>> {
    match report.metadata.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
            Error::Integrity(format!("report `{}`: metadata `{key}`: {e}", report.report_id))
        }),
    }
}

fn meta_str(report: &ReportRecord, key: &str) -> Option<String> {
    report.metadata.get(key).and_then(Value::as_str).map(str::to_string)
}

/// Image record described by a report's metadata. Report datasets are
/// chest radiograph collections, so modality and body part default to
/// X-Ray and chest; the path defaults to `images/{image_id}.png`.
pub fn image_from_report(report: &ReportRecord) -> Result<ImageRecord> {
    Ok(ImageRecord {
        image_id: report.image_id.clone(),
        path: meta_str(report, "path").unwrap_or_else(|| format!("images/{}.png", report.image_id)),
        modality: meta_enum(report, "modality")?.unwrap_or(Modality::XRay),
        body_part: meta_enum(report, "body_part")?.unwrap_or(BodyPart::Chest),
        orientation: meta_str(report, "orientation"),
        source: report.source.clone(),
    })
}

/// Labels every report and expands the templates, in input order. Images
/// come from `images` when given, otherwise from report metadata; an image
/// shared by several reports is listed once.
pub fn synthesize(
    reports: &[ReportRecord],
    images: Option<&[ImageRecord]>,
    lexicon: &FindingLexicon,
    templates: &TemplateSet,
) -> Result<Corpus> {
    let known: Option<HashMap<&str, &ImageRecord>> =
        images.map(|imgs| imgs.iter().map(|i| (i.image_id.as_str(), i)).collect());
    let mut report_ids = HashSet::new();
    let mut seen_images = HashSet::new();
    let mut corpus = Corpus::default();
    for report in reports {
        if report.image_id.is_empty() {
            return Err(Error::Integrity(format!(
                "report `{}` has an empty image_id",
                report.report_id
            )));
        }
        if !report_ids.insert(report.report_id.as_str()) {
            return Err(Error::Integrity(format!(
                "duplicate report_id `{}`",
                report.report_id
            )));
        }
        let image = match &known {
            Some(index) => (*index.get(report.image_id.as_str()).ok_or_else(|| {
                Error::Integrity(format!(
                    "report `{}` references unknown image `{}`",
                    report.report_id, report.image_id
                ))
            })?)
            .clone(),
            None => image_from_report(report)?,
        };
        let labels = extract_labels(report, lexicon);
        corpus.pairs.extend(generate_qa(
            &image,
            &labels,
            &templates.templates,
            lexicon,
            &report.report_id,
        ));
        if seen_images.insert(image.image_id.clone()) {
            corpus.images.push(image);
        }
    }
    Ok(corpus)
}
