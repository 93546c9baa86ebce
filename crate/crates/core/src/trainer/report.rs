use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CURVES_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";
pub const TABLE_HEADER: &str = "image_encoder,text_encoder,val_accuracy,test_accuracy,best";

/// One epoch of the learning curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Accuracies of one encoder pairing, as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub image_encoder: String,
    pub text_encoder: String,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<RunSummary>,
    pub curves: Vec<CurveRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(flatten)]
    pub run: RunSummary,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<TableRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{:.2}%", x * 100.0))
}

/// Writes the learning curves as CSV; missing validation values are empty.
pub fn curves_csv(curves: &[CurveRow]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in curves {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc)
        );
    }
    out
}

/// Collects the rows of every run. Every row holding the highest test
/// accuracy is flagged as best.
pub fn compile_report(runs: &[EvalReport]) -> ReportTable {
    let rows: Vec<&RunSummary> = runs.iter().flat_map(|r| &r.rows).collect();
    let top = rows
        .iter()
        .filter_map(|r| r.test_accuracy)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    ReportTable {
        rows: rows
            .into_iter()
            .map(|run| TableRow {
                best: top.is_some() && run.test_accuracy == top,
                run: run.clone(),
            })
            .collect(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.run.image_encoder),
                csv_field(&r.run.text_encoder),
                opt(r.run.val_accuracy),
                opt(r.run.test_accuracy),
                r.best
            );
        }
        out
    }

    /// Fixed-width table with percentages; the best rows are starred.
    pub fn to_text(&self) -> String {
        let headers = ["Image Encoder", "Language Encoder", "Validation Accuracy", "Test Accuracy"];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                let mut test = percent(r.run.test_accuracy);
                if r.best {
                    test.push_str(" *");
                }
                [
                    r.run.image_encoder.clone(),
                    r.run.text_encoder.clone(),
                    percent(r.run.val_accuracy),
                    test,
                ]
            })
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: [&str; 4]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        };
        line(&mut out, headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}
