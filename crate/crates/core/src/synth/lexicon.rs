use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SCOPE_WINDOW: usize = 6;

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub canonical_name: String,
    pub phrases: Vec<String>,
}

/// Finding phrases plus negation and uncertainty triggers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingLexicon {
    pub findings: BTreeMap<String, Finding>,
    pub negation_triggers: Vec<String>,
    pub uncertainty_triggers: Vec<String>,
    #[serde(default = "default_window")]
    pub scope_window: usize,
}

fn default_window() -> usize {
    DEFAULT_SCOPE_WINDOW
}

/// Lowercased alphanumeric runs. Used for report text and lexicon entries
/// alike, so phrases match regardless of punctuation and spacing.
pub fn report_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl FindingLexicon {
    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        let lex: Self = serde_json::from_str(BUILTIN_LEXICON).expect("builtin lexicon parses");
        lex.validate().expect("builtin lexicon is valid");
        lex
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lex: Self = serde_json::from_str(text)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn finding_ids(&self) -> impl Iterator<Item = &str> {
        self.findings.keys().map(String::as_str)
    }

    /// Rejects empty entries, non-lowercase phrases and any token sequence
    /// claimed by two findings or by a finding and a trigger.
    pub fn validate(&self) -> Result<()> {
        if self.findings.is_empty() {
            return Err(Error::Config("lexicon has no findings".into()));
        }
        if self.scope_window == 0 {
            return Err(Error::Config("scope_window must be at least 1".into()));
        }
        let mut owner: HashMap<Vec<String>, String> = HashMap::new();
        let mut claim = |entry: &str, who: String| -> Result<()> {
            let toks = report_tokens(entry);
            if toks.is_empty() {
                return Err(Error::Config(format!("{who}: entry `{entry}` has no tokens")));
            }
            if entry != entry.to_lowercase() {
                return Err(Error::Config(format!("{who}: entry `{entry}` is not lowercase")));
            }
            match owner.get(&toks) {
                Some(prev) if *prev != who => Err(Error::Config(format!(
                    "`{entry}` is claimed by both {prev} and {who}"
                ))),
                _ => {
                    owner.insert(toks, who);
                    Ok(())
                }
            }
        };
        for (id, f) in &self.findings {
            if f.canonical_name.trim().is_empty() || f.phrases.is_empty() {
                return Err(Error::Config(format!("finding `{id}` needs a name and phrases")));
            }
            for p in &f.phrases {
                claim(p, format!("finding `{id}`"))?;
            }
        }
        for t in &self.negation_triggers {
            claim(t, "negation triggers".into())?;
        }
        for t in &self.uncertainty_triggers {
            claim(t, "uncertainty triggers".into())?;
        }
        Ok(())
    }
}
