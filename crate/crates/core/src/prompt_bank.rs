//! Ordered sets of feeling descriptions used as encoder prompts. The order
//! defines the semantic channel layout of every feature map downstream, so
//! each bank carries a digest that caches and checkpoints are validated
//! against.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Measurable quality factors come first in the default bank, felt
/// reactions to content second.
pub const DEFAULT_OBJECTIVE: [&str; 8] = [
    "bright", "blurry", "noisy", "colorful", "dark", "sharp", "clean", "contrast",
];
pub const DEFAULT_SUBJECTIVE: [&str; 8] = [
    "pleasant", "boring", "interesting", "exciting", "depressing", "fearful", "calm", "annoying",
];

/// Placeholder replaced by the description inside a prompt template.
pub const TEMPLATE_SLOT: &str = "<d>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionKind {
    Objective,
    Subjective,
}

impl DescriptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DescriptionKind::Objective => "objective",
            DescriptionKind::Subjective => "subjective",
        }
    }
}

impl fmt::Display for DescriptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "objective" | "obj" => Ok(DescriptionKind::Objective),
            "subjective" | "sub" => Ok(DescriptionKind::Subjective),
            other => Err(Error::Invalid(format!("unknown description kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Description {
    pub text: String,
    pub kind: DescriptionKind,
    /// Channel position in the owning bank.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBank {
    descriptions: Vec<Description>,
    template: String,
    digest: String,
}

impl PromptBank {
    /// Build a bank from `(kind, text)` pairs in channel order. Texts are
    /// trimmed and lowercased.
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = (DescriptionKind, S)>) -> Result<Self> {
        Self::with_template(entries, TEMPLATE_SLOT)
    }

    /// `template` must contain [`TEMPLATE_SLOT`], e.g. `"a <d> photo"`.
    pub fn with_template<S: AsRef<str>>(
        entries: impl IntoIterator<Item = (DescriptionKind, S)>,
        template: &str,
    ) -> Result<Self> {
        if !template.contains(TEMPLATE_SLOT) {
            return Err(Error::Invalid(format!(
                "prompt template `{template}` lacks the {TEMPLATE_SLOT} slot"
            )));
        }
        let mut descriptions = Vec::new();
        for (index, (kind, text)) in entries.into_iter().enumerate() {
            let text = text.as_ref().trim().to_lowercase();
            if text.is_empty() {
                return Err(Error::Invalid(format!("empty description at channel {index}")));
            }
            descriptions.push(Description { text, kind, index });
        }
        if descriptions.is_empty() {
            return Err(Error::Invalid("prompt bank is empty".into()));
        }
        let digest = compute_digest(&descriptions, template);
        Ok(PromptBank {
            descriptions,
            template: template.to_string(),
            digest,
        })
    }

    pub fn descriptions(&self) -> &[Description] {
        &self.descriptions
    }

    /// Number of semantic channels `r`.
    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        let text = text.trim().to_lowercase();
        self.descriptions.iter().position(|d| d.text == text)
    }

    /// Prompt strings in channel order, template applied.
    pub fn prompts(&self) -> Vec<String> {
        self.descriptions
            .iter()
            .map(|d| self.template.replace(TEMPLATE_SLOT, &d.text))
            .collect()
    }

    /// Keep only descriptions of the given kinds, order preserved and
    /// channels renumbered.
    pub fn subset(&self, kinds: &BTreeSet<DescriptionKind>) -> Result<PromptBank> {
        if kinds.is_empty() {
            return Err(Error::Invalid("subset needs at least one description kind".into()));
        }
        let kept: Vec<_> = self
            .descriptions
            .iter()
            .filter(|d| kinds.contains(&d.kind))
            .map(|d| (d.kind, d.text.clone()))
            .collect();
        if kept.is_empty() {
            let names: Vec<_> = kinds.iter().map(|k| k.as_str()).collect();
            return Err(Error::Invalid(format!(
                "subset [{}] leaves the bank empty",
                names.join(", ")
            )));
        }
        PromptBank::with_template(kept, &self.template)
    }

    pub fn with_new_template(&self, template: &str) -> Result<PromptBank> {
        PromptBank::with_template(
            self.descriptions.iter().map(|d| (d.kind, d.text.clone())),
            template,
        )
    }

    /// Parse `kind,text` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<PromptBank> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, desc) = line.split_once(',').ok_or_else(|| {
                Error::Invalid(format!("prompts line {}: expected `kind,text`", i + 1))
            })?;
            let kind: DescriptionKind = kind
                .parse()
                .map_err(|e| Error::Invalid(format!("prompts line {}: {e}", i + 1)))?;
            entries.push((kind, desc.trim().to_string()));
        }
        PromptBank::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PromptBank> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PromptBank::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        self.descriptions
            .iter()
            .map(|d| format!("{},{}\n", d.kind, d.text))
            .collect()
    }
}

/// The 16-entry default bank: objective block, then subjective block.
pub fn default_bank() -> PromptBank {
    let entries = DEFAULT_OBJECTIVE
        .iter()
        .map(|t| (DescriptionKind::Objective, *t))
        .chain(DEFAULT_SUBJECTIVE.iter().map(|t| (DescriptionKind::Subjective, *t)));
    PromptBank::new(entries).expect("default bank is valid")
}

fn compute_digest(descriptions: &[Description], template: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"clif-prompts/1\n");
    h.update(template.as_bytes());
    h.update(b"\n");
    for d in descriptions {
        h.update(d.kind.as_str().as_bytes());
        h.update(b",");
        h.update(d.text.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..16])
}
