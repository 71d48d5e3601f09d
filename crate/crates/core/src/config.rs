//! Run configuration. The file format is TOML, so both `[section]` tables
//! and flat `section.key = value` lines work. Unknown keys are rejected and
//! every default is materialized when the effective config is echoed.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset_io::TemporalSpec;
use crate::probe::DistortionKind;
use crate::prompt_bank::{default_bank, DescriptionKind, PromptBank, TEMPLATE_SLOT};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub prompts: PromptsConfig,
    pub sfe: SfeConfig,
    pub spatial: SpatialConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderBackend {
    Pretrained,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backend: EncoderBackend,
    pub image_model: Option<PathBuf>,
    pub text_model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub logit_scale: f64,
    pub mock_seed: u64,
    pub mock_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsConfig {
    /// `kind,text` file replacing the default bank.
    pub path: Option<PathBuf>,
    pub kinds: Vec<DescriptionKind>,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfeConfig {
    pub enabled: bool,
    pub grid: GridSpec,
    pub frames: FrameSelection,
    /// Columns the semantic map is resampled to before the temporal MLP.
    pub t_fix: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Stub,
    Tiny,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub enabled: bool,
    pub grid_f: usize,
    pub patch: usize,
    pub frames: usize,
    pub backbone: BackboneKind,
    pub weights_path: Option<PathBuf>,
    /// Backbone output channels `C`.
    pub channels: usize,
    /// Hidden width of the tiny backbone's patch MLP.
    pub tiny_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr_backbone: f64,
    pub lr_other: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub head_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub splits: usize,
    pub train_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub description: String,
    pub kind: DistortionKind,
    pub levels: Vec<f64>,
    /// Banks compared by `probe compare`: `all`, `objective`, `subjective`.
    pub banks: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            prompts: PromptsConfig::default(),
            sfe: SfeConfig::default(),
            spatial: SpatialConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backend: EncoderBackend::Mock,
            image_model: None,
            text_model: None,
            vocab: None,
            logit_scale: crate::encoder::DEFAULT_LOGIT_SCALE,
            mock_seed: 0,
            mock_dim: 512,
        }
    }
}

impl Default for PromptsConfig {
    fn default() -> Self {
        PromptsConfig {
            path: None,
            kinds: vec![DescriptionKind::Objective, DescriptionKind::Subjective],
            template: TEMPLATE_SLOT.to_string(),
        }
    }
}

impl Default for SfeConfig {
    fn default() -> Self {
        SfeConfig {
            enabled: true,
            grid: GridSpec { rows: 3, cols: 3 },
            frames: FrameSelection::All,
            t_fix: 32,
            hidden: 64,
        }
    }
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            enabled: true,
            grid_f: 7,
            patch: 32,
            frames: 16,
            backbone: BackboneKind::Tiny,
            weights_path: None,
            channels: 64,
            tiny_hidden: 16,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            lr_backbone: 7.5e-5,
            lr_other: 7.5e-4,
            batch: 12,
            epochs: 50,
            weight_decay: 0.05,
            head_hidden: 64,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            splits: 10,
            train_frac: 0.8,
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            description: "bright".into(),
            kind: DistortionKind::Brightness,
            levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            banks: vec!["all".into(), "objective".into(), "subjective".into()],
        }
    }
}

/// Block grid `rows × cols`, written `"3x3"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("grid `{s}` is not of the form MxN"));
        let (m, n) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: usize = m.trim().parse().map_err(|_| bad())?;
        let cols: usize = n.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid `{s}` needs positive counts")));
        }
        Ok(GridSpec { rows, cols })
    }
}

impl TryFrom<String> for GridSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Which frames feed the semantic branch: `"all"` or a uniform count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FrameSelectionRaw", into = "FrameSelectionRaw")]
pub enum FrameSelection {
    All,
    Uniform(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FrameSelectionRaw {
    Count(u64),
    Name(String),
}

impl TryFrom<FrameSelectionRaw> for FrameSelection {
    type Error = Error;

    fn try_from(raw: FrameSelectionRaw) -> Result<Self> {
        match raw {
            FrameSelectionRaw::Count(0) => Err(Error::Config("sfe.frames must be >= 1".into())),
            FrameSelectionRaw::Count(n) => Ok(FrameSelection::Uniform(n as usize)),
            FrameSelectionRaw::Name(s) if s == "all" => Ok(FrameSelection::All),
            FrameSelectionRaw::Name(s) => Err(Error::Config(format!(
                "sfe.frames must be \"all\" or a positive count, got `{s}`"
            ))),
        }
    }
}

impl From<FrameSelection> for FrameSelectionRaw {
    fn from(f: FrameSelection) -> Self {
        match f {
            FrameSelection::All => FrameSelectionRaw::Name("all".into()),
            FrameSelection::Uniform(n) => FrameSelectionRaw::Count(n as u64),
        }
    }
}

impl From<FrameSelection> for TemporalSpec {
    fn from(f: FrameSelection) -> Self {
        match f {
            FrameSelection::All => TemporalSpec::All,
            FrameSelection::Uniform(n) => TemporalSpec::UniformCount(n),
        }
    }
}

/// Parse a raw override value as a TOML value, falling back to a bare
/// string (`encoder.backend=mock`).
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key path `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse config text and apply `key.path=value` overrides on top.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k, parse_value(v.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::parse_with_overrides(&text, overrides)
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let e = &self.encoder;
        if !(e.logit_scale > 0.0 && e.logit_scale.is_finite()) {
            return bad(format!("encoder.logit_scale must be positive, got {}", e.logit_scale));
        }
        if e.mock_dim == 0 {
            return bad("encoder.mock_dim must be positive".into());
        }
        if self.prompts.kinds.is_empty() {
            return bad("prompts.kinds must name at least one kind".into());
        }
        if !self.prompts.template.contains(TEMPLATE_SLOT) {
            return bad(format!("prompts.template must contain {TEMPLATE_SLOT}"));
        }
        if self.sfe.t_fix == 0 || self.sfe.hidden == 0 {
            return bad("sfe.t_fix and sfe.hidden must be positive".into());
        }
        let s = &self.spatial;
        if s.grid_f == 0 || s.patch == 0 || s.frames == 0 || s.channels == 0 || s.tiny_hidden == 0 {
            return bad("spatial.grid_f, patch, frames, channels, tiny_hidden must be positive".into());
        }
        if (s.grid_f * s.patch) % crate::spatial::BACKBONE_STRIDE != 0 {
            return bad(format!(
                "spatial.grid_f * spatial.patch = {} must be a multiple of {}",
                s.grid_f * s.patch,
                crate::spatial::BACKBONE_STRIDE
            ));
        }
        if s.channels < 2 {
            return bad("spatial.channels must be at least 2".into());
        }
        if s.backbone == BackboneKind::External && s.weights_path.is_none() {
            return bad("spatial.backbone = external requires spatial.weights_path".into());
        }
        if !self.sfe.enabled && !self.spatial.enabled {
            return bad("at least one of sfe.enabled and spatial.enabled must be true".into());
        }
        let t = &self.train;
        if !(t.alpha >= 0.0 && t.beta >= 0.0 && t.alpha + t.beta > 0.0) {
            return bad(format!("train.alpha/beta must be >= 0 with a positive sum, got {}/{}", t.alpha, t.beta));
        }
        for (name, v) in [("lr_backbone", t.lr_backbone), ("lr_other", t.lr_other), ("weight_decay", t.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("train.{name} must be finite and non-negative, got {v}"));
            }
        }
        if t.batch == 0 || t.head_hidden == 0 {
            return bad("train.batch and train.head_hidden must be positive".into());
        }
        if self.eval.splits == 0 || !(self.eval.train_frac > 0.0 && self.eval.train_frac <= 1.0) {
            return bad("eval.splits must be >= 1 and eval.train_frac in (0, 1]".into());
        }
        for l in &self.probe.levels {
            if !(-1.0..=1.0).contains(l) {
                return bad(format!("probe.levels entry {l} outside [-1, 1]"));
            }
        }
        Ok(())
    }

    /// The prompt bank this config selects.
    pub fn prompt_bank(&self) -> Result<PromptBank> {
        let base = match &self.prompts.path {
            Some(p) => PromptBank::load(p)?,
            None => default_bank(),
        };
        let kinds: BTreeSet<_> = self.prompts.kinds.iter().copied().collect();
        base.subset(&kinds)?.with_new_template(&self.prompts.template)
    }
}
