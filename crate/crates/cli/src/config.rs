//! TOML experiment configs.
//!
//! Every section is optional and every key has a default, so an empty file is
//! a valid config. Unknown keys are rejected with the closest known key as a
//! suggestion. Errors carry the line of the offending key when it can be found.

use std::fmt;
use std::path::Path;

use hypojump::experiments::{ExperimentConfig, MeasureParams};
use hypojump::flow::DEFAULT_MAX_STEP;
use hypojump::girsanov::PhiConvention;
use hypojump::CatalogModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
    pub suggestion: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `kalman`, `degenerate`, `sine-shear` or `isotropic`.
    pub name: String,
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub max_step: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { name: "kalman".into(), x0: None, horizon: 1.0, max_step: DEFAULT_MAX_STEP }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    pub dim: usize,
    pub alpha: f64,
    pub theta0: f64,
    pub trunc: f64,
    pub outer_radius: Option<f64>,
}

impl Default for MeasureSection {
    fn default() -> Self {
        let m = MeasureParams::default();
        Self { dim: m.dim, alpha: m.alpha, theta0: m.theta0, trunc: m.trunc, outer_radius: m.outer_radius }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub paths: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self { seed: d.seed, paths: d.paths }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailSection {
    pub eps_grid: Vec<f64>,
    pub ell: f64,
    pub gamma: f64,
}

impl Default for TailSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self { eps_grid: d.eps_grid, ell: d.ell, gamma: d.gamma }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbpSection {
    /// Wave vector of `f(x) = cos⟨k, x⟩`.
    pub k: Vec<f64>,
}

impl Default for IbpSection {
    fn default() -> Self {
        Self { k: vec![1.0, 1.0] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GirsanovSection {
    pub xi: Vec<f64>,
    pub epsilon: f64,
    /// Strictly decreasing sequence for the mean-square limit.
    pub eps_sequence: Vec<f64>,
    pub times: Vec<f64>,
    /// `corrected` or `literal`.
    pub convention: String,
}

impl Default for GirsanovSection {
    fn default() -> Self {
        Self {
            xi: vec![0.4, 0.0],
            epsilon: 0.1,
            eps_sequence: vec![0.1, 0.05, 0.025, 0.0125],
            times: vec![0.5, 1.0],
            convention: "corrected".into(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoidSection {
    pub window: f64,
    pub r_inner: f64,
}

impl Default for VoidSection {
    fn default() -> Self {
        Self { window: 0.1, r_inner: 0.1 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsSection {
    pub lambda: f64,
}

impl Default for MomentsSection {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharfnSection {
    pub directions: Vec<Vec<f64>>,
    pub k_grid: Vec<f64>,
}

impl Default for CharfnSection {
    fn default() -> Self {
        Self { directions: vec![vec![1.0, 0.0], vec![0.0, 1.0]], k_grid: vec![1.0, 2.0, 4.0, 8.0, 16.0] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsSection {
    /// Half-width of the box of states searched by the Hörmander infimum.
    pub half_width: f64,
    pub samples_x: usize,
    pub samples_u: usize,
}

impl Default for ConditionsSection {
    fn default() -> Self {
        Self { half_width: 3.0, samples_x: 200, samples_u: 200 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub measure: MeasureSection,
    pub run: RunSection,
    pub tail: TailSection,
    pub ibp: IbpSection,
    pub girsanov: GirsanovSection,
    pub void: VoidSection,
    pub moments: MomentsSection,
    pub charfn: CharfnSection,
    pub conditions: ConditionsSection,
}

const SECTIONS: [(&str, &[&str]); 10] = [
    ("model", &["name", "x0", "horizon", "max_step"]),
    ("measure", &["dim", "alpha", "theta0", "trunc", "outer_radius"]),
    ("run", &["seed", "paths"]),
    ("tail", &["eps_grid", "ell", "gamma"]),
    ("ibp", &["k"]),
    ("girsanov", &["xi", "epsilon", "eps_sequence", "times", "convention"]),
    ("void", &["window", "r_inner"]),
    ("moments", &["lambda"]),
    ("charfn", &["directions", "k_grid"]),
    ("conditions", &["half_width", "samples_x", "samples_u"]),
];

/// A parsed config together with its source text.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub file: String,
    pub text: String,
    pub config: Config,
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: file.clone(),
        line: None,
        column: None,
        message: format!("cannot read config: {e}"),
        suggestion: None,
    })?;
    parse_config_str(&file, &text)
}

pub fn parse_config_str(file: &str, text: &str) -> Result<LoadedConfig, ConfigError> {
    let config: Config = toml::from_str(text).map_err(|e| deserialize_error(file, text, &e))?;
    let loaded = LoadedConfig { file: file.to_string(), text: text.to_string(), config };
    loaded.check_ranges()?;
    Ok(loaded)
}

fn deserialize_error(file: &str, text: &str, err: &toml::de::Error) -> ConfigError {
    let (line, column) = match err.span() {
        Some(span) => {
            let (l, c) = line_col(text, span.start);
            (Some(l), Some(c))
        }
        None => (None, None),
    };
    let message = err.message().trim().to_string();
    let suggestion = unknown_name(&message).and_then(|name| {
        let section = section_at(text, err.span().map_or(0, |s| s.start));
        // an unknown table is reported at its own header
        let known: Vec<&str> = match section.as_deref().filter(|s| *s != name) {
            None => SECTIONS.iter().map(|(s, _)| *s).collect(),
            Some(s) => SECTIONS.iter().find(|(n, _)| *n == s).map(|(_, k)| k.to_vec()).unwrap_or_default(),
        };
        suggest(&name, &known)
    });
    ConfigError { file: file.to_string(), line, column, message, suggestion }
}

/// Name inside "unknown field `name`, ...".
fn unknown_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Closest known key by normalised Damerau–Levenshtein similarity.
pub fn suggest(name: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::normalized_damerau_levenshtein(name, k), *k))
        .filter(|(score, _)| *score >= 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

/// Table header in force at byte `offset`.
fn section_at(text: &str, offset: usize) -> Option<String> {
    let mut current = None;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if pos > offset {
            break;
        }
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            current = Some(t.trim_matches(|c| c == '[' || c == ']').trim().to_string());
        }
        pos += line.len();
    }
    current
}

/// Line of `key = ...` inside `[section]`, if present in the text.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        } else if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        Self { file: "<defaults>".into(), text: String::new(), config: Config::default() }
    }

    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: locate(&self.text, section, key),
            column: None,
            message: format!("{section}.{key}: {}", message.into()),
            suggestion: None,
        }
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let m = &c.measure;
        if !(m.alpha > 0.0 && m.alpha < 2.0) {
            return Err(self.error(
                "measure",
                "alpha",
                format!("{} violates the stable-index constraint 0 < alpha < 2", m.alpha),
            ));
        }
        if !(m.trunc > 0.0 && m.trunc < 1.0) {
            return Err(self.error("measure", "trunc", format!("{} is outside (0, 1)", m.trunc)));
        }
        if !(m.theta0 > 0.0 && m.theta0.is_finite()) {
            return Err(self.error("measure", "theta0", format!("{} must be finite and > 0", m.theta0)));
        }
        if !(c.tail.ell > 0.0 && c.tail.ell < 0.25) {
            return Err(self.error("tail", "ell", format!("{} is outside (0, 1/4)", c.tail.ell)));
        }
        if CatalogModel::ALL.iter().all(|k| k.name() != c.model.name) {
            let names: Vec<&str> = CatalogModel::ALL.iter().map(|k| k.name()).collect();
            let mut err = self.error("model", "name", format!("unknown model `{}`; expected one of {}", c.model.name, names.join(", ")));
            err.suggestion = suggest(&c.model.name, &names);
            return Err(err);
        }
        if !matches!(c.girsanov.convention.as_str(), "corrected" | "literal") {
            return Err(self.error(
                "girsanov",
                "convention",
                format!("unknown convention `{}`; expected `corrected` or `literal`", c.girsanov.convention),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> CatalogModel {
        *CatalogModel::ALL.iter().find(|k| k.name() == self.config.model.name).expect("model name checked at parse time")
    }

    pub fn convention(&self) -> PhiConvention {
        match self.config.girsanov.convention.as_str() {
            "literal" => PhiConvention::Literal,
            _ => PhiConvention::Corrected,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let c = &self.config;
        ExperimentConfig {
            model: self.model(),
            measure: MeasureParams {
                dim: c.measure.dim,
                alpha: c.measure.alpha,
                theta0: c.measure.theta0,
                trunc: c.measure.trunc,
                outer_radius: c.measure.outer_radius,
            },
            horizon: c.model.horizon,
            paths: c.run.paths,
            eps_grid: c.tail.eps_grid.clone(),
            ell: c.tail.ell,
            gamma: c.tail.gamma,
            seed: c.run.seed,
            x0: c.model.x0.clone(),
            max_step: c.model.max_step,
        }
    }

    /// Sorted keys, one `key = value` per line, no comments or blank runs.
    pub fn canonical_text(&self) -> String {
        match toml::from_str::<toml::Table>(&self.text) {
            Ok(table) => toml::to_string(&table).unwrap_or_default(),
            Err(_) => self.text.clone(),
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}
