//! Configuration files.
//!
//! Each subcommand reads one document in TOML or JSON (chosen by the `.json`
//! extension) with the sections `[data] [model] [priors] [sampling]
//! [output]`. Unknown keys are rejected and every error names the offending
//! field. Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use suscept::durbin::SigmaPrecision;
use suscept::{Priors, Variant};

use crate::error::{CliError, Result};

fn yes() -> bool {
    true
}

fn default_draws() -> usize {
    10_000
}

/// Network and covariate sources for `fit` and `ego-study`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `src,dst[,weight]` edge list.
    pub edges: String,
    #[serde(default)]
    pub directed: bool,
    /// Row-normalize the adjacency before fitting. Features always come from
    /// the raw ties.
    #[serde(default = "yes")]
    pub row_normalize: bool,
    /// Node covariate CSV: actor ID first, then named numeric columns.
    pub covariates: String,
    /// Name of the response column in `covariates`.
    pub response: String,
    /// Ego IDs, one per line, for the egocentric model.
    #[serde(default)]
    pub egos: Option<String>,
}

/// Design columns: covariate names or the keywords `intercept`, `degree`,
/// `inv_size`, `betweenness`, `lcc` and `eigencentrality`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub x1: Vec<String>,
    #[serde(default)]
    pub x2: Vec<String>,
    #[serde(default)]
    pub w_x: Vec<String>,
    #[serde(default)]
    pub w_eps: Vec<String>,
    /// Columns to center and scale to unit SD.
    #[serde(default)]
    pub standardize: Vec<String>,
    /// `exact` or `verbatim`; only the Durbin model uses it.
    #[serde(default)]
    pub sigma_precision: Option<String>,
}

/// `g1`, `g2` and `g3` default to the number of actors in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsSection {
    #[serde(default)]
    pub g1: Option<f64>,
    #[serde(default)]
    pub g2: Option<f64>,
    #[serde(default)]
    pub g3: Option<f64>,
    pub a: f64,
    pub b: f64,
}

impl PriorsSection {
    pub fn resolve(&self, n: usize) -> Result<Priors> {
        let g = n as f64;
        let p = Priors {
            g1: self.g1.unwrap_or(g),
            g2: self.g2.unwrap_or(g),
            g3: self.g3.unwrap_or(g),
            a: self.a,
            b: self.b,
        };
        for (k, v) in [("g1", p.g1), ("g2", p.g2), ("g3", p.g3), ("a", p.a), ("b", p.b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("priors.{k}"), format!("must be positive, got {v}")));
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSampling {
    #[serde(default = "default_draws")]
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Also write every posterior draw.
    #[serde(default)]
    pub draws: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub priors: PriorsSection,
    pub sampling: FitSampling,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSampling {
    #[serde(default = "default_draws")]
    pub draws: usize,
    pub seed: u64,
    pub sizes: Vec<usize>,
    #[serde(default = "default_sweep_replicates")]
    pub replicates: usize,
}

fn default_sweep_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoStudyConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub priors: PriorsSection,
    pub sampling: SweepSampling,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGraph {
    pub n: usize,
    pub mean_degree: f64,
}

/// Study network: an edge list, or an Erdos-Renyi graph redrawn from the
/// seed (the default, `n = 122` with mean degree 6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyData {
    #[serde(default)]
    pub edges: Option<String>,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub erdos_renyi: Option<RandomGraph>,
    /// Standardize the network features of the covariate recipe.
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl Default for StudyData {
    fn default() -> Self {
        Self { edges: None, directed: false, erdos_renyi: None, standardize: true }
    }
}

/// Generating model. Omitted values take the reference study's settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyModel {
    #[serde(default = "default_study_variant")]
    pub variant: String,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_x: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma_eps: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma2: Option<f64>,
}

fn default_study_variant() -> String {
    Variant::Disturbances.as_str().into()
}

impl Default for StudyModel {
    fn default() -> Self {
        Self { variant: default_study_variant(), beta: None, gamma_x: None, gamma_eps: None, sigma2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySampling {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_study_draws")]
    pub draws: usize,
    pub seed: u64,
}

fn default_replicates() -> usize {
    200
}

fn default_study_draws() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default)]
    pub data: StudyData,
    #[serde(default)]
    pub model: StudyModel,
    pub priors: PriorsSection,
    pub sampling: StudySampling,
    pub output: OutputSection,
}

/// A parsed config with its location and fingerprint.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
    /// Hex SHA-256 of the canonical JSON form of `config`.
    pub hash: String,
    /// Canonical JSON form, echoed into output headers.
    pub canonical: String,
}

impl<T> Loaded<T> {
    /// Resolves a config path relative to the config file.
    pub fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Reads and validates the syntax of a config file.
pub fn load<T: DeserializeOwned + Serialize>(path: &Path) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let config = parse(&text, path.extension().is_some_and(|e| e == "json"))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(fingerprint(config, base))
}

pub fn fingerprint<T: Serialize>(config: T, base: PathBuf) -> Loaded<T> {
    let canonical = serde_json::to_string(&config).expect("config serializes");
    let hash = Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Loaded { config, base, hash, canonical }
}

/// Parses TOML (or JSON) text. Both go through a JSON value so error paths
/// read the same either way.
pub fn parse<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    let value: serde_json::Value = if json {
        serde_json::from_str(text).map_err(|e| CliError::config("<document>", e.to_string()))?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::config("<document>", e.to_string()))?;
        serde_json::to_value(table).map_err(|e| CliError::config("<document>", e.to_string()))?
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        CliError::config(if field == "." { "<document>".into() } else { field }, e.into_inner().to_string())
    })
}

pub fn parse_variant(field: &str, s: &str) -> Result<Variant> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
        CliError::config(field, format!("unknown variant {s:?}; expected one of {}", known.join(", ")))
    })
}

pub fn parse_sigma_precision(s: Option<&str>) -> Result<SigmaPrecision> {
    match s {
        None | Some("exact") => Ok(SigmaPrecision::Exact),
        Some("verbatim") => Ok(SigmaPrecision::Verbatim),
        Some(other) => Err(CliError::config(
            "model.sigma_precision",
            format!("unknown value {other:?}; expected exact or verbatim"),
        )),
    }
}
