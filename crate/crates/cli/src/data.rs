//! Loading edge lists and node covariates into a fit-ready design.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use suscept::graph::{read_edge_list, row_normalize, standardize, EdgeList};
use suscept::{DesignNames, DesignSet, Error as CoreError, LocalFeatures, Network};

use crate::config::{DataSection, ModelSection};
use crate::error::{CliError, Result};

/// Names computed from the edge list rather than read from covariates.
pub const KEYWORDS: [&str; 6] = ["intercept", "degree", "inv_size", "betweenness", "lcc", "eigencentrality"];

pub fn read_edges(path: &Path, directed: bool) -> Result<EdgeList> {
    let file = File::open(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let list = read_edge_list(file, directed).map_err(|source| CliError::Input { path: path.into(), source })?;
    if list.duplicates > 0 {
        log::warn!("{}: {} duplicate tie(s) collapsed", path.display(), list.duplicates);
    }
    Ok(list)
}

/// Node covariate table. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Covariates {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Reads a CSV whose first column is the actor ID and whose remaining
/// columns are numeric. Lines starting with `#` are skipped.
pub fn read_covariates(path: &Path) -> Result<Covariates> {
    let file = File::open(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let input = |line: u64, msg: String| CliError::Input { path: path.into(), source: CoreError::Parse { line, msg } };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| input(1, e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(input(1, "need an actor ID column and at least one covariate".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        if seen.insert(id.clone(), line).is_some() {
            return Err(input(line, format!("actor {id} listed twice")));
        }
        let row = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(cell, name)| {
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| input(line, format!("column {name}: {cell:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        values.push(row);
    }
    Ok(Covariates { names, ids, values })
}

/// Reads ego IDs, one per line; blank lines and `#` comments are skipped.
pub fn read_egos(path: &Path, list: &EdgeList) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let mut egos = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() || id.starts_with('#') {
            continue;
        }
        let i = list.index_of(id).ok_or_else(|| CliError::Input {
            path: path.into(),
            source: CoreError::Parse { line: k as u64 + 1, msg: format!("unknown actor {id}") },
        })?;
        egos.push(i);
    }
    Ok(egos)
}

/// Everything a fit needs, with actors in edge-list order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: Vec<String>,
    /// Ties as read, used for the network features.
    pub raw: Network,
    /// The influence network of the model.
    pub net: Network,
    pub design: DesignSet,
    /// NaN where the response is missing (allowed only for non-egos).
    pub y: DVector<f64>,
    pub egos: Option<Vec<usize>>,
}

/// Builds a dataset from the `[data]` and `[model]` sections.
/// `resolve` maps config paths to filesystem paths.
pub fn load_dataset(
    data: &DataSection,
    model: &ModelSection,
    resolve: impl Fn(&str) -> std::path::PathBuf,
) -> Result<Dataset> {
    let edges_path = resolve(&data.edges);
    let mut list = read_edges(&edges_path, data.directed)?;
    let cov_path = resolve(&data.covariates);
    let cov = read_covariates(&cov_path)?;
    let new_actors = cov.ids.iter().filter(|id| list.index_of(id).is_none()).count();
    if new_actors > 0 {
        log::warn!("{new_actors} actor(s) in {} have no ties", cov_path.display());
    }
    for id in &cov.ids {
        list.add_actor(id);
    }
    let raw = list.to_network(data.directed).map_err(|source| CliError::Input { path: edges_path.clone(), source })?;
    let net = if data.row_normalize { Network::new(row_normalize(&raw)?, true)? } else { raw.clone() };
    let n = raw.n();

    let mut row_of = vec![usize::MAX; n];
    for (r, id) in cov.ids.iter().enumerate() {
        row_of[list.index_of(id).unwrap()] = r;
    }
    if let Some(i) = row_of.iter().position(|&r| r == usize::MAX) {
        return Err(CliError::Input {
            path: cov_path,
            source: CoreError::InvalidConfig(format!("actor {} has no covariate row", list.labels[i])),
        });
    }

    let egos = match &data.egos {
        Some(p) => Some(read_egos(&resolve(p), &list)?),
        None => None,
    };

    let mut cols = ColumnSource { cov: &cov, cov_path: &cov_path, raw: &raw, row_of: &row_of, features: None };
    let y_idx = cov.column_index(&data.response).ok_or_else(|| {
        CliError::config("data.response", format!("no column {:?} in {}", data.response, cov_path.display()))
    })?;
    let is_ego = |i: usize| egos.as_ref().is_none_or(|e| e.contains(&i));
    let mut y = DVector::from_element(n, f64::NAN);
    for i in 0..n {
        match cov.values[row_of[i]][y_idx] {
            Some(v) => y[i] = v,
            None if is_ego(i) => {
                return Err(CliError::Input {
                    path: cov_path.clone(),
                    source: CoreError::InvalidConfig(format!("actor {} has no response", list.labels[i])),
                })
            }
            None => {}
        }
    }

    for (k, name) in model.standardize.iter().enumerate() {
        let used = [&model.x1, &model.x2, &model.w_x, &model.w_eps].iter().any(|b| b.contains(name));
        if !used || name == "intercept" {
            return Err(CliError::config(
                format!("model.standardize[{k}]"),
                format!("{name:?} is not a standardizable design column"),
            ));
        }
    }
    let mut block = |field: &str, names: &[String]| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, names.len());
        for (j, name) in names.iter().enumerate() {
            let mut col = cols.column(&format!("model.{field}[{j}]"), name)?;
            if model.standardize.contains(name) {
                let (s, _) = standardize(&DMatrix::from_column_slice(n, 1, &col), &[false])
                    .map_err(|e| CliError::config(format!("model.{field}[{j}]"), e.to_string()))?;
                col = s.column(0).iter().copied().collect();
            }
            m.set_column(j, &DVector::from_vec(col));
        }
        Ok(m)
    };
    let x1 = block("x1", &model.x1)?;
    let x2 = block("x2", &model.x2)?;
    let wx = block("w_x", &model.w_x)?;
    let weps = block("w_eps", &model.w_eps)?;
    let names =
        DesignNames { x1: model.x1.clone(), x2: model.x2.clone(), wx: model.w_x.clone(), weps: model.w_eps.clone() };
    let design = DesignSet::with_names(x1, x2, wx, weps, names)?;
    Ok(Dataset { labels: list.labels, raw, net, design, y, egos })
}

struct ColumnSource<'a> {
    cov: &'a Covariates,
    cov_path: &'a Path,
    raw: &'a Network,
    row_of: &'a [usize],
    features: Option<LocalFeatures>,
}

impl ColumnSource<'_> {
    fn column(&mut self, field: &str, name: &str) -> Result<Vec<f64>> {
        let n = self.raw.n();
        if KEYWORDS.contains(&name) {
            if self.cov.column_index(name).is_some() {
                return Err(CliError::config(
                    field,
                    format!(
                        "{name:?} is a feature keyword and also a column of {}; rename the column",
                        self.cov_path.display()
                    ),
                ));
            }
            if name == "intercept" {
                return Ok(vec![1.0; n]);
            }
            if self.features.is_none() {
                self.features = Some(LocalFeatures::compute(self.raw)?);
            }
            let f = self.features.as_ref().unwrap();
            return f.column(name).expect("keyword known").map_err(CliError::from);
        }
        let j = self
            .cov
            .column_index(name)
            .ok_or_else(|| CliError::config(field, format!("no column {name:?} in {}", self.cov_path.display())))?;
        (0..n)
            .map(|i| {
                self.cov.values[self.row_of[i]][j].ok_or_else(|| CliError::Input {
                    path: self.cov_path.into(),
                    source: CoreError::InvalidConfig(format!(
                        "missing value of {name} for actor {}",
                        self.cov.ids[self.row_of[i]]
                    )),
                })
            })
            .collect()
    }
}
