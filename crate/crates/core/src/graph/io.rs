//! Edge-list ingestion and feature export.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{LocalFeatures, Network};
use crate::error::{Error, Result};
use crate::report::num;

/// Parsed `src,dst[,weight]` edge list.
///
/// When every actor ID is a non-negative integer the IDs are taken as 0-based
/// indices; otherwise labels are mapped to indices in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize, f64)>,
    /// Rows dropped because they repeated an earlier tie.
    pub duplicates: usize,
    index: HashMap<String, usize>,
}

impl EdgeList {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Registers an actor that has no ties in the edge list.
    pub fn add_actor(&mut self, label: &str) -> usize {
        if let Some(i) = self.index_of(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), i);
        i
    }

    pub fn to_network(&self, directed: bool) -> Result<Network> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in &self.edges {
            a[(i, j)] = w;
            if !directed {
                a[(j, i)] = w;
            }
        }
        Network::new(a, directed)
    }
}

/// Reads an edge list. Lines starting with `#` are ignored. Repeated ties
/// (in either orientation for undirected networks) keep their first weight.
pub fn read_edge_list<R: Read>(reader: R, directed: bool) -> Result<EdgeList> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let weighted = match names.as_slice() {
        ["src", "dst"] => false,
        ["src", "dst", "weight"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header src,dst[,weight], got {}", names.join(",")),
            })
        }
    };

    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| {
            rec.get(k)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Parse { line, msg: format!("missing field {}", k + 1) })
        };
        let (src, dst) = (field(0)?.to_string(), field(1)?.to_string());
        let weight = if weighted {
            let w = field(2)?;
            w.parse::<f64>()
                .ok()
                .filter(|w| w.is_finite())
                .ok_or_else(|| Error::Parse { line, msg: format!("bad weight {w:?}") })?
        } else {
            1.0
        };
        raw.push((line, src, dst, weight));
    }

    let numeric =
        !raw.is_empty() && raw.iter().all(|(_, s, d, _)| s.parse::<usize>().is_ok() && d.parse::<usize>().is_ok());
    let mut list = EdgeList { labels: Vec::new(), edges: Vec::new(), duplicates: 0, index: HashMap::new() };
    if numeric {
        let max = raw
            .iter()
            .flat_map(|(_, s, d, _)| [s.parse::<usize>().unwrap(), d.parse::<usize>().unwrap()])
            .max()
            .unwrap();
        for i in 0..=max {
            list.add_actor(&i.to_string());
        }
    }

    let mut seen = HashSet::new();
    for (line, src, dst, weight) in raw {
        let (i, j) = if numeric {
            (src.parse::<usize>().unwrap(), dst.parse::<usize>().unwrap())
        } else {
            (list.add_actor(&src), list.add_actor(&dst))
        };
        if i == j {
            return Err(Error::Parse { line, msg: format!("self-tie on actor {src}") });
        }
        let key = if directed { (i, j) } else { (i.min(j), i.max(j)) };
        if !seen.insert(key) {
            log::warn!("line {line}: duplicate tie {src} -> {dst} ignored");
            list.duplicates += 1;
            continue;
        }
        list.edges.push((i, j, weight));
    }
    Ok(list)
}

/// Writes `actor,degree,inv_size,betweenness,lcc,eigencentrality`. The
/// `inv_size` cell is empty for actors without ties.
pub fn write_features_csv<W: Write>(out: W, labels: &[String], features: &LocalFeatures) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["actor", "degree", "inv_size", "betweenness", "lcc", "eigencentrality"])?;
    for (i, label) in labels.iter().enumerate() {
        w.write_record([
            label.clone(),
            num(features.degree[i]),
            features.inv_network_size[i].map(num).unwrap_or_default(),
            num(features.betweenness[i]),
            num(features.lcc[i]),
            num(features.eigencentrality[i]),
        ])?;
    }
    w.flush()
}
