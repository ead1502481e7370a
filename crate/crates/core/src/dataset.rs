//! Node-classification datasets and the per-session views handed to
//! training.
//!
//! File formats:
//! - edge list: one `src,dst` pair of 0-based ids per line;
//! - labels: one `node_id,label` pair per line, unlisted nodes unlabeled;
//! - features: CSV (row `i` holds node `i`) or raw binary, an 8-byte header
//!   of two little-endian `u32` counts `n, d` followed by `n * d`
//!   little-endian `f32` values in row-major order.
//!
//! Blank lines and lines starting with `#` are skipped in text files.

use std::fs;
use std::path::Path;

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{LabelVector, SparseGraph};

/// A whole attributed graph with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: LabelVector,
}

impl Dataset {
    pub fn new(graph: SparseGraph, features: DenseMatrix, labels: LabelVector) -> Result<Self> {
        let n = graph.node_count();
        if features.rows() != n || labels.len() != n {
            return Err(Error::Input(format!(
                "graph has {n} nodes, features {} rows, labels {} entries",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Dataset {
            graph,
            features,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn load(edges: &Path, labels: &Path, features: &Path) -> Result<Self> {
        let features = read_features(features)?;
        let n = features.rows();
        let edges = read_edge_list(edges)?;
        let graph = SparseGraph::from_edges(&edges, n)?;
        let labels = read_labels(labels, n)?;
        Dataset::new(graph, features, labels)
    }
}

/// What one session exposes to the trainer: its own subgraph, features, and
/// labels for the support (or base-train) nodes only.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub index: usize,
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    /// Labels of `support` nodes; every other node is unlabeled.
    pub labels: LabelVector,
    /// Class set of the session, ascending.
    pub classes: Vec<usize>,
    /// Labeled nodes (local ids).
    pub support: Vec<usize>,
    /// Unlabeled nodes available for calibration (local ids).
    pub query: Vec<usize>,
}

impl SessionDataset {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support
            .iter()
            .map(|&u| self.labels.get(u).expect("support node without label"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::Contract(format!("session {} shape mismatch", self.index)));
        }
        for &u in self.support.iter().chain(&self.query) {
            if u >= n {
                return Err(Error::Contract(format!("node {u} out of range")));
            }
        }
        for &u in &self.support {
            match self.labels.get(u) {
                Some(c) if self.classes.binary_search(&c).is_ok() => {}
                other => {
                    return Err(Error::Contract(format!(
                        "support node {u} has label {other:?} outside the session classes"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_pair(path: &Path, line: usize, text: &str) -> Result<(usize, usize)> {
    let err = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut parts = text.split(',').map(str::trim);
    let a = parts.next().ok_or_else(|| err("missing first field"))?;
    let b = parts.next().ok_or_else(|| err("expected two comma-separated fields"))?;
    if parts.next().is_some() {
        return Err(err("expected exactly two fields"));
    }
    let a = a.parse().map_err(|_| err("first field is not a non-negative integer"))?;
    let b = b.parse().map_err(|_| err("second field is not a non-negative integer"))?;
    Ok((a, b))
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    data_lines(path)?
        .into_iter()
        .map(|(line, text)| parse_pair(path, line, &text))
        .collect()
}

pub fn read_labels(path: &Path, n: usize) -> Result<LabelVector> {
    let mut labels = vec![None; n];
    for (line, text) in data_lines(path)? {
        let (node, label) = parse_pair(path, line, &text)?;
        if node >= n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("node {node} out of range for {n} nodes"),
            });
        }
        labels[node] = Some(label);
    }
    Ok(LabelVector::new(labels))
}

/// Reads features as binary when the extension is `bin`, CSV otherwise.
pub fn read_features(path: &Path) -> Result<DenseMatrix> {
    if path.extension().is_some_and(|e| e == "bin") {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_binary_features(&bytes).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        })
    } else {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, text) in data_lines(path)? {
            let row = text
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: e.to_string(),
                })?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("expected {} columns, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        Ok(DenseMatrix::from_rows(&rows))
    }
}

pub fn encode_binary_features(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * m.len());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_binary_features(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    if bytes.len() < 8 {
        return Err("feature file shorter than its 8-byte header".into());
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * n * d {
        return Err(format!(
            "header declares {n}x{d} values but body holds {} bytes",
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    DenseMatrix::from_vec(n, d, data).map_err(|e| e.to_string())
}
