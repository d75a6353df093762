//! Dataset file formats.
//!
//! Edge list: UTF-8 text, one "src dst" whitespace-separated integer pair per
//! line, `#` starts a comment. Features: headerless CSV of decimal floats,
//! row i = node i. Labels: headerless CSV of integers, one per node, -1 marks
//! an unlabeled node.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    pub self_loops_dropped: usize,
    pub duplicate_edges_dropped: usize,
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: LoadWarnings,
}

pub fn load_dataset(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    domain_id: &str,
) -> Result<LoadedDataset> {
    let features = read_feature_csv(feature_path)?;
    let num_nodes = features.rows();
    let labels = read_label_csv(label_path)?;
    if labels.len() != num_nodes {
        return Err(Error::InvalidInput(format!(
            "{} labels for {num_nodes} feature rows",
            labels.len()
        )));
    }
    let num_classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);

    let text = fs::read_to_string(edge_path)?;
    let mut warnings = LoadWarnings::default();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| Error::Parse {
                path: edge_path.display().to_string(),
                line: lineno + 1,
                detail: "expected two integer ids".into(),
            })?
            .parse::<usize>()
            .map_err(|e| Error::Parse {
                path: edge_path.display().to_string(),
                line: lineno + 1,
                detail: e.to_string(),
            })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                path: edge_path.display().to_string(),
                line: lineno + 1,
                detail: "expected exactly two ids per line".into(),
            });
        }
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::InvalidInput(format!(
                "edge ({u},{v}) references a node without a feature row (have {num_nodes})"
            )));
        }
        if u == v {
            warnings.self_loops_dropped += 1;
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    warnings.duplicate_edges_dropped = before - edges.len();

    let graph = Graph::new(num_nodes, &edges)?;
    let dataset = Dataset::new(graph, features, labels, num_classes, domain_id)?;
    Ok(LoadedDataset { dataset, warnings })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = fs::File::create(dir.join("edges.txt"))?;
    writeln!(edges, "# {} nodes", dataset.num_nodes())?;
    for &(u, v) in dataset.graph.edges() {
        writeln!(edges, "{u} {v}")?;
    }
    let mut feat = fs::File::create(dir.join("features.csv"))?;
    for i in 0..dataset.features.rows() {
        let row: Vec<String> = dataset.features.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(feat, "{}", row.join(","))?;
    }
    let mut lab = fs::File::create(dir.join("labels.csv"))?;
    for l in &dataset.labels {
        match l {
            Some(c) => writeln!(lab, "{c}")?,
            None => writeln!(lab, "-1")?,
        }
    }
    Ok(())
}

/// Load back a dataset written by [`save_dataset`].
pub fn load_dataset_dir(dir: &Path, domain_id: &str) -> Result<LoadedDataset> {
    load_dataset(
        &dir.join("edges.txt"),
        &dir.join("features.csv"),
        &dir.join("labels.csv"),
        domain_id,
    )
}

fn read_feature_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("ragged row: {} values, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}

fn read_label_csv(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|e: std::num::ParseIntError| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        if v < -1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("label {v} is neither a class index nor the -1 sentinel"),
            });
        }
        out.push(if v == -1 { None } else { Some(v as usize) });
    }
    Ok(out)
}
