use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ndarr::DenseArray;

use super::{Graph, GraphError, Splits};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), GraphError> {
    fs::write(path, contents).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(file: &str, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Malformed {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<T, GraphError> {
    let text = read(&dir.join(file))?;
    serde_json::from_str(&text).map_err(|e| malformed(file, e.line(), e.to_string()))
}

/// Non-empty lines with their 1-based line numbers. A trailing newline is
/// optional.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Reads a dataset directory (`edges.tsv`, `features.csv`, `labels.csv`,
/// `meta.json`, `splits.json`).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let dir = dir.as_ref();
    let meta: DatasetMeta = parse_json(dir, "meta.json")?;
    let splits: Splits = parse_json(dir, "splits.json")?;
    let n = meta.num_nodes;

    let mut edges = Vec::new();
    for (ln, line) in lines(&read(&dir.join("edges.tsv"))?) {
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed("edges.tsv", ln, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| malformed("edges.tsv", ln, format!("bad node id {s:?}: {e}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= n || v >= n {
            return Err(malformed(
                "edges.tsv",
                ln,
                format!("node id out of range for {n} nodes"),
            ));
        }
        edges.push((u, v));
    }

    let mut feats = Vec::with_capacity(n * meta.feature_dim);
    let mut rows = 0;
    for (ln, line) in lines(&read(&dir.join("features.csv"))?) {
        let before = feats.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|e| malformed("features.csv", ln, format!("bad float {tok:?}: {e}")))?;
            if !v.is_finite() {
                return Err(malformed("features.csv", ln, "non-finite value"));
            }
            feats.push(v);
        }
        if feats.len() - before != meta.feature_dim {
            return Err(malformed(
                "features.csv",
                ln,
                format!(
                    "expected {} columns, found {}",
                    meta.feature_dim,
                    feats.len() - before
                ),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(GraphError::RowCount {
            file: "features.csv".into(),
            expected: n,
            found: rows,
        });
    }

    let mut labels = Vec::with_capacity(n);
    for (ln, line) in lines(&read(&dir.join("labels.csv"))?) {
        let l: usize = line
            .trim()
            .parse()
            .map_err(|e| malformed("labels.csv", ln, format!("bad label {line:?}: {e}")))?;
        if l >= meta.num_classes {
            return Err(malformed(
                "labels.csv",
                ln,
                format!("label {l} >= num_classes {}", meta.num_classes),
            ));
        }
        labels.push(l);
    }
    if labels.len() != n {
        return Err(GraphError::RowCount {
            file: "labels.csv".into(),
            expected: n,
            found: labels.len(),
        });
    }

    let features = DenseArray::new(vec![n, meta.feature_dim], feats)?;
    let (graph, self_loops) =
        Graph::from_edges(n, &edges, features, labels, meta.num_classes, splits)?;
    if self_loops > 0 {
        log::warn!(
            "{}: dropped {self_loops} self-loop line(s) from edges.tsv",
            dir.display()
        );
    }
    Ok(graph)
}

/// Writes `graph` in the dataset directory layout, creating `dir` if needed.
/// Edges are written once each as `u<TAB>v` with `u < v`, in sorted order.
pub fn save_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut edges = String::new();
    for (u, v) in graph.edge_list() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    write(&dir.join("edges.tsv"), &edges)?;

    let x = graph.features();
    let mut feats = String::new();
    for i in 0..graph.num_nodes() {
        let row: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write(&dir.join("features.csv"), &feats)?;

    let mut labels = String::new();
    for l in graph.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    write(&dir.join("labels.csv"), &labels)?;

    let meta = DatasetMeta {
        num_nodes: graph.num_nodes(),
        num_classes: graph.num_classes(),
        feature_dim: graph.feature_dim(),
    };
    write(&dir.join("meta.json"), &pretty_json(&meta))?;
    write(&dir.join("splits.json"), &pretty_json(graph.splits()))?;
    Ok(())
}

fn pretty_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain structs always serialize");
    s.push('\n');
    s
}
