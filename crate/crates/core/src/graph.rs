//! Immutable undirected graph in CSR form plus the dataset-directory loader.
//!
//! A dataset directory holds four UTF-8 files:
//!
//! * `edges.tsv`: one undirected edge per line, two 0-based node indices.
//!   Mirrored or repeated lines collapse to one edge; self-loops are rejected.
//! * `features.tsv`: `num_nodes` lines of `num_features` reals.
//! * `labels.tsv`: `num_nodes` lines, one integer class, `-1` for unlabeled.
//! * `meta.json`: `{"name", "num_nodes", "num_features", "num_classes"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: node index {index} out of range (num_nodes = {num_nodes})")]
    NodeOutOfRange {
        file: String,
        line: usize,
        index: usize,
        num_nodes: usize,
    },
    #[error("{file}:{line}: self-loop on node {node}")]
    SelfLoop { file: String, line: usize, node: usize },
    #[error("{file}:{line}: non-finite feature value")]
    NonFiniteFeature { file: String, line: usize },
    #[error("{file}:{line}: label {label} outside [0, {num_classes}) and not -1")]
    BadLabel {
        file: String,
        line: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("{file}: expected {expected} {what}, found {found}")]
    CountMismatch {
        file: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from undirected edges. Each pair may appear in either
    /// or both orientations and any number of times. `labels` defaults to
    /// all-unlabeled.
    pub fn new(
        name: impl Into<String>,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Option<Vec<Option<usize>>>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(GraphError::Invalid("non-finite feature value".into()));
        }
        let labels = labels.unwrap_or_else(|| vec![None; num_nodes]);
        if labels.len() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= num_classes) {
            return Err(GraphError::Invalid(format!(
                "label {bad} >= num_classes {num_classes}"
            )));
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if i == j {
                return Err(GraphError::Invalid(format!("self-loop on node {i}")));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            name: name.into(),
            num_nodes,
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// M: number of stored directed edges, twice the undirected count.
    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    /// Undirected edges as `(i, j)` with `i < j`, in CSR order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// Every stored directed edge, in CSR order.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Same nodes, features and labels over a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(
            self.name.clone(),
            self.num_nodes,
            edges,
            self.features.clone(),
            Some(self.labels.clone()),
            self.num_classes,
        )
    }

    /// Subgraph induced by `nodes`, renumbered in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut remap = vec![usize::MAX; self.num_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.num_nodes {
                return Err(GraphError::Invalid(format!("node {old} out of range")));
            }
            remap[old] = new;
        }
        let mut edges = Vec::new();
        for (new_i, &old_i) in nodes.iter().enumerate() {
            for &old_j in self.neighbors(old_i) {
                let new_j = remap[old_j];
                if new_j != usize::MAX && new_i < new_j {
                    edges.push((new_i, new_j));
                }
            }
        }
        let cols = self.num_features();
        let mut data = Vec::with_capacity(nodes.len() * cols);
        for &n in nodes {
            data.extend_from_slice(self.features.row(n));
        }
        let features = Tensor::from_vec(nodes.len(), cols, data).expect("row copy");
        let labels = nodes.iter().map(|&n| self.labels[n]).collect();
        Graph::new(
            format!("{}[sub{}]", self.name, nodes.len()),
            nodes.len(),
            edges,
            features,
            Some(labels),
            self.num_classes,
        )
    }

    /// Re-verifies the structural invariants. Construction already
    /// guarantees them; tests and loaders call this as an audit.
    pub fn check_invariants(&self) -> Result<()> {
        if self.offsets.len() != self.num_nodes + 1 || self.offsets[self.num_nodes] != self.neighbors.len() {
            return Err(GraphError::Invalid("offset table inconsistent".into()));
        }
        for i in 0..self.num_nodes {
            let nb = self.neighbors(i);
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::Invalid(format!("neighbors of {i} not strictly sorted")));
            }
            for &j in nb {
                if j == i {
                    return Err(GraphError::Invalid(format!("self-loop on node {i}")));
                }
                if !self.has_edge(j, i) {
                    return Err(GraphError::Invalid(format!("edge ({i}, {j}) has no mirror")));
                }
            }
        }
        if !self.neighbors.len().is_multiple_of(2) {
            return Err(GraphError::Invalid("odd directed edge count".into()));
        }
        if !self.features.is_finite() {
            return Err(GraphError::Invalid("non-finite feature value".into()));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Loads and validates a dataset directory.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: GraphMeta = serde_json::from_str(&read(&meta_path)?).map_err(|e| GraphError::Parse {
        file: "meta.json".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let n = meta.num_nodes;

    let text = read(&dir.join("features.tsv"))?;
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0;
    for (line, l) in content_lines(&text) {
        let before = data.len();
        for tok in l.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GraphError::Parse {
                file: "features.tsv".into(),
                line,
                msg: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(GraphError::NonFiniteFeature {
                    file: "features.tsv".into(),
                    line,
                });
            }
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(GraphError::Parse {
                file: "features.tsv".into(),
                line,
                msg: format!(
                    "expected {} values, found {}",
                    meta.num_features,
                    data.len() - before
                ),
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(GraphError::CountMismatch {
            file: "features.tsv".into(),
            what: "rows",
            expected: n,
            found: rows,
        });
    }
    let features = Tensor::from_vec(n, meta.num_features, data).expect("counted");

    let text = read(&dir.join("labels.tsv"))?;
    let mut labels = Vec::with_capacity(n);
    for (line, l) in content_lines(&text) {
        let v: i64 = l.parse().map_err(|_| GraphError::Parse {
            file: "labels.tsv".into(),
            line,
            msg: format!("not an integer: {l:?}"),
        })?;
        let label = match v {
            -1 => None,
            v if v >= 0 && (v as usize) < meta.num_classes => Some(v as usize),
            _ => {
                return Err(GraphError::BadLabel {
                    file: "labels.tsv".into(),
                    line,
                    label: v,
                    num_classes: meta.num_classes,
                })
            }
        };
        labels.push(label);
    }
    if labels.len() != n {
        return Err(GraphError::CountMismatch {
            file: "labels.tsv".into(),
            what: "rows",
            expected: n,
            found: labels.len(),
        });
    }

    let text = read(&dir.join("edges.tsv"))?;
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut it = l.split_whitespace();
        let mut node = || -> Result<usize> {
            let tok = it.next().ok_or_else(|| GraphError::Parse {
                file: "edges.tsv".into(),
                line,
                msg: "expected two node indices".into(),
            })?;
            let idx: usize = tok.parse().map_err(|_| GraphError::Parse {
                file: "edges.tsv".into(),
                line,
                msg: format!("not a node index: {tok:?}"),
            })?;
            if idx >= n {
                return Err(GraphError::NodeOutOfRange {
                    file: "edges.tsv".into(),
                    line,
                    index: idx,
                    num_nodes: n,
                });
            }
            Ok(idx)
        };
        let (i, j) = (node()?, node()?);
        if it.next().is_some() {
            return Err(GraphError::Parse {
                file: "edges.tsv".into(),
                line,
                msg: "expected exactly two node indices".into(),
            });
        }
        if i == j {
            return Err(GraphError::SelfLoop {
                file: "edges.tsv".into(),
                line,
                node: i,
            });
        }
        edges.push((i, j));
    }

    let g = Graph::new(meta.name, n, edges, features, Some(labels), meta.num_classes)?;
    g.check_invariants()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_dataset(dir: &Path, edges: &str, n: usize, labels: &str) {
        let w = |name: &str, body: &str| {
            let mut f = fs::File::create(dir.join(name)).unwrap();
            f.write_all(body.as_bytes()).unwrap();
        };
        w("edges.tsv", edges);
        w("features.tsv", &"1.0 0.5\n".repeat(n));
        w("labels.tsv", labels);
        w(
            "meta.json",
            &format!(r#"{{"name":"t","num_nodes":{n},"num_features":2,"num_classes":2}}"#),
        );
    }

    #[test]
    fn minimal_symmetric_graph() {
        let d = tempfile::tempdir().unwrap();
        write_dataset(d.path(), "0 1\n", 2, "0\n1\n");
        let g = load_graph(d.path()).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.num_directed_edges(), 2);
    }

    #[test]
    fn mirrored_lines_deduplicate() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), "0 1\n1 0\n0 1\n", 3, "0\n1\n-1\n");
        write_dataset(b.path(), "0 1\n", 3, "0\n1\n-1\n");
        assert_eq!(load_graph(a.path()).unwrap(), load_graph(b.path()).unwrap());
        assert_eq!(load_graph(a.path()).unwrap().label(2), None);
    }

    #[test]
    fn diagnostics_name_file_and_line() {
        let d = tempfile::tempdir().unwrap();
        write_dataset(d.path(), "0 1\n2 2\n", 3, "0\n0\n0\n");
        let e = load_graph(d.path()).unwrap_err().to_string();
        assert_eq!(e, "edges.tsv:2: self-loop on node 2");

        write_dataset(d.path(), "0 1\n1 5\n", 3, "0\n0\n0\n");
        let e = load_graph(d.path()).unwrap_err().to_string();
        assert!(e.starts_with("edges.tsv:2: node index 5 out of range"), "{e}");

        write_dataset(d.path(), "0 1\n", 3, "0\n0\n");
        let e = load_graph(d.path()).unwrap_err().to_string();
        assert_eq!(e, "labels.tsv: expected 3 rows, found 2");

        write_dataset(d.path(), "0 1\n", 2, "0\n7\n");
        assert!(load_graph(d.path()).unwrap_err().to_string().starts_with("labels.tsv:2:"));

        write_dataset(d.path(), "0 1\n", 2, "0\n1\n");
        fs::write(d.path().join("features.tsv"), "1 2\ninf 0\n").unwrap();
        assert_eq!(
            load_graph(d.path()).unwrap_err().to_string(),
            "features.tsv:2: non-finite feature value"
        );

        write_dataset(d.path(), "0 1\n", 2, "0\n1\n");
        fs::remove_file(d.path().join("edges.tsv")).unwrap();
        assert!(matches!(load_graph(d.path()), Err(GraphError::Io { .. })));
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = Graph::new(
            "p",
            4,
            [(0, 1), (1, 2), (2, 3)],
            Tensor::identity(4),
            None,
            1,
        )
        .unwrap();
        let s = g.induced_subgraph(&[1, 2, 3]).unwrap();
        assert_eq!(s.num_undirected_edges(), 2);
        assert_eq!(s.neighbors(1), &[0, 2]);
        assert_eq!(s.features().row(0), &[0.0, 1.0, 0.0, 0.0]);
        s.check_invariants().unwrap();
    }
}
