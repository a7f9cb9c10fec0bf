//! Reproducible node-label splits and edge splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("class {class} has {have} labeled nodes, need at least {need}")]
    ClassTooSmall { class: usize, have: usize, need: usize },
    #[error("only {have} labeled nodes remain after training selection, need more than {need}")]
    TooFewLabeled { have: usize, need: usize },
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("edge split leaves the {0} set empty")]
    EmptySet(&'static str),
    #[error("not enough non-adjacent pairs to sample {0} negatives")]
    TooDense(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How many labeled nodes go to validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSize {
    /// Fixed total drawn from all remaining labeled nodes.
    Total(usize),
    /// Fixed count per class.
    PerClass(usize),
}

impl Default for ValidationSize {
    fn default() -> Self {
        ValidationSize::Total(500)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub labels_per_class: usize,
    pub split_seed: u64,
    pub split_index: usize,
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `num_splits` independent splits with `c` training nodes per class and
/// 500 validation nodes in total; the remaining labeled nodes are test.
pub fn make_node_splits(
    g: &Graph,
    c: usize,
    num_splits: usize,
    seed: u64,
) -> Result<Vec<SplitSpec>, SplitError> {
    make_node_splits_with(g, c, num_splits, seed, ValidationSize::default())
}

pub fn make_node_splits_with(
    g: &Graph,
    c: usize,
    num_splits: usize,
    seed: u64,
    validation: ValidationSize,
) -> Result<Vec<SplitSpec>, SplitError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
    for (i, l) in g.labels().iter().enumerate() {
        if let Some(l) = l {
            by_class[*l].push(i);
        }
    }
    let per_class_val = match validation {
        ValidationSize::PerClass(v) => v,
        ValidationSize::Total(_) => 0,
    };
    for (class, nodes) in by_class.iter().enumerate() {
        if nodes.len() < c + per_class_val {
            return Err(SplitError::ClassTooSmall {
                class,
                have: nodes.len(),
                need: c + per_class_val,
            });
        }
    }

    (0..num_splits)
        .map(|s| {
            let mut rng = split_rng(seed, s as u64);
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut rest = Vec::new();
            for nodes in &by_class {
                let mut shuffled = nodes.clone();
                shuffled.shuffle(&mut rng);
                train.extend_from_slice(&shuffled[..c]);
                match validation {
                    ValidationSize::PerClass(v) => {
                        val.extend_from_slice(&shuffled[c..c + v]);
                        rest.extend_from_slice(&shuffled[c + v..]);
                    }
                    ValidationSize::Total(_) => rest.extend_from_slice(&shuffled[c..]),
                }
            }
            if let ValidationSize::Total(v) = validation {
                if rest.len() <= v {
                    return Err(SplitError::TooFewLabeled {
                        have: rest.len(),
                        need: v,
                    });
                }
                rest.sort_unstable();
                rest.shuffle(&mut rng);
                val.extend(rest.drain(..v));
            }
            if rest.is_empty() {
                return Err(SplitError::TooFewLabeled { have: 0, need: 1 });
            }
            train.sort_unstable();
            val.sort_unstable();
            rest.sort_unstable();
            Ok(SplitSpec {
                train_nodes: train,
                val_nodes: val,
                test_nodes: rest,
                labels_per_class: c,
                split_seed: seed,
                split_index: s,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_edges: Vec<(usize, usize)>,
    pub val_edges: Vec<(usize, usize)>,
    pub test_edges: Vec<(usize, usize)>,
    pub test_non_edges: Vec<(usize, usize)>,
    pub split_seed: u64,
}

impl EdgeSplit {
    /// The graph restricted to training edges, used for encoder training
    /// and message passing at evaluation time.
    pub fn train_graph(&self, g: &Graph) -> Result<Graph, GraphError> {
        g.with_edges(self.train_edges.iter().copied())
    }
}

/// Partitions undirected edges into train/val/test by shuffled assignment and
/// samples one non-adjacent pair per test edge.
pub fn make_edge_splits(g: &Graph, ratios: (f64, f64, f64), seed: u64) -> Result<EdgeSplit, SplitError> {
    let (tr, va, te) = ratios;
    let ok = [tr, va, te].iter().all(|r| r.is_finite() && *r > 0.0) && ((tr + va + te) - 1.0).abs() < 1e-9;
    if !ok {
        return Err(SplitError::BadRatios(ratios));
    }
    let mut edges: Vec<(usize, usize)> = g.undirected_edges().collect();
    let total = edges.len();
    let n_test = (te * total as f64).round() as usize;
    let n_val = (va * total as f64).round() as usize;
    if n_test == 0 {
        return Err(SplitError::EmptySet("test"));
    }
    if n_val == 0 {
        return Err(SplitError::EmptySet("validation"));
    }
    if n_test + n_val >= total {
        return Err(SplitError::EmptySet("train"));
    }

    let mut rng = split_rng(seed, 0);
    edges.shuffle(&mut rng);
    let mut test_edges = edges[..n_test].to_vec();
    let mut val_edges = edges[n_test..n_test + n_val].to_vec();
    let mut train_edges = edges[n_test + n_val..].to_vec();
    test_edges.sort_unstable();
    val_edges.sort_unstable();
    train_edges.sort_unstable();

    let n = g.num_nodes();
    let available = n * (n - 1) / 2 - total;
    if available < n_test {
        return Err(SplitError::TooDense(n_test));
    }
    let mut chosen = BTreeSet::new();
    let mut test_non_edges = Vec::with_capacity(n_test);
    while test_non_edges.len() < n_test {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let pair = (i.min(j), i.max(j));
        if g.has_edge(pair.0, pair.1) || !chosen.insert(pair) {
            continue;
        }
        test_non_edges.push(pair);
    }

    Ok(EdgeSplit {
        train_edges,
        val_edges,
        test_edges,
        test_non_edges,
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn labeled_ring(n: usize, classes: usize) -> Graph {
        let edges = (0..n).map(|i| (i, (i + 1) % n));
        let labels = (0..n).map(|i| Some(i % classes)).collect();
        Graph::new("ring", n, edges, Tensor::zeros(n, 1), Some(labels), classes).unwrap()
    }

    #[test]
    fn node_splits_have_c_per_class_and_are_disjoint() {
        let g = labeled_ring(1400, 7);
        let splits = make_node_splits(&g, 20, 3, 0).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            assert_eq!(s.train_nodes.len(), 140);
            assert_eq!(s.val_nodes.len(), 500);
            assert_eq!(s.test_nodes.len(), 1400 - 640);
            let mut counts = [0; 7];
            for &i in &s.train_nodes {
                counts[g.label(i).unwrap()] += 1;
            }
            assert_eq!(counts, [20; 7]);
            let all: BTreeSet<_> = s.train_nodes.iter().chain(&s.val_nodes).chain(&s.test_nodes).collect();
            assert_eq!(all.len(), 1400);
        }
        assert_ne!(splits[0], splits[1]);
        let one = make_node_splits(&g, 1, 1, 0).unwrap();
        assert_eq!(one[0].train_nodes.len(), 7);
    }

    #[test]
    fn node_splits_are_reproducible() {
        let g = labeled_ring(900, 3);
        let a = serde_json::to_string(&make_node_splits(&g, 5, 4, 42).unwrap()).unwrap();
        let b = serde_json::to_string(&make_node_splits(&g, 5, 4, 42).unwrap()).unwrap();
        let c = serde_json::to_string(&make_node_splits(&g, 5, 4, 43).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn per_class_validation_and_small_class_error() {
        let g = labeled_ring(60, 3);
        let s = make_node_splits_with(&g, 2, 1, 0, ValidationSize::PerClass(5)).unwrap();
        assert_eq!(s[0].val_nodes.len(), 15);
        assert!(matches!(
            make_node_splits_with(&g, 2, 1, 0, ValidationSize::PerClass(30)),
            Err(SplitError::ClassTooSmall { need: 32, .. })
        ));
        assert!(matches!(make_node_splits(&g, 2, 1, 0), Err(SplitError::TooFewLabeled { .. })));
    }

    #[test]
    fn triangle_edge_split_one_each() {
        let g = Graph::new("tri", 4, [(0, 1), (1, 2), (0, 2)], Tensor::zeros(4, 1), None, 1).unwrap();
        let third = 1.0 / 3.0;
        let s = make_edge_splits(&g, (1.0 - 2.0 * third, third, third), 1).unwrap();
        assert_eq!((s.train_edges.len(), s.val_edges.len(), s.test_edges.len()), (1, 1, 1));
        assert_eq!(s.test_non_edges.len(), 1);
        let ne = s.test_non_edges[0];
        assert!(!g.has_edge(ne.0, ne.1) && ne.0 != ne.1);
        let tg = s.train_graph(&g).unwrap();
        tg.check_invariants().unwrap();
        assert_eq!(tg.num_undirected_edges(), 1);
    }

    #[test]
    fn edge_split_rejects_bad_ratios() {
        let g = labeled_ring(10, 2);
        assert!(matches!(make_edge_splits(&g, (0.9, 0.1, 0.0), 0), Err(SplitError::BadRatios(_))));
        assert!(matches!(make_edge_splits(&g, (0.5, 0.2, 0.2), 0), Err(SplitError::BadRatios(_))));
        assert!(matches!(make_edge_splits(&g, (0.92, 0.04, 0.04), 0), Err(SplitError::EmptySet(_))));
    }

    #[test]
    fn edge_split_partitions_and_reproduces() {
        let g = labeled_ring(200, 2);
        let a = make_edge_splits(&g, (0.85, 0.05, 0.10), 9).unwrap();
        assert_eq!(a, make_edge_splits(&g, (0.85, 0.05, 0.10), 9).unwrap());
        assert_eq!(a.test_edges.len(), 20);
        assert_eq!(a.val_edges.len(), 10);
        let mut all: Vec<_> = a.train_edges.iter().chain(&a.val_edges).chain(&a.test_edges).copied().collect();
        all.sort_unstable();
        let mut want: Vec<_> = g.undirected_edges().collect();
        want.sort_unstable();
        assert_eq!(all, want);
        let tg = a.train_graph(&g).unwrap();
        for &(i, j) in a.val_edges.iter().chain(&a.test_edges) {
            assert!(!tg.has_edge(i, j));
        }
        tg.check_invariants().unwrap();
    }
}
