//! Anchor edge sets, per-epoch Bernoulli edge sampling and edge embeddings.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::{self, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("sampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("empty anchor set")]
    EmptyAnchors,
    #[error("anchor ({0}, {1}) is not an edge")]
    NotAnEdge(usize, usize),
    #[error("node index {index} out of range for {num_nodes} nodes")]
    OutOfRange { index: usize, num_nodes: usize },
}

/// Which orientations of each undirected edge serve as anchors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorOrientation {
    /// `(i, j)` and `(j, i)` for every undirected edge.
    #[default]
    Both,
    /// Only `(i, j)` with `i < j`.
    Canonical,
}

/// An edge set over `num_nodes` nodes: symmetric adjacency used for the
/// positive sets, plus the ordered anchors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    anchors: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Every edge of `g` as an anchor set.
    pub fn from_graph(g: &Graph, orientation: AnchorOrientation) -> Self {
        Self::from_csr(g.num_nodes(), g.offsets().to_vec(), g.csr_neighbors().to_vec(), orientation)
    }

    /// Builds from undirected pairs (any orientation, no duplicates required).
    pub fn from_undirected(
        num_nodes: usize,
        edges: &[(usize, usize)],
        orientation: AnchorOrientation,
    ) -> Result<Self, EdgeError> {
        let mut adj = vec![Vec::new(); num_nodes];
        for &(i, j) in edges {
            for x in [i, j] {
                if x >= num_nodes {
                    return Err(EdgeError::OutOfRange { index: x, num_nodes });
                }
            }
            if i == j {
                return Err(EdgeError::NotAnEdge(i, j));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self::from_csr(num_nodes, offsets, neighbors, orientation))
    }

    fn from_csr(num_nodes: usize, offsets: Vec<usize>, neighbors: Vec<usize>, orientation: AnchorOrientation) -> Self {
        let mut anchors = Vec::new();
        for i in 0..num_nodes {
            for &j in &neighbors[offsets[i]..offsets[i + 1]] {
                if orientation == AnchorOrientation::Both || i < j {
                    anchors.push((i, j));
                }
            }
        }
        Self {
            num_nodes,
            offsets,
            neighbors,
            anchors,
        }
    }

    /// Same adjacency, explicit anchor list. Every anchor must be an edge.
    pub fn with_anchors(&self, anchors: Vec<(usize, usize)>) -> Result<Self, EdgeError> {
        for &(i, j) in &anchors {
            if i >= self.num_nodes || j >= self.num_nodes {
                return Err(EdgeError::OutOfRange {
                    index: i.max(j),
                    num_nodes: self.num_nodes,
                });
            }
            if !self.has_edge(i, j) {
                return Err(EdgeError::NotAnEdge(i, j));
            }
        }
        Ok(Self {
            anchors,
            ..self.clone()
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
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

    pub fn num_undirected_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// True when `(i, j)` kept implies `(j, i)` kept.
    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|i| self.neighbors(i).iter().all(|&j| self.has_edge(j, i)))
    }
}

/// Result of one Bernoulli thinning of a graph's undirected edges.
#[derive(Clone, Debug)]
pub struct SampledEdgeSet {
    /// Kept edges with their anchors.
    pub edges: EdgeSet,
    /// One draw per undirected edge of the base graph, in canonical order.
    pub mask: Vec<bool>,
    pub rate: f64,
    pub seed: u64,
}

impl SampledEdgeSet {
    pub fn kept(&self) -> usize {
        self.edges.num_undirected_edges()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pairs: Vec<[usize; 2]> = self.edges.undirected_edges().map(|(i, j)| [i, j]).collect();
        serde_json::json!({ "p_s": self.rate, "seed": self.seed, "pairs": pairs })
    }
}

/// Keeps each undirected edge independently with probability `p_s`; both
/// orientations of an edge share one draw. `p_s = 1` keeps everything.
pub fn sample_edges(
    g: &Graph,
    p_s: f64,
    seed: u64,
    orientation: AnchorOrientation,
) -> Result<SampledEdgeSet, EdgeError> {
    if !(p_s > 0.0 && p_s <= 1.0) {
        return Err(EdgeError::BadRate(p_s));
    }
    if p_s == 1.0 {
        return Ok(SampledEdgeSet {
            edges: EdgeSet::from_graph(g, orientation),
            mask: vec![true; g.num_undirected_edges()],
            rate: p_s,
            seed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Vec::with_capacity(g.num_undirected_edges());
    let mut kept = Vec::new();
    for e in g.undirected_edges() {
        let keep = rng.gen::<f64>() < p_s;
        mask.push(keep);
        if keep {
            kept.push(e);
        }
    }
    let edges = EdgeSet::from_undirected(g.num_nodes(), &kept, orientation)?;
    Ok(SampledEdgeSet {
        edges,
        mask,
        rate: p_s,
        seed,
    })
}

/// Edge embeddings `W_e·[h_src ∥ h_dst]` for index-aligned endpoint lists;
/// without `w_e` the map is the identity. `w_e` is `D′ × 2D`.
pub fn edge_embeddings(
    tape: &mut Tape,
    h: Var,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    w_e: Option<Var>,
) -> tensor::Result<Var> {
    let left = tape.gather_rows(h, src)?;
    let right = tape.gather_rows(h, dst)?;
    let cat = tape.concat_cols(&[left, right])?;
    match w_e {
        Some(w) => tape.matmul_nt(cat, w),
        None => Ok(cat),
    }
}

/// The edge embedding of a single anchor, on the tape.
pub fn edge_embedding(tape: &mut Tape, h: Var, anchor: (usize, usize), w_e: Option<Var>) -> tensor::Result<Var> {
    let n = tape.value(h).rows();
    for x in [anchor.0, anchor.1] {
        if x >= n {
            return Err(TensorError::IndexOutOfRange {
                op: "edge_embedding",
                index: x,
                len: n,
            });
        }
    }
    edge_embeddings(tape, h, Rc::from([anchor.0]), Rc::from([anchor.1]), w_e)
}

/// `W_e·[hᵢ ∥ hⱼ]` as a plain vector.
pub fn edge_embedding_value(h: &Tensor, anchor: (usize, usize), w_e: Option<&Tensor>) -> tensor::Result<Vec<f64>> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w = w_e.map(|w| tape.constant(w.clone()));
    let e = edge_embedding(&mut tape, hv, anchor, w)?;
    Ok(tape.value(e).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Graph {
        Graph::new("ring", n, (0..n).map(|i| (i, (i + 1) % n)), Tensor::zeros(n, 1), None, 1).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn anchors_cover_requested_orientations() {
        let g = ring(5);
        let both = EdgeSet::from_graph(&g, AnchorOrientation::Both);
        assert_eq!(both.num_anchors(), 10);
        assert!(both.anchors().contains(&(1, 0)) && both.anchors().contains(&(0, 1)));
        let canon = EdgeSet::from_graph(&g, AnchorOrientation::Canonical);
        assert_eq!(canon.num_anchors(), 5);
        assert!(canon.anchors().iter().all(|&(i, j)| i < j));
        assert!(matches!(both.with_anchors(vec![(0, 2)]), Err(EdgeError::NotAnEdge(0, 2))));
    }

    #[test]
    fn full_rate_is_identity() {
        let g = ring(6);
        let s = sample_edges(&g, 1.0, 3, AnchorOrientation::Both).unwrap();
        assert_eq!(s.edges, EdgeSet::from_graph(&g, AnchorOrientation::Both));
        assert_eq!(s.kept(), 6);
    }

    #[test]
    fn rate_out_of_range_is_rejected() {
        let g = ring(4);
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(sample_edges(&g, p, 0, AnchorOrientation::Both), Err(EdgeError::BadRate(_))));
        }
    }

    #[test]
    fn sampling_is_symmetric_and_reproducible() {
        let g = ring(40);
        for seed in 0..100 {
            let a = sample_edges(&g, 0.5, seed, AnchorOrientation::Both).unwrap();
            assert!(a.edges.is_symmetric());
            assert_eq!(a.edges.num_anchors(), 2 * a.kept());
            assert_eq!(a.mask.iter().filter(|&&m| m).count(), a.kept());
            let b = sample_edges(&g, 0.5, seed, AnchorOrientation::Both).unwrap();
            assert_eq!(a.edges, b.edges);
            for (i, j) in a.edges.undirected_edges() {
                assert!(g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn kept_count_is_binomial() {
        let n = 2000;
        let g = ring(n);
        let trials = 100;
        let mean = (0..trials)
            .map(|s| sample_edges(&g, 0.3, s, AnchorOrientation::Both).unwrap().kept() as f64)
            .sum::<f64>()
            / trials as f64;
        let expected = 0.3 * n as f64;
        let sd_mean = (n as f64 * 0.3 * 0.7 / trials as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd_mean, "{mean} vs {expected}");
    }

    #[test]
    fn json_export_lists_pairs() {
        let s = sample_edges(&ring(3), 1.0, 7, AnchorOrientation::Both).unwrap();
        let v = s.to_json();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn identity_edge_embedding_concatenates_bitwise() {
        let h = random(4, 3, 1);
        let e01 = edge_embedding_value(&h, (0, 1), None).unwrap();
        assert_eq!(&e01[..3], h.row(0));
        assert_eq!(&e01[3..], h.row(1));
        let e10 = edge_embedding_value(&h, (1, 0), None).unwrap();
        assert_eq!(&e01[..3], &e10[3..]);
        assert!(matches!(
            edge_embedding_value(&h, (0, 4), None),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn learned_edge_map_matches_dense_product() {
        let h = random(5, 4, 2);
        let w = random(8, 8, 3);
        let got = edge_embedding_value(&h, (3, 1), Some(&w)).unwrap();
        let cat: Vec<f64> = h.row(3).iter().chain(h.row(1)).copied().collect();
        for r in 0..8 {
            let want: f64 = (0..8).map(|c| w.get(r, c) * cat[c]).sum();
            assert!((got[r] - want).abs() < 1e-12);
        }
    }
}
