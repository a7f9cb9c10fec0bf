//! Edge contrastive loss.
//!
//! For an anchor edge `(i, j)` with embedding `u = [hᵢ ∥ hⱼ]` and
//! `e(x) = exp(cos(u, x) / τ)`:
//!
//! ```text
//! pos = (e(u) + Σ_{k∈N(i)} e([hᵢ∥h_k]) + Σ_{k∈N(j)} e([h_k∥hⱼ])) / (|N(i)| + |N(j)| + 1)
//! den =  e(u) + Σ_{k≠i,j}  e([hᵢ∥h_k]) + Σ_{k≠i,j}  e([h_k∥hⱼ])
//! ℓ   = -ln(pos / den)
//! ```
//!
//! `k` in the denominator ranges over every node, so most of those edges
//! are virtual. The total loss is the mean of `ℓ` over the anchors.
//!
//! Two implementations are provided: [`total_loss`] builds the whole
//! computation from generic tape ops and supports a learned edge map;
//! [`gram_fast_path`] rewrites every cosine through the node Gram matrix
//! `S = H·Hᵀ` and records a single fused op.

mod gram;
mod naive;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::EdgeSet;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use gram::gram_fast_path;
pub use naive::total_loss;

/// Smallest accepted temperature.
pub const MIN_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("temperature {0} is below the minimum {MIN_TEMPERATURE}")]
    BadTemperature(f64),
    #[error("subsample size must be at least 1")]
    EmptySubsample,
    #[error("empty anchor set")]
    EmptyAnchors,
    #[error("embeddings have {rows} rows but the edge set has {nodes} nodes")]
    NodeCount { rows: usize, nodes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Which `k` enter the denominator sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Every node other than the anchor endpoints.
    #[default]
    Full,
    /// `q` nodes per anchor drawn without replacement from the `N - 2`
    /// candidates; the sum is not rescaled.
    Subsample { q: usize },
}

/// Which edges count as positives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSet {
    /// The anchor plus every edge sharing an endpoint with it.
    #[default]
    Topology,
    /// The anchor only (the "without edge contrast" ablation).
    AnchorOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    #[serde(default)]
    pub negatives: NegativeMode,
    #[serde(default)]
    pub positives: PositiveSet,
    /// Seed for negative subsampling.
    #[serde(default)]
    pub negative_seed: u64,
}

impl LossConfig {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            negatives: NegativeMode::Full,
            positives: PositiveSet::Topology,
            negative_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < MIN_TEMPERATURE {
            return Err(LossError::BadTemperature(self.temperature));
        }
        if self.negatives == (NegativeMode::Subsample { q: 0 }) {
            return Err(LossError::EmptySubsample);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub anchors_used: usize,
    /// `ℓ` for each anchor, in anchor order.
    pub per_anchor: Vec<f64>,
}

/// Implementation selector for [`edge_contrastive_loss`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPath {
    /// Gram path when there is no edge map, naive otherwise.
    #[default]
    Auto,
    Naive,
    Gram,
}

/// Mean loss over the anchors of `edges`, on the tape. The Gram path is
/// only valid for the identity edge map; with `w_e` set it falls back to
/// the naive path.
pub fn edge_contrastive_loss(
    tape: &mut Tape,
    h: Var,
    w_e: Option<Var>,
    edges: &EdgeSet,
    cfg: &LossConfig,
    path: LossPath,
) -> Result<(Var, LossReport)> {
    match (path, w_e) {
        (LossPath::Naive, _) | (_, Some(_)) => total_loss(tape, h, w_e, edges, cfg),
        _ => gram_fast_path(tape, h, edges, cfg),
    }
}

/// `ℓ` of a single anchor `(i, j)`, which must be an edge of `edges`.
pub fn anchor_loss(
    tape: &mut Tape,
    h: Var,
    w_e: Option<Var>,
    anchor: (usize, usize),
    edges: &EdgeSet,
    cfg: &LossConfig,
) -> Result<Var> {
    let one = edges
        .with_anchors(vec![anchor])
        .map_err(|_| TensorError::IndexOutOfRange {
            op: "anchor_loss",
            index: anchor.0.max(anchor.1),
            len: edges.num_nodes(),
        })?;
    Ok(total_loss(tape, h, w_e, &one, cfg)?.0)
}

/// Loss whose positive set is only the anchor; the denominator is unchanged.
pub fn ablation_wo_ecl_loss(
    tape: &mut Tape,
    h: Var,
    w_e: Option<Var>,
    edges: &EdgeSet,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let cfg = LossConfig {
        positives: PositiveSet::AnchorOnly,
        ..cfg.clone()
    };
    edge_contrastive_loss(tape, h, w_e, edges, &cfg, LossPath::Auto)
}

/// Loss value for fixed embeddings.
pub fn loss_value(h: &Tensor, edges: &EdgeSet, cfg: &LossConfig) -> Result<LossReport> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    Ok(gram_fast_path(&mut tape, hv, edges, cfg)?.1)
}

fn check_inputs(h: &Tensor, edges: &EdgeSet, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if edges.num_anchors() == 0 {
        return Err(LossError::EmptyAnchors);
    }
    if h.rows() != edges.num_nodes() {
        return Err(LossError::NodeCount {
            rows: h.rows(),
            nodes: edges.num_nodes(),
        });
    }
    Ok(())
}

/// Per-anchor sorted negative sets in subsample mode; `None` for full mode.
fn negative_sets(edges: &EdgeSet, cfg: &LossConfig) -> Option<Vec<Vec<usize>>> {
    let NegativeMode::Subsample { q } = cfg.negatives else {
        return None;
    };
    let n = edges.num_nodes();
    let pool = n.saturating_sub(2);
    let q = q.min(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.negative_seed);
    Some(
        edges
            .anchors()
            .iter()
            .map(|&(i, j)| {
                let (lo, hi) = (i.min(j), i.max(j));
                let mut ks: Vec<usize> = sample(&mut rng, pool, q)
                    .into_iter()
                    .map(|mut k| {
                        if k >= lo {
                            k += 1;
                        }
                        if k >= hi {
                            k += 1;
                        }
                        k
                    })
                    .collect();
                ks.sort_unstable();
                ks
            })
            .collect(),
    )
}

/// Visits the candidates `k` for one side of an anchor: `(k, in_den, in_num)`
/// over the union of the negative set and `nbrs`, ascending.
fn for_each_candidate(
    n: usize,
    anchor: (usize, usize),
    negs: Option<&[usize]>,
    nbrs: &[usize],
    mut f: impl FnMut(usize, bool, bool),
) {
    let (i, j) = anchor;
    let mut p = 0;
    match negs {
        None => {
            for k in 0..n {
                let in_num = p < nbrs.len() && nbrs[p] == k;
                if in_num {
                    p += 1;
                }
                let in_den = k != i && k != j;
                if in_den || in_num {
                    f(k, in_den, in_num);
                }
            }
        }
        Some(negs) => {
            let mut q = 0;
            while q < negs.len() || p < nbrs.len() {
                let a = negs.get(q).copied().unwrap_or(usize::MAX);
                let b = nbrs.get(p).copied().unwrap_or(usize::MAX);
                let k = a.min(b);
                let (in_den, in_num) = (a == k, b == k);
                q += in_den as usize;
                p += in_num as usize;
                f(k, in_den, in_num);
            }
        }
    }
}
