//! Link prediction with a frozen encoder.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fingerprint, EvalError, EvalReport, Result};
use crate::encoder::{encode, EncoderParams};
use crate::graph::Graph;
use crate::splits::EdgeSplit;
use crate::tensor::{Tape, Tensor};
use crate::train::{adam_step, AdamState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// `σ(hᵢ·hⱼ)`, nothing to train.
    Dot,
    /// `σ(hᵢᵀ M hⱼ)` with `M` symmetrised, initialised to the identity and
    /// trained on the training edges.
    #[default]
    Bilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub decoder: Decoder,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seed of the first run; run `r` uses `seed + r`.
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            decoder: Decoder::Bilinear,
            epochs: 200,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(EvalError::EmptySet("positive"));
    }
    if neg.is_empty() {
        return Err(EvalError::EmptySet("negative"));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of midranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        rank_sum += mid * all[start..end].iter().filter(|x| x.1).count() as f64;
        start = end;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

fn dot_scores(h: &Tensor, m: Option<&Tensor>, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(i, j)| match m {
            None => h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum(),
            Some(m) => {
                let (hi, hj) = (h.row(i), h.row(j));
                let mut s = 0.0;
                for (r, a) in hi.iter().enumerate() {
                    for (c, b) in hj.iter().enumerate() {
                        s += a * b * 0.5 * (m.get(r, c) + m.get(c, r));
                    }
                }
                s
            }
        })
        .collect()
}

fn random_non_edge(rng: &mut ChaCha8Rng, g: &Graph) -> (usize, usize) {
    let n = g.num_nodes();
    loop {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && !g.has_edge(i, j) {
            return (i, j);
        }
    }
}

fn train_bilinear(h: &Tensor, train: &Graph, cfg: &LinkConfig, seed: u64) -> Result<Tensor> {
    let d = h.cols();
    let positives: Vec<(usize, usize)> = train.undirected_edges().collect();
    let mut m = Tensor::identity(d);
    let mut adam = AdamState::new([&m]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets = vec![1.0; positives.len()];
    targets.resize(2 * positives.len(), 0.0);
    let targets: Rc<[f64]> = targets.into();
    for _ in 0..cfg.epochs {
        let mut src: Vec<usize> = positives.iter().map(|p| p.0).collect();
        let mut dst: Vec<usize> = positives.iter().map(|p| p.1).collect();
        for _ in 0..positives.len() {
            let (i, j) = random_non_edge(&mut rng, train);
            src.push(i);
            dst.push(j);
        }
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let mv = tape.leaf(m.clone());
        let p = tape.gather_rows(hv, src.into())?;
        let q = tape.gather_rows(hv, dst.into())?;
        let pm = tape.matmul(p, mv)?;
        let qm = tape.matmul(q, mv)?;
        let s1 = tape.row_dot(pm, q)?;
        let s2 = tape.row_dot(qm, p)?;
        let s = tape.add(s1, s2)?;
        let s = tape.scale(s, 0.5)?;
        let loss = tape.bce_with_logits(s, targets.clone())?;
        let grad = tape.backward(loss)?.take(mv).expect("leaf");
        adam_step(&mut [&mut m], &[grad], &mut adam, cfg.learning_rate, 0.0)?;
    }
    Ok(m)
}

/// ROC-AUC on the test edges against the test non-edges, per run. The
/// encoder sees only the training edges.
pub fn link_prediction(
    params: &EncoderParams,
    g: &Graph,
    split: &EdgeSplit,
    cfg: &LinkConfig,
    runs: usize,
) -> Result<EvalReport> {
    if split.test_edges.is_empty() {
        return Err(EvalError::EmptySet("test edge"));
    }
    if split.test_non_edges.is_empty() {
        return Err(EvalError::EmptySet("test non-edge"));
    }
    if runs == 0 {
        return Err(EvalError::Config("runs must be at least 1".into()));
    }
    let train = split.train_graph(g)?;
    if train.num_undirected_edges() == 0 {
        return Err(EvalError::EmptySet("training edge"));
    }
    let h = encode(&train, params)?.h;
    let mut aucs = Vec::with_capacity(runs);
    for r in 0..runs {
        let m = match cfg.decoder {
            Decoder::Dot => None,
            Decoder::Bilinear => Some(train_bilinear(&h, &train, cfg, cfg.seed + r as u64)?),
        };
        let pos = dot_scores(&h, m.as_ref(), &split.test_edges);
        let neg = dot_scores(&h, m.as_ref(), &split.test_non_edges);
        aucs.push(roc_auc(&pos, &neg)?);
    }
    let fp = fingerprint(&(cfg, runs, split.split_seed));
    Ok(EvalReport::new("link_prediction", g.name(), fp, aucs))
}
