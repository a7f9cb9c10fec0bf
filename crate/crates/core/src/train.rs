//! Training loop: encode, optionally resample edges, contrast, Adam step.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{edge_contrastive_loss, LossConfig, LossError, LossPath, NegativeMode, PositiveSet};
use crate::edges::{sample_edges, AnchorOrientation, EdgeError, EdgeSet};
use crate::encoder::{self, encode_on_tape, init_params, AttentionDropout, AttentionLayout, EncoderParams, NodeEmbeddings};
use crate::graph::Graph;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch}: empty anchor set after edge sampling")]
    EmptyAnchors { epoch: usize },
    #[error("epoch {epoch}: non-finite {what}")]
    NonFinite { epoch: usize, what: &'static str },
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn default_heads() -> usize {
    4
}
fn default_hidden() -> usize {
    32
}
fn default_rate() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    1e-2
}
fn default_wd() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    2000
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Attention heads `K`.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Per-head width `F′`.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub temperature: f64,
    /// Edge keep probability `p_s`.
    #[serde(default = "default_rate")]
    pub edge_sample_rate: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub negatives: NegativeMode,
    #[serde(default)]
    pub positives: PositiveSet,
    #[serde(default)]
    pub anchor_orientation: AnchorOrientation,
    #[serde(default = "default_true")]
    pub resample_every_epoch: bool,
    /// Output width of a learned edge map; `None` keeps concatenation.
    #[serde(default)]
    pub edge_dim: Option<usize>,
    #[serde(default)]
    pub attention_dropout: f64,
    #[serde(default)]
    pub loss_path: LossPath,
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

impl TrainConfig {
    /// Defaults with the given temperature.
    pub fn new(temperature: f64) -> Self {
        Self {
            heads: default_heads(),
            hidden: default_hidden(),
            temperature,
            edge_sample_rate: 1.0,
            learning_rate: default_lr(),
            weight_decay: default_wd(),
            epochs: default_epochs(),
            seed: 0,
            negatives: NegativeMode::Full,
            positives: PositiveSet::Topology,
            anchor_orientation: AnchorOrientation::Both,
            resample_every_epoch: true,
            edge_dim: None,
            attention_dropout: 0.0,
            loss_path: LossPath::Auto,
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.heads == 0 || self.hidden == 0 {
            return bad("heads and hidden must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.edge_sample_rate > 0.0 && self.edge_sample_rate <= 1.0) {
            return bad("edge_sample_rate must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return bad("attention_dropout must lie in [0, 1)");
        }
        if self.edge_dim == Some(0) {
            return bad("edge_dim must be positive");
        }
        self.loss_config(0).validate()?;
        Ok(())
    }

    fn loss_config(&self, epoch: usize) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            negatives: self.negatives,
            positives: self.positives,
            negative_seed: derive_seed(self.seed, 2, epoch as u64),
        }
    }
}

/// Independent seed per purpose and epoch.
fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the mixed inputs
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Encoder parameters plus the optional learned edge map.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// `edge_dim × 2KF′`.
    pub edge_map: Option<Tensor>,
}

impl ModelParams {
    pub fn init(num_features: usize, cfg: &TrainConfig) -> Self {
        let encoder = init_params(num_features, cfg.hidden, cfg.heads, cfg.seed);
        let width = 2 * encoder.output_dim();
        let edge_map = cfg.edge_dim.map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3, 0));
            let bound = (6.0 / (d + width) as f64).sqrt();
            let data = (0..d * width).map(|_| rand::Rng::gen_range(&mut rng, -bound..bound)).collect();
            Tensor::from_vec(d, width, data).expect("sized")
        });
        Self { encoder, edge_map }
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for h in &self.encoder.heads {
            out.push(&h.weight);
            out.push(&h.attention);
        }
        out.extend(self.edge_map.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for h in &mut self.encoder.heads {
            out.push(&mut h.weight);
            out.push(&mut h.attention);
        }
        out.extend(self.edge_map.as_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `weight_decay·param` is added to the
/// gradient before the moments are updated.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::BadLength {
            rows: params.len(),
            cols: 1,
            len: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(TensorError::NonFinite { op: "adam_step" });
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (idx, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g.data()[idx] + weight_decay * *w;
            m[idx] = b1 * m[idx] + (1.0 - b1) * gi;
            v[idx] = b2 * v[idx] + (1.0 - b2) * gi * gi;
            let m_hat = m[idx] / c1;
            let v_hat = v[idx] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub loss: f64,
    pub anchors: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Embeddings of the final parameters on the full graph.
    pub embeddings: NodeEmbeddings,
    pub trace: Vec<EpochRecord>,
}

/// Trains from a fresh initialisation; `on_epoch` sees every trace record.
pub fn train_with(g: &Graph, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let mut params = ModelParams::init(g.num_features(), cfg);
    let mut adam = AdamState::new(params.tensors());
    let layout = AttentionLayout::new(g);
    let full = EdgeSet::from_graph(g, cfg.anchor_orientation);
    let mut fixed: Option<EdgeSet> = None;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4, 0));
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let sampled;
        let edges: &EdgeSet = if cfg.edge_sample_rate == 1.0 {
            &full
        } else if cfg.resample_every_epoch || fixed.is_none() {
            let seed = derive_seed(cfg.seed, 1, epoch as u64);
            sampled = sample_edges(g, cfg.edge_sample_rate, seed, cfg.anchor_orientation)?.edges;
            if !cfg.resample_every_epoch {
                fixed = Some(sampled.clone());
            }
            &sampled
        } else {
            fixed.as_ref().expect("sampled once")
        };
        if edges.num_anchors() == 0 {
            return Err(TrainError::EmptyAnchors { epoch });
        }

        let mut tape = Tape::new();
        let x = tape.constant(g.features().clone());
        let heads = encoder::register_params(&mut tape, &params.encoder);
        let w_e = params.edge_map.as_ref().map(|w| tape.leaf(w.clone()));
        let dropout = (cfg.attention_dropout > 0.0).then_some(AttentionDropout {
            rate: cfg.attention_dropout,
            rng: &mut dropout_rng,
        });
        let h = encode_on_tape(&mut tape, x, &heads, &layout, cfg.hidden, dropout)?;
        let (loss, report) = edge_contrastive_loss(&mut tape, h, w_e, edges, &cfg.loss_config(epoch), cfg.loss_path)?;
        if !report.loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, what: "loss" });
        }
        let mut grads = tape.backward(loss)?;
        let mut flat = Vec::new();
        for hv in &heads {
            flat.push(grads.take(hv.weight).expect("leaf"));
            flat.push(grads.take(hv.attention).expect("leaf"));
        }
        if let Some(w) = w_e {
            flat.push(grads.take(w).expect("leaf"));
        }
        adam_step(&mut params.tensors_mut(), &flat, &mut adam, cfg.learning_rate, cfg.weight_decay).map_err(|e| match e {
            TensorError::NonFinite { .. } => TrainError::NonFinite { epoch, what: "gradient" },
            other => other.into(),
        })?;
        if !params.encoder.is_finite() {
            return Err(TrainError::NonFinite { epoch, what: "parameters" });
        }

        let record = EpochRecord {
            epoch,
            loss: report.loss,
            anchors: report.anchors_used,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&record);
        trace.push(record);
    }

    let embeddings = encoder::encode(g, &params.encoder)?;
    Ok(TrainOutput {
        params,
        embeddings,
        trace,
    })
}

pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    train_with(g, cfg, |_| {})
}
