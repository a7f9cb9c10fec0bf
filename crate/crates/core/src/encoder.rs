//! Single-layer multi-head graph-attention encoder.
//!
//! For head `k`, node `i` attends over `N(i) ∪ {i}` with logits
//! `LeakyReLU(aₖ · [Wₖxᵢ ∥ Wₖxₚ])`, normalised by a per-node softmax, and
//! emits `ELU(Σₚ αᵢₚ Wₖxₚ)`. Head outputs are concatenated column-wise.
//! The self term lives only in the attention layout, never in the graph.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    /// `F′ × F` projection.
    pub weight: Tensor,
    /// `2F′ × 1` attention vector; the first half scores the centre node.
    pub attention: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub num_features: usize,
    pub hidden: usize,
    pub heads: Vec<AttentionHead>,
    pub init_seed: u64,
}

impl EncoderParams {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Width of a node embedding, `K·F′`.
    pub fn output_dim(&self) -> usize {
        self.heads.len() * self.hidden
    }

    pub fn is_finite(&self) -> bool {
        self.heads
            .iter()
            .all(|h| h.weight.is_finite() && h.attention.is_finite())
    }
}

/// Frozen node embeddings `H`, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub h: Tensor,
    pub heads: usize,
    pub hidden: usize,
}

impl Tensor {
    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(rows, cols, data).expect("sized")
    }
}

/// Glorot-uniform initialisation, deterministic per seed.
pub fn init_params(num_features: usize, hidden: usize, heads: usize, seed: u64) -> EncoderParams {
    assert!(num_features > 0 && hidden > 0 && heads > 0, "encoder dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = (0..heads)
        .map(|_| AttentionHead {
            weight: Tensor::glorot(hidden, num_features, &mut rng),
            attention: Tensor::glorot(2 * hidden, 1, &mut rng),
        })
        .collect();
    EncoderParams {
        num_features,
        hidden,
        heads,
        init_seed: seed,
    }
}

/// CSR layout of the attention segments `N(i) ∪ {i}`, sorted per node.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub offsets: Rc<[usize]>,
    /// Attended node `p` for each entry.
    pub cols: Rc<[usize]>,
    /// Centre node `i` for each entry.
    pub rows: Rc<[usize]>,
}

impl AttentionLayout {
    pub fn new(g: &Graph) -> Self {
        let n = g.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(g.num_directed_edges() + n);
        let mut rows = Vec::with_capacity(cols.capacity());
        offsets.push(0);
        for i in 0..n {
            let nb = g.neighbors(i);
            let split = nb.partition_point(|&p| p < i);
            cols.extend_from_slice(&nb[..split]);
            cols.push(i);
            cols.extend_from_slice(&nb[split..]);
            rows.resize(cols.len(), i);
            offsets.push(cols.len());
        }
        Self {
            offsets: offsets.into(),
            cols: cols.into(),
            rows: rows.into(),
        }
    }

    pub fn segment(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Tape handles for one head's parameters.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub attention: Var,
}

/// Registers every head's parameters as trainable leaves.
pub fn register_params(tape: &mut Tape, params: &EncoderParams) -> Vec<HeadVars> {
    params
        .heads
        .iter()
        .map(|h| HeadVars {
            weight: tape.leaf(h.weight.clone()),
            attention: tape.leaf(h.attention.clone()),
        })
        .collect()
}

/// Optional training-time dropout on attention coefficients.
pub struct AttentionDropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn head_forward(
    tape: &mut Tape,
    x: Var,
    head: HeadVars,
    layout: &AttentionLayout,
    hidden: usize,
    dropout: Option<&mut AttentionDropout<'_>>,
) -> Result<(Var, Var)> {
    let z = tape.matmul_nt(x, head.weight)?;
    let a_src = tape.slice_rows(head.attention, 0, hidden)?;
    let a_dst = tape.slice_rows(head.attention, hidden, 2 * hidden)?;
    let s_src = tape.matmul(z, a_src)?;
    let s_dst = tape.matmul(z, a_dst)?;
    let e_src = tape.gather_rows(s_src, layout.rows.clone())?;
    let e_dst = tape.gather_rows(s_dst, layout.cols.clone())?;
    let logits = tape.add(e_src, e_dst)?;
    let logits = tape.leaky_relu(logits, LEAKY_RELU_SLOPE)?;
    let alpha = tape.segment_softmax(logits, layout.offsets.clone())?;
    let weights = match dropout {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let mask: Vec<f64> = (0..layout.cols.len())
                .map(|_| if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = tape.constant(Tensor::column(mask));
            tape.mul(alpha, mask)?
        }
        _ => alpha,
    };
    let agg = tape.segment_aggregate(weights, z, layout.cols.clone(), layout.offsets.clone())?;
    Ok((tape.elu(agg, ELU_ALPHA)?, alpha))
}

fn check_dims(g: &Graph, params: &EncoderParams) -> Result<()> {
    if g.num_features() != params.num_features {
        return Err(TensorError::ShapeMismatch {
            op: "encode",
            left: (g.num_nodes(), g.num_features()),
            right: (params.hidden, params.num_features),
        });
    }
    Ok(())
}

/// Runs the encoder on the tape; returns `H` (`N × K·F′`).
pub fn encode_on_tape(
    tape: &mut Tape,
    x: Var,
    heads: &[HeadVars],
    layout: &AttentionLayout,
    hidden: usize,
    mut dropout: Option<AttentionDropout<'_>>,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let (h, _) = head_forward(tape, x, *head, layout, hidden, dropout.as_mut())?;
        outs.push(h);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    tape.concat_cols(&outs)
}

/// Forward pass with fixed parameters.
pub fn encode(g: &Graph, params: &EncoderParams) -> Result<NodeEmbeddings> {
    check_dims(g, params)?;
    let layout = AttentionLayout::new(g);
    let mut tape = Tape::new();
    let x = tape.constant(g.features().clone());
    let heads: Vec<HeadVars> = params
        .heads
        .iter()
        .map(|h| HeadVars {
            weight: tape.constant(h.weight.clone()),
            attention: tape.constant(h.attention.clone()),
        })
        .collect();
    let h = encode_on_tape(&mut tape, x, &heads, &layout, params.hidden, None)?;
    Ok(NodeEmbeddings {
        h: tape.value(h).clone(),
        heads: params.num_heads(),
        hidden: params.hidden,
    })
}

/// Attention coefficients of one head, laid out as in [`AttentionLayout`].
pub struct AttentionCoefficients {
    pub layout: AttentionLayout,
    pub alpha: Vec<f64>,
}

impl AttentionCoefficients {
    /// `(p, αᵢₚ)` pairs for node `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.layout
            .segment(i)
            .map(move |e| (self.layout.cols[e], self.alpha[e]))
    }
}

pub fn attention_coefficients(g: &Graph, params: &EncoderParams, head: usize) -> Result<AttentionCoefficients> {
    check_dims(g, params)?;
    let h = params.heads.get(head).ok_or(TensorError::IndexOutOfRange {
        op: "attention_coefficients",
        index: head,
        len: params.num_heads(),
    })?;
    let layout = AttentionLayout::new(g);
    let mut tape = Tape::new();
    let x = tape.constant(g.features().clone());
    let vars = HeadVars {
        weight: tape.constant(h.weight.clone()),
        attention: tape.constant(h.attention.clone()),
    };
    let (_, alpha) = head_forward(&mut tape, x, vars, &layout, params.hidden, None)?;
    let alpha = tape.value(alpha).data().to_vec();
    Ok(AttentionCoefficients { layout, alpha })
}
