use std::rc::Rc;

use super::{check_inputs, for_each_candidate, negative_sets, LossConfig, LossReport, PositiveSet, Result};
use crate::edges::{edge_embeddings, EdgeSet};
use crate::tensor::{Tape, Tensor, Var};

/// Mean edge contrastive loss built from generic tape ops. Every positive
/// and negative edge embedding is materialised, so memory grows with
/// `anchors × candidates × width`; intended for small graphs, learned edge
/// maps, subsampled negatives and as a reference for the Gram path.
pub fn total_loss(
    tape: &mut Tape,
    h: Var,
    w_e: Option<Var>,
    edges: &EdgeSet,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    check_inputs(tape.value(h), edges, cfg)?;
    let n = edges.num_nodes();
    let anchors = edges.anchors();
    let negs = negative_sets(edges, cfg);
    let topology = cfg.positives == PositiveSet::Topology;

    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut owner = Vec::new();
    let mut num_w = Vec::new();
    let mut den_w = Vec::new();
    let mut offsets = vec![0];
    let mut inv_count = Vec::with_capacity(anchors.len());
    for (a, &(i, j)) in anchors.iter().enumerate() {
        let neg = negs.as_ref().map(|v| v[a].as_slice());
        let mut push = |s: usize, d: usize, in_den: bool, in_num: bool| {
            src.push(s);
            dst.push(d);
            owner.push(a);
            den_w.push(if in_den { 1.0 } else { 0.0 });
            num_w.push(if in_num && topology { 1.0 } else { 0.0 });
        };
        for_each_candidate(n, (i, j), neg, edges.neighbors(i), |k, d, p| push(i, k, d, p));
        for_each_candidate(n, (i, j), neg, edges.neighbors(j), |k, d, p| push(k, j, d, p));
        offsets.push(src.len());
        let count = if topology {
            edges.degree(i) + edges.degree(j) + 1
        } else {
            1
        };
        inv_count.push(1.0 / count as f64);
    }

    let inv_tau = 1.0 / cfg.temperature;
    let offsets: Rc<[usize]> = offsets.into();
    let a_src: Rc<[usize]> = anchors.iter().map(|p| p.0).collect();
    let a_dst: Rc<[usize]> = anchors.iter().map(|p| p.1).collect();

    let anchor_emb = edge_embeddings(tape, h, a_src, a_dst, w_e)?;
    let virt = edge_embeddings(tape, h, src.into(), dst.into(), w_e)?;
    let rep = tape.gather_rows(anchor_emb, owner.into())?;
    let cos = tape.row_cosine(rep, virt)?;
    let logits = tape.scale(cos, inv_tau)?;
    let e = tape.exp(logits)?;
    let self_cos = tape.row_cosine(anchor_emb, anchor_emb)?;
    let self_logit = tape.scale(self_cos, inv_tau)?;
    let e_self = tape.exp(self_logit)?;

    let pos = tape.weighted_segment_sum(e, num_w.into(), offsets.clone())?;
    let neg = tape.weighted_segment_sum(e, den_w.into(), offsets)?;
    let pos = tape.add(e_self, pos)?;
    let scale = tape.constant(Tensor::column(inv_count));
    let numerator = tape.mul(pos, scale)?;
    let denominator = tape.add(e_self, neg)?;
    let log_den = tape.log(denominator)?;
    let log_num = tape.log(numerator)?;
    let per_anchor = tape.sub(log_den, log_num)?;
    let loss = tape.mean(per_anchor)?;

    let report = LossReport {
        loss: tape.value(loss).data()[0],
        anchors_used: anchors.len(),
        per_anchor: tape.value(per_anchor).data().to_vec(),
    };
    Ok((loss, report))
}
