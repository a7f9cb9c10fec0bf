//! Gram-matrix evaluation of the edge contrastive loss.
//!
//! With `S = H·Hᵀ` and `nᵢ = Sᵢᵢ`, every cosine the loss needs is
//!
//! ```text
//! cos([hᵢ∥hⱼ], [hᵢ∥h_k]) = (nᵢ + Sⱼₖ) / sqrt((nᵢ + nⱼ)(nᵢ + n_k))
//! cos([hᵢ∥hⱼ], [h_k∥hⱼ]) = (nⱼ + Sᵢₖ) / sqrt((nᵢ + nⱼ)(nⱼ + n_k))
//! ```
//!
//! Both sides share the shape `(n_c + S_ok) · c · r` where `c` is the shared
//! ("centre") endpoint, `o` the other endpoint, `c = (nᵢ+nⱼ)^-½` and
//! `r = (n_c+n_k)^-½`. The right side of `(i, j)` is the left side of
//! `(j, i)`, so in full-negative mode both orientations of an edge have the
//! same loss and are evaluated once.
//!
//! The backward pass accumulates `∂L/∂S` and `∂L/∂n` and returns
//! `∂L/∂H = (G + Gᵀ)·H` with `G = ∂L/∂S + diag(∂L/∂n)`.

use std::collections::HashMap;
use std::rc::Rc;

use super::{
    check_inputs, for_each_candidate, negative_sets, LossConfig, LossError, LossReport, PositiveSet, Result,
};
use crate::edges::EdgeSet;
use crate::tensor::{dot, gemm, Tape, Tensor, TensorError, Var};

struct Term {
    i: usize,
    j: usize,
    /// Number of anchors this term stands for.
    weight: f64,
    /// Index into the per-anchor negative sets in subsample mode.
    negs: Option<usize>,
}

struct Plan {
    terms: Vec<Term>,
    /// Term index of each anchor.
    anchor_term: Vec<usize>,
    negs: Option<Vec<Vec<usize>>>,
}

fn plan(edges: &EdgeSet, cfg: &LossConfig) -> Plan {
    let negs = negative_sets(edges, cfg);
    let mut terms = Vec::new();
    let mut anchor_term = Vec::with_capacity(edges.num_anchors());
    if negs.is_some() {
        for (a, &(i, j)) in edges.anchors().iter().enumerate() {
            anchor_term.push(terms.len());
            terms.push(Term {
                i,
                j,
                weight: 1.0,
                negs: Some(a),
            });
        }
    } else {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for &(i, j) in edges.anchors() {
            let key = (i.min(j), i.max(j));
            let t = *seen.entry(key).or_insert_with(|| {
                terms.push(Term {
                    i: key.0,
                    j: key.1,
                    weight: 0.0,
                    negs: None,
                });
                terms.len() - 1
            });
            terms[t].weight += 1.0;
            anchor_term.push(t);
        }
    }
    Plan {
        terms,
        anchor_term,
        negs,
    }
}

struct Sides<'a> {
    s: &'a Tensor,
    /// `(nₐ + n_b)^-½` for every node pair.
    rinv: &'a Tensor,
    norms: &'a [f64],
    edges: &'a EdgeSet,
    inv_tau: f64,
    topology: bool,
}

impl Sides<'_> {
    #[inline]
    fn theta(&self, centre: usize, other: usize, k: usize, c: f64) -> (f64, f64) {
        let r = self.rinv.get(centre, k);
        ((self.norms[centre] + self.s.get(other, k)) * c * r, r)
    }

    /// `(Σ_den e, Σ_num e)` over one side of the anchor.
    fn forward(&self, anchor: (usize, usize), centre: usize, other: usize, negs: Option<&[usize]>, c: f64) -> (f64, f64) {
        let (mut den, mut pos) = (0.0, 0.0);
        let nbrs = self.edges.neighbors(centre);
        let topology = self.topology;
        for_each_candidate(self.norms.len(), anchor, negs, nbrs, |k, in_den, in_num| {
            let in_num = in_num && topology;
            if !(in_den || in_num) {
                return;
            }
            let e = (self.theta(centre, other, k, c).0 * self.inv_tau).exp();
            if in_den {
                den += e;
            }
            if in_num {
                pos += e;
            }
        });
        (den, pos)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        anchor: (usize, usize),
        centre: usize,
        other: usize,
        negs: Option<&[usize]>,
        c: f64,
        w_den: f64,
        w_num: f64,
        ds: &mut Tensor,
        dn: &mut [f64],
    ) {
        let nbrs = self.edges.neighbors(centre);
        let topology = self.topology;
        let (mut dn_centre, mut dn_other) = (0.0, 0.0);
        let c2 = c * c;
        let ds_row = ds.row_mut(other);
        for_each_candidate(self.norms.len(), anchor, negs, nbrs, |k, in_den, in_num| {
            let in_num = in_num && topology;
            if !(in_den || in_num) {
                return;
            }
            let (theta, r) = self.theta(centre, other, k, c);
            let e = (theta * self.inv_tau).exp();
            let mut coef = 0.0;
            if in_den {
                coef += w_den;
            }
            if in_num {
                coef -= w_num;
            }
            let q = coef * e * self.inv_tau;
            let cr = c * r;
            ds_row[k] += q * cr;
            dn_centre += q * (cr - 0.5 * theta * (c2 + r * r));
            dn_other -= 0.5 * q * theta * c2;
            dn[k] -= 0.5 * q * theta * r * r;
        });
        dn[centre] += dn_centre;
        dn[other] += dn_other;
    }
}

fn pair_rsqrt(norms: &[f64]) -> Tensor {
    let n = norms.len();
    let mut r = Tensor::zeros(n, n);
    for a in 0..n {
        let row = r.row_mut(a);
        for (b, v) in row.iter_mut().enumerate() {
            *v = 1.0 / (norms[a] + norms[b]).sqrt();
        }
    }
    r
}

/// `G ← G + Gᵀ` in place, blockwise.
fn symmetrize(g: &mut Tensor) {
    const B: usize = 64;
    let n = g.rows();
    let d = g.data_mut();
    for bi in (0..n).step_by(B) {
        for bj in (bi..n).step_by(B) {
            for r in bi..(bi + B).min(n) {
                let c0 = if bi == bj { r } else { bj };
                for c in c0..(bj + B).min(n) {
                    let v = d[r * n + c] + d[c * n + r];
                    d[r * n + c] = v;
                    d[c * n + r] = v;
                }
            }
        }
    }
}

/// Mean edge contrastive loss for the identity edge map, recorded as one
/// fused tape op. Equal in value and gradient to [`super::total_loss`]
/// with `w_e = None`.
pub fn gram_fast_path(tape: &mut Tape, h: Var, edges: &EdgeSet, cfg: &LossConfig) -> Result<(Var, LossReport)> {
    let hv = tape.value(h);
    check_inputs(hv, edges, cfg)?;
    let n = hv.rows();
    let s = gemm(hv, false, hv, true);
    let norms: Vec<f64> = (0..n).map(|i| dot(hv.row(i), hv.row(i))).collect();
    let rinv = pair_rsqrt(&norms);
    let plan = plan(edges, cfg);
    let inv_tau = 1.0 / cfg.temperature;
    let e_self = inv_tau.exp();
    let topology = cfg.positives == PositiveSet::Topology;
    let m = edges.num_anchors() as f64;

    // (E + Σ_den, E + Σ_num) per term
    let mut saved = Vec::with_capacity(plan.terms.len());
    let mut term_loss = Vec::with_capacity(plan.terms.len());
    {
        let sides = Sides {
            s: &s,
            rinv: &rinv,
            norms: &norms,
            edges,
            inv_tau,
            topology,
        };
        for (t, term) in plan.terms.iter().enumerate() {
            let (i, j) = (term.i, term.j);
            let negs = term.negs.map(|a| plan.negs.as_ref().expect("subsample")[a].as_slice());
            let c = rinv.get(i, j);
            if !c.is_finite() {
                return Err(LossError::Tensor(TensorError::ZeroNorm {
                    op: "gram_fast_path",
                    row: t,
                }));
            }
            let (d_l, p_l) = sides.forward((i, j), i, j, negs, c);
            let (d_r, p_r) = sides.forward((i, j), j, i, negs, c);
            let den = e_self + d_l + d_r;
            let num = e_self + p_l + p_r;
            let count = if topology {
                (edges.degree(i) + edges.degree(j) + 1) as f64
            } else {
                1.0
            };
            let l = den.ln() - (num / count).ln();
            if !l.is_finite() {
                return Err(LossError::Tensor(TensorError::ZeroNorm {
                    op: "gram_fast_path",
                    row: t,
                }));
            }
            saved.push((den, num));
            // non-negative by construction; only rounding can push it below
            term_loss.push(l.max(0.0));
        }
    }
    let loss = plan
        .terms
        .iter()
        .zip(&term_loss)
        .map(|(t, l)| t.weight * l)
        .sum::<f64>()
        / m;
    let per_anchor = plan.anchor_term.iter().map(|&t| term_loss[t]).collect();
    let report = LossReport {
        loss,
        anchors_used: edges.num_anchors(),
        per_anchor,
    };

    let edges = Rc::new(edges.clone());
    let var = tape.record(
        "gram_contrastive",
        &[h],
        Tensor::scalar(loss),
        Box::new(move |g, _, x, _| {
            let hv = x[0];
            let mut ds = Tensor::zeros(n, n);
            let mut dn = vec![0.0; n];
            let sides = Sides {
                s: &s,
                rinv: &rinv,
                norms: &norms,
                edges: &edges,
                inv_tau,
                topology,
            };
            let g = g.data()[0];
            for (term, &(den, num)) in plan.terms.iter().zip(&saved) {
                let (i, j) = (term.i, term.j);
                let negs = term.negs.map(|a| plan.negs.as_ref().expect("subsample")[a].as_slice());
                let c = rinv.get(i, j);
                let w = g * term.weight / m;
                let (w_den, w_num) = (w / den, w / num);
                sides.backward((i, j), i, j, negs, c, w_den, w_num, &mut ds, &mut dn);
                sides.backward((i, j), j, i, negs, c, w_den, w_num, &mut ds, &mut dn);
            }
            for (k, d) in dn.iter().enumerate() {
                ds.data_mut()[k * n + k] += d;
            }
            symmetrize(&mut ds);
            vec![Some(gemm(&ds, false, hv, false))]
        }),
    )?;
    Ok((var, report))
}
