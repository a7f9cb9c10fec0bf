use std::rc::Rc;

use super::kernels::{dot, gemm};
use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn column(op: &'static str, t: &Tensor) -> Result<()> {
    if t.cols() != 1 {
        return Err(TensorError::ShapeMismatch {
            op,
            left: t.shape(),
            right: (t.rows(), 1),
        });
    }
    Ok(())
}

fn check_offsets(op: &'static str, offsets: &[usize], len: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&len) {
        return Err(TensorError::ShapeMismatch {
            op,
            left: (len, 1),
            right: (offsets.last().copied().unwrap_or(0), 1),
        });
    }
    for (s, w) in offsets.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(TensorError::EmptySegment { op, segment: s });
        }
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

impl Tape {
    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = gemm(av, false, bv, false);
        self.record(
            "matmul",
            &[a, b],
            out,
            Box::new(|g, _, x, need| {
                vec![
                    need[0].then(|| gemm(g, false, x[1], true)),
                    need[1].then(|| gemm(x[0], true, g, false)),
                ]
            }),
        )
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let out = gemm(av, false, bv, true);
        self.record(
            "matmul_nt",
            &[a, b],
            out,
            Box::new(|g, _, x, need| {
                vec![
                    need[0].then(|| gemm(g, false, x[1], false)),
                    // (gᵀ · a) computed as (aᵀ · g)ᵀ to keep the sparse walk on `a`.
                    need[1].then(|| gemm(x[0], true, g, false).transpose()),
                ]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.record(
            "add",
            &[a, b],
            out,
            Box::new(|g, _, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.record(
            "sub",
            &[a, b],
            out,
            Box::new(|g, _, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| g.scaled(-1.0))]),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(|g, _, x, need| {
                vec![
                    need[0].then(|| zip_map(g, x[1], |a, b| a * b)),
                    need[1].then(|| zip_map(g, x[0], |a, b| a * b)),
                ]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).scaled(c);
        self.record("scale", &[x], out, Box::new(move |g, _, _, _| vec![Some(g.scaled(c))]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.record(
            "leaky_relu",
            &[x],
            out,
            Box::new(move |g, _, x, _| {
                vec![Some(zip_map(g, x[0], |g, v| if v > 0.0 { g } else { slope * g }))]
            }),
        )
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { alpha * v.exp_m1() });
        self.record(
            "elu",
            &[x],
            out,
            Box::new(move |g, _, x, _| {
                vec![Some(zip_map(g, x[0], |g, v| {
                    if v > 0.0 {
                        g
                    } else {
                        g * alpha * v.exp()
                    }
                }))]
            }),
        )
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.record(
            "exp",
            &[x],
            out,
            Box::new(|g, out, _, _| vec![Some(zip_map(g, out, |g, y| g * y))]),
        )
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        self.record(
            "log",
            &[x],
            out,
            Box::new(|g, _, x, _| vec![Some(zip_map(g, x[0], |g, v| g / v))]),
        )
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.shape();
        let out = Tensor::scalar(v.sum());
        self.record(
            "sum",
            &[x],
            out,
            Box::new(move |g, _, _, _| vec![Some(Tensor::filled(r, c, g.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TensorError::EmptySegment { op: "mean", segment: 0 });
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if start > end || end > v.rows() {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                len: v.rows(),
            });
        }
        let (rows, cols) = v.shape();
        let out = Tensor::from_vec(end - start, cols, v.data()[start * cols..end * cols].to_vec())?;
        self.record(
            "slice_rows",
            &[x],
            out,
            Box::new(move |g, _, _, _| {
                let mut full = Tensor::zeros(rows, cols);
                full.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
                vec![Some(full)]
            }),
        )
    }

    /// Row `idx[r]` of `x` becomes row `r` of the output. Backward scatter-adds.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.shape();
        let mut out = Tensor::zeros(idx.len(), cols);
        for (r, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        self.record(
            "gather_rows",
            &[x],
            out,
            Box::new(move |g, _, _, _| {
                let mut full = Tensor::zeros(rows, cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (d, s) in full.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                vec![Some(full)]
            }),
        )
    }

    /// Column-wise concatenation `[x₀ ∥ x₁ ∥ …]` of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(TensorError::EmptySegment { op: "concat_cols", segment: 0 });
        };
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: v.shape(),
                });
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                out.row_mut(r)[off..off + w].copy_from_slice(self.value(*p).row(r));
                off += w;
            }
        }
        self.record(
            "concat_cols",
            parts,
            out,
            Box::new(move |g, _, _, need| {
                let mut off = 0;
                let mut res = Vec::with_capacity(widths.len());
                for (&w, &n) in widths.iter().zip(need) {
                    if n {
                        let mut part = Tensor::zeros(rows, w);
                        for r in 0..rows {
                            part.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        res.push(Some(part));
                    } else {
                        res.push(None);
                    }
                    off += w;
                }
                res
            }),
        )
    }

    /// Softmax of a column vector within each segment `offsets[s]..offsets[s+1]`,
    /// stabilised by subtracting the per-segment maximum.
    pub fn segment_softmax(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        let v = self.value(x);
        column("segment_softmax", v)?;
        check_offsets("segment_softmax", &offsets, v.rows())?;
        let mut out = Tensor::zeros(v.rows(), 1);
        for w in offsets.windows(2) {
            let seg = &v.data()[w[0]..w[1]];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out.data_mut()[w[0]..w[1]];
            let mut z = 0.0;
            for (d, &s) in dst.iter_mut().zip(seg) {
                *d = (s - max).exp();
                z += *d;
            }
            for d in dst.iter_mut() {
                *d /= z;
            }
        }
        self.record(
            "segment_softmax",
            &[x],
            out,
            Box::new(move |g, y, _, _| {
                let mut dx = Tensor::zeros(y.rows(), 1);
                for w in offsets.windows(2) {
                    let ys = &y.data()[w[0]..w[1]];
                    let gs = &g.data()[w[0]..w[1]];
                    let inner = dot(ys, gs);
                    for (k, d) in dx.data_mut()[w[0]..w[1]].iter_mut().enumerate() {
                        *d = ys[k] * (gs[k] - inner);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Sparse weighted aggregation: output row `s` is
    /// `Σ_{e ∈ segment s} weights[e] · values[cols[e]]`.
    pub fn segment_aggregate(
        &mut self,
        weights: Var,
        values: Var,
        cols: Rc<[usize]>,
        offsets: Rc<[usize]>,
    ) -> Result<Var> {
        let (w, v) = (self.value(weights), self.value(values));
        column("segment_aggregate", w)?;
        if cols.len() != w.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_aggregate",
                left: w.shape(),
                right: (cols.len(), 1),
            });
        }
        check_offsets("segment_aggregate", &offsets, w.rows())?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= v.rows()) {
            return Err(TensorError::IndexOutOfRange {
                op: "segment_aggregate",
                index: bad,
                len: v.rows(),
            });
        }
        let d = v.cols();
        let segments = offsets.len() - 1;
        let mut out = Tensor::zeros(segments, d);
        for s in 0..segments {
            let dst = out.row_mut(s);
            for e in offsets[s]..offsets[s + 1] {
                let we = w.data()[e];
                for (o, x) in dst.iter_mut().zip(v.row(cols[e])) {
                    *o += we * x;
                }
            }
        }
        self.record(
            "segment_aggregate",
            &[weights, values],
            out,
            Box::new(move |g, _, x, need| {
                let (w, v) = (x[0], x[1]);
                let mut dw = need[0].then(|| Tensor::zeros(w.rows(), 1));
                let mut dv = need[1].then(|| Tensor::zeros(v.rows(), v.cols()));
                for s in 0..offsets.len() - 1 {
                    let gs = g.row(s);
                    for e in offsets[s]..offsets[s + 1] {
                        if let Some(dw) = dw.as_mut() {
                            dw.data_mut()[e] = dot(gs, v.row(cols[e]));
                        }
                        if let Some(dv) = dv.as_mut() {
                            let we = w.data()[e];
                            for (o, gg) in dv.row_mut(cols[e]).iter_mut().zip(gs) {
                                *o += we * gg;
                            }
                        }
                    }
                }
                vec![dw, dv]
            }),
        )
    }

    /// Per-segment `Σ weights[e] · x[e]` of a column vector, with constant weights.
    pub fn weighted_segment_sum(
        &mut self,
        x: Var,
        weights: Rc<[f64]>,
        offsets: Rc<[usize]>,
    ) -> Result<Var> {
        let v = self.value(x);
        column("weighted_segment_sum", v)?;
        if weights.len() != v.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_segment_sum",
                left: v.shape(),
                right: (weights.len(), 1),
            });
        }
        check_offsets("weighted_segment_sum", &offsets, v.rows())?;
        let out = Tensor::column(
            offsets
                .windows(2)
                .map(|w| dot(&v.data()[w[0]..w[1]], &weights[w[0]..w[1]]))
                .collect(),
        );
        let n = v.rows();
        self.record(
            "weighted_segment_sum",
            &[x],
            out,
            Box::new(move |g, _, _, _| {
                let mut dx = Tensor::zeros(n, 1);
                for (s, w) in offsets.windows(2).enumerate() {
                    for e in w[0]..w[1] {
                        dx.data_mut()[e] = g.data()[s] * weights[e];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Cosine similarity of corresponding rows, as a column vector.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("row_cosine", av, bv)?;
        let n = av.rows();
        let mut out = Tensor::zeros(n, 1);
        for r in 0..n {
            let (x, y) = (av.row(r), bv.row(r));
            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if nx == 0.0 || ny == 0.0 {
                return Err(TensorError::ZeroNorm { op: "row_cosine", row: r });
            }
            out.data_mut()[r] = dot(x, y) / (nx * ny);
        }
        self.record(
            "row_cosine",
            &[a, b],
            out,
            Box::new(|g, c, x, need| {
                let (a, b) = (x[0], x[1]);
                let mut da = need[0].then(|| Tensor::zeros(a.rows(), a.cols()));
                let mut db = need[1].then(|| Tensor::zeros(b.rows(), b.cols()));
                for r in 0..a.rows() {
                    let (x, y) = (a.row(r), b.row(r));
                    let (sx, sy) = (dot(x, x), dot(y, y));
                    let inv = 1.0 / (sx.sqrt() * sy.sqrt());
                    let (gr, cr) = (g.data()[r], c.data()[r]);
                    if let Some(da) = da.as_mut() {
                        for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = gr * (y[k] * inv - cr * x[k] / sx);
                        }
                    }
                    if let Some(db) = db.as_mut() {
                        for (k, d) in db.row_mut(r).iter_mut().enumerate() {
                            *d = gr * (x[k] * inv - cr * y[k] / sy);
                        }
                    }
                }
                vec![da, db]
            }),
        )
    }

    /// Dot product of corresponding rows, as a column vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("row_dot", av, bv)?;
        let out = Tensor::column((0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect());
        self.record(
            "row_dot",
            &[a, b],
            out,
            Box::new(|g, _, x, need| {
                let scale_rows = |m: &Tensor| {
                    let mut o = m.clone();
                    for r in 0..m.rows() {
                        let gr = g.data()[r];
                        o.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    o
                };
                vec![need[0].then(|| scale_rows(x[1])), need[1].then(|| scale_rows(x[0]))]
            }),
        )
    }

    /// Mean binary cross-entropy of a column of logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Rc<[f64]>) -> Result<Var> {
        let v = self.value(logits);
        column("bce_with_logits", v)?;
        if targets.len() != v.rows() || v.rows() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                left: v.shape(),
                right: (targets.len(), 1),
            });
        }
        let n = v.rows() as f64;
        // log(1 + e^z) - t z, written to avoid overflow
        let loss: f64 = v
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.record(
            "bce_with_logits",
            &[logits],
            Tensor::scalar(loss),
            Box::new(move |g, _, x, _| {
                let gs = g.data()[0] / n;
                let d = x[0]
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &t)| gs * (sigmoid(z) - t))
                    .collect();
                vec![Some(Tensor::column(d))]
            }),
        )
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(t(&[vec![1.0], vec![1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let x = t(&[vec![0.5, -1.0, 2.0], vec![3.0, 0.0, 1.0]]);
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn matmul_shape_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn activations_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![-1.0, 0.0, 2.0]));
        let l = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(l).data(), &[-0.2, 0.0, 2.0]);
        let e = tape.elu(x, 1.0).unwrap();
        let ev = tape.value(e).data();
        assert_eq!(ev[1], 0.0);
        assert!((ev[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((ev[0] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn segment_softmax_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![4.2, 0.7, 0.7, 0.7, 1000.0, 1000.0]));
        let y = tape.segment_softmax(x, Rc::from(vec![0, 1, 4, 6])).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 1.0);
        for p in &v[1..4] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(&v[4..], &[0.5, 0.5]);
    }

    #[test]
    fn segment_softmax_rejects_empty_segment() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.0, 2.0]));
        assert!(matches!(
            tape.segment_softmax(x, Rc::from(vec![0, 2, 2])),
            Err(TensorError::EmptySegment { segment: 1, .. })
        ));
    }

    #[test]
    fn backward_of_sum_is_ones_and_zero_scale_gives_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::filled(2, 3, 0.7));
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::filled(2, 3, 1.0));

        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::filled(2, 2, 0.3));
        let e = tape.exp(w).unwrap();
        let s = tape.sum(e).unwrap();
        let z = tape.scale(s, 0.0).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::zeros(2, 2));
    }

    #[test]
    fn backward_rejects_detached_and_non_scalar() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        let e = tape.exp(c).unwrap();
        assert!(matches!(tape.backward(e), Err(TensorError::Detached)));

        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar { .. })));

        let mut other = Tape::new();
        let foreign = other.leaf(Tensor::scalar(1.0));
        let tape = Tape::new();
        assert!(matches!(tape.backward(foreign), Err(TensorError::Detached)));
    }

    #[test]
    fn non_finite_values_trip_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        assert!(matches!(tape.log(x), Err(TensorError::NonFinite { op: "log" })));
    }

    #[test]
    fn row_cosine_orthonormal_and_zero_norm() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 0.0], vec![2.0, 2.0]]));
        let b = tape.constant(t(&[vec![0.0, 1.0], vec![-1.0, -1.0]]));
        let c = tape.row_cosine(a, b).unwrap();
        let v = tape.value(c).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 1.0).abs() < 1e-15);
        let z = tape.constant(t(&[vec![0.0, 0.0], vec![1.0, 1.0]]));
        assert!(matches!(tape.row_cosine(z, b), Err(TensorError::ZeroNorm { row: 0, .. })));
    }
}
