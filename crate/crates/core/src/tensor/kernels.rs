use super::{Result, Tensor, TensorError};

/// Fraction of non-zeros below which the left operand is walked sparsely.
const SPARSE_DENSITY: f64 = 0.2;

/// `op(a) · op(b)` where `op` optionally transposes. Callers check shapes.
pub(crate) fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Tensor {
    let (m, k) = if trans_a {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let n = if trans_b { b.rows() } else { b.cols() };
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }

    let nnz = a.data().iter().filter(|x| **x != 0.0).count();
    if (nnz as f64) < SPARSE_DENSITY * a.len() as f64 {
        sparse_left(a, trans_a, b, trans_b, &mut out);
        return out;
    }

    let (rsa, csa) = if trans_a {
        (1, a.cols() as isize)
    } else {
        (a.cols() as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols() as isize)
    } else {
        (b.cols() as isize, 1)
    };
    // SAFETY: strides describe exactly the row-major buffers of `a`, `b`
    // (optionally transposed) and `out`, whose lengths are m*k, k*n and m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

fn sparse_left(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool, out: &mut Tensor) {
    let n = out.cols();
    let b_at = |kk: usize, j: usize| {
        if trans_b {
            b.get(j, kk)
        } else {
            b.get(kk, j)
        }
    };
    for r in 0..a.rows() {
        for (c, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            // logical A[i, kk] = x
            let (i, kk) = if trans_a { (c, r) } else { (r, c) };
            let dst = out.row_mut(i);
            if trans_b {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += x * b_at(kk, j);
                }
            } else {
                let src = &b.data()[kk * n..(kk + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += x * s;
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two equally long vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 {
        return Err(TensorError::ZeroNorm {
            op: "cosine_similarity",
            row: 0,
        });
    }
    if nv == 0.0 {
        return Err(TensorError::ZeroNorm {
            op: "cosine_similarity",
            row: 1,
        });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
