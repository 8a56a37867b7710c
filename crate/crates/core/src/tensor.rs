//! Tensor-product kernels on one element's `(N+1)^3` nodal block, `i` fastest.

use crate::basis::NodalBasis;

#[inline]
pub fn node(n1: usize, i: usize, j: usize, k: usize) -> usize {
    (k * n1 + j) * n1 + i
}

#[inline]
pub fn stride(n1: usize, dir: usize) -> usize {
    match dir {
        0 => 1,
        1 => n1,
        _ => n1 * n1,
    }
}

/// `out = D_dir u` (derivative along one reference direction).
pub fn deriv(basis: &NodalBasis, u: &[f64], dir: usize, out: &mut [f64]) {
    let n1 = basis.len();
    let s = stride(n1, dir);
    let d = basis.diff_matrix();
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                let idx = node(n1, i, j, k);
                let pos = [i, j, k][dir];
                let base = idx - pos * s;
                let row = &d[pos * n1..(pos + 1) * n1];
                let mut acc = 0.0;
                for (m, dm) in row.iter().enumerate() {
                    acc += dm * u[base + m * s];
                }
                out[idx] = acc;
            }
        }
    }
}

/// `out += alpha * D_dir u`.
pub fn deriv_add(basis: &NodalBasis, u: &[f64], dir: usize, alpha: f64, out: &mut [f64]) {
    let n1 = basis.len();
    let s = stride(n1, dir);
    let d = basis.diff_matrix();
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                let idx = node(n1, i, j, k);
                let pos = [i, j, k][dir];
                let base = idx - pos * s;
                let row = &d[pos * n1..(pos + 1) * n1];
                let mut acc = 0.0;
                for (m, dm) in row.iter().enumerate() {
                    acc += dm * u[base + m * s];
                }
                out[idx] += alpha * acc;
            }
        }
    }
}

/// Quadrature weight `w_i w_j w_k` of each volume node.
pub fn volume_weights(basis: &NodalBasis) -> Vec<f64> {
    let w = basis.weights();
    let n1 = basis.len();
    let mut out = Vec::with_capacity(n1 * n1 * n1);
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                out.push(w[i] * w[j] * w[k]);
            }
        }
    }
    out
}
