//! One-dimensional Gauss-Lobatto nodal machinery.
//!
//! Everything in the element is a tensor product of the objects built here:
//! nodes and weights of the Lobatto rule, barycentric weights for Lagrange
//! interpolation and the collocation differentiation matrix. The pair
//! `(diag(w), D)` is a summation-by-parts operator, which the stability of the
//! whole scheme rests on.

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Gauss-Lobatto nodal basis of polynomial order `N` on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalBasis {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    barycentric: Vec<f64>,
    /// Row-major `(N+1) x (N+1)`; `diff[i * (N+1) + j] = l_j'(x_i)`.
    diff: Vec<f64>,
}

impl NodalBasis {
    pub fn new(order: usize) -> Result<Self> {
        let (nodes, weights) = gauss_lobatto(order)?;
        let barycentric = barycentric_weights(&nodes)?;
        let diff = diff_matrix_with(&nodes, &barycentric);
        Ok(Self {
            order,
            nodes,
            weights,
            barycentric,
            diff,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.barycentric
    }

    pub fn diff_matrix(&self) -> &[f64] {
        &self.diff
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.diff[i * (self.order + 1) + j]
    }

    /// Evaluates the interpolant through `values` at `x`. Points outside
    /// `[-1, 1]` are extrapolated, which the element mappings rely on.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        interpolate(&self.nodes, &self.barycentric, values, x)
    }

    /// Values of all Lagrange polynomials `l_j(x)`.
    pub fn lagrange_at(&self, x: f64) -> Vec<f64> {
        lagrange_at(&self.nodes, &self.barycentric, x)
    }

    /// Matrix `E[m][j] = l_j(targets[m])`, row-major, mapping nodal values of
    /// this basis to point values at `targets`.
    pub fn interpolation_matrix(&self, targets: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(targets.len() * self.len());
        for &t in targets {
            out.extend(self.lagrange_at(t));
        }
        out
    }
}

/// Legendre polynomial `L_n(x)` and its derivative.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        let dp_next = dp_prev + (2.0 * kf - 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// `q(x) = L_{N+1}(x) - L_{N-1}(x)`, proportional to `(1 - x^2) L_N'(x)`,
/// together with `q'(x)` and `L_N(x)`.
fn lobatto_polynomial(n: usize, x: f64) -> (f64, f64, f64) {
    let (l_nm1, dl_nm1) = legendre_and_derivative(n - 1, x);
    let (l_n, _) = legendre_and_derivative(n, x);
    let (l_np1, dl_np1) = legendre_and_derivative(n + 1, x);
    (l_np1 - l_nm1, dl_np1 - dl_nm1, l_n)
}

/// Gauss-Lobatto nodes and weights for polynomial order `n`.
///
/// Interior nodes are Newton-refined roots of `(1 - x^2) P_N'(x)` started
/// from Chebyshev-Lobatto points; the rule is symmetrized so that
/// `x_{N-j} = -x_j` holds bitwise.
pub fn gauss_lobatto(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidOrder(n));
    }
    let nf = n as f64;
    let mut nodes = vec![0.0; n + 1];
    let mut weights = vec![0.0; n + 1];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    let w_end = 2.0 / (nf * (nf + 1.0));
    weights[0] = w_end;
    weights[n] = w_end;

    for j in 1..(n + 1) / 2 {
        let mut x = -(std::f64::consts::PI * j as f64 / nf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (q, dq, _) = lobatto_polynomial(n, x);
            let delta = -q / dq;
            x += delta;
            if delta.abs() <= NEWTON_TOL * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, l_n) = lobatto_polynomial(n, x);
        let w = 2.0 / (nf * (nf + 1.0) * l_n * l_n);
        nodes[j] = x;
        nodes[n - j] = -x;
        weights[j] = w;
        weights[n - j] = w;
    }
    if n % 2 == 0 {
        let (l_n, _) = legendre_and_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (nf * (nf + 1.0) * l_n * l_n);
    }
    Ok((nodes, weights))
}

/// Barycentric weights `lambda_j = 1 / prod_{i != j} (x_j - x_i)`.
pub fn barycentric_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut lambda = vec![1.0; n];
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let dx = nodes[j] - nodes[i];
                if dx == 0.0 {
                    return Err(Error::DegenerateNodes(i.min(j), i.max(j)));
                }
                lambda[j] *= dx;
            }
        }
    }
    for l in &mut lambda {
        *l = 1.0 / *l;
    }
    Ok(lambda)
}

/// Lagrange differentiation matrix `D[i][j] = l_j'(x_i)` (row-major).
///
/// Off-diagonal entries come from the barycentric weights; the diagonal is
/// the negative row sum so constants are annihilated exactly.
pub fn diff_matrix(nodes: &[f64]) -> Result<Vec<f64>> {
    let lambda = barycentric_weights(nodes)?;
    Ok(diff_matrix_with(nodes, &lambda))
}

fn diff_matrix_with(nodes: &[f64], lambda: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lambda[j] / lambda[i]) / (nodes[i] - nodes[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// Barycentric (second form) evaluation of the interpolant at `x`.
pub fn interpolate(nodes: &[f64], lambda: &[f64], values: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let dx = x - nodes[j];
        if dx == 0.0 {
            return values[j];
        }
        let t = lambda[j] / dx;
        num += t * values[j];
        den += t;
    }
    num / den
}

pub fn lagrange_at(nodes: &[f64], lambda: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut out = vec![0.0; n];
    if let Some(k) = nodes.iter().position(|&xj| xj == x) {
        out[k] = 1.0;
        return out;
    }
    let mut den = 0.0;
    for j in 0..n {
        let t = lambda[j] / (x - nodes[j]);
        out[j] = t;
        den += t;
    }
    for v in &mut out {
        *v /= den;
    }
    out
}
