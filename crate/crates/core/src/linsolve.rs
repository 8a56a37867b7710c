//! Multifrontal sparse LU over a geometric nested-dissection tree.
//!
//! Unknowns are split recursively by coordinate bisection; each separator
//! (or leaf set) becomes a dense frontal matrix whose pivot block is
//! factorized with partial pivoting. Pivoting is confined to the pivot
//! block, so the symbolic structure follows the pattern of `A + A^T`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Accum, Mat, Par};

use crate::dgops::SparseMat;
use crate::error::{Error, Result};
use crate::geometry::Point;

const LEAF: usize = 96;

struct Front {
    vars: Vec<usize>,
    border: Vec<usize>,
    pivot: Option<PartialPivLu<f64>>,
    /// Border rows of the pivot columns.
    lower: Mat<f64>,
    /// Pivot block inverse applied to the border columns.
    upper: Mat<f64>,
}

/// Factorized square sparse matrix.
pub struct SparseLu {
    n: usize,
    fronts: Vec<Front>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).field("fronts", &self.fronts.len()).finish()
    }
}

struct NdNode {
    vars: Vec<usize>,
    children: usize,
}

impl SparseLu {
    /// Factorizes `a`. `points[j]` locates unknown `j` in space and drives
    /// the ordering.
    pub fn new(a: &SparseMat, points: &[Point]) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || points.len() != n {
            return Err(Error::InvalidArgument("LU needs a square matrix and one point per unknown".into()));
        }
        let at = a
            .as_ref()
            .transpose()
            .to_col_major()
            .map_err(|e| Error::NumericalBreakdown(format!("transpose failed: {e:?}")))?;
        let (ptr, adj) = symmetric_graph(a, &at);
        let tree = nested_dissection(&ptr, &adj, points);

        let mut pos = vec![0usize; n];
        let mut next = 0;
        for node in &tree {
            for &v in &node.vars {
                pos[v] = next;
                next += 1;
            }
        }

        let (a_ptr, a_idx, a_val) = (a.symbolic().col_ptr(), a.symbolic().row_idx(), a.val());
        let (t_ptr, t_idx, t_val) = (at.symbolic().col_ptr(), at.symbolic().row_idx(), at.val());
        let mut local = vec![usize::MAX; n];
        let mut stack: Vec<(Mat<f64>, Vec<usize>)> = Vec::new();
        let mut fronts = Vec::with_capacity(tree.len());
        let mut end = 0;
        for node in tree {
            end += node.vars.len();
            let children: Vec<(Mat<f64>, Vec<usize>)> = stack.split_off(stack.len() - node.children);

            let mut border = Vec::new();
            let add = |u: usize, border: &mut Vec<usize>, local: &mut [usize]| {
                if pos[u] >= end && local[u] == usize::MAX {
                    local[u] = 0;
                    border.push(u);
                }
            };
            for &v in &node.vars {
                for &u in &adj[ptr[v]..ptr[v + 1]] {
                    add(u as usize, &mut border, &mut local);
                }
            }
            for (_, b) in &children {
                for &u in b {
                    add(u, &mut border, &mut local);
                }
            }
            border.sort_unstable_by_key(|&u| pos[u]);
            let nv = node.vars.len();
            let size = nv + border.len();
            for (i, &v) in node.vars.iter().chain(&border).enumerate() {
                local[v] = i;
            }

            let mut f = Mat::<f64>::zeros(size, size);
            for (j, &v) in node.vars.iter().enumerate() {
                for k in a_ptr[v]..a_ptr[v + 1] {
                    let r = local[a_idx[k]];
                    if r != usize::MAX {
                        f[(r, j)] += a_val[k];
                    }
                }
                for k in t_ptr[v]..t_ptr[v + 1] {
                    let c = local[t_idx[k]];
                    if c != usize::MAX && c >= nv {
                        f[(j, c)] += t_val[k];
                    }
                }
            }
            for (u, b) in &children {
                let map: Vec<usize> = b.iter().map(|&x| local[x]).collect();
                for (jj, &cj) in map.iter().enumerate() {
                    let col = u.col_as_slice(jj);
                    for (ii, &ri) in map.iter().enumerate() {
                        f[(ri, cj)] += col[ii];
                    }
                }
            }
            drop(children);

            let nb = border.len();
            let (pivot, lower, upper, update) = if nv == 0 {
                (None, Mat::zeros(nb, 0), Mat::zeros(0, nb), f)
            } else {
                let lu = PartialPivLu::new(f.as_ref().submatrix(0, 0, nv, nv));
                let upper = lu.solve(f.as_ref().submatrix(0, nv, nv, nb));
                let lower = f.as_ref().submatrix(nv, 0, nb, nv).to_owned();
                let mut update = f.as_ref().submatrix(nv, nv, nb, nb).to_owned();
                if nb > 0 {
                    matmul(update.as_mut(), Accum::Add, lower.as_ref(), upper.as_ref(), -1.0, Par::Seq);
                }
                if (0..nb).any(|j| upper.col_as_slice(j).iter().any(|v| !v.is_finite())) {
                    return Err(Error::NumericalBreakdown(format!("singular pivot block at unknown {}", node.vars[0])));
                }
                (Some(lu), lower, upper, update)
            };
            for &v in node.vars.iter().chain(&border) {
                local[v] = usize::MAX;
            }
            stack.push((update, border.clone()));
            fronts.push(Front { vars: node.vars, border, pivot, lower, upper });
        }
        Ok(Self { n, fronts })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored factor entries.
    pub fn factor_entries(&self) -> usize {
        self.fronts.iter().map(|f| f.vars.len() * (f.vars.len() + 2 * f.border.len())).sum()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut w = Vec::new();
        for f in &self.fronts {
            let Some(lu) = &f.pivot else { continue };
            let mut rhs = Mat::<f64>::from_fn(f.vars.len(), 1, |i, _| x[f.vars[i]]);
            lu.solve_in_place(rhs.as_mut());
            w.clear();
            w.extend_from_slice(rhs.col_as_slice(0));
            for (j, &wj) in w.iter().enumerate() {
                x[f.vars[j]] = wj;
                let col = f.lower.col_as_slice(j);
                for (i, &bi) in f.border.iter().enumerate() {
                    x[bi] -= col[i] * wj;
                }
            }
        }
        for f in self.fronts.iter().rev() {
            if f.pivot.is_none() {
                continue;
            }
            for (j, &bj) in f.border.iter().enumerate() {
                let xb = x[bj];
                if xb == 0.0 {
                    continue;
                }
                let col = f.upper.col_as_slice(j);
                for (i, &vi) in f.vars.iter().enumerate() {
                    x[vi] -= col[i] * xb;
                }
            }
        }
        x
    }
}

/// Recursive coordinate bisection; separators are greedy vertex covers of
/// the edges crossing each cut. Nodes come out in postorder.
fn nested_dissection(ptr: &[usize], adj: &[u32], points: &[Point]) -> Vec<NdNode> {
    let n = points.len();
    let mut side = vec![0u8; n];
    let mut out = Vec::new();
    dissect((0..n as u32).collect(), ptr, adj, points, &mut side, &mut out);
    out
}

fn dissect(set: Vec<u32>, ptr: &[usize], adj: &[u32], points: &[Point], side: &mut [u8], out: &mut Vec<NdNode>) {
    let leaf = |set: &[u32], out: &mut Vec<NdNode>| out.push(NdNode { vars: set.iter().map(|&v| v as usize).collect(), children: 0 });
    if set.len() <= LEAF {
        leaf(&set, out);
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &v in &set {
        for d in 0..3 {
            lo[d] = lo[d].min(points[v as usize][d]);
            hi[d] = hi[d].max(points[v as usize][d]);
        }
    }
    let axis = (0..3).max_by(|&i, &j| (hi[i] - lo[i]).total_cmp(&(hi[j] - lo[j]))).unwrap_or(0);
    let mut sorted = set;
    sorted.sort_unstable_by(|&u, &v| points[u as usize][axis].total_cmp(&points[v as usize][axis]).then(u.cmp(&v)));
    let (left, right) = sorted.split_at(sorted.len() / 2);
    for &v in left {
        side[v as usize] = 1;
    }
    for &v in right {
        side[v as usize] = 2;
    }
    let sep = cut_cover(left, right, ptr, adj, side);
    for &v in &sep {
        side[v as usize] = 3;
    }
    let a: Vec<u32> = left.iter().copied().filter(|&v| side[v as usize] != 3).collect();
    let b: Vec<u32> = right.iter().copied().filter(|&v| side[v as usize] != 3).collect();
    for &v in left.iter().chain(right) {
        side[v as usize] = 0;
    }
    if a.is_empty() || b.is_empty() {
        leaf(&sorted, out);
        return;
    }
    dissect(a, ptr, adj, points, side, out);
    dissect(b, ptr, adj, points, side, out);
    out.push(NdNode { vars: sep.into_iter().map(|v| v as usize).collect(), children: 2 });
}

/// Greedy vertex cover of the edges between the two marked halves, taking
/// the vertex with the most uncovered cut edges first.
fn cut_cover(left: &[u32], right: &[u32], ptr: &[usize], adj: &[u32], side: &[u8]) -> Vec<u32> {
    use std::collections::{BinaryHeap, HashMap};
    let mut degree: HashMap<u32, usize> = HashMap::new();
    for &v in left.iter().chain(right) {
        let own = side[v as usize];
        let d = adj[ptr[v as usize]..ptr[v as usize + 1]]
            .iter()
            .filter(|&&u| matches!(side[u as usize], 1 | 2) && side[u as usize] != own)
            .count();
        if d > 0 {
            degree.insert(v, d);
        }
    }
    let mut heap: BinaryHeap<(usize, u32)> = degree.iter().map(|(&v, &d)| (d, v)).collect();
    let mut cover = Vec::new();
    let mut taken = std::collections::HashSet::new();
    while let Some((d, v)) = heap.pop() {
        if taken.contains(&v) || degree.get(&v) != Some(&d) || d == 0 {
            continue;
        }
        taken.insert(v);
        cover.push(v);
        let own = side[v as usize];
        for &u in &adj[ptr[v as usize]..ptr[v as usize + 1]] {
            if matches!(side[u as usize], 1 | 2) && side[u as usize] != own && !taken.contains(&u) {
                if let Some(du) = degree.get_mut(&u) {
                    *du -= 1;
                    heap.push((*du, u));
                }
            }
        }
        degree.insert(v, 0);
    }
    cover.sort_unstable();
    cover
}

/// Adjacency of the pattern of `A + A^T` without the diagonal.
fn symmetric_graph(a: &SparseMat, at: &SparseMat) -> (Vec<usize>, Vec<u32>) {
    let n = a.ncols();
    let mut mark = vec![usize::MAX; n];
    let mut ptr = Vec::with_capacity(n + 1);
    let mut adj = Vec::new();
    ptr.push(0);
    for c in 0..n {
        for m in [a, at] {
            let (p, idx) = (m.symbolic().col_ptr(), m.symbolic().row_idx());
            for &r in &idx[p[c]..p[c + 1]] {
                if r != c && mark[r] != c {
                    mark[r] = c;
                    adj.push(r as u32);
                }
            }
        }
        ptr.push(adj.len());
    }
    (ptr, adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgops::{from_entries, matvec};
    use rand::{Rng, SeedableRng};

    fn grid_system(m: usize, seed: u64) -> (SparseMat, Vec<Point>) {
        let n = m * m;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut entries = Vec::new();
        let mut pts = Vec::new();
        for j in 0..m {
            for i in 0..m {
                let r = j * m + i;
                pts.push([i as f64, j as f64, 0.0]);
                entries.push((r, r, 4.0 + rng.gen_range(0.0..1.0)));
                for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if (0..m as i64).contains(&ii) && (0..m as i64).contains(&jj) {
                        entries.push((r, jj as usize * m + ii as usize, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
        }
        (from_entries(n, n, entries).unwrap(), pts)
    }

    #[test]
    fn solves_random_grid_system() {
        let (a, pts) = grid_system(40, 9);
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let x: Vec<f64> = (0..a.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = matvec(&a, &x);
        let lu = SparseLu::new(&a, &pts).unwrap();
        assert!(lu.factor_entries() < a.nrows() * a.nrows() / 4);
        let y = lu.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn pivots_through_zero_diagonal() {
        let a = from_entries(3, 3, vec![(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0), (2, 2, 3.0), (2, 0, 1.0)]).unwrap();
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let lu = SparseLu::new(&a, &pts).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        let back = matvec(&a, &x);
        for (u, v) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = from_entries(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0]];
        match SparseLu::new(&a, &pts) {
            Err(Error::NumericalBreakdown(_)) => {}
            Ok(lu) => assert!(lu.solve(&[1.0, 0.0]).iter().any(|v| !v.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
