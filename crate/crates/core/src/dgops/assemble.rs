//! Sparse matrices of the DG operators, built row by row from the same
//! strong-form formulas as the matrix-free kernels.

use faer::sparse::{SparseColMat, Triplet};
use faer::Par;

use crate::error::{Error, Result};
use crate::geometry::{face_tangents, Neighbor};
use crate::tensor::node;

use super::ops::interface_penalty;
use super::space::{BoundaryRule, DgSpace, FaceLink, FacePolicy, InterfaceRule};

pub type SparseMat = SparseColMat<usize, f64>;

/// Entries below this fraction of their row's largest magnitude are dropped.
pub const DROP_TOLERANCE: f64 = 1e-14;

/// Which nodes carry unknowns.
///
/// `Slab` keeps only the `k = 0` layer of a one-element-thick extruded mesh
/// and folds the other layers onto it; it is exact for fields that do not
/// vary across the slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Full,
    Slab,
}

impl Layout {
    pub fn dofs(self, space: &DgSpace) -> usize {
        match self {
            Layout::Full => space.num_nodes(),
            Layout::Slab => space.num_elements() * space.n1() * space.n1(),
        }
    }

    /// Global node carrying reduced unknown `r`.
    #[inline]
    pub fn row_node(self, space: &DgSpace, r: usize) -> usize {
        match self {
            Layout::Full => r,
            Layout::Slab => {
                let layer = space.n1() * space.n1();
                (r / layer) * space.nodes_per_element() + r % layer
            }
        }
    }

    /// Reduced unknown a global node folds onto.
    #[inline]
    pub fn col(self, space: &DgSpace, g: usize) -> usize {
        match self {
            Layout::Full => g,
            Layout::Slab => {
                let layer = space.n1() * space.n1();
                let np = space.nodes_per_element();
                (g / np) * layer + (g % np) % layer
            }
        }
    }

    pub fn restrict(self, space: &DgSpace, full: &[f64]) -> Vec<f64> {
        (0..self.dofs(space)).map(|r| full[self.row_node(space, r)]).collect()
    }

    pub fn broadcast(self, space: &DgSpace, reduced: &[f64]) -> Vec<f64> {
        (0..space.num_nodes()).map(|g| reduced[self.col(space, g)]).collect()
    }

    /// Whether `Slab` reproduces the full operators: one element thick,
    /// bottom and top faces on the boundary, and geometry constant along
    /// the thickness with the thickness direction aligned with `z`.
    pub fn slab_compatible(space: &DgSpace) -> bool {
        let n1 = space.n1();
        let np = space.nodes_per_element();
        let m = space.metrics();
        let bb = space.mesh().bounding_box();
        let scale = (0..3).map(|d| (bb[d][1] - bb[d][0]).abs()).fold(1.0f64, f64::max);
        let tol = 1e-10;
        for e in 0..space.num_elements() {
            for f in [4, 5] {
                if !matches!(space.mesh().neighbor(e, f), Neighbor::Boundary { .. }) {
                    return false;
                }
            }
            for k in 0..n1 {
                for j in 0..n1 {
                    for i in 0..n1 {
                        let g = e * np + node(n1, i, j, k);
                        let g0 = e * np + node(n1, i, j, 0);
                        let (x, x0) = (m.coords()[g], m.coords()[g0]);
                        if (x[0] - x0[0]).abs() > tol * scale || (x[1] - x0[1]).abs() > tol * scale {
                            return false;
                        }
                        let (ja, ja0) = (m.contravariant()[g], m.contravariant()[g0]);
                        let mag = ja0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
                        for a in 0..3 {
                            for c in 0..3 {
                                if (ja[a][c] - ja0[a][c]).abs() > tol * mag {
                                    return false;
                                }
                            }
                        }
                        if ja0[0][2].abs() > tol * mag
                            || ja0[1][2].abs() > tol * mag
                            || ja0[2][0].abs() > tol * mag
                            || ja0[2][1].abs() > tol * mag
                        {
                            return false;
                        }
                        if (m.jacobian()[g] - m.jacobian()[g0]).abs() > tol * m.jacobian()[g0] {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Cartesian directions that carry a gradient in this layout.
    pub fn directions(self) -> &'static [usize] {
        match self {
            Layout::Full => &[0, 1, 2],
            Layout::Slab => &[0, 1],
        }
    }
}

struct RowBuilder {
    triplets: Vec<Triplet<usize, usize, f64>>,
    row: Vec<(usize, f64)>,
}

impl RowBuilder {
    fn new() -> Self {
        Self { triplets: Vec::new(), row: Vec::new() }
    }

    #[inline]
    fn add(&mut self, col: usize, val: f64) {
        if val != 0.0 {
            self.row.push((col, val));
        }
    }

    fn finish_row(&mut self, r: usize) {
        self.row.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.row.len());
        for &(c, v) in &self.row {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        let max = merged.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
        for (c, v) in merged {
            if v.abs() > DROP_TOLERANCE * max {
                self.triplets.push(Triplet::new(r, c, v));
            }
        }
        self.row.clear();
    }

    fn build(self, nrows: usize, ncols: usize) -> Result<SparseMat> {
        SparseColMat::try_new_from_triplets(nrows, ncols, &self.triplets)
            .map_err(|e| Error::NumericalBreakdown(format!("sparse assembly failed: {e:?}")))
    }
}

/// Position of a global node inside its element.
#[inline]
fn local(space: &DgSpace, g: usize) -> (usize, [usize; 3]) {
    let n1 = space.n1();
    let np = space.nodes_per_element();
    let (e, p) = (g / np, g % np);
    (e, [p % n1, (p / n1) % n1, p / (n1 * n1)])
}

/// Faces of the element that contain a node, with the face point index.
fn faces_at(space: &DgSpace, e: usize, pos: [usize; 3]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let n = space.order();
    (0..6).filter_map(move |f| {
        let axis = f / 2;
        let at = if f % 2 == 1 { n } else { 0 };
        if pos[axis] != at {
            return None;
        }
        let (ta, tb) = face_tangents(f);
        Some((f, space.metrics().face_index(e, f, pos[ta], pos[tb])))
    })
}

/// Gradient component `dir` with BR1 averages and interior-trace boundaries.
pub fn gradient_matrix(space: &DgSpace, layout: Layout, dir: usize) -> Result<SparseMat> {
    let n = layout.dofs(space);
    let (d, n1) = (space.basis().diff_matrix(), space.n1());
    let m = space.metrics();
    let lift = space.lift_factor();
    let mut rb = RowBuilder::new();
    for r in 0..n {
        let g = layout.row_node(space, r);
        let (e, pos) = local(space, g);
        let inv_j = 1.0 / m.jacobian()[g];
        let ja = m.contravariant()[g];
        for a in 0..3 {
            let c = inv_j * ja[a][dir];
            if c == 0.0 {
                continue;
            }
            for q in 0..n1 {
                let mut id = pos;
                id[a] = q;
                let h = e * space.nodes_per_element() + node(n1, id[0], id[1], id[2]);
                rb.add(layout.col(space, h), c * d[pos[a] * n1 + q]);
            }
        }
        for (_, fp) in faces_at(space, e, pos) {
            if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                let c = 0.5 * lift * m.face_jacobian()[fp] * inv_j * m.face_normal()[fp][dir];
                rb.add(layout.col(space, nbr_node), c);
                rb.add(layout.col(space, g), -c);
            }
        }
        rb.finish_row(r);
    }
    rb.build(n, n)
}

/// Linear part of divergence component `dir`: BR1 averages inside, and on
/// boundary tags with an imposed flux the interior normal flux is removed
/// (the imposed value itself enters through [`boundary_lift`]).
pub fn divergence_matrix(space: &DgSpace, layout: Layout, dir: usize, policy: &FacePolicy) -> Result<SparseMat> {
    let rules = policy.resolve(space)?;
    let n = layout.dofs(space);
    let (d, n1) = (space.basis().diff_matrix(), space.n1());
    let m = space.metrics();
    let lift = space.lift_factor();
    let np = space.nodes_per_element();
    let mut rb = RowBuilder::new();
    for r in 0..n {
        let g = layout.row_node(space, r);
        let (e, pos) = local(space, g);
        let inv_j = 1.0 / m.jacobian()[g];
        for a in 0..3 {
            for q in 0..n1 {
                let mut id = pos;
                id[a] = q;
                let h = e * np + node(n1, id[0], id[1], id[2]);
                let c = inv_j * d[pos[a] * n1 + q] * m.contravariant()[h][a][dir];
                rb.add(layout.col(space, h), c);
            }
        }
        for (_, fp) in faces_at(space, e, pos) {
            let c = lift * m.face_jacobian()[fp] * inv_j * m.face_normal()[fp][dir];
            match space.link(fp) {
                FaceLink::Interior { nbr_node, .. } => {
                    rb.add(layout.col(space, nbr_node), 0.5 * c);
                    rb.add(layout.col(space, g), -0.5 * c);
                }
                FaceLink::Boundary { tag } => {
                    if rules[tag] != BoundaryRule::InteriorTrace {
                        rb.add(layout.col(space, g), -c);
                    }
                }
            }
        }
        rb.finish_row(r);
    }
    rb.build(n, n)
}

/// Interface penalty `-lift |J_f| / J * sigma (P - P_nbr)` as a matrix on `P`.
pub fn penalty_matrix(space: &DgSpace, layout: Layout, rule: InterfaceRule) -> Result<SparseMat> {
    let n = layout.dofs(space);
    let m = space.metrics();
    let lift = space.lift_factor();
    let mut rb = RowBuilder::new();
    for r in 0..n {
        let g = layout.row_node(space, r);
        let (e, pos) = local(space, g);
        for (_, fp) in faces_at(space, e, pos) {
            if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                let s = interface_penalty(space, rule, fp, g, nbr_node)?;
                let c = lift * m.face_jacobian()[fp] / m.jacobian()[g] * s;
                rb.add(layout.col(space, g), -c);
                rb.add(layout.col(space, nbr_node), c);
            }
        }
        rb.finish_row(r);
    }
    rb.build(n, n)
}

/// Lifted imposed boundary fluxes: the constant part of the divergence.
pub fn boundary_lift(space: &DgSpace, policy: &FacePolicy) -> Result<Vec<f64>> {
    let rules = policy.resolve(space)?;
    let m = space.metrics();
    let lift = space.lift_factor();
    let mut out = vec![0.0; space.num_nodes()];
    for e in 0..space.num_elements() {
        super::ops::for_face_points(space, e, |_, fp, g| {
            if let FaceLink::Boundary { tag } = space.link(fp) {
                let value = match rules[tag] {
                    BoundaryRule::InteriorTrace => 0.0,
                    BoundaryRule::NormalFlux(v) => v,
                    BoundaryRule::NormalFluxData => policy.face_data.as_ref().expect("resolved")[fp],
                };
                out[g] += lift * m.face_jacobian()[fp] / m.jacobian()[g] * value;
            }
        });
    }
    Ok(out)
}

/// `a * alpha + b * beta` with the drop tolerance applied.
pub fn add_scaled(a: &SparseMat, alpha: f64, b: &SparseMat, beta: f64) -> Result<SparseMat> {
    let mut trip = Vec::with_capacity(a.compute_nnz() + b.compute_nnz());
    for (mat, s) in [(a, alpha), (b, beta)] {
        if s == 0.0 {
            continue;
        }
        for (r, c, v) in triplets(mat) {
            trip.push((r, c, s * v));
        }
    }
    from_entries(a.nrows(), a.ncols(), trip)
}

pub fn product(a: &SparseMat, b: &SparseMat) -> Result<SparseMat> {
    let p = faer::sparse::linalg::matmul::sparse_sparse_matmul(a.as_ref(), b.as_ref(), 1.0, Par::Seq)
        .map_err(|e| Error::NumericalBreakdown(format!("sparse product failed: {e:?}")))?;
    from_entries(p.nrows(), p.ncols(), triplets(&p).collect())
}

pub fn triplets(m: &SparseMat) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let sym = m.symbolic();
    let vals = m.val();
    (0..m.ncols()).flat_map(move |c| {
        let range = sym.col_range(c);
        range.map(move |k| (sym.row_idx()[k], c, vals[k]))
    })
}

/// Builds a matrix from possibly repeated entries, summing duplicates and
/// applying the row-relative drop tolerance.
pub fn from_entries(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<SparseMat> {
    entries.sort_unstable_by_key(|e| (e.0, e.1));
    let mut rb = RowBuilder::new();
    let mut current = None;
    for (r, c, v) in entries {
        if current != Some(r) {
            if let Some(prev) = current {
                rb.finish_row(prev);
            }
            current = Some(r);
        }
        rb.add(c, v);
    }
    if let Some(prev) = current {
        rb.finish_row(prev);
    }
    rb.build(nrows, ncols)
}

pub fn matvec(m: &SparseMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    for (r, c, v) in triplets(m) {
        y[r] += v * x[c];
    }
    y
}

/// Grad, Div and penalty matrices of one space and layout.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    pub layout: Layout,
    pub grad: Vec<SparseMat>,
    pub div: Vec<SparseMat>,
}

impl OperatorMatrices {
    /// `div` uses `policy` for its boundary treatment; only whether a tag
    /// imposes a flux matters here.
    pub fn new(space: &DgSpace, layout: Layout, policy: &FacePolicy) -> Result<Self> {
        let dirs = layout.directions();
        let grad = dirs.iter().map(|&d| gradient_matrix(space, layout, d)).collect::<Result<Vec<_>>>()?;
        let div = dirs
            .iter()
            .map(|&d| divergence_matrix(space, layout, d, policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, grad, div })
    }

    /// `sum_d Div_d Grad_d`, the unpenalized DG Laplacian.
    pub fn laplacian(&self) -> Result<SparseMat> {
        let mut acc: Option<SparseMat> = None;
        for (dv, gr) in self.div.iter().zip(&self.grad) {
            let p = product(dv, gr)?;
            acc = Some(match acc {
                None => p,
                Some(a) => add_scaled(&a, 1.0, &p, 1.0)?,
            });
        }
        acc.ok_or_else(|| Error::State("no directions".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgops::{dg_divergence, dg_gradient, Field, VecField};
    use crate::geometry::{distort_mesh, generate_box_mesh, Distortion};
    use rand::{Rng, SeedableRng};

    fn spaces() -> Vec<DgSpace> {
        let cube = generate_box_mesh(2, 2, 2, [[0.0, 1.0]; 3]).unwrap();
        let curved = distort_mesh(&cube, Distortion::CurvedSine { ngeo: 3 }, 0.05).unwrap();
        vec![DgSpace::new(cube, 2).unwrap(), DgSpace::new(curved, 3).unwrap()]
    }

    fn rand_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn matrices_match_matrix_free_operators() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for s in spaces() {
            let mut pol = FacePolicy::uniform(&s, InterfaceRule::Average, BoundaryRule::NormalFlux(0.0));
            pol.boundary.insert("left".into(), BoundaryRule::NormalFlux(0.7));
            pol.boundary.insert("top".into(), BoundaryRule::InteriorTrace);
            let ops = OperatorMatrices::new(&s, Layout::Full, &pol).unwrap();
            let u = rand_vec(s.num_nodes(), &mut rng);
            let g = dg_gradient(&s, &Field::new(u.clone()), &pol).unwrap();
            for d in 0..3 {
                close(&matvec(&ops.grad[d], &u), &g.comps[d], 1e-12);
            }
            let mut v = VecField::zeros(s.num_nodes());
            for c in &mut v.comps {
                *c = rand_vec(s.num_nodes(), &mut rng);
            }
            let div = dg_divergence(&s, &v, &pol, None).unwrap();
            let lift = boundary_lift(&s, &pol).unwrap();
            let mut got = lift.clone();
            for d in 0..3 {
                for (a, b) in got.iter_mut().zip(matvec(&ops.div[d], &v.comps[d])) {
                    *a += b;
                }
            }
            close(&got, &div.values, 1e-12);

            let rule = InterfaceRule::Penalty { kappa_sigma: 3.0, factor: 2.0 };
            let pen = penalty_matrix(&s, Layout::Full, rule).unwrap();
            let w = rand_vec(s.num_nodes(), &mut rng);
            let mut pol_p = pol.clone();
            pol_p.interface = rule;
            let with = dg_divergence(&s, &v, &pol_p, Some(&Field::new(w.clone()))).unwrap();
            let diff: Vec<f64> = with.values.iter().zip(&div.values).map(|(a, b)| a - b).collect();
            close(&matvec(&pen, &w), &diff, 1e-11);
        }
    }

    #[test]
    fn slab_layout_reproduces_full_operators() {
        let m = generate_box_mesh(3, 2, 1, [[0.0, 1.5], [0.0, 1.0], [0.0, 0.3]]).unwrap();
        let m = distort_mesh(&m, Distortion::CurvedSine { ngeo: 3 }, 0.05).unwrap();
        let s = DgSpace::new(m, 3).unwrap();
        assert!(Layout::slab_compatible(&s));
        let pol = FacePolicy::uniform(&s, InterfaceRule::Average, BoundaryRule::NormalFlux(0.0));
        let full = OperatorMatrices::new(&s, Layout::Full, &pol).unwrap();
        let slab = OperatorMatrices::new(&s, Layout::Slab, &pol).unwrap();
        let lf = full.laplacian().unwrap();
        let ls = slab.laplacian().unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let red = rand_vec(Layout::Slab.dofs(&s), &mut rng);
        let wide = Layout::Slab.broadcast(&s, &red);
        let yf = matvec(&lf, &wide);
        let ys = matvec(&ls, &red);
        close(&ys, &Layout::Slab.restrict(&s, &yf), 1e-11);
        close(&Layout::Slab.broadcast(&s, &ys), &yf, 1e-11);

        let cube = DgSpace::new(generate_box_mesh(2, 2, 2, [[0.0, 1.0]; 3]).unwrap(), 2).unwrap();
        assert!(!Layout::slab_compatible(&cube));
    }
}
