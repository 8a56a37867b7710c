use std::collections::BTreeMap;

use crate::basis::NodalBasis;
use crate::error::{Error, Result};
use crate::geometry::{
    build_metrics, face_to_volume, orient, CurvedHexMesh, MetricSet, Neighbor, Point,
};
use crate::tensor::{node, volume_weights};

/// What a face point sees on the other side of its face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceLink {
    Interior {
        /// Global node of the matching point in the neighbour.
        nbr_node: usize,
        /// Face-point index of the matching point in the neighbour.
        nbr_point: usize,
    },
    Boundary {
        tag: usize,
    },
}

/// Mesh, basis and geometric factors of one discretization, plus the
/// precomputed face point connectivity. Immutable once built.
#[derive(Debug, Clone)]
pub struct DgSpace {
    mesh: CurvedHexMesh,
    basis: NodalBasis,
    metrics: MetricSet,
    weights: Vec<f64>,
    mass: Vec<f64>,
    links: Vec<FaceLink>,
    tags: Vec<String>,
}

impl DgSpace {
    pub fn new(mesh: CurvedHexMesh, order: usize) -> Result<Self> {
        let basis = NodalBasis::new(order)?;
        let metrics = build_metrics(&mesh, &basis)?;
        let n1 = order + 1;
        let np = n1 * n1 * n1;
        let weights = volume_weights(&basis);
        let mass = metrics
            .jacobian()
            .iter()
            .enumerate()
            .map(|(p, j)| weights[p % np] * j)
            .collect();
        let tags: Vec<String> = mesh.boundary_tags().into_iter().map(String::from).collect();
        let mut links = vec![FaceLink::Boundary { tag: 0 }; mesh.num_elements() * 6 * n1 * n1];
        for e in 0..mesh.num_elements() {
            for f in 0..6 {
                for b in 0..n1 {
                    for a in 0..n1 {
                        let idx = metrics.face_index(e, f, a, b);
                        links[idx] = match mesh.neighbor(e, f) {
                            Neighbor::Boundary { face_index } => {
                                let t = &mesh.boundary_faces()[face_index].tag;
                                FaceLink::Boundary {
                                    tag: tags.iter().position(|s| s == t).expect("known tag"),
                                }
                            }
                            Neighbor::Interior { face_index, is_left } => {
                                let face = mesh.interior_faces()[face_index];
                                let (ne, nf) = if is_left {
                                    (face.elem_r, face.face_r)
                                } else {
                                    (face.elem_l, face.face_l)
                                };
                                let (s, t) = if is_left {
                                    orient(face.orientation, order, a, b)
                                } else {
                                    inverse_orient(face.orientation, order, a, b)
                                };
                                let [i, j, k] = face_to_volume(nf, order, s, t);
                                FaceLink::Interior {
                                    nbr_node: ne * np + node(n1, i, j, k),
                                    nbr_point: metrics.face_index(ne, nf, s, t),
                                }
                            }
                        };
                    }
                }
            }
        }
        Ok(Self { mesh, basis, metrics, weights, mass, links, tags })
    }

    pub fn mesh(&self) -> &CurvedHexMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &NodalBasis {
        &self.basis
    }

    pub fn metrics(&self) -> &MetricSet {
        &self.metrics
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    pub fn n1(&self) -> usize {
        self.basis.order() + 1
    }

    pub fn nodes_per_element(&self) -> usize {
        self.metrics.nodes_per_element()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_elements() * self.nodes_per_element()
    }

    /// Tensor quadrature weights of one element, `i` fastest.
    pub fn volume_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal of the GL mass matrix, `w_ijk J_ijk`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn coords(&self) -> &[Point] {
        self.metrics.coords()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn link(&self, face_point: usize) -> FaceLink {
        self.links[face_point]
    }

    /// Global volume node of face point `(a, b)` on `face` of `elem`.
    #[inline]
    pub fn face_node(&self, elem: usize, face: usize, a: usize, b: usize) -> usize {
        let [i, j, k] = face_to_volume(face, self.order(), a, b);
        elem * self.nodes_per_element() + node(self.n1(), i, j, k)
    }

    /// Quadrature weight `w_a w_b` of a face point.
    #[inline]
    pub fn face_weight(&self, a: usize, b: usize) -> f64 {
        let w = self.basis.weights();
        w[a] * w[b]
    }

    /// Lifting factor `1 / w_0` that maps a face quadrature term to the
    /// collocated volume equation.
    #[inline]
    pub fn lift_factor(&self) -> f64 {
        1.0 / self.basis.weights()[0]
    }

    /// Samples a function at every volume node.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Field {
        Field::new(self.coords().iter().map(|&x| f(x)).collect())
    }

    pub fn zeros(&self) -> Field {
        Field::new(vec![0.0; self.num_nodes()])
    }

    pub fn check_field(&self, u: &Field) -> Result<()> {
        if u.len() != self.num_nodes() {
            return Err(Error::Configuration(format!(
                "field has {} values, space has {} nodes",
                u.len(),
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// `sum_e <J u, v>_N`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    /// `sum_e <J u, 1>_N`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        self.mass.iter().zip(u).map(|(m, a)| m * a).sum()
    }
}

fn inverse_orient(code: u8, n: usize, s: usize, t: usize) -> (usize, usize) {
    let (mut s, mut t) = (s, t);
    if code & 2 != 0 {
        s = n - s;
    }
    if code & 1 != 0 {
        t = n - t;
    }
    if code & 4 != 0 {
        (t, s)
    } else {
        (s, t)
    }
}

/// Nodal scalar field over all elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Nodal 3-vector field, stored component by component.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField {
    pub comps: [Vec<f64>; 3],
}

impl VecField {
    pub fn zeros(n: usize) -> Self {
        Self { comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    pub fn at(&self, p: usize) -> [f64; 3] {
        [self.comps[0][p], self.comps[1][p], self.comps[2][p]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { comps: self.comps.clone().map(|c| c.into_iter().map(|v| s * v).collect()) }
    }
}

/// Normal flux rule at a physical boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryRule {
    /// The numerical value equals the interior trace; no lifting term.
    InteriorTrace,
    /// Imposed normal flux `F* . n` (zero for a homogeneous Neumann wall).
    NormalFlux(f64),
    /// Imposed normal flux read per face point from the policy data.
    NormalFluxData,
}

/// Interface rule for vector fluxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterfaceRule {
    Average,
    /// Average minus `factor * sigma [[P]]` with `sigma` from
    /// [`penalty_sigma`](super::penalty_sigma) at each face point.
    Penalty { kappa_sigma: f64, factor: f64 },
    /// Average minus `sigma [[P]]` with a fixed `sigma`.
    ConstantPenalty { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacePolicy {
    pub interface: InterfaceRule,
    pub boundary: BTreeMap<String, BoundaryRule>,
    /// Face-point data for [`BoundaryRule::NormalFluxData`], indexed like
    /// the metric face arrays.
    pub face_data: Option<Vec<f64>>,
}

impl FacePolicy {
    pub fn new(interface: InterfaceRule) -> Self {
        Self { interface, boundary: BTreeMap::new(), face_data: None }
    }

    pub fn with(mut self, tag: &str, rule: BoundaryRule) -> Self {
        self.boundary.insert(tag.to_string(), rule);
        self
    }

    /// Same rule on every tag of the space.
    pub fn uniform(space: &DgSpace, interface: InterfaceRule, rule: BoundaryRule) -> Self {
        let mut p = Self::new(interface);
        for t in space.tags() {
            p.boundary.insert(t.clone(), rule);
        }
        p
    }

    /// Rules indexed by the space's tag numbering.
    pub(crate) fn resolve(&self, space: &DgSpace) -> Result<Vec<BoundaryRule>> {
        let rules = space
            .tags()
            .iter()
            .map(|t| {
                self.boundary
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::Configuration(format!("no boundary rule for tag `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rules.contains(&BoundaryRule::NormalFluxData) {
            match &self.face_data {
                Some(d) if d.len() == space.num_elements() * 6 * space.n1() * space.n1() => {}
                _ => return Err(Error::Configuration("boundary face data missing or mis-sized".into())),
            }
        }
        Ok(rules)
    }
}
