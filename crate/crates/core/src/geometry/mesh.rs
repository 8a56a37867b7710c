use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Corner of the reference cube for each local vertex, VTK hexahedron order.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Local vertex index of the reference corner `(i, j, k)`, each in `{0, 1}`.
pub fn corner_index(i: usize, j: usize, k: usize) -> usize {
    const LUT: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];
    LUT[i + 2 * j + 4 * k]
}

/// Reference direction normal to a local face (0 = xi, 1 = eta, 2 = zeta).
pub fn face_axis(face: usize) -> usize {
    face / 2
}

/// `+1` for faces at the upper end of their axis, `-1` otherwise.
pub fn face_sign(face: usize) -> f64 {
    if face % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Tangential reference directions `(a, b)` of a face.
pub fn face_tangents(face: usize) -> (usize, usize) {
    match face_axis(face) {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Volume index `(i, j, k)` of face point `(a, b)` on a face of an order-`n`
/// element.
pub fn face_to_volume(face: usize, n: usize, a: usize, b: usize) -> [usize; 3] {
    let c = if face % 2 == 1 { n } else { 0 };
    match face_axis(face) {
        0 => [c, a, b],
        1 => [a, c, b],
        _ => [a, b, c],
    }
}

/// Local vertex indices of a face at face corners `(0,0), (1,0), (0,1), (1,1)`.
pub fn face_corners(face: usize) -> [usize; 4] {
    let mut out = [0; 4];
    for (slot, (a, b)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        let [i, j, k] = face_to_volume(face, 1, a, b);
        out[slot] = corner_index(i, j, k);
    }
    out
}

/// Index on the neighbouring face of point `(p, q)` seen from the left face.
///
/// The orientation code packs `swap * 4 + flip_a * 2 + flip_b`.
#[inline]
pub fn orient(code: u8, n: usize, p: usize, q: usize) -> (usize, usize) {
    let (mut s, mut t) = if code & 4 != 0 { (q, p) } else { (p, q) };
    if code & 2 != 0 {
        s = n - s;
    }
    if code & 1 != 0 {
        t = n - t;
    }
    (s, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvedFace {
    pub ngeo: usize,
    /// `(ngeo+1)^2` points at Gauss-Lobatto nodes, first tangent fastest.
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteriorFace {
    pub elem_l: usize,
    pub face_l: usize,
    pub elem_r: usize,
    pub face_r: usize,
    pub orientation: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryFace {
    pub elem: usize,
    pub face: usize,
    pub tag: String,
}

/// What lies across a local element face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Interior { face_index: usize, is_left: bool },
    Boundary { face_index: usize },
}

/// Conforming hexahedral mesh with optional curved faces.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvedHexMesh {
    vertices: Vec<Point>,
    elements: Vec<[usize; 8]>,
    curved_faces: BTreeMap<(usize, usize), CurvedFace>,
    interior: Vec<InteriorFace>,
    boundary: Vec<BoundaryFace>,
    neighbors: Vec<[Neighbor; 6]>,
}

impl CurvedHexMesh {
    /// Builds a mesh and its face connectivity. Every element face must be
    /// either shared with exactly one other element or listed in `boundary`.
    pub fn new(
        vertices: Vec<Point>,
        elements: Vec<[usize; 8]>,
        boundary: Vec<(usize, usize, String)>,
        curved_faces: BTreeMap<(usize, usize), CurvedFace>,
    ) -> Result<Self> {
        for (e, el) in elements.iter().enumerate() {
            for &v in el {
                if v >= vertices.len() {
                    return Err(Error::Connectivity(format!(
                        "element {e} references vertex {v} of {}",
                        vertices.len()
                    )));
                }
            }
        }
        for &(e, f) in curved_faces.keys() {
            if e >= elements.len() || f >= 6 {
                return Err(Error::Connectivity(format!("curved face ({e}, {f}) does not exist")));
            }
        }
        for cf in curved_faces.values() {
            if cf.ngeo == 0 || cf.points.len() != (cf.ngeo + 1) * (cf.ngeo + 1) {
                return Err(Error::InvalidArgument(format!(
                    "curved face of order {} carries {} points",
                    cf.ngeo,
                    cf.points.len()
                )));
            }
        }

        let mut by_key: HashMap<[usize; 4], Vec<(usize, usize)>> = HashMap::new();
        for (e, el) in elements.iter().enumerate() {
            for f in 0..6 {
                let mut key = face_corners(f).map(|c| el[c]);
                key.sort_unstable();
                by_key.entry(key).or_default().push((e, f));
            }
        }
        let mut boundary_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut boundary_faces = Vec::with_capacity(boundary.len());
        for (e, f, tag) in boundary {
            if e >= elements.len() || f >= 6 {
                return Err(Error::Connectivity(format!("boundary face ({e}, {f}) does not exist")));
            }
            if boundary_of.insert((e, f), boundary_faces.len()).is_some() {
                return Err(Error::Connectivity(format!("boundary face ({e}, {f}) listed twice")));
            }
            boundary_faces.push(BoundaryFace { elem: e, face: f, tag });
        }

        let placeholder = Neighbor::Boundary { face_index: usize::MAX };
        let mut neighbors = vec![[placeholder; 6]; elements.len()];
        let mut interior = Vec::new();
        let mut groups: Vec<_> = by_key.into_values().collect();
        groups.sort_unstable();
        for group in groups {
            match group.as_slice() {
                &[(e, f)] => match boundary_of.get(&(e, f)) {
                    Some(&bi) => neighbors[e][f] = Neighbor::Boundary { face_index: bi },
                    None => {
                        return Err(Error::Connectivity(format!(
                            "face {f} of element {e} has no neighbour and no boundary tag"
                        )))
                    }
                },
                &[(el, fl), (er, fr)] => {
                    for side in [(el, fl), (er, fr)] {
                        if boundary_of.contains_key(&side) {
                            return Err(Error::Connectivity(format!(
                                "face {} of element {} is shared but tagged as boundary",
                                side.1, side.0
                            )));
                        }
                    }
                    let orientation = match_orientation(&elements[el], fl, &elements[er], fr)
                        .ok_or_else(|| {
                            Error::Connectivity(format!(
                                "faces ({el}, {fl}) and ({er}, {fr}) do not match"
                            ))
                        })?;
                    let idx = interior.len();
                    interior.push(InteriorFace {
                        elem_l: el,
                        face_l: fl,
                        elem_r: er,
                        face_r: fr,
                        orientation,
                    });
                    neighbors[el][fl] = Neighbor::Interior { face_index: idx, is_left: true };
                    neighbors[er][fr] = Neighbor::Interior { face_index: idx, is_left: false };
                }
                many => {
                    return Err(Error::Connectivity(format!(
                        "{} element faces share the corners of face {} of element {}",
                        many.len(),
                        many[0].1,
                        many[0].0
                    )))
                }
            }
        }

        Ok(Self {
            vertices,
            elements,
            curved_faces,
            interior,
            boundary: boundary_faces,
            neighbors,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn curved_faces(&self) -> &BTreeMap<(usize, usize), CurvedFace> {
        &self.curved_faces
    }

    pub fn curved_face(&self, elem: usize, face: usize) -> Option<&CurvedFace> {
        self.curved_faces.get(&(elem, face))
    }

    pub fn interior_faces(&self) -> &[InteriorFace] {
        &self.interior
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    pub fn neighbor(&self, elem: usize, face: usize) -> Neighbor {
        self.neighbors[elem][face]
    }

    /// Distinct boundary tags in order of first appearance.
    pub fn boundary_tags(&self) -> Vec<&str> {
        let mut tags: Vec<&str> = Vec::new();
        for b in &self.boundary {
            if !tags.contains(&b.tag.as_str()) {
                tags.push(&b.tag);
            }
        }
        tags
    }

    pub fn corner_points(&self, elem: usize) -> [Point; 8] {
        self.elements[elem].map(|v| self.vertices[v])
    }

    pub fn bounding_box(&self) -> [[f64; 2]; 3] {
        let mut bb = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
        for p in &self.vertices {
            for d in 0..3 {
                bb[d][0] = bb[d][0].min(p[d]);
                bb[d][1] = bb[d][1].max(p[d]);
            }
        }
        bb
    }

    pub(crate) fn with_geometry(
        &self,
        vertices: Vec<Point>,
        curved_faces: BTreeMap<(usize, usize), CurvedFace>,
    ) -> Self {
        Self {
            vertices,
            curved_faces,
            ..self.clone()
        }
    }
}

fn match_orientation(left: &[usize; 8], fl: usize, right: &[usize; 8], fr: usize) -> Option<u8> {
    let lc = face_corners(fl).map(|c| left[c]);
    let rc = face_corners(fr).map(|c| right[c]);
    (0u8..8).find(|&code| {
        [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .enumerate()
            .all(|(slot, &(p, q))| {
                let (s, t) = orient(code, 1, p, q);
                lc[slot] == rc[s + 2 * t]
            })
    })
}

/// Cartesian box mesh of `nx * ny * nz` hexahedra, x index fastest.
///
/// Sides are tagged `left`/`right` (x), `bottom`/`top` (y) and
/// `front`/`back` (z).
pub fn generate_box_mesh(
    nx: usize,
    ny: usize,
    nz: usize,
    bounds: [[f64; 2]; 3],
) -> Result<CurvedHexMesh> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidArgument(format!(
            "box mesh needs positive element counts, got {nx}x{ny}x{nz}"
        )));
    }
    for (d, [lo, hi]) in bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}] on axis {d}")));
        }
    }
    let counts = [nx, ny, nz];
    let coord = |d: usize, i: usize| {
        let [lo, hi] = bounds[d];
        if i == counts[d] {
            hi
        } else {
            lo + (hi - lo) * i as f64 / counts[d] as f64
        }
    };
    let vid = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([coord(0, i), coord(1, j), coord(2, k)]);
            }
        }
    }
    let mut elements = Vec::with_capacity(nx * ny * nz);
    let mut boundary = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let e = elements.len();
                elements.push(CORNERS.map(|[a, b, c]| vid(i + a, j + b, k + c)));
                let sides = [
                    (i == 0, 0, "left"),
                    (i + 1 == nx, 1, "right"),
                    (j == 0, 2, "bottom"),
                    (j + 1 == ny, 3, "top"),
                    (k == 0, 4, "front"),
                    (k + 1 == nz, 5, "back"),
                ];
                for (on, f, tag) in sides {
                    if on {
                        boundary.push((e, f, tag.to_string()));
                    }
                }
            }
        }
    }
    CurvedHexMesh::new(vertices, elements, boundary, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> [[f64; 2]; 3] {
        [[0.0, 1.0]; 3]
    }

    #[test]
    fn face_corner_tables() {
        assert_eq!(face_corners(0), [0, 3, 4, 7]);
        assert_eq!(face_corners(1), [1, 2, 5, 6]);
        assert_eq!(face_corners(4), [0, 1, 3, 2]);
        for (c, &[i, j, k]) in CORNERS.iter().enumerate() {
            assert_eq!(corner_index(i, j, k), c);
        }
    }

    #[test]
    fn orientation_codes_are_involution_free_bijections() {
        for code in 0..8u8 {
            let mut seen = [[false; 4]; 4];
            for p in 0..4 {
                for q in 0..4 {
                    let (s, t) = orient(code, 3, p, q);
                    assert!(!seen[s][t]);
                    seen[s][t] = true;
                }
            }
        }
    }

    #[test]
    fn box_counts() {
        let m = generate_box_mesh(4, 4, 1, [[-1.0, 1.0], [-1.0, 1.0], [0.0, 0.1]]).unwrap();
        assert_eq!(m.num_elements(), 16);
        // 4 + 4 + 4 + 4 side faces and 16 + 16 slab faces
        assert_eq!(m.boundary_faces().len(), 48);
        assert_eq!(m.interior_faces().len(), 24);

        let m = generate_box_mesh(2, 1, 1, unit()).unwrap();
        assert_eq!(m.interior_faces().len(), 1);
        let f = m.interior_faces()[0];
        assert_eq!((f.elem_l, f.face_l, f.elem_r, f.face_r, f.orientation), (0, 1, 1, 0, 0));
    }

    #[test]
    fn every_face_has_a_neighbour_entry() {
        let m = generate_box_mesh(3, 2, 2, unit()).unwrap();
        let total = 6 * m.num_elements();
        assert_eq!(2 * m.interior_faces().len() + m.boundary_faces().len(), total);
        for e in 0..m.num_elements() {
            for f in 0..6 {
                match m.neighbor(e, f) {
                    Neighbor::Boundary { face_index } => {
                        let b = &m.boundary_faces()[face_index];
                        assert_eq!((b.elem, b.face), (e, f));
                    }
                    Neighbor::Interior { face_index, is_left } => {
                        let i = m.interior_faces()[face_index];
                        let side = if is_left { (i.elem_l, i.face_l) } else { (i.elem_r, i.face_r) };
                        assert_eq!(side, (e, f));
                    }
                }
            }
        }
    }

    #[test]
    fn rotated_neighbour_gets_nontrivial_code() {
        // second element is the x-shifted cube with its local frame rotated a
        // quarter turn about x
        let mut v: Vec<Point> = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..3 {
                    v.push([i as f64, j as f64, k as f64]);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| (k * 2 + j) * 3 + i;
        let e0 = CORNERS.map(|[a, b, c]| id(a, b, c));
        // local (xi, eta, zeta) -> global (x, z, 1 - y)
        let e1 = CORNERS.map(|[a, b, c]| id(1 + a, 1 - c, b));
        let mut boundary = Vec::new();
        for f in 0..6 {
            if f != 1 {
                boundary.push((0, f, "wall".to_string()));
            }
            if f != 0 {
                boundary.push((1, f, "wall".to_string()));
            }
        }
        let m = CurvedHexMesh::new(v, vec![e0, e1], boundary, BTreeMap::new()).unwrap();
        let f = m.interior_faces()[0];
        assert_ne!(f.orientation, 0);
        let lc = face_corners(f.face_l).map(|c| m.elements()[f.elem_l][c]);
        let rc = face_corners(f.face_r).map(|c| m.elements()[f.elem_r][c]);
        for (slot, (p, q)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let (s, t) = orient(f.orientation, 1, p, q);
            assert_eq!(lc[slot], rc[s + 2 * t]);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(generate_box_mesh(0, 1, 1, unit()), Err(Error::InvalidArgument(_))));
        assert!(generate_box_mesh(1, 1, 1, [[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).is_err());

        let m = generate_box_mesh(2, 1, 1, unit()).unwrap();
        let mut b: Vec<_> = m.boundary_faces().iter().map(|b| (b.elem, b.face, b.tag.clone())).collect();
        b.pop();
        let r = CurvedHexMesh::new(m.vertices().to_vec(), m.elements().to_vec(), b, BTreeMap::new());
        assert!(matches!(r, Err(Error::Connectivity(_))));
    }
}
