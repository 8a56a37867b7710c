use crate::basis::NodalBasis;
use crate::error::{Error, Result};
use crate::tensor::{deriv, node};

use super::mapping::element_nodes;
use super::mesh::{face_axis, face_sign, face_to_volume, CurvedHexMesh, Point};

/// Geometric factors of every element at the volume and face nodes.
#[derive(Debug, Clone)]
pub struct MetricSet {
    order: usize,
    num_elements: usize,
    coords: Vec<Point>,
    jacobian: Vec<f64>,
    /// `contravariant[node][i][n]` is the `n`-th Cartesian component of `J a^i`.
    contravariant: Vec<[[f64; 3]; 3]>,
    face_jacobian: Vec<f64>,
    face_normal: Vec<Point>,
}

impl MetricSet {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn nodes_per_element(&self) -> usize {
        let n1 = self.order + 1;
        n1 * n1 * n1
    }

    pub fn nodes_per_face(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    pub fn contravariant(&self) -> &[[[f64; 3]; 3]] {
        &self.contravariant
    }

    /// Flat index of face point `(a, b)` of local face `face` of `elem`.
    #[inline]
    pub fn face_index(&self, elem: usize, face: usize, a: usize, b: usize) -> usize {
        let n1 = self.order + 1;
        (elem * 6 + face) * n1 * n1 + b * n1 + a
    }

    /// `|J a^i|` on faces normal to reference direction `i`.
    pub fn face_jacobian(&self) -> &[f64] {
        &self.face_jacobian
    }

    /// Outward unit normals at face points.
    pub fn face_normal(&self) -> &[Point] {
        &self.face_normal
    }
}

/// Builds curl-form metric terms on the isoparametric order-`N` mapping.
pub fn build_metrics(mesh: &CurvedHexMesh, basis: &NodalBasis) -> Result<MetricSet> {
    let n = basis.order();
    let n1 = n + 1;
    let np = n1 * n1 * n1;
    let ne = mesh.num_elements();
    let mut coords = Vec::with_capacity(ne * np);
    let mut jacobian = Vec::with_capacity(ne * np);
    let mut contravariant = Vec::with_capacity(ne * np);
    let mut face_jacobian = vec![0.0; ne * 6 * n1 * n1];
    let mut face_normal = vec![[0.0; 3]; ne * 6 * n1 * n1];

    let mut comp = vec![vec![0.0; np]; 3];
    // dx[m][j] = d X_m / d xi^j
    let mut dx = vec![vec![vec![0.0; np]; 3]; 3];
    let mut v = vec![vec![0.0; np]; 3];
    let mut tmp = vec![0.0; np];
    let mut ja = vec![[[0.0; 3]; 3]; np];

    for e in 0..ne {
        let x = element_nodes(mesh, e, basis)?;
        for (p, xp) in x.iter().enumerate() {
            for d in 0..3 {
                comp[d][p] = xp[d];
            }
        }
        for m in 0..3 {
            for j in 0..3 {
                deriv(basis, &comp[m], j, &mut dx[m][j]);
            }
        }
        for cart in 0..3 {
            let m = (cart + 1) % 3;
            let l = (cart + 2) % 3;
            for j in 0..3 {
                for p in 0..np {
                    v[j][p] = comp[l][p] * dx[m][j][p];
                }
            }
            // J a^i_cart = -(curl V)_i
            for i in 0..3 {
                let (r, s) = ((i + 1) % 3, (i + 2) % 3);
                deriv(basis, &v[s], r, &mut tmp);
                for p in 0..np {
                    ja[p][i][cart] = -tmp[p];
                }
                deriv(basis, &v[r], s, &mut tmp);
                for p in 0..np {
                    ja[p][i][cart] += tmp[p];
                }
            }
        }
        for p in 0..np {
            let a1 = [dx[0][0][p], dx[1][0][p], dx[2][0][p]];
            let a2 = [dx[0][1][p], dx[1][1][p], dx[2][1][p]];
            let a3 = [dx[0][2][p], dx[1][2][p], dx[2][2][p]];
            let jac = dot(a1, cross(a2, a3));
            if !(jac > 0.0) {
                return Err(Error::InvalidGeometry {
                    element: e,
                    detail: format!("Jacobian {jac:e} at node {p}"),
                });
            }
            jacobian.push(jac);
        }
        coords.extend_from_slice(&x);
        contravariant.extend_from_slice(&ja);

        for f in 0..6 {
            let axis = face_axis(f);
            let sign = face_sign(f);
            for b in 0..n1 {
                for a in 0..n1 {
                    let [i, j, k] = face_to_volume(f, n, a, b);
                    let vec = ja[node(n1, i, j, k)][axis];
                    let mag = dot(vec, vec).sqrt();
                    let idx = (e * 6 + f) * n1 * n1 + b * n1 + a;
                    face_jacobian[idx] = mag;
                    face_normal[idx] = vec.map(|c| sign * c / mag);
                }
            }
        }
    }

    Ok(MetricSet {
        order: n,
        num_elements: ne,
        coords,
        jacobian,
        contravariant,
        face_jacobian,
        face_normal,
    })
}

/// Largest nodal value of `|sum_i d(J a^i_n)/d xi^i|` over elements,
/// nodes and Cartesian components.
pub fn metric_identity_residual(metrics: &MetricSet, basis: &NodalBasis) -> f64 {
    let np = metrics.nodes_per_element();
    let mut comp = vec![0.0; np];
    let mut acc = vec![0.0; np];
    let mut tmp = vec![0.0; np];
    let mut worst: f64 = 0.0;
    for e in 0..metrics.num_elements() {
        let ja = &metrics.contravariant()[e * np..(e + 1) * np];
        for cart in 0..3 {
            acc.fill(0.0);
            for i in 0..3 {
                for p in 0..np {
                    comp[p] = ja[p][i][cart];
                }
                deriv(basis, &comp, i, &mut tmp);
                for p in 0..np {
                    acc[p] += tmp[p];
                }
            }
            worst = acc.iter().fold(worst, |w, v| w.max(v.abs()));
        }
    }
    worst
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
