use crate::basis::{barycentric_weights, gauss_lobatto, lagrange_at, NodalBasis};
use crate::error::Result;

use super::mesh::{face_corners, CurvedHexMesh, Point};

/// Parametric surface of one element face over `[-1, 1]^2`.
#[derive(Debug, Clone)]
pub enum FaceSurface {
    /// Corners at `(-1,-1), (1,-1), (-1,1), (1,1)`.
    Bilinear([Point; 4]),
    Polynomial {
        nodes: Vec<f64>,
        lambda: Vec<f64>,
        points: Vec<Point>,
    },
}

impl FaceSurface {
    pub fn polynomial(ngeo: usize, points: Vec<Point>) -> Result<Self> {
        let (nodes, _) = gauss_lobatto(ngeo)?;
        let lambda = barycentric_weights(&nodes)?;
        Ok(Self::Polynomial { nodes, lambda, points })
    }

    pub fn eval(&self, a: f64, b: f64) -> Point {
        match self {
            Self::Bilinear(c) => {
                let (ua, ub) = (0.5 * (1.0 + a), 0.5 * (1.0 + b));
                let w = [(1.0 - ua) * (1.0 - ub), ua * (1.0 - ub), (1.0 - ua) * ub, ua * ub];
                let mut p = [0.0; 3];
                for (wi, ci) in w.iter().zip(c) {
                    for d in 0..3 {
                        p[d] += wi * ci[d];
                    }
                }
                p
            }
            Self::Polynomial { nodes, lambda, points } => {
                let la = lagrange_at(nodes, lambda, a);
                let lb = lagrange_at(nodes, lambda, b);
                let n1 = nodes.len();
                let mut p = [0.0; 3];
                for (j, wb) in lb.iter().enumerate() {
                    if *wb == 0.0 {
                        continue;
                    }
                    for (i, wa) in la.iter().enumerate() {
                        let w = wa * wb;
                        if w == 0.0 {
                            continue;
                        }
                        let q = points[j * n1 + i];
                        for d in 0..3 {
                            p[d] += w * q[d];
                        }
                    }
                }
                p
            }
        }
    }
}

/// The six bounding surfaces of an element in local face order
/// (left, right, front, back, bottom, top).
pub fn element_faces(mesh: &CurvedHexMesh, elem: usize) -> Result<[FaceSurface; 6]> {
    let corners = mesh.corner_points(elem);
    let mut out: Vec<FaceSurface> = Vec::with_capacity(6);
    for f in 0..6 {
        out.push(match mesh.curved_face(elem, f) {
            Some(cf) => FaceSurface::polynomial(cf.ngeo, cf.points.clone())?,
            None => FaceSurface::Bilinear(face_corners(f).map(|c| corners[c])),
        });
    }
    Ok(out.try_into().expect("six faces"))
}

/// Linear transfinite blend of the six faces, edges and corners.
pub fn transfinite_map(faces: &[FaceSurface; 6], xi: [f64; 3]) -> Point {
    let [x, y, z] = xi;
    let [sl, sr, sf, sba, sbo, st] = faces;
    let (xm, xp) = (1.0 - x, 1.0 + x);
    let (ym, yp) = (1.0 - y, 1.0 + y);
    let (zm, zp) = (1.0 - z, 1.0 + z);

    let terms: [(f64, Point); 26] = [
        (0.5 * xm, sl.eval(y, z)),
        (0.5 * xp, sr.eval(y, z)),
        (0.5 * ym, sf.eval(x, z)),
        (0.5 * yp, sba.eval(x, z)),
        (0.5 * zm, sbo.eval(x, y)),
        (0.5 * zp, st.eval(x, y)),
        (-0.25 * ym * zm, sbo.eval(x, -1.0)),
        (-0.25 * xp * zm, sbo.eval(1.0, y)),
        (-0.25 * yp * zm, sbo.eval(x, 1.0)),
        (-0.25 * xm * zm, sbo.eval(-1.0, y)),
        (-0.25 * ym * zp, st.eval(x, -1.0)),
        (-0.25 * xp * zp, st.eval(1.0, y)),
        (-0.25 * yp * zp, st.eval(x, 1.0)),
        (-0.25 * xm * zp, st.eval(-1.0, y)),
        (-0.25 * xm * ym, sl.eval(-1.0, z)),
        (-0.25 * xm * yp, sl.eval(1.0, z)),
        (-0.25 * xp * ym, sr.eval(-1.0, z)),
        (-0.25 * xp * yp, sr.eval(1.0, z)),
        (0.125 * xm * ym * zm, sbo.eval(-1.0, -1.0)),
        (0.125 * xp * ym * zm, sbo.eval(1.0, -1.0)),
        (0.125 * xm * yp * zm, sbo.eval(-1.0, 1.0)),
        (0.125 * xp * yp * zm, sbo.eval(1.0, 1.0)),
        (0.125 * xm * ym * zp, st.eval(-1.0, -1.0)),
        (0.125 * xp * ym * zp, st.eval(1.0, -1.0)),
        (0.125 * xm * yp * zp, st.eval(-1.0, 1.0)),
        (0.125 * xp * yp * zp, st.eval(1.0, 1.0)),
    ];
    let mut p = [0.0; 3];
    for (w, q) in terms {
        for d in 0..3 {
            p[d] += w * q[d];
        }
    }
    p
}

/// Physical coordinates of the volume Gauss-Lobatto nodes of one element,
/// `i` fastest.
pub fn element_nodes(mesh: &CurvedHexMesh, elem: usize, basis: &NodalBasis) -> Result<Vec<Point>> {
    let faces = element_faces(mesh, elem)?;
    let x = basis.nodes();
    let n1 = basis.len();
    let mut out = Vec::with_capacity(n1 * n1 * n1);
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                out.push(transfinite_map(&faces, [x[i], x[j], x[k]]));
            }
        }
    }
    Ok(out)
}
