use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::basis::{gauss_lobatto, NodalBasis};
use crate::error::{Error, Result};

use super::mapping::element_faces;
use super::mesh::{CurvedFace, CurvedHexMesh, Point};
use super::metrics::build_metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distortion {
    /// Moves vertices only; element edges stay straight.
    StraightSine,
    /// Moves vertices and stores every face as an order-`ngeo` surface.
    CurvedSine { ngeo: usize },
}

/// Smooth displacement that vanishes on the bounding box.
///
/// Only axes along which the mesh has interior vertices take part, so a
/// one-element-thick slab keeps its front and back planes.
#[derive(Debug, Clone, Copy)]
struct SineField {
    bounds: [[f64; 2]; 3],
    active: [bool; 3],
    amplitude: f64,
}

impl SineField {
    fn new(mesh: &CurvedHexMesh, amplitude: f64) -> Self {
        let bounds = mesh.bounding_box();
        let scale = |d: usize| (bounds[d][1] - bounds[d][0]).abs().max(1.0);
        let active = core::array::from_fn(|d| {
            mesh.vertices().iter().any(|p| {
                let tol = 1e-12 * scale(d);
                p[d] > bounds[d][0] + tol && p[d] < bounds[d][1] - tol
            })
        });
        Self { bounds, active, amplitude }
    }

    fn displace(&self, p: Point) -> Point {
        let len: [f64; 3] = core::array::from_fn(|d| self.bounds[d][1] - self.bounds[d][0]);
        let s: [f64; 3] = core::array::from_fn(|d| (p[d] - self.bounds[d][0]) / len[d]);
        let on_box = (0..3).any(|d| self.active[d] && (s[d] <= 1e-13 || s[d] >= 1.0 - 1e-13));
        if on_box {
            return p;
        }
        let bump = |d: usize| if self.active[d] { (PI * s[d]).sin() } else { 1.0 };
        let wave = |d: usize| (2.0 * PI * s[d]).sin();
        let mut out = p;
        let sign = [1.0, -1.0, 1.0];
        for d in 0..3 {
            if !self.active[d] {
                continue;
            }
            let mut f = wave(d);
            for o in 0..3 {
                if o != d {
                    f *= bump(o);
                }
            }
            out[d] += sign[d] * self.amplitude * len[d] * f;
        }
        out
    }
}

/// Applies the sine distortion to a mesh. The result is validated by
/// building metrics, so a tangled element is reported by index.
pub fn distort_mesh(mesh: &CurvedHexMesh, mode: Distortion, amplitude: f64) -> Result<CurvedHexMesh> {
    if !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!("distortion amplitude {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(mesh.clone());
    }
    let field = SineField::new(mesh, amplitude);
    let vertices: Vec<Point> = mesh.vertices().iter().map(|&p| field.displace(p)).collect();
    let (curved, check_order) = match mode {
        Distortion::StraightSine => {
            let moved = mesh
                .curved_faces()
                .iter()
                .map(|(&key, cf)| {
                    let points = cf.points.iter().map(|&p| field.displace(p)).collect();
                    (key, CurvedFace { ngeo: cf.ngeo, points })
                })
                .collect();
            (moved, 2)
        }
        Distortion::CurvedSine { ngeo } => {
            if ngeo == 0 {
                return Err(Error::InvalidOrder(0));
            }
            let (g, _) = gauss_lobatto(ngeo)?;
            let mut curved = BTreeMap::new();
            for e in 0..mesh.num_elements() {
                let faces = element_faces(mesh, e)?;
                for (f, surface) in faces.iter().enumerate() {
                    let mut points = Vec::with_capacity(g.len() * g.len());
                    for &b in &g {
                        for &a in &g {
                            points.push(field.displace(surface.eval(a, b)));
                        }
                    }
                    curved.insert((e, f), CurvedFace { ngeo, points });
                }
            }
            (curved, ngeo.max(2))
        }
    };
    let out = mesh.with_geometry(vertices, curved);
    build_metrics(&out, &NodalBasis::new(check_order)?)?;
    Ok(out)
}
