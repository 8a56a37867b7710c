//! Cahn-Hilliard physics: double-well potential, free energy and the
//! stability quantities of the IMEX scheme.

use crate::dgops::{DgSpace, FaceLink, Field, VecField};
use crate::error::{Error, Result};

/// `1/4 (1 - phi)^2 (1 + phi)^2`
#[inline]
pub fn psi(phi: f64) -> f64 {
    let s = 1.0 - phi * phi;
    0.25 * s * s
}

#[inline]
pub fn psi_prime(phi: f64) -> f64 {
    phi * phi * phi - phi
}

/// Half-width of the square on which the explicit nonlinear part is stable.
pub fn stability_margin(s0: f64) -> f64 {
    ((2.0 * s0 + 1.0) / 3.0).sqrt()
}

/// Pointwise IMEX dissipation coefficient.
#[inline]
pub fn pi_star(phi_n: f64, phi_np1: f64, s0: f64) -> f64 {
    let d = phi_np1 - phi_n;
    s0 + 0.5 * (1.0 - 3.0 * phi_n * phi_n) - phi_n * d - 0.25 * d * d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CHParams {
    pub mobility: f64,
    /// Interface coefficient, `eps^2`.
    pub k: f64,
    /// Slope of the linear wall energy `g(phi) = beta phi`.
    pub beta: f64,
    pub kappa_sigma: f64,
    pub s0: f64,
    pub k0: f64,
    pub sigma_q: f64,
}

impl CHParams {
    /// Defaults for everything but mobility and `k`.
    pub fn new(mobility: f64, k: f64) -> Self {
        Self { mobility, k, beta: 0.0, kappa_sigma: 3.0, s0: 1.0, k0: 1.0, sigma_q: 0.0 }
    }

    pub fn from_eps(mobility: f64, eps: f64) -> Self {
        Self::new(mobility, eps * eps)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.mobility > 0.0 && self.mobility.is_finite()) {
            return bad("mobility must be positive");
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad("k must be positive");
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite");
        }
        if !(self.kappa_sigma >= 0.0) {
            return bad("kappa_sigma must be nonnegative");
        }
        if !(self.s0 >= 0.0) {
            return bad("S0 must be nonnegative");
        }
        if !(0.5..=1.0).contains(&self.k0) {
            return bad("K0 must lie in [0.5, 1]");
        }
        if !(self.sigma_q >= 0.0) {
            return bad("sigma_q must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub total: f64,
    pub volumetric: f64,
    pub surface: f64,
}

/// Boundary tags carrying wall energy, indexed like `space.tags()`.
/// Tags listed in `symmetry` are planes of symmetry and carry none.
pub fn wall_mask(space: &DgSpace, symmetry: &[String]) -> Vec<bool> {
    space.tags().iter().map(|t| !symmetry.contains(t)).collect()
}

pub fn free_energy(space: &DgSpace, phi: &Field, q: &VecField, params: &CHParams, walls: &[bool]) -> Result<FreeEnergy> {
    space.check_field(phi)?;
    if q.len() != space.num_nodes() || walls.len() != space.tags().len() {
        return Err(Error::Configuration("free energy inputs do not match the space".into()));
    }
    let volumetric = space
        .mass()
        .iter()
        .enumerate()
        .map(|(p, m)| {
            let [a, b, c] = q.at(p);
            m * (psi(phi.values[p]) + 0.5 * params.k * (a * a + b * b + c * c))
        })
        .sum();
    let surface = if params.beta == 0.0 { 0.0 } else { -params.beta * wall_integral(space, &phi.values, walls) };
    Ok(FreeEnergy { total: volumetric + surface, volumetric, surface })
}

/// `sum over wall faces of the face quadrature of u`.
pub fn wall_integral(space: &DgSpace, u: &[f64], walls: &[bool]) -> f64 {
    let n1 = space.n1();
    let m = space.metrics();
    let mut s = 0.0;
    for e in 0..space.num_elements() {
        for f in 0..6 {
            for b in 0..n1 {
                for a in 0..n1 {
                    let fp = m.face_index(e, f, a, b);
                    if let FaceLink::Boundary { tag } = space.link(fp) {
                        if walls[tag] {
                            s += space.face_weight(a, b) * m.face_jacobian()[fp] * u[space.face_node(e, f, a, b)];
                        }
                    }
                }
            }
        }
    }
    s
}

pub fn mass(space: &DgSpace, phi: &Field) -> f64 {
    space.integrate(&phi.values)
}
