//! Structural invariants of the discretization, as run by `ch check`.

use std::f64::consts::PI;

use chdg::basis::NodalBasis;
use chdg::chmodel::CHParams;
use chdg::dgops::{dg_divergence, dg_gradient, BoundaryRule, DgSpace, FaceLink, FacePolicy, Field, InterfaceRule, VecField};
use chdg::geometry::metric_identity_residual;
use chdg::timeloop::{run, Problem, RunOptions, StepReport};

pub const SBP_TOL: f64 = 1e-13;
pub const QUADRATURE_TOL: f64 = 1e-13;
pub const METRIC_TOL: f64 = 1e-12;
pub const FREE_STREAM_TOL: f64 = 1e-11;
pub const ADJOINT_TOL: f64 = 1e-11;
pub const BALANCE_TOL: f64 = 1e-9;
pub const MASS_TOL: f64 = 1e-10;
pub const MONOTONE_TOL: f64 = 1e-10;

/// `max |W D + (W D)^T - B|` for the one-dimensional operators.
pub fn sbp_residual(basis: &NodalBasis) -> f64 {
    let n1 = basis.len();
    let w = basis.weights();
    let mut worst = 0.0f64;
    for i in 0..n1 {
        for j in 0..n1 {
            let b = if i == j && i == 0 {
                -1.0
            } else if i == j && i == n1 - 1 {
                1.0
            } else {
                0.0
            };
            worst = worst.max((w[i] * basis.d(i, j) + w[j] * basis.d(j, i) - b).abs());
        }
    }
    worst
}

/// Largest quadrature error over the monomials of degree `0..=2N-1`.
pub fn quadrature_error(basis: &NodalBasis) -> f64 {
    let (x, w) = (basis.nodes(), basis.weights());
    (0..2 * basis.order())
        .map(|d| {
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            let sum: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(d as i32)).sum();
            (sum - exact).abs()
        })
        .fold(0.0, f64::max)
}

pub fn metric_residual(space: &DgSpace) -> f64 {
    metric_identity_residual(space.metrics(), space.basis())
}

/// `max |div c|` for a constant vector field with interior-trace fluxes.
pub fn free_stream_residual(space: &DgSpace) -> chdg::Result<f64> {
    let c = [0.3, -1.2, 0.7];
    let mut v = VecField::zeros(space.num_nodes());
    for d in 0..3 {
        v.comps[d].fill(c[d]);
    }
    let pol = FacePolicy::uniform(space, InterfaceRule::Average, BoundaryRule::InteriorTrace);
    let div = dg_divergence(space, &v, &pol, None)?;
    Ok(div.values.iter().fold(0.0, |m, d| m.max(d.abs())))
}

/// Deterministic pseudo-random values in `[-1, 1)`.
fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// `|<grad u, v> + <u, div v> - boundary term|` for pseudo-random `u`, `v`:
/// the discrete gradient and divergence are negative adjoints up to the
/// boundary flux.
pub fn adjointness_defect(space: &DgSpace, seed: u64) -> chdg::Result<f64> {
    let n = space.num_nodes();
    let u = Field::new(noise(seed, n));
    let mut v = VecField::zeros(n);
    for (c, comp) in v.comps.iter_mut().enumerate() {
        *comp = noise(seed + 1 + c as u64, n);
    }
    let pol = FacePolicy::uniform(space, InterfaceRule::Average, BoundaryRule::InteriorTrace);
    let g = dg_gradient(space, &u, &pol)?;
    let d = dg_divergence(space, &v, &pol, None)?;
    let lhs: f64 = (0..3).map(|c| space.inner(&g.comps[c], &v.comps[c])).sum::<f64>() + space.inner(&u.values, &d.values);
    let n1 = space.n1();
    let metrics = space.metrics();
    let mut surf = 0.0;
    for e in 0..space.num_elements() {
        for f in 0..6 {
            for b in 0..n1 {
                for a in 0..n1 {
                    let fp = metrics.face_index(e, f, a, b);
                    if let FaceLink::Boundary { .. } = space.link(fp) {
                        let p = space.face_node(e, f, a, b);
                        let nrm = metrics.face_normal()[fp];
                        let vn: f64 = (0..3).map(|c| v.comps[c][p] * nrm[c]).sum();
                        surf += space.face_weight(a, b) * metrics.face_jacobian()[fp] * u.values[p] * vn;
                    }
                }
            }
        }
    }
    Ok((lhs - surf).abs())
}

/// Worst per-step ledger figures of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerSummary {
    pub steps: usize,
    /// `max |balance residual| / max(1, |F|)`.
    pub balance: f64,
    /// `max |mass - mass_0| / |mass_0|`.
    pub mass_drift: f64,
    /// `max (F_{n+1} - F_n) / max(1, |F_n|)`; positive means growth.
    pub energy_increase: f64,
    pub finite: bool,
}

pub fn summarize(reports: &[StepReport]) -> LedgerSummary {
    let m0 = reports[0].mass;
    let mut s = LedgerSummary {
        steps: reports.len() - 1,
        balance: 0.0,
        mass_drift: 0.0,
        energy_increase: f64::NEG_INFINITY,
        finite: true,
    };
    for r in reports {
        s.finite &= r.energy.total.is_finite() && r.mass.is_finite();
        s.mass_drift = s.mass_drift.max((r.mass - m0).abs() / m0.abs());
        if r.step > 0 {
            s.balance = s.balance.max(r.balance_residual.abs() / r.energy.total.abs().max(1.0));
        }
    }
    for p in reports.windows(2) {
        s.energy_increase = s.energy_increase.max((p[1].energy.total - p[0].energy.total) / p[0].energy.total.abs().max(1.0));
    }
    s
}

/// Smooth field with a nonzero mean, scaled to the mesh bounding box.
pub fn smoke_field(space: &DgSpace) -> Field {
    let bb = space.mesh().bounding_box();
    let r = |x: f64, d: usize| (x - bb[d][0]) / (bb[d][1] - bb[d][0]);
    space.interpolate(|x| {
        0.2 + 0.3 * (2.0 * PI * r(x[0], 0)).cos() * (PI * r(x[1], 1) + 0.3).sin() + 0.1 * (PI * r(x[2], 2)).cos()
    })
}

/// Ten steps of the model from [`smoke_field`].
pub fn smoke_run(space: &DgSpace, params: CHParams, dt: f64) -> chdg::Result<LedgerSummary> {
    let problem = Problem::new(space, params);
    let out = run(&problem, smoke_field(space), &RunOptions::new(dt, 10.0 * dt), |_, _| true)?;
    Ok(summarize(&out.reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// The full suite for one space. Basis checks cover every order up to
/// ten, not only the space's own.
pub fn invariant_suite(space: &DgSpace, params: CHParams, dt: f64) -> chdg::Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let (mut sbp, mut quad) = (0.0f64, 0.0f64);
    for n in 1..=10 {
        let b = NodalBasis::new(n)?;
        sbp = sbp.max(sbp_residual(&b));
        quad = quad.max(quadrature_error(&b));
    }
    out.push(CheckOutcome::new("sbp property, N=1..10", sbp, SBP_TOL));
    out.push(CheckOutcome::new("quadrature exactness, N=1..10", quad, QUADRATURE_TOL));
    out.push(CheckOutcome::new("metric identities", metric_residual(space), METRIC_TOL));
    out.push(CheckOutcome::new("free-stream preservation", free_stream_residual(space)?, FREE_STREAM_TOL));
    let adj = (0..3).map(|s| adjointness_defect(space, s)).collect::<chdg::Result<Vec<_>>>()?;
    out.push(CheckOutcome::new("gradient/divergence adjointness", adj.into_iter().fold(0.0, f64::max), ADJOINT_TOL));
    let smoke = smoke_run(space, params, dt)?;
    out.push(CheckOutcome::new("energy balance, 10 steps", if smoke.finite { smoke.balance } else { f64::INFINITY }, BALANCE_TOL));
    out.push(CheckOutcome::new("mass conservation, 10 steps", if smoke.finite { smoke.mass_drift } else { f64::INFINITY }, MASS_TOL));
    out.push(CheckOutcome::new(
        "energy decay, 10 steps",
        if smoke.finite { smoke.energy_increase.max(0.0) } else { f64::INFINITY },
        MONOTONE_TOL,
    ));
    Ok(out)
}
