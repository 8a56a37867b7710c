//! Stabilized IMEX time integration with a constant implicit operator,
//! factorized once, and the per-step free-energy ledger.
//!
//! The implicit system is solved in mixed form for `(Phi, W)`:
//!
//! ```text
//! Phi / dt - L_W W                 = Phi^n / dt + q + lift_MF
//! W - S0 Phi + k K0 L_Phi Phi      = psi'(Phi^n) - S0 Phi^n - k (1 - K0) L_Phi Phi^n - k lift_Q
//! ```
//!
//! with `L_W = M sum_d Div_d Grad_d + penalty` and `L_Phi = sum_d Div_d Grad_d`.


use crate::chmodel::{free_energy, pi_star, psi_prime, wall_mask, CHParams, FreeEnergy};
use crate::dgops::{
    add_scaled, boundary_lift, dg_divergence, dg_gradient, from_entries, matvec, penalty_matrix, triplets,
    BoundaryRule, DgSpace, FaceLink, FacePolicy, Field, InterfaceRule, Layout, OperatorMatrices, SparseMat,
    VecField,
};
use crate::dgops::interface_penalty;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linsolve::SparseLu;

/// External forcing of a manufactured-solution run: a volume source and
/// exact normal flux data on every boundary.
pub trait Forcing {
    fn source(&self, x: Point, t: f64) -> f64;
    /// Gradient of the exact phase field.
    fn phi_gradient(&self, x: Point, t: f64) -> [f64; 3];
    /// Gradient of the exact chemical potential.
    fn w_gradient(&self, x: Point, t: f64) -> [f64; 3];
    /// Whether source and data are independent of `z`.
    fn planar(&self) -> bool;
}

/// Everything that defines the spatial problem.
pub struct Problem<'a> {
    pub space: &'a DgSpace,
    pub params: CHParams,
    /// Boundary tags treated as symmetry planes: zero flux, no wall energy.
    pub symmetry: Vec<String>,
    pub forcing: Option<&'a dyn Forcing>,
}

impl<'a> Problem<'a> {
    pub fn new(space: &'a DgSpace, params: CHParams) -> Self {
        Self { space, params, symmetry: Vec::new(), forcing: None }
    }

    pub fn with_symmetry(mut self, tags: &[&str]) -> Self {
        self.symmetry = tags.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_forcing(mut self, forcing: &'a dyn Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn walls(&self) -> Vec<bool> {
        wall_mask(self.space, &self.symmetry)
    }

    /// Policy for gradients of `Phi` and `W`.
    pub fn gradient_policy(&self) -> FacePolicy {
        FacePolicy::uniform(self.space, InterfaceRule::Average, BoundaryRule::InteriorTrace)
    }

    /// Policy for the divergence of `Q`: imposed `k Q* . n = beta` on walls.
    pub fn q_policy(&self, t: f64) -> FacePolicy {
        let interface = if self.params.sigma_q > 0.0 {
            InterfaceRule::ConstantPenalty { sigma: self.params.sigma_q }
        } else {
            InterfaceRule::Average
        };
        if let Some(f) = self.forcing {
            return self.data_policy(interface, |x| f.phi_gradient(x, t));
        }
        let mut p = FacePolicy::new(interface);
        for (tag, wall) in self.space.tags().iter().zip(self.walls()) {
            let v = if wall { self.params.beta / self.params.k } else { 0.0 };
            p.boundary.insert(tag.clone(), BoundaryRule::NormalFlux(v));
        }
        p
    }

    /// Policy for the divergence of `M F`: penalized, zero normal flux.
    pub fn w_policy(&self, t: f64) -> FacePolicy {
        let m = self.params.mobility;
        let interface = InterfaceRule::Penalty { kappa_sigma: self.params.kappa_sigma, factor: m };
        if let Some(f) = self.forcing {
            return self.data_policy(interface, |x| f.w_gradient(x, t).map(|c| m * c));
        }
        FacePolicy::uniform(self.space, interface, BoundaryRule::NormalFlux(0.0))
    }

    fn data_policy(&self, interface: InterfaceRule, grad: impl Fn(Point) -> [f64; 3]) -> FacePolicy {
        let s = self.space;
        let m = s.metrics();
        let n1 = s.n1();
        let mut data = vec![0.0; s.num_elements() * 6 * n1 * n1];
        for e in 0..s.num_elements() {
            for f in 0..6 {
                for b in 0..n1 {
                    for a in 0..n1 {
                        let fp = m.face_index(e, f, a, b);
                        if let FaceLink::Boundary { .. } = s.link(fp) {
                            let g = grad(s.coords()[s.face_node(e, f, a, b)]);
                            let n = m.face_normal()[fp];
                            data[fp] = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
                        }
                    }
                }
            }
        }
        let mut p = FacePolicy::uniform(s, interface, BoundaryRule::NormalFluxData);
        p.face_data = Some(data);
        p
    }
}

/// Constant implicit operator of the mixed system, factorized once.
pub struct ImplicitOperator {
    layout: Layout,
    dofs: usize,
    dt: f64,
    params: CHParams,
    matrix: SparseMat,
    l_phi: SparseMat,
    lu: SparseLu,
}

impl std::fmt::Debug for ImplicitOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImplicitOperator")
            .field("layout", &self.layout)
            .field("dofs", &self.dofs)
            .field("dt", &self.dt)
            .field("nnz", &self.matrix.compute_nnz())
            .finish()
    }
}

/// Assembles the mixed matrix without factorizing it. Returns the matrix and
/// `L_Phi`.
pub fn assemble_mixed(problem: &Problem, layout: Layout, dt: f64) -> Result<(SparseMat, SparseMat)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let p = &problem.params;
    p.validate()?;
    let space = problem.space;
    let ops = OperatorMatrices::new(space, layout, &problem.w_policy(0.0))?;
    let lap = ops.laplacian()?;
    let l_phi = if p.sigma_q > 0.0 {
        let pen = penalty_matrix(space, layout, InterfaceRule::ConstantPenalty { sigma: p.sigma_q })?;
        add_scaled(&lap, 1.0, &pen, 1.0)?
    } else {
        lap.clone()
    };
    let l_w = if p.kappa_sigma > 0.0 {
        let rule = InterfaceRule::Penalty { kappa_sigma: p.kappa_sigma, factor: p.mobility };
        add_scaled(&lap, p.mobility, &penalty_matrix(space, layout, rule)?, 1.0)?
    } else {
        add_scaled(&lap, p.mobility, &lap, 0.0)?
    };
    let n = layout.dofs(space);
    let mut entries = Vec::with_capacity(2 * n + l_w.compute_nnz() + l_phi.compute_nnz());
    for i in 0..n {
        entries.push((i, i, 1.0 / dt));
        entries.push((n + i, n + i, 1.0));
        if p.s0 != 0.0 {
            entries.push((n + i, i, -p.s0));
        }
    }
    for (r, c, v) in triplets(&l_w) {
        entries.push((r, n + c, -v));
    }
    for (r, c, v) in triplets(&l_phi) {
        entries.push((n + r, c, p.k * p.k0 * v));
    }
    let a = from_entries(2 * n, 2 * n, entries)?;
    Ok((a, l_phi))
}

impl ImplicitOperator {
    pub fn new(problem: &Problem, layout: Layout, dt: f64) -> Result<Self> {
        let (matrix, l_phi) = assemble_mixed(problem, layout, dt)?;
        let space = problem.space;
        let dofs = layout.dofs(space);
        let points: Vec<Point> = (0..2 * dofs).map(|i| space.coords()[layout.row_node(space, i % dofs)]).collect();
        let lu = SparseLu::new(&matrix, &points)?;
        Ok(Self { layout, dofs, dt, params: problem.params, matrix, l_phi, lu })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &CHParams {
        &self.params
    }

    /// Unknowns per field; the mixed system has twice as many.
    pub fn dofs(&self) -> usize {
        self.dofs
    }

    pub fn matrix(&self) -> &SparseMat {
        &self.matrix
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.matrix, x)
    }

    /// Solves `A x = b`, checks the residual and refines if needed.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut sol = self.lu.solve(b);
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-10 * bnorm.max(f64::MIN_POSITIVE);
        for _ in 0..3 {
            let r: Vec<f64> = b.iter().zip(self.apply(&sol)).map(|(bi, ai)| bi - ai).collect();
            let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !rnorm.is_finite() {
                return Err(Error::NumericalBreakdown("nonfinite solve residual".into()));
            }
            if rnorm <= tol {
                return Ok(sol);
            }
            for (s, d) in sol.iter_mut().zip(self.lu.solve(&r)) {
                *s += d;
            }
        }
        let r: Vec<f64> = b.iter().zip(self.apply(&sol)).map(|(bi, ai)| bi - ai).collect();
        let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rnorm <= tol {
            Ok(sol)
        } else {
            Err(Error::NumericalBreakdown(format!("solve residual {rnorm:e} exceeds {tol:e}")))
        }
    }
}

/// Ledger entry for one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub energy: FreeEnergy,
    pub mass: f64,
    /// `dt <J F, M F>`
    pub diss_phys: f64,
    /// `dt sum_faces int sigma M [[W]]^2`
    pub diss_penalty: f64,
    /// `<J Pi* dPhi^2, 1> + k (K0 - 1/2) <J dQ, dQ>`
    pub diss_imex: f64,
    /// Energy including the `Q*` penalty term, `F + k sigma_q / 2 int [[Phi]]^2`.
    pub energy_sigma: f64,
    /// `k sigma_q (K0 - 1/2) int [[dPhi]]^2`
    pub diss_sigma_q: f64,
    pub balance_residual: f64,
    pub min_pi_star: f64,
    /// Nodes where `Pi* < 0`.
    pub pi_star_violations: usize,
}

/// Evolving solution.
#[derive(Debug, Clone)]
pub struct State {
    pub step: usize,
    pub time: f64,
    pub phi: Field,
    pub q: VecField,
    /// Chemical potential of the last step (or of the initial state).
    pub w: Field,
}

/// Time stepper bound to one problem and operator.
pub struct Stepper<'p, 'a> {
    problem: &'p Problem<'a>,
    op: ImplicitOperator,
    walls: Vec<bool>,
    grad_policy: FacePolicy,
    ledger: bool,
}

impl<'p, 'a> Stepper<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>, op: ImplicitOperator, ledger: bool) -> Self {
        Self { problem, walls: problem.walls(), grad_policy: problem.gradient_policy(), op, ledger }
    }

    pub fn operator(&self) -> &ImplicitOperator {
        &self.op
    }

    /// State at `t` from nodal values; `Q` and `W` are computed from `phi`.
    pub fn initial_state(&self, phi: Field, t: f64) -> Result<State> {
        if !phi.is_finite() {
            return Err(Error::InvalidArgument("initial condition is not finite".into()));
        }
        let space = self.problem.space;
        let q = dg_gradient(space, &phi, &self.grad_policy)?;
        let w = self.chemical_potential(&phi, &phi, &phi, &q, t)?;
        Ok(State { step: 0, time: t, phi, q, w })
    }

    /// `psi'(Phi^n) + S0 dPhi - k Div(Q^theta)` evaluated matrix-free.
    fn chemical_potential(&self, phi_n: &Field, phi_np1: &Field, phi_theta: &Field, q_theta: &VecField, t: f64) -> Result<Field> {
        let p = &self.problem.params;
        let pol = self.problem.q_policy(t);
        let pen = if p.sigma_q > 0.0 { Some(phi_theta) } else { None };
        let div = dg_divergence(self.problem.space, q_theta, &pol, pen)?;
        Ok(Field::new(
            (0..phi_n.len())
                .map(|i| {
                    let a = phi_n.values[i];
                    psi_prime(a) + p.s0 * (phi_np1.values[i] - a) - p.k * div.values[i]
                })
                .collect(),
        ))
    }

    pub fn report(&self, state: &State) -> Result<StepReport> {
        let space = self.problem.space;
        let p = &self.problem.params;
        let energy = free_energy(space, &state.phi, &state.q, p, &self.walls)?;
        let (min_pi, viol) = pi_star_stats(&state.phi, &state.phi, p.s0);
        Ok(StepReport {
            step: state.step,
            time: state.time,
            energy,
            mass: space.integrate(&state.phi.values),
            diss_phys: 0.0,
            diss_penalty: 0.0,
            diss_imex: 0.0,
            energy_sigma: energy.total + 0.5 * p.k * p.sigma_q * jump_square(space, &state.phi.values, 1.0),
            diss_sigma_q: 0.0,
            balance_residual: 0.0,
            min_pi_star: min_pi,
            pi_star_violations: viol,
        })
    }

    /// Advances one step and returns the new state with its ledger entry.
    pub fn step(&self, state: &State, prev: &StepReport) -> Result<(State, StepReport)> {
        let space = self.problem.space;
        let layout = self.op.layout;
        let p = self.problem.params;
        let dt = self.op.dt;
        let t1 = state.time + dt;
        let step = state.step + 1;
        let n = self.op.dofs;

        let q_pol = self.problem.q_policy(t1);
        let w_pol = self.problem.w_policy(t1);
        let lift_q = layout.restrict(space, &boundary_lift(space, &q_pol)?);
        let lift_w = if self.problem.forcing.is_some() {
            Some(layout.restrict(space, &boundary_lift(space, &w_pol)?))
        } else {
            None
        };
        let phi_n = layout.restrict(space, &state.phi.values);
        let l_phi_n = if p.k0 < 1.0 { Some(matvec(&self.op.l_phi, &phi_n)) } else { None };

        let mut b = vec![0.0; 2 * n];
        for i in 0..n {
            let g = layout.row_node(space, i);
            let mut r = phi_n[i] / dt;
            if let Some(f) = self.problem.forcing {
                r += f.source(space.coords()[g], t1);
            }
            if let Some(l) = &lift_w {
                r += l[i];
            }
            b[i] = r;
            let mut s = psi_prime(phi_n[i]) - p.s0 * phi_n[i] - p.k * lift_q[i];
            if let Some(l) = &l_phi_n {
                s -= p.k * (1.0 - p.k0) * l[i];
            }
            b[n + i] = s;
        }
        let x = self.op.solve(&b)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, detail: "nonfinite solution".into() });
        }
        let phi = Field::new(layout.broadcast(space, &x[..n]));
        let w_solved = Field::new(layout.broadcast(space, &x[n..]));
        let q = dg_gradient(space, &phi, &self.grad_policy)?;
        if !phi.is_finite() || q.comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, detail: "nonfinite solution".into() });
        }
        let new_state = State { step, time: t1, phi, q, w: w_solved };
        let mut report = self.report(&new_state)?;
        let (min_pi, viol) = pi_star_stats(&state.phi, &new_state.phi, p.s0);
        report.min_pi_star = min_pi;
        report.pi_star_violations = viol;
        if self.ledger {
            self.fill_ledger(state, &new_state, prev, &mut report, &q_pol, &w_pol)?;
        } else {
            report.diss_phys = f64::NAN;
            report.diss_penalty = f64::NAN;
            report.diss_imex = f64::NAN;
            report.diss_sigma_q = f64::NAN;
            report.balance_residual = f64::NAN;
        }
        Ok((new_state, report))
    }

    fn fill_ledger(&self, old: &State, new: &State, prev: &StepReport, report: &mut StepReport, q_pol: &FacePolicy, w_pol: &FacePolicy) -> Result<()> {
        let space = self.problem.space;
        let p = self.problem.params;
        let dt = self.op.dt;
        let k0 = p.k0;
        let blend = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| k0 * y + (1.0 - k0) * x).collect() };
        let phi_theta = Field::new(blend(&old.phi.values, &new.phi.values));
        let q_theta = VecField { comps: [0, 1, 2].map(|d| blend(&old.q.comps[d], &new.q.comps[d])) };
        let w = self.chemical_potential(&old.phi, &new.phi, &phi_theta, &q_theta, new.time)?;
        let f = dg_gradient(space, &w, &self.grad_policy)?;

        let mass = space.mass();
        let mut diss_phys = 0.0;
        let mut diss_imex = 0.0;
        for i in 0..space.num_nodes() {
            let [a, b, c] = f.at(i);
            diss_phys += mass[i] * p.mobility * (a * a + b * b + c * c);
            let d = new.phi.values[i] - old.phi.values[i];
            let dq = [0, 1, 2].map(|k| new.q.comps[k][i] - old.q.comps[k][i]);
            let dq2 = dq[0] * dq[0] + dq[1] * dq[1] + dq[2] * dq[2];
            diss_imex += mass[i] * (pi_star(old.phi.values[i], new.phi.values[i], p.s0) * d * d + p.k * (k0 - 0.5) * dq2);
        }
        diss_phys *= dt;
        let diss_penalty = dt * penalty_dissipation(space, w_pol.interface, &w.values)?;
        let dphi: Vec<f64> = new.phi.values.iter().zip(&old.phi.values).map(|(a, b)| a - b).collect();
        let diss_sigma_q = p.k * p.sigma_q * (k0 - 0.5) * jump_square(space, &dphi, 1.0);

        let mut work = 0.0;
        if let Some(forcing) = self.problem.forcing {
            let src: Vec<f64> = space.coords().iter().map(|&x| forcing.source(x, new.time)).collect();
            work += dt * space.inner(&w.values, &src);
            let all = vec![true; space.tags().len()];
            work += dt * data_pairing(space, w_pol, &w.values, &all);
            work -= p.k * data_pairing(space, q_pol, &dphi, &all);
        }

        report.diss_phys = diss_phys;
        report.diss_penalty = diss_penalty;
        report.diss_imex = diss_imex;
        report.diss_sigma_q = diss_sigma_q;
        let change = report.energy_sigma - prev.energy_sigma;
        report.balance_residual = (change + diss_phys + diss_penalty + diss_imex + diss_sigma_q - work).abs();
        Ok(())
    }
}

fn pi_star_stats(old: &Field, new: &Field, s0: f64) -> (f64, usize) {
    let mut min = f64::INFINITY;
    let mut viol = 0;
    for (a, b) in old.values.iter().zip(&new.values) {
        let v = pi_star(*a, *b, s0);
        min = min.min(v);
        if v < 0.0 {
            viol += 1;
        }
    }
    (min, viol)
}

/// `factor * sum over interior faces of int [[u]]^2`, each face once.
fn jump_square(space: &DgSpace, u: &[f64], factor: f64) -> f64 {
    if factor == 0.0 {
        return 0.0;
    }
    let m = space.metrics();
    let n1 = space.n1();
    let mut s = 0.0;
    for e in 0..space.num_elements() {
        for f in 0..6 {
            for b in 0..n1 {
                for a in 0..n1 {
                    let fp = m.face_index(e, f, a, b);
                    if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                        let d = u[space.face_node(e, f, a, b)] - u[nbr_node];
                        s += 0.5 * space.face_weight(a, b) * m.face_jacobian()[fp] * d * d;
                    }
                }
            }
        }
    }
    factor * s
}

/// `sum over interior faces of int sigma [[u]]^2` with `sigma` from `rule`.
fn penalty_dissipation(space: &DgSpace, rule: InterfaceRule, u: &[f64]) -> Result<f64> {
    if rule == InterfaceRule::Average {
        return Ok(0.0);
    }
    let m = space.metrics();
    let n1 = space.n1();
    let mut s = 0.0;
    for e in 0..space.num_elements() {
        for f in 0..6 {
            for b in 0..n1 {
                for a in 0..n1 {
                    let fp = m.face_index(e, f, a, b);
                    if let FaceLink::Interior { nbr_node, .. } = space.link(fp) {
                        let g = space.face_node(e, f, a, b);
                        let sigma = interface_penalty(space, rule, fp, g, nbr_node)?;
                        let d = u[g] - u[nbr_node];
                        s += 0.5 * space.face_weight(a, b) * m.face_jacobian()[fp] * sigma * d * d;
                    }
                }
            }
        }
    }
    Ok(s)
}

/// `sum over boundary points with imposed data of w |J_f| g u`.
fn data_pairing(space: &DgSpace, policy: &FacePolicy, u: &[f64], tags: &[bool]) -> f64 {
    let Some(data) = &policy.face_data else { return 0.0 };
    let m = space.metrics();
    let n1 = space.n1();
    let mut s = 0.0;
    for e in 0..space.num_elements() {
        for f in 0..6 {
            for b in 0..n1 {
                for a in 0..n1 {
                    let fp = m.face_index(e, f, a, b);
                    if let FaceLink::Boundary { tag } = space.link(fp) {
                        if tags[tag] {
                            s += space.face_weight(a, b) * m.face_jacobian()[fp] * data[fp] * u[space.face_node(e, f, a, b)];
                        }
                    }
                }
            }
        }
    }
    s
}

/// Options of [`run`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub dt: f64,
    pub t_final: f64,
    /// Compute dissipation terms and the balance residual every step.
    pub ledger: bool,
    /// Force a layout; `None` picks the slab layout when it is exact.
    pub layout: Option<Layout>,
}

impl RunOptions {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self { dt, t_final, ledger: true, layout: None }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Whether the slab layout reproduces the full problem for this initial
/// state and boundary data.
pub fn slab_exact(problem: &Problem, phi0: &Field) -> Result<bool> {
    let space = problem.space;
    if !Layout::slab_compatible(space) {
        return Ok(false);
    }
    if let Some(f) = problem.forcing {
        if !f.planar() {
            return Ok(false);
        }
    }
    let planar = |v: &[f64]| {
        let back = Layout::Slab.broadcast(space, &Layout::Slab.restrict(space, v));
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        v.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-10 * scale)
    };
    if !planar(&phi0.values) {
        return Ok(false);
    }
    Ok(problem.forcing.is_some() || planar(&boundary_lift(space, &problem.q_policy(0.0))?))
}

/// Final state and all ledger entries of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<StepReport>,
    pub state: State,
}

/// Integrates from `phi0` to `t_final`. `observe` sees every report with
/// the state it belongs to and may stop the run early by returning false.
pub fn run(
    problem: &Problem,
    phi0: Field,
    opts: &RunOptions,
    mut observe: impl FnMut(&StepReport, &State) -> bool,
) -> Result<RunOutput> {
    let layout = match opts.layout {
        Some(l) => l,
        None if slab_exact(problem, &phi0)? => Layout::Slab,
        None => Layout::Full,
    };
    let op = ImplicitOperator::new(problem, layout, opts.dt)?;
    let stepper = Stepper::new(problem, op, opts.ledger);
    let mut state = stepper.initial_state(phi0, 0.0)?;
    let mut last = stepper.report(&state)?;
    let mut reports = vec![last];
    if !observe(&last, &state) {
        return Ok(RunOutput { reports, state });
    }
    for _ in 0..opts.steps() {
        let (s, r) = stepper.step(&state, &last)?;
        state = s;
        last = r;
        reports.push(r);
        if !observe(&r, &state) {
            break;
        }
    }
    Ok(RunOutput { reports, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chmodel::wall_integral;
    use crate::geometry::{distort_mesh, generate_box_mesh, Distortion};
    use rand::{Rng, SeedableRng};

    fn slab(n: usize, order: usize, curved: bool) -> DgSpace {
        let m = generate_box_mesh(n, n, 1, [[0.0, 1.0], [0.0, 1.0], [0.0, 0.5]]).unwrap();
        let m = if curved { distort_mesh(&m, Distortion::CurvedSine { ngeo: order }, 0.04).unwrap() } else { m };
        DgSpace::new(m, order).unwrap()
    }

    fn cube(order: usize) -> DgSpace {
        let m = generate_box_mesh(2, 2, 2, [[0.0, 1.0]; 3]).unwrap();
        DgSpace::new(distort_mesh(&m, Distortion::CurvedSine { ngeo: order }, 0.04).unwrap(), order).unwrap()
    }

    fn params() -> CHParams {
        let mut p = CHParams::new(1.0, 2e-3);
        p.s0 = 1.0;
        p
    }

    fn wavy(space: &DgSpace, amp: f64) -> Field {
        space.interpolate(|x| amp * ((5.0 * x[0]).cos() * (3.0 * x[1] + 0.4).sin() + 0.3 * (7.0 * x[0] * x[1]).cos()))
    }

    /// Matrix-free application of the mixed operator.
    fn apply_free(problem: &Problem, dt: f64, phi: &[f64], w: &[f64]) -> Vec<f64> {
        let s = problem.space;
        let p = problem.params;
        let gp = problem.gradient_policy();
        let (phi, w) = (Field::new(phi.to_vec()), Field::new(w.to_vec()));
        let fw = dg_gradient(s, &w, &gp).unwrap().scaled(p.mobility);
        let lw = dg_divergence(s, &fw, &problem.w_policy(0.0), Some(&w)).unwrap();
        let q = dg_gradient(s, &phi, &gp).unwrap();
        let pen = if p.sigma_q > 0.0 { Some(&phi) } else { None };
        let lphi = dg_divergence(s, &q, &problem.q_policy(0.0), pen).unwrap();
        let n = s.num_nodes();
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = phi.values[i] / dt - lw.values[i];
            out[n + i] = w.values[i] - p.s0 * phi.values[i] + p.k * p.k0 * lphi.values[i];
        }
        out
    }

    fn rel_close(a: &[f64], b: &[f64], tol: f64) {
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn matrix_matches_matrix_free_operator() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let space = cube(3);
        let mut p = params();
        p.k0 = 0.5;
        p.sigma_q = 0.8;
        let problem = Problem::new(&space, p);
        let op = ImplicitOperator::new(&problem, Layout::Full, 1e-3).unwrap();
        let n = space.num_nodes();
        for _ in 0..10 {
            let v: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            rel_close(&op.apply(&v), &apply_free(&problem, 1e-3, &v[..n], &v[n..]), 1e-11);
        }
    }

    #[test]
    fn single_linear_element_matches_dense_probe() {
        let m = generate_box_mesh(1, 1, 1, [[0.0, 1.0], [0.0, 0.7], [0.0, 0.4]]).unwrap();
        let space = DgSpace::new(m, 1).unwrap();
        let problem = Problem::new(&space, params());
        let (a, _) = assemble_mixed(&problem, Layout::Full, 0.01).unwrap();
        let n = space.num_nodes();
        assert_eq!(n, 8);
        let mut dense = vec![[0.0; 16]; 16];
        for (r, c, v) in triplets(&a) {
            dense[r][c] += v;
        }
        for c in 0..16 {
            let mut e = vec![0.0; 16];
            e[c] = 1.0;
            let col = apply_free(&problem, 0.01, &e[..n], &e[n..]);
            for r in 0..16 {
                assert!((dense[r][c] - col[r]).abs() <= 1e-12 * (1.0 + col[r].abs()), "({r},{c})");
            }
        }
    }

    #[test]
    fn constants_only_see_the_identity_blocks() {
        let space = slab(2, 3, true);
        let problem = Problem::new(&space, params());
        let op = ImplicitOperator::new(&problem, Layout::Full, 0.25).unwrap();
        let n = space.num_nodes();
        let y = op.apply(&vec![1.0; 2 * n]);
        for i in 0..n {
            assert!((y[i] - 4.0).abs() < 1e-10);
            assert!((y[n + i] - (1.0 - problem.params.s0)).abs() < 1e-10);
        }
    }

    #[test]
    fn halving_the_step_changes_only_the_mass_diagonal() {
        let space = slab(2, 2, true);
        let problem = Problem::new(&space, params());
        let dt = 0.01;
        let (a1, _) = assemble_mixed(&problem, Layout::Full, dt).unwrap();
        let (a2, _) = assemble_mixed(&problem, Layout::Full, 2.0 * dt).unwrap();
        let diff = add_scaled(&a1, 1.0, &a2, -1.0).unwrap();
        let n = space.num_nodes();
        for (r, c, v) in triplets(&diff) {
            if r == c && r < n {
                assert!((v - (1.0 / dt - 0.5 / dt)).abs() < 1e-9);
            } else {
                assert!(v.abs() < 1e-12, "({r},{c}) {v}");
            }
        }
    }

    #[test]
    fn invalid_step_and_penalty_are_rejected() {
        let space = slab(1, 2, false);
        let problem = Problem::new(&space, params());
        assert!(matches!(ImplicitOperator::new(&problem, Layout::Full, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(ImplicitOperator::new(&problem, Layout::Full, -1.0), Err(Error::InvalidArgument(_))));
        let mut p = params();
        p.sigma_q = -1.0;
        let bad = Problem::new(&space, p);
        assert!(matches!(ImplicitOperator::new(&bad, Layout::Full, 0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn uniform_state_is_a_fixed_point() {
        let space = cube(2);
        let problem = Problem::new(&space, params());
        let phi = Field::new(vec![0.37; space.num_nodes()]);
        let out = run(&problem, phi, &RunOptions::new(0.05, 0.2), |_, _| true).unwrap();
        assert_eq!(out.reports.len(), 5);
        for v in &out.state.phi.values {
            assert!((v - 0.37).abs() < 1e-12, "{:e}", v - 0.37);
        }
    }

    #[test]
    fn zero_final_time_gives_the_initial_report() {
        let space = slab(2, 3, true);
        let problem = Problem::new(&space, params()).with_symmetry(&["front", "back"]);
        let phi = wavy(&space, 0.2);
        let out = run(&problem, phi.clone(), &RunOptions::new(0.1, 0.0), |_, _| true).unwrap();
        assert_eq!(out.reports.len(), 1);
        let q = dg_gradient(&space, &phi, &problem.gradient_policy()).unwrap();
        let f = free_energy(&space, &phi, &q, &problem.params, &problem.walls()).unwrap();
        assert_eq!(out.reports[0].energy, f);
    }

    #[test]
    fn nonfinite_initial_state_is_rejected() {
        let space = slab(1, 2, false);
        let problem = Problem::new(&space, params());
        let mut phi = space.zeros();
        phi.values[3] = f64::NAN;
        assert!(matches!(run(&problem, phi, &RunOptions::new(0.1, 0.2), |_, _| true), Err(Error::InvalidArgument(_))));
    }

    fn check_ledger(space: &DgSpace, p: CHParams, symmetry: &[&str], layout: Layout, steps: usize) -> Vec<StepReport> {
        let problem = Problem::new(space, p).with_symmetry(symmetry);
        let phi = wavy(space, 0.4);
        let mut opts = RunOptions::new(2e-3, 2e-3 * steps as f64);
        opts.layout = Some(layout);
        let out = run(&problem, phi, &opts, |_, _| true).unwrap();
        let m0 = out.reports[0].mass;
        for r in &out.reports[1..] {
            let scale = r.energy_sigma.abs().max(1.0);
            assert!(r.balance_residual <= 1e-9 * scale, "step {} residual {:e}", r.step, r.balance_residual);
            assert!((r.mass - m0).abs() <= 1e-10 * m0.abs().max(1.0));
            for d in [r.diss_phys, r.diss_penalty, r.diss_imex] {
                assert!(d >= -1e-12);
            }
        }
        out.reports
    }

    #[test]
    fn energy_budget_closes_for_all_blends() {
        let space = slab(3, 3, true);
        for (k0, s0, sigma_q) in [(1.0, 1.0, 0.0), (0.5, 1.0, 0.0), (1.0, 2.0, 0.5), (0.75, 1.0, 0.3)] {
            let mut p = params();
            p.k0 = k0;
            p.s0 = s0;
            p.sigma_q = sigma_q;
            check_ledger(&space, p, &["front", "back"], Layout::Slab, 15);
        }
    }

    #[test]
    fn energy_budget_closes_with_wall_energy() {
        let space = cube(3);
        let mut p = params();
        p.beta = 0.02;
        let reports = check_ledger(&space, p, &[], Layout::Full, 8);
        let q = reports.last().unwrap().energy.surface;
        assert!(q != 0.0);
        let walls = wall_mask(&space, &[]);
        assert!(walls.iter().all(|&w| w));
        let unit = wall_integral(&space, &space.interpolate(|_| 1.0).values, &walls);
        assert!(unit > 0.0);
    }

    #[test]
    fn slab_layout_matches_full_layout() {
        let space = slab(2, 3, true);
        let problem = Problem::new(&space, params()).with_symmetry(&["front", "back"]);
        let phi = wavy(&space, 0.3);
        assert!(slab_exact(&problem, &phi).unwrap());
        let mut opts = RunOptions::new(5e-3, 0.05);
        opts.layout = Some(Layout::Full);
        let full = run(&problem, phi.clone(), &opts, |_, _| true).unwrap();
        opts.layout = Some(Layout::Slab);
        let slab = run(&problem, phi, &opts, |_, _| true).unwrap();
        rel_close(&slab.state.phi.values, &full.state.phi.values, 1e-10);
        for (a, b) in slab.reports.iter().zip(&full.reports) {
            assert!((a.energy.total - b.energy.total).abs() < 1e-10 * b.energy.total.abs().max(1.0));
        }
    }

    #[test]
    fn zero_q_penalty_reproduces_the_default_trajectory() {
        let space = slab(2, 2, true);
        let mut explicit = CHParams::new(1.0, 2e-3);
        explicit.sigma_q = 0.0;
        let phi = wavy(&space, 0.3);
        let opts = RunOptions::new(5e-3, 0.03);
        let a = run(&Problem::new(&space, CHParams::new(1.0, 2e-3)), phi.clone(), &opts, |_, _| true).unwrap();
        let b = run(&Problem::new(&space, explicit), phi, &opts, |_, _| true).unwrap();
        assert_eq!(a.state.phi.values, b.state.phi.values);
        for r in &a.reports {
            assert_eq!(r.energy_sigma, r.energy.total);
        }
    }

    #[test]
    fn continuous_state_has_no_q_penalty_energy() {
        let space = slab(2, 2, false);
        let mut p = params();
        p.sigma_q = 2.0;
        let problem = Problem::new(&space, p).with_symmetry(&["front", "back"]);
        let phi = space.interpolate(|x| 0.1 + 0.2 * x[0] - 0.1 * x[1]);
        let op = ImplicitOperator::new(&problem, Layout::Full, 0.1).unwrap();
        let st = Stepper::new(&problem, op, true);
        let r = st.report(&st.initial_state(phi, 0.0).unwrap()).unwrap();
        assert!((r.energy_sigma - r.energy.total).abs() < 1e-14);
    }

    #[test]
    fn penalized_energy_decays_on_two_elements() {
        let m = generate_box_mesh(2, 1, 1, [[0.0, 1.0], [0.0, 0.5], [0.0, 0.5]]).unwrap();
        let space = DgSpace::new(m, 2).unwrap();
        let mut p = params();
        p.sigma_q = 5.0;
        let problem = Problem::new(&space, p);
        let phi = space.interpolate(|x| 0.5 * (6.0 * x[0]).sin() * (1.0 + x[1]));
        let out = run(&problem, phi, &RunOptions::new(1e-2, 0.3), |_, _| true).unwrap();
        for w in out.reports.windows(2) {
            let scale = w[0].energy_sigma.abs().max(1.0);
            assert!(w[1].energy_sigma <= w[0].energy_sigma + 1e-10 * scale);
            assert!(w[1].balance_residual <= 1e-9 * scale);
        }
    }

    #[test]
    fn disabled_ledger_reports_nan() {
        let space = slab(1, 2, false);
        let problem = Problem::new(&space, params());
        let mut opts = RunOptions::new(0.01, 0.01);
        opts.ledger = false;
        let out = run(&problem, wavy(&space, 0.2), &opts, |_, _| true).unwrap();
        assert!(out.reports[1].balance_residual.is_nan());
        assert!(out.reports[1].energy.total.is_finite());
    }

    #[test]
    fn observer_can_stop_the_run() {
        let space = slab(1, 2, false);
        let problem = Problem::new(&space, params());
        let out = run(&problem, wavy(&space, 0.2), &RunOptions::new(0.01, 1.0), |r, _| r.step < 3).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert_eq!(out.state.step, 3);
    }
}
