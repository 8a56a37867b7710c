//! Manufactured-solution verification: exact solution and source, discrete
//! error norm, and p-, h- and time-convergence drivers.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::chmodel::CHParams;
use crate::dgops::{DgSpace, Field};
use crate::error::{Error, Result};
use crate::geometry::{generate_box_mesh, Point};
use crate::timeloop::{run, Forcing, Problem, RunOptions};

/// Source of the forced problem for `phi0 = cos(pi a x) cos(pi a y) cos(t)`.
pub fn mms_source(x: f64, y: f64, t: f64, alpha: f64, eps: f64, m: f64) -> f64 {
    let (cx, sx) = ((PI * alpha * x).cos(), (PI * alpha * x).sin());
    let (cy, sy) = ((PI * alpha * y).cos(), (PI * alpha * y).sin());
    let (ct, st) = (t.cos(), t.sin());
    let p2 = PI.powi(2) * alpha.powi(2);
    let p4 = PI.powi(4) * alpha.powi(4);
    let e2 = eps * eps;
    2.0 * m * p4 * e2 * ct * cx * cy + 3.0 * m * p2 * ct.powi(3) * cx.powi(3) * cy.powi(3)
        - 6.0 * m * p2 * ct.powi(3) * cx * cy.powi(3) * sx * sx
        - m * p2 * ct * cx * cy
        + 2.0 * m * p4 * e2 * ct * cx * cy
        + 3.0 * m * p2 * ct.powi(3) * cx.powi(3) * cy.powi(3)
        - 6.0 * m * p2 * ct.powi(3) * cx.powi(3) * cy * sy * sy
        - m * p2 * ct * cx * cy
        - st * cx * cy
}

/// Manufactured solution in the `(x, y)` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsCase {
    pub alpha: f64,
    pub eps: f64,
    pub mobility: f64,
}

impl MmsCase {
    pub fn new(alpha: f64, eps: f64, mobility: f64) -> Self {
        Self { alpha, eps, mobility }
    }

    pub fn exact(&self, x: Point, t: f64) -> f64 {
        let a = PI * self.alpha;
        (a * x[0]).cos() * (a * x[1]).cos() * t.cos()
    }

    pub fn params(&self) -> CHParams {
        CHParams::from_eps(self.mobility, self.eps)
    }

    /// `w0 = phi0^3 - phi0 - eps^2 lap phi0`.
    pub fn chemical_potential(&self, x: Point, t: f64) -> f64 {
        let p = self.exact(x, t);
        let a = PI * self.alpha;
        p * p * p - p + self.eps * self.eps * 2.0 * a * a * p
    }
}

impl Forcing for MmsCase {
    fn source(&self, x: Point, t: f64) -> f64 {
        mms_source(x[0], x[1], t, self.alpha, self.eps, self.mobility)
    }

    fn phi_gradient(&self, x: Point, t: f64) -> [f64; 3] {
        let a = PI * self.alpha;
        let (cx, sx) = ((a * x[0]).cos(), (a * x[0]).sin());
        let (cy, sy) = ((a * x[1]).cos(), (a * x[1]).sin());
        [-a * sx * cy * t.cos(), -a * cx * sy * t.cos(), 0.0]
    }

    fn w_gradient(&self, x: Point, t: f64) -> [f64; 3] {
        let p = self.exact(x, t);
        let a = PI * self.alpha;
        let g = self.phi_gradient(x, t);
        let s = 3.0 * p * p - 1.0 + self.eps * self.eps * 2.0 * a * a;
        [s * g[0], s * g[1], 0.0]
    }

    fn planar(&self) -> bool {
        true
    }
}

/// `sqrt(sum_e <J (Phi - I phi0), Phi - I phi0>)` with `phi0` sampled at the nodes.
pub fn error_norm(space: &DgSpace, phi: &Field, exact: impl Fn(Point) -> f64) -> f64 {
    let mass = space.mass();
    space
        .coords()
        .iter()
        .zip(&phi.values)
        .zip(mass)
        .map(|((&x, &u), &m)| {
            let d = u - exact(x);
            m * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Cartesian `[-1, 1]^2 x [0, 1]` slab with `n x n x 1` elements.
pub fn mms_space(n: usize, order: usize) -> Result<DgSpace> {
    let mesh = generate_box_mesh(n, n, 1, [[-1.0, 1.0], [-1.0, 1.0], [0.0, 1.0]])?;
    DgSpace::new(mesh, order)
}

/// One forced run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsRun {
    pub elements: usize,
    pub order: usize,
    pub dt: f64,
    pub t_final: f64,
    pub kappa_sigma: f64,
    pub s0: f64,
    pub k0: f64,
}

/// Final-time error of one manufactured-solution run.
pub fn mms_error(case: &MmsCase, r: &MmsRun) -> Result<f64> {
    let space = mms_space(r.elements, r.order)?;
    let mut params = case.params();
    params.kappa_sigma = r.kappa_sigma;
    params.s0 = r.s0;
    params.k0 = r.k0;
    let problem = Problem::new(&space, params).with_forcing(case);
    let phi0 = space.interpolate(|x| case.exact(x, 0.0));
    let mut opts = RunOptions::new(r.dt, r.t_final);
    opts.ledger = false;
    let out = run(&problem, phi0, &opts, |_, _| true)?;
    Ok(error_norm(&space, &out.state.phi, |x| case.exact(x, out.state.time)))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two matching samples".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("slope needs positive finite samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub order: usize,
    pub dx: f64,
    pub dt: f64,
    pub error: f64,
    /// Fitted order of the series the row belongs to, if any.
    pub observed_order: Option<f64>,
}

/// Sweep definition shared by the three drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub case: MmsCase,
    pub meshes: Vec<usize>,
    pub orders: Vec<usize>,
    pub dts: Vec<f64>,
    pub t_final: f64,
    pub kappa_sigma: f64,
    pub s0: f64,
    pub k0: f64,
    /// Independent runs executed concurrently.
    pub threads: usize,
}

impl ConvergenceConfig {
    /// Polynomial-order sweep on a 4x4 mesh, `alpha = 1`.
    pub fn p_study(kappa_sigma: f64) -> Self {
        Self {
            case: MmsCase::new(1.0, 0.1, 1.0),
            meshes: vec![4],
            orders: (3..=8).collect(),
            dts: vec![1e-3, 5e-4, 1e-4],
            t_final: 0.1,
            kappa_sigma,
            s0: 1.0,
            k0: 1.0,
            threads: 1,
        }
    }

    /// Mesh sweep 16x16 to 64x64, `alpha = 8`.
    pub fn h_study() -> Self {
        Self {
            case: MmsCase::new(8.0, 0.1, 1.0),
            meshes: vec![16, 32, 64],
            orders: (2..=5).collect(),
            dts: vec![1e-4],
            t_final: 0.01,
            kappa_sigma: 3.0,
            s0: 1.0,
            k0: 1.0,
            threads: 1,
        }
    }

    /// Time-step sweep at `N = 8` on a 4x4 mesh.
    pub fn time_study() -> Self {
        Self {
            case: MmsCase::new(1.0, 0.1, 1.0),
            meshes: vec![4],
            orders: vec![8],
            dts: vec![1e-3, 5e-4, 2.5e-4, 1e-4],
            t_final: 0.1,
            kappa_sigma: 3.0,
            s0: 1.0,
            k0: 1.0,
            threads: 1,
        }
    }

    fn run_for(&self, elements: usize, order: usize, dt: f64) -> MmsRun {
        MmsRun { elements, order, dt, t_final: self.t_final, kappa_sigma: self.kappa_sigma, s0: self.s0, k0: self.k0 }
    }

    fn single(&self, what: &str, v: &[f64]) -> Result<f64> {
        match v {
            [x] => Ok(*x),
            _ => Err(Error::Configuration(format!("{what} sweep needs exactly one value, got {}", v.len()))),
        }
    }
}

fn dx_of(elements: usize) -> f64 {
    2.0 / elements as f64
}

/// Runs `jobs` on up to `threads` workers, keeping the input order.
fn run_all(case: &MmsCase, jobs: &[MmsRun], threads: usize) -> Result<Vec<f64>> {
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(|r| mms_error(case, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let e = mms_error(case, &jobs[i]);
                results.lock().expect("worker panicked")[i] = Some(e);
            });
        }
    });
    results.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Final-time error for every `(N, dt)` pair on the single mesh.
pub fn p_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let m = cfg.single("mesh", &cfg.meshes.iter().map(|&v| v as f64).collect::<Vec<_>>())? as usize;
    let pairs: Vec<(f64, usize)> = cfg.dts.iter().flat_map(|&dt| cfg.orders.iter().map(move |&n| (dt, n))).collect();
    let jobs: Vec<MmsRun> = pairs.iter().map(|&(dt, n)| cfg.run_for(m, n, dt)).collect();
    let errors = run_all(&cfg.case, &jobs, cfg.threads)?;
    Ok(pairs
        .iter()
        .zip(errors)
        .map(|(&(dt, n), error)| ConvergenceRow { order: n, dx: dx_of(m), dt, error, observed_order: None })
        .collect())
}

/// Errors over the mesh sweep with the fitted order per `N`.
pub fn h_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let dt = cfg.single("time step", &cfg.dts)?;
    let pairs: Vec<(usize, usize)> = cfg.orders.iter().flat_map(|&n| cfg.meshes.iter().map(move |&m| (n, m))).collect();
    let jobs: Vec<MmsRun> = pairs.iter().map(|&(n, m)| cfg.run_for(m, n, dt)).collect();
    let errors = run_all(&cfg.case, &jobs, cfg.threads)?;
    let mut rows = Vec::new();
    for (series, errs) in pairs.chunks(cfg.meshes.len()).zip(errors.chunks(cfg.meshes.len())) {
        let dx: Vec<f64> = series.iter().map(|&(_, m)| dx_of(m)).collect();
        let slope = log_slope(&dx, errs)?;
        for (&(n, m), &error) in series.iter().zip(errs) {
            rows.push(ConvergenceRow { order: n, dx: dx_of(m), dt, error, observed_order: Some(slope) });
        }
    }
    Ok(rows)
}

/// Errors over the time-step sweep with the fitted temporal order.
pub fn time_convergence(cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    let m = cfg.single("mesh", &cfg.meshes.iter().map(|&v| v as f64).collect::<Vec<_>>())? as usize;
    let n = cfg.single("order", &cfg.orders.iter().map(|&v| v as f64).collect::<Vec<_>>())? as usize;
    let jobs: Vec<MmsRun> = cfg.dts.iter().map(|&dt| cfg.run_for(m, n, dt)).collect();
    let errors = run_all(&cfg.case, &jobs, cfg.threads)?;
    let slope = log_slope(&cfg.dts, &errors)?;
    Ok(cfg
        .dts
        .iter()
        .zip(errors)
        .map(|(&dt, error)| ConvergenceRow { order: n, dx: dx_of(m), dt, error, observed_order: Some(slope) })
        .collect())
}

/// Writes `N,dx,dt,error,observed_order`; a missing order is left empty.
pub fn write_convergence_csv(rows: &[ConvergenceRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "N,dx,dt,error,observed_order")?;
    for r in rows {
        let order = r.observed_order.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(out, "{},{:.17e},{:.17e},{:.17e},{}", r.order, r.dx, r.dt, r.error, order)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Strong-form residual of the forced equation from analytic derivatives
    /// of `phi0` and the chain rule for `lap psi'(phi0)`.
    fn chain_rule_residual(c: &MmsCase, x: f64, y: f64, t: f64) -> f64 {
        let a = PI * c.alpha;
        let p = c.exact([x, y, 0.0], t);
        let g = c.phi_gradient([x, y, 0.0], t);
        let lap = -2.0 * a * a * p;
        let bilap = 4.0 * a.powi(4) * p;
        let lap_psi = 6.0 * p * (g[0] * g[0] + g[1] * g[1]) + (3.0 * p * p - 1.0) * lap;
        let phi_t = -(a * x).cos() * (a * y).cos() * t.sin();
        let rhs = c.mobility * (lap_psi - c.eps * c.eps * bilap);
        phi_t - rhs - mms_source(x, y, t, c.alpha, c.eps, c.mobility)
    }

    /// Eighth-order central second difference.
    fn d2(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        const C: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
        let mut acc = C[0] * f(x);
        for (m, c) in C.iter().enumerate().skip(1) {
            let s = m as f64 * h;
            acc += c * (f(x + s) + f(x - s));
        }
        acc / (h * h)
    }

    /// Finite-difference residual. `phi0` and `phi0^3` are products of 1D
    /// factors, so every derivative is a 1D stencil applied to a factor.
    fn fd_residual(c: &MmsCase, x: f64, y: f64, t: f64, h: f64) -> f64 {
        let a = PI * c.alpha;
        let cs = |v: f64| (a * v).cos();
        let cube = |v: f64| (a * v).cos().powi(3);
        let d4 = |f: &dyn Fn(f64) -> f64, v: f64| d2(&|u| d2(f, u, h), v, h);
        let (cx, cy, ct) = (cs(x), cs(y), t.cos());
        let lap_phi = (d2(&cs, x, h) * cy + cx * d2(&cs, y, h)) * ct;
        let lap_cube = (d2(&cube, x, h) * cy.powi(3) + cx.powi(3) * d2(&cube, y, h)) * ct.powi(3);
        let bilap = (d4(&cs, x) * cy + 2.0 * d2(&cs, x, h) * d2(&cs, y, h) + cx * d4(&cs, y)) * ct;
        const D1: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let dt: f64 = D1.iter().enumerate().map(|(m, w)| {
            let s = (m + 1) as f64 * h;
            w * ((t + s).cos() - (t - s).cos())
        }).sum::<f64>() / h;
        let phi_t = cx * cy * dt;
        phi_t - c.mobility * (lap_cube - lap_phi - c.eps * c.eps * bilap) - mms_source(x, y, t, c.alpha, c.eps, c.mobility)
    }

    #[test]
    fn source_matches_quoted_values() {
        let q = mms_source(0.0, 0.0, 0.0, 1.0, 0.1, 1.0);
        let expected = 4.0 * PI.powi(4) * 0.01 + 4.0 * PI * PI;
        assert!((q - expected).abs() < 1e-12);
        assert!((q - 43.37478).abs() < 1e-5);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let q = mms_source(x, y, PI / 2.0, 3.0, 0.2, 1.7);
            let expected = -(3.0 * PI * x).cos() * (3.0 * PI * y).cos();
            assert!((q - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn source_matches_chain_rule_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for c in [MmsCase::new(1.0, 0.1, 1.0), MmsCase::new(8.0, 0.1, 1.0), MmsCase::new(2.0, 0.3, 0.5)] {
            for _ in 0..100 {
                let (x, y, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
                let r = chain_rule_residual(&c, x, y, t);
                let scale = c.alpha.powi(4).max(1.0);
                assert!(r.abs() <= 1e-10 * scale, "{r:e}");
            }
        }
    }

    #[test]
    fn source_matches_finite_difference_oracle() {
        let c = MmsCase::new(1.0, 0.1, 1.0);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let (x, y, t) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
            let r = fd_residual(&c, x, y, t, 1e-2);
            assert!(r.abs() <= 1e-8, "{r:e}");
        }
    }

    #[test]
    fn forcing_gradients_match_differences() {
        let c = MmsCase::new(2.0, 0.2, 1.3);
        let h = 1e-5;
        for &p in &[[0.1, -0.3, 0.0], [0.77, 0.41, 0.5]] {
            let t = 0.3;
            for d in 0..2 {
                let mut a = p;
                let mut b = p;
                a[d] += h;
                b[d] -= h;
                let fd = (c.exact(a, t) - c.exact(b, t)) / (2.0 * h);
                assert!((fd - c.phi_gradient(p, t)[d]).abs() < 1e-6);
                let fw = (c.chemical_potential(a, t) - c.chemical_potential(b, t)) / (2.0 * h);
                assert!((fw - c.w_gradient(p, t)[d]).abs() < 1e-5 * fw.abs().max(1.0));
            }
        }
    }

    #[test]
    fn error_norm_properties() {
        let space = mms_space(2, 3).unwrap();
        let c = MmsCase::new(1.0, 0.1, 1.0);
        let phi = space.interpolate(|x| c.exact(x, 0.2));
        assert_eq!(error_norm(&space, &phi, |x| c.exact(x, 0.2)), 0.0);
        let shifted = phi.map(|v| v + 0.25);
        let e = error_norm(&space, &shifted, |x| c.exact(x, 0.2));
        assert!((e - 0.25 * 4.0f64.sqrt()).abs() < 1e-13);

        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let u = Field::new((0..space.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let basis = space.basis();
        let n1 = space.n1();
        let jac = space.metrics().jacobian();
        let mut direct = 0.0;
        for e in 0..space.num_elements() {
            for k in 0..n1 {
                for j in 0..n1 {
                    for i in 0..n1 {
                        let g = e * n1 * n1 * n1 + (k * n1 + j) * n1 + i;
                        let w = basis.weights()[i] * basis.weights()[j] * basis.weights()[k];
                        let d = u.values[g] - c.exact(space.coords()[g], 0.0);
                        direct += w * jac[g] * d * d;
                    }
                }
            }
        }
        let e = error_norm(&space, &u, |x| c.exact(x, 0.0));
        assert!((e - direct.sqrt()).abs() <= 1e-13 * e);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(2.5)).collect();
        assert!((log_slope(&x, &y).unwrap() - 2.5).abs() < 1e-12);
        assert!(log_slope(&[1.0], &[1.0]).is_err());
        assert!(log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn coarse_runs_converge_and_are_deterministic() {
        let c = MmsCase::new(1.0, 0.1, 1.0);
        let run = |n: usize| MmsRun { elements: 2, order: n, dt: 1e-3, t_final: 0.01, kappa_sigma: 3.0, s0: 1.0, k0: 1.0 };
        let e3 = mms_error(&c, &run(3)).unwrap();
        let e5 = mms_error(&c, &run(5)).unwrap();
        assert!(e5 < e3, "{e5:e} vs {e3:e}");
        assert_eq!(e5, mms_error(&c, &run(5)).unwrap());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = ConvergenceConfig::p_study(3.0);
        cfg.meshes = vec![2];
        cfg.orders = vec![2, 3];
        cfg.dts = vec![2e-3, 1e-3];
        cfg.t_final = 0.004;
        let serial = p_convergence(&cfg).unwrap();
        cfg.threads = 3;
        let parallel = p_convergence(&cfg).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), 4);
        assert_eq!((serial[1].order, serial[1].dt), (3, 2e-3));
    }

    #[test]
    fn convergence_csv_layout() {
        let rows = [
            ConvergenceRow { order: 3, dx: 0.5, dt: 1e-3, error: 1.5e-4, observed_order: None },
            ConvergenceRow { order: 4, dx: 0.25, dt: 1e-3, error: 2e-6, observed_order: Some(4.9) },
        ];
        let mut buf = Vec::new();
        write_convergence_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "N,dx,dt,error,observed_order");
        assert!(lines[1].ends_with(','));
        let fields: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(fields, vec![4.0, 0.25, 1e-3, 2e-6, 4.9]);
    }
}
