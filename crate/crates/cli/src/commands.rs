//! `ch run`, `ch convergence`, `ch check` and `ch genmesh`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chdg::dgops::DgSpace;
use chdg::geometry::{format_mesh, write_mesh};
use chdg::timeloop::{run, Forcing, Problem, RunOptions};
use chdg::verify::{error_norm, h_convergence, p_convergence, time_convergence, write_convergence_csv, ConvergenceRow, MmsCase};

use crate::checks::{invariant_suite, summarize, CheckOutcome, LedgerSummary};
use crate::config::{CheckConfig, ConvergenceSettings, InitialCondition, RunConfig, Study};
use crate::error::CliError;
use crate::ic::initial_field;
use crate::meshspec::{load_mesh, MeshSpec};
use crate::output::{write_energy_row, write_vtk, ENERGY_HEADER};

/// Worker cap from `CH_THREADS`; 1 when unset.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("CH_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::usage(format!("CH_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub elements: usize,
    pub order: usize,
    pub slab: bool,
    pub ledger: LedgerSummary,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub final_time: f64,
    pub pi_star_violations: usize,
    /// Final-time error against the exact solution of an `mms` run.
    pub mms_error: Option<f64>,
    pub energy_csv: PathBuf,
    pub snapshots: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "elements          {} (N = {}, {} layout)", self.elements, self.order, if self.slab { "slab" } else { "full" })?;
        writeln!(f, "steps             {} (t = {:.6e})", self.ledger.steps, self.final_time)?;
        writeln!(f, "free energy       {:.10e} -> {:.10e}", self.energy_initial, self.energy_final)?;
        writeln!(f, "max energy change {:.3e}", self.ledger.energy_increase)?;
        writeln!(f, "max balance       {:.3e}", self.ledger.balance)?;
        writeln!(f, "mass drift        {:.3e}", self.ledger.mass_drift)?;
        writeln!(f, "pi* violations    {}", self.pi_star_violations)?;
        if let Some(e) = self.mms_error {
            writeln!(f, "mms error         {e:.6e}")?;
        }
        writeln!(f, "energy log        {}", self.energy_csv.display())?;
        write!(f, "snapshots         {}", self.snapshots)
    }
}

fn snapshot(dir: &Path, space: &DgSpace, step: usize, phi: &[f64], w: &[f64], t: f64) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(format!("snapshot_{step:06}.vtk")))?);
    write_vtk(&mut out, space, phi, w, t)?;
    out.flush()
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let space = DgSpace::new(load_mesh(&cfg.mesh)?, cfg.order)?;
    for tag in &cfg.symmetry {
        if space.tag_index(tag).is_none() {
            return Err(CliError::usage(format!("symmetry tag `{tag}` is not a boundary tag of the mesh")));
        }
    }
    let case = match cfg.initial {
        InitialCondition::Mms { alpha } => Some(MmsCase::new(alpha, cfg.params.k.sqrt(), cfg.params.mobility)),
        _ => None,
    };
    let phi0 = initial_field(&cfg.initial, &space, case.as_ref())?;
    let tags: Vec<&str> = cfg.symmetry.iter().map(String::as_str).collect();
    let mut problem = Problem::new(&space, cfg.params).with_symmetry(&tags);
    if let Some(c) = &case {
        problem = problem.with_forcing(c as &dyn Forcing);
    }
    let mut opts = RunOptions::new(cfg.dt, cfg.t_final);
    opts.ledger = cfg.ledger;
    let slab = chdg::timeloop::slab_exact(&problem, &phi0)?;

    fs::create_dir_all(&cfg.output)?;
    let csv_path = cfg.output.join("energy.csv");
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{ENERGY_HEADER}")?;
    let total = opts.steps();
    let mut io_error = None;
    let mut snapshots = 0;
    let result = run(&problem, phi0, &opts, |r, state| {
        let last = r.step == total;
        let mut write = || -> std::io::Result<()> {
            if r.step % cfg.energy_interval == 0 || last {
                write_energy_row(&mut csv, r)?;
            }
            if cfg.snapshot_interval > 0 && (r.step % cfg.snapshot_interval == 0 || last) {
                snapshot(&cfg.output, &space, r.step, &state.phi.values, &state.w.values, r.time)?;
                snapshots += 1;
            }
            Ok(())
        };
        match write() {
            Ok(()) => true,
            Err(e) => {
                io_error = Some(e);
                false
            }
        }
    });
    csv.flush()?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let out = result?;
    let first = out.reports[0];
    let last = *out.reports.last().expect("run reports the initial state");
    let mms_error = case.map(|c| error_norm(&space, &out.state.phi, |x| c.exact(x, out.state.time)));
    Ok(RunSummary {
        elements: space.num_elements(),
        order: cfg.order,
        slab,
        ledger: summarize(&out.reports),
        energy_initial: first.energy.total,
        energy_final: last.energy.total,
        final_time: last.time,
        pi_star_violations: out.reports.iter().map(|r| r.pi_star_violations).sum(),
        mms_error,
        energy_csv: csv_path,
        snapshots,
    })
}

/// Runs the study and writes `convergence_<study>.csv` to the output
/// directory.
pub fn cmd_convergence(settings: &ConvergenceSettings, threads: usize) -> Result<(Vec<ConvergenceRow>, PathBuf), CliError> {
    let mut cfg = settings.config.clone();
    cfg.threads = threads;
    let (rows, name) = match settings.study {
        Study::P => (p_convergence(&cfg)?, "p"),
        Study::H => (h_convergence(&cfg)?, "h"),
        Study::Time => (time_convergence(&cfg)?, "time"),
    };
    fs::create_dir_all(&settings.output)?;
    let path = settings.output.join(format!("convergence_{name}.csv"));
    let mut out = BufWriter::new(File::create(&path)?);
    write_convergence_csv(&rows, &mut out)?;
    out.flush()?;
    Ok((rows, path))
}

pub fn format_convergence_table(rows: &[ConvergenceRow]) -> String {
    let mut s = format!("{:>3} {:>12} {:>12} {:>14} {:>8}\n", "N", "dx", "dt", "error", "order");
    for r in rows {
        let order = r.observed_order.map(|o| format!("{o:8.3}")).unwrap_or_else(|| format!("{:>8}", "-"));
        s.push_str(&format!("{:>3} {:>12.4e} {:>12.4e} {:>14.6e} {}\n", r.order, r.dx, r.dt, r.error, order));
    }
    s
}

/// Runs the invariant suite; any failure is reported as
/// [`CliError::CheckFailed`] after every outcome has been printed.
pub fn cmd_check(cfg: &CheckConfig, out: &mut impl Write) -> Result<Vec<CheckOutcome>, CliError> {
    let space = DgSpace::new(load_mesh(&cfg.mesh)?, cfg.order)?;
    let outcomes = invariant_suite(&space, cfg.params, cfg.dt)?;
    for c in &outcomes {
        writeln!(
            out,
            "{} {:<36} {:.3e} (tolerance {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        )?;
    }
    let failed = outcomes.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(CliError::CheckFailed(failed));
    }
    Ok(outcomes)
}

/// `ch genmesh <spec> [path]`; without a path the mesh goes to `out`.
pub fn cmd_genmesh(args: &[String], out: &mut impl Write) -> Result<(), CliError> {
    let (spec, path) = match args {
        [spec] => (spec, None),
        [spec, path] => (spec, Some(path)),
        _ => return Err(CliError::usage("usage: ch genmesh <spec> [output.chmesh]")),
    };
    let mesh = MeshSpec::parse(spec).map_err(CliError::usage)?.build()?;
    match path {
        Some(p) => write_mesh(&mesh, p)?,
        None => out.write_all(format_mesh(&mesh).as_bytes())?,
    }
    Ok(())
}
