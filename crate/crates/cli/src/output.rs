//! Energy CSV and legacy VTK writers.

use std::io::{self, Write};

use chdg::dgops::DgSpace;
use chdg::timeloop::StepReport;

pub const ENERGY_HEADER: &str =
    "step,t,F_total,F_vol,F_surf,mass,diss_phys,diss_penalty,diss_imex,balance_residual,min_pistar";

/// One energy row; every float carries 17 significant digits.
pub fn write_energy_row(out: &mut impl Write, r: &StepReport) -> io::Result<()> {
    write!(out, "{}", r.step)?;
    for v in [
        r.time,
        r.energy.total,
        r.energy.volumetric,
        r.energy.surface,
        r.mass,
        r.diss_phys,
        r.diss_penalty,
        r.diss_imex,
        r.balance_residual,
        r.min_pi_star,
    ] {
        write!(out, ",{v:.16e}")?;
    }
    out.write_all(b"\n")
}

pub fn write_energy_csv(out: &mut impl Write, reports: &[StepReport]) -> io::Result<()> {
    writeln!(out, "{ENERGY_HEADER}")?;
    for r in reports {
        write_energy_row(out, r)?;
    }
    Ok(())
}

/// Legacy ASCII unstructured grid: the nodes of each element, split into
/// `N^3` hexahedra, with nodal `phi` and `w`.
pub fn write_vtk(out: &mut impl Write, space: &DgSpace, phi: &[f64], w: &[f64], time: f64) -> io::Result<()> {
    let n = space.order();
    let n1 = n + 1;
    let np = space.nodes_per_element();
    let ne = space.num_elements();
    let coords = space.coords();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "chdg t={time:.16e}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", coords.len())?;
    for p in coords {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
    }
    let cells = ne * n * n * n;
    writeln!(out, "CELLS {} {}", cells, cells * 9)?;
    let id = |e: usize, i: usize, j: usize, k: usize| e * np + (k * n1 + j) * n1 + i;
    for e in 0..ne {
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    writeln!(
                        out,
                        "8 {} {} {} {} {} {} {} {}",
                        id(e, i, j, k),
                        id(e, i + 1, j, k),
                        id(e, i + 1, j + 1, k),
                        id(e, i, j + 1, k),
                        id(e, i, j, k + 1),
                        id(e, i + 1, j, k + 1),
                        id(e, i + 1, j + 1, k + 1),
                        id(e, i, j + 1, k + 1)
                    )?;
                }
            }
        }
    }
    writeln!(out, "CELL_TYPES {cells}")?;
    for _ in 0..cells {
        writeln!(out, "12")?;
    }
    writeln!(out, "POINT_DATA {}", coords.len())?;
    for (name, data) in [("phi", phi), ("w", w)] {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in data {
            writeln!(out, "{v:.16e}")?;
        }
    }
    Ok(())
}
