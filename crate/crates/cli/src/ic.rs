//! Initial phase fields.

use std::path::Path;

use chdg::dgops::{DgSpace, Field};
use chdg::geometry::Point;
use chdg::verify::MmsCase;

use crate::config::InitialCondition;
use crate::error::CliError;

/// Two-dimensional spinodal perturbation in the `(x, y)` plane.
pub fn spinodal2d(p: Point) -> f64 {
    let [x, y, _] = p;
    let b = (0.13 * x).cos() * (0.087 * y).cos();
    0.05 * ((0.105 * x).cos() * (0.11 * y).cos() + b * b + (0.025 * x - 0.15 * y).cos() * (0.07 * x - 0.02 * y).cos())
}

pub fn spinodal3d(p: Point) -> f64 {
    let [x, y, z] = p;
    0.015 * (5.0 * x - 10.0 * z).cos() * (7.0 * x + 10.0 * z * y + 1.0).cos()
        + 0.02 * (20.0 * y * y + 15.0 * x * x).cos() * (5.0 * x + 2.0 * y + 3.0 * x).sin()
        + 0.02 * (10.0 * (y * y + z * z).sqrt()).cos() * (15.0 * x * y).cos() * (20.0 * x + 10.0 * z).sin()
        + 0.01 * (3.0 * x).cos() * (3.0 * z).cos() * (4.0 * y).cos()
}

/// Nodal values in node order, whitespace separated; `#` starts a comment.
pub fn read_field(path: &Path, space: &DgSpace) -> Result<Field, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(0, format!("cannot read `{}`: {e}", path.display())))?;
    let mut values = Vec::with_capacity(space.num_nodes());
    for (i, line) in text.lines().enumerate() {
        for tok in line.split('#').next().unwrap_or("").split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                CliError::config(0, format!("{}:{}: invalid value `{tok}`", path.display(), i + 1))
            })?;
            values.push(v);
        }
    }
    if values.len() != space.num_nodes() {
        return Err(CliError::config(
            0,
            format!("`{}` holds {} values, the mesh has {} nodes", path.display(), values.len(), space.num_nodes()),
        ));
    }
    Ok(Field::new(values))
}

/// Samples the condition at `t = 0`. The `mms` condition also needs the
/// matching [`MmsCase`] as forcing, built from the model parameters.
pub fn initial_field(ic: &InitialCondition, space: &DgSpace, mms: Option<&MmsCase>) -> Result<Field, CliError> {
    Ok(match ic {
        InitialCondition::Spinodal2d => space.interpolate(spinodal2d),
        InitialCondition::Spinodal3d => space.interpolate(spinodal3d),
        InitialCondition::Mms { .. } => {
            let case = mms.ok_or_else(|| CliError::usage("mms initial condition without a case"))?;
            space.interpolate(|x| case.exact(x, 0.0))
        }
        InitialCondition::File(path) => read_field(path, space)?,
    })
}
