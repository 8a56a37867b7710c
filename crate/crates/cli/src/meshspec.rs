//! Generated-mesh descriptions such as `box:16x16x1@0,200,0,200,0,12.5+curved:0.05:4`.

use chdg::geometry::{distort_mesh, generate_box_mesh, read_mesh, CurvedHexMesh, Distortion};

use crate::config::MeshSource;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub counts: [usize; 3],
    pub bounds: [[f64; 2]; 3],
    pub distortion: Option<(Distortion, f64)>,
}

impl MeshSpec {
    /// `box:NXxNYxNZ[@x0,x1,y0,y1,z0,z1][+straight:AMP | +curved:AMP:NGEO]`.
    /// Bounds default to the unit cube.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let (base, modifier) = match text.split_once('+') {
            Some((b, m)) => (b, Some(m)),
            None => (text, None),
        };
        let body = base.strip_prefix("box:").ok_or_else(|| format!("mesh spec `{text}` must start with `box:`"))?;
        let (counts, bounds) = match body.split_once('@') {
            Some((c, b)) => (c, Some(b)),
            None => (body, None),
        };
        let counts: Vec<usize> = counts
            .split('x')
            .map(|s| s.trim().parse().map_err(|_| format!("bad element count `{s}`")))
            .collect::<Result<_, _>>()?;
        let counts: [usize; 3] =
            counts.try_into().map_err(|_| "element counts must be given as NXxNYxNZ".to_string())?;
        if counts.contains(&0) {
            return Err("element counts must be positive".into());
        }
        let bounds = match bounds {
            None => [[0.0, 1.0]; 3],
            Some(b) => {
                let v: Vec<f64> = b
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| format!("bad bound `{s}`")))
                    .collect::<Result<_, _>>()?;
                if v.len() != 6 {
                    return Err(format!("expected 6 bounds, got {}", v.len()));
                }
                let b = [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]];
                if b.iter().any(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
                    return Err("each lower bound must be below its upper bound".into());
                }
                b
            }
        };
        let distortion = match modifier {
            None => None,
            Some(m) => {
                let parts: Vec<&str> = m.split(':').collect();
                let amp = |s: &str| -> Result<f64, String> {
                    let a: f64 = s.parse().map_err(|_| format!("bad amplitude `{s}`"))?;
                    if !a.is_finite() || a < 0.0 {
                        return Err(format!("amplitude {a} must be non-negative"));
                    }
                    Ok(a)
                };
                match parts.as_slice() {
                    ["straight", a] => Some((Distortion::StraightSine, amp(a)?)),
                    ["curved", a, g] => {
                        let ngeo: usize = g.parse().map_err(|_| format!("bad geometry order `{g}`"))?;
                        if ngeo == 0 {
                            return Err("geometry order must be at least 1".into());
                        }
                        Some((Distortion::CurvedSine { ngeo }, amp(a)?))
                    }
                    _ => return Err(format!("unknown mesh modifier `{m}` (straight:AMP or curved:AMP:NGEO)")),
                }
            }
        };
        Ok(Self { counts, bounds, distortion })
    }

    pub fn build(&self) -> chdg::Result<CurvedHexMesh> {
        let [nx, ny, nz] = self.counts;
        let mesh = generate_box_mesh(nx, ny, nz, self.bounds)?;
        match self.distortion {
            Some((mode, amp)) => distort_mesh(&mesh, mode, amp),
            None => Ok(mesh),
        }
    }
}

pub fn load_mesh(source: &MeshSource) -> Result<CurvedHexMesh, CliError> {
    Ok(match source {
        MeshSource::Generated(spec) => spec.build()?,
        MeshSource::File(path) => read_mesh(path)?,
    })
}
