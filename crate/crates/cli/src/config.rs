//! `key = value` configuration files with `[section]` headers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chdg::chmodel::CHParams;

use crate::error::CliError;
use crate::meshspec::MeshSpec;

const KEYS: &[(&str, &[&str])] = &[
    ("mesh", &["spec", "file", "order"]),
    ("model", &["mobility", "k", "eps", "beta", "kappa_sigma", "s0", "k0", "sigma_q", "symmetry"]),
    ("time", &["dt", "t_final", "ledger"]),
    ("initial", &["condition", "alpha", "file"]),
    ("output", &["directory", "snapshot_interval", "energy_interval"]),
    ("convergence", &["study", "alpha", "meshes", "orders", "dts", "t_final"]),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed file: validated section and key names, raw values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
    lines: usize,
    base: PathBuf,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut doc = Document::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            doc.lines = line;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config(line, format!("malformed section header `{body}`")))?
                    .trim()
                    .to_string();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(CliError::config(line, format!("unknown section `[{name}]`")));
                }
                if doc.sections.contains_key(&name) {
                    return Err(CliError::config(line, format!("section `[{name}]` appears twice")));
                }
                doc.sections.insert(name.clone(), (line, BTreeMap::new()));
                current = Some(name);
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| CliError::config(line, format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(section) = &current else {
                return Err(CliError::config(line, format!("key `{key}` outside of any section")));
            };
            let allowed = KEYS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(CliError::config(line, format!("unknown key `{key}` in `[{section}]`")));
            }
            if value.is_empty() {
                return Err(CliError::config(line, format!("key `{key}` has no value")));
            }
            let keys = &mut doc.sections.get_mut(section).expect("section was inserted").1;
            if keys.contains_key(key) {
                return Err(CliError::config(line, format!("key `{key}` set twice")));
            }
            keys.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        Ok(doc)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(0, format!("cannot read `{}`: {e}", path.display())))?;
        let mut doc = Self::parse(&text)?;
        doc.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(doc)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|(_, k)| k.get(key))
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn missing(&self, section: &str, key: &str) -> CliError {
        let line = self.sections.get(section).map(|(l, _)| *l).unwrap_or(self.lines);
        CliError::config(line, format!("missing required key `{key}` in `[{section}]`"))
    }

    pub fn text(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(e.line, format!("invalid value `{}` for `{key}`", e.value))),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        self.get(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    pub fn list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| CliError::config(e.line, format!("invalid entry `{s}` in `{key}`"))))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.entry(section, key).map(|e| e.line).unwrap_or(self.lines)
    }

    fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.text(section, key).map(|p| self.base.join(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Generated(MeshSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Spinodal2d,
    Spinodal3d,
    Mms { alpha: f64 },
    File(PathBuf),
}

impl InitialCondition {
    /// Whether the condition lives in the `(x, y)` plane of a slab.
    pub fn planar(&self) -> bool {
        matches!(self, InitialCondition::Spinodal2d | InitialCondition::Mms { .. })
    }
}

/// Everything `ch run` and `ch check` need.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub order: usize,
    pub params: CHParams,
    pub symmetry: Vec<String>,
    pub dt: f64,
    pub t_final: f64,
    pub ledger: bool,
    pub initial: InitialCondition,
    pub output: PathBuf,
    /// Steps between VTK snapshots; 0 disables them.
    pub snapshot_interval: usize,
    /// Steps between energy rows; the initial row is always written.
    pub energy_interval: usize,
}

fn model_params(doc: &Document) -> Result<CHParams, CliError> {
    let mobility: f64 = doc.require("model", "mobility")?;
    let k: Option<f64> = doc.get("model", "k")?;
    let eps: Option<f64> = doc.get("model", "eps")?;
    let mut p = match (k, eps) {
        (Some(_), Some(_)) => {
            return Err(CliError::config(doc.line_of("model", "eps"), "set either `k` or `eps`, not both"));
        }
        (Some(k), None) => CHParams::new(mobility, k),
        (None, Some(e)) => CHParams::from_eps(mobility, e),
        (None, None) => return Err(doc.missing("model", "k` or `eps")),
    };
    let set = |key: &str, slot: &mut f64| -> Result<(), CliError> {
        if let Some(v) = doc.get("model", key)? {
            *slot = v;
        }
        Ok(())
    };
    set("beta", &mut p.beta)?;
    set("kappa_sigma", &mut p.kappa_sigma)?;
    set("s0", &mut p.s0)?;
    set("k0", &mut p.k0)?;
    set("sigma_q", &mut p.sigma_q)?;
    p.validate().map_err(|e| CliError::config(doc.line_of("model", "mobility"), e.to_string()))?;
    Ok(p)
}

fn mesh_source(doc: &Document) -> Result<MeshSource, CliError> {
    match (doc.text("mesh", "spec"), doc.path("mesh", "file")) {
        (Some(_), Some(_)) => Err(CliError::config(doc.line_of("mesh", "file"), "set either `spec` or `file`, not both")),
        (Some(s), None) => MeshSpec::parse(s)
            .map(MeshSource::Generated)
            .map_err(|e| CliError::config(doc.line_of("mesh", "spec"), e)),
        (None, Some(p)) => Ok(MeshSource::File(p)),
        (None, None) => Err(doc.missing("mesh", "spec` or `file")),
    }
}

fn order(doc: &Document) -> Result<usize, CliError> {
    let n: usize = doc.require("mesh", "order")?;
    if !(1..=10).contains(&n) {
        return Err(CliError::config(doc.line_of("mesh", "order"), format!("order {n} outside 1..=10")));
    }
    Ok(n)
}

fn positive(doc: &Document, section: &str, key: &str, v: f64, allow_zero: bool) -> Result<f64, CliError> {
    if v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0)) {
        Ok(v)
    } else {
        Err(CliError::config(doc.line_of(section, key), format!("`{key}` must be positive, got {v}")))
    }
}

fn initial(doc: &Document) -> Result<InitialCondition, CliError> {
    let name: String = doc.require("initial", "condition")?;
    let line = doc.line_of("initial", "condition");
    let ic = match name.as_str() {
        "spinodal2d" => InitialCondition::Spinodal2d,
        "spinodal3d" => InitialCondition::Spinodal3d,
        "mms" => InitialCondition::Mms { alpha: doc.get("initial", "alpha")?.unwrap_or(1.0) },
        "file" => InitialCondition::File(doc.path("initial", "file").ok_or_else(|| doc.missing("initial", "file"))?),
        other => return Err(CliError::config(line, format!("unknown initial condition `{other}`"))),
    };
    if !matches!(ic, InitialCondition::Mms { .. }) && doc.text("initial", "alpha").is_some() {
        return Err(CliError::config(doc.line_of("initial", "alpha"), "`alpha` only applies to `mms`"));
    }
    Ok(ic)
}

fn symmetry(doc: &Document, ic: &InitialCondition) -> Result<Vec<String>, CliError> {
    Ok(match doc.list::<String>("model", "symmetry")? {
        Some(v) if v.len() == 1 && v[0] == "none" => Vec::new(),
        Some(v) => v,
        None if ic.planar() => vec!["front".into(), "back".into()],
        None => Vec::new(),
    })
}

impl RunConfig {
    pub fn from_document(doc: &Document) -> Result<Self, CliError> {
        let initial = initial(doc)?;
        let dt = positive(doc, "time", "dt", doc.require("time", "dt")?, false)?;
        let t_final = positive(doc, "time", "t_final", doc.require("time", "t_final")?, true)?;
        Ok(Self {
            mesh: mesh_source(doc)?,
            order: order(doc)?,
            params: model_params(doc)?,
            symmetry: symmetry(doc, &initial)?,
            dt,
            t_final,
            ledger: doc.get("time", "ledger")?.unwrap_or(true),
            initial,
            output: doc.path("output", "directory").unwrap_or_else(|| doc.base.join("output")),
            snapshot_interval: doc.get("output", "snapshot_interval")?.unwrap_or(0),
            energy_interval: doc.get::<usize>("output", "energy_interval")?.unwrap_or(1).max(1),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        Self::from_document(&Document::read(path)?)
    }
}

/// What `ch check` needs: a mesh and order; model and time are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub mesh: MeshSource,
    pub order: usize,
    pub params: CHParams,
    pub dt: f64,
}

impl CheckConfig {
    pub fn from_document(doc: &Document) -> Result<Self, CliError> {
        let params = if doc.has_section("model") { model_params(doc)? } else { CHParams::from_eps(1.0, 0.1) };
        let dt = match doc.get("time", "dt")? {
            Some(v) => positive(doc, "time", "dt", v, false)?,
            None => 1e-3,
        };
        Ok(Self { mesh: mesh_source(doc)?, order: order(doc)?, params, dt })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        Self::from_document(&Document::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    P,
    H,
    Time,
}

/// What `ch convergence` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSettings {
    pub study: Study,
    pub config: chdg::verify::ConvergenceConfig,
    pub output: PathBuf,
}

impl ConvergenceSettings {
    pub fn from_document(doc: &Document) -> Result<Self, CliError> {
        let line = doc.line_of("convergence", "study");
        let study = match doc.require::<String>("convergence", "study")?.as_str() {
            "p" => Study::P,
            "h" => Study::H,
            "time" => Study::Time,
            other => return Err(CliError::config(line, format!("unknown study `{other}` (p, h or time)"))),
        };
        let kappa = if doc.has_section("model") { doc.get("model", "kappa_sigma")?.unwrap_or(3.0) } else { 3.0 };
        let mut config = match study {
            Study::P => chdg::verify::ConvergenceConfig::p_study(kappa),
            Study::H => chdg::verify::ConvergenceConfig::h_study(),
            Study::Time => chdg::verify::ConvergenceConfig::time_study(),
        };
        config.kappa_sigma = kappa;
        if doc.has_section("model") {
            let p = model_params(doc)?;
            if p.beta != 0.0 || p.sigma_q != 0.0 {
                return Err(CliError::config(doc.line_of("model", "beta"), "`beta` and `sigma_q` are not used by convergence studies"));
            }
            config.case.mobility = p.mobility;
            config.case.eps = p.k.sqrt();
            config.s0 = p.s0;
            config.k0 = p.k0;
        }
        if let Some(a) = doc.get("convergence", "alpha")? {
            config.case.alpha = a;
        }
        if let Some(v) = doc.list("convergence", "meshes")? {
            config.meshes = v;
        }
        if let Some(v) = doc.list("convergence", "orders")? {
            config.orders = v;
        }
        if let Some(v) = doc.list("convergence", "dts")? {
            config.dts = v;
        }
        if let Some(v) = doc.get("convergence", "t_final")? {
            config.t_final = positive(doc, "convergence", "t_final", v, false)?;
        }
        if config.orders.iter().any(|n| !(1..=10).contains(n)) {
            return Err(CliError::config(doc.line_of("convergence", "orders"), "orders must lie in 1..=10"));
        }
        if config.meshes.iter().any(|&m| m == 0) || config.meshes.is_empty() {
            return Err(CliError::config(doc.line_of("convergence", "meshes"), "meshes must be positive"));
        }
        if config.dts.iter().any(|&d| !(d > 0.0 && d.is_finite())) || config.dts.is_empty() {
            return Err(CliError::config(doc.line_of("convergence", "dts"), "time steps must be positive"));
        }
        Ok(Self { study, config, output: doc.path("output", "directory").unwrap_or_else(|| doc.base.join("output")) })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        Self::from_document(&Document::read(path)?)
    }
}
