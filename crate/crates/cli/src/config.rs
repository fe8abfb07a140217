//! Experiment configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use augflow::fields::{BickleyJet, BickleyParams, DoubleGyre, RotatingInterval, VectorField};
use augflow::grid::{AugmentedGrid, BoxPartition};
use augflow::spectral::{EigsOptions, Mode};
use augflow::{Complex64, SliceSampling};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration problem with the line it refers to (1-based, 0 if unknown).
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: usize,
    pub msg: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "{}:{}:{}: {}", self.path.display(), self.line, self.column, self.msg)
        } else {
            write!(f, "{}: {}", self.path.display(), self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    DoubleGyre {
        #[serde(default = "gyre_amplitude")]
        amplitude: f64,
        #[serde(default = "gyre_alpha")]
        alpha: f64,
        #[serde(default = "gyre_omega")]
        omega: f64,
    },
    BickleyJet {
        #[serde(default)]
        params: BickleyParams,
    },
    RotatingInterval,
}

fn gyre_amplitude() -> f64 {
    0.25
}
fn gyre_alpha() -> f64 {
    0.25
}
fn gyre_omega() -> f64 {
    2.0 * std::f64::consts::PI
}

impl FieldSpec {
    pub fn build(&self) -> augflow::Result<Box<dyn VectorField>> {
        Ok(match self {
            FieldSpec::DoubleGyre { amplitude, alpha, omega } => Box::new(DoubleGyre::new(*amplitude, *alpha, *omega)?),
            FieldSpec::BickleyJet { params } => Box::new(BickleyJet::new(params.clone())?),
            FieldSpec::RotatingInterval => Box::new(RotatingInterval::default()),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Boxes per axis.
    pub counts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    Ulam {
        n_t: usize,
        #[serde(default)]
        sampling: SliceSampling,
    },
    Hybrid {
        m: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigsSpec {
    pub k: usize,
    pub mode: Mode,
    /// `[re, im]`
    pub shift: Option<[f64; 2]>,
    pub sigma_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Base eigenpair for the companion scan.
    pub companion_base: Option<usize>,
    /// Eigenvectors to export; all when absent.
    pub vectors: Option<Vec<usize>>,
}

impl Default for EigsSpec {
    fn default() -> Self {
        Self {
            k: 6,
            mode: Mode::LargestReal,
            shift: None,
            sigma_max: -1.0,
            tol: 1e-8,
            max_iter: 300,
            seed: 7,
            companion_base: None,
            vectors: None,
        }
    }
}

impl EigsSpec {
    pub fn options(&self) -> EigsOptions {
        let mut o = EigsOptions::new(self.k, self.mode);
        o.shift = self.shift.map(|[re, im]| Complex64::new(re, im));
        o.sigma_max = self.sigma_max;
        o.tol = self.tol;
        o.max_iter = self.max_iter;
        o.seed = self.seed;
        o
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSpec {
    pub indices: Vec<usize>,
    #[serde(default = "zero_phase")]
    pub phases: Vec<f64>,
    pub times: Vec<f64>,
    #[serde(default)]
    pub level: Option<f64>,
}

fn zero_phase() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSpec {
    /// Eigenpair defining the family.
    pub index: usize,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default = "escape_n")]
    pub n: usize,
    #[serde(default = "escape_runs")]
    pub runs: usize,
    /// Defaults to the time-slice width.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub s: f64,
    pub t: f64,
    #[serde(default = "one")]
    pub seed: u64,
}

fn escape_n() -> usize {
    50_000
}
fn escape_runs() -> usize {
    5
}
fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluxSpec {
    /// Cumulative and augmented outflow through an analytic moving boundary.
    Boundary {
        family: BoundarySpec,
        #[serde(default = "panels")]
        space_panels: usize,
        #[serde(default = "panels")]
        time_panels: usize,
        #[serde(default = "nodes")]
        nodes: usize,
    },
    /// Flux out of an eigenvector sign family read off the Ulam generator.
    BoxSets {
        index: usize,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        level: Option<f64>,
        #[serde(default = "yes")]
        plus: bool,
    },
}

fn panels() -> usize {
    16
}
fn nodes() -> usize {
    8
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// `[0.3 + 0.2 sin t, 0.7 + 0.2 sin t]`
    RotatingInterval,
    /// `[0.3 + 0.3 sin t, 0.7 + 0.3 sin t]`
    AdvectedInterval,
    /// Circle around `centre + amplitude sin(2 pi t / tau)`.
    Circle {
        centre: [f64; 2],
        #[serde(default)]
        amplitude: [f64; 2],
        radius: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "ppb")]
    pub points_per_box: usize,
    pub h: f64,
    #[serde(default)]
    pub s: f64,
    pub t: f64,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default = "compare_k")]
    pub k: usize,
    #[serde(default)]
    pub write_matrix: bool,
    /// Also compute generator eigenvalues for the comparison table.
    #[serde(default = "yes")]
    pub generator: bool,
}

fn ppb() -> usize {
    2500
}
fn compare_k() -> usize {
    6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub field: FieldSpec,
    pub grid: GridSpec,
    pub scheme: SchemeSpec,
    pub eps: f64,
    #[serde(default = "quad")]
    pub quadrature: usize,
    #[serde(default)]
    pub eigs: EigsSpec,
    #[serde(default)]
    pub extract: Option<ExtractSpec>,
    #[serde(default)]
    pub escape: Option<EscapeSpec>,
    #[serde(default)]
    pub flux: Option<FluxSpec>,
    #[serde(default)]
    pub ulam_compare: Option<CompareSpec>,
    /// Worker threads; 0 = all cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn quad() -> usize {
    4
}

/// Parsed configuration with its source path and hash.
#[derive(Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub hash: String,
}

/// Line and column of the first occurrence of `"key"`, searching after the
/// first occurrence of each parent key in turn.
fn locate(text: &str, keys: &[&str]) -> (usize, usize) {
    let (mut from, mut found) = (0, None);
    for k in keys {
        match text[from..].find(&format!("\"{k}\"")) {
            Some(p) => {
                from += p;
                found = Some(from);
            }
            None => break,
        }
    }
    let Some(at) = found else { return (0, 0) };
    let line = text[..at].matches('\n').count() + 1;
    let column = at - text[..at].rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let err = |line, column, msg: String| ConfigError { path: path.to_path_buf(), line, column, msg };
    let text = std::fs::read_to_string(path).map_err(|e| err(0, 0, format!("cannot read config: {e}")))?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| err(e.line(), e.column(), e.to_string()))?;
    if let Err((keys, msg)) = validate(&config) {
        let (line, column) = locate(&text, &keys);
        return Err(err(line, column, msg));
    }
    Ok(Loaded { config, path: path.to_path_buf(), hash: config_hash(text.as_bytes()) })
}

type Invalid = (Vec<&'static str>, String);

/// Semantic checks serde cannot express. Errors name the offending key path.
pub fn validate(c: &ExperimentConfig) -> Result<(), Invalid> {
    let bad = |keys: &[&'static str], msg: String| Err((keys.to_vec(), msg));
    let field = c.field.build().map_err(|e| (vec!["field"], e.to_string()))?;
    let dim = field.dim();
    if c.grid.counts.len() != dim {
        return bad(&["grid", "counts"], format!("grid.counts has {} entries but the field is {dim}-dimensional", c.grid.counts.len()));
    }
    if c.grid.counts.contains(&0) {
        return bad(&["grid", "counts"], "grid.counts entries must be >= 1".into());
    }
    match c.scheme {
        SchemeSpec::Ulam { n_t, .. } if n_t == 0 => return bad(&["scheme", "n_t"], "scheme.n_t must be >= 1".into()),
        SchemeSpec::Hybrid { m } if m == 0 || m % 2 == 0 => {
            return bad(&["scheme", "m"], format!("scheme.m must be odd, got {m}"));
        }
        _ => {}
    }
    if !(c.eps.is_finite() && c.eps >= 0.0) {
        return bad(&["eps"], format!("eps must be finite and >= 0, got {}", c.eps));
    }
    if c.quadrature == 0 {
        return bad(&["quadrature"], "quadrature must be >= 1".into());
    }
    let e = &c.eigs;
    if e.k == 0 {
        return bad(&["eigs", "k"], "eigs.k must be >= 1".into());
    }
    if e.mode == Mode::NearestShift && e.shift.is_none() {
        return bad(&["eigs", "mode"], "nearest_shift mode needs eigs.shift".into());
    }
    if e.sigma_max >= 0.0 {
        return bad(&["eigs", "sigma_max"], "eigs.sigma_max must be negative".into());
    }
    if !(e.tol > 0.0) {
        return bad(&["eigs", "tol"], "eigs.tol must be positive".into());
    }
    if let Some(b) = e.companion_base {
        if b >= e.k {
            return bad(&["eigs", "companion_base"], format!("eigs.companion_base {b} is not below k = {}", e.k));
        }
    }
    if let Some(v) = &e.vectors {
        if let Some(i) = v.iter().find(|&&i| i >= e.k) {
            return bad(&["eigs", "vectors"], format!("eigs.vectors index {i} is not below k = {}", e.k));
        }
    }
    if let Some(x) = &c.extract {
        if let Some(i) = x.indices.iter().find(|&&i| i >= e.k) {
            return bad(&["extract", "indices"], format!("extract index {i} is not below eigs.k = {}", e.k));
        }
        if x.times.is_empty() {
            return bad(&["extract", "times"], "extract.times must not be empty".into());
        }
    }
    if let Some(s) = &c.escape {
        if s.index >= e.k {
            return bad(&["escape", "index"], format!("escape.index {} is not below eigs.k = {}", s.index, e.k));
        }
        if s.n == 0 || s.runs == 0 {
            return bad(&["escape", "n"], "escape.n and escape.runs must be >= 1".into());
        }
        if !(s.t > s.s) {
            return bad(&["escape", "t"], "escape.t must exceed escape.s".into());
        }
        if let Some(h) = s.h {
            if !(h > 0.0) {
                return bad(&["escape", "h"], "escape.h must be positive".into());
            }
        }
    }
    if let Some(f) = &c.flux {
        match f {
            FluxSpec::BoxSets { index, .. } => {
                if *index >= e.k {
                    return bad(&["flux", "index"], format!("flux.index {index} is not below eigs.k = {}", e.k));
                }
                if !matches!(c.scheme, SchemeSpec::Ulam { .. }) {
                    return bad(&["flux", "kind"], "box_sets flux needs the ulam scheme".into());
                }
            }
            FluxSpec::Boundary { family, .. } => {
                let need = match family {
                    BoundarySpec::Circle { .. } => 2,
                    _ => 1,
                };
                if need != dim {
                    return bad(&["flux", "family"], format!("boundary family is {need}-dimensional but the field is {dim}-dimensional"));
                }
            }
        }
    }
    if let Some(u) = &c.ulam_compare {
        if u.points_per_box == 0 || !(u.h > 0.0) || !(u.t > u.s) || u.k == 0 {
            return bad(&["ulam_compare"], "ulam_compare needs points_per_box >= 1, h > 0, t > s and k >= 1".into());
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn grid(&self, field: &dyn VectorField) -> augflow::Result<AugmentedGrid> {
        let part = BoxPartition::new(field.domain().clone(), self.grid.counts.clone())?;
        match self.scheme {
            SchemeSpec::Ulam { n_t, .. } => AugmentedGrid::ulam(part, n_t, field.period()),
            SchemeSpec::Hybrid { m } => AugmentedGrid::collocation(part, m, field.period()),
        }
    }

    pub fn apply_seed_override(&mut self, seed: u64) {
        self.eigs.seed = seed;
        if let Some(e) = &mut self.escape {
            e.seed = seed;
        }
        if let Some(u) = &mut self.ulam_compare {
            u.seed = seed;
        }
    }
}
