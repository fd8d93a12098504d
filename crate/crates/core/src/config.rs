//! TOML run configuration.
//!
//! ```toml
//! [model]
//! family = "michaelis-menten"   # or "exp-decay", "compartmental"
//! theta = [43.95, 236.53]
//! x_hi = 2000.0                 # optional; x_lo defaults to 0
//!
//! [error]
//! family = "cauchy"             # or "exp-power" / "q-gaussian" with `shape`
//! sigma = 1.39
//!
//! [criterion]
//! kind = "D"                    # or "c" with `c = [0, 1]`
//!
//! [study]                       # optional
//! strategies = ["aod", "rsd"]
//! repeat_mode = "no-repeat"
//! n_grid = [13, 20, 30, 40, 50, 60]
//! replicates = 500
//! seed = 1
//!
//! [solver]                      # optional
//! grid_n = 4001
//! cert_tol = 1e-3
//! ```
//!
//! Unknown keys are rejected. Validation reports every problem at once.

use serde::Deserialize;
use thiserror::Error;

use crate::adaptive::{RepeatMode, Strategy};
use crate::criteria::Criterion;
use crate::design::SolverOptions;
use crate::distributions::{DistFamily, ErrorDist};
use crate::models::{DesignSpace, Family, ModelSpec};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    error: RawError,
    criterion: RawCriterion,
    #[serde(default)]
    study: RawStudy,
    #[serde(default)]
    solver: RawSolver,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: String,
    theta: Vec<f64>,
    x_lo: Option<f64>,
    x_hi: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawError {
    family: String,
    sigma: f64,
    shape: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCriterion {
    kind: String,
    c: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    strategies: Option<Vec<String>>,
    repeat_mode: Option<String>,
    n_grid: Option<Vec<usize>>,
    replicates: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    grid_n: Option<usize>,
    merge_tol: Option<f64>,
    prune_tol: Option<f64>,
    cert_tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    /// Strategies compared against the FLOD.
    pub strategies: Vec<Strategy>,
    pub repeat_mode: RepeatMode,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub model: ModelSpec,
    pub dist: ErrorDist,
    pub criterion: Criterion,
    pub study: StudySettings,
    pub solver: SolverOptions,
}

impl Config {
    pub fn sim_config(&self) -> SimConfig {
        let mut sim = SimConfig::new(self.model.clone(), self.dist, self.criterion.clone());
        sim.strategies = self.study.strategies.clone();
        sim.info_mode = self.study.repeat_mode;
        sim.n_grid = self.study.n_grid.clone();
        sim.replicates = self.study.replicates;
        sim.base_seed = self.study.seed;
        sim.grid_n = self.solver.grid_n;
        sim
    }
}

pub fn parse_repeat_mode(s: &str) -> Option<RepeatMode> {
    match s {
        "no-repeat" => Some(RepeatMode::NoRepeat),
        "clustered" => Some(RepeatMode::Clustered),
        _ => None,
    }
}

pub fn parse_dist(family: &str, sigma: f64, shape: Option<f64>) -> std::result::Result<ErrorDist, Vec<String>> {
    let mut errs = Vec::new();
    if !(sigma.is_finite() && sigma > 0.0) {
        errs.push(format!("error.sigma: must be > 0, got {sigma}"));
    }
    let fam = match (family, shape) {
        ("cauchy", None) => Some(DistFamily::Cauchy),
        ("cauchy", Some(_)) => {
            errs.push("error.shape: not used by the cauchy family".to_string());
            None
        }
        ("exp-power", Some(z)) => {
            if !(z.is_finite() && z > 1.0) {
                errs.push(format!("error.shape: exp-power zeta must be > 1, got {z}"));
            }
            Some(DistFamily::ExpPower { zeta: z })
        }
        ("q-gaussian", Some(q)) => {
            if !(q > 1.0 && q < 3.0) {
                errs.push(format!("error.shape: q-gaussian q must lie in the open interval (1, 3), got {q}"));
            }
            Some(DistFamily::QGaussian { q })
        }
        ("exp-power" | "q-gaussian", None) => {
            errs.push(format!("error.shape: required for the {family} family"));
            None
        }
        _ => {
            errs.push(format!(
                "error.family: unknown family {family:?} (expected cauchy, exp-power, q-gaussian)"
            ));
            None
        }
    };
    match fam {
        Some(f) if errs.is_empty() => ErrorDist::new(f, sigma).map_err(|e| vec![format!("error: {e}")]),
        _ => Err(errs),
    }
}

pub fn parse_criterion(kind: &str, c: Option<&[f64]>) -> std::result::Result<Criterion, String> {
    match (kind, c) {
        ("D" | "d", None) => Ok(Criterion::D),
        ("D" | "d", Some(_)) => Err("criterion.c: only used with kind = \"c\"".to_string()),
        ("c" | "C", Some(c)) => Criterion::c(c).map_err(|e| format!("criterion.c: {e}")),
        ("c" | "C", None) => Err("criterion.c: required when kind = \"c\"".to_string()),
        _ => Err(format!("criterion.kind: expected \"D\" or \"c\", got {kind:?}")),
    }
}

pub fn parse_strategy(s: &str, mode: RepeatMode) -> Option<Strategy> {
    match s {
        "flod" => Some(Strategy::Flod),
        "aod" => Some(Strategy::Aod),
        "rsd" => Some(Strategy::rsd(mode)),
        _ => None,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parse and validate a TOML configuration.
pub fn parse_config(text: &str) -> std::result::Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut errs = Vec::new();

    let family = Family::parse(&raw.model.family);
    if family.is_none() {
        errs.push(format!(
            "model.family: unknown family {:?} (expected michaelis-menten, exp-decay, compartmental)",
            raw.model.family
        ));
    }
    let model = family.and_then(|f| {
        let def = f.default_space();
        let space = DesignSpace::new(raw.model.x_lo.unwrap_or(def.lo), raw.model.x_hi.unwrap_or(def.hi));
        let space = space.map_err(|e| errs.push(format!("model.x_lo/x_hi: {e}"))).ok();
        let model = ModelSpec::new(f, &raw.model.theta, space.unwrap_or(def));
        model.map_err(|e| errs.push(format!("model.theta: {e}"))).ok().filter(|_| space.is_some())
    });

    let dist = parse_dist(&raw.error.family, raw.error.sigma, raw.error.shape)
        .map_err(|e| errs.extend(e))
        .ok();

    let criterion = parse_criterion(&raw.criterion.kind, raw.criterion.c.as_deref())
        .map_err(|e| errs.push(e))
        .ok();
    if let (Some(c), Some(m)) = (&criterion, &model) {
        if let Err(e) = c.check_dim(m.n_params()) {
            errs.push(format!("criterion.c: {e}"));
        }
    }

    let mode = match raw.study.repeat_mode.as_deref() {
        None => RepeatMode::NoRepeat,
        Some(s) => parse_repeat_mode(s).unwrap_or_else(|| {
            errs.push(format!("study.repeat_mode: expected \"no-repeat\" or \"clustered\", got {s:?}"));
            RepeatMode::NoRepeat
        }),
    };
    let mut strategies = Vec::new();
    for s in raw.study.strategies.unwrap_or_else(|| vec!["aod".into(), "rsd".into()]) {
        match parse_strategy(&s, mode) {
            // the reference design is always simulated
            Some(Strategy::Flod) => {}
            Some(st) if !strategies.contains(&st) => strategies.push(st),
            Some(_) => errs.push(format!("study.strategies: {s:?} listed twice")),
            None => errs.push(format!("study.strategies: unknown strategy {s:?} (expected flod, aod, rsd)")),
        }
    }
    let replicates = raw.study.replicates.unwrap_or(500);
    if replicates == 0 {
        errs.push("study.replicates: must be >= 1".to_string());
    }
    let n_grid = raw.study.n_grid.unwrap_or_else(|| vec![13, 20, 30, 40, 50, 60]);
    if n_grid.is_empty() {
        errs.push("study.n_grid: must not be empty".to_string());
    }
    if let (Some(m), Some(c)) = (&model, &criterion) {
        let m1 = crate::adaptive::default_init_design(m.family, c).n();
        for &n in &n_grid {
            if n < m1 + m.n_params() {
                errs.push(format!("study.n_grid: entry {n} is below initial design size + parameter count = {}", m1 + m.n_params()));
            }
        }
    }

    let mut solver = SolverOptions::default();
    let s = raw.solver;
    if let Some(g) = s.grid_n {
        if g < 2 {
            errs.push(format!("solver.grid_n: must be >= 2, got {g}"));
        }
        solver.grid_n = g;
    }
    for (name, v, slot) in [
        ("solver.prune_tol", s.prune_tol, &mut solver.prune_tol),
        ("solver.cert_tol", s.cert_tol, &mut solver.cert_tol),
    ] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name}: must be > 0, got {v}"));
            }
            *slot = v;
        }
    }
    if let Some(v) = s.merge_tol {
        if !(v.is_finite() && v >= 0.0) {
            errs.push(format!("solver.merge_tol: must be >= 0, got {v}"));
        }
        solver.merge_tol = Some(v);
    }
    if let Some(v) = s.max_iter {
        if v == 0 {
            errs.push("solver.max_iter: must be >= 1".to_string());
        }
        solver.max_iter = v;
    }

    match (model, dist, criterion) {
        (Some(model), Some(dist), Some(criterion)) if errs.is_empty() => Ok(Config {
            model,
            dist,
            criterion,
            study: StudySettings {
                strategies,
                repeat_mode: mode,
                n_grid,
                replicates,
                seed: raw.study.seed.unwrap_or(1),
            },
            solver,
        }),
        _ => Err(ConfigError::Validation(errs)),
    }
}
