//! Sequential designs: a fixed rollout of the locally optimal design, the
//! one-step-ahead adaptive optimal design (AOD), and the one-step-ahead
//! relevant-subset design (RSD) that reweights past support points by their
//! observed information.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, Sensitivity};
use crate::design::{adams_round, flod_solve, Design, ExactDesign, GradGrid, SolverOptions};
use crate::distributions::ErrorDist;
use crate::error::{Error, Result};
use crate::estimation::{fit_clusters, fit_theta, ExperimentState, DEFAULT_CLUSTER_TOL};
use crate::information::{weighted_info, RelevantSubset};
use crate::models::{Family, ModelSpec};

/// How the RSD reweighting treats repeated design points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepeatMode {
    /// One weight per cluster of repeated points, from its location fit.
    Clustered,
    /// One weight per observation, from its observed information at the
    /// current parameter estimate.
    #[default]
    NoRepeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Locally optimal design at the true parameter, rounded to `n` up front.
    Flod,
    Aod,
    Rsd {
        mode: RepeatMode,
        /// Replace every observed information by the same value (per
        /// observation). The resulting design path must coincide with AOD.
        equalized: bool,
    },
}

impl Strategy {
    pub fn rsd(mode: RepeatMode) -> Self {
        Strategy::Rsd {
            mode,
            equalized: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Flod => "FLOD",
            Strategy::Aod => "AOD",
            Strategy::Rsd { .. } => "RSD",
        }
    }
}

/// The chosen next design point with the minimum sensitivity found there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub x: f64,
    pub min_phi: f64,
    /// Total observed information behind the reweighting (RSD only).
    pub q: Option<f64>,
}

fn argmin_at(
    model: &ModelSpec,
    criterion: &Criterion,
    theta_hat: &[f64],
    xs: &[f64],
    raw: &[f64],
    grid_n: usize,
) -> Result<(f64, f64)> {
    let at = model.with_theta(&DVector::from_column_slice(theta_hat))?;
    let m = weighted_info(&at, theta_hat, xs, raw);
    let sens = Sensitivity::plain(criterion, &m)?;
    let grid = GradGrid::new(&at, grid_n);
    Ok(grid.argmin(&sens, &at))
}

/// Next point of the adaptive optimal design: the minimizer of the
/// sensitivity of the empirical design at `theta_hat`.
pub fn aod_step(
    model: &ModelSpec,
    criterion: &Criterion,
    state: &ExperimentState,
    theta_hat: &[f64],
    grid_n: usize,
) -> Result<StepChoice> {
    let raw = vec![1.0; state.n()];
    let (x, min_phi) = argmin_at(model, criterion, theta_hat, state.points(), &raw, grid_n)?;
    Ok(StepChoice { x, min_phi, q: None })
}

/// The relevant subset of the current data in the given mode.
pub fn relevant_subset(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    theta_hat: &[f64],
    mode: RepeatMode,
    equalized: bool,
) -> Result<RelevantSubset> {
    let mut sub = match mode {
        RepeatMode::Clustered => RelevantSubset::clustered(state, &fit_clusters(dist, state)?)?,
        RepeatMode::NoRepeat => RelevantSubset::no_repeat(model, dist, state, theta_hat)?,
    };
    if equalized {
        sub.info = match mode {
            RepeatMode::Clustered => state.clusters().iter().map(|c| c.len() as f64).collect(),
            RepeatMode::NoRepeat => vec![1.0; state.n()],
        };
    }
    Ok(sub)
}

/// Next point of the relevant-subset design: the minimizer of the
/// sensitivity of the information-reweighted design at `theta_hat`.
pub fn rsd_step(
    model: &ModelSpec,
    dist: &ErrorDist,
    criterion: &Criterion,
    state: &ExperimentState,
    theta_hat: &[f64],
    mode: RepeatMode,
    equalized: bool,
    grid_n: usize,
) -> Result<StepChoice> {
    let sub = relevant_subset(model, dist, state, theta_hat, mode, equalized)?;
    let raw = sub.raw_weights()?;
    let (x, min_phi) = argmin_at(model, criterion, theta_hat, &sub.points, &raw, grid_n)?;
    Ok(StepChoice {
        x,
        min_phi,
        q: Some(sub.q()),
    })
}

/// Equal-weight starting designs, five observations per point.
pub fn default_init_design(family: Family, criterion: &Criterion) -> ExactDesign {
    let pts = match (family, criterion) {
        (Family::MichaelisMenten, _) => vec![177.83, 2000.0],
        (Family::ExpDecay, _) => vec![70.43, 500.0],
        (Family::Compartmental, Criterion::D) => vec![0.2288, 1.4170, 18.4513],
        (Family::Compartmental, Criterion::C(_)) => vec![0.1829, 2.4639, 8.8542],
    };
    let counts = vec![5; pts.len()];
    ExactDesign::new(pts, counts)
}

/// One observation of an adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based observation index.
    pub j: usize,
    pub x: f64,
    pub y: f64,
    /// Estimate after this observation, if the fit succeeded.
    pub theta: Option<Vec<f64>>,
    pub q: Option<f64>,
    /// Minimum sensitivity at the step that chose `x` (adaptive points only).
    pub min_phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropped {
    /// Sample size at which the run stopped producing estimates.
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRun {
    pub strategy: Strategy,
    pub init_design: ExactDesign,
    pub n_total: usize,
    pub state: ExperimentState,
    pub steps: Vec<StepRecord>,
    pub dropped: Option<Dropped>,
}

impl AdaptiveRun {
    /// Design points in observation order.
    pub fn x_path(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.x).collect()
    }

    /// Estimate after the first `n` observations, when available.
    pub fn theta_at(&self, n: usize) -> Option<&[f64]> {
        self.steps.get(n.checked_sub(1)?)?.theta.as_deref()
    }
}

/// Inputs shared by every run of a study.
#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Model at the true parameter.
    pub model: ModelSpec,
    pub dist: ErrorDist,
    pub criterion: Criterion,
    pub init_design: ExactDesign,
    /// Locally optimal design at the true parameter, for the FLOD strategy;
    /// solved on demand when absent.
    pub flod: Option<Design>,
    /// Starting value for the first fit; defaults to the true parameter.
    pub theta_init: Option<Vec<f64>>,
    pub grid_n: usize,
    pub cluster_tol: f64,
}

impl RunSpec {
    pub fn new(model: ModelSpec, dist: ErrorDist, criterion: Criterion) -> Self {
        let init_design = default_init_design(model.family, &criterion);
        Self {
            model,
            dist,
            criterion,
            init_design,
            flod: None,
            theta_init: None,
            grid_n: 4001,
            cluster_tol: DEFAULT_CLUSTER_TOL,
        }
    }

    pub fn m1(&self) -> usize {
        self.init_design.n()
    }

    fn flod_design(&self) -> Result<Design> {
        match &self.flod {
            Some(d) => Ok(d.clone()),
            None => Ok(flod_solve(&self.model, &self.criterion, &SolverOptions::default())?.design),
        }
    }
}

/// Simulate one experiment of `n_total` observations. Errors are drawn from
/// `rng` in observation order, so runs sharing a seed see the same noise.
///
/// A failed fit ends the run: the record keeps the observations up to that
/// point and notes the sample size in `dropped`.
pub fn run_experiment<R: Rng + ?Sized>(
    spec: &RunSpec,
    strategy: Strategy,
    n_total: usize,
    rng: &mut R,
) -> Result<AdaptiveRun> {
    let p = spec.model.n_params();
    let model = &spec.model;
    let theta_true = model.theta.as_slice();
    let mut state = ExperimentState::new(spec.cluster_tol)?;
    let mut steps = Vec::with_capacity(n_total);
    let observe = |state: &mut ExperimentState, x: f64, rng: &mut R| -> Result<f64> {
        let y = model.eta(x)? + spec.dist.sample_one(rng);
        state.push(x, y);
        Ok(y)
    };
    let mut theta_hat: Vec<f64> = spec.theta_init.clone().unwrap_or_else(|| theta_true.to_vec());

    if strategy == Strategy::Flod {
        let exact = adams_round(&spec.flod_design()?, n_total)?;
        for x in exact.expand() {
            let y = observe(&mut state, x, rng)?;
            steps.push(StepRecord {
                j: state.n(),
                x,
                y,
                theta: None,
                q: None,
                min_phi: None,
            });
        }
        let mut dropped = None;
        match fit_theta(model, &spec.dist, &state, &theta_hat) {
            Ok(f) => steps.last_mut().expect("n_total >= 1").theta = Some(f.theta.as_slice().to_vec()),
            Err(e) => {
                dropped = Some(Dropped {
                    n: n_total,
                    reason: e.to_string(),
                })
            }
        }
        return Ok(AdaptiveRun {
            strategy,
            init_design: exact,
            n_total,
            state,
            steps,
            dropped,
        });
    }

    let m1 = spec.m1();
    if n_total < m1 + p {
        return Err(Error::InvalidParameter(format!(
            "n_total = {n_total} must be at least initial design size + parameter count = {}",
            m1 + p
        )));
    }
    for x in spec.init_design.expand() {
        let y = observe(&mut state, x, rng)?;
        steps.push(StepRecord {
            j: state.n(),
            x,
            y,
            theta: None,
            q: None,
            min_phi: None,
        });
    }
    let mut dropped = None;
    match fit_theta(model, &spec.dist, &state, &theta_hat) {
        Ok(f) => {
            theta_hat = f.theta.as_slice().to_vec();
            steps.last_mut().expect("m1 >= 1").theta = Some(theta_hat.clone());
        }
        Err(e) => {
            dropped = Some(Dropped {
                n: m1,
                reason: e.to_string(),
            })
        }
    }
    while dropped.is_none() && state.n() < n_total {
        let choice = match strategy {
            Strategy::Aod => aod_step(model, &spec.criterion, &state, &theta_hat, spec.grid_n),
            Strategy::Rsd { mode, equalized } => rsd_step(
                model,
                &spec.dist,
                &spec.criterion,
                &state,
                &theta_hat,
                mode,
                equalized,
                spec.grid_n,
            ),
            Strategy::Flod => unreachable!("handled above"),
        };
        let choice = match choice {
            Ok(c) => c,
            Err(e) => {
                dropped = Some(Dropped {
                    n: state.n() + 1,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let y = observe(&mut state, choice.x, rng)?;
        let mut rec = StepRecord {
            j: state.n(),
            x: choice.x,
            y,
            theta: None,
            q: choice.q,
            min_phi: Some(choice.min_phi),
        };
        match fit_theta(model, &spec.dist, &state, &theta_hat) {
            Ok(f) => {
                theta_hat = f.theta.as_slice().to_vec();
                rec.theta = Some(theta_hat.clone());
            }
            Err(e) => {
                dropped = Some(Dropped {
                    n: state.n(),
                    reason: e.to_string(),
                })
            }
        }
        steps.push(rec);
    }
    Ok(AdaptiveRun {
        strategy,
        init_design: spec.init_design.clone(),
        n_total,
        state,
        steps,
        dropped,
    })
}
