//! Monte-Carlo comparison of the sequential strategies against the fixed
//! locally optimal design.
//!
//! Every replicate draws one error stream that all strategies consume in
//! observation order, so efficiencies are computed on paired samples.
//! Adaptive runs are simulated once to the largest sample size and read at
//! each smaller size, which is exact because a step never looks at the total.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_experiment, AdaptiveRun, RepeatMode, RunSpec, Strategy};
use crate::criteria::Criterion;
use crate::design::{adams_round, flod_solve, Design, SolverOptions};
use crate::distributions::ErrorDist;
use crate::error::{Error, Result};
use crate::estimation::cluster;
use crate::information::{info_j, info_k, min_eigenvalue, weighted_info};
use crate::models::ModelSpec;

/// Error stream of replicate `r`: one ChaCha stream per replicate under a
/// common key.
pub fn replicate_rng(base_seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(r);
    rng
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Model at the true parameter.
    pub model: ModelSpec,
    pub dist: ErrorDist,
    pub criterion: Criterion,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Strategies compared against the FLOD; the FLOD itself is always run.
    pub strategies: Vec<Strategy>,
    /// Which observed-information matrix the RJ metric uses: the per-cluster
    /// hybrid information (`Clustered`) or the per-observation information at
    /// the estimate (`NoRepeat`).
    pub info_mode: RepeatMode,
    pub grid_n: usize,
    pub flod: Option<Design>,
}

impl SimConfig {
    pub fn new(model: ModelSpec, dist: ErrorDist, criterion: Criterion) -> Self {
        Self {
            model,
            dist,
            criterion,
            n_grid: vec![13, 20, 30, 40, 50, 60],
            replicates: 500,
            base_seed: 1,
            strategies: vec![Strategy::Aod, Strategy::rsd(RepeatMode::NoRepeat)],
            info_mode: RepeatMode::NoRepeat,
            grid_n: 4001,
            flod: None,
        }
    }

    fn run_spec(&self) -> RunSpec {
        let mut spec = RunSpec::new(self.model.clone(), self.dist, self.criterion.clone());
        spec.flod = self.flod.clone();
        spec.grid_n = self.grid_n;
        spec
    }

    /// All problems with the configuration, empty when it is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let m1 = self.run_spec().m1();
        let p = self.model.n_params();
        if self.replicates == 0 {
            errs.push("replicates must be >= 1".to_string());
        }
        if self.n_grid.is_empty() {
            errs.push("n_grid must not be empty".to_string());
        }
        for &n in &self.n_grid {
            if n < m1 + p {
                errs.push(format!("n_grid entry {n} is below initial design size + parameter count = {}", m1 + p));
            }
        }
        if let Err(e) = self.criterion.check_dim(p) {
            errs.push(e.to_string());
        }
        if self.grid_n < 2 {
            errs.push("grid_n must be >= 2".to_string());
        }
        errs
    }
}

/// What one replicate of one strategy produced at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Criterion at the normalized information of the realized design, at
    /// the true parameter.
    pub psi_m: f64,
    /// Criterion at the relevant-subset information at the run's own
    /// estimate; `None` when that matrix is not positive definite.
    pub psi_j: Option<f64>,
    pub theta: Vec<f64>,
}

/// Replicate outcome; `None` marks a replicate dropped because the fit failed.
pub type Replicate = Option<Outcome>;

/// A Monte-Carlo ratio with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub mc_se: f64,
    /// Replicates excluded from the denominator strategy.
    pub excluded: usize,
}

fn jackknife_se(full_len: usize, loo: &[f64]) -> f64 {
    if full_len < 2 || loo.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let k = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / k;
    let ss: f64 = loo.iter().map(|v| (v - mean).powi(2)).sum();
    ((k - 1.0) / k * ss).sqrt()
}

/// Ratio of Monte-Carlo means `mean(star) / mean(runs)` over the entries
/// present on each side, with a paired leave-one-replicate-out jackknife.
fn ratio_of_means(star: &[Option<f64>], runs: &[Option<f64>]) -> Result<Estimate> {
    if star.len() != runs.len() || star.is_empty() {
        return Err(Error::InvalidParameter("paired replicate sets must have equal nonzero length".into()));
    }
    let sum = |v: &[Option<f64>]| -> (f64, usize) {
        v.iter().flatten().fold((0.0, 0), |(s, c), x| (s + x, c + 1))
    };
    let (sa, na) = sum(star);
    let (sb, nb) = sum(runs);
    if na == 0 || nb == 0 {
        return Err(Error::SingularInfo);
    }
    let value = (sa / na as f64) / (sb / nb as f64);
    let loo: Vec<f64> = star
        .iter()
        .zip(runs)
        .map(|(a, b)| {
            let (sa, na) = a.map_or((sa, na), |a| (sa - a, na - 1));
            let (sb, nb) = b.map_or((sb, nb), |b| (sb - b, nb - 1));
            (sa / na as f64) / (sb / nb as f64)
        })
        .collect();
    Ok(Estimate {
        value,
        mc_se: jackknife_se(star.len(), &loo),
        excluded: runs.len() - nb,
    })
}

/// Criterion ratio of the realized designs' Fisher information:
/// `Psi(M(design_star)) / Psi(M(design))` at the model's parameter.
pub fn efficiency_rm(criterion: &Criterion, model: &ModelSpec, design_star: &Design, design: &Design) -> Result<f64> {
    Ok(criterion.psi(&design_star.info(model)?)? / criterion.psi(&design.info(model)?)?)
}

/// Paired `mean Psi(M*) / mean Psi(M)` over replicates.
pub fn efficiency_rm_mc(star: &[Replicate], runs: &[Replicate]) -> Result<Estimate> {
    let f = |v: &[Replicate]| v.iter().map(|o| o.as_ref().map(|o| o.psi_m)).collect::<Vec<_>>();
    ratio_of_means(&f(star), &f(runs))
}

/// Paired `E Psi(J*) / E Psi(J)`; replicates whose information is not
/// positive definite are excluded from their own side and counted.
pub fn efficiency_rj(star: &[Replicate], runs: &[Replicate]) -> Result<Estimate> {
    let f = |v: &[Replicate]| v.iter().map(|o| o.as_ref().and_then(|o| o.psi_j)).collect::<Vec<_>>();
    ratio_of_means(&f(star), &f(runs))
}

/// `Psi(MSE^-1)`; errors with `SingularInfo` on a singular MSE matrix.
fn psi_inverse_mse(criterion: &Criterion, mse: &DMatrix<f64>) -> Result<f64> {
    let inv = mse.clone().cholesky().ok_or(Error::SingularInfo)?.inverse();
    criterion.psi(&inv)
}

fn error_outer(theta: &[f64], truth: &[f64]) -> DMatrix<f64> {
    let e = DVector::from_iterator(truth.len(), theta.iter().zip(truth).map(|(a, b)| a - b));
    &e * e.transpose()
}

/// Paired `Psi(MSE*^-1) / Psi(MSE^-1)` where each MSE matrix is the mean of
/// `(theta_hat - theta)(theta_hat - theta)'` over the replicates present.
pub fn efficiency_rmse(
    criterion: &Criterion,
    star: &[Replicate],
    runs: &[Replicate],
    theta_true: &[f64],
) -> Result<Estimate> {
    if star.len() != runs.len() || star.is_empty() {
        return Err(Error::InvalidParameter("paired replicate sets must have equal nonzero length".into()));
    }
    let p = theta_true.len();
    let outers = |v: &[Replicate]| -> Vec<Option<DMatrix<f64>>> {
        v.iter().map(|o| o.as_ref().map(|o| error_outer(&o.theta, theta_true))).collect()
    };
    let (oa, ob) = (outers(star), outers(runs));
    let total = |v: &[Option<DMatrix<f64>>]| {
        v.iter().flatten().fold((DMatrix::zeros(p, p), 0usize), |(s, c), m| (s + m, c + 1))
    };
    let (sa, na) = total(&oa);
    let (sb, nb) = total(&ob);
    if na == 0 || nb == 0 {
        return Err(Error::SingularInfo);
    }
    let ratio = |sa: &DMatrix<f64>, na: usize, sb: &DMatrix<f64>, nb: usize| -> Result<f64> {
        Ok(psi_inverse_mse(criterion, &(sa / na as f64))? / psi_inverse_mse(criterion, &(sb / nb as f64))?)
    };
    let value = ratio(&sa, na, &sb, nb)?;
    let loo: Vec<f64> = oa
        .iter()
        .zip(&ob)
        .map(|(a, b)| {
            let (la, ma) = a.as_ref().map_or((sa.clone(), na), |a| (&sa - a, na - 1));
            let (lb, mb) = b.as_ref().map_or((sb.clone(), nb), |b| (&sb - b, nb - 1));
            ratio(&la, ma, &lb, mb).unwrap_or(f64::NAN)
        })
        .collect();
    Ok(Estimate {
        value,
        mc_se: jackknife_se(star.len(), &loo),
        excluded: runs.len() - nb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "RM")]
    Rm,
    #[serde(rename = "RJ")]
    Rj,
    #[serde(rename = "RMSE")]
    Rmse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rm, Metric::Rj, Metric::Rmse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rm => "RM",
            Metric::Rj => "RJ",
            Metric::Rmse => "RMSE",
        }
    }
}

/// One `efficiency.csv` row. `value` and `mc_se` are NaN when the ratio is
/// not computable (for instance a singular MSE matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub model: String,
    pub dist: String,
    pub criterion: String,
    pub n: usize,
    pub strategy: String,
    pub metric: Metric,
    pub value: f64,
    pub mc_se: f64,
    pub drops: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyReport {
    pub fn get(&self, n: usize, strategy: &str, metric: Metric) -> Option<&EfficiencyRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.strategy == strategy && r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<EfficiencyRow>, _>>()
            .map_err(|e| Error::Io(e.to_string()))?;
        Ok(Self { rows })
    }

    /// One SVG line chart per metric: efficiency against `n` for each
    /// strategy, with the reference level 1 dotted.
    pub fn write_svgs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        use plotters::prelude::*;
        let io = |e: &dyn std::fmt::Display| Error::Io(e.to_string());
        let mut written = Vec::new();
        let Some(first) = self.rows.first() else {
            return Ok(written);
        };
        let stem = format!("{}_{}_{}", first.model, first.dist, first.criterion).replace([';', '(', ')', ' '], "_");
        for metric in Metric::ALL {
            let rows: Vec<&EfficiencyRow> = self.rows.iter().filter(|r| r.metric == metric).collect();
            let mut strategies: Vec<&str> = Vec::new();
            for r in &rows {
                if !strategies.contains(&r.strategy.as_str()) {
                    strategies.push(&r.strategy);
                }
            }
            let finite = rows.iter().map(|r| r.value).filter(|v| v.is_finite());
            let (lo, hi) = finite.fold((1.0f64, 1.0f64), |(a, b), v| (a.min(v), b.max(v)));
            let pad = 0.05 * (hi - lo).max(0.1);
            let n_lo = rows.iter().map(|r| r.n).min().unwrap_or(0) as f64;
            let n_hi = rows.iter().map(|r| r.n).max().unwrap_or(1) as f64;
            let path = dir.join(format!("{stem}_{}.svg", metric.name()));
            {
                let root = SVGBackend::new(&path, (640, 420)).into_drawing_area();
                root.fill(&WHITE).map_err(|e| io(&e))?;
                let mut chart = ChartBuilder::on(&root)
                    .caption(format!("{} efficiency vs n", metric.name()), ("sans-serif", 18))
                    .margin(12)
                    .x_label_area_size(36)
                    .y_label_area_size(48)
                    .build_cartesian_2d(n_lo..n_hi.max(n_lo + 1.0), (lo - pad)..(hi + pad))
                    .map_err(|e| io(&e))?;
                chart
                    .configure_mesh()
                    .x_desc("n")
                    .y_desc(metric.name())
                    .draw()
                    .map_err(|e| io(&e))?;
                chart
                    .draw_series(DashedLineSeries::new(
                        vec![(n_lo, 1.0), (n_hi, 1.0)],
                        2,
                        4,
                        BLACK.stroke_width(1),
                    ))
                    .map_err(|e| io(&e))?;
                for (k, s) in strategies.iter().enumerate() {
                    let pts: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| r.strategy == *s && r.value.is_finite())
                        .map(|r| (r.n as f64, r.value))
                        .collect();
                    let color = Palette99::pick(k).to_rgba();
                    chart
                        .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                        .map_err(|e| io(&e))?
                        .label(s.to_string())
                        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                }
                chart
                    .configure_series_labels()
                    .border_style(BLACK)
                    .background_style(WHITE)
                    .draw()
                    .map_err(|e| io(&e))?;
                root.present().map_err(|e| io(&e))?;
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Positive-definite-or-nothing criterion value.
fn psi_pd(criterion: &Criterion, m: &DMatrix<f64>) -> Option<f64> {
    if !(min_eigenvalue(m) > 0.0) {
        return None;
    }
    criterion.psi(m).ok().filter(|v| v.is_finite() && *v > 0.0)
}

fn outcome(cfg: &SimConfig, xs: &[f64], ys: &[f64], theta: &[f64]) -> Result<Outcome> {
    let model = &cfg.model;
    let m = weighted_info(model, model.theta.as_slice(), xs, &vec![1.0; xs.len()]);
    let psi_m = cfg.criterion.psi(&m)?;
    let state = cluster(xs, ys, crate::estimation::DEFAULT_CLUSTER_TOL)?;
    let j = match cfg.info_mode {
        RepeatMode::Clustered => info_j(model, &cfg.dist, &state, theta),
        RepeatMode::NoRepeat => info_k(model, &cfg.dist, &state, theta),
    };
    let psi_j = j.ok().and_then(|j| psi_pd(&cfg.criterion, &j.matrix));
    Ok(Outcome {
        psi_m,
        psi_j,
        theta: theta.to_vec(),
    })
}

fn prefix_outcomes(cfg: &SimConfig, run: &AdaptiveRun) -> Result<Vec<Replicate>> {
    let (xs, ys) = (run.state.points(), run.state.responses());
    cfg.n_grid
        .iter()
        .map(|&n| match run.theta_at(n) {
            Some(th) if n <= xs.len() => outcome(cfg, &xs[..n], &ys[..n], th).map(Some),
            _ => Ok(None),
        })
        .collect()
}

/// All outcomes of one replicate: `[strategy][n]`, FLOD first.
fn simulate_replicate(cfg: &SimConfig, spec: &RunSpec, r: u64) -> Result<Vec<Vec<Replicate>>> {
    let mut out = Vec::with_capacity(cfg.strategies.len() + 1);
    let mut flod = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let run = run_experiment(spec, Strategy::Flod, n, &mut replicate_rng(cfg.base_seed, r))?;
        flod.push(match run.theta_at(n) {
            Some(th) => Some(outcome(cfg, run.state.points(), run.state.responses(), th)?),
            None => None,
        });
    }
    out.push(flod);
    let n_max = *cfg.n_grid.iter().max().expect("validated nonempty");
    for &s in &cfg.strategies {
        let run = run_experiment(spec, s, n_max, &mut replicate_rng(cfg.base_seed, r))?;
        out.push(prefix_outcomes(cfg, &run)?);
    }
    Ok(out)
}

/// Raw replicate outcomes, `[strategy][n][replicate]` with the FLOD first.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<Vec<Vec<Replicate>>>> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidParameter(errs.join("; ")));
    }
    let mut spec = cfg.run_spec();
    if spec.flod.is_none() {
        spec.flod = Some(flod_solve(&cfg.model, &cfg.criterion, &SolverOptions::default())?.design);
    }
    let per_rep: Vec<Vec<Vec<Replicate>>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(cfg, &spec, r))
        .collect::<Result<_>>()?;
    let ns = cfg.n_grid.len();
    let mut out = vec![vec![Vec::with_capacity(cfg.replicates); ns]; cfg.strategies.len() + 1];
    for rep in per_rep {
        for (s, by_n) in rep.into_iter().enumerate() {
            for (k, o) in by_n.into_iter().enumerate() {
                out[s][k].push(o);
            }
        }
    }
    Ok(out)
}

fn strategy_label(s: &Strategy) -> String {
    match s {
        Strategy::Rsd {
            mode: RepeatMode::Clustered,
            equalized: false,
        } => "RSD-clustered".to_string(),
        Strategy::Rsd { equalized: true, .. } => "RSD-equalized".to_string(),
        s => s.name().to_string(),
    }
}

/// Run the study and summarize each strategy against the FLOD.
pub fn run_study(cfg: &SimConfig) -> Result<EfficiencyReport> {
    let raw = simulate(cfg)?;
    let mut labels = vec!["FLOD".to_string()];
    labels.extend(cfg.strategies.iter().map(strategy_label));
    let theta_true = cfg.model.theta.as_slice();
    let mut rows = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let star = &raw[0][k];
        for (s, label) in labels.iter().enumerate() {
            let runs = &raw[s][k];
            let fit_drops = runs.iter().filter(|o| o.is_none()).count();
            for metric in Metric::ALL {
                // the reference against itself is 1 even when a ratio is not
                // computable (e.g. a rank-deficient MSE from one replicate)
                let est = match metric {
                    _ if s == 0 => Ok(Estimate {
                        value: 1.0,
                        mc_se: 0.0,
                        excluded: fit_drops,
                    }),
                    Metric::Rm => efficiency_rm_mc(star, runs),
                    Metric::Rj => efficiency_rj(star, runs),
                    Metric::Rmse => efficiency_rmse(&cfg.criterion, star, runs, theta_true),
                };
                let (value, mc_se, drops) = match est {
                    Ok(e) => (e.value, e.mc_se, e.excluded),
                    Err(_) => (f64::NAN, f64::NAN, fit_drops),
                };
                rows.push(EfficiencyRow {
                    model: cfg.model.family.name().to_string(),
                    dist: cfg.dist.family().name().to_string(),
                    criterion: cfg.criterion.label(),
                    n,
                    strategy: label.clone(),
                    metric,
                    value,
                    mc_se,
                    drops,
                });
            }
        }
    }
    Ok(EfficiencyReport { rows })
}

/// Realized FLOD design rounded to `n`, as a continuous design.
pub fn rounded_flod(design: &Design, n: usize) -> Result<Design> {
    let exact = adams_round(design, n)?;
    let support = exact.points();
    let weights = exact.counts.iter().map(|&c| c as f64 / n as f64).collect();
    Design::new(support, weights)
}
