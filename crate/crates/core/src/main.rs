//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on bad input, 2 when a numerical procedure
//! fails (no certificate, no convergence, singular information). Failures
//! print a one-line JSON object to standard error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsdesign::adaptive::{run_experiment, RepeatMode, RunSpec, Strategy};
use rsdesign::config::{parse_config, parse_criterion, parse_dist, parse_repeat_mode, parse_strategy, Config, ConfigError};
use rsdesign::criteria::Criterion;
use rsdesign::design::{adams_round, certify, flod_solve, Design, SolverOptions};
use rsdesign::estimation::{cluster, DEFAULT_CLUSTER_TOL};
use rsdesign::information::{info_f, info_i_obs, info_j, info_k, info_m, InfoKind};
use rsdesign::sim::{replicate_rng, run_study};
use rsdesign::{DesignSpace, Error, ErrorDist, Family, ModelSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rsdesign", version, about = "Optimal and adaptive designs for nonlinear regression")]
struct Cli {
    /// Base seed for every random stream (default 1, or the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// michaelis-menten, exp-decay or compartmental.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    xmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    xmax: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct CriterionArgs {
    /// D or c.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cvec: Option<Vec<f64>>,
}

#[derive(Args, Clone, Default)]
struct DistArgs {
    /// cauchy, exp-power or q-gaussian.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// exp-power zeta or q-gaussian q.
    #[arg(long, allow_negative_numbers = true)]
    shape: Option<f64>,
}

#[derive(Args, Clone)]
struct DesignArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    support: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    weights: Option<Vec<f64>>,
    /// CSV with columns x,weight (as written by `flod --out`).
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Locally optimal continuous design.
    Flod {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        criterion: CriterionArgs,
        /// Candidate grid size for the sensitivity search.
        #[arg(long)]
        grid: Option<usize>,
        /// Write the design as CSV (x,weight).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a design against the equivalence theorem.
    Certify {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        criterion: CriterionArgs,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Adams rounding of a continuous design to n observations.
    Round {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        n: usize,
    },
    /// One simulated sequential experiment, one CSV row per observation.
    Adaptive {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        criterion: CriterionArgs,
        #[command(flatten)]
        dist: DistArgs,
        /// flod, aod or rsd.
        #[arg(long, default_value = "rsd")]
        strategy: String,
        /// no-repeat or clustered.
        #[arg(long)]
        repeat_mode: Option<String>,
        #[arg(long, default_value_t = 60)]
        n: usize,
        /// Replicate stream under the base seed.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo efficiency study; needs --config.
    Simulate {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write one SVG chart per metric.
        #[arg(long)]
        svg: bool,
    },
    /// Squared statistical curvature of an error law.
    Curvature {
        #[command(flatten)]
        dist: DistArgs,
    },
    /// Information matrices of a design (M, F) or of data (I, J, K).
    Info {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dist: DistArgs,
        /// M, F, I, J or K.
        #[arg(long, default_value = "M")]
        kind: String,
        #[command(flatten)]
        design: DesignArgs,
        /// Sample size for F.
        #[arg(long)]
        n: Option<usize>,
        /// CSV with columns x,y, for I, J and K (evaluated at --theta).
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

enum CliError {
    Invalid(Vec<String>),
    Config(ConfigError),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(vec![msg.into()])
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Lib(Error::Io(e.to_string()))
}

impl CliError {
    fn report(&self) -> (u8, serde_json::Value) {
        match self {
            CliError::Invalid(v) => (1, json!({"error": "InvalidInput", "messages": v})),
            CliError::Config(ConfigError::Validation(v)) => (1, json!({"error": "ConfigValidation", "messages": v})),
            CliError::Config(e @ ConfigError::Parse { line, column, .. }) => (
                1,
                json!({"error": "ConfigParse", "line": line, "column": column, "message": e.to_string()}),
            ),
            CliError::Lib(e) => {
                let mut v = json!({"error": e.kind(), "message": e.to_string()});
                match e {
                    Error::NotCertified { design, min_phi, argmin_x } => {
                        v["support"] = json!(design.support);
                        v["weights"] = json!(design.weights);
                        v["min_phi"] = json!(min_phi);
                        v["argmin_x"] = json!(argmin_x);
                    }
                    Error::NonConvergence { best, grad_norm } => {
                        v["best"] = json!(best);
                        v["grad_norm"] = json!(grad_norm);
                    }
                    _ => {}
                }
                (if e.is_numeric() { 2 } else { 1 }, v)
            }
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(path: &Option<PathBuf>) -> CliResult<Option<Config>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            Ok(Some(parse_config(&text)?))
        }
    }
}

fn resolve_model(a: &ModelArgs, cfg: Option<&Config>) -> CliResult<ModelSpec> {
    let base = cfg.map(|c| &c.model);
    let family = match (&a.model, base) {
        (Some(s), _) => Family::parse(s).ok_or_else(|| invalid(format!("--model: unknown family {s:?}")))?,
        (None, Some(m)) => m.family,
        (None, None) => return Err(invalid("--model is required (or give --config)")),
    };
    let same = base.filter(|m| m.family == family);
    let theta = match (&a.theta, same) {
        (Some(t), _) => t.clone(),
        (None, Some(m)) => m.theta.as_slice().to_vec(),
        (None, None) => return Err(invalid("--theta is required")),
    };
    let def = same.map_or(family.default_space(), |m| m.space);
    let space = DesignSpace::new(a.xmin.unwrap_or(def.lo), a.xmax.unwrap_or(def.hi))?;
    Ok(ModelSpec::new(family, &theta, space)?)
}

fn resolve_criterion(a: &CriterionArgs, cfg: Option<&Config>, p: usize) -> CliResult<Criterion> {
    let c = match (&a.criterion, cfg) {
        (Some(k), _) => parse_criterion(k, a.cvec.as_deref()).map_err(invalid)?,
        (None, Some(c)) => c.criterion.clone(),
        (None, None) => Criterion::D,
    };
    c.check_dim(p)?;
    Ok(c)
}

fn resolve_dist(a: &DistArgs, cfg: Option<&Config>) -> CliResult<ErrorDist> {
    match (&a.dist, cfg) {
        (Some(f), _) => {
            let sigma = a.sigma.unwrap_or(1.0);
            parse_dist(f, sigma, a.shape).map_err(CliError::Invalid)
        }
        (None, Some(c)) => match a.sigma {
            Some(s) => Ok(c.dist.with_sigma(s)?),
            None => Ok(c.dist),
        },
        (None, None) => Err(invalid("--dist is required (or give --config)")),
    }
}

fn resolve_design(a: &DesignArgs) -> CliResult<Design> {
    if let Some(path) = &a.design {
        let mut rd = csv::Reader::from_path(path).map_err(io_err)?;
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for row in rd.deserialize::<(f64, f64)>() {
            let (x, w) = row.map_err(|e| invalid(format!("--design {}: {e}", path.display())))?;
            support.push(x);
            weights.push(w);
        }
        return Ok(Design::new(support, weights)?);
    }
    match (&a.support, &a.weights) {
        (Some(s), Some(w)) => Ok(Design::new(s.clone(), w.clone())?),
        (Some(s), None) => Ok(Design::uniform(s.clone())?),
        _ => Err(invalid("give --support (and optionally --weights) or --design")),
    }
}

fn solver_options(cfg: Option<&Config>, grid: Option<usize>) -> SolverOptions {
    let mut o = cfg.map(|c| c.solver.clone()).unwrap_or_default();
    if let Some(g) = grid {
        o.grid_n = g;
    }
    o
}

fn print_design(out: &mut impl Write, d: &Design) -> std::io::Result<()> {
    writeln!(out, "{:>14}  {:>8}", "x", "weight")?;
    for (x, w) in d.support.iter().zip(&d.weights) {
        writeln!(out, "{x:>14.6}  {w:>8.6}")?;
    }
    Ok(())
}

fn write_design_csv(path: &PathBuf, d: &Design) -> CliResult<()> {
    let mut wr = csv::Writer::from_path(path).map_err(io_err)?;
    wr.write_record(["x", "weight"]).map_err(io_err)?;
    for (x, w) in d.support.iter().zip(&d.weights) {
        wr.write_record([x.to_string(), w.to_string()]).map_err(io_err)?;
    }
    wr.flush().map_err(io_err)
}

fn print_matrix(out: &mut impl Write, m: &nalgebra::DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>16.8e}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| invalid(format!("--threads: {e}")))?;
    }
    let cfg = load_config(&cli.config)?;
    let cfg = cfg.as_ref();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Flod {
            model,
            criterion,
            grid,
            out: path,
        } => {
            let model = resolve_model(&model, cfg)?;
            let crit = resolve_criterion(&criterion, cfg, model.n_params())?;
            let opts = solver_options(cfg, grid);
            let sol = flod_solve(&model, &crit, &opts)?;
            let cert = certify(&model, &crit, &sol.design, opts.grid_n, opts.cert_tol)?;
            if !cert.pass {
                return Err(Error::NotCertified {
                    design: sol.design,
                    min_phi: cert.min_phi,
                    argmin_x: cert.argmin_x,
                }
                .into());
            }
            let d = sol.design.sorted();
            writeln!(out, "{}-optimal design for {} at theta = {:?}", crit.label(), model.family.name(), model.theta.as_slice()).map_err(io_err)?;
            print_design(&mut out, &d).map_err(io_err)?;
            writeln!(out, "criterion {:.8e}  min sensitivity {:.3e}  iterations {}", sol.psi, cert.min_phi, sol.iterations).map_err(io_err)?;
            if let Some(p) = path {
                write_design_csv(&p, &d)?;
            }
        }
        Command::Certify {
            model,
            criterion,
            design,
            grid,
            tol,
        } => {
            let model = resolve_model(&model, cfg)?;
            let crit = resolve_criterion(&criterion, cfg, model.n_params())?;
            let d = resolve_design(&design)?;
            let opts = solver_options(cfg, grid);
            let cert = certify(&model, &crit, &d, opts.grid_n, tol.unwrap_or(opts.cert_tol))?;
            writeln!(out, "min sensitivity {:.6e} at x = {:.6}", cert.min_phi, cert.argmin_x).map_err(io_err)?;
            for (x, phi) in d.support.iter().zip(&cert.support_phi) {
                writeln!(out, "  support {x:>14.6}  sensitivity {phi:>12.4e}").map_err(io_err)?;
            }
            if !cert.pass {
                return Err(Error::NotCertified {
                    design: d,
                    min_phi: cert.min_phi,
                    argmin_x: cert.argmin_x,
                }
                .into());
            }
            writeln!(out, "certified").map_err(io_err)?;
        }
        Command::Round { design, n } => {
            let d = resolve_design(&design)?;
            let exact = adams_round(&d, n)?;
            writeln!(out, "x,count").map_err(io_err)?;
            for (x, c) in exact.points().iter().zip(&exact.counts) {
                writeln!(out, "{x},{c}").map_err(io_err)?;
            }
        }
        Command::Adaptive {
            model,
            criterion,
            dist,
            strategy,
            repeat_mode,
            n,
            replicate,
            out: path,
        } => {
            let model = resolve_model(&model, cfg)?;
            let crit = resolve_criterion(&criterion, cfg, model.n_params())?;
            let dist = resolve_dist(&dist, cfg)?;
            let mode = match repeat_mode.as_deref() {
                Some(s) => parse_repeat_mode(s).ok_or_else(|| invalid(format!("--repeat-mode: unknown mode {s:?}")))?,
                None => cfg.map_or(RepeatMode::NoRepeat, |c| c.study.repeat_mode),
            };
            let strat: Strategy =
                parse_strategy(&strategy, mode).ok_or_else(|| invalid(format!("--strategy: unknown strategy {strategy:?}")))?;
            let mut spec = RunSpec::new(model, dist, crit);
            spec.grid_n = solver_options(cfg, None).grid_n;
            let run = run_experiment(&spec, strat, n, &mut replicate_rng(cli.seed.or(cfg.map(|c| c.study.seed)).unwrap_or(1), replicate))?;
            let p = spec.model.n_params();
            let mut text = String::from("j,x,y");
            for k in 1..=p {
                text.push_str(&format!(",theta{k}"));
            }
            text.push_str(",q,min_phi\n");
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            for s in &run.steps {
                text.push_str(&format!("{},{},{}", s.j, s.x, s.y));
                for k in 0..p {
                    text.push_str(&format!(",{}", opt(s.theta.as_ref().map(|t| t[k]))));
                }
                text.push_str(&format!(",{},{}\n", opt(s.q), opt(s.min_phi)));
            }
            match path {
                Some(p) => fs::write(p, text).map_err(io_err)?,
                None => out.write_all(text.as_bytes()).map_err(io_err)?,
            }
            if let Some(d) = run.dropped {
                eprintln!("{}", json!({"warning": "ReplicateDropped", "n": d.n, "reason": d.reason}));
            }
        }
        Command::Simulate { out_dir, svg } => {
            let cfg = cfg.ok_or_else(|| invalid("simulate needs --config"))?;
            let mut sim = cfg.sim_config();
            if let Some(seed) = cli.seed {
                sim.base_seed = seed;
            }
            let report = run_study(&sim)?;
            fs::create_dir_all(&out_dir).map_err(io_err)?;
            let file = fs::File::create(out_dir.join("efficiency.csv")).map_err(io_err)?;
            report.write_csv(file)?;
            if svg {
                report.write_svgs(&out_dir)?;
            }
            writeln!(out, "{:>4}  {:<14} {:<5} {:>9} {:>9} {:>5}", "n", "strategy", "metric", "value", "mc_se", "drops").map_err(io_err)?;
            for r in &report.rows {
                writeln!(
                    out,
                    "{:>4}  {:<14} {:<5} {:>9.4} {:>9.4} {:>5}",
                    r.n,
                    r.strategy,
                    r.metric.name(),
                    r.value,
                    r.mc_se,
                    r.drops
                )
                .map_err(io_err)?;
            }
        }
        Command::Curvature { dist } => {
            let d = resolve_dist(&dist, cfg)?;
            writeln!(out, "{:.6}", d.curvature_sq()?).map_err(io_err)?;
        }
        Command::Info {
            model,
            dist,
            kind,
            design,
            n,
            data,
        } => {
            let model = resolve_model(&model, cfg)?;
            let kind = InfoKind::parse(&kind).ok_or_else(|| invalid(format!("--kind: unknown kind {kind:?}")))?;
            let theta = model.theta.as_slice().to_vec();
            let m = match kind {
                InfoKind::M => info_m(&model, &resolve_design(&design)?)?,
                InfoKind::F => {
                    let n = n.ok_or_else(|| invalid("--n is required for F"))?;
                    info_f(&model, &resolve_dist(&dist, cfg)?, &resolve_design(&design)?, n)?
                }
                InfoKind::I | InfoKind::J | InfoKind::K => {
                    let path = data.ok_or_else(|| invalid("--data is required for I, J and K"))?;
                    let mut rd = csv::Reader::from_path(&path).map_err(io_err)?;
                    let (mut xs, mut ys) = (Vec::new(), Vec::new());
                    for row in rd.deserialize::<(f64, f64)>() {
                        let (x, y) = row.map_err(|e| invalid(format!("--data {}: {e}", path.display())))?;
                        xs.push(x);
                        ys.push(y);
                    }
                    let state = cluster(&xs, &ys, DEFAULT_CLUSTER_TOL)?;
                    let d = resolve_dist(&dist, cfg)?;
                    match kind {
                        InfoKind::I => info_i_obs(&model, &d, &state, &theta)?,
                        InfoKind::J => info_j(&model, &d, &state, &theta)?,
                        _ => info_k(&model, &d, &state, &theta)?,
                    }
                }
                other => return Err(invalid(format!("--kind: {other:?} is not available from the command line"))),
            };
            print_matrix(&mut out, &m.matrix).map_err(io_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, payload) = e.report();
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}
