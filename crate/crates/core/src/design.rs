//! Continuous and exact designs, the first-order (vertex direction) solver for
//! locally optimal designs, equivalence-theorem certification, and Adams
//! apportionment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, Sensitivity};
use crate::error::{Error, Result};
use crate::models::{grad_at, ModelSpec};

/// Continuous design: support points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Design {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "design needs matching nonempty support and weights, got {} and {}",
                support.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!("negative design weight in {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("design weights sum to {total}, not 1")));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite support point".into()));
        }
        Ok(Self { support, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(support: Vec<f64>) -> Result<Self> {
        let d = support.len();
        Self::new(support, vec![1.0 / d.max(1) as f64; d])
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Normalized information `sum_i w_i g(x_i) g(x_i)'` at the model's parameter.
    pub fn info(&self, model: &ModelSpec) -> Result<DMatrix<f64>> {
        let p = model.n_params();
        let mut m = DMatrix::zeros(p, p);
        for (&x, &w) in self.support.iter().zip(&self.weights) {
            let g = model.grad_eta(x)?;
            m.ger(w, &g, &g, 1.0);
        }
        Ok(m)
    }

    /// Support points sorted ascending together with their weights.
    pub fn sorted(&self) -> Design {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.support[a].total_cmp(&self.support[b]));
        Design {
            support: idx.iter().map(|&i| self.support[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// Exact design: support points with integer replication counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDesign {
    pub support: Vec<ordered::F64>,
    pub counts: Vec<usize>,
}

pub(crate) mod ordered {
    use serde::{Deserialize, Serialize};

    /// `f64` wrapper with total equality, used so exact designs compare as `Eq`.
    #[derive(Debug, Clone, Copy, Serialize, Deserialize)]
    #[serde(transparent)]
    pub struct F64(pub f64);

    impl PartialEq for F64 {
        fn eq(&self, other: &Self) -> bool {
            self.0.to_bits() == other.0.to_bits()
        }
    }
    impl Eq for F64 {}
}

impl ExactDesign {
    pub fn new(support: Vec<f64>, counts: Vec<usize>) -> Self {
        Self {
            support: support.into_iter().map(ordered::F64).collect(),
            counts,
        }
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn points(&self) -> Vec<f64> {
        self.support.iter().map(|x| x.0).collect()
    }

    /// Every observation location, each support point repeated by its count.
    pub fn expand(&self) -> Vec<f64> {
        self.support
            .iter()
            .zip(&self.counts)
            .flat_map(|(x, &c)| std::iter::repeat_n(x.0, c))
            .collect()
    }
}

/// Adams (ceiling divisor) apportionment of `n` observations.
///
/// Every positively weighted point receives one observation; remaining
/// observations go one at a time to the point maximizing `w_i / c_i`, ties to
/// the larger weight and then the smaller index. Zero-weight points get zero.
pub fn adams_round(design: &Design, n: usize) -> Result<ExactDesign> {
    let w = &design.weights;
    let active = w.iter().filter(|v| **v > 0.0).count();
    if n < active {
        return Err(Error::InfeasibleRounding { n, d: active });
    }
    let mut counts: Vec<usize> = w.iter().map(|v| usize::from(*v > 0.0)).collect();
    for _ in active..n {
        let mut best: Option<usize> = None;
        for i in 0..w.len() {
            if w[i] <= 0.0 {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    // compare w_i / c_i against w_b / c_b without division
                    let lhs = w[i] * counts[b] as f64;
                    let rhs = w[b] * counts[i] as f64;
                    if lhs > rhs || (lhs == rhs && w[i] > w[b]) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        counts[best.expect("at least one positive weight")] += 1;
    }
    Ok(ExactDesign::new(design.support.clone(), counts))
}

/// Precomputed mean-function gradients on a uniform grid over the design space.
#[derive(Debug, Clone)]
pub(crate) struct GradGrid {
    xs: Vec<f64>,
    grads: Vec<f64>,
    p: usize,
}

const GOLDEN_STEPS: usize = 30;

impl GradGrid {
    pub(crate) fn new(model: &ModelSpec, n: usize) -> Self {
        let p = model.n_params();
        let xs = model.space.grid(n.max(2));
        let th = model.theta.as_slice();
        let mut grads = Vec::with_capacity(xs.len() * p);
        for &x in &xs {
            grads.extend_from_slice(grad_at(model.family, th, x).as_slice());
        }
        Self { xs, grads, p }
    }

    /// Minimizer of the sensitivity over the design space: best grid point,
    /// refined by golden-section search between its neighbours. The grid point
    /// is kept unless the refinement is strictly better; grid ties go to the
    /// smaller `x`.
    pub(crate) fn argmin(&self, sens: &Sensitivity, model: &ModelSpec) -> (f64, f64) {
        let p = self.p;
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for (i, g) in self.grads.chunks_exact(p).enumerate() {
            let v = sens.eval(g);
            if v < best_val {
                best_val = v;
                best = i;
            }
        }
        let th = model.theta.as_slice();
        let f = |x: f64| sens.eval(grad_at(model.family, th, x).as_slice());
        let lo = self.xs[best.saturating_sub(1)];
        let hi = self.xs[(best + 1).min(self.xs.len() - 1)];
        let (x, v) = golden_min(f, lo, hi, GOLDEN_STEPS);
        if v < best_val {
            (x, v)
        } else {
            (self.xs[best], best_val)
        }
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, steps: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..steps {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// A fixed matrix added to the design information before applying the
/// criterion: the objective becomes `Psi(mix * M(design) + (1 - mix) * background)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub mix: f64,
    pub background: DMatrix<f64>,
}

impl Augmentation {
    fn total(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m * self.mix + &self.background * (1.0 - self.mix)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub grid_n: usize,
    /// Support points closer than this are merged; `None` means
    /// `1e-3 * width` of the design space.
    pub merge_tol: Option<f64>,
    pub prune_tol: f64,
    pub cert_tol: f64,
    pub max_iter: usize,
    pub start: Option<Design>,
    pub augmentation: Option<Augmentation>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid_n: 4001,
            merge_tol: None,
            prune_tol: 1e-4,
            cert_tol: 1e-3,
            max_iter: 50_000,
            start: None,
            augmentation: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub design: Design,
    pub psi: f64,
    pub min_phi: f64,
    pub argmin_x: f64,
    pub iterations: usize,
    /// Criterion value after every accepted update, starting with the initial design.
    pub psi_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub min_phi: f64,
    pub argmin_x: f64,
    /// Sensitivity at each support point, in design order.
    pub support_phi: Vec<f64>,
    pub pass: bool,
}

struct Evaluator<'a> {
    model: &'a ModelSpec,
    criterion: &'a Criterion,
    aug: Option<&'a Augmentation>,
}

impl Evaluator<'_> {
    fn objective(&self, m: &DMatrix<f64>) -> Result<f64> {
        match self.aug {
            Some(a) => self.criterion.psi(&a.total(m)),
            None => self.criterion.psi(m),
        }
    }

    fn sensitivity(&self, m: &DMatrix<f64>) -> Result<Sensitivity> {
        match self.aug {
            Some(a) => Sensitivity::new(self.criterion, &a.total(m), m),
            None => Sensitivity::plain(self.criterion, m),
        }
    }

    fn certify(&self, grid: &GradGrid, design: &Design, tol: f64, weight_floor: f64) -> Result<Certificate> {
        let m = design.info(self.model)?;
        let sens = self.sensitivity(&m)?;
        let (mut argmin_x, mut min_phi) = grid.argmin(&sens, self.model);
        let th = self.model.theta.as_slice();
        let support_phi: Vec<f64> = design
            .support
            .iter()
            .map(|&x| sens.eval(grad_at(self.model.family, th, x).as_slice()))
            .collect();
        // a support point between grid nodes can sit below the grid minimum
        for (&x, &v) in design.support.iter().zip(&support_phi) {
            if v < min_phi {
                min_phi = v;
                argmin_x = x;
            }
        }
        let pass = min_phi >= -tol
            && support_phi
                .iter()
                .zip(&design.weights)
                .all(|(v, &w)| w < weight_floor || v.abs() <= tol);
        Ok(Certificate {
            min_phi,
            argmin_x,
            support_phi,
            pass,
        })
    }
}

/// Check the equivalence-theorem conditions for `design` on a `grid_n` grid.
pub fn certify(
    model: &ModelSpec,
    criterion: &Criterion,
    design: &Design,
    grid_n: usize,
    cert_tol: f64,
) -> Result<Certificate> {
    criterion.check_dim(model.n_params())?;
    let grid = GradGrid::new(model, grid_n);
    Evaluator { model, criterion, aug: None }.certify(&grid, design, cert_tol, 0.0)
}

/// Certificate for an augmented objective `Psi(mix * M + (1 - mix) * B)`.
pub fn certify_augmented(
    model: &ModelSpec,
    criterion: &Criterion,
    design: &Design,
    aug: &Augmentation,
    grid_n: usize,
    cert_tol: f64,
) -> Result<Certificate> {
    criterion.check_dim(model.n_params())?;
    let grid = GradGrid::new(model, grid_n);
    Evaluator { model, criterion, aug: Some(aug) }.certify(&grid, design, cert_tol, 0.0)
}

fn default_start(model: &ModelSpec) -> Design {
    let pts = model.space.grid(model.n_params() + 1);
    Design::uniform(pts).expect("nonempty grid")
}

/// Locally optimal design at the model's parameter by the first-order algorithm.
///
/// Each iteration moves mass `1 / (k + 1)` towards the minimizer of the
/// sensitivity, where `k` starts at the number of parameters plus one. If a
/// full step does not lower the criterion the step is halved until it does.
/// When halving finds no descent, the global gap is met but a support point
/// is not, or half the iteration budget is spent, the
/// solver switches to the best of: the scheduled step with and without
/// merging, an exact line search in the same direction, and an away step off
/// the support point with the largest sensitivity. The criterion never
/// increases. Stops once the design certifies at `cert_tol`.
pub fn flod_solve(model: &ModelSpec, criterion: &Criterion, opts: &SolverOptions) -> Result<Solution> {
    let p = model.n_params();
    criterion.check_dim(p)?;
    let ev = Evaluator {
        model,
        criterion,
        aug: opts.augmentation.as_ref(),
    };
    let grid = GradGrid::new(model, opts.grid_n);
    let merge_tol = opts.merge_tol.unwrap_or(1e-3 * model.space.width());
    let mut design = match &opts.start {
        Some(d) => d.clone(),
        None => default_start(model),
    };
    for &x in &design.support {
        if !model.space.contains(x) {
            return Err(Error::Domain {
                x,
                lo: model.space.lo,
                hi: model.space.hi,
            });
        }
    }
    let mut psi = ev.objective(&design.info(model)?)?;
    let mut history = vec![psi];
    let mut last = ev.certify(&grid, &design, opts.cert_tol, opts.prune_tol)?;
    let mut robust = false;
    for (it, k) in (0..opts.max_iter).zip(p + 1..) {
        if last.pass {
            break;
        }
        let alpha = 1.0 / (k as f64 + 1.0);
        // a met global gap leaves only stale support points, which need away steps
        robust |= it >= opts.max_iter / 2 || last.min_phi >= -opts.cert_tol;
        let x_new = last.argmin_x;
        let mut best = None;
        if !robust {
            best = scheduled_step(&ev, psi, |a| step(&design, x_new, a, merge_tol, opts.prune_tol), alpha);
            robust = best.is_none();
        }
        if robust {
            for tol in [merge_tol, 0.0] {
                // unmerged steps only when merging blocks every descent
                if best.is_some() {
                    break;
                }
                let towards = |a: f64| step(&design, x_new, a, tol, opts.prune_tol);
                if let Some((cand, _)) = scheduled_step(&ev, psi, towards, alpha) {
                    offer(&mut best, &ev, psi, cand);
                }
                // exact step: the criterion is convex along the segment
                let (a, _) = golden_min(|a| objective_or_inf(&ev, &towards(a)), 0.0, 1.0 - 1e-9, LINE_SEARCH_STEPS);
                offer(&mut best, &ev, psi, towards(a));
            }
            if let Some(i) = worst_support(&last).filter(|_| design.len() >= 2) {
                let w = design.weights[i];
                let a_max = w / (1.0 - w);
                let away = |a: f64| away_step(&design, i, a, a_max);
                let (a, _) = golden_min(|a| objective_or_inf(&ev, &away(a)), 0.0, a_max, LINE_SEARCH_STEPS);
                offer(&mut best, &ev, psi, away(a));
                offer(&mut best, &ev, psi, away(a_max));
            }
        }
        let Some((cand, v)) = best else {
            // no descent available at working precision
            break;
        };
        design = cand;
        psi = v;
        history.push(psi);
        last = ev.certify(&grid, &design, opts.cert_tol, opts.prune_tol)?;
    }
    if last.pass {
        let iterations = history.len() - 1;
        let (design, psi, last) = tidy(design, psi, last, &ev, &grid, opts, &mut history)?;
        return Ok(Solution {
            design: design.sorted(),
            psi,
            min_phi: last.min_phi,
            argmin_x: last.argmin_x,
            iterations,
            psi_history: history,
        });
    }
    Err(Error::NotCertified {
        design: design.sorted(),
        min_phi: last.min_phi,
        argmin_x: last.argmin_x,
    })
}

/// Weight below which a certified support point is treated as residue of the
/// iteration rather than part of the optimum.
const RESIDUE_WEIGHT: f64 = 1e-3;

/// Remove residual low-weight support points from a certified design, one at
/// a time, as long as the criterion does not increase and the design still
/// certifies. The freed mass goes either to all points proportionally or to
/// the nearest remaining point, whichever gives the lower criterion.
fn tidy(
    mut design: Design,
    mut psi: f64,
    mut cert: Certificate,
    ev: &Evaluator<'_>,
    grid: &GradGrid,
    opts: &SolverOptions,
    history: &mut Vec<f64>,
) -> Result<(Design, f64, Certificate)> {
    loop {
        let mut order: Vec<usize> = (0..design.len())
            .filter(|&i| design.weights[i] < RESIDUE_WEIGHT)
            .collect();
        order.sort_by(|&a, &b| design.weights[a].total_cmp(&design.weights[b]));
        let mut improved = false;
        for i in order {
            if design.len() < 2 {
                break;
            }
            let best = removal_candidates(&design, i)
                .into_iter()
                .filter_map(|d| {
                    let m = d.info(ev.model).ok()?;
                    let v = ev.objective(&m).ok()?;
                    (v <= psi).then_some((d, v))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((d, v)) = best {
                let c = ev.certify(grid, &d, opts.cert_tol, opts.prune_tol)?;
                if c.pass {
                    design = d;
                    psi = v;
                    cert = c;
                    history.push(psi);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            return Ok((design, psi, cert));
        }
    }
}

fn removal_candidates(design: &Design, i: usize) -> Vec<Design> {
    let w = design.weights[i];
    let rest: Vec<usize> = (0..design.len()).filter(|&j| j != i).collect();
    let proportional = Design {
        support: rest.iter().map(|&j| design.support[j]).collect(),
        weights: rest.iter().map(|&j| design.weights[j] / (1.0 - w)).collect(),
    };
    let nearest = rest
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let da = (design.support[a] - design.support[i]).abs();
            let db = (design.support[b] - design.support[i]).abs();
            da.total_cmp(&db)
        })
        .expect("at least two points");
    let shifted = Design {
        support: proportional.support.clone(),
        weights: rest
            .iter()
            .map(|&j| design.weights[j] + if j == nearest { w } else { 0.0 })
            .collect(),
    };
    vec![proportional, shifted]
}

const LINE_SEARCH_STEPS: usize = 40;

/// Keep `cand` if it does not raise the criterion and beats the current best.
fn offer(best: &mut Option<(Design, f64)>, ev: &Evaluator<'_>, psi: f64, cand: Design) {
    let v = objective_or_inf(ev, &cand);
    if v <= psi && best.as_ref().is_none_or(|b| v < b.1) {
        *best = Some((cand, v));
    }
}

/// Scheduled step `towards(alpha)`, halved until the criterion does not rise.
fn scheduled_step(
    ev: &Evaluator<'_>,
    psi: f64,
    towards: impl Fn(f64) -> Design,
    alpha: f64,
) -> Option<(Design, f64)> {
    let mut a = alpha;
    for _ in 0..40 {
        let cand = towards(a);
        let v = objective_or_inf(ev, &cand);
        if v <= psi {
            return Some((cand, v));
        }
        a *= 0.5;
    }
    None
}

fn objective_or_inf(ev: &Evaluator<'_>, d: &Design) -> f64 {
    d.info(ev.model).and_then(|m| ev.objective(&m)).unwrap_or(f64::INFINITY)
}

/// Support point with the largest positive sensitivity: moving mass off it
/// is a descent direction.
fn worst_support(cert: &Certificate) -> Option<usize> {
    cert.support_phi
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// `(1 + alpha) * design - alpha * delta(x_i)` for `0 <= alpha <= alpha_max`,
/// where `alpha_max = w_i / (1 - w_i)` removes the point entirely.
fn away_step(design: &Design, i: usize, alpha: f64, alpha_max: f64) -> Design {
    if alpha >= alpha_max {
        let keep = 1.0 - design.weights[i];
        let rest = (0..design.len()).filter(|&j| j != i);
        return Design {
            support: rest.clone().map(|j| design.support[j]).collect(),
            weights: rest.map(|j| design.weights[j] / keep).collect(),
        };
    }
    let mut d = design.clone();
    for (j, w) in d.weights.iter_mut().enumerate() {
        *w *= 1.0 + alpha;
        if j == i {
            *w -= alpha;
        }
    }
    d
}

/// `(1 - alpha) * design + alpha * delta(x)`. Support points within
/// `merge_tol` of `x` are absorbed into it, then weights below `prune_tol` are
/// dropped.
fn step(design: &Design, x: f64, alpha: f64, merge_tol: f64, prune_tol: f64) -> Design {
    let mut support = vec![x];
    let mut weights = vec![alpha];
    for (&s, &w) in design.support.iter().zip(&design.weights) {
        if (s - x).abs() <= merge_tol {
            weights[0] += w * (1.0 - alpha);
        } else {
            support.push(s);
            weights.push(w * (1.0 - alpha));
        }
    }
    let keep: Vec<usize> = (0..support.len()).filter(|&i| weights[i] >= prune_tol).collect();
    let total: f64 = keep.iter().map(|&i| weights[i]).sum();
    Design {
        support: keep.iter().map(|&i| support[i]).collect(),
        weights: keep.iter().map(|&i| weights[i] / total).collect(),
    }
}
