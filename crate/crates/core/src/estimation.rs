//! Maximum-likelihood fitting: per-support-point location estimates and the
//! full parameter vector, plus the bookkeeping that groups repeated design
//! points.

use nalgebra::{DMatrix, DVector};

use crate::distributions::ErrorDist;
use crate::error::{Error, Result};
use crate::models::{eta_at, grad_at, hess_at, ModelSpec};

/// Observations that share one support point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Running mean of the member design points.
    pub representative: f64,
    /// Indices into the experiment's observation list, in arrival order.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Design points and responses observed so far, grouped by support point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentState {
    points: Vec<f64>,
    responses: Vec<f64>,
    clusters: Vec<Cluster>,
    cluster_tol: f64,
}

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-9;

impl ExperimentState {
    pub fn new(cluster_tol: f64) -> Result<Self> {
        if !(cluster_tol >= 0.0 && cluster_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cluster_tol must be finite and >= 0, got {cluster_tol}"
            )));
        }
        Ok(Self {
            points: Vec::new(),
            responses: Vec::new(),
            clusters: Vec::new(),
            cluster_tol,
        })
    }

    /// Append one observation. It joins the cluster with the nearest
    /// representative within `cluster_tol` (ties to the lower representative)
    /// or founds a new one.
    pub fn push(&mut self, x: f64, y: f64) {
        let idx = self.points.len();
        self.points.push(x);
        self.responses.push(y);
        let mut best: Option<(usize, f64)> = None;
        for (c, cl) in self.clusters.iter().enumerate() {
            let dist = (cl.representative - x).abs();
            if dist > self.cluster_tol {
                continue;
            }
            best = match best {
                Some((b, bd))
                    if bd < dist
                        || (bd == dist
                            && self.clusters[b].representative <= cl.representative) =>
                {
                    Some((b, bd))
                }
                _ => Some((c, dist)),
            };
        }
        match best {
            Some((c, _)) => {
                let cl = &mut self.clusters[c];
                cl.members.push(idx);
                cl.representative += (x - cl.representative) / cl.members.len() as f64;
            }
            None => self.clusters.push(Cluster {
                representative: x,
                members: vec![idx],
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster_tol(&self) -> f64 {
        self.cluster_tol
    }

    /// Responses of cluster `c` in arrival order.
    pub fn cluster_responses(&self, c: usize) -> Vec<f64> {
        self.clusters[c].members.iter().map(|&i| self.responses[i]).collect()
    }
}

/// Group `(x, y)` pairs left to right; see [`ExperimentState::push`].
pub fn cluster(points: &[f64], responses: &[f64], cluster_tol: f64) -> Result<ExperimentState> {
    if points.len() != responses.len() {
        return Err(Error::InvalidParameter(format!(
            "{} design points but {} responses",
            points.len(),
            responses.len()
        )));
    }
    let mut st = ExperimentState::new(cluster_tol)?;
    for (&x, &y) in points.iter().zip(responses) {
        st.push(x, y);
    }
    Ok(st)
}

/// Location MLE for the responses at one support point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub eta_hat: f64,
    /// Observed information `-sum_k l''(y_k - eta_hat)`.
    pub obs_info: f64,
    /// Residual configuration `y - eta_hat`.
    pub config: Vec<f64>,
    pub log_lik: f64,
    /// Set when distinct local maxima tie in log-likelihood; `eta_hat` is the
    /// lowest of the tied maximizers.
    pub multimodal: bool,
}

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-8;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct LocalMax {
    eta: f64,
    log_lik: f64,
    grad: f64,
}

fn location_terms(dist: &ErrorDist, y: &[f64], eta: f64) -> (f64, f64, f64) {
    let mut ll = 0.0;
    let mut g = 0.0;
    let mut h = 0.0;
    for &v in y {
        let d = dist.derivs(v - eta);
        ll += d[0];
        g -= d[1];
        h += d[2];
    }
    (ll, g, h)
}

fn climb_location(dist: &ErrorDist, y: &[f64], start: f64) -> LocalMax {
    let mut eta = start;
    let (mut ll, mut g, mut h) = location_terms(dist, y, eta);
    for _ in 0..MAX_ITER {
        if g.abs() < GRAD_TOL {
            break;
        }
        let mut step = if h < 0.0 {
            -g / h
        } else {
            // not locally concave: move uphill by one scale unit
            g.signum() * dist.sigma()
        };
        let mut moved = false;
        for _ in 0..80 {
            let (l2, g2, h2) = location_terms(dist, y, eta + step);
            if l2 >= ll {
                eta += step;
                ll = l2;
                g = g2;
                h = h2;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.abs() < STEP_TOL {
            break;
        }
    }
    // one extra Newton step so the estimate is accurate well below the
    // gradient tolerance
    if h < 0.0 && g != 0.0 {
        let cand = eta - g / h;
        let (l2, g2, _) = location_terms(dist, y, cand);
        if g2.abs() < g.abs() {
            eta = cand;
            ll = l2;
            g = g2;
        }
    }
    LocalMax { eta, log_lik: ll, grad: g }
}

/// Location MLE by damped Newton from seven robust starts (median and median
/// plus or minus 1, 2 and 4 MADs); the highest log-likelihood wins.
pub fn fit_location(dist: &ErrorDist, y: &[f64]) -> Result<ClusterFit> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("fit_location needs at least one response".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite response".into()));
    }
    let mut sorted = y.to_vec();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    let mut mad = median(&mut dev);
    if mad == 0.0 {
        mad = dist.sigma();
    }
    let starts = [0.0, -1.0, 1.0, -2.0, 2.0, -4.0, 4.0].map(|k| med + k * mad);
    let maxima: Vec<LocalMax> = starts.iter().map(|&s| climb_location(dist, y, s)).collect();
    let best = maxima
        .iter()
        .max_by(|a, b| a.log_lik.total_cmp(&b.log_lik).then(b.eta.total_cmp(&a.eta)))
        .expect("seven starts");
    let n = y.len() as f64;
    if best.grad.abs() > 1e-8 * n.max(1.0) {
        return Err(Error::NonConvergence {
            best: vec![best.eta],
            grad_norm: best.grad.abs(),
        });
    }
    let tie = 1e-9 * (1.0 + best.log_lik.abs());
    let sep = 1e-6 * dist.sigma();
    let multimodal = maxima
        .iter()
        .any(|m| (m.eta - best.eta).abs() > sep && best.log_lik - m.log_lik <= tie && m.grad.abs() <= 1e-8 * n);
    let eta_hat = best.eta;
    let obs_info = -y.iter().map(|v| dist.derivs(v - eta_hat)[2]).sum::<f64>();
    Ok(ClusterFit {
        eta_hat,
        obs_info,
        config: y.iter().map(|v| v - eta_hat).collect(),
        log_lik: best.log_lik,
        multimodal,
    })
}

/// Fit every cluster of the experiment.
pub fn fit_clusters(dist: &ErrorDist, state: &ExperimentState) -> Result<Vec<ClusterFit>> {
    (0..state.clusters().len())
        .map(|c| fit_location(dist, &state.cluster_responses(c)))
        .collect()
}

/// Result of the full-parameter maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub theta: DVector<f64>,
    pub log_lik: f64,
    pub grad_norm: f64,
}

/// Log-likelihood, its gradient and the observed information at `theta`.
pub(crate) fn likelihood_terms(
    model: &ModelSpec,
    dist: &ErrorDist,
    xs: &[f64],
    ys: &[f64],
    theta: &[f64],
    with_hessian: bool,
) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
    let p = model.n_params();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = with_hessian.then(|| DMatrix::zeros(p, p));
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - eta_at(model.family, theta, x);
        let d = dist.derivs(r);
        let g = grad_at(model.family, theta, x);
        ll += d[0];
        grad.axpy(-d[1], &g, 1.0);
        if let Some(m) = info.as_mut() {
            m.ger(-d[2], &g, &g, 1.0);
            *m += hess_at(model.family, theta, x) * d[1];
        }
    }
    (ll, grad, info)
}

fn fisher_scoring(model: &ModelSpec, xs: &[f64], theta: &[f64], mu: f64) -> DMatrix<f64> {
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for &x in xs {
        let g = grad_at(model.family, theta, x);
        m.ger(mu, &g, &g, 1.0);
    }
    m
}

fn climb_theta(
    model: &ModelSpec,
    dist: &ErrorDist,
    xs: &[f64],
    ys: &[f64],
    start: &[f64],
    mu: &mut Option<f64>,
) -> Result<ThetaFit> {
    let family = model.family;
    let mut th = DVector::from_column_slice(start);
    let (mut ll, mut grad, mut info) = likelihood_terms(model, dist, xs, ys, th.as_slice(), true);
    for _ in 0..MAX_ITER {
        if grad.norm() < GRAD_TOL {
            break;
        }
        let info_m = info.take().expect("hessian requested");
        let dir = match info_m.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let mu = match mu {
                    Some(v) => *v,
                    None => *mu.insert(dist.unit_info()?),
                };
                let fs = fisher_scoring(model, xs, th.as_slice(), mu);
                match fs.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &th + &dir * t;
            if family.validate_theta(cand.as_slice()).is_ok() {
                let (l2, g2, i2) = likelihood_terms(model, dist, xs, ys, cand.as_slice(), true);
                if l2.is_finite() && l2 >= ll + 1e-4 * t * slope {
                    next = Some((cand, l2, g2, i2));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, l2, g2, i2)) = next else { break };
        let step = (&cand - &th).amax();
        th = cand;
        ll = l2;
        grad = g2;
        info = i2;
        if step < STEP_TOL * (1.0 + th.amax()) {
            break;
        }
    }
    Ok(ThetaFit {
        grad_norm: grad.norm(),
        theta: th,
        log_lik: ll,
    })
}

/// Sign patterns of the deterministic +-10% restarts around `init`.
const JITTER: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, -1.0]];

/// Full-parameter MLE by damped Newton on the observed information, with
/// Fisher scoring where that is not positive definite, started from `init`
/// and four deterministic +-10% perturbations of it.
pub fn fit_theta(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    init: &[f64],
) -> Result<ThetaFit> {
    let p = model.n_params();
    if state.n() < p {
        return Err(Error::InvalidParameter(format!(
            "need at least {p} observations to fit {p} parameters, have {}",
            state.n()
        )));
    }
    model.family.validate_theta(init)?;
    let xs = state.points();
    let ys = state.responses();
    let mut mu = None;
    let mut starts = vec![init.to_vec()];
    for signs in JITTER {
        let s: Vec<f64> = init.iter().zip(signs).map(|(t, sg)| t * (1.0 + 0.1 * sg)).collect();
        if model.family.validate_theta(&s).is_ok() {
            starts.push(s);
        }
    }
    let mut best: Option<ThetaFit> = None;
    for s in &starts {
        let fit = climb_theta(model, dist, xs, ys, s, &mut mu)?;
        if best.as_ref().is_none_or(|b| fit.log_lik > b.log_lik) {
            best = Some(fit);
        }
    }
    let best = best.expect("init is always a start");
    let tol = 1e-6 * state.n() as f64;
    if !(best.grad_norm <= tol) {
        return Err(Error::NonConvergence {
            best: best.theta.as_slice().to_vec(),
            grad_norm: best.grad_norm,
        });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DesignSpace, Family};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cauchy() -> ErrorDist {
        ErrorDist::cauchy(1.0).unwrap()
    }

    #[test]
    fn cluster_examples() {
        let s = cluster(&[1.0, 1.0, 2.0], &[0.0; 3], 0.0).unwrap();
        assert_eq!(s.clusters().len(), 2);
        assert_eq!(s.clusters()[0].members, vec![0, 1]);
        let s = cluster(&[1.0, 1.3, 2.0], &[0.0; 3], 0.5).unwrap();
        assert_eq!(s.clusters().len(), 2);
        assert!((s.clusters()[0].representative - 1.15).abs() < 1e-15);
        assert_eq!(s.clusters()[1].members, vec![2]);
        assert!(ExperimentState::new(-1.0).is_err());
        assert!(cluster(&[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn nearest_cluster_wins_and_ties_go_low() {
        let s = cluster(&[0.0, 2.0, 1.0, 1.8], &[0.0; 4], 1.0).unwrap();
        // 1.0 is equidistant from 0.0 and 2.0 and joins the lower one
        assert_eq!(s.clusters()[0].members, vec![0, 2]);
        assert_eq!(s.clusters()[1].members, vec![1, 3]);
    }

    proptest! {
        #[test]
        fn zero_tolerance_counts_distinct_values(raw in proptest::collection::vec(0u8..12, 1..60)) {
            let xs: Vec<f64> = raw.iter().map(|v| *v as f64 * 0.25).collect();
            let s = cluster(&xs, &vec![0.0; xs.len()], 0.0).unwrap();
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assert_eq!(s.clusters().len(), distinct.len());
            prop_assert_eq!(s.clusters().iter().map(Cluster::len).sum::<usize>(), xs.len());
        }
    }

    #[test]
    fn location_examples() {
        let f = fit_location(&cauchy(), &[-1.0, 1.0]).unwrap();
        assert!(f.eta_hat.abs() < 1e-12);
        for d in [cauchy(), ErrorDist::exp_power(4.0, 2.0).unwrap(), ErrorDist::q_gaussian(1.5, 0.3).unwrap()] {
            let f = fit_location(&d, &[3.5; 4]).unwrap();
            assert_eq!(f.eta_hat, 3.5);
            assert!(f.config.iter().all(|a| *a == 0.0));
        }
        assert!(fit_location(&cauchy(), &[]).is_err());
    }

    #[test]
    fn location_matches_grid_search() {
        let y = [0.0, 1.0, 5.0];
        let d = cauchy();
        let ll = |e: f64| y.iter().map(|v| d.logpdf(v - e)).sum::<f64>();
        // grid over [-10, 15] at step 1e-3, then refine around the best cell at 1e-6
        let coarse = (0..=25_000).map(|i| -10.0 + i as f64 * 1e-3);
        let c = coarse.max_by(|a, b| ll(*a).total_cmp(&ll(*b))).unwrap();
        let fine = (0..=2000).map(|i| c - 1e-3 + i as f64 * 1e-6);
        let oracle = fine.max_by(|a, b| ll(*a).total_cmp(&ll(*b))).unwrap();
        let f = fit_location(&d, &y).unwrap();
        assert!((f.eta_hat - oracle).abs() < 2e-6, "{} vs {oracle}", f.eta_hat);
        let score: f64 = y.iter().map(|v| d.derivs(v - f.eta_hat)[1]).sum();
        assert!(score.abs() <= 1e-8 * 3.0);
    }

    #[test]
    fn symmetric_bimodal_configuration_is_flagged() {
        // far-apart pair: two equal maxima near each observation
        let f = fit_location(&cauchy(), &[-5.0, 5.0]).unwrap();
        assert!(f.multimodal);
        assert!(f.obs_info > 0.0);
        assert!((f.eta_hat.abs() - 4.898979485566356).abs() < 1e-8, "{}", f.eta_hat);
    }

    proptest! {
        #[test]
        fn location_is_equivariant(
            raw in proptest::collection::vec(-3.0f64..3.0, 1..8),
            c in -50.0f64..50.0,
        ) {
            let d = ErrorDist::cauchy(0.7).unwrap();
            let a = fit_location(&d, &raw).unwrap();
            let shifted: Vec<f64> = raw.iter().map(|v| v + c).collect();
            let b = fit_location(&d, &shifted).unwrap();
            if !a.multimodal {
                prop_assert!((b.eta_hat - a.eta_hat - c).abs() < 1e-8);
                prop_assert!((b.obs_info - a.obs_info).abs() < 1e-8 * (1.0 + a.obs_info.abs()));
                for (x, y) in a.config.iter().zip(&b.config) {
                    prop_assert!((x - y).abs() < 1e-8);
                }
            }
        }
    }

    fn mm() -> ModelSpec {
        ModelSpec::new(Family::MichaelisMenten, &[43.95, 236.53], DesignSpace::new(0.0, 2000.0).unwrap())
            .unwrap()
    }

    #[test]
    fn noiseless_data_is_fit_exactly() {
        let model = mm();
        let xs = [50.0, 191.285, 800.0, 2000.0];
        let ys: Vec<f64> = xs.iter().map(|&x| model.eta(x).unwrap()).collect();
        let st = cluster(&xs, &ys, 0.0).unwrap();
        let fit = fit_theta(&model, &cauchy(), &st, &[40.0, 200.0]).unwrap();
        assert!((fit.theta[0] - 43.95).abs() < 1e-8 * 43.95);
        assert!((fit.theta[1] - 236.53).abs() < 1e-8 * 236.53);

        let comp = ModelSpec::new(Family::Compartmental, &[21.8, 0.059, 4.29], DesignSpace::new(0.0, 48.0).unwrap())
            .unwrap();
        let xs = [0.2288, 1.417, 18.45, 0.5, 6.0];
        let ys: Vec<f64> = xs.iter().map(|&x| comp.eta(x).unwrap()).collect();
        let st = cluster(&xs, &ys, 0.0).unwrap();
        let fit = fit_theta(&comp, &ErrorDist::q_gaussian(1.5, 0.5).unwrap(), &st, &[20.0, 0.06, 4.0]).unwrap();
        for (a, b) in fit.theta.iter().zip([21.8, 0.059, 4.29]) {
            assert!((a - b).abs() < 1e-8 * b, "{:?}", fit.theta);
        }
    }

    #[test]
    fn fit_theta_rejects_bad_inputs() {
        let st = cluster(&[100.0], &[10.0], 0.0).unwrap();
        assert!(fit_theta(&mm(), &cauchy(), &st, &[43.95, 236.53]).is_err());
        let st = cluster(&[100.0, 200.0], &[10.0, 12.0], 0.0).unwrap();
        assert!(fit_theta(&mm(), &cauchy(), &st, &[-1.0, 236.53]).is_err());
    }

    #[test]
    fn fit_theta_is_consistent_under_cauchy_noise() {
        let model = mm();
        let d = ErrorDist::cauchy(1.39).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        for _ in 0..200 {
            let mut st = ExperimentState::new(0.0).unwrap();
            for i in 0..60 {
                let x = if i % 2 == 0 { 191.285 } else { 2000.0 };
                st.push(x, model.eta(x).unwrap() + d.sample_one(&mut rng));
            }
            if let Ok(f) = fit_theta(&model, &d, &st, &[43.95, 236.53]) {
                t1.push(f.theta[0]);
                t2.push(f.theta[1]);
            }
        }
        assert!(t1.len() >= 190);
        let m1 = median(&mut t1);
        let m2 = median(&mut t2);
        assert!((m1 / 43.95 - 1.0).abs() < 0.02, "{m1}");
        assert!((m2 / 236.53 - 1.0).abs() < 0.02, "{m2}");
    }
}
