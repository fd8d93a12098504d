//! Information matrices: normalized and sample Fisher information, observed
//! information, the hybrid matrix built from per-support-point observed
//! informations, its no-repeat counterpart, the one-step look-ahead forms and
//! a quadrature oracle for the conditional information given the ancillary
//! configuration.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::distributions::ErrorDist;
use crate::error::{Error, Result};
use crate::estimation::{fit_clusters, ClusterFit, ExperimentState};
use crate::models::{eta_at, grad_at, hess_at, ModelSpec};
use crate::quad::{integrate_real_line, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InfoKind {
    /// Observed information.
    I,
    /// Fisher information in the sample.
    F,
    /// Normalized Fisher information of a design.
    M,
    /// Hybrid information from per-cluster location fits.
    J,
    /// Observed-information weights at the model fit, no repeats required.
    K,
    /// Look-ahead hybrid information.
    That,
    /// Look-ahead information on the no-repeat path.
    S,
    /// Mixture matrix of the relevant-subset sensitivity.
    R,
    /// Conditional information given the configuration, by quadrature.
    HOracle,
}

impl InfoKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "I" | "i" => InfoKind::I,
            "F" | "f" => InfoKind::F,
            "M" | "m" => InfoKind::M,
            "J" | "j" => InfoKind::J,
            "K" | "k" => InfoKind::K,
            "That" | "that" => InfoKind::That,
            "S" | "s" => InfoKind::S,
            "R" | "r" => InfoKind::R,
            "H" | "h" => InfoKind::HOracle,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub matrix: DMatrix<f64>,
    pub kind: InfoKind,
    /// True when the matrix is per unit observation (`M`, `R`).
    pub normalized: bool,
}

impl InfoMatrix {
    fn new(matrix: DMatrix<f64>, kind: InfoKind) -> Self {
        let normalized = matches!(kind, InfoKind::M | InfoKind::R);
        Self {
            matrix,
            kind,
            normalized,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `sum_k r_k g_k g_k' / sum_k r_k` over design points `xs` with raw weights `r`.
///
/// The AOD and RSD steps both go through this function so that equal raw
/// weights give bit-identical matrices.
pub(crate) fn weighted_info(model: &ModelSpec, theta: &[f64], xs: &[f64], r: &[f64]) -> DMatrix<f64> {
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    let total: f64 = r.iter().sum();
    for (&x, &w) in xs.iter().zip(r) {
        let g = grad_at(model.family, theta, x);
        m.ger(w, &g, &g, 1.0);
    }
    m / total
}

/// Normalized information `sum_i w_i g_i g_i'` of a continuous design.
pub fn info_m(model: &ModelSpec, design: &Design) -> Result<InfoMatrix> {
    Ok(InfoMatrix::new(design.info(model)?, InfoKind::M))
}

/// Sample Fisher information `n * mu * M`.
pub fn info_f(model: &ModelSpec, dist: &ErrorDist, design: &Design, n: usize) -> Result<InfoMatrix> {
    let m = design.info(model)?;
    let mu = dist.unit_info()?;
    Ok(InfoMatrix::new(m * (n as f64 * mu), InfoKind::F))
}

fn check_theta(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    model.family.validate_theta(theta)
}

/// Observed information: the negative Hessian of the log-likelihood at `theta`.
pub fn info_i_obs(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    theta: &[f64],
) -> Result<InfoMatrix> {
    check_theta(model, theta)?;
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (&x, &y) in state.points().iter().zip(state.responses()) {
        let d = dist.derivs(y - eta_at(model.family, theta, x));
        let g = grad_at(model.family, theta, x);
        // i_y = -l''(r); the score in eta is -l'(r)
        m.ger(-d[2], &g, &g, 1.0);
        m += hess_at(model.family, theta, x) * d[1];
    }
    Ok(InfoMatrix::new(m, InfoKind::I))
}

/// Hybrid information from already fitted clusters.
pub fn info_j_from_fits(
    model: &ModelSpec,
    state: &ExperimentState,
    fits: &[ClusterFit],
    theta: &[f64],
) -> Result<InfoMatrix> {
    check_theta(model, theta)?;
    let reps: Vec<f64> = state.clusters().iter().map(|c| c.representative).collect();
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (&x, f) in reps.iter().zip(fits) {
        let g = grad_at(model.family, theta, x);
        m.ger(f.obs_info, &g, &g, 1.0);
    }
    Ok(InfoMatrix::new(m, InfoKind::J))
}

/// Hybrid information `sum_i i_a_i g_i g_i'`, gradients at `theta` and
/// observed informations at each cluster's own location estimate.
pub fn info_j(model: &ModelSpec, dist: &ErrorDist, state: &ExperimentState, theta: &[f64]) -> Result<InfoMatrix> {
    let fits = fit_clusters(dist, state)?;
    info_j_from_fits(model, state, &fits, theta)
}

/// `sum_k i_y_k(eta_k(theta)) g_k g_k'` over individual observations. May be
/// indefinite.
pub fn info_k(model: &ModelSpec, dist: &ErrorDist, state: &ExperimentState, theta: &[f64]) -> Result<InfoMatrix> {
    check_theta(model, theta)?;
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (&x, &y) in state.points().iter().zip(state.responses()) {
        let d = dist.derivs(y - eta_at(model.family, theta, x));
        let g = grad_at(model.family, theta, x);
        m.ger(-d[2], &g, &g, 1.0);
    }
    Ok(InfoMatrix::new(m, InfoKind::K))
}

/// Look-ahead information `mu * m_next * M(next) + J`.
pub fn info_that(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    theta: &[f64],
    next_design: &Design,
    m_next: usize,
) -> Result<InfoMatrix> {
    let j = info_j(model, dist, state, theta)?;
    let at = model.with_theta(&nalgebra::DVector::from_column_slice(theta))?;
    let m = next_design.info(&at)?;
    let mu = dist.unit_info()?;
    Ok(InfoMatrix::new(m * (mu * m_next as f64) + j.matrix, InfoKind::That))
}

/// Look-ahead information on the no-repeat path, `mu * m_next * M(next) + K`.
/// When `K` has a negative eigenvalue `lambda` it is replaced by
/// `K + (reg_c + |lambda|) * I`, which is positive definite.
/// `reg_c = None` uses `1e-6 * trace(M) / p`.
pub fn info_s(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    theta: &[f64],
    next_design: &Design,
    m_next: usize,
    reg_c: Option<f64>,
) -> Result<InfoMatrix> {
    let mut k = info_k(model, dist, state, theta)?.matrix;
    let at = model.with_theta(&nalgebra::DVector::from_column_slice(theta))?;
    let m = next_design.info(&at)?;
    let p = model.n_params();
    let lambda = min_eigenvalue(&k);
    if lambda < 0.0 {
        let c = reg_c.unwrap_or(1e-6 * m.trace() / p as f64);
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!("reg_c must be > 0, got {c}")));
        }
        k += DMatrix::identity(p, p) * (c - lambda);
    }
    let mu = dist.unit_info()?;
    Ok(InfoMatrix::new(m * (mu * m_next as f64) + k, InfoKind::S))
}

/// Support points of the current data with the observed-information weights
/// that define the relevant-subset design.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevantSubset {
    pub points: Vec<f64>,
    /// Nonnegative observed informations, one per point.
    pub info: Vec<f64>,
}

impl RelevantSubset {
    /// One point per cluster weighted by its location-fit information.
    pub fn clustered(state: &ExperimentState, fits: &[ClusterFit]) -> Result<Self> {
        let mut info = Vec::with_capacity(fits.len());
        for f in fits {
            if f.obs_info < 0.0 {
                return Err(Error::NegativeQ(f.obs_info));
            }
            info.push(f.obs_info);
        }
        Ok(Self {
            points: state.clusters().iter().map(|c| c.representative).collect(),
            info,
        })
    }

    /// One point per observation weighted by `i_y` at the fitted mean. When
    /// any weight is negative, all are shifted up by
    /// `1e-6 * max|i| + |min i|`.
    pub fn no_repeat(model: &ModelSpec, dist: &ErrorDist, state: &ExperimentState, theta: &[f64]) -> Result<Self> {
        check_theta(model, theta)?;
        let mut info: Vec<f64> = state
            .points()
            .iter()
            .zip(state.responses())
            .map(|(&x, &y)| -dist.derivs(y - eta_at(model.family, theta, x))[2])
            .collect();
        let min = info.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            let amax = info.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let shift = 1e-6 * amax + min.abs();
            for v in &mut info {
                *v += shift;
            }
        }
        Ok(Self {
            points: state.points().to_vec(),
            info,
        })
    }

    pub fn q(&self) -> f64 {
        self.info.iter().sum()
    }

    /// Raw weights scaled by their maximum; equal informations give exactly 1.
    pub(crate) fn raw_weights(&self) -> Result<Vec<f64>> {
        let max = self.info.iter().copied().fold(0.0f64, f64::max);
        if !(self.q() > 0.0) || !(max > 0.0) {
            return Err(Error::AllWeightsDegenerate);
        }
        Ok(self.info.iter().map(|v| v / max).collect())
    }

    /// Normalized weights `i / Q`.
    pub fn omega(&self) -> Result<Vec<f64>> {
        let q = self.q();
        if !(q > 0.0) {
            return Err(Error::AllWeightsDegenerate);
        }
        Ok(self.info.iter().map(|v| v / q).collect())
    }

    /// Normalized information of the reweighted design at `theta`.
    pub fn tau_info(&self, model: &ModelSpec, theta: &[f64]) -> Result<DMatrix<f64>> {
        let r = self.raw_weights()?;
        Ok(weighted_info(model, theta, &self.points, &r))
    }
}

/// Mixing weight `mu * beta` with `beta = m / (mu m + Q)`.
pub fn mixing_weight(mu: f64, m_next: usize, q: f64) -> Result<f64> {
    let m = m_next as f64;
    let den = mu * m + q;
    if !(den > 0.0) {
        return Err(Error::AllWeightsDegenerate);
    }
    Ok(mu * m / den)
}

/// `mu beta M(design) + (1 - mu beta) M(tau)` at the model's parameter.
pub fn info_r(
    model: &ModelSpec,
    mu: f64,
    subset: &RelevantSubset,
    design: &Design,
    m_next: usize,
) -> Result<InfoMatrix> {
    let a = mixing_weight(mu, m_next, subset.q())?;
    let m = design.info(model)?;
    let r = if a < 1.0 {
        m * a + subset.tau_info(model, model.theta.as_slice())? * (1.0 - a)
    } else {
        m
    };
    Ok(InfoMatrix::new(r, InfoKind::R))
}

/// Conditional density of the location estimation error given the
/// configuration `a`, evaluated through `weight(t) = prod_k f(a_k + t)`
/// relative to its value at `t = 0`.
fn conditional_expectation<H: Fn(f64) -> f64>(dist: &ErrorDist, config: &[f64], h: H) -> Result<f64> {
    if config.is_empty() {
        return Err(Error::InvalidParameter("empty configuration".into()));
    }
    let log_at = |t: f64| config.iter().map(|a| dist.logpdf(a + t)).sum::<f64>();
    let base = log_at(0.0);
    let scale = dist.sigma() / (config.len() as f64).sqrt();
    // the weight peaks at 1, so its integral is of order `scale`
    let opts = QuadOptions {
        abs_tol: 1e-13 * scale,
        rel_tol: 1e-10,
        max_panels: 20_000,
    };
    let w = |t: f64| (log_at(t) - base).exp();
    let z = integrate_real_line(w, 0.0, scale, opts)?.value;
    let num = integrate_real_line(
        |t| {
            let wt = w(t);
            if wt == 0.0 {
                0.0
            } else {
                h(t) * wt
            }
        },
        0.0,
        scale,
        opts,
    )?
    .value;
    Ok(num / z)
}

/// Conditional expected information of one support point given its residual
/// configuration `a = y - eta_hat`.
///
/// Integrates `sum_k -l''(a_k + t - offset)` against the conditional density
/// of the estimation error `t`. `offset = 0` gives the information at the
/// true mean; a nonzero offset evaluates it at a mean shifted by `offset`.
pub fn cond_info_oracle(dist: &ErrorDist, config: &[f64], eta_true_offset: f64) -> Result<f64> {
    conditional_expectation(dist, config, |t| {
        config
            .iter()
            .map(|a| -dist.derivs(a + t - eta_true_offset)[2])
            .sum()
    })
}

/// Conditional expected score `sum_k -l'(a_k + t)` given the configuration.
/// It vanishes for every location family, which is why the conditional
/// information matrix has no second-derivative term.
pub fn cond_score_oracle(dist: &ErrorDist, config: &[f64]) -> Result<f64> {
    conditional_expectation(dist, config, |t| config.iter().map(|a| -dist.derivs(a + t)[1]).sum())
}

/// Conditional information `sum_i h_i g_i g_i'` assembled from the
/// per-cluster oracle, with gradients at `theta`.
pub fn info_h_oracle(
    model: &ModelSpec,
    dist: &ErrorDist,
    state: &ExperimentState,
    theta: &[f64],
) -> Result<InfoMatrix> {
    check_theta(model, theta)?;
    let fits = fit_clusters(dist, state)?;
    let p = model.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (cl, f) in state.clusters().iter().zip(&fits) {
        let h = cond_info_oracle(dist, &f.config, 0.0)?;
        let g = grad_at(model.family, theta, cl.representative);
        m.ger(h, &g, &g, 1.0);
    }
    Ok(InfoMatrix::new(m, InfoKind::HOracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{cluster, fit_location};
    use crate::models::{DesignSpace, Family};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mm() -> ModelSpec {
        ModelSpec::new(Family::MichaelisMenten, &[43.95, 236.53], DesignSpace::new(0.0, 2000.0).unwrap())
            .unwrap()
    }

    fn mm_state(dist: &ErrorDist, seed: u64, per_point: usize) -> ExperimentState {
        let model = mm();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = ExperimentState::new(1e-9).unwrap();
        for _ in 0..per_point {
            for x in [191.285, 2000.0, 700.0] {
                st.push(x, model.eta(x).unwrap() + dist.sample_one(&mut rng));
            }
        }
        st
    }

    #[test]
    fn normalized_information_basics() {
        let model = mm();
        let one = Design::uniform(vec![500.0]).unwrap();
        let m = info_m(&model, &one).unwrap().matrix;
        let g = model.grad_eta(500.0).unwrap();
        assert!((m - &g * g.transpose()).amax() < 1e-15);
        let a = Design::new(vec![100.0, 2000.0], vec![0.3, 0.7]).unwrap();
        let b = Design::new(vec![2000.0, 100.0], vec![0.7, 0.3]).unwrap();
        assert!((info_m(&model, &a).unwrap().matrix - info_m(&model, &b).unwrap().matrix).amax() < 1e-12);
    }

    #[test]
    fn optimal_mm_design_maximizes_determinant_on_a_grid() {
        let model = mm();
        let det = |x1: f64, x2: f64| {
            info_m(&model, &Design::uniform(vec![x1, x2]).unwrap()).unwrap().matrix.determinant()
        };
        let mut best = 0.0f64;
        for i in 0..=400 {
            for j in 0..=40 {
                best = best.max(det(i as f64 * 1.0, 1600.0 + j as f64 * 10.0));
            }
        }
        let opt = det(191.285, 2000.0);
        assert!(opt >= best * (1.0 - 1e-4), "{opt} vs {best}");
        assert!((opt - best).abs() <= 1e-4 * opt);
    }

    #[test]
    fn fisher_information_scales_with_n() {
        let model = mm();
        let d = Design::uniform(vec![191.285, 2000.0]).unwrap();
        let c = ErrorDist::cauchy(1.0).unwrap();
        let m = info_m(&model, &d).unwrap().matrix;
        assert_eq!(info_f(&model, &c, &d, 0).unwrap().matrix.amax(), 0.0);
        let f10 = info_f(&model, &c, &d, 10).unwrap().matrix;
        assert!((&f10 - &m * 5.0).amax() < 1e-9 * m.amax());
        let f20 = info_f(&model, &c, &d, 20).unwrap().matrix;
        assert!((f20 - f10 * 2.0).amax() < 1e-9 * m.amax());
    }

    #[test]
    fn observed_information_matches_finite_differences() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.39).unwrap();
        let st = mm_state(&dist, 3, 4);
        let th = [45.0, 250.0];
        let ll = |t: &[f64]| {
            st.points()
                .iter()
                .zip(st.responses())
                .map(|(&x, &y)| dist.logpdf(y - eta_at(model.family, t, x)))
                .sum::<f64>()
        };
        let i = info_i_obs(&model, &dist, &st, &th).unwrap().matrix;
        for a in 0..2 {
            for b in 0..2 {
                let ha = 1e-4 * th[a];
                let hb = 1e-4 * th[b];
                let at = |da: f64, db: f64| {
                    let mut t = th.to_vec();
                    t[a] += da;
                    t[b] += db;
                    ll(&t)
                };
                let fd = (at(ha, hb) - at(ha, -hb) - at(-ha, hb) + at(-ha, -hb)) / (4.0 * ha * hb);
                assert!((-fd - i[(a, b)]).abs() <= 1e-4 * i[(a, b)].abs().max(1e-3 * i.amax()), "{a}{b}: {fd} {}", i[(a, b)]);
            }
        }
    }

    #[test]
    fn zero_residuals_leave_only_the_first_term() {
        let model = mm();
        let dist = ErrorDist::q_gaussian(1.5, 1.0).unwrap();
        let xs = [100.0, 100.0, 2000.0];
        let ys: Vec<f64> = xs.iter().map(|&x| model.eta(x).unwrap()).collect();
        let st = cluster(&xs, &ys, 0.0).unwrap();
        let th = model.theta.as_slice();
        let i = info_i_obs(&model, &dist, &st, th).unwrap().matrix;
        let k = info_k(&model, &dist, &st, th).unwrap().matrix;
        let j = info_j(&model, &dist, &st, th).unwrap().matrix;
        assert!((&i - &k).amax() < 1e-12);
        assert!((&j - &k).amax() < 1e-12);
        let i0 = -dist.derivs(0.0)[2];
        let mut want = DMatrix::zeros(2, 2);
        for &x in &xs {
            let g = model.grad_eta(x).unwrap();
            want += &g * g.transpose() * i0;
        }
        assert!((k - want).amax() < 1e-12);
    }

    #[test]
    fn hybrid_information_is_ancillary() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.39).unwrap();
        let st = mm_state(&dist, 11, 5);
        let th = model.theta.as_slice();
        let j = info_j(&model, &dist, &st, th).unwrap().matrix;
        // shift the responses of the first cluster by a constant
        let mut ys = st.responses().to_vec();
        for &i in &st.clusters()[0].members {
            ys[i] += 3.7;
        }
        let shifted = cluster(st.points(), &ys, 1e-9).unwrap();
        let j2 = info_j(&model, &dist, &shifted, th).unwrap().matrix;
        assert!((&j - &j2).amax() < 1e-7 * j.amax());
        assert!(info_j(&model, &dist, &st, th).unwrap().min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn single_cluster_hybrid_is_rank_one() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.0).unwrap();
        let st = cluster(&[300.0; 4], &[10.0, 11.0, 9.5, 10.2], 0.0).unwrap();
        let j = info_j(&model, &dist, &st, model.theta.as_slice()).unwrap().matrix;
        let ia = fit_location(&dist, st.responses()).unwrap().obs_info;
        let g = model.grad_eta(300.0).unwrap();
        assert!((j - &g * g.transpose() * ia).amax() < 1e-12);
    }

    #[test]
    fn negative_weights_are_regularized() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.0).unwrap();
        // residual 3 sigma at one point: i_y < 0 there
        let xs = [191.285, 2000.0];
        let ys = [model.eta(191.285).unwrap() + 3.0, model.eta(2000.0).unwrap() + 3.0];
        let st = cluster(&xs, &ys, 0.0).unwrap();
        let th = model.theta.as_slice();
        let k = info_k(&model, &dist, &st, th).unwrap();
        assert!(k.min_eigenvalue() < 0.0);
        let next = Design::uniform(vec![191.285, 2000.0]).unwrap();
        let s = info_s(&model, &dist, &st, th, &next, 0, Some(1e-6)).unwrap();
        assert!(s.min_eigenvalue() >= -1e-12, "{}", s.min_eigenvalue());
        let s_big = info_s(&model, &dist, &st, th, &next, 1_000_000, None).unwrap().matrix;
        let m = info_m(&model, &next).unwrap().matrix * (0.5 * 1e6);
        assert!((s_big - &m).amax() / m.amax() < 1e-5);
        let sub = RelevantSubset::no_repeat(&model, &dist, &st, th).unwrap();
        assert!(sub.info.iter().all(|v| *v >= 0.0));
        let w = sub.omega().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn look_ahead_limits() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.39).unwrap();
        let st = mm_state(&dist, 5, 3);
        let th = model.theta.as_slice();
        let next = Design::uniform(vec![500.0]).unwrap();
        let j = info_j(&model, &dist, &st, th).unwrap().matrix;
        let t0 = info_that(&model, &dist, &st, th, &next, 0).unwrap().matrix;
        assert!((t0 - &j).amax() < 1e-12);
    }

    #[test]
    fn one_point_look_ahead_is_a_scaled_mixture() {
        let model = mm();
        let dist = ErrorDist::cauchy(1.39).unwrap();
        let mu = dist.unit_info().unwrap();
        let st = mm_state(&dist, 8, 3);
        let th = model.theta.as_slice();
        let fits = fit_clusters(&dist, &st).unwrap();
        let sub = RelevantSubset::clustered(&st, &fits).unwrap();
        let x = 812.5;
        let t = info_that(&model, &dist, &st, th, &Design::uniform(vec![x]).unwrap(), 1).unwrap().matrix;
        let beta = 1.0 / (mu + sub.q());
        let r = info_r(&model, mu, &sub, &Design::uniform(vec![x]).unwrap(), 1).unwrap().matrix;
        assert!((&t - r / beta).amax() <= 1e-10 * t.amax());
    }

    #[test]
    fn conditional_information_examples() {
        let c = ErrorDist::cauchy(1.0).unwrap();
        let h = cond_info_oracle(&c, &[-1.0, 1.0], 0.0).unwrap();
        assert!(h > 0.0);
        let h3 = cond_info_oracle(&c, &[-0.4, 0.0, 0.4], 0.0).unwrap();
        assert!(h3 > 0.0);
        for cfg in [vec![-1.0, 1.0], vec![-2.0, 0.3, 1.7], vec![0.0]] {
            assert!(cond_score_oracle(&c, &cfg).unwrap().abs() < 1e-8);
        }
        // a single observation carries no configuration: h equals the unit information
        for d in [c, ErrorDist::exp_power(4.0, 1.0).unwrap(), ErrorDist::q_gaussian(1.5, 2.0).unwrap()] {
            let h1 = cond_info_oracle(&d, &[0.0], 0.0).unwrap();
            assert!((h1 - d.unit_info().unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn conditional_information_averages_to_fisher() {
        // E_a[h_a] = n mu over configurations of n = 3 Cauchy draws
        let c = ErrorDist::cauchy(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let reps = 4000;
        let mut vals = Vec::with_capacity(reps);
        for _ in 0..reps {
            let y = c.sample(&mut rng, 3);
            let f = fit_location(&c, &y).unwrap();
            vals.push(cond_info_oracle(&c, &f.config, 0.0).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.5 * se, "{mean} +- {se}");
    }

    #[test]
    fn mixture_weight_and_reduction() {
        assert_eq!(mixing_weight(0.5, 1, 0.0).unwrap(), 1.0);
        assert!(mixing_weight(0.5, 0, 0.0).is_err());
        let w = mixing_weight(0.5, 1, 1.5).unwrap();
        assert!((w - 0.25).abs() < 1e-15);
        let sub = RelevantSubset {
            points: vec![1.0, 2.0],
            info: vec![0.0, 0.0],
        };
        assert_eq!(sub.omega(), Err(Error::AllWeightsDegenerate));
    }
}
