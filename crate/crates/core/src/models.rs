//! Nonlinear mean functions with analytic parameter derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `theta1 * x / (theta2 + x)`
    MichaelisMenten,
    /// `theta1 * (1 - exp(-theta2 * x))`
    ExpDecay,
    /// `theta1 * (exp(-theta2 * x) - exp(-theta3 * x))`
    Compartmental,
}

impl Family {
    pub fn n_params(self) -> usize {
        match self {
            Family::MichaelisMenten | Family::ExpDecay => 2,
            Family::Compartmental => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::MichaelisMenten => "michaelis-menten",
            Family::ExpDecay => "exp-decay",
            Family::Compartmental => "compartmental",
        }
    }

    /// Design interval used when none is given: `[0, 2000]`, `[0, 500]`
    /// and `[0, 48]`.
    pub fn default_space(self) -> DesignSpace {
        let hi = match self {
            Family::MichaelisMenten => 2000.0,
            Family::ExpDecay => 500.0,
            Family::Compartmental => 48.0,
        };
        DesignSpace { lo: 0.0, hi }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "michaelis-menten" | "mm" => Some(Family::MichaelisMenten),
            "exp-decay" | "decay" => Some(Family::ExpDecay),
            "compartmental" => Some(Family::Compartmental),
            _ => None,
        }
    }

    /// Check that `theta` lies in the open parameter region of the family.
    pub fn validate_theta(self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.n_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{} parameters must be finite and positive, got {theta:?}",
                self.name()
            )));
        }
        if self == Family::Compartmental && theta[2] <= theta[1] {
            return Err(Error::InvalidParameter(format!(
                "compartmental model needs theta3 > theta2, got {theta:?}"
            )));
        }
        Ok(())
    }
}

/// Closed design interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub lo: f64,
    pub hi: f64,
}

impl DesignSpace {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "design space needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// `n` equispaced points including both ends.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            _ => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        self.hi
                    } else {
                        self.lo + self.width() * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// A mean-function family together with its parameter vector and design space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub theta: DVector<f64>,
    pub space: DesignSpace,
}

impl ModelSpec {
    pub fn new(family: Family, theta: &[f64], space: DesignSpace) -> Result<Self> {
        family.validate_theta(theta)?;
        Ok(Self {
            family,
            theta: DVector::from_column_slice(theta),
            space,
        })
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    /// Same model with a different parameter vector.
    pub fn with_theta(&self, theta: &DVector<f64>) -> Result<Self> {
        self.family.validate_theta(theta.as_slice())?;
        Ok(Self {
            family: self.family,
            theta: theta.clone(),
            space: self.space,
        })
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.space.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                lo: self.space.lo,
                hi: self.space.hi,
            })
        }
    }

    pub fn eta(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(eta_at(self.family, self.theta.as_slice(), x))
    }

    pub fn grad_eta(&self, x: f64) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(grad_at(self.family, self.theta.as_slice(), x))
    }

    pub fn hess_eta(&self, x: f64) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(hess_at(self.family, self.theta.as_slice(), x))
    }
}

/// Mean function at an arbitrary parameter vector (no domain checks).
pub fn eta_at(family: Family, th: &[f64], x: f64) -> f64 {
    match family {
        Family::MichaelisMenten => th[0] * x / (th[1] + x),
        Family::ExpDecay => -th[0] * (-th[1] * x).exp_m1(),
        Family::Compartmental => th[0] * ((-th[1] * x).exp() - (-th[2] * x).exp()),
    }
}

pub fn grad_at(family: Family, th: &[f64], x: f64) -> DVector<f64> {
    match family {
        Family::MichaelisMenten => {
            let den = th[1] + x;
            DVector::from_vec(vec![x / den, -th[0] * x / (den * den)])
        }
        Family::ExpDecay => {
            let e = (-th[1] * x).exp();
            DVector::from_vec(vec![-(-th[1] * x).exp_m1(), th[0] * x * e])
        }
        Family::Compartmental => {
            let e2 = (-th[1] * x).exp();
            let e3 = (-th[2] * x).exp();
            DVector::from_vec(vec![e2 - e3, -th[0] * x * e2, th[0] * x * e3])
        }
    }
}

pub fn hess_at(family: Family, th: &[f64], x: f64) -> DMatrix<f64> {
    let p = family.n_params();
    let mut h = DMatrix::zeros(p, p);
    let mut set = |i: usize, j: usize, v: f64| {
        h[(i, j)] = v;
        h[(j, i)] = v;
    };
    match family {
        Family::MichaelisMenten => {
            let den = th[1] + x;
            set(0, 1, -x / (den * den));
            set(1, 1, 2.0 * th[0] * x / (den * den * den));
        }
        Family::ExpDecay => {
            let e = (-th[1] * x).exp();
            set(0, 1, x * e);
            set(1, 1, -th[0] * x * x * e);
        }
        Family::Compartmental => {
            let e2 = (-th[1] * x).exp();
            let e3 = (-th[2] * x).exp();
            set(0, 1, -x * e2);
            set(0, 2, x * e3);
            set(1, 1, th[0] * x * x * e2);
            set(2, 2, -th[0] * x * x * e3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm() -> ModelSpec {
        ModelSpec::new(
            Family::MichaelisMenten,
            &[43.95, 236.53],
            DesignSpace::new(0.0, 2000.0).unwrap(),
        )
        .unwrap()
    }

    fn decay() -> ModelSpec {
        ModelSpec::new(
            Family::ExpDecay,
            &[1.215, 0.01539],
            DesignSpace::new(0.0, 500.0).unwrap(),
        )
        .unwrap()
    }

    fn comp() -> ModelSpec {
        ModelSpec::new(
            Family::Compartmental,
            &[21.8, 0.059, 4.29],
            DesignSpace::new(0.0, 48.0).unwrap(),
        )
        .unwrap()
    }

    fn central_grad(model: &ModelSpec, x: f64) -> DVector<f64> {
        let th = model.theta.as_slice();
        DVector::from_fn(th.len(), |j, _| {
            let h = 1e-6 * th[j].abs();
            let mut up = th.to_vec();
            let mut dn = th.to_vec();
            up[j] += h;
            dn[j] -= h;
            (eta_at(model.family, &up, x) - eta_at(model.family, &dn, x)) / (2.0 * h)
        })
    }

    #[test]
    fn eta_examples() {
        assert!((mm().eta(236.53).unwrap() - 21.975).abs() < 1e-12);
        assert_eq!(decay().eta(0.0).unwrap(), 0.0);
        assert_eq!(comp().eta(0.0).unwrap(), 0.0);
    }

    #[test]
    fn outside_design_space_is_rejected() {
        assert!(matches!(mm().eta(2000.5), Err(Error::Domain { .. })));
        assert!(matches!(decay().grad_eta(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(comp().hess_eta(49.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        assert!(decay().grad_eta(0.0).unwrap().iter().all(|v| *v == 0.0));
        assert!(comp().grad_eta(0.0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_examples_match_finite_differences() {
        // frozen from the central-difference oracle
        let g = mm().grad_eta(2000.0).unwrap();
        let fd = central_grad(&mm(), 2000.0);
        assert!((g[0] - 0.894242).abs() < 5e-6 && (g[1] + 0.0175727).abs() < 5e-7);
        for j in 0..2 {
            assert!((g[j] - fd[j]).abs() <= 1e-6 * g[j].abs());
        }
        let g = decay().grad_eta(500.0).unwrap();
        let fd = central_grad(&decay(), 500.0);
        assert!((g[0] - 0.999545).abs() < 5e-6 && (g[1] - 0.276471).abs() < 5e-6);
        for j in 0..2 {
            assert!((g[j] - fd[j]).abs() <= 1e-6 * g[j].abs());
        }
    }

    #[test]
    fn hessian_examples() {
        let h = decay().hess_eta(100.0).unwrap();
        assert!((h[(1, 1)] + 2607.336).abs() < 5e-3, "{}", h[(1, 1)]);
        for x in [0.0, 10.0, 1500.0] {
            assert_eq!(mm().hess_eta(x).unwrap()[(0, 0)], 0.0);
        }
        for x in [0.0, 1.0, 40.0] {
            assert_eq!(comp().hess_eta(x).unwrap()[(0, 0)], 0.0);
        }
    }

    #[test]
    fn compartmental_ordering_is_enforced() {
        let space = DesignSpace::new(0.0, 48.0).unwrap();
        assert!(ModelSpec::new(Family::Compartmental, &[21.8, 4.29, 0.059], space).is_err());
        assert!(ModelSpec::new(Family::MichaelisMenten, &[1.0], space).is_err());
        assert!(ModelSpec::new(Family::ExpDecay, &[1.0, -0.1], space).is_err());
        assert!(DesignSpace::new(1.0, 1.0).is_err());
    }

    #[test]
    fn grid_hits_both_ends() {
        let g = DesignSpace::new(0.0, 2000.0).unwrap().grid(4001);
        assert_eq!(g.len(), 4001);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[4000], 2000.0);
        assert_eq!(g[2000], 1000.0);
    }
}
