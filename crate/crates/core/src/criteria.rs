//! D- and c-optimality criteria and their directional derivatives.
//!
//! Sensitivities are signed so that, at an optimal design, their minimum over
//! the design space is zero and is attained at the support points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::information::{mixing_weight, RelevantSubset};
use crate::models::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    /// `det(M)^(-1/p)`
    D,
    /// `c' M^- c`
    C(Vec<f64>),
}

impl Criterion {
    pub fn c(c: &[f64]) -> Result<Self> {
        if c.is_empty() || c.iter().all(|v| *v == 0.0) || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "c vector must be finite and nonzero, got {c:?}"
            )));
        }
        Ok(Criterion::C(c.to_vec()))
    }

    pub fn label(&self) -> String {
        match self {
            Criterion::D => "D".to_string(),
            Criterion::C(c) => {
                let parts: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
                format!("c({})", parts.join(";"))
            }
        }
    }

    pub fn check_dim(&self, p: usize) -> Result<()> {
        match self {
            Criterion::C(c) if c.len() != p => Err(Error::InvalidParameter(format!(
                "c vector has length {}, model has {p} parameters",
                c.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Criterion value at an information matrix.
    pub fn psi(&self, m: &DMatrix<f64>) -> Result<f64> {
        let p = m.nrows();
        self.check_dim(p)?;
        match self {
            Criterion::D => {
                let chol = m.clone().cholesky().ok_or(Error::SingularInfo)?;
                let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                if !log_det.is_finite() {
                    return Err(Error::SingularInfo);
                }
                Ok((-log_det / p as f64).exp())
            }
            Criterion::C(c) => {
                let c = DVector::from_column_slice(c);
                let v = solve_compatible(m, &c)?;
                Ok(c.dot(&v))
            }
        }
    }
}

/// Solve `m v = c`, falling back to a pseudo-inverse when `m` is singular but
/// `c` lies in its range.
pub(crate) fn solve_compatible(m: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        let v = chol.solve(c);
        if v.iter().all(|x| x.is_finite()) {
            return Ok(v);
        }
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let svd = m.clone().svd(true, true);
    let pinv = svd
        .pseudo_inverse(1e-10 * scale)
        .map_err(|_| Error::SingularInfo)?;
    let v = &pinv * c;
    let resid = (m * &v - c).norm();
    if resid > 1e-8 * c.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::SingularInfo);
    }
    Ok(v)
}

/// Directional derivative of the criterion at a (possibly augmented) design.
///
/// `total` is the matrix the criterion is applied to and `design` the
/// information of the design being varied. For plain designs both are the
/// same matrix. With an augmentation `total = a * design + (1 - a) * B`.
/// Evaluating at a gradient vector `g` costs `O(p^2)`.
///
/// The D form `tr(R^-1 M) - g' R^-1 g` is scale free as it stands. The c form
/// `c' R^-1 M R^-1 c - (c' R^-1 g)^2` is reported relative to its first term,
/// so a single tolerance serves every parameterization; [`Sensitivity::eval_raw`]
/// gives the unnormalized value.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    p: usize,
    kind: Kernel,
    constant: f64,
    scale: f64,
}

#[derive(Debug, Clone)]
enum Kernel {
    // constant - g' A g
    Quadratic(Vec<f64>),
    // constant - (v' g)^2
    Linear(Vec<f64>),
}

impl Sensitivity {
    pub fn new(criterion: &Criterion, total: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<Self> {
        let p = total.nrows();
        criterion.check_dim(p)?;
        match criterion {
            Criterion::D => {
                let chol = total.clone().cholesky().ok_or(Error::SingularInfo)?;
                let inv = chol.inverse();
                if inv.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SingularInfo);
                }
                let constant = (design * &inv).trace();
                Ok(Self {
                    p,
                    kind: Kernel::Quadratic(inv.as_slice().to_vec()),
                    constant,
                    scale: 1.0,
                })
            }
            Criterion::C(c) => {
                let c = DVector::from_column_slice(c);
                let v = solve_compatible(total, &c)?;
                let constant = (design * &v).dot(&v);
                if !(constant > 0.0 && constant.is_finite()) {
                    return Err(Error::SingularInfo);
                }
                // divide through by the constant so the value is invariant to
                // rescaling the parameters
                let v: Vec<f64> = v.iter().map(|x| x / constant.sqrt()).collect();
                Ok(Self {
                    p,
                    kind: Kernel::Linear(v),
                    constant: 1.0,
                    scale: constant,
                })
            }
        }
    }

    /// Plain (non-augmented) sensitivity of a design with information `m`.
    pub fn plain(criterion: &Criterion, m: &DMatrix<f64>) -> Result<Self> {
        Self::new(criterion, m, m)
    }

    /// Factor between [`Sensitivity::eval_raw`] and [`Sensitivity::eval`].
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval_raw(&self, g: &[f64]) -> f64 {
        self.eval(g) * self.scale
    }

    pub fn eval(&self, g: &[f64]) -> f64 {
        let p = self.p;
        match &self.kind {
            Kernel::Quadratic(a) => {
                let mut q = 0.0;
                for j in 0..p {
                    let mut row = 0.0;
                    for i in 0..p {
                        row += a[i + j * p] * g[i];
                    }
                    q += row * g[j];
                }
                self.constant - q
            }
            Kernel::Linear(v) => {
                let s: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum();
                self.constant - s * s
            }
        }
    }
}

/// Directional derivative of the criterion at `design` towards a one-point
/// design at `x`, signed so that its minimum over the design space is zero at
/// an optimal design. D: `p - g'M^-1 g`; c: `c'M^-c - (c'M^- g)^2`.
pub fn phi(criterion: &Criterion, model: &ModelSpec, design: &Design, x: f64) -> Result<f64> {
    let m = design.info(model)?;
    let g = model.grad_eta(x)?;
    Ok(Sensitivity::plain(criterion, &m)?.eval_raw(g.as_slice()))
}

/// Relevant-subset sensitivity of a candidate next design at `x`.
///
/// With `R = a M(design) + (1 - a) M(tau)` and mixing weight
/// `a = mu m / (mu m + Q)`: D gives `tr(R^-1 M) - g'R^-1 g`, c gives
/// `c'R^-1 M R^-1 c - (c'R^-1 g)^2`. With no prior information (`Q = 0`) this
/// is [`phi`].
pub fn nu(
    criterion: &Criterion,
    model: &ModelSpec,
    mu: f64,
    subset: &RelevantSubset,
    design: &Design,
    m_next: usize,
    x: f64,
) -> Result<f64> {
    for &v in &subset.info {
        if v < 0.0 {
            return Err(Error::NegativeQ(v));
        }
    }
    let a = mixing_weight(mu, m_next, subset.q())?;
    let m = design.info(model)?;
    let total = if a < 1.0 {
        &m * a + subset.tau_info(model, model.theta.as_slice())? * (1.0 - a)
    } else {
        m.clone()
    };
    let g = model.grad_eta(x)?;
    Ok(Sensitivity::new(criterion, &total, &m)?.eval_raw(g.as_slice()))
}
