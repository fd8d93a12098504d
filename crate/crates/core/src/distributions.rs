//! Symmetric location-scale error laws.
//!
//! Every family is handled through its standardized log-kernel `g(u)`,
//! `u = eps / sigma`, so that `log f(eps) = g(u) - log(sigma) - log(Z)`.
//! Derivatives with respect to `eps` follow by dividing the `u`-derivatives
//! by `sigma^k`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad::{integrate_real_line, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistFamily {
    Cauchy,
    /// Density proportional to `exp(-|eps/sigma|^zeta / zeta)`.
    ExpPower { zeta: f64 },
    /// Density proportional to `[1 + (q-1) eps^2 / (2 sigma^2)]^(-1/(q-1))`.
    QGaussian { q: f64 },
}

impl DistFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DistFamily::Cauchy => "cauchy",
            DistFamily::ExpPower { .. } => "exp-power",
            DistFamily::QGaussian { .. } => "q-gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDist {
    family: DistFamily,
    sigma: f64,
    log_norm: f64,
}

/// `d^k/dv^k log(1 + v^2)` for k = 1..=4.
fn log1p_sq_derivs(v: f64) -> [f64; 4] {
    let s = 1.0 + v * v;
    let v2 = v * v;
    [
        2.0 * v / s,
        2.0 * (1.0 - v2) / (s * s),
        4.0 * v * (v2 - 3.0) / (s * s * s),
        -12.0 * (v2 * v2 - 6.0 * v2 + 1.0) / (s * s * s * s),
    ]
}

impl ErrorDist {
    pub fn new(family: DistFamily, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        let log_z = match family {
            DistFamily::Cauchy => PI.ln(),
            DistFamily::ExpPower { zeta } => {
                if !(zeta.is_finite() && zeta > 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "exp-power shape zeta must be > 1, got {zeta}"
                    )));
                }
                std::f64::consts::LN_2 + (1.0 / zeta - 1.0) * zeta.ln() + ln_gamma(1.0 / zeta)
            }
            DistFamily::QGaussian { q } => {
                if !(q > 1.0 && q < 3.0) {
                    return Err(Error::InvalidParameter(format!(
                        "q-gaussian q must lie in (1, 3), got {q}"
                    )));
                }
                let (a, b) = Self::q_coeffs(q);
                0.5 * PI.ln() + ln_gamma(a - 0.5) - ln_gamma(a) - 0.5 * b.ln()
            }
        };
        Ok(Self {
            family,
            sigma,
            log_norm: log_z + sigma.ln(),
        })
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        Self::new(DistFamily::Cauchy, sigma)
    }

    pub fn exp_power(zeta: f64, sigma: f64) -> Result<Self> {
        Self::new(DistFamily::ExpPower { zeta }, sigma)
    }

    pub fn q_gaussian(q: f64, sigma: f64) -> Result<Self> {
        Self::new(DistFamily::QGaussian { q }, sigma)
    }

    pub fn family(&self) -> DistFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same family with a different scale.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma)
    }

    // exponent and inner coefficient of the q-gaussian kernel: -a * log(1 + b u^2)
    fn q_coeffs(q: f64) -> (f64, f64) {
        (1.0 / (q - 1.0), 0.5 * (q - 1.0))
    }

    /// `[log f, l', l'', l''', l'''']` of the error density at `eps`.
    pub fn derivs(&self, eps: f64) -> [f64; 5] {
        let s = self.sigma;
        let u = eps / s;
        let g = match self.family {
            DistFamily::Cauchy => {
                let d = log1p_sq_derivs(u);
                [-u.mul_add(u, 1.0).ln(), -d[0], -d[1], -d[2], -d[3]]
            }
            DistFamily::QGaussian { q } => {
                let (a, b) = Self::q_coeffs(q);
                let rb = b.sqrt();
                let d = log1p_sq_derivs(rb * u);
                [
                    -a * (b * u * u).ln_1p(),
                    -a * rb * d[0],
                    -a * b * d[1],
                    -a * b * rb * d[2],
                    -a * b * b * d[3],
                ]
            }
            DistFamily::ExpPower { zeta } => {
                let au = u.abs();
                let sg = u.signum();
                let z = zeta;
                let pw = |e: f64| au.powf(e);
                [
                    -au.powf(z) / z,
                    -sg * pw(z - 1.0),
                    -(z - 1.0) * pw(z - 2.0),
                    -(z - 1.0) * (z - 2.0) * sg * pw(z - 3.0),
                    -(z - 1.0) * (z - 2.0) * (z - 3.0) * pw(z - 4.0),
                ]
            }
        };
        [
            g[0] - self.log_norm,
            g[1] / s,
            g[2] / (s * s),
            g[3] / (s * s * s),
            g[4] / (s * s * s * s),
        ]
    }

    /// k-th derivative of the log density at `eps`, k in 0..=4.
    pub fn logpdf_deriv(&self, eps: f64, k: usize) -> Result<f64> {
        if k > 4 {
            return Err(Error::InvalidOrder(k));
        }
        Ok(self.derivs(eps)[k])
    }

    pub fn logpdf(&self, eps: f64) -> f64 {
        self.derivs(eps)[0]
    }

    pub fn pdf(&self, eps: f64) -> f64 {
        self.logpdf(eps).exp()
    }

    /// `E[h(derivs(eps))]` under the error law, by quadrature over the real line.
    pub fn expect<H: Fn(&[f64; 5]) -> f64>(&self, h: H) -> Result<f64> {
        let opts = QuadOptions::default();
        let r = integrate_real_line(
            |e| {
                let d = self.derivs(e);
                let f = d[0].exp();
                if f == 0.0 {
                    0.0
                } else {
                    h(&d) * f
                }
            },
            0.0,
            self.sigma,
            opts,
        )?;
        Ok(r.value)
    }

    /// Per-observation Fisher information `-E[l'']`.
    pub fn unit_info(&self) -> Result<f64> {
        let mu = self.expect(|d| -d[2])?;
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "unit information must be positive, got {mu}"
            )));
        }
        Ok(mu)
    }

    /// The score-squared form `E[(l')^2]` of the unit information.
    pub fn unit_info_score_form(&self) -> Result<f64> {
        self.expect(|d| d[1] * d[1])
    }

    /// Squared statistical curvature of the location family,
    /// `(nu20 nu02 - nu11^2) / nu20^3` with `nu20 = E[l'^2]`,
    /// `nu11 = E[l' l'']`, `nu02 = Var[l'']`.
    pub fn curvature_sq(&self) -> Result<f64> {
        let nu20 = self.expect(|d| d[1] * d[1])?;
        let mean2 = self.expect(|d| d[2])?;
        let nu02 = self.expect(|d| (d[2] - mean2).powi(2))?;
        let nu11 = self.expect(|d| d[1] * d[2])?;
        Ok((nu20 * nu02 - nu11 * nu11) / nu20.powi(3))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.sigma;
        match self.family {
            DistFamily::Cauchy => {
                let u: f64 = rng.random();
                s * (PI * (u - 0.5)).tan()
            }
            DistFamily::ExpPower { zeta } => {
                // |eps|^zeta ~ Gamma(1/zeta, scale = zeta sigma^zeta)
                let g = Gamma::new(1.0 / zeta, zeta)
                    .expect("valid gamma parameters")
                    .sample(rng);
                let mag = s * g.powf(1.0 / zeta);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            DistFamily::QGaussian { q } => {
                // scaled Student-t with (3 - q) / (q - 1) degrees of freedom
                let df = (3.0 - q) / (q - 1.0);
                let t = StudentT::new(df).expect("valid degrees of freedom").sample(rng);
                s * (2.0 / (3.0 - q)).sqrt() * t
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}
