//! Base kernels: lognormal, zero-location GPD, right-truncated lognormal and Pareto.
//!
//! Parameter structs validate on construction, so every evaluation method is
//! infallible except the quantiles, which reject probabilities outside (0, 1).
//! All samplers are inverse-CDF transforms of `Open01` uniforms except the
//! lognormal, which exponentiates a standard normal draw.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_positive, check_probability, Error, Result};
use crate::special::{std_normal_cdf, std_normal_quantile, std_normal_sf};

/// Below this |ξ| the GPD is evaluated through its exponential limit.
pub const XI_ZERO: f64 = 1e-10;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Lognormal with log-scale location `mu` and log-scale variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLogn")]
pub struct LognParams {
    mu: f64,
    sigma2: f64,
}

#[derive(Deserialize)]
struct RawLogn {
    mu: f64,
    sigma2: f64,
}

impl TryFrom<RawLogn> for LognParams {
    type Error = Error;
    fn try_from(r: RawLogn) -> Result<Self> {
        Self::new(r.mu, r.sigma2)
    }
}

impl LognParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        check_finite("mu", mu)?;
        check_positive("sigma2", sigma2)?;
        Ok(Self { mu, sigma2 })
    }

    /// Lognormal MLE: mean and divisor-n variance of the logs.
    pub fn fit(x: &[f64]) -> Result<Self> {
        crate::error::check_sample(x)?;
        if x.len() < 2 {
            return Err(Error::Data("lognormal fit needs at least 2 observations".into()));
        }
        let n = x.len() as f64;
        let mu = x.iter().map(|v| v.ln()).sum::<f64>() / n;
        let s2 = x.iter().map(|v| (v.ln() - mu).powi(2)).sum::<f64>() / n;
        Self::new(mu, s2)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lx = x.ln();
        let d = lx - self.mu;
        -lx - LN_SQRT_2PI - 0.5 * self.sigma2.ln() - d * d / (2.0 * self.sigma2)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.ln_pdf(x).exp()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            std_normal_cdf((x.ln() - self.mu) / self.sigma())
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            std_normal_sf((x.ln() - self.mu) / self.sigma())
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        Ok((self.mu + self.sigma() * std_normal_quantile(u)).exp())
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.sigma() * z).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Zero-location generalized Pareto with shape `xi` and scale `beta`.
///
/// For `xi < 0` the support is `[0, -beta/xi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGpd")]
pub struct GpdParams {
    xi: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawGpd {
    xi: f64,
    beta: f64,
}

impl TryFrom<RawGpd> for GpdParams {
    type Error = Error;
    fn try_from(r: RawGpd) -> Result<Self> {
        Self::new(r.xi, r.beta)
    }
}

impl GpdParams {
    pub fn new(xi: f64, beta: f64) -> Result<Self> {
        check_finite("xi", xi)?;
        check_positive("beta", beta)?;
        Ok(Self { xi, beta })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Right endpoint of the support (∞ when `xi >= 0`).
    pub fn upper_bound(&self) -> f64 {
        if self.xi < -XI_ZERO {
            -self.beta / self.xi
        } else {
            f64::INFINITY
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        gpd_ln_pdf(x, self.xi, self.beta)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.xi.abs() < XI_ZERO {
            return (-x / self.beta).exp();
        }
        let s = self.xi * x / self.beta;
        if s <= -1.0 {
            return 0.0;
        }
        (-s.ln_1p() / self.xi).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.xi.abs() < XI_ZERO {
            return -(-x / self.beta).exp_m1();
        }
        let s = self.xi * x / self.beta;
        if s <= -1.0 {
            return 1.0;
        }
        -(-s.ln_1p() / self.xi).exp_m1()
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let l = (-u).ln_1p();
        if self.xi.abs() < XI_ZERO {
            -self.beta * l
        } else {
            self.beta / self.xi * (-self.xi * l).exp_m1()
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// GPD log-density on raw parameters; `-∞` off the support or for `beta <= 0`.
#[inline]
pub fn gpd_ln_pdf(x: f64, xi: f64, beta: f64) -> f64 {
    if x < 0.0 || beta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if xi.abs() < XI_ZERO {
        return -beta.ln() - x / beta;
    }
    let s = xi * x / beta;
    if s <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -beta.ln() - (1.0 / xi + 1.0) * s.ln_1p()
}

/// Lognormal right-truncated at `xmin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncLognParams {
    logn: LognParams,
    xmin: f64,
    /// Φ((log xmin − μ)/σ)
    mass: f64,
}

impl TruncLognParams {
    pub fn new(mu: f64, sigma2: f64, xmin: f64) -> Result<Self> {
        let logn = LognParams::new(mu, sigma2)?;
        check_positive("xmin", xmin)?;
        let mass = logn.cdf(xmin);
        if mass <= 0.0 {
            return Err(Error::Parameter {
                name: "xmin",
                value: xmin,
                reason: "truncation point carries no lognormal mass",
            });
        }
        Ok(Self { logn, xmin, mass })
    }

    pub fn lognormal(&self) -> &LognParams {
        &self.logn
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    /// Untruncated lognormal mass below `xmin`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x > self.xmin {
            f64::NEG_INFINITY
        } else {
            self.logn.ln_pdf(x) - self.mass.ln()
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.xmin {
            1.0
        } else {
            (self.logn.cdf(x) / self.mass).min(1.0)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let z = std_normal_quantile(u * self.mass);
        (self.logn.mu + self.logn.sigma() * z).exp().min(self.xmin)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Pareto (type I) with scale `xmin` and shape `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoParams {
    xmin: f64,
    alpha: f64,
}

impl ParetoParams {
    pub fn new(xmin: f64, alpha: f64) -> Result<Self> {
        check_positive("xmin", xmin)?;
        check_positive("alpha", alpha)?;
        Ok(Self { xmin, alpha })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.xmin {
            f64::NEG_INFINITY
        } else {
            self.alpha.ln() + self.alpha * self.xmin.ln() - (self.alpha + 1.0) * x.ln()
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.xmin {
            1.0
        } else {
            (self.xmin / x).powf(self.alpha)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.sf(x)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        self.xmin * (-(-u).ln_1p() / self.alpha).exp()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Cauchy CDF `1/2 + arctan((x − location)/scale)/π`.
pub fn cauchy_cdf(x: f64, location: f64, scale: f64) -> f64 {
    0.5 + ((x - location) / scale).atan() / PI
}
