//! Static lognormal–GPD mixture `p·Logn(μ, σ²) + (1 − p)·GPD(ξ, β)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::distributions::{GpdParams, LognParams};
use crate::error::{check_probability, check_sample, Error, Result};
use crate::model::LossModel;
use crate::optimize::brent_root;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStatic")]
pub struct StaticMixParams {
    p: f64,
    logn: LognParams,
    gpd: GpdParams,
}

#[derive(Deserialize)]
struct RawStatic {
    p: f64,
    logn: LognParams,
    gpd: GpdParams,
}

impl TryFrom<RawStatic> for StaticMixParams {
    type Error = Error;
    fn try_from(r: RawStatic) -> Result<Self> {
        Self::from_parts(r.p, r.logn, r.gpd)
    }
}

/// `log(e^a + e^b)` without overflow; `-∞` when both are `-∞`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

impl StaticMixParams {
    /// `theta = (p, mu, sigma2, xi, beta)`.
    pub fn new(p: f64, mu: f64, sigma2: f64, xi: f64, beta: f64) -> Result<Self> {
        Self::from_parts(p, LognParams::new(mu, sigma2)?, GpdParams::new(xi, beta)?)
    }

    pub fn from_parts(p: f64, logn: LognParams, gpd: GpdParams) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Parameter {
                name: "p",
                value: p,
                reason: "mixing weight must lie in (0, 1)",
            });
        }
        Ok(Self { p, logn, gpd })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn logn(&self) -> &LognParams {
        &self.logn
    }

    pub fn gpd(&self) -> &GpdParams {
        &self.gpd
    }

    /// Parameter vector `(p, μ, η = σ², ξ, β)` used by the EM stopping rule.
    pub fn as_vector(&self) -> [f64; 5] {
        [self.p, self.logn.mu(), self.logn.sigma2(), self.gpd.xi(), self.gpd.beta()]
    }

    /// `(p, μ, σ, ξ, β)`, the form reported in tables.
    pub fn table_vector(&self) -> [f64; 5] {
        [self.p, self.logn.mu(), self.logn.sigma(), self.gpd.xi(), self.gpd.beta()]
    }

    /// Weighted component log-densities `(log p f₁(x), log (1−p) f₂(x))`.
    #[inline]
    pub fn component_ln_pdfs(&self, x: f64) -> (f64, f64) {
        (
            self.p.ln() + self.logn.ln_pdf(x),
            (-self.p).ln_1p() + self.gpd.ln_pdf(x),
        )
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.component_ln_pdfs(x);
        log_add_exp(a, b)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Observed-data log-likelihood; rejects non-positive observations.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        check_sample(x)?;
        Ok(x.iter().map(|&v| self.ln_pdf(v)).sum())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.p * self.logn.cdf(x) + (1.0 - self.p) * self.gpd.cdf(x)
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.p * self.logn.sf(x) + (1.0 - self.p) * self.gpd.sf(x)
    }

    /// Quantile by Brent's method on `[0, max(q_logn(u), q_gpd(u))]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        let hi = self.logn.quantile(u)?.max(self.gpd.quantile(u)?);
        let tail = 1.0 - u;
        let q = if u <= 0.5 {
            brent_root(|x| self.cdf(x) - u, 0.0, hi, 1e-14 * hi, 200)?
        } else {
            brent_root(|x| tail - self.sf(x), 0.0, hi, 1e-14 * hi, 200)?
        };
        Ok(q)
    }

    /// Draw `n` observations together with their latent lognormal labels.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> (Vec<f64>, Vec<bool>) {
        let mut xs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let is_logn = rng.gen::<f64>() < self.p;
            xs.push(if is_logn {
                self.logn.sample_one(rng)
            } else {
                self.gpd.sample_one(rng)
            });
            labels.push(is_logn);
        }
        (xs, labels)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        self.sample_labeled(rng, n).0
    }
}

impl LossModel for StaticMixParams {
    fn ln_pdf(&self, x: f64) -> f64 {
        StaticMixParams::ln_pdf(self, x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        Ok(StaticMixParams::cdf(self, x))
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        StaticMixParams::quantile(self, u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        Ok(StaticMixParams::sample(self, rng, n))
    }
}
