//! Dynamic Cauchy–lognormal–GPD mixture.
//!
//! The GPD weight is the Cauchy CDF `w(x)`, so the density
//! `[(1 − w(x)) f₁(x) + w(x) f₂(x)] / Z` needs a normalizing constant
//! `Z = 1 + I/π`, `I = ∫₀^∞ [f₂(x) − f₁(x)] arctan((x − μ_c)/τ) dx`,
//! which is evaluated by adaptive quadrature whenever parameters change.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{cauchy_cdf, GpdParams, LognParams};
use crate::em::{fit_em, gpd_mle, EmConfig};
use crate::error::{check_finite, check_positive, check_probability, check_sample, Error, Result};
use crate::mixture::log_add_exp;
use crate::model::LossModel;
use crate::optimize::{brent_root, nelder_mead, NelderMeadOptions};
use crate::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use crate::risk::empirical_quantile;

/// Relative tolerance for the normalizing integral.
pub const Z_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawDynamic")]
pub struct DynamicMixParams {
    mu_c: f64,
    tau_c: f64,
    logn: LognParams,
    gpd: GpdParams,
    /// Normalizing constant for the current parameters; recomputed by every setter.
    #[serde(rename = "z")]
    z_cache: f64,
}

#[derive(Deserialize)]
struct RawDynamic {
    mu_c: f64,
    tau_c: f64,
    logn: LognParams,
    gpd: GpdParams,
}

impl TryFrom<RawDynamic> for DynamicMixParams {
    type Error = Error;
    fn try_from(r: RawDynamic) -> Result<Self> {
        Self::from_parts(r.mu_c, r.tau_c, r.logn, r.gpd)
    }
}

impl PartialEq for DynamicMixParams {
    fn eq(&self, other: &Self) -> bool {
        self.mu_c == other.mu_c && self.tau_c == other.tau_c && self.logn == other.logn && self.gpd == other.gpd
    }
}

/// Cauchy-CDF mixing weight given to the GPD component.
pub fn dyn_weight(x: f64, mu_c: f64, tau_c: f64) -> Result<f64> {
    check_positive("tau_c", tau_c)?;
    check_finite("mu_c", mu_c)?;
    Ok(cauchy_cdf(x, mu_c, tau_c))
}

/// `(log(1 − w(x)), log w(x))` without cancellation in either tail.
#[inline]
fn ln_weights(x: f64, mu_c: f64, tau_c: f64) -> (f64, f64) {
    let t = (x - mu_c) / tau_c;
    if t > 0.0 {
        let lo = (1.0 / t).atan() / PI;
        (lo.ln(), (-lo).ln_1p())
    } else if t < 0.0 {
        let hi = (-1.0 / t).atan() / PI;
        ((-hi).ln_1p(), hi.ln())
    } else {
        (0.5f64.ln(), 0.5f64.ln())
    }
}

/// Integrate `f` over `[a, b]` (b may be ∞), splitting at the interior `cuts`.
fn integrate_split<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, cuts: &[f64], opts: &QuadOptions) -> Result<f64> {
    let mut pts: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b && c.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    for &c in &pts {
        total += integrate(f, lo, c, opts)?.value;
        lo = c;
    }
    total += if b.is_infinite() {
        integrate_to_infinity(f, lo, opts)?.value
    } else {
        integrate(f, lo, b, opts)?.value
    };
    Ok(total)
}

/// `Z = 1 + I/π` for an arbitrary density difference `f₂ − f₁`.
fn normconst_from_difference<F: Fn(f64) -> f64>(diff: F, mu_c: f64, tau_c: f64, cuts: &[f64]) -> Result<f64> {
    let integrand = |x: f64| {
        let d = diff(x);
        if d == 0.0 {
            0.0
        } else {
            d * ((x - mu_c) / tau_c).atan()
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-11,
        rel_tol: Z_REL_TOL,
        max_intervals: 4000,
    };
    let i = integrate_split(&integrand, 0.0, f64::INFINITY, cuts, &opts)
        .map_err(|e| Error::Numerical(format!("normalizing constant (mu_c={mu_c}, tau_c={tau_c}): {e}")))?;
    let z = 1.0 + i / PI;
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Numerical(format!("normalizing constant evaluated to {z}")));
    }
    Ok(z)
}

impl DynamicMixParams {
    /// `theta = (mu_c, tau_c, mu, sigma2, xi, beta)`.
    pub fn new(mu_c: f64, tau_c: f64, mu: f64, sigma2: f64, xi: f64, beta: f64) -> Result<Self> {
        Self::from_parts(mu_c, tau_c, LognParams::new(mu, sigma2)?, GpdParams::new(xi, beta)?)
    }

    pub fn from_parts(mu_c: f64, tau_c: f64, logn: LognParams, gpd: GpdParams) -> Result<Self> {
        check_finite("mu_c", mu_c)?;
        check_positive("tau_c", tau_c)?;
        let mut p = Self {
            mu_c,
            tau_c,
            logn,
            gpd,
            z_cache: f64::NAN,
        };
        p.z_cache = p.compute_normconst()?;
        Ok(p)
    }

    pub fn mu_c(&self) -> f64 {
        self.mu_c
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }

    pub fn logn(&self) -> &LognParams {
        &self.logn
    }

    pub fn gpd(&self) -> &GpdParams {
        &self.gpd
    }

    /// Cached normalizing constant.
    pub fn normconst(&self) -> f64 {
        self.z_cache
    }

    pub fn set_mu_c(&mut self, mu_c: f64) -> Result<()> {
        *self = Self::from_parts(mu_c, self.tau_c, self.logn, self.gpd)?;
        Ok(())
    }

    pub fn set_tau_c(&mut self, tau_c: f64) -> Result<()> {
        *self = Self::from_parts(self.mu_c, tau_c, self.logn, self.gpd)?;
        Ok(())
    }

    pub fn set_logn(&mut self, logn: LognParams) -> Result<()> {
        *self = Self::from_parts(self.mu_c, self.tau_c, logn, self.gpd)?;
        Ok(())
    }

    pub fn set_gpd(&mut self, gpd: GpdParams) -> Result<()> {
        *self = Self::from_parts(self.mu_c, self.tau_c, self.logn, gpd)?;
        Ok(())
    }

    /// Points where the integrands change character: lognormal median, Cauchy
    /// location and the GPD endpoint when ξ < 0.
    fn cuts(&self) -> Vec<f64> {
        let mut c = vec![self.logn.mu().exp(), self.mu_c, self.gpd.upper_bound()];
        let q = self.logn.quantile(0.999).unwrap_or(f64::INFINITY);
        c.push(q);
        c
    }

    /// Evaluate `Z` from scratch by quadrature.
    pub fn compute_normconst(&self) -> Result<f64> {
        let (l, g) = (self.logn, self.gpd);
        normconst_from_difference(|x| g.pdf(x) - l.pdf(x), self.mu_c, self.tau_c, &self.cuts())
    }

    /// Unnormalized density `(1 − w) f₁ + w f₂` in log space.
    #[inline]
    fn ln_numerator(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let (l1w, lw) = ln_weights(x, self.mu_c, self.tau_c);
        log_add_exp(l1w + self.logn.ln_pdf(x), lw + self.gpd.ln_pdf(x))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_numerator(x) - self.z_cache.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Per-point weights `(1 − w(x))/Z` and `w(x)/Z` on the two component densities.
    pub fn component_weights(&self, x: f64) -> (f64, f64) {
        let w = cauchy_cdf(x, self.mu_c, self.tau_c);
        ((1.0 - w) / self.z_cache, w / self.z_cache)
    }

    fn quad_opts() -> QuadOptions {
        QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_intervals: 4000,
        }
    }

    fn mass_between(&self, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let f = |x: f64| self.pdf(x);
        integrate_split(&f, a, b, &self.cuts(), &Self::quad_opts())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.mass_between(0.0, x)?.clamp(0.0, 1.0))
    }

    pub fn sf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(1.0);
        }
        Ok(self.mass_between(x, f64::INFINITY)?.clamp(0.0, 1.0))
    }

    /// CDF at each point of an ascending slice, integrating piecewise.
    pub fn cdf_sorted(&self, sorted: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &x in sorted {
            if x < prev {
                return Err(Error::Data("cdf_sorted requires ascending input".into()));
            }
            if x > 0.0 {
                acc += self.mass_between(prev, x)?;
                prev = x;
            }
            out.push(acc.clamp(0.0, 1.0));
        }
        Ok(out)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        let mut hi = self.logn.quantile(u)?.max(self.gpd.quantile(u)?);
        let tail = 1.0 - u;
        let mut guard = 0;
        while self.sf(hi)? > tail {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Numerical(format!("could not bracket quantile {u}")));
            }
        }
        let f = |x: f64| {
            if u <= 0.5 {
                self.cdf(x).map(|c| c - u).unwrap_or(f64::NAN)
            } else {
                self.sf(x).map(|s| tail - s).unwrap_or(f64::NAN)
            }
        };
        brent_root(f, 0.0, hi, 1e-12 * hi, 200)
    }

    /// Accept–reject from the envelope `f₁ + f₂`; acceptance probability is `Z/2`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        let rate = self.z_cache / 2.0;
        if rate < 1e-3 {
            return Err(Error::Envelope(rate));
        }
        let mut out = Vec::with_capacity(n);
        let mut proposals = 0usize;
        while out.len() < n {
            proposals += 1;
            let x = if rng.gen::<bool>() {
                self.logn.sample_one(rng)
            } else {
                self.gpd.sample_one(rng)
            };
            let f1 = self.logn.pdf(x);
            let f2 = self.gpd.pdf(x);
            let env = f1 + f2;
            if env <= 0.0 {
                continue;
            }
            let w = cauchy_cdf(x, self.mu_c, self.tau_c);
            let target = (1.0 - w) * f1 + w * f2;
            if rng.gen::<f64>() * env <= target {
                out.push(x);
            }
            if proposals > 10_000 && (out.len() as f64) < 1e-3 * proposals as f64 {
                return Err(Error::Envelope(out.len() as f64 / proposals as f64));
            }
        }
        Ok(out)
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.ln_pdf(v)).sum()
    }
}

impl LossModel for DynamicMixParams {
    fn ln_pdf(&self, x: f64) -> f64 {
        DynamicMixParams::ln_pdf(self, x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        DynamicMixParams::cdf(self, x)
    }
    fn cdf_sorted(&self, sorted: &[f64]) -> Result<Vec<f64>> {
        DynamicMixParams::cdf_sorted(self, sorted)
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        DynamicMixParams::quantile(self, u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        DynamicMixParams::sample(self, rng, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicFit {
    pub params: DynamicMixParams,
    pub loglik: f64,
    pub converged: bool,
    pub starts: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DynamicMleOptions {
    pub starts: usize,
    pub max_evals: usize,
}

impl Default for DynamicMleOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_evals: 3000,
        }
    }
}

fn dyn_from_vector(v: &[f64]) -> Result<DynamicMixParams> {
    if v[4] <= -1.0 {
        return Err(Error::Parameter {
            name: "xi",
            value: v[4],
            reason: "likelihood unbounded for xi <= -1",
        });
    }
    DynamicMixParams::new(v[0], v[1].exp(), v[2], v[3].exp(), v[4], v[5].exp())
}

/// Direct maximum likelihood over `(μ_c, log τ, μ, log σ², ξ, log β)`.
pub fn dyn_mle(x: &[f64]) -> Result<DynamicFit> {
    dyn_mle_with(x, &DynamicMleOptions::default())
}

pub fn dyn_mle_with(x: &[f64], opts: &DynamicMleOptions) -> Result<DynamicFit> {
    check_sample(x)?;
    if x.len() < 20 {
        return Err(Error::Data(format!(
            "dynamic mixture fit needs at least 20 observations, got {}",
            x.len()
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);

    // Seed the body/tail components from the static fit; fall back to the
    // separate full-sample fits if EM fails.
    let (logn, gpd) = match fit_em(&sorted, &EmConfig { max_iter: 200, ..EmConfig::default() }) {
        Ok(r) => (*r.theta_hat.logn(), *r.theta_hat.gpd()),
        Err(_) => (LognParams::fit(&sorted)?, gpd_mle(&sorted)?),
    };
    let median = empirical_quantile(&sorted, 0.5);
    let iqr = (empirical_quantile(&sorted, 0.75) - empirical_quantile(&sorted, 0.25)).max(1e-6 * median);
    let base = [
        median,
        (0.5 * iqr).ln(),
        logn.mu(),
        logn.sigma2().ln(),
        gpd.xi().max(-0.5),
        gpd.beta().ln(),
    ];

    let nm = NelderMeadOptions {
        x_tol: 1e-7,
        f_tol: 1e-9,
        max_evals: opts.max_evals,
    };
    let scale = sorted.len() as f64;
    let neg = |v: &[f64]| match dyn_from_vector(v) {
        Ok(p) => -p.loglik(&sorted) / scale,
        Err(_) => f64::INFINITY,
    };
    let steps = [0.5 * iqr.max(0.1), 0.3, 0.2, 0.3, 0.1, 0.3];
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(0x00d1_a2b3);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in 0..opts.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            base.to_vec()
        } else {
            base.iter()
                .zip(&steps)
                .map(|(b, st)| b + st * (2.0 * jitter_rng.gen::<f64>() - 1.0))
                .collect()
        };
        if !neg(&start).is_finite() {
            continue;
        }
        let r = nelder_mead(neg, &start, &steps, &nm);
        if r.f.is_finite() && best.as_ref().is_none_or(|b| r.f < b.1) {
            best = Some((r.x, r.f, r.converged));
        }
    }
    let (v, f, converged) = best.ok_or_else(|| Error::Estimation("dynamic MLE: every start failed".into()))?;
    Ok(DynamicFit {
        params: dyn_from_vector(&v)?,
        loglik: -f * scale,
        converged,
        starts: opts.starts.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn fig3() -> DynamicMixParams {
        DynamicMixParams::new(1.0, 2.0, 0.0, 0.25, 0.25, 3.5).unwrap()
    }

    #[test]
    fn weight_values() {
        assert_eq!(dyn_weight(1.0, 1.0, 2.0).unwrap(), 0.5);
        assert!((dyn_weight(3.0, 1.0, 2.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(dyn_weight(1e300, 1.0, 2.0).unwrap() > 1.0 - 1e-15);
        assert!(dyn_weight(1.0, 1.0, 0.0).is_err());
        let (a, b) = ln_weights(1e8, 1.0, 2.0);
        assert!((a.exp() + b.exp() - 1.0).abs() < 1e-15 && a.is_finite());
    }

    #[test]
    fn normconst_limits() {
        let far = DynamicMixParams::new(-1e10, 2.0, 0.0, 0.25, 0.25, 3.5).unwrap();
        assert!((far.normconst() - 1.0).abs() < 1e-8);
        let z = normconst_from_difference(|_| 0.0, 1.0, 2.0, &[1.0]).unwrap();
        assert_eq!(z, 1.0);
    }

    #[test]
    fn normalized_density_integrates_to_one() {
        let p = fig3();
        assert!(p.normconst() > 1.0);
        let opts = QuadOptions::default();
        let total = integrate_split(&|x| p.pdf(x), 0.0, f64::INFINITY, &[0.5, 1.0, 3.0, 10.0], &opts).unwrap();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn tail_ratio_tends_to_inverse_z() {
        let p = fig3();
        let x = 1e6;
        let ratio = p.pdf(x) / p.gpd().pdf(x);
        let w = cauchy_cdf(x, 1.0, 2.0);
        assert!((ratio - w / p.normconst()).abs() < 1e-9);
        assert!((ratio - 1.0 / p.normconst()).abs() < 1e-5);
    }

    #[test]
    fn setters_refresh_cache() {
        let mut p = fig3();
        let before = p.normconst();
        p.set_mu_c(3.0).unwrap();
        let fresh = DynamicMixParams::new(3.0, 2.0, 0.0, 0.25, 0.25, 3.5).unwrap();
        assert_ne!(before, p.normconst());
        assert_eq!(p.normconst(), fresh.normconst());
        assert_eq!(p.normconst(), p.compute_normconst().unwrap());
        p.set_gpd(GpdParams::new(0.4, 2.0).unwrap()).unwrap();
        assert_eq!(p.normconst(), p.compute_normconst().unwrap());
    }

    #[test]
    fn cdf_and_quantile_agree() {
        let p = fig3();
        for u in [0.1, 0.5, 0.95] {
            let q = p.quantile(u).unwrap();
            assert!((p.cdf(q).unwrap() - u).abs() < 1e-8);
        }
        let pts = [0.3, 1.0, 2.0, 8.0, 40.0];
        let c = p.cdf_sorted(&pts).unwrap();
        for (x, ci) in pts.iter().zip(&c) {
            assert!((p.cdf(*x).unwrap() - ci).abs() < 1e-9);
        }
    }

    #[test]
    fn sampler_acceptance_and_mean() {
        let p = fig3();
        assert!(p.normconst() / 2.0 >= 0.5);
        let mut rng = stream_rng(21, 0);
        assert!(p.sample(&mut rng, 0).unwrap().is_empty());
        let n = 50_000;
        let xs = p.sample(&mut rng, n).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let want = integrate_split(&|x| x * p.pdf(x), 0.0, f64::INFINITY, &[1.0, 10.0], &QuadOptions::default()).unwrap();
        assert!((mean - want).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {want}");
    }
}
