//! Composite lognormal–Pareto: a lognormal right-truncated at `xmin` spliced
//! to a Pareto tail, with weight `r` and lognormal location `μ` pinned down
//! by continuity and differentiability at the junction.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::distributions::{ParetoParams, TruncLognParams};
use crate::error::{check_probability, check_sample, Error, Result};
use crate::model::LossModel;
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::risk::empirical_quantile;
use crate::special::std_normal_cdf;

/// Free parameters `(σ², α, xmin)` plus the derived `r` and `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComposite")]
pub struct CompositeParams {
    sigma2: f64,
    alpha: f64,
    xmin: f64,
    r: f64,
    mu: f64,
    #[serde(skip)]
    ln_r: f64,
    #[serde(skip)]
    ln_1m_r: f64,
    #[serde(skip)]
    body: TruncLognParams,
}

#[derive(Deserialize)]
struct RawComposite {
    sigma2: f64,
    alpha: f64,
    xmin: f64,
}

impl TryFrom<RawComposite> for CompositeParams {
    type Error = Error;
    fn try_from(r: RawComposite) -> Result<Self> {
        Self::new(r.sigma2, r.alpha, r.xmin)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `log k` where `k = √(2π)·ασ·Φ(ασ)·exp((ασ)²/2)` and `r = k/(k+1)`.
fn ln_splice_ratio(alpha: f64, sigma: f64) -> f64 {
    let a = alpha * sigma;
    0.5 * (2.0 * PI).ln() + a.ln() + std_normal_cdf(a).ln() + 0.5 * a * a
}

impl CompositeParams {
    pub fn new(sigma2: f64, alpha: f64, xmin: f64) -> Result<Self> {
        crate::error::check_positive("sigma2", sigma2)?;
        crate::error::check_positive("alpha", alpha)?;
        crate::error::check_positive("xmin", xmin)?;
        let sigma = sigma2.sqrt();
        let lk = ln_splice_ratio(alpha, sigma);
        let ln_r = -softplus(-lk);
        let ln_1m_r = -softplus(lk);
        let mu = xmin.ln() - alpha * sigma2;
        let body = TruncLognParams::new(mu, sigma2, xmin)?;
        Ok(Self {
            sigma2,
            alpha,
            xmin,
            r: ln_r.exp(),
            mu,
            ln_r,
            ln_1m_r,
            body,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    /// Body weight.
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn body(&self) -> TruncLognParams {
        self.body
    }

    pub fn tail(&self) -> ParetoParams {
        ParetoParams::new(self.xmin, self.alpha).expect("validated in constructor")
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            f64::NEG_INFINITY
        } else if x <= self.xmin {
            self.ln_r + self.body().ln_pdf(x)
        } else {
            self.ln_1m_r + self.tail().ln_pdf(x)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xmin {
            self.r * self.body().cdf(x)
        } else {
            1.0 - self.sf(x)
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.xmin {
            1.0 - self.cdf(x)
        } else {
            (1.0 - self.r) * (self.xmin / x).powf(self.alpha)
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_probability(u)?;
        if u <= self.r {
            if u == self.r {
                return Ok(self.xmin);
            }
            self.body().quantile(u / self.r)
        } else {
            Ok(self.xmin * ((1.0 - self.r) / (1.0 - u)).powf(1.0 / self.alpha))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let body = self.body();
        let tail = self.tail();
        (0..n)
            .map(|_| {
                if rng.gen::<f64>() < self.r {
                    body.sample_one(rng)
                } else {
                    tail.sample_one(rng)
                }
            })
            .collect()
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.ln_pdf(v)).sum()
    }
}

impl LossModel for CompositeParams {
    fn ln_pdf(&self, x: f64) -> f64 {
        CompositeParams::ln_pdf(self, x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        Ok(CompositeParams::cdf(self, x))
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        CompositeParams::quantile(self, u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        Ok(CompositeParams::sample(self, rng, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeFit {
    pub params: CompositeParams,
    pub loglik: f64,
    pub converged: bool,
}

/// Log-likelihood from precomputed logs; avoids re-deriving `r`, `μ` per point.
fn composite_loglik_logs(log_x: &[f64], sigma2: f64, alpha: f64, xmin: f64) -> f64 {
    let Ok(p) = CompositeParams::new(sigma2, alpha, xmin) else {
        return f64::NEG_INFINITY;
    };
    let body = p.body();
    let lxmin = xmin.ln();
    let body_const = p.ln_r - body.mass().ln() - 0.5 * (2.0 * PI).ln() - 0.5 * sigma2.ln();
    let tail_const = p.ln_1m_r + alpha.ln() + alpha * lxmin;
    let mut ll = 0.0;
    for &lx in log_x {
        if lx <= lxmin {
            let d = lx - p.mu;
            ll += body_const - lx - d * d / (2.0 * sigma2);
        } else {
            ll += tail_const - (alpha + 1.0) * lx;
        }
    }
    ll
}

/// Maximum likelihood over `(log σ², log α, log xmin)`, multi-started with
/// `xmin` at the 0.7, 0.8 and 0.9 sample quantiles.
pub fn composite_mle(x: &[f64]) -> Result<CompositeFit> {
    check_sample(x)?;
    if x.len() < 10 {
        return Err(Error::Data(format!(
            "composite fit needs at least 10 observations, got {}",
            x.len()
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let log_x: Vec<f64> = sorted.iter().map(|v| v.ln()).collect();
    let opts = NelderMeadOptions {
        x_tol: 1e-9,
        f_tol: 1e-11,
        max_evals: 4000,
    };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for level in [0.7, 0.8, 0.9] {
        let xmin0 = empirical_quantile(&sorted, level);
        let below: Vec<f64> = log_x.iter().copied().filter(|&l| l <= xmin0.ln()).collect();
        let above: Vec<f64> = log_x.iter().copied().filter(|&l| l > xmin0.ln()).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|l| (l - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let mut s2 = if below.len() >= 2 { var(&below) } else { var(&log_x) };
        if !(s2 > 0.0) {
            s2 = 0.25;
        }
        let hill = if above.is_empty() {
            1.0
        } else {
            let s: f64 = above.iter().map(|l| l - xmin0.ln()).sum();
            if s > 0.0 {
                above.len() as f64 / s
            } else {
                1.0
            }
        };
        let start = [s2.ln(), hill.ln(), xmin0.ln()];
        let neg = |p: &[f64]| -composite_loglik_logs(&log_x, p[0].exp(), p[1].exp(), p[2].exp());
        let r = nelder_mead(neg, &start, &[0.2, 0.2, 0.1], &opts);
        if r.f.is_finite() && best.as_ref().is_none_or(|b| r.f < b.1) {
            best = Some((r.x, r.f, r.converged));
        }
    }
    let (p, f, converged) =
        best.ok_or_else(|| Error::Estimation("composite MLE: every start failed".into()))?;
    Ok(CompositeFit {
        params: CompositeParams::new(p[0].exp(), p[1].exp(), p[2].exp())?,
        loglik: -f,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, integrate_to_infinity, QuadOptions};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn case1() -> CompositeParams {
        CompositeParams::new(0.25, 2.0, 5.0).unwrap()
    }

    #[test]
    fn splice_weight_from_phi_of_one() {
        // ασ = 1: k = √(2π)·Φ(1)·e^{1/2}
        let phi1 = 0.841_344_746_068_542_9;
        let k = (2.0 * PI).sqrt() * phi1 * 0.5f64.exp();
        let p = case1();
        assert!((p.r() - k / (k + 1.0)).abs() < 1e-14);
        assert!((p.mu() - (5f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn continuous_and_differentiable_at_junction() {
        let p = case1();
        let xm = p.xmin();
        // Each piece's formula extended across the junction.
        let body = |x: f64| p.r() / p.body().mass() * p.body().lognormal().pdf(x);
        let tail = |x: f64| (1.0 - p.r()) * p.alpha() * xm.powf(p.alpha()) * x.powf(-p.alpha() - 1.0);
        assert!(((body(xm) - tail(xm)) / tail(xm)).abs() < 1e-10);
        let h = 1e-4;
        let d_body = (body(xm + h) - body(xm - h)) / (2.0 * h);
        let d_tail = (tail(xm + h) - tail(xm - h)) / (2.0 * h);
        assert!(((d_body - d_tail) / d_tail).abs() < 1e-5, "{d_body} vs {d_tail}");
        // and the spliced density itself agrees on both sides
        assert!(((p.pdf(xm) - p.pdf(xm * (1.0 + 1e-12))) / p.pdf(xm)).abs() < 1e-10);
    }

    #[test]
    fn quantiles_at_junction_and_tail() {
        let p = case1();
        assert_eq!(p.quantile(p.r()).unwrap(), p.xmin());
        for (u, want) in [(0.95, 10.568), (0.99, 23.630)] {
            let q = p.quantile(u).unwrap();
            assert!((q - want).abs() < 0.01, "{u}: {q}");
        }
        // Tail inversion xmin·((1 − r)/(1 − u))^(1/α) evaluated directly.
        let direct = 5.0 * ((1.0 - p.r()) / 0.005f64).powf(0.5);
        assert!((p.quantile(0.995).unwrap() - direct).abs() < 1e-9 * direct);
        for u in [0.1, 0.5, 0.77, 0.9, 0.999] {
            let q = p.quantile(u).unwrap();
            assert!((p.cdf(q) - u).abs() < 1e-10);
        }
    }

    #[test]
    fn integrates_to_one() {
        let p = case1();
        let opts = QuadOptions::default();
        let a = integrate(|x| p.pdf(x), 0.0, p.xmin(), &opts).unwrap().value;
        let b = integrate_to_infinity(|x| p.pdf(x), p.xmin(), &opts).unwrap().value;
        assert!((a + b - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampler_branch_fraction() {
        let p = case1();
        let mut rng = stream_rng(8, 0);
        let n = 100_000;
        let xs = p.sample(&mut rng, n);
        let above = xs.iter().filter(|&&v| v > p.xmin()).count() as f64 / n as f64;
        let sd = (p.r() * (1.0 - p.r()) / n as f64).sqrt();
        assert!((above - (1.0 - p.r())).abs() < 3.0 * sd);
        assert!(p.sample(&mut rng, 0).is_empty());
    }

    #[test]
    fn mle_recovers_alpha_and_dominates_truth() {
        let p = case1();
        let mut rng = stream_rng(9, 0);
        let x = p.sample(&mut rng, 10_000);
        let fit = composite_mle(&x).unwrap();
        assert!((fit.params.alpha() - 2.0).abs() < 0.1, "{:?}", fit.params);
        assert!(fit.loglik >= p.loglik(&x) - 1e-9);
        assert!((fit.loglik - fit.params.loglik(&x)).abs() < 1e-6 * fit.loglik.abs());
    }

    #[test]
    fn mle_small_sample_is_clean() {
        let p = case1();
        let mut rng = stream_rng(10, 0);
        let x = p.sample(&mut rng, 10);
        let _ = composite_mle(&x);
        assert!(composite_mle(&x[..9]).is_err());
    }

    proptest! {
        #[test]
        fn continuity_for_random_params(s2 in 0.01..2.0f64, alpha in 0.3..5.0f64, xmin in 0.1..100.0f64) {
            let p = CompositeParams::new(s2, alpha, xmin).unwrap();
            let left = p.ln_r + p.body().ln_pdf(xmin);
            let right = p.ln_1m_r + p.tail().ln_pdf(xmin);
            prop_assert!((left - right).abs() < 1e-10, "{} vs {}", left, right);
        }
    }
}
