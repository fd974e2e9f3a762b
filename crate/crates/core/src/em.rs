//! EM estimation of the static lognormal–GPD mixture.
//!
//! Each iteration computes posterior lognormal memberships (E-step), updates
//! `(p, μ, η)` in closed form and maximizes the posterior-weighted GPD
//! log-likelihood over `(ξ, log β)` with Nelder–Mead, warm-started at the
//! previous iterate. Iteration stops when the largest absolute change in the
//! raw vector `(p, μ, η, ξ, β)` drops below `tol`.
//!
//! Because β is usually the largest coordinate it is typically the last to
//! settle; no rescaling is applied.

use serde::{Deserialize, Serialize};

use crate::distributions::{GpdParams, LognParams, XI_ZERO};
use crate::error::{check_sample, Error, Result};
use crate::mixture::{log_add_exp, StaticMixParams};
use crate::optimize::{nelder_mead, NelderMeadOptions};

/// Posterior weights at or below this are treated as structural zeros when
/// checking the GPD support.
pub const SUPPORT_WEIGHT_EPS: f64 = 1e-12;

/// Bounds applied to the mixing weight between iterations.
pub const P_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub optimizer_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            optimizer_restarts: 2,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Parameter {
                name: "tol",
                value: self.tol,
                reason: "must be finite and > 0",
            });
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter {
                name: "max_iter",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: StaticMixParams,
    /// Observed log-likelihood at θ⁽⁰⁾, θ⁽¹⁾, ..., θ̂.
    pub loglik_trace: Vec<f64>,
    /// Posterior lognormal membership τᵢ₁ at θ̂, in input order.
    pub posteriors: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// The mixing weight hit [`P_FLOOR`] or `1 − P_FLOOR` at least once.
    pub weight_clamped: bool,
    /// GPD M-steps whose simplex search did not converge even after restarts.
    pub gpd_step_failures: usize,
}

impl FitReport {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds at least the initial value")
    }
}

/// Posterior probabilities τᵢ₁ that each observation is lognormal.
pub fn e_step(x: &[f64], theta: &StaticMixParams) -> Result<Vec<f64>> {
    check_sample(x)?;
    e_step_with_loglik(x, theta).map(|(tau, _)| tau)
}

/// E-step plus the observed log-likelihood, which falls out of the same terms.
fn e_step_with_loglik(x: &[f64], theta: &StaticMixParams) -> Result<(Vec<f64>, f64)> {
    let mut tau = Vec::with_capacity(x.len());
    let mut ll = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let (a, b) = theta.component_ln_pdfs(xi);
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            return Err(Error::DegenerateSupport { index: i, value: xi });
        }
        // τ = 1 / (1 + exp(Δ)), Δ = log((1−p) f₂) − log(p f₁)
        tau.push(1.0 / (1.0 + (b - a).exp()));
        ll += log_add_exp(a, b);
    }
    Ok((tau, ll))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormStep {
    pub p: f64,
    pub mu: f64,
    pub eta: f64,
}

/// Closed-form updates of `(p, μ, η)` given posterior weights τᵢ₁.
pub fn m_step_closed(x: &[f64], tau: &[f64]) -> Result<ClosedFormStep> {
    if x.len() != tau.len() {
        return Err(Error::Data(format!(
            "{} observations but {} weights",
            x.len(),
            tau.len()
        )));
    }
    let n = x.len() as f64;
    let sum_tau: f64 = tau.iter().sum();
    if !(sum_tau > 0.0) {
        return Err(Error::EmptyComponent(1));
    }
    let p = sum_tau / n;
    let np = n * p;
    let mu = x.iter().zip(tau).map(|(v, t)| t * v.ln()).sum::<f64>() / np;
    let eta = x
        .iter()
        .zip(tau)
        .map(|(v, t)| t * (v.ln() - mu).powi(2))
        .sum::<f64>()
        / np;
    Ok(ClosedFormStep { p, mu, eta })
}

/// `Σ wᵢ log f₂(xᵢ; ξ, β)`. Returns `-∞` when a point with weight above
/// [`SUPPORT_WEIGHT_EPS`] falls outside the support, and for `ξ <= −1`, where
/// the likelihood is unbounded as the endpoint approaches the sample maximum.
pub fn weighted_gpd_objective(x: &[f64], w: &[f64], xi: f64, beta: f64) -> f64 {
    if !(beta > 0.0 && beta.is_finite() && xi.is_finite()) || xi <= -1.0 {
        return f64::NEG_INFINITY;
    }
    let mut total_w = 0.0;
    let mut acc = 0.0;
    if xi.abs() < XI_ZERO {
        for (&v, &wi) in x.iter().zip(w) {
            total_w += wi;
            acc += wi * v;
        }
        return -total_w * beta.ln() - acc / beta;
    }
    let scale = xi / beta;
    for (&v, &wi) in x.iter().zip(w) {
        let s = scale * v;
        if s <= -1.0 {
            if wi > SUPPORT_WEIGHT_EPS {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        total_w += wi;
        acc += wi * s.ln_1p();
    }
    -total_w * beta.ln() - (1.0 / xi + 1.0) * acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdStep {
    pub params: GpdParams,
    pub objective: f64,
    /// False when every simplex run stalled; `params` is then the best point seen.
    pub converged: bool,
}

const GPD_NM: NelderMeadOptions = NelderMeadOptions {
    x_tol: 1e-11,
    f_tol: 1e-14,
    max_evals: 2000,
};

/// Maximize the posterior-weighted GPD log-likelihood, starting from `warm_start`.
pub fn m_step_gpd(x: &[f64], tau2: &[f64], warm_start: GpdParams) -> Result<GpdStep> {
    m_step_gpd_with(x, tau2, warm_start, [0.05, 0.05], EmConfig::default().optimizer_restarts)
}

fn m_step_gpd_with(
    x: &[f64],
    tau2: &[f64],
    warm_start: GpdParams,
    steps: [f64; 2],
    restarts: usize,
) -> Result<GpdStep> {
    if x.len() != tau2.len() {
        return Err(Error::Data(format!(
            "{} observations but {} weights",
            x.len(),
            tau2.len()
        )));
    }
    let total_w: f64 = tau2.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::EmptyComponent(2));
    }
    // Minimize the per-unit-weight negative objective in (ξ, log β).
    let neg = |p: &[f64]| -weighted_gpd_objective(x, tau2, p[0], p[1].exp()) / total_w;

    let mut start = [warm_start.xi(), warm_start.beta().ln()];
    let warm_f = neg(&start);
    if !warm_f.is_finite() {
        // Previous iterate infeasible for these weights: fall back to a point
        // whose support covers every observation.
        let xmax = x.iter().cloned().fold(0.0, f64::max);
        let mean = x.iter().zip(tau2).map(|(v, w)| v * w).sum::<f64>() / total_w;
        start = [0.1, (mean * 0.9).max(xmax * 1e-3).ln()];
    }

    let mut best = nelder_mead(neg, &start, &steps, &GPD_NM);
    let mut converged = best.converged;
    let mut attempt = 0;
    while !converged && attempt < restarts {
        attempt += 1;
        // Deterministic jitter keeps fits reproducible and order independent.
        let k = attempt as f64;
        let jitter = [0.1 * k * if attempt % 2 == 0 { -1.0 } else { 1.0 }, 0.1 * k];
        let from = [best.x[0] + 0.2 * jitter[0], best.x[1] + 0.2 * jitter[1]];
        let r = nelder_mead(neg, &from, &[0.1 * (1.0 + k), 0.1 * (1.0 + k)], &GPD_NM);
        if r.f < best.f || (r.converged && r.f <= best.f) {
            converged = r.converged;
            best = r;
        }
    }

    let (xi, log_beta, f) = if best.f <= warm_f || !warm_f.is_finite() {
        (best.x[0], best.x[1], best.f)
    } else {
        (start[0], start[1], warm_f)
    };
    if !f.is_finite() {
        return Err(Error::Estimation(
            "weighted GPD objective is not finite anywhere the optimizer looked".into(),
        ));
    }
    Ok(GpdStep {
        params: GpdParams::new(xi, log_beta.exp())?,
        objective: -f * total_w,
        converged,
    })
}

/// Unweighted GPD maximum likelihood, started at ξ₀ = 0.1, β₀ = mean·(1 − ξ₀).
pub fn gpd_mle(x: &[f64]) -> Result<GpdParams> {
    check_sample(x)?;
    if x.len() < 2 {
        return Err(Error::Data("GPD fit needs at least 2 observations".into()));
    }
    let w = vec![1.0; x.len()];
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let xi0 = 0.1;
    let start = GpdParams::new(xi0, mean * (1.0 - xi0))?;
    Ok(m_step_gpd_with(x, &w, start, [0.2, 0.2], 2)?.params)
}

/// Initial mixing weight `#{y : y < median(y)} / n`.
pub fn initial_weight(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    s.iter().filter(|&&v| v < median).count() as f64 / n as f64
}

/// Starting point: median-split weight, full-sample lognormal and GPD MLEs.
pub fn initialize(x: &[f64]) -> Result<StaticMixParams> {
    check_sample(x)?;
    if x.len() < 5 {
        return Err(Error::Initialization(format!(
            "need at least 5 observations, got {}",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Initialization("all observations are identical".into()));
    }
    let p0 = initial_weight(x).clamp(P_FLOOR, 1.0 - P_FLOOR);
    let logn = LognParams::fit(x)?;
    let gpd = gpd_mle(x).map_err(|e| Error::Initialization(format!("GPD MLE: {e}")))?;
    StaticMixParams::from_parts(p0, logn, gpd)
}

fn em_iteration(
    x: &[f64],
    tau: &[f64],
    theta: &StaticMixParams,
    steps: [f64; 2],
    restarts: usize,
) -> Result<(StaticMixParams, bool, bool)> {
    let closed = m_step_closed(x, tau)?;
    let clamped = !(P_FLOOR..=1.0 - P_FLOOR).contains(&closed.p);
    let p = closed.p.clamp(P_FLOOR, 1.0 - P_FLOOR);
    if !(closed.eta > 0.0) {
        return Err(Error::Numerical(format!(
            "lognormal variance collapsed to {}",
            closed.eta
        )));
    }
    let tau2: Vec<f64> = tau.iter().map(|t| 1.0 - t).collect();
    let gpd_step = m_step_gpd_with(x, &tau2, *theta.gpd(), steps, restarts)?;
    let next = StaticMixParams::from_parts(p, LognParams::new(closed.mu, closed.eta)?, gpd_step.params)?;
    Ok((next, clamped, gpd_step.converged))
}

/// Fit the static mixture by EM from [`initialize`].
///
/// The sample is processed in sorted order, so the estimates do not depend on
/// the order of `x`; `posteriors` are reported in the caller's order.
pub fn fit_em(x: &[f64], cfg: &EmConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_sample(x)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();

    let mut theta = initialize(&xs)?;
    let (mut tau, ll0) = e_step_with_loglik(&xs, &theta)?;
    let mut trace = vec![ll0];
    let mut weight_clamped = false;
    let mut failures = 0;
    let mut converged = false;
    let mut n_iter = 0;
    let mut steps = [0.05, 0.05];

    while n_iter < cfg.max_iter {
        n_iter += 1;
        let (next, clamped, gpd_ok) = em_iteration(&xs, &tau, &theta, steps, cfg.optimizer_restarts)?;
        weight_clamped |= clamped;
        if !gpd_ok {
            failures += 1;
        }
        let old = theta.as_vector();
        let new = next.as_vector();
        let change = old
            .iter()
            .zip(&new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d_xi = (new[3] - old[3]).abs();
        let d_lb = (new[4].ln() - old[4].ln()).abs();
        steps = [(4.0 * d_xi).clamp(1e-7, 0.05), (4.0 * d_lb).clamp(1e-7, 0.05)];

        theta = next;
        let (t, ll) = e_step_with_loglik(&xs, &theta)?;
        tau = t;
        trace.push(ll);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut posteriors = vec![0.0; x.len()];
    for (k, &i) in order.iter().enumerate() {
        posteriors[i] = tau[k];
    }
    Ok(FitReport {
        theta_hat: theta,
        loglik_trace: trace,
        posteriors,
        n_iter,
        converged,
        weight_clamped,
        gpd_step_failures: failures,
    })
}

/// Label each observation lognormal (`true`) iff τᵢ₁ ≥ `cut`.
pub fn classify(report: &FitReport, cut: f64) -> Vec<bool> {
    report.posteriors.iter().map(|&t| t >= cut).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn e_step_symmetry_and_degenerate_weight() {
        // p = 0.5 and f₁(x) = f₂(x): pick x where the two densities cross.
        let theta = StaticMixParams::new(0.5, 0.0, 1.0, 0.0, 1.0).unwrap();
        let f = |x: f64| theta.logn().pdf(x) - theta.gpd().pdf(x);
        let x0 = crate::optimize::brent_root(f, 0.05, 0.5, 1e-15, 200).unwrap();
        let tau = e_step(&[x0], &theta).unwrap();
        assert!((tau[0] - 0.5).abs() < 1e-10);

        let theta = StaticMixParams::new(1.0 - 1e-12, 0.0, 1.0, 0.2, 1.0).unwrap();
        let tau = e_step(&[0.5, 1.0, 3.0], &theta).unwrap();
        assert!(tau.iter().all(|&t| t > 1.0 - 1e-9));
    }

    #[test]
    fn e_step_far_tail_goes_to_gpd() {
        let theta = StaticMixParams::new(0.9, 0.0, 0.25, 0.25, 3.5).unwrap();
        let x = theta.logn().quantile(0.9999).unwrap() * 1.5;
        let tau = e_step(&[x, 1e6], &theta).unwrap();
        assert!(tau[0] < 0.01 && tau[1] < 1e-12);
    }

    #[test]
    fn e_step_degenerate_support() {
        // GPD bounded at 1, lognormal underflows at x = 1e300.
        let theta = StaticMixParams::new(0.5, 0.0, 1e-4, -0.5, 0.5).unwrap();
        match e_step(&[0.2, 1e300], &theta) {
            Err(Error::DegenerateSupport { index: 1, .. }) => {}
            other => {
                // ln f₁ stays finite in log space, so no degeneracy is also acceptable
                let tau = other.unwrap();
                assert_eq!(tau[1], 1.0);
            }
        }
        assert!(e_step(&[1.0, -1.0], &theta).is_err());
    }

    #[test]
    fn closed_form_reductions() {
        let x = [0.5, 1.2, 2.0, 3.3, 0.8];
        let logs: Vec<f64> = x.iter().map(|v: &f64| v.ln()).collect();
        let m = logs.iter().sum::<f64>() / 5.0;
        let v = logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / 5.0;
        let s = m_step_closed(&x, &[1.0; 5]).unwrap();
        assert!((s.p - 1.0).abs() < 1e-15 && (s.mu - m).abs() < 1e-14 && (s.eta - v).abs() < 1e-14);
        let s = m_step_closed(&x, &[0.5; 5]).unwrap();
        assert!((s.p - 0.5).abs() < 1e-15 && (s.mu - m).abs() < 1e-14 && (s.eta - v).abs() < 1e-14);
        assert_eq!(m_step_closed(&x, &[0.0; 5]), Err(Error::EmptyComponent(1)));
    }

    #[test]
    fn gpd_step_constant_weights_match_unweighted() {
        let g = GpdParams::new(0.5, 3.5).unwrap();
        let mut rng = stream_rng(11, 0);
        let x = g.sample(&mut rng, 2000);
        let start = GpdParams::new(0.1, 3.0).unwrap();
        let a = m_step_gpd(&x, &vec![1.0; x.len()], start).unwrap();
        let b = m_step_gpd(&x, &vec![0.3; x.len()], start).unwrap();
        assert!((a.params.xi() - b.params.xi()).abs() < 1e-7);
        assert!((a.params.beta() - b.params.beta()).abs() < 1e-6);
        assert!(a.objective >= weighted_gpd_objective(&x, &vec![1.0; x.len()], 0.1, 3.0));
    }

    #[test]
    fn gpd_step_recovers_truth_at_large_n() {
        let g = GpdParams::new(0.5, 3.5).unwrap();
        let mut rng = stream_rng(12, 0);
        let x = g.sample(&mut rng, 10_000);
        let fit = gpd_mle(&x).unwrap();
        assert!((fit.xi() - 0.5).abs() < 0.05, "{fit:?}");
        assert!((fit.beta() - 3.5).abs() / 3.5 < 0.05, "{fit:?}");
    }

    #[test]
    fn gpd_objective_support_rules() {
        let x = [1.0, 2.0, 5.0];
        // ξ = −0.5, β = 2 → support [0, 4]: x = 5 is outside.
        assert_eq!(weighted_gpd_objective(&x, &[1.0, 1.0, 1.0], -0.5, 2.0), f64::NEG_INFINITY);
        assert!(weighted_gpd_objective(&x, &[1.0, 1.0, 0.0], -0.5, 2.0).is_finite());
        assert_eq!(weighted_gpd_objective(&x, &[1.0; 3], -1.2, 20.0), f64::NEG_INFINITY);
    }

    #[test]
    fn initial_weight_counts() {
        assert_eq!(initial_weight(&[1.0, 2.0, 3.0, 4.0]), 0.5);
        assert_eq!(initial_weight(&[1.0, 2.0, 3.0, 4.0, 5.0]), 0.4);
        assert_eq!(initial_weight(&[1.0, 1.0, 1.0, 2.0, 3.0]), 0.0);
        assert!(initialize(&[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(initialize(&[2.0; 10]).is_err());
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = initialize(&x).unwrap();
        let l = LognParams::fit(&x).unwrap();
        assert_eq!(t.logn(), &l);
        assert_eq!(t.p(), 0.5);
    }

    #[test]
    fn classify_tie_rule() {
        let theta = StaticMixParams::new(0.5, 0.0, 1.0, 0.1, 1.0).unwrap();
        let r = FitReport {
            theta_hat: theta,
            loglik_trace: vec![0.0],
            posteriors: vec![1.0, 0.5, 0.49, 0.0],
            n_iter: 0,
            converged: true,
            weight_clamped: false,
            gpd_step_failures: 0,
        };
        assert_eq!(classify(&r, 0.5), vec![true, true, false, false]);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_em(&[1.0, 2.0, 0.0, 3.0, 4.0], &EmConfig::default()), Err(Error::Data(_))));
        let cfg = EmConfig { tol: 0.0, ..EmConfig::default() };
        assert!(fit_em(&[1.0, 2.0, 3.0, 4.0, 5.0], &cfg).is_err());
    }

    #[test]
    fn fit_monotone_and_fixed_point() {
        let truth = StaticMixParams::new(0.9, 0.0, 0.25, 0.5, 3.5).unwrap();
        let mut rng = stream_rng(99, 1);
        let x = truth.sample(&mut rng, 500);
        let cfg = EmConfig::default();
        let r = fit_em(&x, &cfg).unwrap();
        assert!(r.converged, "n_iter = {}", r.n_iter);
        for w in r.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(r.posteriors.len(), x.len());
        // One more EM iteration from θ̂ stays put.
        let mut xs = x.clone();
        xs.sort_by(f64::total_cmp);
        let tau = e_step(&xs, &r.theta_hat).unwrap();
        let (next, _, _) = em_iteration(&xs, &tau, &r.theta_hat, [1e-6, 1e-6], 2).unwrap();
        for (a, b) in r.theta_hat.as_vector().iter().zip(next.as_vector()) {
            assert!((a - b).abs() < 10.0 * cfg.tol, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let truth = StaticMixParams::new(0.9, 0.0, 0.25, 0.25, 3.5).unwrap();
        let mut rng = stream_rng(3, 3);
        let x = truth.sample(&mut rng, 300);
        let mut y = x.clone();
        y.reverse();
        y.swap(0, 150);
        let a = fit_em(&x, &EmConfig::default()).unwrap();
        let b = fit_em(&y, &EmConfig::default()).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.loglik_trace, b.loglik_trace);
        assert_eq!(a.posteriors, e_step(&x, &a.theta_hat).unwrap());
    }
}
