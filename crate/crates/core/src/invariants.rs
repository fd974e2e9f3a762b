//! Cross-module invariants exercised through the public API.

use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::{
    ad_stat, bootstrap, dyn_weight, e_step, gof_pboot, ks_stat, m_step_closed, stream_rng, GofTest,
    GpdParams, LognParams, StaticMixParams, StreamRng,
};
use proptest::prelude::*;

fn positive_sample(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-3..1e4f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posteriors_are_probabilities(
        x in positive_sample(40),
        p in 0.01..0.99f64, mu in -2.0..4.0f64, s2 in 0.05..3.0f64, xi in -0.5..1.5f64, beta in 0.1..50.0f64,
    ) {
        let theta = StaticMixParams::new(p, mu, s2, xi, beta).unwrap();
        let body = LognParams::new(mu, s2).unwrap();
        let tail = GpdParams::new(xi, beta).unwrap();
        // Negative shapes cap the GPD support; the lognormal part still covers every point.
        let tau = e_step(&x, &theta).unwrap();
        for (t1, v) in tau.into_iter().zip(&x) {
            prop_assert!((0.0..=1.0).contains(&t1));
            let a = p.ln() + body.ln_pdf(*v);
            let b = (1.0 - p).ln() + tail.ln_pdf(*v);
            let t2 = 1.0 / (1.0 + (a - b).exp());
            prop_assert!((t1 + t2 - 1.0).abs() < 1e-12, "{t1} + {t2}");
        }
    }

    #[test]
    fn cauchy_weight_strictly_increasing(mu_c in -5.0..20.0f64, tau in 0.05..10.0f64, a in 0.0..50.0f64, d in 1e-3..10.0f64) {
        let lo = dyn_weight(a, mu_c, tau).unwrap();
        let hi = dyn_weight(a + d, mu_c, tau).unwrap();
        prop_assert!(hi > lo, "{lo} !< {hi}");
        prop_assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn statistics_stay_in_range(x in positive_sample(25), mu in -1.0..5.0f64, s2 in 0.1..4.0f64) {
        let m = LognParams::new(mu, s2).unwrap();
        let n = x.len() as f64;
        let ks = ks_stat(&x, |v| m.cdf(v)).unwrap();
        prop_assert!(ks >= 0.5 / n - 1e-15 && ks <= 1.0);
        let (ad, _) = ad_stat(&x, |v| m.cdf(v)).unwrap();
        prop_assert!(ad.is_finite() && ad > -n);
    }

    #[test]
    fn closed_form_step_maximizes_weighted_lognormal(x in positive_sample(30), w in proptest::collection::vec(0.05..1.0f64, 30)) {
        let step = m_step_closed(&x, &w).unwrap();
        let weighted = |mu: f64, eta: f64| -> f64 {
            x.iter().zip(&w).map(|(v, t)| t * LognParams::new(mu, eta).unwrap().ln_pdf(*v)).sum()
        };
        let opts = NelderMeadOptions { x_tol: 1e-12, f_tol: 1e-15, max_evals: 20_000 };
        let r = nelder_mead(|q: &[f64]| -weighted(q[0], q[1].exp()), &[0.0, 0.0], &[1.0, 1.0], &opts);
        prop_assert!((r.x[0] - step.mu).abs() < 1e-6, "{} vs {}", r.x[0], step.mu);
        prop_assert!((r.x[1].exp() - step.eta).abs() < 1e-6 * step.eta.max(1.0), "{} vs {}", r.x[1].exp(), step.eta);
    }
}

#[test]
fn bootstrap_is_bit_reproducible_and_shift_equivariant() {
    let m = StaticMixParams::new(0.9, 0.0, 0.25, 0.5, 3.5).unwrap();
    let x = m.sample(&mut stream_rng(8, 0), 120);
    let median = |v: &[f64], _: &mut StreamRng| -> crate::Result<Vec<f64>> {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(vec![s[s.len() / 2]])
    };
    let a = bootstrap(&x, median, 80, 17).unwrap();
    let b = bootstrap(&x, median, 80, 17).unwrap();
    assert_eq!(a.replicates, b.replicates);
    assert_eq!(a.se, b.se);

    let shifted: Vec<f64> = x.iter().map(|v| v + 10.0).collect();
    let c = bootstrap(&shifted, median, 80, 17).unwrap();
    for (r, s) in a.replicates.iter().zip(&c.replicates) {
        assert_eq!(r[0] + 10.0, s[0]);
    }
}

#[test]
fn parametric_bootstrap_p_value_bounds() {
    let m = LognParams::new(0.5, 0.4).unwrap();
    let x = m.sample(&mut stream_rng(2, 0), 60);
    for (n_boot, seed) in [(19, 1), (39, 2)] {
        for test in [GofTest::Ks, GofTest::Ad] {
            let r = gof_pboot(&x, LognParams::fit, test, n_boot, seed).unwrap();
            let floor = 1.0 / (n_boot as f64 + 1.0);
            assert!(r.p_value >= floor && r.p_value <= 1.0, "{r:?}");
            assert_eq!(r, gof_pboot(&x, LognParams::fit, test, n_boot, seed).unwrap());
        }
    }
}
