//! Kolmogorov–Smirnov and Anderson–Darling statistics with
//! parametric-bootstrap p-values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::rng::stream_rng;

/// CDF values are clipped to `[AD_CLIP, 1 − AD_CLIP]` before taking logs.
pub const AD_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GofTest {
    #[serde(rename = "KS")]
    Ks,
    #[serde(rename = "AD")]
    Ad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub p_value: f64,
    pub test: GofTest,
    pub n_boot: usize,
    /// Replicates whose refit failed; they are dropped from the p-value.
    pub failures: usize,
    /// True when the observed AD statistic needed CDF clipping.
    pub clipped: bool,
}

fn check_uniforms(u: &[f64]) -> Result<()> {
    if u.len() < 2 {
        return Err(Error::Data(format!("goodness-of-fit needs n >= 2, got {}", u.len())));
    }
    if let Some(i) = u.iter().position(|v| v.is_nan()) {
        return Err(Error::Numerical(format!("CDF returned NaN at order statistic {i}")));
    }
    Ok(())
}

/// KS distance from ascending CDF values `F(x₍₁₎) ≤ … ≤ F(x₍ₙ₎)`.
pub fn ks_from_uniforms(u: &[f64]) -> Result<f64> {
    check_uniforms(u)?;
    let n = u.len() as f64;
    Ok(u.iter()
        .enumerate()
        .map(|(i, &f)| ((i as f64 + 1.0) / n - f).max(f - i as f64 / n))
        .fold(0.0, f64::max))
}

/// AD statistic from ascending CDF values; the flag reports clipping.
pub fn ad_from_uniforms(u: &[f64]) -> Result<(f64, bool)> {
    check_uniforms(u)?;
    let n = u.len();
    let mut clipped = false;
    let mut clip = |f: f64| {
        if !(AD_CLIP..=1.0 - AD_CLIP).contains(&f) {
            clipped = true;
        }
        f.clamp(AD_CLIP, 1.0 - AD_CLIP)
    };
    let c: Vec<f64> = u.iter().map(|&f| clip(f)).collect();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (c[i].ln() + (-c[n - 1 - i]).ln_1p()))
        .sum();
    Ok((-(n as f64) - s / n as f64, clipped))
}

fn uniforms_of(x: &[f64], cdf: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s.into_iter().map(cdf).collect()
}

pub fn ks_stat(x: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    ks_from_uniforms(&uniforms_of(x, cdf))
}

pub fn ad_stat(x: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, bool)> {
    ad_from_uniforms(&uniforms_of(x, cdf))
}

/// Sorted model CDF values at the sample, via the model's piecewise `cdf_sorted`.
pub fn model_uniforms<M: LossModel + ?Sized>(x: &[f64], model: &M) -> Result<Vec<f64>> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    model.cdf_sorted(&s)
}

fn statistics(u: &[f64], tests: &[GofTest]) -> Result<(Vec<f64>, bool)> {
    let mut out = Vec::with_capacity(tests.len());
    let mut clipped = false;
    for t in tests {
        out.push(match t {
            GofTest::Ks => ks_from_uniforms(u)?,
            GofTest::Ad => {
                let (a, c) = ad_from_uniforms(u)?;
                clipped |= c;
                a
            }
        });
    }
    Ok((out, clipped))
}

/// Plus-one p-value `(1 + #{boot ≥ observed}) / (n_boot + 1)`.
pub fn plus_one_p_value(observed: f64, boot: &[f64]) -> f64 {
    (1 + boot.iter().filter(|&&b| b >= observed).count()) as f64 / (boot.len() + 1) as f64
}

/// Parametric-bootstrap p-values for several tests sharing the same refits.
/// Replicate `b` simulates from the fitted model on stream `b` of `seed`.
pub fn gof_pboot_tests<M, F>(x: &[f64], fitter: F, tests: &[GofTest], n_boot: usize, seed: u64) -> Result<Vec<GofResult>>
where
    M: LossModel,
    F: Fn(&[f64]) -> Result<M> + Sync,
{
    if n_boot == 0 {
        return Err(Error::Data("n_boot must be positive".into()));
    }
    let fitted = fitter(x)?;
    let (observed, clipped) = statistics(&model_uniforms(x, &fitted)?, tests)?;
    let n = x.len();
    let boots: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let sim = fitted.sample(&mut rng, n).ok()?;
            let refit = fitter(&sim).ok()?;
            let u = model_uniforms(&sim, &refit).ok()?;
            statistics(&u, tests).ok().map(|s| s.0)
        })
        .collect();
    let failures = boots.iter().filter(|b| b.is_none()).count();
    if failures * 5 > n_boot {
        return Err(Error::Bootstrap {
            failed: failures,
            total: n_boot,
        });
    }
    let ok: Vec<Vec<f64>> = boots.into_iter().flatten().collect();
    Ok(tests
        .iter()
        .enumerate()
        .map(|(j, &test)| {
            let col: Vec<f64> = ok.iter().map(|r| r[j]).collect();
            GofResult {
                statistic: observed[j],
                p_value: plus_one_p_value(observed[j], &col),
                test,
                n_boot: col.len(),
                failures,
                clipped: clipped && test == GofTest::Ad,
            }
        })
        .collect())
}

pub fn gof_pboot<M, F>(x: &[f64], fitter: F, test: GofTest, n_boot: usize, seed: u64) -> Result<GofResult>
where
    M: LossModel,
    F: Fn(&[f64]) -> Result<M> + Sync,
{
    Ok(gof_pboot_tests(x, fitter, &[test], n_boot, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{LognParams, ParetoParams};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn plug_in_grid() {
        for n in [5usize, 40, 333] {
            let x: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
            let d = ks_stat(&x, |v| v).unwrap();
            assert!((d - 0.5 / n as f64).abs() < 1e-14);
            let (a, clipped) = ad_stat(&x, |v| v).unwrap();
            assert!(a > 0.0 && !clipped);
        }
        assert!(ks_stat(&[0.3], |v| v).is_err());
    }

    #[test]
    fn ad_hand_sum_n3() {
        let u = [1.0 / 6.0, 0.5, 5.0 / 6.0];
        let l = |v: f64| v.ln();
        let s = 1.0 * (l(u[0]) + l(1.0 - u[2])) + 3.0 * (l(u[1]) + l(1.0 - u[1])) + 5.0 * (l(u[2]) + l(1.0 - u[0]));
        let want = -3.0 - s / 3.0;
        let (a, _) = ad_from_uniforms(&u).unwrap();
        assert!((a - want).abs() < 1e-14, "{a} vs {want}");
    }

    #[test]
    fn ad_duplicate_pin_and_clipping() {
        let x = [0.1, 0.35, 0.5, 0.8];
        let dup = [0.1, 0.35, 0.5, 0.5, 0.8];
        let (a, _) = ad_stat(&x, |v| v).unwrap();
        let (b, _) = ad_stat(&dup, |v| v).unwrap();
        assert_ne!(a, b);
        assert_eq!(b, ad_stat(&[0.5, 0.8, 0.1, 0.5, 0.35], |v| v).unwrap().0);
        let (c, clipped) = ad_stat(&[0.0, 0.5, 1.0], |v| v).unwrap();
        assert!(clipped && c.is_finite());
        assert!(ks_stat(&[0.1, 0.2], |_| f64::NAN).is_err());
    }

    #[test]
    fn ks_null_scale() {
        let mut rng = stream_rng(12, 0);
        let x: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        assert!(ks_stat(&x, |v| v).unwrap() < 0.03);
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = stream_rng(13, 0);
        let x: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) * 10.0).collect();
        let g = |v: f64| (v / 10.0).cbrt();
        assert!((ks_stat(&x, |v| v).unwrap() - ks_stat(&y, g).unwrap()).abs() < 1e-12);
        assert!((ad_stat(&x, |v| v).unwrap().0 - ad_stat(&y, g).unwrap().0).abs() < 1e-9);
    }

    fn logn_fitter(x: &[f64]) -> Result<LognParams> {
        LognParams::fit(x)
    }

    #[test]
    fn null_p_values_look_uniform() {
        let truth = LognParams::new(1.0, 0.5).unwrap();
        let mut small = 0;
        for s in 0..10 {
            let mut rng = stream_rng(500 + s, 0);
            let x = truth.sample(&mut rng, 150);
            let r = gof_pboot(&x, logn_fitter, GofTest::Ks, 99, s).unwrap();
            assert!(r.p_value >= 1.0 / 100.0 && r.p_value <= 1.0);
            if r.p_value < 0.01 {
                small += 1;
            }
        }
        assert!(small <= 1);
    }

    #[test]
    fn detects_gross_misspecification() {
        let pareto = ParetoParams::new(1.0, 0.8).unwrap();
        let mut rng = stream_rng(77, 0);
        let x = pareto.sample(&mut rng, 300);
        let r = gof_pboot_tests(&x, logn_fitter, &[GofTest::Ks, GofTest::Ad], 99, 3).unwrap();
        for g in r {
            assert!(g.p_value < 0.05, "{g:?}");
            assert_eq!(g.n_boot, 99);
        }
    }

    proptest! {
        #[test]
        fn reorder_invariance(mut v in proptest::collection::vec(0.001..0.999f64, 2..50), k in 0usize..50) {
            let a = ks_stat(&v, |x| x).unwrap();
            let b = ad_stat(&v, |x| x).unwrap().0;
            let len = v.len();
            v.rotate_left(k % len);
            prop_assert_eq!(a, ks_stat(&v, |x| x).unwrap());
            prop_assert_eq!(b, ad_stat(&v, |x| x).unwrap().0);
            prop_assert!(a >= 0.5 / len as f64 - 1e-15 && a <= 1.0);
            prop_assert!(b > -(len as f64));
        }
    }
}
