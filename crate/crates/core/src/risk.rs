//! Value-at-Risk and non-parametric bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::model::LossModel;
use crate::rng::{stream_rng, StreamRng};

/// Type-7 empirical quantile (linear interpolation between order statistics)
/// of an ascending slice.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "empirical quantile of an empty sample");
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMethod {
    MonteCarlo,
    QuantileInversion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEstimate {
    pub level: f64,
    pub point: f64,
    /// Bootstrap standard error and 95% percentile interval; absent without a bootstrap.
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub method: VarMethod,
}

/// Monte Carlo VaR: type-7 quantile of `n_mc` draws from the model.
pub fn var_mc<M: LossModel + ?Sized>(model: &M, level: f64, n_mc: usize, rng: &mut StreamRng) -> Result<f64> {
    check_probability(level)?;
    if n_mc < 100 {
        return Err(Error::Data(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let draws = sorted_copy(&model.sample(rng, n_mc)?);
    Ok(empirical_quantile(&draws, level))
}

/// Monte Carlo VaR at several levels from one set of draws.
pub fn var_mc_levels<M: LossModel + ?Sized>(
    model: &M,
    levels: &[f64],
    n_mc: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    for &l in levels {
        check_probability(l)?;
    }
    if n_mc < 100 {
        return Err(Error::Data(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let draws = sorted_copy(&model.sample(rng, n_mc)?);
    Ok(levels.iter().map(|&l| empirical_quantile(&draws, l)).collect())
}

/// VaR by inverting the model CDF.
pub fn var_exact<M: LossModel + ?Sized>(model: &M, level: f64) -> Result<f64> {
    check_probability(level)?;
    model.quantile(level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Per-statistic standard deviation of the replicates.
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    /// Successful replicates, in replicate-index order.
    pub replicates: Vec<Vec<f64>>,
    pub failures: usize,
}

/// Resample `x` with replacement.
pub fn resample(x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    (0..x.len()).map(|_| x[rng.gen_range(0..x.len())]).collect()
}

/// Non-parametric bootstrap. `estimate` refits the model on a resample and
/// returns the statistics of interest. Replicate `b` resamples from stream `b`
/// of `seed` and hands the same generator on to `estimate` for any Monte Carlo
/// work it needs.
pub fn bootstrap<F>(x: &[f64], estimate: F, b: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[f64], &mut StreamRng) -> Result<Vec<f64>> + Sync,
{
    if b < 50 {
        return Err(Error::Data(format!("bootstrap needs at least 50 replicates, got {b}")));
    }
    if x.is_empty() {
        return Err(Error::Data("bootstrap of an empty sample".into()));
    }
    let outcomes: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let xs = resample(x, &mut rng);
            estimate(&xs, &mut rng).ok().filter(|v| v.iter().all(|s| s.is_finite()))
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures * 5 > b {
        return Err(Error::Bootstrap { failed: failures, total: b });
    }
    let replicates: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    let k = replicates[0].len();
    if replicates.iter().any(|r| r.len() != k) {
        return Err(Error::Estimation("bootstrap statistic changed length between replicates".into()));
    }
    let mut se = Vec::with_capacity(k);
    let mut ci_lo = Vec::with_capacity(k);
    let mut ci_hi = Vec::with_capacity(k);
    for j in 0..k {
        let col = sorted_copy(&replicates.iter().map(|r| r[j]).collect::<Vec<_>>());
        se.push(std_dev(&col));
        ci_lo.push(empirical_quantile(&col, 0.025));
        ci_hi.push(empirical_quantile(&col, 0.975));
    }
    Ok(BootstrapResult {
        se,
        ci_lo,
        ci_hi,
        replicates,
        failures,
    })
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
