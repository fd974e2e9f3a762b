//! Simulation studies: repeated sample–fit cycles with bias, median metrics,
//! VaR summaries, goodness-of-fit and timing.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::{composite_mle, CompositeParams};
use crate::dynamic::{dyn_mle, DynamicMixParams};
use crate::em::{fit_em, EmConfig};
use crate::error::{Error, Result};
use crate::gof::{gof_pboot_tests, GofResult, GofTest};
use crate::mixture::StaticMixParams;
use crate::model::{FittedModel, LossModel};
use crate::risk::{empirical_quantile, std_dev, var_exact, var_mc_levels};
use crate::rng::{child_seed, stream_rng};

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Dgp {
    Static(StaticMixParams),
    Composite(CompositeParams),
    Dynamic(DynamicMixParams),
}

impl Dgp {
    pub fn model(&self) -> FittedModel {
        match self {
            Dgp::Static(m) => FittedModel::Static(*m),
            Dgp::Composite(m) => FittedModel::Composite(*m),
            Dgp::Dynamic(m) => FittedModel::Dynamic(m.clone()),
        }
    }

    /// The estimator whose parameters are directly comparable with the DGP.
    pub fn matching_estimator(&self) -> Estimator {
        match self {
            Dgp::Static(_) => Estimator::StaticEm,
            Dgp::Composite(_) => Estimator::CompositeMle,
            Dgp::Dynamic(_) => Estimator::DynamicMle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    StaticEm,
    CompositeMle,
    DynamicMle,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::StaticEm => "static_em",
            Estimator::CompositeMle => "composite_mle",
            Estimator::DynamicMle => "dynamic_mle",
        }
    }
}

/// Outcome of one fit, shared by the harness and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub model: FittedModel,
    pub loglik: f64,
    pub converged: bool,
    /// EM iterations; absent for the direct-likelihood estimators.
    pub n_iter: Option<usize>,
}

pub fn fit_estimator(est: Estimator, x: &[f64], em: &EmConfig) -> Result<FitOutcome> {
    Ok(match est {
        Estimator::StaticEm => {
            let r = fit_em(x, em)?;
            FitOutcome {
                loglik: r.loglik(),
                converged: r.converged,
                n_iter: Some(r.n_iter),
                model: FittedModel::Static(r.theta_hat),
            }
        }
        Estimator::CompositeMle => {
            let r = composite_mle(x)?;
            FitOutcome {
                model: FittedModel::Composite(r.params),
                loglik: r.loglik,
                converged: r.converged,
                n_iter: None,
            }
        }
        Estimator::DynamicMle => {
            let r = dyn_mle(x)?;
            FitOutcome {
                model: FittedModel::Dynamic(r.params),
                loglik: r.loglik,
                converged: r.converged,
                n_iter: None,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudySpec {
    pub dgp: Dgp,
    pub n: usize,
    /// Replications.
    pub b: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_levels")]
    pub var_levels: Vec<f64>,
    /// Monte Carlo draws per VaR evaluation; 0 skips VaR.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Parametric-bootstrap replicates for KS/AD per replication; `None` skips GoF.
    #[serde(default)]
    pub gof_n_boot: Option<usize>,
    /// Include replications whose fit did not converge in the aggregates.
    #[serde(default = "default_true")]
    pub include_nonconverged: bool,
    #[serde(default)]
    pub em: EmConfig,
}

fn default_levels() -> Vec<f64> {
    vec![0.95, 0.99, 0.995]
}

fn default_n_mc() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

impl SimStudySpec {
    pub fn new(dgp: Dgp, n: usize, b: usize, seed: u64, estimators: Vec<Estimator>) -> Self {
        Self {
            dgp,
            n,
            b,
            seed,
            estimators,
            var_levels: default_levels(),
            n_mc: default_n_mc(),
            gof_n_boot: None,
            include_nonconverged: true,
            em: EmConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(Error::Data("a study needs at least one replication".into()));
        }
        if self.n < 10 {
            return Err(Error::Data(format!("a study needs n >= 10, got {}", self.n)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Data("a study needs at least one estimator".into()));
        }
        self.em.validate()
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: Estimator,
    pub params: Vec<f64>,
    pub converged: bool,
    pub loglik: f64,
    pub seconds: f64,
    pub var: Vec<f64>,
    pub gof: Vec<GofResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianMetrics {
    pub b_med: f64,
    pub mad: f64,
    pub rmse_med: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub median: f64,
    pub median_metrics: Option<MedianMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSummary {
    pub level: f64,
    /// Quantile of the generating model.
    pub truth: f64,
    pub mean: f64,
    pub median: f64,
    /// 2.5% and 97.5% percentiles across replications.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofSummary {
    pub test: GofTest,
    pub mean_p_value: f64,
    pub share_above_5pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    /// Replications entering the aggregates.
    pub used: usize,
    pub failures: usize,
    pub nonconverged: usize,
    pub params: Vec<ParamSummary>,
    pub var: Vec<VarSummary>,
    pub gof: Vec<GofSummary>,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyResult {
    pub spec: SimStudySpec,
    pub summaries: Vec<EstimatorSummary>,
    /// Every fit, ordered by replication and then estimator.
    pub records: Vec<ReplicateRecord>,
}

impl SimStudyResult {
    pub fn summary(&self, est: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == est)
    }

    /// Estimates matrix (rows = replications) for one estimator.
    pub fn estimates(&self, est: Estimator) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.estimator == est && r.error.is_none())
            .map(|r| r.params.clone())
            .collect()
    }
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-column `b_med = median − truth`, `mad = median |θ − median|`,
/// `RMSE_med = √(b_med² + mad²)`.
pub fn summarize_median_metrics(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<MedianMetrics>> {
    if estimates.is_empty() {
        return Err(Error::Data("no replications to summarize".into()));
    }
    if estimates.iter().any(|r| r.len() != truth.len()) {
        return Err(Error::Data("estimate rows and truth differ in length".into()));
    }
    Ok((0..truth.len())
        .map(|j| {
            let col: Vec<f64> = estimates.iter().map(|r| r[j]).collect();
            let med = median_of(&col);
            let dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let b_med = med - truth[j];
            let mad = median_of(&dev);
            MedianMetrics {
                b_med,
                mad,
                rmse_med: b_med.hypot(mad),
            }
        })
        .collect())
}

fn param_vector(m: &FittedModel) -> (Vec<String>, Vec<f64>) {
    m.named_params().into_iter().map(|(k, v)| (k.to_string(), v)).unzip()
}

fn run_replicate(spec: &SimStudySpec, truth: &FittedModel, b: usize) -> Vec<ReplicateRecord> {
    let mut rng = stream_rng(spec.seed, b as u64);
    let data = match truth.sample(&mut rng, spec.n) {
        Ok(d) => d,
        Err(e) => {
            return spec
                .estimators
                .iter()
                .map(|&est| failed(b, est, e.to_string()))
                .collect()
        }
    };
    let sub = child_seed(spec.seed, b as u64);
    spec.estimators
        .iter()
        .enumerate()
        .map(|(k, &est)| {
            let t0 = Instant::now();
            let fit = fit_estimator(est, &data, &spec.em);
            let seconds = t0.elapsed().as_secs_f64();
            let fit = match fit {
                Ok(f) => f,
                Err(e) => return failed(b, est, e.to_string()),
            };
            let (_, params) = param_vector(&fit.model);
            let mut rec = ReplicateRecord {
                replicate: b,
                estimator: est,
                params,
                converged: fit.converged,
                loglik: fit.loglik,
                seconds,
                var: Vec::new(),
                gof: Vec::new(),
                error: None,
            };
            if spec.n_mc > 0 {
                let mut vr = stream_rng(sub, 2 * k as u64);
                match var_mc_levels(&fit.model, &spec.var_levels, spec.n_mc, &mut vr) {
                    Ok(v) => rec.var = v,
                    Err(e) => rec.error = Some(format!("VaR: {e}")),
                }
            }
            if let Some(nb) = spec.gof_n_boot {
                let em = spec.em;
                let fitter = |x: &[f64]| fit_estimator(est, x, &em).map(|f| f.model);
                match gof_pboot_tests(&data, fitter, &[GofTest::Ks, GofTest::Ad], nb, child_seed(sub, 2 * k as u64 + 1)) {
                    Ok(g) => rec.gof = g,
                    Err(e) => rec.error = Some(format!("GoF: {e}")),
                }
            }
            rec
        })
        .collect()
}

fn failed(b: usize, est: Estimator, msg: String) -> ReplicateRecord {
    ReplicateRecord {
        replicate: b,
        estimator: est,
        params: Vec::new(),
        converged: false,
        loglik: f64::NAN,
        seconds: f64::NAN,
        var: Vec::new(),
        gof: Vec::new(),
        error: Some(msg),
    }
}

fn summarize(spec: &SimStudySpec, truth: &FittedModel, est: Estimator, records: &[ReplicateRecord]) -> Result<EstimatorSummary> {
    let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.estimator == est).collect();
    let failures = mine.iter().filter(|r| r.error.is_some() && r.params.is_empty()).count();
    let nonconverged = mine.iter().filter(|r| !r.params.is_empty() && !r.converged).count();
    let used: Vec<&ReplicateRecord> = mine
        .iter()
        .copied()
        .filter(|r| !r.params.is_empty() && (spec.include_nonconverged || r.converged))
        .collect();
    let timed: Vec<f64> = mine.iter().map(|r| r.seconds).filter(|s| s.is_finite()).collect();
    let mean_seconds = if timed.is_empty() {
        f64::NAN
    } else {
        timed.iter().sum::<f64>() / timed.len() as f64
    };
    let mut summary = EstimatorSummary {
        estimator: est,
        used: used.len(),
        failures,
        nonconverged,
        params: Vec::new(),
        var: Vec::new(),
        gof: Vec::new(),
        mean_seconds,
    };
    if used.is_empty() {
        return Ok(summary);
    }

    let names: Vec<String> = match est {
        Estimator::StaticEm => ["p", "mu", "sigma", "xi", "beta"].map(String::from).to_vec(),
        Estimator::CompositeMle => ["sigma", "alpha", "xmin", "r", "mu"].map(String::from).to_vec(),
        Estimator::DynamicMle => ["mu_c", "tau_c", "mu", "sigma", "xi", "beta"].map(String::from).to_vec(),
    };
    let truth_vec = (spec.dgp.matching_estimator() == est).then(|| param_vector(truth).1);
    let matrix: Vec<Vec<f64>> = used.iter().map(|r| r.params.clone()).collect();
    let med = truth_vec
        .as_ref()
        .map(|t| summarize_median_metrics(&matrix, t))
        .transpose()?;
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = matrix.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let t = truth_vec.as_ref().map(|t| t[j]);
        summary.params.push(ParamSummary {
            name: name.clone(),
            truth: t,
            mean,
            sd: std_dev(&col),
            bias: t.map(|t| mean - t),
            rmse: t.map(|t| (col.iter().map(|v| (v - t).powi(2)).sum::<f64>() / col.len() as f64).sqrt()),
            median: median_of(&col),
            median_metrics: med.as_ref().map(|m| m[j]),
        });
    }

    if spec.n_mc > 0 {
        for (i, &level) in spec.var_levels.iter().enumerate() {
            let mut col: Vec<f64> = used.iter().filter_map(|r| r.var.get(i).copied()).collect();
            if col.is_empty() {
                continue;
            }
            col.sort_by(f64::total_cmp);
            summary.var.push(VarSummary {
                level,
                truth: var_exact(truth, level)?,
                mean: col.iter().sum::<f64>() / col.len() as f64,
                median: median_of(&col),
                ci_lo: empirical_quantile(&col, 0.025),
                ci_hi: empirical_quantile(&col, 0.975),
            });
        }
    }

    for test in [GofTest::Ks, GofTest::Ad] {
        let ps: Vec<f64> = used
            .iter()
            .filter_map(|r| r.gof.iter().find(|g| g.test == test).map(|g| g.p_value))
            .collect();
        if !ps.is_empty() {
            summary.gof.push(GofSummary {
                test,
                mean_p_value: ps.iter().sum::<f64>() / ps.len() as f64,
                share_above_5pct: ps.iter().filter(|&&p| p > 0.05).count() as f64 / ps.len() as f64,
            });
        }
    }
    Ok(summary)
}

/// Run a study. Replication `b` draws its data from stream `b` of the master
/// seed, so results do not depend on how replications are scheduled.
pub fn run_study(spec: &SimStudySpec) -> Result<SimStudyResult> {
    spec.validate()?;
    let truth = spec.dgp.model();
    let records: Vec<ReplicateRecord> = (0..spec.b)
        .into_par_iter()
        .flat_map_iter(|b| run_replicate(spec, &truth, b))
        .collect();
    let summaries = spec
        .estimators
        .iter()
        .map(|&est| summarize(spec, &truth, est, &records))
        .collect::<Result<_>>()?;
    Ok(SimStudyResult {
        spec: spec.clone(),
        summaries,
        records,
    })
}

/// Mean wall-clock seconds of the fit alone, per estimator, over `spec.b`
/// replications run one at a time.
pub fn run_timing(spec: &SimStudySpec) -> Result<Vec<(Estimator, f64)>> {
    spec.validate()?;
    let em = spec.em;
    let fitters: Vec<(Estimator, Fitter)> = spec
        .estimators
        .iter()
        .map(|&e| {
            let f: Fitter = Box::new(move |x| fit_estimator(e, x, &em).map(|_| ()));
            (e, f)
        })
        .collect();
    time_fitters(spec, &fitters)
}

/// Timing loop over arbitrary fit closures; data generation is excluded.
/// A fitter timed by [`time_fitters`].
pub type Fitter = Box<dyn Fn(&[f64]) -> Result<()>>;

pub fn time_fitters<K: Copy>(spec: &SimStudySpec, fitters: &[(K, Fitter)]) -> Result<Vec<(K, f64)>> {
    let truth = spec.dgp.model();
    let mut totals = vec![0.0; fitters.len()];
    for b in 0..spec.b {
        let mut rng = stream_rng(spec.seed, b as u64);
        let data = truth.sample(&mut rng, spec.n)?;
        for (k, (_, f)) in fitters.iter().enumerate() {
            let t0 = Instant::now();
            // Failed fits still cost time; the outcome is not what is measured.
            let _ = f(&data);
            totals[k] += t0.elapsed().as_secs_f64();
        }
    }
    Ok(fitters
        .iter()
        .zip(totals)
        .map(|((k, _), t)| (*k, t / spec.b as f64))
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Parameter table: one row per estimator and parameter.
pub fn write_param_table<W: Write>(result: &SimStudyResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("writing table: {e}"));
    w.write_record([
        "estimator", "parameter", "truth", "mean", "sd", "bias", "rmse", "median", "b_med", "mad", "rmse_med",
    ])
    .map_err(io)?;
    for s in &result.summaries {
        for p in &s.params {
            let m = p.median_metrics;
            w.write_record([
                s.estimator.name().to_string(),
                p.name.clone(),
                fmt_opt(p.truth),
                format!("{}", p.mean),
                format!("{}", p.sd),
                fmt_opt(p.bias),
                fmt_opt(p.rmse),
                format!("{}", p.median),
                fmt_opt(m.map(|m| m.b_med)),
                fmt_opt(m.map(|m| m.mad)),
                fmt_opt(m.map(|m| m.rmse_med)),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("writing table: {e}")))
}

/// VaR table: the generating model's quantile followed by each estimator's
/// replication median and 95% replication interval.
pub fn write_var_table<W: Write>(result: &SimStudyResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("writing table: {e}"));
    w.write_record(["estimator", "level", "true_var", "mean", "median", "ci_lo", "ci_hi"])
        .map_err(io)?;
    for s in &result.summaries {
        for v in &s.var {
            w.write_record([
                s.estimator.name().to_string(),
                format!("{}", v.level),
                format!("{}", v.truth),
                format!("{}", v.mean),
                format!("{}", v.median),
                format!("{}", v.ci_lo),
                format!("{}", v.ci_hi),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("writing table: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn median_metrics_hand_cases() {
        let m = summarize_median_metrics(&[vec![1.0], vec![2.0], vec![3.0]], &[2.0]).unwrap();
        assert_eq!(m[0], MedianMetrics { b_med: 0.0, mad: 1.0, rmse_med: 1.0 });
        let z = summarize_median_metrics(&vec![vec![4.0, 5.0]; 7], &[4.0, 5.0]).unwrap();
        assert!(z.iter().all(|m| m.b_med == 0.0 && m.mad == 0.0 && m.rmse_med == 0.0));
        assert!(summarize_median_metrics(&[], &[1.0]).is_err());
    }

    #[test]
    fn median_metrics_against_sort_oracle() {
        let mut rng = stream_rng(8, 0);
        let rows: Vec<Vec<f64>> = (0..101).map(|_| vec![rng.gen::<f64>() * 3.0]).collect();
        let mut col: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = col[50];
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = summarize_median_metrics(&rows, &[1.0]).unwrap()[0];
        assert_eq!(m.b_med, med - 1.0);
        assert_eq!(m.mad, dev[50]);
        assert!((m.rmse_med - ((med - 1.0).powi(2) + dev[50].powi(2)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mean_and_median_agree_on_gaussian_matrix() {
        let mut rng = stream_rng(9, 0);
        let truth = [1.0, -2.0];
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| {
                vec![
                    1.2 + 0.5 * rng.sample::<f64, _>(StandardNormal),
                    -2.3 + 0.8 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let m = summarize_median_metrics(&rows, &truth).unwrap();
        for j in 0..2 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            let bias = mean - truth[j];
            assert!((m[j].b_med - bias).abs() < 0.1 * bias.abs());
        }
    }

    fn static_spec(b: usize) -> SimStudySpec {
        let dgp = Dgp::Static(StaticMixParams::new(0.9, 0.0, 0.25, 0.5, 3.5).unwrap());
        let mut s = SimStudySpec::new(dgp, 200, b, 42, vec![Estimator::StaticEm]);
        s.n_mc = 1000;
        s
    }

    #[test]
    fn single_replication_has_zero_mad() {
        let r = run_study(&static_spec(1)).unwrap();
        let s = r.summary(Estimator::StaticEm).unwrap();
        assert_eq!(r.estimates(Estimator::StaticEm).len(), 1);
        for p in &s.params {
            assert_eq!(p.median_metrics.unwrap().mad, 0.0);
        }
        assert_eq!(s.var.len(), 3);
    }

    #[test]
    fn deterministic_under_parallel_schedule() {
        let spec = static_spec(4);
        let a = run_study(&spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_study(&spec)).unwrap();
        let strip = |r: &SimStudyResult| r.records.iter().map(|x| (x.params.clone(), x.var.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        let mut t = Vec::new();
        write_param_table(&a, &mut t).unwrap();
        let text = String::from_utf8(t).unwrap();
        assert!(text.starts_with("estimator,parameter,truth"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn rmse_bounds_bias() {
        let r = run_study(&static_spec(5)).unwrap();
        for p in &r.summary(Estimator::StaticEm).unwrap().params {
            assert!(p.rmse.unwrap() + 1e-12 >= p.bias.unwrap().abs());
            let m = p.median_metrics.unwrap();
            assert!((m.rmse_med - (m.b_med.powi(2) + m.mad.powi(2)).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn noop_timing_is_near_zero() {
        let spec = static_spec(3);
        let f: Fitter = Box::new(|_| Ok(()));
        let t = time_fitters(&spec, &[("noop", f)]).unwrap();
        assert!(t[0].1 < 1e-3);
    }

    #[test]
    fn spec_validation() {
        let mut s = static_spec(1);
        s.n = 5;
        assert!(run_study(&s).is_err());
        let mut s = static_spec(1);
        s.b = 0;
        assert!(s.validate().is_err());
    }
}
