use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use heavytail_core::em::fit_em;
use heavytail_core::gof::gof_pboot_tests;
use heavytail_core::risk::var_mc_levels;
use heavytail_core::rng::child_seed;
use heavytail_core::study::{write_param_table, write_var_table};
use heavytail_core::{
    bootstrap, empirical_quantile, fit_estimator, run_study, run_timing, stream_rng, ColumnSpec, CompositeParams,
    Dataset, DynamicMixParams, EmConfig, Estimator, FitOutcome, FittedModel, GofTest, LossModel, SimStudySpec,
    StaticMixParams, VarEstimate, VarMethod, DEFAULT_SEED,
};
use serde_json::{json, Value};

use crate::{
    BenchArgs, Cli, Command, DataArgs, EmArgs, Failure, FitArgs, Format, GofArgs, ModelKind, PlotArgs, SimulateArgs,
    VarArgs,
};

type Res<T> = std::result::Result<T, Failure>;

const SEED_ENV: &str = "HEAVYTAIL_SEED";

pub fn run(cli: Cli) -> Res<()> {
    let seed = resolve_seed(cli.seed)?;
    match cli.command {
        Command::Fit(a) => fit(a, seed),
        Command::Simulate(a) => simulate(a, seed),
        Command::Var(a) => var(a, seed),
        Command::Gof(a) => gof(a, seed),
        Command::Bench(a) => bench(a, cli.seed.or(env_seed()?)),
        Command::Plotdata(a) => plotdata(a),
    }
}

fn env_seed() -> Res<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={s:?} is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Res<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(DEFAULT_SEED))
}

fn announce_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

fn estimator(kind: ModelKind) -> Estimator {
    match kind {
        ModelKind::Static => Estimator::StaticEm,
        ModelKind::Case1 => Estimator::CompositeMle,
        ModelKind::Case2 => Estimator::DynamicMle,
    }
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Static => "static",
        ModelKind::Case1 => "case1",
        ModelKind::Case2 => "case2",
    }
}

fn em_config(a: &EmArgs) -> Res<EmConfig> {
    let cfg = EmConfig {
        tol: a.tol,
        max_iter: a.max_iter,
        ..EmConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(a: &DataArgs) -> Res<Dataset> {
    Ok(Dataset::from_path(&a.input, &ColumnSpec::parse(&a.column))?)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Res<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes)?;
            so.flush()?;
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Res<()> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    emit(out, s.as_bytes())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Fit, keeping EM posteriors for the static model.
fn fit_with_posteriors(kind: ModelKind, x: &[f64], em: &EmConfig) -> Res<(FitOutcome, Option<Vec<f64>>)> {
    if kind == ModelKind::Static {
        let r = fit_em(x, em)?;
        let out = FitOutcome {
            loglik: r.loglik(),
            converged: r.converged,
            n_iter: Some(r.n_iter),
            model: FittedModel::Static(r.theta_hat),
        };
        return Ok((out, Some(r.posteriors)));
    }
    Ok((fit_estimator(estimator(kind), x, em)?, None))
}

fn param_values(m: &FittedModel) -> Vec<f64> {
    m.named_params().into_iter().map(|(_, v)| v).collect()
}

fn fit(a: FitArgs, seed: u64) -> Res<()> {
    let em = em_config(&a.em)?;
    let data = load(&a.data)?;
    let (outcome, posteriors) = fit_with_posteriors(a.model, &data.values, &em)?;
    let names: Vec<&str> = outcome.model.named_params().into_iter().map(|(k, _)| k).collect();
    let estimates = param_values(&outcome.model);

    let boot = if a.bootstrap > 0 {
        announce_seed(seed);
        let est = estimator(a.model);
        Some(bootstrap(
            &data.values,
            |xs, _| Ok(param_values(&fit_estimator(est, xs, &em)?.model)),
            a.bootstrap,
            seed,
        )?)
    } else {
        None
    };

    match a.format {
        Format::Json => {
            let params: BTreeMap<&str, f64> = names.iter().copied().zip(estimates.iter().copied()).collect();
            let mut report = json!({
                "schema": "heavytail.fit/1",
                "config": {
                    "input": data.source,
                    "column": data.column,
                    "model": model_name(a.model),
                    "tol": em.tol,
                    "max_iter": em.max_iter,
                    "bootstrap": a.bootstrap,
                    "seed": seed,
                },
                "n": data.n,
                "fitted": outcome.model,
                "params": params,
                "loglik": outcome.loglik,
                "iterations": outcome.n_iter,
                "converged": outcome.converged,
            });
            if let Some(b) = &boot {
                let by_name = |v: &[f64]| -> BTreeMap<&str, f64> { names.iter().copied().zip(v.iter().copied()).collect() };
                report["bootstrap"] = json!({
                    "replicates": b.replicates.len(),
                    "failures": b.failures,
                    "se": by_name(&b.se),
                    "ci_lo": by_name(&b.ci_lo),
                    "ci_hi": by_name(&b.ci_hi),
                });
            }
            if let Some(p) = posteriors {
                report["posteriors"] = json!(p);
            }
            emit_json(a.out.as_deref(), &report)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = names
                .iter()
                .enumerate()
                .map(|(j, n)| {
                    vec![
                        n.to_string(),
                        estimates[j].to_string(),
                        opt(boot.as_ref().map(|b| b.se[j])),
                        opt(boot.as_ref().map(|b| b.ci_lo[j])),
                        opt(boot.as_ref().map(|b| b.ci_hi[j])),
                    ]
                })
                .collect();
            emit(a.out.as_deref(), &csv_bytes(&["parameter", "estimate", "se", "ci_lo", "ci_hi"], &rows))?;
        }
    }
    if outcome.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn parse_params(s: &str, expected: &[&str]) -> Res<Vec<f64>> {
    let mut map = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("parameter {part:?} is not name=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("parameter {k} has non-numeric value {v:?}")))?;
        if !expected.contains(&k.trim()) {
            return Err(Failure::Usage(format!("unknown parameter {k:?}; expected {}", expected.join(", "))));
        }
        map.insert(k.trim().to_string(), v);
    }
    expected
        .iter()
        .map(|k| {
            map.get(*k)
                .copied()
                .ok_or_else(|| Failure::Usage(format!("missing parameter {k}; expected {}", expected.join(", "))))
        })
        .collect()
}

fn build_model(kind: ModelKind, params: &str) -> Res<FittedModel> {
    Ok(match kind {
        ModelKind::Static => {
            let v = parse_params(params, &["p", "mu", "sigma2", "xi", "beta"])?;
            FittedModel::Static(StaticMixParams::new(v[0], v[1], v[2], v[3], v[4])?)
        }
        ModelKind::Case1 => {
            let v = parse_params(params, &["sigma2", "alpha", "xmin"])?;
            FittedModel::Composite(CompositeParams::new(v[0], v[1], v[2])?)
        }
        ModelKind::Case2 => {
            let v = parse_params(params, &["mu_c", "tau_c", "mu", "sigma2", "xi", "beta"])?;
            FittedModel::Dynamic(DynamicMixParams::new(v[0], v[1], v[2], v[3], v[4], v[5])?)
        }
    })
}

fn simulate(a: SimulateArgs, seed: u64) -> Res<()> {
    let model = build_model(a.model, &a.params)?;
    announce_seed(seed);
    let mut rng = stream_rng(seed, 0);
    let xs = model.sample(&mut rng, a.n).map_err(|e| Failure::Usage(e.to_string()))?;
    let rows: Vec<Vec<String>> = xs.iter().map(|v| vec![v.to_string()]).collect();
    emit(a.out.as_deref(), &csv_bytes(&[a.column.as_str()], &rows))
}

fn read_fit_report(path: &Path) -> Res<FittedModel> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let fitted = v
        .get("fitted")
        .cloned()
        .ok_or_else(|| Failure::Data(format!("{} has no \"fitted\" model", path.display())))?;
    serde_json::from_value(fitted).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn var(a: VarArgs, seed: u64) -> Res<()> {
    if let Some(bad) = a.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Failure::Usage(format!("VaR level {bad} is outside (0, 1)")));
    }
    if a.levels.is_empty() {
        return Err(Failure::Usage("no VaR levels given".into()));
    }
    let em = em_config(&a.em)?;
    if !a.exact && a.mc_reps < 100 {
        return Err(Failure::Usage(format!("--mc-reps must be at least 100, got {}", a.mc_reps)));
    }
    let data = match &a.input {
        Some(p) => Some(Dataset::from_path(p, &ColumnSpec::parse(&a.column))?),
        None => None,
    };
    if a.bootstrap > 0 && data.is_none() {
        return Err(Failure::Usage("--bootstrap needs --input data".into()));
    }
    let method = if a.exact {
        VarMethod::QuantileInversion
    } else {
        VarMethod::MonteCarlo
    };
    let sorted = data.as_ref().map(|d| {
        let mut s = d.values.clone();
        s.sort_by(f64::total_cmp);
        s
    });
    announce_seed(seed);

    let constant = sorted.as_ref().filter(|s| s[0] == s[s.len() - 1]).map(|s| s[0]);
    let (estimates, converged, note) = if let Some(c) = constant {
        // A constant sample is a point mass; every quantile equals it.
        let rows: Vec<VarEstimate> = a
            .levels
            .iter()
            .map(|&level| VarEstimate {
                level,
                point: c,
                se: Some(0.0),
                ci_lo: Some(c),
                ci_hi: Some(c),
                method: VarMethod::QuantileInversion,
            })
            .collect();
        (rows, true, Some("constant sample treated as a point mass"))
    } else {
        let (model, converged) = match (&a.fit, &data) {
            (Some(p), _) => (read_fit_report(p)?, true),
            (None, Some(d)) => {
                let o = fit_estimator(estimator(a.model), &d.values, &em)?;
                (o.model, o.converged)
            }
            (None, None) => unreachable!("clap requires --input or --fit"),
        };
        let evaluate = |m: &FittedModel, rng: &mut heavytail_core::StreamRng| -> heavytail_core::Result<Vec<f64>> {
            if a.exact {
                a.levels.iter().map(|&l| m.quantile(l)).collect()
            } else {
                var_mc_levels(m, &a.levels, a.mc_reps, rng)
            }
        };
        let point = evaluate(&model, &mut stream_rng(seed, 0))?;
        let boot = match (&data, a.bootstrap) {
            (Some(d), b) if b > 0 => {
                let est = estimator(a.model);
                Some(bootstrap(
                    &d.values,
                    |xs, rng| evaluate(&fit_estimator(est, xs, &em)?.model, rng),
                    b,
                    child_seed(seed, 1),
                )?)
            }
            _ => None,
        };
        let rows = a
            .levels
            .iter()
            .enumerate()
            .map(|(i, &level)| VarEstimate {
                level,
                point: point[i],
                se: boot.as_ref().map(|b| b.se[i]),
                ci_lo: boot.as_ref().map(|b| b.ci_lo[i]),
                ci_hi: boot.as_ref().map(|b| b.ci_hi[i]),
                method,
            })
            .collect();
        (rows, converged, None)
    };
    let empirical: Option<Vec<f64>> = sorted
        .as_ref()
        .map(|s| a.levels.iter().map(|&l| empirical_quantile(s, l)).collect());

    match a.format {
        Format::Json => {
            let mut report = json!({
                "schema": "heavytail.var/1",
                "config": {
                    "input": a.input,
                    "fit": a.fit,
                    "column": a.column,
                    "model": model_name(a.model),
                    "levels": a.levels,
                    "mc_reps": a.mc_reps,
                    "exact": a.exact,
                    "bootstrap": a.bootstrap,
                    "seed": seed,
                },
                "converged": converged,
                "var": estimates,
                "empirical": empirical,
            });
            if let Some(n) = note {
                report["note"] = json!(n);
            }
            emit_json(a.out.as_deref(), &report)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = estimates
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    vec![
                        v.level.to_string(),
                        v.point.to_string(),
                        opt(v.se),
                        opt(v.ci_lo),
                        opt(v.ci_hi),
                        match v.method {
                            VarMethod::MonteCarlo => "monte_carlo".into(),
                            VarMethod::QuantileInversion => "quantile_inversion".into(),
                        },
                        opt(empirical.as_ref().map(|e| e[i])),
                    ]
                })
                .collect();
            emit(
                a.out.as_deref(),
                &csv_bytes(&["level", "point", "se", "ci_lo", "ci_hi", "method", "empirical"], &rows),
            )?;
        }
    }
    if converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn gof(a: GofArgs, seed: u64) -> Res<()> {
    let em = em_config(&a.em)?;
    if a.n_boot_gof == 0 {
        return Err(Failure::Usage("--n-boot-gof must be positive".into()));
    }
    let data = load(&a.data)?;
    announce_seed(seed);
    let est = estimator(a.model);
    let results = gof_pboot_tests(
        &data.values,
        |x| fit_estimator(est, x, &em).map(|o| o.model),
        &[GofTest::Ks, GofTest::Ad],
        a.n_boot_gof,
        seed,
    )?;
    match a.format {
        Format::Json => {
            let report = json!({
                "schema": "heavytail.gof/1",
                "config": {
                    "input": data.source,
                    "column": data.column,
                    "model": model_name(a.model),
                    "n_boot_gof": a.n_boot_gof,
                    "seed": seed,
                },
                "n": data.n,
                "method": "parametric bootstrap: simulate from the fitted model, refit, recompute the statistic; \
                           p = (1 + #{boot >= observed}) / (n_boot + 1). Refitting accounts for estimated \
                           parameters, which invalidates the textbook null distributions.",
                "tests": results,
            });
            emit_json(a.out.as_deref(), &report)
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|g| {
                    vec![
                        match g.test {
                            GofTest::Ks => "KS".into(),
                            GofTest::Ad => "AD".into(),
                        },
                        g.statistic.to_string(),
                        g.p_value.to_string(),
                        g.n_boot.to_string(),
                        g.failures.to_string(),
                    ]
                })
                .collect();
            emit(
                a.out.as_deref(),
                &csv_bytes(&["test", "statistic", "p_value", "n_boot", "failures"], &rows),
            )
        }
    }
}

fn bench(a: BenchArgs, seed_override: Option<u64>) -> Res<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| Failure::Data(format!("cannot read {}: {e}", a.spec.display())))?;
    let mut spec: SimStudySpec =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", a.spec.display())))?;
    if let Some(s) = seed_override {
        spec.seed = s;
    }
    if a.full {
        spec.b = 1000;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    announce_seed(spec.seed);
    let result = run_study(&spec)?;
    let timing = if a.timing {
        Some(
            run_timing(&spec)?
                .into_iter()
                .map(|(e, t)| (e.name(), t))
                .collect::<BTreeMap<_, _>>(),
        )
    } else {
        None
    };
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        let p = fs::File::create(dir.join("params.csv"))?;
        write_param_table(&result, p)?;
        let v = fs::File::create(dir.join("var.csv"))?;
        write_var_table(&result, v)?;
    }
    let report = json!({
        "schema": "heavytail.bench/1",
        "config": { "spec": a.spec, "full": a.full, "seed": spec.seed },
        "spec": result.spec,
        "summaries": result.summaries,
        "timing_seconds": timing,
        "records": result.records,
    });
    emit_json(a.out.as_deref(), &report)
}

/// Weighted component densities that add up to the model density.
fn components(m: &FittedModel, x: f64) -> (f64, f64) {
    match m {
        FittedModel::Static(s) => {
            let (a, b) = s.component_ln_pdfs(x);
            (a.exp(), b.exp())
        }
        FittedModel::Composite(c) => {
            if x <= c.xmin() {
                (c.pdf(x), 0.0)
            } else {
                (0.0, c.pdf(x))
            }
        }
        FittedModel::Dynamic(d) => {
            let (w1, w2) = d.component_weights(x);
            (w1 * d.logn().pdf(x), w2 * d.gpd().pdf(x))
        }
        FittedModel::Lognormal(l) => (l.pdf(x), 0.0),
        FittedModel::Gpd(g) => (0.0, g.pdf(x)),
    }
}

fn plotdata(a: PlotArgs) -> Res<()> {
    if a.grid < 2 {
        return Err(Failure::Usage("--grid needs at least 2 points".into()));
    }
    let data = load(&a.data)?;
    let model = match &a.fit {
        Some(p) => read_fit_report(p)?,
        None => fit_estimator(estimator(a.model), &data.values, &em_config(&a.em)?)?.model,
    };
    let lo = data.values.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    let hi = 2.0 * data.values.iter().copied().fold(0.0, f64::max);
    let k = a.grid;
    let step = (hi / lo).ln() / (k - 1) as f64;
    let grid: Vec<f64> = (0..k).map(|i| lo * (step * i as f64).exp()).collect();
    let mut counts = vec![0usize; k - 1];
    for &v in &data.values {
        let i = (((v / lo).ln() / step).floor() as usize).min(k - 2);
        counts[i] += 1;
    }
    let n = data.n as f64;
    let rows: Vec<Vec<String>> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (c1, c2) = components(&model, x);
            let mut row = vec![x.to_string(), model.pdf(x).to_string(), c1.to_string(), c2.to_string()];
            if i + 1 < k {
                let width = grid[i + 1] - x;
                row.extend([x.to_string(), grid[i + 1].to_string(), (counts[i] as f64 / (n * width)).to_string()]);
            } else {
                row.extend([String::new(), String::new(), String::new()]);
            }
            row
        })
        .collect();
    emit(
        a.out.as_deref(),
        &csv_bytes(&["x", "pdf", "component_1", "component_2", "bin_lo", "bin_hi", "hist_density"], &rows),
    )
}
