//! Heavy-tailed loss modelling: a static lognormal–GPD mixture fitted by EM,
//! two baselines (composite lognormal–Pareto and a dynamic Cauchy-weighted
//! mixture), Value-at-Risk, goodness-of-fit and a simulation-study harness.

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod composite;
pub mod data;
pub mod distributions;
pub mod dynamic;
pub mod em;
pub mod error;
pub mod gof;
#[cfg(test)]
mod invariants;
pub mod mixture;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod special;
pub mod study;

pub use composite::{composite_mle, CompositeFit, CompositeParams};
pub use data::{ColumnSpec, Dataset};
pub use distributions::{GpdParams, LognParams, ParetoParams, TruncLognParams};
pub use dynamic::{dyn_mle, dyn_weight, DynamicFit, DynamicMixParams};
pub use em::{classify, e_step, fit_em, m_step_closed, m_step_gpd, EmConfig, FitReport};
pub use error::{Error, Result};
pub use gof::{ad_stat, gof_pboot, gof_pboot_tests, ks_stat, GofResult, GofTest};
pub use mixture::StaticMixParams;
pub use model::{FittedModel, LossModel};
pub use risk::{bootstrap, empirical_quantile, var_exact, var_mc, BootstrapResult, VarEstimate, VarMethod};
pub use rng::{stream_rng, StreamRng, DEFAULT_SEED};
pub use study::{
    fit_estimator, run_study, run_timing, summarize_median_metrics, Dgp, Estimator, FitOutcome, SimStudyResult,
    SimStudySpec,
};
