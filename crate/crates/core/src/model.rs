//! Common interface over every fitted loss distribution.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::composite::CompositeParams;
use crate::distributions::{GpdParams, LognParams};
use crate::dynamic::DynamicMixParams;
use crate::error::Result;
use crate::mixture::StaticMixParams;

/// A fully specified continuous loss distribution on (0, ∞).
pub trait LossModel: Send + Sync {
    fn ln_pdf(&self, x: f64) -> f64;

    fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    fn cdf(&self, x: f64) -> Result<f64>;

    /// CDF at each point of an ascending slice. Models whose CDF needs
    /// quadrature override this to integrate piecewise between points.
    fn cdf_sorted(&self, sorted: &[f64]) -> Result<Vec<f64>> {
        sorted.iter().map(|&x| self.cdf(x)).collect()
    }

    fn quantile(&self, u: f64) -> Result<f64>;

    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>>;

    fn loglik(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.ln_pdf(v)).sum()
    }
}

impl LossModel for LognParams {
    fn ln_pdf(&self, x: f64) -> f64 {
        LognParams::ln_pdf(self, x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        Ok(LognParams::cdf(self, x))
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        LognParams::quantile(self, u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        Ok(LognParams::sample(self, rng, n))
    }
}

impl LossModel for GpdParams {
    fn ln_pdf(&self, x: f64) -> f64 {
        GpdParams::ln_pdf(self, x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        Ok(GpdParams::cdf(self, x))
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        GpdParams::quantile(self, u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        Ok(GpdParams::sample(self, rng, n))
    }
}

/// Any of the supported fitted models, tagged for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Static(StaticMixParams),
    Composite(CompositeParams),
    Dynamic(DynamicMixParams),
    Lognormal(LognParams),
    Gpd(GpdParams),
}

impl FittedModel {
    fn inner(&self) -> &dyn LossModel {
        match self {
            FittedModel::Static(m) => m,
            FittedModel::Composite(m) => m,
            FittedModel::Dynamic(m) => m,
            FittedModel::Lognormal(m) => m,
            FittedModel::Gpd(m) => m,
        }
    }

    /// Named parameters in table-facing form (σ rather than σ²).
    pub fn named_params(&self) -> Vec<(&'static str, f64)> {
        match self {
            FittedModel::Static(m) => {
                let v = m.table_vector();
                vec![("p", v[0]), ("mu", v[1]), ("sigma", v[2]), ("xi", v[3]), ("beta", v[4])]
            }
            FittedModel::Composite(m) => vec![
                ("sigma", m.sigma()),
                ("alpha", m.alpha()),
                ("xmin", m.xmin()),
                ("r", m.r()),
                ("mu", m.mu()),
            ],
            FittedModel::Dynamic(m) => vec![
                ("mu_c", m.mu_c()),
                ("tau_c", m.tau_c()),
                ("mu", m.logn().mu()),
                ("sigma", m.logn().sigma()),
                ("xi", m.gpd().xi()),
                ("beta", m.gpd().beta()),
            ],
            FittedModel::Lognormal(m) => vec![("mu", m.mu()), ("sigma", m.sigma())],
            FittedModel::Gpd(m) => vec![("xi", m.xi()), ("beta", m.beta())],
        }
    }
}

impl LossModel for FittedModel {
    fn ln_pdf(&self, x: f64) -> f64 {
        self.inner().ln_pdf(x)
    }
    fn cdf(&self, x: f64) -> Result<f64> {
        self.inner().cdf(x)
    }
    fn cdf_sorted(&self, sorted: &[f64]) -> Result<Vec<f64>> {
        self.inner().cdf_sorted(sorted)
    }
    fn quantile(&self, u: f64) -> Result<f64> {
        self.inner().quantile(u)
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<Vec<f64>> {
        self.inner().sample(rng, n)
    }
}
