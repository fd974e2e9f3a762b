use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A distribution or model parameter is outside its domain.
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// Observed data violates a precondition (non-positive values, too few points, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A probability argument is outside the open unit interval.
    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),

    /// Both mixture components assign zero density to an observation.
    #[error("observation {index} (x = {value}) has zero density under both components")]
    DegenerateSupport { index: usize, value: f64 },

    /// All posterior weight has collapsed away from one component.
    #[error("mixture component {0} received zero total posterior weight")]
    EmptyComponent(usize),

    #[error("initialization failed: {0}")]
    Initialization(String),

    /// Numerical routine (quadrature, root bracketing, ...) did not reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every optimizer start failed to produce a finite objective.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Accept-reject sampler acceptance rate collapsed.
    #[error("accept-reject envelope failure: acceptance rate {0:.2e}")]
    Envelope(f64),

    /// Too many bootstrap replicates failed to refit.
    #[error("bootstrap failed: {failed} of {total} replicate fits failed")]
    Bootstrap { failed: usize, total: usize },
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

pub(crate) fn check_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

pub(crate) fn check_probability(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::Probability(u))
    }
}

pub(crate) fn check_sample(x: &[f64]) -> Result<()> {
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Data(format!(
            "observation {i} is {v}; all values must be finite and > 0"
        )));
    }
    Ok(())
}
