//! Parameterised distributions used by the traffic profiles.

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, LogNormal};
use thiserror::Error;

use crate::time::SimDuration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("{name} must be {rule}, got {value}")]
    Param {
        name: &'static str,
        rule: &'static str,
        value: f64,
    },
}

fn check(name: &'static str, rule: &'static str, value: f64, ok: bool) -> Result<(), DistError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(DistError::Param { name, rule, value })
    }
}

/// Log-normal duration given by its median and the sigma of `ln(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields)
)]
pub struct LogNormalSpec {
    pub median_secs: f64,
    pub sigma: f64,
}

impl LogNormalSpec {
    pub const fn new(median_secs: f64, sigma: f64) -> Self {
        LogNormalSpec { median_secs, sigma }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        check("median_secs", "> 0", self.median_secs, self.median_secs > 0.0)?;
        check("sigma", ">= 0", self.sigma, self.sigma >= 0.0)
    }

    pub fn mean_secs(&self) -> f64 {
        self.median_secs * libm::exp(self.sigma * self.sigma / 2.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        let d = LogNormal::new(libm::log(self.median_secs), self.sigma).expect("validated log-normal");
        SimDuration::from_secs_f64(d.sample(rng))
    }
}

/// Geometric count on `1, 2, ...` with the given mean.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(deny_unknown_fields)
)]
pub struct GeometricSpec {
    pub mean: f64,
}

impl GeometricSpec {
    pub fn validate(&self) -> Result<(), DistError> {
        check("mean", ">= 1", self.mean, self.mean >= 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let d = Geometric::new(1.0 / self.mean).expect("validated geometric");
        1 + d.sample(rng).min(u32::MAX as u64 - 1) as u32
    }
}

/// Waiting time to the next event of a Poisson process with `per_hour` rate.
pub fn exp_interarrival<R: Rng + ?Sized>(per_hour: f64, rng: &mut R) -> SimDuration {
    let d = Exp::new(per_hour / 3600.0).expect("positive rate");
    SimDuration::from_secs_f64(d.sample(rng)).max(SimDuration::from_millis(1))
}
