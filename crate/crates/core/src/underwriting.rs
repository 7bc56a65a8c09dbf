//! The simulated underwriter's pricing model.
//!
//! Risk is observed through a noisy channel, collateral follows a logistic
//! schedule in the estimated risk, and the premium prices the exposure left
//! after collateral, loaded by `λ`. Amounts are real-valued major units;
//! conversion to minor units happens only when a quote enters the protocol.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{0} must lie in [0, 1], got {1}")]
    NotAProbability(&'static str, f64),
    #[error("midpoint must lie in (0, 1), got {0}")]
    Midpoint(f64),
    #[error("steepness must be positive, got {0}")]
    Steepness(f64),
    #[error("loading must be non-negative, got {0}")]
    Loading(f64),
}

fn probability(name: &'static str, x: f64) -> Result<f64, PolicyError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(PolicyError::NotAProbability(name, x))
    }
}

/// Misclassification rates of the underwriter's risk signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskChannel {
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl RiskChannel {
    pub fn new(fp: f64, fn_: f64) -> Result<Self, PolicyError> {
        Ok(RiskChannel {
            fp: probability("fp", fp)?,
            fn_: probability("fn", fn_)?,
        })
    }
}

/// Logistic collateral schedule `σ(x) = 1 / (1 + exp(-s (x - m)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollateralSchedule {
    pub midpoint: f64,
    pub steepness: f64,
}

impl Default for CollateralSchedule {
    fn default() -> Self {
        CollateralSchedule {
            midpoint: 0.15,
            steepness: 10.0,
        }
    }
}

impl CollateralSchedule {
    pub fn new(midpoint: f64, steepness: f64) -> Result<Self, PolicyError> {
        if !(midpoint > 0.0 && midpoint < 1.0) {
            return Err(PolicyError::Midpoint(midpoint));
        }
        if !(steepness > 0.0 && steepness.is_finite()) {
            return Err(PolicyError::Steepness(steepness));
        }
        Ok(CollateralSchedule {
            midpoint,
            steepness,
        })
    }

    pub fn sigma(&self, x: f64) -> f64 {
        let z = self.steepness * (x - self.midpoint);
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    /// `1 - σ(x)`, computed without cancellation when `σ(x)` is near one.
    pub fn complement(&self, x: f64) -> f64 {
        CollateralSchedule {
            midpoint: -self.midpoint,
            steepness: self.steepness,
        }
        .sigma(-x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingPolicy {
    pub channel: RiskChannel,
    pub schedule: CollateralSchedule,
    pub loading: f64,
}

impl PricingPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        RiskChannel::new(self.channel.fp, self.channel.fn_)?;
        CollateralSchedule::new(self.schedule.midpoint, self.schedule.steepness)?;
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(PolicyError::Loading(self.loading));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub approve: bool,
    pub premium: f64,
    pub collateral_required: f64,
    pub estimated_risk: f64,
}

impl Quote {
    /// `(Π, D)` in minor units, half-up, with `D` capped at `principal`.
    pub fn to_minor(&self, principal: Money) -> (Money, Money) {
        let d = Money::round_minor(self.collateral_required * 100.0).min(principal);
        (Money::round_minor(self.premium * 100.0), d)
    }
}

/// `p̂ = p (1 - fn) + (1 - p) fp`.
pub fn estimate_risk(p: f64, channel: &RiskChannel) -> f64 {
    (p * (1.0 - channel.fn_) + (1.0 - p) * channel.fp).clamp(0.0, 1.0)
}

/// `D = σ(p̂) M`.
pub fn collateral(p_hat: f64, principal: f64, schedule: &CollateralSchedule) -> f64 {
    (schedule.sigma(p_hat) * principal).clamp(0.0, principal)
}

/// `Π = p̂ (1 - σ(p̂)) M (1 + λ)`.
pub fn premium(p_hat: f64, principal: f64, schedule: &CollateralSchedule, loading: f64) -> f64 {
    p_hat * schedule.complement(p_hat) * principal * (1.0 + loading)
}

/// The simulated underwriter always approves and prices risk through
/// collateral and premium.
pub fn quote(p: f64, principal: f64, policy: &PricingPolicy) -> Quote {
    let p_hat = estimate_risk(p, &policy.channel);
    Quote {
        approve: true,
        premium: premium(p_hat, principal, &policy.schedule, policy.loading),
        collateral_required: collateral(p_hat, principal, &policy.schedule),
        estimated_risk: p_hat,
    }
}
