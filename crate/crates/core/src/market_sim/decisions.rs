//! Behavioural rules of users, merchants and the human override, and the
//! resolution of an episode's economics. Amounts are in minor units so the
//! equations agree exactly with what the ledger records.

use serde::{Deserialize, Serialize};

use super::draw::EpisodeDraw;
use crate::money::Money;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserPolicy {
    pub history: u32,
    pub sigma_user: f64,
    /// Risk aversion, at least 1.
    pub alpha: f64,
}

impl Default for UserPolicy {
    fn default() -> Self {
        UserPolicy { history: 100, sigma_user: 0.06, alpha: 1.0 }
    }
}

impl UserPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.history == 0 {
            return Err("history must be positive".into());
        }
        if !(self.sigma_user >= 0.0 && self.sigma_user.is_finite()) {
            return Err(format!("sigma_user must be non-negative, got {}", self.sigma_user));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be at least 1, got {}", self.alpha));
        }
        Ok(())
    }
}

/// Empirical failure rate of the user's history plus noise, clipped to [0, 1].
pub fn user_estimate(draw: &EpisodeDraw, policy: &UserPolicy) -> f64 {
    let mean = draw.history_failures as f64 / draw.history_len.max(1) as f64;
    (mean + policy.sigma_user * draw.noise_z).clamp(0.0, 1.0)
}

/// The user opts into coverage iff the perceived expected loss strictly
/// exceeds the premium.
pub fn user_adopts(p_user: f64, alpha: f64, principal: Money, premium: Money) -> bool {
    alpha * principal.minor() as f64 * p_user > premium.minor() as f64
}

pub fn posting_probability(collateral: Money, principal: Money) -> f64 {
    0.90 - 0.80 * (collateral.minor() as f64 / principal.minor() as f64)
}

pub fn merchant_posts(collateral: Money, principal: Money, roll: f64) -> bool {
    roll < posting_probability(collateral, principal)
}

pub fn override_succeeds(roll: f64) -> bool {
    roll < 0.5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub executed: bool,
    /// Coverage bound: the user paid and collateral is posted or not needed.
    pub uw_active: bool,
    pub overridden: bool,
    pub cancelled: bool,
}

/// Whether the job executes. With no collateral demanded it always does;
/// otherwise the merchant must post, or the human override must succeed.
pub fn resolve_execution(adopted: bool, collateral: Money, posted: bool, override_roll: f64) -> Execution {
    if collateral.is_zero() || posted {
        Execution { executed: true, uw_active: adopted, ..Default::default() }
    } else if override_succeeds(override_roll) {
        Execution { executed: true, overridden: true, ..Default::default() }
    } else {
        Execution { cancelled: true, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub failed: bool,
    pub user_loss: Money,
    pub premium_paid: Money,
    /// Underwriter net.
    pub delta_w: Money,
}

pub fn resolve_outcome(
    exec: &Execution,
    p: f64,
    failure_roll: f64,
    principal: Money,
    collateral: Money,
    premium: Money,
) -> Resolution {
    let failed = exec.executed && failure_roll < p;
    let user_loss = if failed && !exec.uw_active { principal } else { Money::ZERO };
    let (premium_paid, delta_w) = if exec.uw_active {
        let payout = if failed { (principal - collateral).max(Money::ZERO) } else { Money::ZERO };
        (premium, premium - payout)
    } else {
        (Money::ZERO, Money::ZERO)
    };
    Resolution { failed, user_loss, premium_paid, delta_w }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub opted_in: bool,
    pub executed: bool,
    pub uw_active: bool,
    pub overridden: bool,
    pub cancelled: bool,
    pub failed: bool,
    pub user_loss: Money,
    pub premium_paid: Money,
    pub delta_w: Money,
    /// Loss on the same draws with no underwriting: the job always executes.
    pub counterfactual_loss: Money,
    pub counterfactual_failed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(failures: u32, z: f64) -> EpisodeDraw {
        EpisodeDraw {
            principal: Money(10_000),
            p: 0.1,
            history_len: 100,
            history_failures: failures,
            noise_z: z,
            merchant_roll: 0.0,
            override_roll: 0.0,
            failure_roll: 0.0,
        }
    }

    #[test]
    fn user_estimate_examples() {
        let quiet = UserPolicy { sigma_user: 0.1, ..Default::default() };
        assert_eq!(user_estimate(&draw(0, 0.0), &quiet), 0.0);
        assert_eq!(user_estimate(&draw(15, 0.0), &quiet), 0.15);
        assert_eq!(user_estimate(&draw(98, 1.0), &quiet), 1.0);
        assert_eq!(user_estimate(&draw(1, -1.0), &quiet), 0.0);
    }

    #[test]
    fn adoption_is_strict() {
        assert!(user_adopts(0.01, 1.0, Money(100), Money(0)));
        assert!(!user_adopts(0.1, 1.0, Money(10_000), Money(1_000)));
        assert!(user_adopts(0.1, 2.0, Money(10_000), Money(1_000)));
        assert!(!user_adopts(0.0, 1.0, Money(10_000), Money(0)));
    }

    #[test]
    fn posting_probability_endpoints() {
        let m = Money(10_000);
        assert!((posting_probability(Money(0), m) - 0.90).abs() < 1e-15);
        assert!((posting_probability(m, m) - 0.10).abs() < 1e-15);
        assert!((posting_probability(Money(5_000), m) - 0.50).abs() < 1e-15);
        assert!(merchant_posts(Money(5_000), m, 0.49));
        assert!(!merchant_posts(Money(5_000), m, 0.50));
    }

    #[test]
    fn execution_cases() {
        let d = Money(100);
        assert_eq!(resolve_execution(true, d, true, 0.9), Execution { executed: true, uw_active: true, ..Default::default() });
        assert_eq!(resolve_execution(true, d, false, 0.2), Execution { executed: true, overridden: true, ..Default::default() });
        assert_eq!(resolve_execution(true, d, false, 0.7), Execution { cancelled: true, ..Default::default() });
        assert_eq!(resolve_execution(true, Money(0), false, 0.7), Execution { executed: true, uw_active: true, ..Default::default() });
        assert_eq!(resolve_execution(false, Money(0), false, 0.7), Execution { executed: true, ..Default::default() });
    }

    #[test]
    fn outcome_examples() {
        let active = Execution { executed: true, uw_active: true, ..Default::default() };
        let r = resolve_outcome(&active, 0.5, 0.1, Money(1_000), Money(100), Money(20));
        assert_eq!(r, Resolution { failed: true, user_loss: Money(0), premium_paid: Money(20), delta_w: Money(20 - 900) });
        let r = resolve_outcome(&active, 0.5, 0.9, Money(1_000), Money(100), Money(20));
        assert_eq!(r.delta_w, Money(20));
        let bare = Execution { executed: true, ..Default::default() };
        let r = resolve_outcome(&bare, 0.5, 0.1, Money(1_000), Money(100), Money(20));
        assert_eq!((r.user_loss, r.delta_w), (Money(1_000), Money(0)));
        let cancelled = Execution { cancelled: true, ..Default::default() };
        let r = resolve_outcome(&cancelled, 1.0, 0.0, Money(1_000), Money(100), Money(20));
        assert_eq!(r, Resolution::default());
    }
}
