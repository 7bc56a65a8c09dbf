//! Aggregating episodes into cell metrics.

use serde::{Deserialize, Serialize};

use super::decisions::{EpisodeOutcome, UserPolicy};
use super::draw::{DrawModel, EpisodeDraw};
use super::episode::{evaluate, run_episode, sim_driver, SimMode};
use super::SimError;
use crate::money::Money;
use crate::underwriting::{CollateralSchedule, PricingPolicy, RiskChannel};

/// Pricing parameters of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParams {
    pub lambda: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub midpoint: f64,
    pub steepness: f64,
}

impl CellParams {
    pub fn pricing(&self) -> Result<PricingPolicy, SimError> {
        let p = PricingPolicy {
            channel: RiskChannel { fp: self.fp, fn_: self.fn_ },
            schedule: CollateralSchedule { midpoint: self.midpoint, steepness: self.steepness },
            loading: self.lambda,
        };
        p.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(p)
    }
}

/// Settings shared by every cell of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub user: UserPolicy,
    pub fee_rate: f64,
    pub mode: SimMode,
    pub model: DrawModel,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { user: UserPolicy::default(), fee_rate: 0.02, mode: SimMode::Engine, model: DrawModel::default() }
    }
}

/// Raw counts and sums over a cell's episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTotals {
    pub episodes: u64,
    pub opted_in: u64,
    pub covered: u64,
    pub executed: u64,
    pub cancelled: u64,
    pub overridden: u64,
    pub failed: u64,
    pub counterfactual_failed: u64,
    pub user_loss: Money,
    pub counterfactual_loss: Money,
    pub premium_total: Money,
    pub wallet: Money,
}

impl CellTotals {
    pub fn add(&mut self, o: &EpisodeOutcome) {
        self.episodes += 1;
        self.opted_in += o.opted_in as u64;
        self.covered += o.uw_active as u64;
        self.executed += o.executed as u64;
        self.cancelled += o.cancelled as u64;
        self.overridden += o.overridden as u64;
        self.failed += o.failed as u64;
        self.counterfactual_failed += o.counterfactual_failed as u64;
        self.user_loss += o.user_loss;
        self.counterfactual_loss += o.counterfactual_loss;
        self.premium_total += o.premium_paid;
        self.wallet += o.delta_w;
    }
}

/// Metrics of one cell. Reduction rates are `None` when the baseline has no
/// losses or failures to reduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub params: CellParams,
    /// Share of episodes in which coverage was actually bound.
    pub adoption_rate: f64,
    /// Share of episodes in which the user chose to buy coverage.
    pub opt_in_rate: f64,
    pub loss_reduction_rate: Option<f64>,
    pub failure_reduction_rate: Option<f64>,
    /// Underwriter net over the cell.
    pub wallet_final: Money,
    pub premium_total: Money,
    pub episodes: u64,
    pub seed: u64,
    pub totals: CellTotals,
}

impl SweepResult {
    pub fn from_totals(params: CellParams, seed: u64, t: CellTotals) -> Self {
        let n = t.episodes.max(1) as f64;
        let loss = (t.counterfactual_loss.is_positive())
            .then(|| 1.0 - t.user_loss.minor() as f64 / t.counterfactual_loss.minor() as f64);
        let fail = (t.counterfactual_failed > 0)
            .then(|| 1.0 - t.failed as f64 / t.counterfactual_failed as f64);
        SweepResult {
            params,
            adoption_rate: t.covered as f64 / n,
            opt_in_rate: t.opted_in as f64 / n,
            loss_reduction_rate: loss,
            failure_reduction_rate: fail,
            wallet_final: t.wallet,
            premium_total: t.premium_total,
            episodes: t.episodes,
            seed,
            totals: t,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.loss_reduction_rate.is_none() || self.failure_reduction_rate.is_none()
    }
}

/// Runs one cell over pre-drawn episodes.
pub fn run_cell_on(
    params: &CellParams,
    draws: &[EpisodeDraw],
    seed: u64,
    settings: &SimSettings,
) -> Result<SweepResult, SimError> {
    let pricing = params.pricing()?;
    let mut totals = CellTotals::default();
    match settings.mode {
        SimMode::Equations => {
            for d in draws {
                totals.add(&evaluate(d, &pricing, &settings.user));
            }
        }
        SimMode::Engine => {
            let mut driver = sim_driver();
            let uw = driver.parties.underwriter.clone().unwrap_or_default();
            let opening = driver.engine.ledger().wallet_balance(&uw);
            for (i, d) in draws.iter().enumerate() {
                let o = run_episode(i as u64, d, &pricing, &settings.user, settings.fee_rate, &mut driver)?;
                totals.add(&o);
            }
            let ledger_wallet = driver.engine.ledger().wallet_balance(&uw) - opening;
            if ledger_wallet != totals.wallet {
                return Err(SimError::EngineInconsistency {
                    episode: draws.len() as u64,
                    field: "wallet_final",
                    equations: totals.wallet.to_string(),
                    ledger: ledger_wallet.to_string(),
                });
            }
        }
    }
    Ok(SweepResult::from_totals(*params, seed, totals))
}

/// Draws `episodes` episodes from `seed` and runs one cell.
pub fn run_cell(
    params: &CellParams,
    episodes: u64,
    seed: u64,
    settings: &SimSettings,
) -> Result<SweepResult, SimError> {
    if episodes == 0 {
        return Err(SimError::InvalidConfig("episodes must be positive".into()));
    }
    settings.model.validate().map_err(SimError::InvalidConfig)?;
    settings.user.validate().map_err(SimError::InvalidConfig)?;
    let draws = settings.model.draws(seed, episodes, settings.user.history);
    run_cell_on(params, &draws, seed, settings)
}
