//! One episode, either straight from the equations or as a full job driven
//! through the engine and ledger.

use serde::{Deserialize, Serialize};

use super::decisions::{
    merchant_posts, resolve_execution, resolve_outcome, user_adopts, user_estimate, EpisodeOutcome,
    UserPolicy,
};
use super::draw::EpisodeDraw;
use super::SimError;
use crate::agreement::{AgreementHash, Deadlines, JobId, Role};
use crate::ledger::{AccountId, InstructionKind};
use crate::lifecycle::{
    ActionBody, CollateralDecision, Evaluation, Evaluator, FeeDecision, JobState, OverrideChoice,
    Phase, UwVerdict, Verdict,
};
use crate::money::Money;
use crate::scenario::{self, Driver};
use crate::underwriting::{quote, PricingPolicy};

/// How cells are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Every episode runs as a job through the engine and its economics are
    /// checked against the equations.
    #[default]
    Engine,
    /// Equations only.
    Equations,
}

/// Premium and collateral in minor units for this draw.
pub fn priced(draw: &EpisodeDraw, pricing: &PricingPolicy) -> (Money, Money) {
    let m = draw.principal;
    quote(draw.p, m.minor() as f64 / 100.0, pricing).to_minor(m)
}

/// The episode's economics from the decision rules alone.
pub fn evaluate(draw: &EpisodeDraw, pricing: &PricingPolicy, user: &UserPolicy) -> EpisodeOutcome {
    let m = draw.principal;
    let (premium, collateral) = priced(draw, pricing);
    let opted_in = user_adopts(user_estimate(draw, user), user.alpha, m, premium);
    let posted = merchant_posts(collateral, m, draw.merchant_roll);
    let exec = resolve_execution(opted_in, collateral, posted, draw.override_roll);
    let res = resolve_outcome(&exec, draw.p, draw.failure_roll, m, collateral, premium);
    let counterfactual_failed = draw.failure_roll < draw.p;
    EpisodeOutcome {
        opted_in,
        executed: exec.executed,
        uw_active: exec.uw_active,
        overridden: exec.overridden,
        cancelled: exec.cancelled,
        failed: res.failed,
        user_loss: res.user_loss,
        premium_paid: res.premium_paid,
        delta_w: res.delta_w,
        counterfactual_loss: if counterfactual_failed { m } else { Money::ZERO },
        counterfactual_failed,
    }
}

/// Opening balance of every simulated wallet.
pub const SIM_ENDOWMENT: Money = Money(1_000_000_000_000_000);

/// A driver over the standard assistant-requestor roster, with the event
/// log switched off so long runs stay flat in memory.
pub fn sim_driver() -> Driver {
    let mut d = Driver::new(scenario::standard_parties(true), SIM_ENDOWMENT);
    d.engine.set_recording(false);
    d
}

struct RollEvaluator {
    failed: bool,
}

impl Evaluator for RollEvaluator {
    fn evaluate(&self, state: &JobState) -> Evaluation {
        Evaluation {
            outcome: if self.failed { Verdict::Fail } else { Verdict::Pass },
            trigger: self.failed.then(|| "execution failure".to_string()),
            evidence_ref: Some(format!("{}/evaluation", state.job_id)),
        }
    }
}

/// Runs the episode as a job on `driver`, then rebuilds its economics from
/// the ledger receipts and job facts and compares them with [`evaluate`].
pub fn run_episode(
    index: u64,
    draw: &EpisodeDraw,
    pricing: &PricingPolicy,
    user: &UserPolicy,
    fee_rate: f64,
    driver: &mut Driver,
) -> Result<EpisodeOutcome, SimError> {
    let expected = evaluate(draw, pricing, user);
    let (premium, collateral) = priced(draw, pricing);
    let m = draw.principal;
    let job = JobId::new(format!("e{index}"));
    let r = |what: &str| format!("{job}/{what}");
    let h = AgreementHash::ZERO;
    let receipts_before = driver.engine.ledger().receipts().len();

    let fee = Money::round_minor(m.minor() as f64 * fee_rate);
    let mut agreement = scenario::fund_agreement(&job, &driver.parties, fee, m);
    let t = driver.clock;
    agreement.deadlines = Deadlines { premium: t + 100, delivery: t + 1_000, claim: t + 2_000, dispute: t + 2_000 };
    driver.bind(&agreement)?;

    driver.act(&job, Role::AssistantRequestor, ActionBody::LockFeeEscrow { agreement_hash: h, lock_ref: r("fee-lock") })?;
    driver.act(&job, Role::BusinessAgent, ActionBody::RequestUW { agreement_hash: h, coverage_request: m })?;
    driver.act(
        &job,
        Role::Underwriter,
        ActionBody::UWDecision {
            agreement_hash: h,
            decision: UwVerdict::Approve,
            premium,
            collateral_required: Some(collateral),
        },
    )?;

    let posted = super::decisions::merchant_posts(collateral, m, draw.merchant_roll);
    let mut needs_override = true;
    if expected.opted_in {
        driver.act(&job, Role::HumanRequestor, ActionBody::PayPremium { agreement_hash: h, premium, premium_ref: r("premium") })?;
        if collateral.is_zero() {
            needs_override = false;
        } else if posted {
            driver.act(
                &job,
                Role::BusinessAgent,
                ActionBody::LockCollateral { agreement_hash: h, amount: Some(collateral), collateral_ref: Some(r("collateral")) },
            )?;
            needs_override = false;
        } else {
            driver.act(&job, Role::BusinessAgent, ActionBody::RefuseCollateral { agreement_hash: h })?;
        }
    } else {
        // Let the premium offer lapse.
        driver.clock = agreement.deadlines.premium;
    }
    if needs_override {
        let decision = if expected.executed { OverrideChoice::Proceed } else { OverrideChoice::Cancel };
        driver.act(&job, Role::HumanRequestor, ActionBody::OverrideDecision { agreement_hash: h, decision })?;
    }

    if expected.executed {
        execute_and_settle(driver, &job, draw, expected.failed)?;
    } else {
        let s = driver.engine.job(&job).expect("job exists");
        let fee_refund_ref = (s.fee_held() && fee.is_positive()).then(|| r("fee-refund"));
        let premium_refund_ref = s.premium_held().is_positive().then(|| r("premium-refund"));
        let collateral_unlock_ref = s.collateral_held().is_positive().then(|| r("collateral-unlock"));
        driver.act(
            &job,
            Role::SettlementLayer,
            ActionBody::UnwindPreExecution { agreement_hash: h, premium_refund_ref, collateral_unlock_ref, fee_refund_ref },
        )?;
    }

    let state = driver.engine.evict(&job).expect("job exists");
    let receipts = &driver.engine.ledger().receipts()[receipts_before..];
    let observed = from_ledger(&state, receipts, &driver.parties.underwriter.clone().unwrap_or_default(), expected);
    check(index, &expected, &observed)?;
    Ok(expected)
}

fn execute_and_settle(driver: &mut Driver, job: &JobId, draw: &EpisodeDraw, failed: bool) -> Result<(), SimError> {
    let h = AgreementHash::ZERO;
    let r = |what: &str| format!("{job}/{what}");
    let covered = crate::lifecycle::coverage_bound(driver.engine.job(job).expect("job exists"));
    let cosigner = if covered { Role::Underwriter } else { Role::HumanRequestor };
    driver.act(job, Role::AssistantRequestor, ActionBody::ApproveRelease { agreement_hash: h })?;
    driver.act(job, cosigner, ActionBody::ApproveRelease { agreement_hash: h })?;
    driver.act(
        job,
        Role::SettlementLayer,
        ActionBody::ReleasePrincipal {
            agreement_hash: h,
            approvals: vec![],
            transfer_ref: r("transfer"),
            amount: draw.principal,
            destination: scenario::DESTINATION.into(),
        },
    )?;
    driver.act(job, Role::BusinessAgent, ActionBody::SubmitDeliverable { agreement_hash: h, deliverable_ref: r("deliverable") })?;
    driver.act(job, Role::BusinessAgent, ActionBody::SubmitExecutionEvidence { agreement_hash: h, exec_evidence_ref: r("execution") })?;

    let verdict = RollEvaluator { failed }.evaluate(driver.engine.job(job).expect("job exists"));
    driver.act(
        job,
        Role::Evaluator,
        ActionBody::EvaluateOutcome {
            agreement_hash: h,
            outcome: verdict.outcome,
            trigger: verdict.trigger.clone(),
            evidence_ref: verdict.evidence_ref,
        },
    )?;
    let decision = if failed { FeeDecision::Refund } else { FeeDecision::Release };
    driver.act(job, Role::SettlementLayer, ActionBody::SettleFeeEscrow { agreement_hash: h, decision, settlement_ref: r("fee-settlement") })?;

    let (held, principal) = {
        let s = driver.engine.job(job).expect("job exists");
        (s.collateral_held(), draw.principal)
    };
    if held.is_positive() {
        let (decision, amount) = if failed {
            (CollateralDecision::Slash, crate::ledger::settle_claim(principal, held, principal).slash)
        } else {
            (CollateralDecision::Unlock, held)
        };
        driver.act(
            job,
            Role::SettlementLayer,
            ActionBody::SettleCollateral { agreement_hash: h, decision, amount, settlement_ref: r("collateral-settlement") },
        )?;
    }
    let s = driver.engine.job(job).expect("job exists");
    if s.claim_eligible() {
        let slashed = s.facts.collateral_slashed;
        let limit = s.agreement().expect("bound").coverage_limit;
        driver.act(
            job,
            Role::AssistantRequestor,
            ActionBody::FileClaim {
                agreement_hash: h,
                trigger: verdict.trigger.unwrap_or_default(),
                claimed_loss: principal,
                evidence_ref: r("claim-evidence"),
            },
        )?;
        let payout = crate::ledger::settle_claim(principal, slashed, limit).reimbursement;
        driver.act(job, Role::Underwriter, ActionBody::PayClaim { agreement_hash: h, payout, payout_ref: r("payout") })?;
    }
    Ok(())
}

/// Economics as the protocol recorded them.
fn from_ledger(
    state: &JobState,
    receipts: &[crate::ledger::Receipt],
    underwriter: &str,
    expected: EpisodeOutcome,
) -> EpisodeOutcome {
    let uw = AccountId::wallet(underwriter);
    let human = AccountId::wallet(state.parties.human.clone());
    let mut delta_w = Money::ZERO;
    let mut premium_paid = Money::ZERO;
    let mut principal_out = Money::ZERO;
    let mut compensation = Money::ZERO;
    for rc in receipts {
        let i = &rc.instruction;
        if i.to == uw {
            delta_w += i.amount;
        }
        if i.from == uw {
            delta_w -= i.amount;
        }
        match i.kind {
            InstructionKind::CollectPremium => premium_paid += i.amount,
            InstructionKind::RefundPremium => premium_paid -= i.amount,
            InstructionKind::TransferPrincipal => principal_out += i.amount,
            InstructionKind::SlashCollateral | InstructionKind::PayClaim if i.to == human => {
                compensation += i.amount
            }
            _ => {}
        }
    }
    let failed = matches!(&state.facts.outcome, Some(o) if o.outcome == Verdict::Fail);
    EpisodeOutcome {
        opted_in: state.facts.premium_paid.is_some(),
        executed: state.facts.transfer_ref.is_some() && state.phase == Phase::Closed,
        uw_active: crate::lifecycle::coverage_bound(state),
        cancelled: state.phase == Phase::Cancelled,
        failed,
        user_loss: if failed { principal_out - compensation } else { Money::ZERO },
        premium_paid,
        delta_w,
        ..expected
    }
}

fn check(index: u64, eq: &EpisodeOutcome, led: &EpisodeOutcome) -> Result<(), SimError> {
    let fields: [(&str, String, String); 7] = [
        ("opted_in", eq.opted_in.to_string(), led.opted_in.to_string()),
        ("executed", eq.executed.to_string(), led.executed.to_string()),
        ("uw_active", eq.uw_active.to_string(), led.uw_active.to_string()),
        ("cancelled", eq.cancelled.to_string(), led.cancelled.to_string()),
        ("failed", eq.failed.to_string(), led.failed.to_string()),
        ("user_loss", eq.user_loss.to_string(), led.user_loss.to_string()),
        ("delta_w", eq.delta_w.to_string(), led.delta_w.to_string()),
    ];
    for (field, e, l) in fields {
        if e != l {
            return Err(SimError::EngineInconsistency { episode: index, field, equations: e, ledger: l });
        }
    }
    if eq.premium_paid != led.premium_paid {
        return Err(SimError::EngineInconsistency {
            episode: index,
            field: "premium_paid",
            equations: eq.premium_paid.to_string(),
            ledger: led.premium_paid.to_string(),
        });
    }
    Ok(())
}
