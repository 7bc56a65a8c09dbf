//! Benchmark fixtures.

use ars_core::lifecycle::{CollateralDecision, FeeDecision, UwVerdict, Verdict};
use ars_core::market_sim::{EpisodeDraw, SimMode, SimSettings, SweepConfig, SweepKind};
use ars_core::scenario::{fund_agreement, standard_parties, Driver, DESTINATION};
use ars_core::{ActionBody, AgreementHash, EngineError, JobId, Money, Role};

pub fn driver() -> Driver {
    Driver::new(standard_parties(true), Money(1_000_000_000))
}

/// Runs a covered fund-involving job from request to a passing close.
pub fn pass_job(d: &mut Driver, job: &JobId) -> Result<(), EngineError> {
    let h = AgreementHash::ZERO;
    let mut a = fund_agreement(job, &d.parties, Money(200), Money(1_000));
    // Deadlines are absolute; keep them ahead of a long-running clock.
    let dl = &mut a.deadlines;
    for t in [&mut dl.premium, &mut dl.delivery, &mut dl.claim, &mut dl.dispute] {
        *t += d.clock;
    }
    d.bind(&a)?;
    let r = |tag: &str| format!("{job}/{tag}");
    let steps = [
        (Role::AssistantRequestor, ActionBody::LockFeeEscrow { agreement_hash: h, lock_ref: r("l") }),
        (Role::BusinessAgent, ActionBody::RequestUW { agreement_hash: h, coverage_request: Money(1_000) }),
        (
            Role::Underwriter,
            ActionBody::UWDecision {
                agreement_hash: h,
                decision: UwVerdict::Approve,
                premium: Money(20),
                collateral_required: Some(Money(100)),
            },
        ),
        (Role::HumanRequestor, ActionBody::PayPremium { agreement_hash: h, premium: Money(20), premium_ref: r("p") }),
        (
            Role::BusinessAgent,
            ActionBody::LockCollateral { agreement_hash: h, amount: Some(Money(100)), collateral_ref: Some(r("c")) },
        ),
        (Role::AssistantRequestor, ActionBody::ApproveRelease { agreement_hash: h }),
        (Role::HumanRequestor, ActionBody::ApproveRelease { agreement_hash: h }),
        (
            Role::SettlementLayer,
            ActionBody::ReleasePrincipal {
                agreement_hash: h,
                approvals: Vec::new(),
                transfer_ref: r("t"),
                amount: Money(1_000),
                destination: DESTINATION.into(),
            },
        ),
        (Role::BusinessAgent, ActionBody::SubmitDeliverable { agreement_hash: h, deliverable_ref: r("d") }),
        (Role::BusinessAgent, ActionBody::SubmitExecutionEvidence { agreement_hash: h, exec_evidence_ref: r("e") }),
        (
            Role::Evaluator,
            ActionBody::EvaluateOutcome { agreement_hash: h, outcome: Verdict::Pass, trigger: None, evidence_ref: None },
        ),
        (
            Role::SettlementLayer,
            ActionBody::SettleFeeEscrow { agreement_hash: h, decision: FeeDecision::Release, settlement_ref: r("f") },
        ),
        (
            Role::SettlementLayer,
            ActionBody::SettleCollateral {
                agreement_hash: h,
                decision: CollateralDecision::Unlock,
                amount: Money(100),
                settlement_ref: r("s"),
            },
        ),
    ];
    for (role, body) in steps {
        d.act(job, role, body)?;
    }
    Ok(())
}

/// A driver holding `n` closed jobs and their event log.
pub fn closed_jobs(n: usize) -> Driver {
    let mut d = driver();
    for i in 0..n {
        pass_job(&mut d, &JobId::new(format!("b{i}"))).expect("scripted job closes");
    }
    d
}

/// Built-in λ-sweep settings and `episodes` draws at seed 7.
pub fn lambda_fixture(episodes: u64, mode: SimMode) -> (SimSettings, Vec<EpisodeDraw>) {
    let mut s = SweepConfig::builtin(SweepKind::Lambda).settings();
    s.mode = mode;
    let draws = s.model.draws(7, episodes, s.user.history);
    (s, draws)
}
