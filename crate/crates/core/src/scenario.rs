//! Ready-made rosters, keys and agreements for tests, benches, the
//! simulator and scripted runs.

use crate::agreement::{
    AssuranceMode, CollateralPolicy, Deadlines, FeeTerms, JobId, Keyring, Parties, PartyId,
    PremiumRefundPolicy, PrincipalTerms, Role, StructuredAgreement,
};
use crate::engine::{Engine, EngineError};
use crate::ledger::Ledger;
use crate::lifecycle::{ActionBody, JobState, StateMachine};
use crate::money::{Money, Timestamp};

/// Secret the demo keyring is derived from.
pub const DEMO_SECRET: &str = "ars-demo";

/// Wallet receiving released principal in the standard roster.
pub const DESTINATION: &str = "fx-desk";

pub fn standard_parties(with_assistant: bool) -> Parties {
    Parties {
        human: "user".into(),
        assistant: with_assistant.then(|| "assistant".into()),
        business_agent: "agent".into(),
        underwriter: Some("underwriter".into()),
        evaluator: "evaluator".into(),
        settlement: "settlement".into(),
    }
}

fn ids(p: &Parties) -> Vec<&str> {
    let mut v = vec![
        p.human.as_str(),
        &p.business_agent,
        &p.evaluator,
        &p.settlement,
    ];
    v.extend(p.assistant.as_deref());
    v.extend(p.underwriter.as_deref());
    v
}

pub fn keyring_for(parties: &Parties) -> Keyring {
    Keyring::derived(DEMO_SECRET, ids(parties))
}

pub fn deadlines() -> Deadlines {
    Deadlines {
        premium: 1_000,
        delivery: 10_000,
        claim: 20_000,
        dispute: 20_000,
    }
}

/// A fund-involving agreement moving `principal` to [`DESTINATION`], with
/// coverage up to the full principal.
pub fn fund_agreement(
    job: &JobId,
    parties: &Parties,
    fee: Money,
    principal: Money,
) -> StructuredAgreement {
    StructuredAgreement {
        job_id: job.clone(),
        parties: parties.clone(),
        task_spec: "fx conversion".into(),
        assurance_mode: AssuranceMode::FundInvolving,
        fee_terms: FeeTerms::escrow(fee),
        principal_terms: Some(PrincipalTerms {
            amount: principal,
            destination: DESTINATION.into(),
        }),
        acceptance_criteria: [("max_slippage_bps".to_string(), "50".to_string())].into(),
        deadlines: deadlines(),
        premium_refund_policy: PremiumRefundPolicy::Refundable,
        coverage_limit: principal,
        collateral_policy: CollateralPolicy::SlashUpToLoss,
        override_allowed: true,
    }
}

pub fn fee_only_agreement(job: &JobId, parties: &Parties, fee: Money) -> StructuredAgreement {
    StructuredAgreement {
        task_spec: "write a report".into(),
        assurance_mode: AssuranceMode::FeeOnly,
        principal_terms: None,
        coverage_limit: Money::ZERO,
        ..fund_agreement(job, parties, fee, Money(1))
    }
}

/// The FX running example: convert $10.00, fee $2.00, full coverage.
pub fn running_example(parties: &Parties) -> StructuredAgreement {
    fund_agreement(&JobId::new("j42"), parties, Money(200), Money(1_000))
}

/// An engine over the standard wallets, with a logical clock that ticks on
/// every action.
#[derive(Clone, Debug)]
pub struct Driver {
    pub engine: Engine,
    pub parties: Parties,
    pub clock: Timestamp,
}

impl Driver {
    /// Opens every roster wallet plus [`DESTINATION`] with `endowment`; the
    /// underwriter's wallet is its treasury and may overdraw.
    pub fn new(parties: Parties, endowment: Money) -> Self {
        let mut ledger = Ledger::new();
        for id in ids(&parties).into_iter().chain([DESTINATION]) {
            let treasury = Some(id) == parties.underwriter.as_deref();
            ledger
                .open_wallet(id, endowment, treasury)
                .expect("distinct ids");
        }
        let machine = StateMachine::new(keyring_for(&parties));
        Driver {
            engine: Engine::new(machine, ledger),
            parties,
            clock: 0,
        }
    }

    pub fn party(&self, role: Role) -> PartyId {
        self.parties
            .party(role)
            .unwrap_or_else(|| panic!("roster has no {role}"))
    }

    /// Signs and submits `body` as the roster's `role` at the next tick.
    pub fn act(
        &mut self,
        job: &JobId,
        role: Role,
        body: ActionBody,
    ) -> Result<&JobState, EngineError> {
        self.clock += 1;
        let action = self.engine.prepare(job, self.party(role), body);
        self.engine.submit(action, self.clock)
    }

    /// Submits the request and walks negotiation through to a bound
    /// agreement in `TRANSACTION`.
    pub fn bind(&mut self, agreement: &StructuredAgreement) -> Result<&JobState, EngineError> {
        let job = agreement.job_id.clone();
        let requestor = self.parties.requestor().role;
        self.act(
            &job,
            requestor,
            ActionBody::SubmitRequest {
                task_spec: agreement.task_spec.clone(),
                fee_terms: agreement.fee_terms.clone(),
                principal_terms: agreement.principal_terms.clone(),
                parties: agreement.parties.clone(),
            },
        )?;
        self.act(
            &job,
            Role::BusinessAgent,
            ActionBody::AcceptRequest { reason: None },
        )?;
        self.act(
            &job,
            Role::BusinessAgent,
            ActionBody::ProposeAgreement {
                agreement_draft: agreement.clone(),
            },
        )?;
        let h = crate::agreement::AgreementHash::ZERO;
        self.act(
            &job,
            requestor,
            ActionBody::SignAgreement { agreement_hash: h },
        )?;
        self.act(
            &job,
            Role::BusinessAgent,
            ActionBody::SignAgreement { agreement_hash: h },
        )
    }
}
