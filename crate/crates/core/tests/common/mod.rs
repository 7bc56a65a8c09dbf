//! Harnesses shared by the integration suites and the acceptance report.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use ars_core::agreement::{CollateralPolicy, PremiumRefundPolicy};
use ars_core::lifecycle::{
    enabled_actions, CollateralDecision, FeeDecision, OverrideChoice, UwVerdict, Verdict,
};
use ars_core::market_sim::{
    run_cell_on, CellParams, DrawModel, SimMode, SimSettings, ToyUniverse, UserPolicy,
};
use ars_core::scenario::{fee_only_agreement, fund_agreement, keyring_for, standard_parties, Driver};
use ars_core::{
    AccountId, Action, ActionBody, ActionKind, AgreementHash, FeeTrackState, InstructionKind,
    JobId, JobState, Ledger, LedgerInstruction, Money, Parties, PartyId, Phase,
    PrincipalTrackState as P, Role, StateMachine, StructuredAgreement, TransitionError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Agreements and action bodies

pub fn random_agreement(r: &mut ChaCha8Rng, job: &JobId, parties: &Parties) -> StructuredAgreement {
    let fee = Money(r.random_range(0..500));
    let principal = Money(r.random_range(1..5_000));
    let mut a = if r.random_bool(0.15) {
        fee_only_agreement(job, parties, fee)
    } else {
        let mut a = fund_agreement(job, parties, fee, principal);
        if r.random_bool(0.3) {
            a.coverage_limit = Money(r.random_range(0..=principal.0));
        }
        a
    };
    a.override_allowed = r.random_bool(0.8);
    if r.random_bool(0.3) {
        a.premium_refund_policy = PremiumRefundPolicy::NonRefundable;
    }
    if r.random_bool(0.2) {
        a.collateral_policy = CollateralPolicy::NoSlash;
    }
    a
}

fn pick<T: Copy>(r: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[r.random_range(0..xs.len())]
}

/// A body of `kind` that is well formed for `state`. Variant choices (and
/// the occasional wrong amount) come from `r`. The agreement hash is left as
/// zero for the engine to fill.
pub fn body_for(
    kind: ActionKind,
    state: Option<&JobState>,
    agreement: &StructuredAgreement,
    r: &mut ChaCha8Rng,
) -> ActionBody {
    use ActionKind as K;
    let h = AgreementHash::ZERO;
    let job = &agreement.job_id;
    let m = agreement.principal_amount().unwrap_or(Money(1));
    let facts = state.map(|s| s.facts.clone()).unwrap_or_default();
    let off = |r: &mut ChaCha8Rng| if r.random_bool(0.05) { Money(1) } else { Money::ZERO };
    match kind {
        K::SubmitRequest => ActionBody::SubmitRequest {
            task_spec: agreement.task_spec.clone(),
            fee_terms: agreement.fee_terms.clone(),
            principal_terms: agreement.principal_terms.clone(),
            parties: agreement.parties.clone(),
        },
        K::AcceptRequest => ActionBody::AcceptRequest { reason: None },
        K::RejectRequest => ActionBody::RejectRequest { reason: Some("busy".into()) },
        K::ProposeAgreement => ActionBody::ProposeAgreement { agreement_draft: agreement.clone() },
        K::SignAgreement => ActionBody::SignAgreement { agreement_hash: h },
        K::CancelJob => ActionBody::CancelJob { agreement_hash: h, reason: "changed mind".into() },
        K::LockFeeEscrow => ActionBody::LockFeeEscrow { agreement_hash: h, lock_ref: format!("{job}/fee") },
        K::SubmitDeliverable => ActionBody::SubmitDeliverable {
            agreement_hash: h,
            deliverable_ref: format!("{job}/deliverable"),
        },
        K::SettleFeeEscrow => {
            let pass = matches!(&facts.outcome, Some(o) if o.outcome == Verdict::Pass);
            let matching = if pass { FeeDecision::Release } else { FeeDecision::Refund };
            let decision = if r.random_bool(0.9) { matching } else { pick(r, &[FeeDecision::Release, FeeDecision::Refund]) };
            ActionBody::SettleFeeEscrow { agreement_hash: h, decision, settlement_ref: format!("{job}/fee-settle") }
        }
        K::RequestUW => ActionBody::RequestUW { agreement_hash: h, coverage_request: m + off(r) },
        K::UWDecision => {
            let decision = if r.random_bool(0.8) { UwVerdict::Approve } else { UwVerdict::Reject };
            let premium = Money(pick(r, &[0, 1, 20, m.0 / 10]));
            let collateral = Money(pick(r, &[0, 0, m.0 / 10, m.0]));
            ActionBody::UWDecision { agreement_hash: h, decision, premium, collateral_required: Some(collateral) }
        }
        K::PayPremium => {
            let quoted = facts.uw_decision.map(|q| q.premium).unwrap_or_default();
            ActionBody::PayPremium { agreement_hash: h, premium: quoted + off(r), premium_ref: format!("{job}/premium") }
        }
        K::LockCollateral => {
            let d = facts.uw_decision.map(|q| q.collateral_required).unwrap_or_default();
            ActionBody::LockCollateral {
                agreement_hash: h,
                amount: Some(d + off(r)),
                collateral_ref: Some(format!("{job}/collateral")),
            }
        }
        K::RefuseCollateral => ActionBody::RefuseCollateral { agreement_hash: h },
        K::OverrideDecision => ActionBody::OverrideDecision {
            agreement_hash: h,
            decision: if r.random_bool(0.75) { OverrideChoice::Proceed } else { OverrideChoice::Cancel },
        },
        K::ApproveRelease => ActionBody::ApproveRelease { agreement_hash: h },
        K::ReleasePrincipal => {
            let terms = agreement.principal_terms.clone();
            ActionBody::ReleasePrincipal {
                agreement_hash: h,
                approvals: Vec::new(),
                transfer_ref: format!("{job}/transfer"),
                amount: terms.as_ref().map(|t| t.amount).unwrap_or_default() + off(r),
                destination: terms.map(|t| t.destination).unwrap_or_default(),
            }
        }
        K::SubmitExecutionEvidence => ActionBody::SubmitExecutionEvidence {
            agreement_hash: h,
            exec_evidence_ref: format!("{job}/receipt"),
        },
        K::UnwindPreExecution => {
            let s = state;
            let refundable = agreement.premium_refund_policy == PremiumRefundPolicy::Refundable;
            let premium = s.map(|s| s.premium_held()).unwrap_or_default();
            let collateral = s.map(|s| s.collateral_held()).unwrap_or_default();
            let fee = s.map(|s| s.fee_held()).unwrap_or(false) && agreement.fee_terms.amount.is_positive();
            ActionBody::UnwindPreExecution {
                agreement_hash: h,
                premium_refund_ref: (refundable && premium.is_positive()).then(|| format!("{job}/unwind-premium")),
                collateral_unlock_ref: collateral.is_positive().then(|| format!("{job}/unwind-collateral")),
                fee_refund_ref: fee.then(|| format!("{job}/unwind-fee")),
            }
        }
        K::EvaluateOutcome => {
            let fail = r.random_bool(0.4);
            ActionBody::EvaluateOutcome {
                agreement_hash: h,
                outcome: if fail { Verdict::Fail } else { Verdict::Pass },
                trigger: fail.then(|| "loss".to_string()),
                evidence_ref: Some(format!("{job}/evidence")),
            }
        }
        K::SettleCollateral => {
            let d = state.map(|s| s.collateral_held()).unwrap_or_default();
            let fail = matches!(&facts.outcome, Some(o) if o.outcome == Verdict::Fail);
            let slash = fail && agreement.collateral_policy == CollateralPolicy::SlashUpToLoss && r.random_bool(0.9);
            ActionBody::SettleCollateral {
                agreement_hash: h,
                decision: if slash { CollateralDecision::Slash } else { CollateralDecision::Unlock },
                amount: if slash { d.min(m) } else { d },
                settlement_ref: format!("{job}/collateral-settle"),
            }
        }
        K::FileClaim => ActionBody::FileClaim {
            agreement_hash: h,
            trigger: "loss".into(),
            claimed_loss: m,
            evidence_ref: format!("{job}/claim-evidence"),
        },
        K::PayClaim => {
            let limit = agreement.coverage_limit;
            let claimed = facts.claim.as_ref().map(|c| c.claimed_loss).unwrap_or_default();
            let due = (claimed - facts.collateral_slashed).min(limit).max(Money::ZERO);
            ActionBody::PayClaim { agreement_hash: h, payout: due + off(r), payout_ref: format!("{job}/payout") }
        }
    }
}

// ---------------------------------------------------------------------------
// Release predicate, restated from its definition

/// `ReleaseAuth ∧ (CoverageBound ∨ OverrideAck)` over the recorded facts.
pub fn ready_oracle(s: &JobState) -> bool {
    let roles: BTreeSet<Role> = s.facts.approvals.iter().map(|t| t.signer.role).collect();
    let h = roles.contains(&Role::HumanRequestor);
    let a = s.parties.assistant.is_none() || roles.contains(&Role::AssistantRequestor);
    let u = roles.contains(&Role::Underwriter);
    let approved = matches!(s.facts.uw_decision, Some(q) if q.decision == UwVerdict::Approve);
    let bound = approved && s.facts.premium_paid.is_some() && s.facts.premium_refund_ref.is_none();
    a && (u || h) && (bound || s.facts.override_ack)
}

// ---------------------------------------------------------------------------
// Random multi-job walks through the engine

#[derive(Clone, Copy, Debug)]
pub struct Mix {
    /// Share of steps that try a random (kind, role) pair.
    pub noise: f64,
    /// Share of steps that try ReleasePrincipal with a chosen approval set.
    pub forged_release: f64,
}

impl Mix {
    pub const ADVERSARIAL: Mix = Mix { noise: 0.15, forged_release: 0.1 };
    pub const MOSTLY_VALID: Mix = Mix { noise: 0.05, forged_release: 0.02 };
}

#[derive(Clone, Debug)]
pub struct ReleaseSeen {
    pub job: JobId,
    pub ready_before: bool,
    pub roles: BTreeSet<Role>,
    pub assistant_job: bool,
}

pub struct Walk {
    pub driver: Driver,
    pub jobs: Vec<(JobId, StructuredAgreement)>,
    pub accepted: usize,
    pub rejected: usize,
    pub releases: Vec<ReleaseSeen>,
}

pub fn walk(seed: u64, jobs: usize, steps: usize, mix: Mix, record: bool) -> Walk {
    let mut r = rng(seed);
    let assistant = r.random_bool(0.5);
    let parties = standard_parties(assistant);
    let mut driver = Driver::new(parties.clone(), Money(1_000_000_000));
    driver.engine.set_recording(record);
    let jobs: Vec<(JobId, StructuredAgreement)> = (0..jobs)
        .map(|i| {
            let id = JobId::new(format!("w{seed}-{i}"));
            let a = random_agreement(&mut r, &id, &parties);
            (id, a)
        })
        .collect();
    let mut w = Walk { driver, jobs, accepted: 0, rejected: 0, releases: Vec::new() };
    for _ in 0..steps {
        let j = r.random_range(0..w.jobs.len());
        let (job, agreement) = (&w.jobs[j].0, &w.jobs[j].1);
        w.driver.clock += if r.random_bool(0.02) { r.random_range(100..3_000) } else { 1 };
        let now = w.driver.clock;
        let roll: f64 = r.random();
        let state = w.driver.engine.job(job);

        let (kind, role, forged) = match state {
            None => (ActionKind::SubmitRequest, parties.requestor().role, None),
            Some(s) if roll < mix.forged_release => {
                let keys = w.driver.engine.machine().keys();
                let subject = s.subject_hash();
                let mut approvals = Vec::new();
                for role in [Role::HumanRequestor, Role::AssistantRequestor, Role::Underwriter] {
                    if let Some(p) = parties.party(role) {
                        if r.random_bool(0.5) {
                            approvals.extend(keys.sign(&p, job, &subject, ActionKind::ApproveRelease));
                        }
                    }
                }
                (ActionKind::ReleasePrincipal, pick(&mut r, &Role::ALL), Some(approvals))
            }
            Some(_) if roll < mix.forged_release + mix.noise => {
                (pick(&mut r, &ActionKind::ALL), pick(&mut r, &Role::ALL), None)
            }
            Some(s) => {
                let en = enabled_actions(s);
                if en.is_empty() {
                    continue;
                }
                // Cancels and rejections end a walk early; make them rare.
                let mut e = &en[r.random_range(0..en.len())];
                for _ in 0..3 {
                    if !matches!(e.kind, ActionKind::CancelJob | ActionKind::RejectRequest) {
                        break;
                    }
                    e = &en[r.random_range(0..en.len())];
                }
                (e.kind, pick(&mut r, &e.roles), None)
            }
        };
        let ready_before = state.map(ready_oracle).unwrap_or(false);
        let sender = parties.party(role).unwrap_or_else(|| PartyId::new("stranger", role));
        let body = body_for(kind, state, agreement, &mut r);
        let mut action = w.driver.engine.prepare(job, sender, body);
        if let (Some(forged), ActionBody::ReleasePrincipal { approvals, .. }) = (forged, &mut action.body) {
            *approvals = forged;
        }
        let job = job.clone();
        match w.driver.engine.submit(action, now) {
            Ok(after) => {
                w.accepted += 1;
                if kind == ActionKind::ReleasePrincipal {
                    w.releases.push(ReleaseSeen {
                        job,
                        ready_before,
                        roles: after.facts.approvals.iter().map(|t| t.signer.role).collect(),
                        assistant_job: after.parties.assistant.is_some(),
                    });
                }
            }
            Err(_) => w.rejected += 1,
        }
    }
    w
}

/// Counts releases that break the gate: accepted while the predicate was
/// false, or on an assistant job without a second requestor-side approval.
pub fn gate_violations(w: &Walk) -> usize {
    w.releases
        .iter()
        .filter(|s| {
            let lone_assistant = s.assistant_job
                && !s.roles.contains(&Role::HumanRequestor)
                && !s.roles.contains(&Role::Underwriter);
            !s.ready_before || lone_assistant
        })
        .count()
}

// ---------------------------------------------------------------------------
// Transition tables, restated

fn requestor_side(p: &Parties) -> BTreeSet<Role> {
    let mut s = BTreeSet::from([Role::HumanRequestor]);
    if p.assistant.is_some() {
        s.insert(Role::AssistantRequestor);
    }
    s
}

/// Enabled kinds and their permitted sender roles, read off the fee and
/// principal track tables plus the phase rules.
pub fn table_oracle(s: &JobState) -> BTreeMap<ActionKind, BTreeSet<Role>> {
    use ActionKind as K;
    let req = requestor_side(&s.parties);
    let mut either = req.clone();
    either.insert(Role::BusinessAgent);
    let one = |r: Role| BTreeSet::from([r]);
    let mut t = BTreeMap::new();
    let f = &s.facts;
    match s.phase {
        Phase::Request => {
            t.insert(K::AcceptRequest, one(Role::BusinessAgent));
            t.insert(K::RejectRequest, one(Role::BusinessAgent));
            t.insert(K::CancelJob, either.clone());
        }
        Phase::Negotiation => {
            t.insert(K::ProposeAgreement, either.clone());
            t.insert(K::SignAgreement, either.clone());
            t.insert(K::CancelJob, either.clone());
        }
        Phase::Transaction => {
            match s.fee_state {
                FeeTrackState::FeeAwaitLock => {
                    t.insert(K::LockFeeEscrow, req.clone());
                }
                FeeTrackState::FeeEscrowLocked => {
                    t.insert(K::SubmitDeliverable, one(Role::BusinessAgent));
                }
                FeeTrackState::FeeDelivered => {}
            }
            match s.principal_state {
                Some(P::UwAwaitRequest) => {
                    t.insert(K::RequestUW, one(Role::BusinessAgent));
                }
                Some(P::UwReview) => {
                    t.insert(K::UWDecision, one(Role::Underwriter));
                }
                Some(P::PremiumPending) => {
                    t.insert(K::PayPremium, one(Role::HumanRequestor));
                }
                Some(P::CollateralRequested) => {
                    t.insert(K::LockCollateral, one(Role::BusinessAgent));
                    t.insert(K::RefuseCollateral, one(Role::BusinessAgent));
                }
                Some(P::OverridePending) => {
                    t.insert(K::OverrideDecision, one(Role::HumanRequestor));
                }
                Some(P::ApprovalPending) => {
                    let mut signers = req.clone();
                    signers.insert(Role::Underwriter);
                    t.insert(K::ApproveRelease, signers);
                }
                Some(P::Releasable) => {
                    t.insert(K::ReleasePrincipal, one(Role::SettlementLayer));
                }
                Some(P::ExecutionPending) if f.exec_evidence_ref.is_none() => {
                    t.insert(K::SubmitExecutionEvidence, one(Role::BusinessAgent));
                }
                _ => {}
            }
            if s.fee_state != FeeTrackState::FeeDelivered && s.principal_state != Some(P::ExecutionPending) {
                t.insert(K::CancelJob, either.clone());
            }
        }
        Phase::Evaluation => match &f.outcome {
            None => {
                t.insert(K::EvaluateOutcome, one(Role::Evaluator));
            }
            Some(o) => {
                if f.fee_settlement.is_none() {
                    t.insert(K::SettleFeeEscrow, one(Role::SettlementLayer));
                }
                let collateral_open = f.collateral_locked.is_some_and(|d| d.is_positive())
                    && f.collateral_settlement.is_none()
                    && f.collateral_unlock_ref.is_none();
                if collateral_open {
                    t.insert(K::SettleCollateral, one(Role::SettlementLayer));
                }
                let approved = matches!(f.uw_decision, Some(q) if q.decision == UwVerdict::Approve);
                let bound = approved && f.premium_paid.is_some() && f.premium_refund_ref.is_none();
                if bound && o.outcome == Verdict::Fail && f.claim.is_none() {
                    t.insert(K::FileClaim, req.clone());
                }
                if f.claim.is_some() && f.claim_paid.is_none() && !collateral_open {
                    t.insert(K::PayClaim, one(Role::Underwriter));
                }
            }
        },
        Phase::Closed => {}
        Phase::Cancelled => {
            if !f.unwound {
                t.insert(K::UnwindPreExecution, one(Role::SettlementLayer));
            }
        }
    }
    t
}

pub struct Conformance {
    pub states: usize,
    pub triples: usize,
    pub mismatches: Vec<String>,
    pub seconds: f64,
}

fn state_key(s: &JobState) -> String {
    serde_json::to_string(&(&s.phase, &s.fee_state, &s.principal_state, &s.facts, s.subject_hash(), &s.request))
        .expect("state serializes")
}

fn decision_variants(kind: ActionKind, s: &JobState, a: &StructuredAgreement) -> Vec<ActionBody> {
    use ActionKind as K;
    let h = AgreementHash::ZERO;
    let m = a.principal_amount().unwrap_or(Money(1));
    let mut r = rng(0);
    let base = body_for(kind, Some(s), a, &mut r);
    match kind {
        K::UWDecision => [(UwVerdict::Approve, 20, m.0 / 10), (UwVerdict::Approve, 0, 0), (UwVerdict::Reject, 0, 0)]
            .into_iter()
            .map(|(decision, p, d)| ActionBody::UWDecision {
                agreement_hash: h,
                decision,
                premium: Money(p),
                collateral_required: Some(Money(d)),
            })
            .collect(),
        K::OverrideDecision => [OverrideChoice::Proceed, OverrideChoice::Cancel]
            .into_iter()
            .map(|decision| ActionBody::OverrideDecision { agreement_hash: h, decision })
            .collect(),
        K::EvaluateOutcome => [Verdict::Pass, Verdict::Fail]
            .into_iter()
            .map(|outcome| ActionBody::EvaluateOutcome {
                agreement_hash: h,
                outcome,
                trigger: (outcome == Verdict::Fail).then(|| "loss".into()),
                evidence_ref: None,
            })
            .collect(),
        K::SettleFeeEscrow => {
            let pass = matches!(&s.facts.outcome, Some(o) if o.outcome == Verdict::Pass);
            let decision = if pass { FeeDecision::Release } else { FeeDecision::Refund };
            vec![ActionBody::SettleFeeEscrow { agreement_hash: h, decision, settlement_ref: format!("{}/fee-settle", a.job_id) }]
        }
        K::SettleCollateral => {
            let d = s.collateral_held();
            let fail = matches!(&s.facts.outcome, Some(o) if o.outcome == Verdict::Fail);
            let mut v = vec![ActionBody::SettleCollateral {
                agreement_hash: h,
                decision: CollateralDecision::Unlock,
                amount: d,
                settlement_ref: "cs".into(),
            }];
            if fail && a.collateral_policy == CollateralPolicy::SlashUpToLoss {
                v.push(ActionBody::SettleCollateral {
                    agreement_hash: h,
                    decision: CollateralDecision::Slash,
                    amount: d.min(m),
                    settlement_ref: "cs".into(),
                });
            }
            v
        }
        _ => vec![base],
    }
}

fn sign(machine: &StateMachine, s: &JobState, subject: AgreementHash, sender: &PartyId, bodies: &[ActionBody]) -> Vec<Action> {
    let Some(kind) = bodies.first().map(ActionBody::kind) else { return Vec::new() };
    let signature = kind
        .requires_signature()
        .then(|| machine.keys().sign(sender, &s.job_id, &subject, kind))
        .flatten();
    bodies
        .iter()
        .map(|b| {
            let mut body = b.clone();
            if let Some(h) = body.agreement_hash_mut() {
                *h = subject;
            }
            if let ActionBody::ReleasePrincipal { approvals, .. } = &mut body {
                approvals.extend(s.facts.approvals.iter().cloned());
            }
            let mut a = Action::new(s.job_id.clone(), sender.clone(), body);
            a.signature = signature.clone();
            a
        })
        .collect()
}

/// Explores every reachable state of a handful of agreements and checks every
/// (state, kind, sender role) triple against [`table_oracle`].
pub fn conformance() -> Conformance {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    let mut triples = 0;
    let now = 10;

    let mut roots = Vec::new();
    for assistant in [false, true] {
        let parties = standard_parties(assistant);
        let job = JobId::new("c");
        let mut variants = vec![
            fund_agreement(&job, &parties, Money(200), Money(1_000)),
            fee_only_agreement(&job, &parties, Money(200)),
        ];
        let mut strict = fund_agreement(&job, &parties, Money(0), Money(1_000));
        strict.override_allowed = false;
        strict.premium_refund_policy = PremiumRefundPolicy::NonRefundable;
        strict.collateral_policy = CollateralPolicy::NoSlash;
        variants.push(strict);
        for a in variants {
            let machine = StateMachine::new(keyring_for(&parties));
            let requestor = parties.requestor();
            let mut r = rng(0);
            let open = Action::new(job.clone(), requestor, body_for(ActionKind::SubmitRequest, None, &a, &mut r));
            let mut s = machine.open(&open, now).expect("request opens").state;
            s.event_log.clear();
            roots.push((machine, a, s));
        }
    }
    for (i, (_, _, s)) in roots.iter().enumerate() {
        queue.push_back((i, state_key(s), s.clone()));
    }

    while let Some((root, key, s)) = queue.pop_front() {
        if !seen.insert((root, key)) {
            continue;
        }
        let (machine, agreement, _) = &roots[root];
        let subject = s.subject_hash();
        let oracle = table_oracle(&s);
        let ours: BTreeMap<ActionKind, BTreeSet<Role>> = enabled_actions(&s)
            .into_iter()
            .map(|e| (e.kind, e.roles.into_iter().collect()))
            .collect();
        if ours != oracle {
            mismatches.push(format!("{:?}/{:?}/{:?}: enabled {ours:?}, tables {oracle:?}", s.phase, s.fee_state, s.principal_state));
        }
        for kind in ActionKind::ALL {
            if kind == ActionKind::SubmitRequest {
                continue;
            }
            let variants = decision_variants(kind, &s, agreement);
            for role in Role::ALL {
                let sender = s.parties.party(role).unwrap_or_else(|| PartyId::new("stranger", role));
                for action in sign(machine, &s, subject, &sender, &variants) {
                    triples += 1;
                    let got = machine.apply(&s, &action, now);
                    let expect = match oracle.get(&kind) {
                        None => "NotEnabled",
                        Some(roles) if !roles.contains(&role) || !s.parties.contains(&sender) => "WrongSender",
                        Some(_) => "accepted",
                    };
                    let class = match &got {
                        Err(TransitionError::NotEnabled { .. }) => "NotEnabled",
                        Err(TransitionError::WrongSender { .. }) => "WrongSender",
                        Ok(_) => "accepted",
                        Err(_) => "rejected on payload",
                    };
                    let ok = match expect {
                        "accepted" => class == "accepted" || class == "rejected on payload",
                        e => class == e,
                    };
                    if !ok {
                        mismatches.push(format!(
                            "{:?}/{:?}/{:?} {kind:?} by {role}: expected {expect}, got {class} ({got:?})",
                            s.phase, s.fee_state, s.principal_state
                        ));
                    }
                    if let Ok(t) = got {
                        let mut next = t.state;
                        next.event_log.clear();
                        let key = state_key(&next);
                        if !seen.contains(&(root, key.clone())) {
                            queue.push_back((root, key, next));
                        }
                    }
                }
            }
        }
    }
    Conformance { states: seen.len(), triples, mismatches, seconds: start.elapsed().as_secs_f64() }
}

// ---------------------------------------------------------------------------
// Ledger fuzzing

pub struct LedgerRun {
    pub ops: usize,
    pub accepted: usize,
    pub conserved: bool,
    pub rebuilt: bool,
    pub overdrawn: bool,
}

const KINDS: [InstructionKind; 10] = [
    InstructionKind::LockFee,
    InstructionKind::ReleaseFee,
    InstructionKind::RefundFee,
    InstructionKind::LockCollateral,
    InstructionKind::UnlockCollateral,
    InstructionKind::SlashCollateral,
    InstructionKind::TransferPrincipal,
    InstructionKind::CollectPremium,
    InstructionKind::RefundPremium,
    InstructionKind::PayClaim,
];

/// Applies a random sequence of single and batched instructions, valid and
/// invalid, and checks supply after every one.
pub fn ledger_run(seed: u64, ops: usize) -> LedgerRun {
    let mut r = rng(seed);
    let mut ledger = Ledger::new();
    let wallets = ["a", "b", "c", "uw"];
    for w in wallets {
        ledger.open_wallet(w, Money(r.random_range(0..10_000)), w == "uw").expect("fresh ids");
    }
    let opening = ledger.accounts().clone();
    let supply = ledger.total_supply();
    let jobs = ["j1", "j2", "j3"];
    let account = |r: &mut ChaCha8Rng| -> AccountId {
        let j = JobId::new(pick(r, &jobs));
        match r.random_range(0..6) {
            0 => AccountId::FeeVault(j),
            1 => AccountId::CollateralVault(j),
            2 if r.random_bool(0.1) => AccountId::wallet("ghost"),
            _ => AccountId::wallet(pick(r, &wallets)),
        }
    };
    let mut run = LedgerRun { ops, accepted: 0, conserved: true, rebuilt: true, overdrawn: false };
    let mut next_ref = 0u64;
    for _ in 0..ops {
        let n = if r.random_bool(0.7) { 1 } else { r.random_range(2..5) };
        let batch: Vec<LedgerInstruction> = (0..n)
            .map(|_| {
                next_ref += 1;
                let reference = if r.random_bool(0.03) && next_ref > 1 { format!("r{}", next_ref - 1) } else { format!("r{next_ref}") };
                LedgerInstruction {
                    kind: pick(&mut r, &KINDS),
                    job_id: JobId::new(pick(&mut r, &jobs)),
                    agreement_hash: AgreementHash::ZERO,
                    amount: Money(r.random_range(-5..3_000)),
                    from: account(&mut r),
                    to: account(&mut r),
                    reference,
                }
            })
            .collect();
        let before = ledger.accounts().clone();
        let result = if n == 1 {
            ledger.execute(batch.into_iter().next().unwrap()).map(|_| ())
        } else {
            ledger.execute_batch(batch).map(|_| ())
        };
        match result {
            Ok(()) => run.accepted += 1,
            Err(_) => {
                if ledger.accounts() != &before {
                    run.conserved = false;
                }
            }
        }
        if ledger.total_supply() != supply {
            run.conserved = false;
        }
        if ledger.accounts().values().any(|a| !a.overdraft && a.balance < Money::ZERO) {
            run.overdrawn = true;
        }
    }
    match Ledger::from_receipts(&opening, ledger.receipts()) {
        Ok(again) => run.rebuilt = again.accounts() == ledger.accounts() && again.receipts() == ledger.receipts(),
        Err(_) => run.rebuilt = false,
    }
    run
}

// ---------------------------------------------------------------------------
// Toy universe, enumerated exactly

pub const TOY_PRINCIPAL: i64 = 1_000;
pub const TOY_RISKS: [f64; 2] = [0.1, 0.5];

pub fn toy_settings(mode: SimMode) -> SimSettings {
    SimSettings {
        user: UserPolicy { history: 100, sigma_user: 0.06, alpha: 1.0 },
        fee_rate: 0.02,
        mode,
        model: DrawModel::Toy(ToyUniverse { principals: vec![Money(TOY_PRINCIPAL)], probabilities: TOY_RISKS.to_vec() }),
    }
}

/// Mean and variance of one per-episode quantity.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moment {
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ToyExpectation {
    pub covered: Moment,
    pub opted_in: Moment,
    pub executed: Moment,
    pub failed: Moment,
    pub user_loss: Moment,
    pub delta_w: Moment,
    pub counterfactual_loss: Moment,
}

fn half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Exact per-episode expectations over the toy universe by enumerating every
/// branch: risk level, merchant posting, override, failure.
pub fn toy_oracle(c: &CellParams) -> ToyExpectation {
    let m = TOY_PRINCIPAL as f64;
    // (weight, covered, opted, executed, failed, user_loss, delta_w, cf_loss)
    let mut leaves: Vec<(f64, [f64; 7])> = Vec::new();
    for &p in &TOY_RISKS {
        let w_p = 1.0 / TOY_RISKS.len() as f64;
        let p_hat = (p * (1.0 - c.fn_) + (1.0 - p) * c.fp).clamp(0.0, 1.0);
        let sig = 1.0 / (1.0 + (-c.steepness * (p_hat - c.midpoint)).exp());
        let d = half_up(sig * m).min(TOY_PRINCIPAL) as f64;
        let premium = half_up(p_hat * (1.0 - sig) * m * (1.0 + c.lambda)) as f64;
        // history of 100 with round(100 p) failures and no recall noise
        let p_user = (p * 100.0).round() / 100.0;
        let opted = m * p_user > premium;
        let post = (0.9 - 0.8 * d / m).clamp(0.0, 1.0);
        let mut gates: Vec<(f64, bool, bool)> = Vec::new(); // (weight, executed, covered)
        if d == 0.0 {
            gates.push((1.0, true, opted));
        } else {
            gates.push((post, true, opted));
            gates.push(((1.0 - post) * 0.5, true, false));
            gates.push(((1.0 - post) * 0.5, false, false));
        }
        for (w_g, executed, covered) in gates {
            for (w_f, fails) in [(p, true), (1.0 - p, false)] {
                let failed = executed && fails;
                let loss = if failed && !covered { m } else { 0.0 };
                let dw = if covered { premium - if failed { (m - d).max(0.0) } else { 0.0 } } else { 0.0 };
                let cf = if fails { m } else { 0.0 };
                let b = |x: bool| if x { 1.0 } else { 0.0 };
                leaves.push((
                    w_p * w_g * w_f,
                    [b(covered), b(opted), b(executed), b(failed), loss, dw, cf],
                ));
            }
        }
    }
    let moment = |i: usize| {
        let mean: f64 = leaves.iter().map(|(w, v)| w * v[i]).sum();
        let var: f64 = leaves.iter().map(|(w, v)| w * (v[i] - mean).powi(2)).sum();
        Moment { mean, var }
    };
    ToyExpectation {
        covered: moment(0),
        opted_in: moment(1),
        executed: moment(2),
        failed: moment(3),
        user_loss: moment(4),
        delta_w: moment(5),
        counterfactual_loss: moment(6),
    }
}

pub struct ToyCheck {
    pub lines: Vec<(String, f64, f64, f64)>, // (metric, estimate, exact, z)
}

impl ToyCheck {
    pub fn worst_z(&self) -> f64 {
        self.lines.iter().map(|l| l.3.abs()).fold(0.0, f64::max)
    }
}

pub fn toy_check(c: &CellParams, episodes: u64, seed: u64, mode: SimMode) -> ToyCheck {
    let settings = toy_settings(mode);
    let draws = settings.model.draws(seed, episodes, settings.user.history);
    let res = run_cell_on(c, &draws, seed, &settings).expect("toy cell runs");
    let t = &res.totals;
    let n = episodes as f64;
    let exp = toy_oracle(c);
    let mut lines = Vec::new();
    let mut push = |name: &str, est: f64, m: Moment| {
        let se = (m.var / n).sqrt();
        let z = if se > 0.0 { (est - m.mean) / se } else if est == m.mean { 0.0 } else { f64::INFINITY };
        lines.push((name.to_string(), est, m.mean, z));
    };
    push("covered", t.covered as f64 / n, exp.covered);
    push("opted_in", t.opted_in as f64 / n, exp.opted_in);
    push("executed", t.executed as f64 / n, exp.executed);
    push("failed", t.failed as f64 / n, exp.failed);
    push("user_loss", t.user_loss.0 as f64 / n, exp.user_loss);
    push("delta_w", t.wallet.0 as f64 / n, exp.delta_w);
    push("counterfactual_loss", t.counterfactual_loss.0 as f64 / n, exp.counterfactual_loss);
    ToyCheck { lines }
}

// ---------------------------------------------------------------------------
// The FX running example

pub struct J42 {
    pub driver: Driver,
    pub job: JobId,
    pub start: BTreeMap<String, Money>,
}

impl J42 {
    pub fn delta(&self, wallet: &str) -> Money {
        self.driver.engine.ledger().wallet_balance(wallet) - self.start[wallet]
    }

    pub fn state(&self) -> &JobState {
        self.driver.engine.job(&self.job).expect("job exists")
    }
}

/// Drives j42 end to end: $10.00 principal, $2.00 fee, premium $0.20,
/// collateral $1.00. On failure the requestor claims the full $10.00.
pub fn run_j42(fail: bool) -> Result<J42, ars_core::EngineError> {
    use ars_core::scenario::running_example;
    let parties = standard_parties(true);
    let mut d = Driver::new(parties.clone(), Money(100_000));
    let start = ["user", "assistant", "agent", "underwriter", "fx-desk"]
        .iter()
        .map(|w| (w.to_string(), d.engine.ledger().wallet_balance(w)))
        .collect();
    let a = running_example(&parties);
    let job = a.job_id.clone();
    let h = AgreementHash::ZERO;
    d.bind(&a)?;
    d.act(&job, Role::AssistantRequestor, ActionBody::LockFeeEscrow { agreement_hash: h, lock_ref: "l".into() })?;
    d.act(&job, Role::BusinessAgent, ActionBody::RequestUW { agreement_hash: h, coverage_request: Money(1_000) })?;
    d.act(
        &job,
        Role::Underwriter,
        ActionBody::UWDecision {
            agreement_hash: h,
            decision: UwVerdict::Approve,
            premium: Money(20),
            collateral_required: Some(Money(100)),
        },
    )?;
    d.act(&job, Role::HumanRequestor, ActionBody::PayPremium { agreement_hash: h, premium: Money(20), premium_ref: "pp".into() })?;
    d.act(
        &job,
        Role::BusinessAgent,
        ActionBody::LockCollateral { agreement_hash: h, amount: Some(Money(100)), collateral_ref: Some("c".into()) },
    )?;
    d.act(&job, Role::AssistantRequestor, ActionBody::ApproveRelease { agreement_hash: h })?;
    d.act(&job, Role::HumanRequestor, ActionBody::ApproveRelease { agreement_hash: h })?;
    d.act(
        &job,
        Role::SettlementLayer,
        ActionBody::ReleasePrincipal {
            agreement_hash: h,
            approvals: Vec::new(),
            transfer_ref: "t".into(),
            amount: Money(1_000),
            destination: "fx-desk".into(),
        },
    )?;
    d.act(&job, Role::BusinessAgent, ActionBody::SubmitDeliverable { agreement_hash: h, deliverable_ref: "cad".into() })?;
    d.act(
        &job,
        Role::BusinessAgent,
        ActionBody::SubmitExecutionEvidence { agreement_hash: h, exec_evidence_ref: "BoAReceipt#847201".into() },
    )?;
    d.act(
        &job,
        Role::Evaluator,
        ActionBody::EvaluateOutcome {
            agreement_hash: h,
            outcome: if fail { Verdict::Fail } else { Verdict::Pass },
            trigger: fail.then(|| "unauthorized transfer".into()),
            evidence_ref: Some("BoAReceipt#847201".into()),
        },
    )?;
    let fee = if fail { FeeDecision::Refund } else { FeeDecision::Release };
    d.act(&job, Role::SettlementLayer, ActionBody::SettleFeeEscrow { agreement_hash: h, decision: fee, settlement_ref: "sf".into() })?;
    let (decision, amount) = if fail { (CollateralDecision::Slash, Money(100)) } else { (CollateralDecision::Unlock, Money(100)) };
    d.act(&job, Role::SettlementLayer, ActionBody::SettleCollateral { agreement_hash: h, decision, amount, settlement_ref: "sc".into() })?;
    if fail {
        d.act(
            &job,
            Role::AssistantRequestor,
            ActionBody::FileClaim {
                agreement_hash: h,
                trigger: "unauthorized transfer".into(),
                claimed_loss: Money(1_000),
                evidence_ref: "BoAReceipt#847201".into(),
            },
        )?;
        d.act(&job, Role::Underwriter, ActionBody::PayClaim { agreement_hash: h, payout: Money(900), payout_ref: "r".into() })?;
    }
    Ok(J42 { driver: d, job, start })
}

// ---------------------------------------------------------------------------
// Log replay

pub struct Roundtrip {
    pub events: usize,
    pub jobs: usize,
    pub closed: usize,
}

/// Replays the walk's log, then resubmits its actions to a fresh engine and
/// requires the same states, receipts and log text.
pub fn replay_roundtrip(seed: u64, jobs: usize, steps: usize) -> Result<Roundtrip, String> {
    use ars_core::engine::replay;
    use ars_core::Engine;
    let w = walk(seed, jobs, steps, Mix::MOSTLY_VALID, true);
    let engine = &w.driver.engine;
    let log = engine.export_log();
    let machine = StateMachine::new(keyring_for(&w.driver.parties));
    let report = replay(&log, machine.clone()).map_err(|e| e.to_string())?;
    if !report.trailer_checked || report.jobs != jobs {
        return Err(format!("replay covered {} jobs, trailer {}", report.jobs, report.trailer_checked));
    }
    let ledger = Ledger::from_receipts(engine.opening_balances(), &[]).map_err(|e| e.to_string())?;
    let mut again = Engine::new(machine, ledger);
    for r in engine.records() {
        again.submit(r.action.clone(), r.timestamp).map_err(|e| format!("seq {}: {e}", r.seq))?;
    }
    for (id, _) in &w.jobs {
        if again.job(id) != engine.job(id) {
            return Err(format!("{id} differs after resubmission"));
        }
    }
    if again.ledger().receipts() != engine.ledger().receipts() {
        return Err("receipts differ".into());
    }
    if again.export_log() != log {
        return Err("log text differs".into());
    }
    let closed = engine.jobs().filter(|j| matches!(j.phase, Phase::Closed | Phase::Cancelled)).count();
    Ok(Roundtrip { events: engine.records().len(), jobs, closed })
}
