use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::action::{
    Action, ActionBody, ActionKind, CollateralDecision, FeeDecision, OverrideChoice, UwVerdict,
    Verdict,
};
use super::predicates::{release_auth, release_ready, PredicateFacts};
use super::state::{
    ClaimFact, Facts, JobEvent, JobState, OutcomeFact, RequestTerms, UwDecisionFact,
};
use super::{FeeTrackState, Phase, PrincipalTrackState, TransitionError};
use crate::agreement::{
    AgreementHash, AssuranceMode, CollateralPolicy, Keyring, PremiumRefundPolicy, Role,
    StructuredAgreement,
};
use crate::ledger::{AccountId, InstructionKind, LedgerInstruction};
use crate::money::{Money, Timestamp};

use PrincipalTrackState as P;

/// Checked once, just before a signed agreement moves a job into
/// `TRANSACTION`. Stands in for external mandate or credential checks.
pub trait AuthorizationGate: Send + Sync {
    fn authorize(&self, agreement: &StructuredAgreement, hash: &AgreementHash) -> bool;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AllowAll;

impl AuthorizationGate for AllowAll {
    fn authorize(&self, _: &StructuredAgreement, _: &AgreementHash) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outcome: Verdict,
    pub trigger: Option<String>,
    pub evidence_ref: Option<String>,
}

/// Deployment-specific judge of a job's outcome against its acceptance
/// criteria. Its verdict is issued as an `EvaluateOutcome` action.
pub trait Evaluator {
    fn evaluate(&self, state: &JobState) -> Evaluation;
}

impl<F: Fn(&JobState) -> Evaluation> Evaluator for F {
    fn evaluate(&self, state: &JobState) -> Evaluation {
        self(state)
    }
}

/// An action kind the current state accepts and the roles that may send it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnabledAction {
    pub kind: ActionKind,
    pub roles: Vec<Role>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: JobState,
    pub instructions: Vec<LedgerInstruction>,
}

#[derive(Clone)]
pub struct StateMachine {
    keys: Keyring,
    gate: Arc<dyn AuthorizationGate>,
}

impl fmt::Debug for StateMachine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateMachine")
            .field("keys", &self.keys)
            .finish_non_exhaustive()
    }
}

fn requestor_roles(state: &JobState) -> Vec<Role> {
    let mut r = vec![Role::HumanRequestor];
    if state.parties.assistant.is_some() {
        r.push(Role::AssistantRequestor);
    }
    r
}

fn either_party(state: &JobState) -> Vec<Role> {
    let mut r = requestor_roles(state);
    r.push(Role::BusinessAgent);
    r
}

/// The action kinds the state accepts, with their permitted sender roles.
pub fn enabled_actions(state: &JobState) -> Vec<EnabledAction> {
    use ActionKind as K;
    let mut out: Vec<(ActionKind, Vec<Role>)> = Vec::new();
    let f = &state.facts;
    match state.phase {
        Phase::Request => {
            out.push((K::AcceptRequest, vec![Role::BusinessAgent]));
            out.push((K::RejectRequest, vec![Role::BusinessAgent]));
            out.push((K::CancelJob, either_party(state)));
        }
        Phase::Negotiation => {
            out.push((K::ProposeAgreement, either_party(state)));
            out.push((K::SignAgreement, either_party(state)));
            out.push((K::CancelJob, either_party(state)));
        }
        Phase::Transaction => {
            match state.fee_state {
                FeeTrackState::FeeAwaitLock => out.push((K::LockFeeEscrow, requestor_roles(state))),
                FeeTrackState::FeeEscrowLocked => {
                    out.push((K::SubmitDeliverable, vec![Role::BusinessAgent]))
                }
                FeeTrackState::FeeDelivered => {}
            }
            match state.principal_state {
                None | Some(P::Cancelled) => {}
                Some(P::UwAwaitRequest) => out.push((K::RequestUW, vec![Role::BusinessAgent])),
                Some(P::UwReview) => out.push((K::UWDecision, vec![Role::Underwriter])),
                Some(P::PremiumPending) => out.push((K::PayPremium, vec![Role::HumanRequestor])),
                Some(P::CollateralRequested) => {
                    out.push((K::LockCollateral, vec![Role::BusinessAgent]));
                    out.push((K::RefuseCollateral, vec![Role::BusinessAgent]));
                }
                Some(P::OverridePending) => {
                    out.push((K::OverrideDecision, vec![Role::HumanRequestor]))
                }
                Some(P::ApprovalPending) => {
                    let mut roles = requestor_roles(state);
                    if state.parties.underwriter.is_some() {
                        roles.push(Role::Underwriter);
                    }
                    out.push((K::ApproveRelease, roles));
                }
                Some(P::Releasable) => out.push((K::ReleasePrincipal, vec![Role::SettlementLayer])),
                Some(P::ExecutionPending) => {
                    if f.exec_evidence_ref.is_none() {
                        out.push((K::SubmitExecutionEvidence, vec![Role::BusinessAgent]));
                    }
                }
            }
            let delivered = state.fee_state == FeeTrackState::FeeDelivered;
            let released = state.principal_state == Some(P::ExecutionPending);
            if !delivered && !released {
                out.push((K::CancelJob, either_party(state)));
            }
        }
        Phase::Evaluation => {
            if f.outcome.is_none() {
                out.push((K::EvaluateOutcome, vec![Role::Evaluator]));
            } else {
                if f.fee_settlement.is_none() {
                    out.push((K::SettleFeeEscrow, vec![Role::SettlementLayer]));
                }
                if state.collateral_held().is_positive() {
                    out.push((K::SettleCollateral, vec![Role::SettlementLayer]));
                }
                if state.claim_eligible() && f.claim.is_none() {
                    out.push((K::FileClaim, requestor_roles(state)));
                }
                if f.claim.is_some()
                    && f.claim_paid.is_none()
                    && !state.collateral_held().is_positive()
                {
                    out.push((K::PayClaim, vec![Role::Underwriter]));
                }
            }
        }
        Phase::Closed => {}
        Phase::Cancelled => {
            if !f.unwound {
                out.push((K::UnwindPreExecution, vec![Role::SettlementLayer]));
            }
        }
    }
    out.into_iter()
        .map(|(kind, roles)| EnabledAction { kind, roles })
        .collect()
}

fn policy(msg: impl Into<String>) -> TransitionError {
    TransitionError::PolicyViolation(msg.into())
}

fn binding(msg: impl Into<String>) -> TransitionError {
    TransitionError::BadBinding(msg.into())
}

struct Ctx<'a> {
    next: JobState,
    now: Timestamp,
    kind: ActionKind,
    hash: AgreementHash,
    out: Vec<LedgerInstruction>,
    action: &'a Action,
}

impl Ctx<'_> {
    fn agreement(&self) -> &StructuredAgreement {
        self.next
            .agreement()
            .expect("bound in TRANSACTION and later")
    }

    fn deadline(&self, deadline: Timestamp) -> Result<(), TransitionError> {
        if self.now > deadline {
            return Err(TransitionError::DeadlineExceeded {
                kind: self.kind,
                deadline,
                now: self.now,
            });
        }
        Ok(())
    }

    fn emit(
        &mut self,
        kind: InstructionKind,
        amount: Money,
        from: AccountId,
        to: AccountId,
        reference: &str,
    ) {
        if amount.is_positive() {
            self.out.push(LedgerInstruction {
                kind,
                job_id: self.next.job_id.clone(),
                agreement_hash: self.hash,
                amount,
                from,
                to,
                reference: reference.to_string(),
            });
        }
    }

    fn human(&self) -> AccountId {
        AccountId::wallet(self.next.parties.human.clone())
    }

    fn agent(&self) -> AccountId {
        AccountId::wallet(self.next.parties.business_agent.clone())
    }

    fn underwriter(&self) -> AccountId {
        AccountId::wallet(self.next.parties.underwriter.clone().unwrap_or_default())
    }

    fn cancel(&mut self) {
        self.next.phase = Phase::Cancelled;
        if self.next.principal_state.is_some() {
            self.next.principal_state = Some(P::Cancelled);
        }
    }

    fn maybe_enter_evaluation(&mut self) {
        let n = &mut self.next;
        let evidence = n.principal_state.is_none() || n.facts.exec_evidence_ref.is_some();
        if n.phase == Phase::Transaction && n.fee_state == FeeTrackState::FeeDelivered && evidence {
            n.phase = Phase::Evaluation;
        }
    }

    fn maybe_close(&mut self) {
        let n = &mut self.next;
        let f = &n.facts;
        let done = f.outcome.is_some()
            && f.fee_settlement.is_some()
            && !n.collateral_held().is_positive()
            && (!n.claim_eligible() || f.claim_paid.is_some());
        if n.phase == Phase::Evaluation && done {
            n.phase = Phase::Closed;
        }
    }
}

impl StateMachine {
    pub fn new(keys: Keyring) -> Self {
        StateMachine {
            keys,
            gate: Arc::new(AllowAll),
        }
    }

    pub fn with_gate(keys: Keyring, gate: Arc<dyn AuthorizationGate>) -> Self {
        StateMachine { keys, gate }
    }

    pub fn keys(&self) -> &Keyring {
        &self.keys
    }

    pub fn enabled_actions(&self, state: &JobState) -> Vec<EnabledAction> {
        enabled_actions(state)
    }

    /// Creates a job from a `SubmitRequest`.
    pub fn open(&self, action: &Action, now: Timestamp) -> Result<Transition, TransitionError> {
        let ActionBody::SubmitRequest {
            task_spec,
            fee_terms,
            principal_terms,
            parties,
        } = &action.body
        else {
            return Err(TransitionError::NotEnabled {
                kind: action.kind(),
                phase: Phase::Request,
                fee: FeeTrackState::FeeAwaitLock,
                principal: None,
            });
        };
        let requestor_side = matches!(
            action.sender.role,
            Role::HumanRequestor | Role::AssistantRequestor
        );
        if !requestor_side || !parties.contains(&action.sender) {
            return Err(TransitionError::WrongSender {
                kind: action.kind(),
                sender: action.sender.clone(),
            });
        }
        if action.job_id.as_str().is_empty() {
            return Err(binding("empty job_id"));
        }
        if let Some(tok) = &action.signature {
            self.check_token(tok, action, &AgreementHash::ZERO)?;
        }
        if fee_terms.amount < Money::ZERO {
            return Err(policy("negative fee"));
        }
        if let Some(p) = principal_terms {
            if !p.amount.is_positive() || p.destination.is_empty() {
                return Err(policy(
                    "principal terms need a positive amount and a destination",
                ));
            }
        }
        let mut state = JobState {
            job_id: action.job_id.clone(),
            parties: parties.clone(),
            request: RequestTerms {
                task_spec: task_spec.clone(),
                fee_terms: fee_terms.clone(),
                principal_terms: principal_terms.clone(),
            },
            draft: None,
            bound_agreement: None,
            phase: Phase::Request,
            fee_state: FeeTrackState::FeeAwaitLock,
            principal_state: None,
            facts: Facts::default(),
            event_log: Vec::new(),
        };
        state.event_log.push(JobEvent {
            at: now,
            action: action.clone(),
            phase: state.phase,
            fee_state: state.fee_state,
            principal_state: None,
            instructions: Vec::new(),
        });
        Ok(Transition {
            state,
            instructions: Vec::new(),
        })
    }

    fn check_token(
        &self,
        tok: &crate::agreement::SignatureToken,
        action: &Action,
        subject: &AgreementHash,
    ) -> Result<(), TransitionError> {
        if tok.signer != action.sender {
            return Err(binding("signature is not by the sender"));
        }
        if tok.kind != action.kind() {
            return Err(binding("signature is for a different action kind"));
        }
        if !self.keys.verify_signature(tok, &action.job_id, subject) {
            return Err(binding("signature does not verify"));
        }
        Ok(())
    }

    /// The successor of `state` under `action` at time `now`.
    pub fn apply(
        &self,
        state: &JobState,
        action: &Action,
        now: Timestamp,
    ) -> Result<Transition, TransitionError> {
        let kind = action.kind();
        if action.job_id != state.job_id {
            return Err(binding(format!(
                "action for {} sent to job {}",
                action.job_id, state.job_id
            )));
        }
        // Clone only once the lapse actually changes something or the
        // action clears the gates; rejections stay allocation-light.
        let lapsed = (kind != ActionKind::PayPremium && premium_lapses(state, now)).then(|| {
            let mut s = state.clone();
            lapse_premium(&mut s, now);
            s
        });
        let view = lapsed.as_ref().unwrap_or(state);

        let enabled = enabled_actions(view);
        let Some(entry) = enabled.iter().find(|e| e.kind == kind) else {
            return Err(TransitionError::NotEnabled {
                kind,
                phase: view.phase,
                fee: view.fee_state,
                principal: view.principal_state,
            });
        };
        if !entry.roles.contains(&action.sender.role) || !view.parties.contains(&action.sender) {
            return Err(TransitionError::WrongSender {
                kind,
                sender: action.sender.clone(),
            });
        }
        let next = lapsed.unwrap_or_else(|| state.clone());

        let subject = next.subject_hash();
        if let Some(h) = action.body.agreement_hash() {
            if *h != subject {
                return Err(binding(format!(
                    "agreement_hash {h} does not match {subject}"
                )));
            }
        }
        match &action.signature {
            Some(tok) => self.check_token(tok, action, &subject)?,
            None if kind.requires_signature() => return Err(binding("missing signature")),
            None => {}
        }

        let mut cx = Ctx {
            next,
            now,
            kind,
            hash: subject,
            out: Vec::new(),
            action,
        };
        self.step(&mut cx)?;

        let Ctx { mut next, out, .. } = cx;
        next.event_log.push(JobEvent {
            at: now,
            action: action.clone(),
            phase: next.phase,
            fee_state: next.fee_state,
            principal_state: next.principal_state,
            instructions: out.clone(),
        });
        Ok(Transition {
            state: next,
            instructions: out,
        })
    }

    fn step(&self, cx: &mut Ctx<'_>) -> Result<(), TransitionError> {
        let action = cx.action;
        match &action.body {
            ActionBody::SubmitRequest { .. } => unreachable!("never enabled on an existing job"),
            ActionBody::AcceptRequest { .. } => cx.next.phase = Phase::Negotiation,
            ActionBody::RejectRequest { reason } => {
                cx.next.facts.cancel_reason = reason.clone();
                cx.cancel();
            }
            ActionBody::ProposeAgreement { agreement_draft } => {
                agreement_draft
                    .validate()
                    .map_err(|e| policy(e.to_string()))?;
                if agreement_draft.job_id != cx.next.job_id {
                    return Err(policy("draft names a different job"));
                }
                if agreement_draft.parties != cx.next.parties {
                    return Err(policy("draft changes the roster"));
                }
                let h = agreement_draft.hash().map_err(|e| policy(e.to_string()))?;
                cx.next.draft = Some((agreement_draft.clone(), h));
                cx.next.facts.requestor_signed = None;
                cx.next.facts.service_signed = None;
            }
            ActionBody::SignAgreement { agreement_hash } => {
                let Some((draft, h)) = cx.next.draft.clone() else {
                    return Err(policy("no draft to sign"));
                };
                if action.sender.role == Role::BusinessAgent {
                    cx.next.facts.service_signed = Some(*agreement_hash);
                } else {
                    cx.next.facts.requestor_signed = Some(*agreement_hash);
                }
                let f = &cx.next.facts;
                if f.requestor_signed == Some(h) && f.service_signed == Some(h) {
                    if !self.gate.authorize(&draft, &h) {
                        return Err(policy("pre-settlement authorization refused"));
                    }
                    cx.next.phase = Phase::Transaction;
                    cx.next.fee_state = FeeTrackState::FeeAwaitLock;
                    cx.next.principal_state = match draft.assurance_mode {
                        AssuranceMode::FundInvolving => Some(P::UwAwaitRequest),
                        AssuranceMode::FeeOnly => None,
                    };
                    cx.next.bound_agreement = Some((draft, h));
                }
            }
            ActionBody::CancelJob { reason, .. } => {
                cx.next.facts.cancel_reason = Some(reason.clone());
                cx.cancel();
            }
            ActionBody::LockFeeEscrow { lock_ref, .. } => {
                let fee = cx.agreement().fee_terms.amount;
                let (from, to) = (cx.human(), AccountId::FeeVault(cx.next.job_id.clone()));
                cx.emit(InstructionKind::LockFee, fee, from, to, lock_ref);
                cx.next.facts.fee_lock_ref = Some(lock_ref.clone());
                cx.next.fee_state = FeeTrackState::FeeEscrowLocked;
            }
            ActionBody::SubmitDeliverable {
                deliverable_ref, ..
            } => {
                cx.deadline(cx.agreement().deadlines.delivery)?;
                cx.next.facts.delivery_ref = Some(deliverable_ref.clone());
                cx.next.fee_state = FeeTrackState::FeeDelivered;
                cx.maybe_enter_evaluation();
            }
            ActionBody::RequestUW {
                coverage_request, ..
            } => {
                let m = cx.agreement().principal_amount().unwrap_or_default();
                if !coverage_request.is_positive() || *coverage_request > m {
                    return Err(policy("coverage request must be within (0, principal]"));
                }
                cx.next.facts.coverage_request = Some(*coverage_request);
                cx.next.principal_state = Some(P::UwReview);
            }
            ActionBody::UWDecision {
                decision,
                premium,
                collateral_required,
                ..
            } => {
                let m = cx.agreement().principal_amount().unwrap_or_default();
                let d = collateral_required.unwrap_or_default();
                if *premium < Money::ZERO {
                    return Err(policy("negative premium"));
                }
                if d < Money::ZERO || d > m {
                    return Err(policy(
                        "collateral requirement must be within [0, principal]",
                    ));
                }
                cx.next.facts.uw_decision = Some(UwDecisionFact {
                    decision: *decision,
                    premium: *premium,
                    collateral_required: d,
                });
                match decision {
                    UwVerdict::Approve => cx.next.principal_state = Some(P::PremiumPending),
                    UwVerdict::Reject if cx.agreement().override_allowed => {
                        cx.next.principal_state = Some(P::OverridePending)
                    }
                    UwVerdict::Reject => cx.cancel(),
                }
            }
            ActionBody::PayPremium {
                premium,
                premium_ref,
                ..
            } => {
                cx.deadline(cx.agreement().deadlines.premium)?;
                let quote = cx
                    .next
                    .facts
                    .uw_decision
                    .expect("approved before PREMIUM_PENDING");
                if *premium != quote.premium {
                    return Err(policy(format!(
                        "premium {premium} differs from quote {}",
                        quote.premium
                    )));
                }
                let (from, to) = (cx.human(), cx.underwriter());
                cx.emit(
                    InstructionKind::CollectPremium,
                    *premium,
                    from,
                    to,
                    premium_ref,
                );
                cx.next.facts.premium_paid = Some(*premium);
                cx.next.facts.premium_ref = Some(premium_ref.clone());
                cx.next.principal_state = Some(if quote.collateral_required.is_positive() {
                    P::CollateralRequested
                } else {
                    P::ApprovalPending
                });
            }
            ActionBody::LockCollateral {
                amount,
                collateral_ref,
                ..
            } => {
                let d = cx
                    .next
                    .facts
                    .uw_decision
                    .map(|q| q.collateral_required)
                    .unwrap_or_default();
                let (Some(amount), Some(collateral_ref)) = (amount, collateral_ref) else {
                    return Err(policy("LockCollateral needs amount and collateral_ref"));
                };
                if *amount != d {
                    return Err(policy(format!(
                        "collateral {amount} differs from requirement {d}"
                    )));
                }
                let (from, to) = (
                    cx.agent(),
                    AccountId::CollateralVault(cx.next.job_id.clone()),
                );
                cx.emit(InstructionKind::LockCollateral, d, from, to, collateral_ref);
                cx.next.facts.collateral_locked = Some(d);
                cx.next.facts.collateral_ref = Some(collateral_ref.clone());
                cx.next.principal_state = Some(P::ApprovalPending);
            }
            ActionBody::RefuseCollateral { .. } => {
                let held = cx.next.premium_held();
                let r = format!("{}/premium-refund", cx.next.job_id);
                let (from, to) = (cx.underwriter(), cx.human());
                cx.emit(InstructionKind::RefundPremium, held, from, to, &r);
                cx.next.facts.premium_refund_ref = Some(r);
                cx.next.facts.collateral_refused = true;
                cx.next.principal_state = Some(P::OverridePending);
            }
            ActionBody::OverrideDecision { decision, .. } => match decision {
                OverrideChoice::Proceed => {
                    cx.next.facts.override_ack = true;
                    cx.next.principal_state = Some(P::ApprovalPending);
                }
                OverrideChoice::Cancel => cx.cancel(),
            },
            ActionBody::ApproveRelease { .. } => {
                let tok = action.signature.clone().expect("checked above");
                cx.next.facts.approvals.insert(tok);
                if release_ready(&cx.next) {
                    cx.next.principal_state = Some(P::Releasable);
                }
            }
            ActionBody::ReleasePrincipal {
                approvals,
                transfer_ref,
                amount,
                destination,
                ..
            } => {
                let mut shown = PredicateFacts::of(&cx.next);
                shown.h = false;
                shown.a = false;
                shown.u = false;
                for tok in approvals {
                    let ok = tok.kind == ActionKind::ApproveRelease
                        && cx.next.parties.contains(&tok.signer)
                        && self.keys.verify_signature(tok, &cx.next.job_id, &cx.hash);
                    if !ok {
                        return Err(binding(format!(
                            "approval by {} does not verify",
                            tok.signer
                        )));
                    }
                    match tok.signer.role {
                        Role::HumanRequestor => shown.h = true,
                        Role::AssistantRequestor => shown.a = true,
                        Role::Underwriter => shown.u = true,
                        _ => return Err(binding(format!("{} cannot approve release", tok.signer))),
                    }
                }
                let kind = cx.next.parties.requestor_kind();
                let shown_ok =
                    release_auth(&shown, kind) && (shown.coverage_bound || shown.override_ack);
                if !shown_ok || !release_ready(&cx.next) {
                    return Err(policy("release predicate does not hold"));
                }
                let terms = cx
                    .agreement()
                    .principal_terms
                    .clone()
                    .expect("fund-involving");
                if *amount != terms.amount || *destination != terms.destination {
                    return Err(policy("release does not match principal terms"));
                }
                let (from, to) = (cx.human(), AccountId::wallet(terms.destination.clone()));
                cx.emit(
                    InstructionKind::TransferPrincipal,
                    terms.amount,
                    from,
                    to,
                    transfer_ref,
                );
                cx.next.facts.transfer_ref = Some(transfer_ref.clone());
                cx.next.principal_state = Some(P::ExecutionPending);
            }
            ActionBody::SubmitExecutionEvidence {
                exec_evidence_ref, ..
            } => {
                cx.deadline(cx.agreement().deadlines.delivery)?;
                cx.next.facts.exec_evidence_ref = Some(exec_evidence_ref.clone());
                cx.maybe_enter_evaluation();
            }
            ActionBody::UnwindPreExecution {
                premium_refund_ref,
                collateral_unlock_ref,
                fee_refund_ref,
                ..
            } => self.unwind(
                cx,
                premium_refund_ref,
                collateral_unlock_ref,
                fee_refund_ref,
            )?,
            ActionBody::EvaluateOutcome {
                outcome,
                trigger,
                evidence_ref,
                ..
            } => {
                cx.deadline(cx.agreement().deadlines.dispute)?;
                cx.next.facts.outcome = Some(OutcomeFact {
                    outcome: *outcome,
                    trigger: trigger.clone(),
                    evidence_ref: evidence_ref.clone(),
                });
                cx.maybe_close();
            }
            ActionBody::SettleFeeEscrow {
                decision,
                settlement_ref,
                ..
            } => {
                let outcome = cx
                    .next
                    .facts
                    .outcome
                    .as_ref()
                    .expect("enabled after outcome")
                    .outcome;
                let fee = cx.agreement().fee_terms.amount;
                let vault = AccountId::FeeVault(cx.next.job_id.clone());
                match (decision, outcome) {
                    (FeeDecision::Release, Verdict::Pass) => {
                        let to = cx.agent();
                        cx.emit(InstructionKind::ReleaseFee, fee, vault, to, settlement_ref);
                    }
                    (FeeDecision::Refund, Verdict::Fail) => {
                        let to = cx.human();
                        cx.emit(InstructionKind::RefundFee, fee, vault, to, settlement_ref);
                    }
                    _ => {
                        return Err(policy(format!(
                            "fee {decision:?} contradicts outcome {outcome:?}"
                        )))
                    }
                }
                cx.next.facts.fee_settlement = Some(*decision);
                cx.maybe_close();
            }
            ActionBody::SettleCollateral {
                decision,
                amount,
                settlement_ref,
                ..
            } => {
                let d = cx.next.collateral_held();
                let vault = AccountId::CollateralVault(cx.next.job_id.clone());
                match decision {
                    CollateralDecision::Unlock => {
                        if *amount != d {
                            return Err(policy(format!("unlock must return the full {d}")));
                        }
                        let to = cx.agent();
                        cx.emit(
                            InstructionKind::UnlockCollateral,
                            d,
                            vault,
                            to,
                            settlement_ref,
                        );
                    }
                    CollateralDecision::Slash => {
                        let failed =
                            matches!(&cx.next.facts.outcome, Some(o) if o.outcome == Verdict::Fail);
                        if !failed {
                            return Err(policy("slash requires a failed outcome"));
                        }
                        if cx.agreement().collateral_policy != CollateralPolicy::SlashUpToLoss {
                            return Err(policy("agreement does not permit slashing"));
                        }
                        let m = cx.agreement().principal_amount().unwrap_or_default();
                        if !amount.is_positive() || *amount > d.min(m) {
                            return Err(policy(format!("slash must be within (0, {}]", d.min(m))));
                        }
                        let (human, agent) = (cx.human(), cx.agent());
                        cx.emit(
                            InstructionKind::SlashCollateral,
                            *amount,
                            vault.clone(),
                            human,
                            settlement_ref,
                        );
                        let rest = format!("{settlement_ref}/remainder");
                        cx.emit(
                            InstructionKind::UnlockCollateral,
                            d - *amount,
                            vault,
                            agent,
                            &rest,
                        );
                        cx.next.facts.collateral_slashed = *amount;
                    }
                }
                cx.next.facts.collateral_settlement = Some(*decision);
                cx.maybe_close();
            }
            ActionBody::FileClaim {
                trigger,
                claimed_loss,
                evidence_ref,
                ..
            } => {
                cx.deadline(cx.agreement().deadlines.claim)?;
                let m = cx.agreement().principal_amount().unwrap_or_default();
                if !claimed_loss.is_positive() || *claimed_loss > m {
                    return Err(policy("claimed loss must be within (0, principal]"));
                }
                cx.next.facts.claim = Some(ClaimFact {
                    trigger: trigger.clone(),
                    claimed_loss: *claimed_loss,
                    evidence_ref: evidence_ref.clone(),
                });
            }
            ActionBody::PayClaim {
                payout, payout_ref, ..
            } => {
                let claim = cx
                    .next
                    .facts
                    .claim
                    .clone()
                    .expect("enabled after FileClaim");
                let limit = cx.agreement().coverage_limit;
                let due = (claim.claimed_loss - cx.next.facts.collateral_slashed)
                    .min(limit)
                    .max(Money::ZERO);
                if *payout != due {
                    return Err(policy(format!(
                        "payout {payout} differs from amount due {due}"
                    )));
                }
                let (from, to) = (cx.underwriter(), cx.human());
                cx.emit(InstructionKind::PayClaim, due, from, to, payout_ref);
                cx.next.facts.claim_paid = Some(due);
                cx.maybe_close();
            }
        }
        Ok(())
    }

    fn unwind(
        &self,
        cx: &mut Ctx<'_>,
        premium_ref: &Option<String>,
        collateral_ref: &Option<String>,
        fee_ref: &Option<String>,
    ) -> Result<(), TransitionError> {
        let refundable = cx
            .next
            .agreement()
            .map(|a| a.premium_refund_policy == PremiumRefundPolicy::Refundable)
            .unwrap_or(false);
        let fee = cx
            .next
            .agreement()
            .map(|a| a.fee_terms.amount)
            .unwrap_or_default();
        let fee_due = if cx.next.fee_held() { fee } else { Money::ZERO };
        let premium_due = if refundable {
            cx.next.premium_held()
        } else {
            Money::ZERO
        };
        let collateral_due = cx.next.collateral_held();

        let need = |what: &str, due: Money, r: &Option<String>| -> Result<(), TransitionError> {
            match (due.is_positive(), r) {
                (true, None) => Err(policy(format!("unwind needs {what}"))),
                (false, Some(_)) => Err(policy(format!("nothing to unwind for {what}"))),
                _ => Ok(()),
            }
        };
        need("fee_refund_ref", fee_due, fee_ref)?;
        need("premium_refund_ref", premium_due, premium_ref)?;
        need("collateral_unlock_ref", collateral_due, collateral_ref)?;

        let (human, agent, uw) = (cx.human(), cx.agent(), cx.underwriter());
        if let Some(r) = fee_ref {
            let vault = AccountId::FeeVault(cx.next.job_id.clone());
            cx.emit(InstructionKind::RefundFee, fee_due, vault, human.clone(), r);
            cx.next.facts.fee_refund_ref = Some(r.clone());
        }
        if let Some(r) = premium_ref {
            cx.emit(InstructionKind::RefundPremium, premium_due, uw, human, r);
            cx.next.facts.premium_refund_ref = Some(r.clone());
        }
        if let Some(r) = collateral_ref {
            let vault = AccountId::CollateralVault(cx.next.job_id.clone());
            cx.emit(
                InstructionKind::UnlockCollateral,
                collateral_due,
                vault,
                agent,
                r,
            );
            cx.next.facts.collateral_unlock_ref = Some(r.clone());
        }
        cx.next.facts.unwound = true;
        Ok(())
    }
}

/// An unpaid premium past its deadline counts as declined coverage.
fn premium_lapses(state: &JobState, now: Timestamp) -> bool {
    state.principal_state == Some(P::PremiumPending)
        && state.agreement().is_some_and(|a| now > a.deadlines.premium)
}

fn lapse_premium(state: &mut JobState, now: Timestamp) {
    let Some((deadline, override_allowed)) = state
        .agreement()
        .map(|a| (a.deadlines.premium, a.override_allowed))
    else {
        return;
    };
    if state.principal_state == Some(P::PremiumPending) && now > deadline {
        state.facts.premium_lapsed = true;
        if override_allowed {
            state.principal_state = Some(P::OverridePending);
        } else {
            state.principal_state = Some(P::Cancelled);
            state.phase = Phase::Cancelled;
        }
    }
}
