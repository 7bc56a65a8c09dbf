use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::action::{Action, CollateralDecision, FeeDecision, UwVerdict, Verdict};
use super::{FeeTrackState, Phase, PrincipalTrackState};
use crate::agreement::{
    AgreementHash, FeeTerms, JobId, Parties, PrincipalTerms, SignatureToken, StructuredAgreement,
};
use crate::ledger::LedgerInstruction;
use crate::money::{Money, Timestamp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTerms {
    pub task_spec: String,
    pub fee_terms: FeeTerms,
    pub principal_terms: Option<PrincipalTerms>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UwDecisionFact {
    pub decision: UwVerdict,
    pub premium: Money,
    pub collateral_required: Money,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeFact {
    pub outcome: Verdict,
    pub trigger: Option<String>,
    pub evidence_ref: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimFact {
    pub trigger: String,
    pub claimed_loss: Money,
    pub evidence_ref: String,
}

/// Everything the job has established so far. Fields only ever go from
/// unset to set; an unwind records refunds rather than erasing locks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facts {
    pub requestor_signed: Option<AgreementHash>,
    pub service_signed: Option<AgreementHash>,
    pub cancel_reason: Option<String>,
    pub fee_lock_ref: Option<String>,
    pub delivery_ref: Option<String>,
    pub coverage_request: Option<Money>,
    pub uw_decision: Option<UwDecisionFact>,
    pub premium_ref: Option<String>,
    pub premium_paid: Option<Money>,
    pub premium_lapsed: bool,
    pub premium_refund_ref: Option<String>,
    pub collateral_ref: Option<String>,
    pub collateral_locked: Option<Money>,
    pub collateral_refused: bool,
    pub override_ack: bool,
    pub approvals: BTreeSet<SignatureToken>,
    pub transfer_ref: Option<String>,
    pub exec_evidence_ref: Option<String>,
    pub outcome: Option<OutcomeFact>,
    pub fee_settlement: Option<FeeDecision>,
    pub fee_refund_ref: Option<String>,
    pub collateral_settlement: Option<CollateralDecision>,
    pub collateral_slashed: Money,
    pub collateral_unlock_ref: Option<String>,
    pub claim: Option<ClaimFact>,
    pub claim_paid: Option<Money>,
    pub unwound: bool,
}

/// One accepted action together with the state it produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEvent {
    pub at: Timestamp,
    pub action: Action,
    pub phase: Phase,
    pub fee_state: FeeTrackState,
    pub principal_state: Option<PrincipalTrackState>,
    pub instructions: Vec<LedgerInstruction>,
}

/// Immutable snapshot of one job.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobState {
    pub job_id: JobId,
    pub parties: Parties,
    pub request: RequestTerms,
    pub draft: Option<(StructuredAgreement, AgreementHash)>,
    pub bound_agreement: Option<(StructuredAgreement, AgreementHash)>,
    pub phase: Phase,
    /// Meaningful once the job is in `TRANSACTION` or later.
    pub fee_state: FeeTrackState,
    pub principal_state: Option<PrincipalTrackState>,
    pub facts: Facts,
    pub event_log: Vec<JobEvent>,
}

impl JobState {
    pub fn agreement(&self) -> Option<&StructuredAgreement> {
        self.bound_agreement.as_ref().map(|(a, _)| a)
    }

    pub fn agreement_hash(&self) -> Option<AgreementHash> {
        self.bound_agreement.as_ref().map(|(_, h)| *h)
    }

    /// The hash actions must carry right now: the bound agreement's, else the
    /// current draft's, else [`AgreementHash::ZERO`].
    pub fn subject_hash(&self) -> AgreementHash {
        self.bound_agreement
            .as_ref()
            .or(self.draft.as_ref())
            .map(|(_, h)| *h)
            .unwrap_or(AgreementHash::ZERO)
    }

    pub fn is_fund_involving(&self) -> bool {
        self.principal_state.is_some()
    }

    /// The premium the underwriter still holds for this job.
    pub fn premium_held(&self) -> Money {
        match (self.facts.premium_paid, &self.facts.premium_refund_ref) {
            (Some(p), None) => p,
            _ => Money::ZERO,
        }
    }

    /// Collateral still sitting in the job's vault.
    pub fn collateral_held(&self) -> Money {
        match self.facts.collateral_locked {
            Some(d)
                if self.facts.collateral_settlement.is_none()
                    && self.facts.collateral_unlock_ref.is_none() =>
            {
                d
            }
            _ => Money::ZERO,
        }
    }

    /// True while the fee sits locked and unsettled in escrow.
    pub fn fee_held(&self) -> bool {
        self.facts.fee_lock_ref.is_some()
            && self.facts.fee_settlement.is_none()
            && self.facts.fee_refund_ref.is_none()
    }

    /// A claim may be filed: coverage bound and the evaluator reported failure.
    pub fn claim_eligible(&self) -> bool {
        super::coverage_bound(self)
            && matches!(&self.facts.outcome, Some(o) if o.outcome == Verdict::Fail)
    }
}
