use serde::{Deserialize, Serialize};

use crate::agreement::{
    AgreementHash, FeeTerms, JobId, Parties, PartyId, PrincipalTerms, SignatureToken,
    StructuredAgreement,
};
use crate::money::Money;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    SubmitRequest,
    AcceptRequest,
    RejectRequest,
    ProposeAgreement,
    SignAgreement,
    CancelJob,
    LockFeeEscrow,
    SubmitDeliverable,
    SettleFeeEscrow,
    RequestUW,
    UWDecision,
    PayPremium,
    LockCollateral,
    RefuseCollateral,
    OverrideDecision,
    ApproveRelease,
    ReleasePrincipal,
    SubmitExecutionEvidence,
    UnwindPreExecution,
    EvaluateOutcome,
    SettleCollateral,
    FileClaim,
    PayClaim,
}

impl ActionKind {
    pub const ALL: [ActionKind; 23] = [
        ActionKind::SubmitRequest,
        ActionKind::AcceptRequest,
        ActionKind::RejectRequest,
        ActionKind::ProposeAgreement,
        ActionKind::SignAgreement,
        ActionKind::CancelJob,
        ActionKind::LockFeeEscrow,
        ActionKind::SubmitDeliverable,
        ActionKind::SettleFeeEscrow,
        ActionKind::RequestUW,
        ActionKind::UWDecision,
        ActionKind::PayPremium,
        ActionKind::LockCollateral,
        ActionKind::RefuseCollateral,
        ActionKind::OverrideDecision,
        ActionKind::ApproveRelease,
        ActionKind::ReleasePrincipal,
        ActionKind::SubmitExecutionEvidence,
        ActionKind::UnwindPreExecution,
        ActionKind::EvaluateOutcome,
        ActionKind::SettleCollateral,
        ActionKind::FileClaim,
        ActionKind::PayClaim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::SubmitRequest => "SubmitRequest",
            ActionKind::AcceptRequest => "AcceptRequest",
            ActionKind::RejectRequest => "RejectRequest",
            ActionKind::ProposeAgreement => "ProposeAgreement",
            ActionKind::SignAgreement => "SignAgreement",
            ActionKind::CancelJob => "CancelJob",
            ActionKind::LockFeeEscrow => "LockFeeEscrow",
            ActionKind::SubmitDeliverable => "SubmitDeliverable",
            ActionKind::SettleFeeEscrow => "SettleFeeEscrow",
            ActionKind::RequestUW => "RequestUW",
            ActionKind::UWDecision => "UWDecision",
            ActionKind::PayPremium => "PayPremium",
            ActionKind::LockCollateral => "LockCollateral",
            ActionKind::RefuseCollateral => "RefuseCollateral",
            ActionKind::OverrideDecision => "OverrideDecision",
            ActionKind::ApproveRelease => "ApproveRelease",
            ActionKind::ReleasePrincipal => "ReleasePrincipal",
            ActionKind::SubmitExecutionEvidence => "SubmitExecutionEvidence",
            ActionKind::UnwindPreExecution => "UnwindPreExecution",
            ActionKind::EvaluateOutcome => "EvaluateOutcome",
            ActionKind::SettleCollateral => "SettleCollateral",
            ActionKind::FileClaim => "FileClaim",
            ActionKind::PayClaim => "PayClaim",
        }
    }

    /// Kinds whose payload must carry a signature token from the sender.
    pub fn requires_signature(self) -> bool {
        matches!(
            self,
            ActionKind::SignAgreement
                | ActionKind::CancelJob
                | ActionKind::LockFeeEscrow
                | ActionKind::SubmitDeliverable
                | ActionKind::PayPremium
                | ActionKind::LockCollateral
                | ActionKind::RefuseCollateral
                | ActionKind::OverrideDecision
                | ActionKind::ApproveRelease
                | ActionKind::SubmitExecutionEvidence
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeDecision {
    Release,
    Refund,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UwVerdict {
    Approve,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideChoice {
    Proceed,
    Cancel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollateralDecision {
    Slash,
    Unlock,
}

/// Kind-specific payload. `job_id` and `signature` live on [`Action`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ActionBody {
    SubmitRequest {
        task_spec: String,
        fee_terms: FeeTerms,
        #[serde(default)]
        principal_terms: Option<PrincipalTerms>,
        parties: Parties,
    },
    AcceptRequest {
        #[serde(default)]
        reason: Option<String>,
    },
    RejectRequest {
        #[serde(default)]
        reason: Option<String>,
    },
    ProposeAgreement {
        agreement_draft: StructuredAgreement,
    },
    SignAgreement {
        agreement_hash: AgreementHash,
    },
    CancelJob {
        agreement_hash: AgreementHash,
        reason: String,
    },
    LockFeeEscrow {
        agreement_hash: AgreementHash,
        lock_ref: String,
    },
    SubmitDeliverable {
        agreement_hash: AgreementHash,
        deliverable_ref: String,
    },
    SettleFeeEscrow {
        agreement_hash: AgreementHash,
        decision: FeeDecision,
        settlement_ref: String,
    },
    RequestUW {
        agreement_hash: AgreementHash,
        coverage_request: Money,
    },
    UWDecision {
        agreement_hash: AgreementHash,
        decision: UwVerdict,
        premium: Money,
        #[serde(default)]
        collateral_required: Option<Money>,
    },
    PayPremium {
        agreement_hash: AgreementHash,
        premium: Money,
        premium_ref: String,
    },
    LockCollateral {
        agreement_hash: AgreementHash,
        #[serde(default)]
        amount: Option<Money>,
        #[serde(default)]
        collateral_ref: Option<String>,
    },
    RefuseCollateral {
        agreement_hash: AgreementHash,
    },
    OverrideDecision {
        agreement_hash: AgreementHash,
        decision: OverrideChoice,
    },
    ApproveRelease {
        agreement_hash: AgreementHash,
    },
    ReleasePrincipal {
        agreement_hash: AgreementHash,
        approvals: Vec<SignatureToken>,
        transfer_ref: String,
        amount: Money,
        destination: String,
    },
    SubmitExecutionEvidence {
        agreement_hash: AgreementHash,
        exec_evidence_ref: String,
    },
    UnwindPreExecution {
        agreement_hash: AgreementHash,
        #[serde(default)]
        premium_refund_ref: Option<String>,
        #[serde(default)]
        collateral_unlock_ref: Option<String>,
        #[serde(default)]
        fee_refund_ref: Option<String>,
    },
    EvaluateOutcome {
        agreement_hash: AgreementHash,
        outcome: Verdict,
        #[serde(default)]
        trigger: Option<String>,
        #[serde(default)]
        evidence_ref: Option<String>,
    },
    SettleCollateral {
        agreement_hash: AgreementHash,
        decision: CollateralDecision,
        amount: Money,
        settlement_ref: String,
    },
    FileClaim {
        agreement_hash: AgreementHash,
        trigger: String,
        claimed_loss: Money,
        evidence_ref: String,
    },
    PayClaim {
        agreement_hash: AgreementHash,
        payout: Money,
        payout_ref: String,
    },
}

impl ActionBody {
    pub fn kind(&self) -> ActionKind {
        match self {
            ActionBody::SubmitRequest { .. } => ActionKind::SubmitRequest,
            ActionBody::AcceptRequest { .. } => ActionKind::AcceptRequest,
            ActionBody::RejectRequest { .. } => ActionKind::RejectRequest,
            ActionBody::ProposeAgreement { .. } => ActionKind::ProposeAgreement,
            ActionBody::SignAgreement { .. } => ActionKind::SignAgreement,
            ActionBody::CancelJob { .. } => ActionKind::CancelJob,
            ActionBody::LockFeeEscrow { .. } => ActionKind::LockFeeEscrow,
            ActionBody::SubmitDeliverable { .. } => ActionKind::SubmitDeliverable,
            ActionBody::SettleFeeEscrow { .. } => ActionKind::SettleFeeEscrow,
            ActionBody::RequestUW { .. } => ActionKind::RequestUW,
            ActionBody::UWDecision { .. } => ActionKind::UWDecision,
            ActionBody::PayPremium { .. } => ActionKind::PayPremium,
            ActionBody::LockCollateral { .. } => ActionKind::LockCollateral,
            ActionBody::RefuseCollateral { .. } => ActionKind::RefuseCollateral,
            ActionBody::OverrideDecision { .. } => ActionKind::OverrideDecision,
            ActionBody::ApproveRelease { .. } => ActionKind::ApproveRelease,
            ActionBody::ReleasePrincipal { .. } => ActionKind::ReleasePrincipal,
            ActionBody::SubmitExecutionEvidence { .. } => ActionKind::SubmitExecutionEvidence,
            ActionBody::UnwindPreExecution { .. } => ActionKind::UnwindPreExecution,
            ActionBody::EvaluateOutcome { .. } => ActionKind::EvaluateOutcome,
            ActionBody::SettleCollateral { .. } => ActionKind::SettleCollateral,
            ActionBody::FileClaim { .. } => ActionKind::FileClaim,
            ActionBody::PayClaim { .. } => ActionKind::PayClaim,
        }
    }

    /// The agreement hash the payload claims to be bound to, if its kind
    /// carries one.
    pub fn agreement_hash(&self) -> Option<&AgreementHash> {
        use ActionBody::*;
        match self {
            SubmitRequest { .. }
            | AcceptRequest { .. }
            | RejectRequest { .. }
            | ProposeAgreement { .. } => None,
            SignAgreement { agreement_hash }
            | CancelJob { agreement_hash, .. }
            | LockFeeEscrow { agreement_hash, .. }
            | SubmitDeliverable { agreement_hash, .. }
            | SettleFeeEscrow { agreement_hash, .. }
            | RequestUW { agreement_hash, .. }
            | UWDecision { agreement_hash, .. }
            | PayPremium { agreement_hash, .. }
            | LockCollateral { agreement_hash, .. }
            | RefuseCollateral { agreement_hash }
            | OverrideDecision { agreement_hash, .. }
            | ApproveRelease { agreement_hash }
            | ReleasePrincipal { agreement_hash, .. }
            | SubmitExecutionEvidence { agreement_hash, .. }
            | UnwindPreExecution { agreement_hash, .. }
            | EvaluateOutcome { agreement_hash, .. }
            | SettleCollateral { agreement_hash, .. }
            | FileClaim { agreement_hash, .. }
            | PayClaim { agreement_hash, .. } => Some(agreement_hash),
        }
    }

    pub fn agreement_hash_mut(&mut self) -> Option<&mut AgreementHash> {
        use ActionBody::*;
        match self {
            SubmitRequest { .. }
            | AcceptRequest { .. }
            | RejectRequest { .. }
            | ProposeAgreement { .. } => None,
            SignAgreement { agreement_hash }
            | CancelJob { agreement_hash, .. }
            | LockFeeEscrow { agreement_hash, .. }
            | SubmitDeliverable { agreement_hash, .. }
            | SettleFeeEscrow { agreement_hash, .. }
            | RequestUW { agreement_hash, .. }
            | UWDecision { agreement_hash, .. }
            | PayPremium { agreement_hash, .. }
            | LockCollateral { agreement_hash, .. }
            | RefuseCollateral { agreement_hash }
            | OverrideDecision { agreement_hash, .. }
            | ApproveRelease { agreement_hash }
            | ReleasePrincipal { agreement_hash, .. }
            | SubmitExecutionEvidence { agreement_hash, .. }
            | UnwindPreExecution { agreement_hash, .. }
            | EvaluateOutcome { agreement_hash, .. }
            | SettleCollateral { agreement_hash, .. }
            | FileClaim { agreement_hash, .. }
            | PayClaim { agreement_hash, .. } => Some(agreement_hash),
        }
    }
}

/// A typed, attributable message driving one job.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub job_id: JobId,
    pub sender: PartyId,
    pub body: ActionBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureToken>,
}

impl Action {
    pub fn new(job_id: JobId, sender: PartyId, body: ActionBody) -> Self {
        Action {
            job_id,
            sender,
            body,
            signature: None,
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.body.kind()
    }

    pub fn with_signature(mut self, token: SignatureToken) -> Self {
        self.signature = Some(token);
        self
    }
}
