//! Parties, the structured agreement and the hash that anchors every
//! financially relevant action of a job.

mod auth;
mod canonical;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{Money, Timestamp};

pub use auth::{Keyring, SignatureToken};
pub use canonical::{canonical_bytes, canonical_hash, AgreementHash};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgreementError {
    #[error("invalid agreement: {0}")]
    InvalidAgreement(String),
}

/// Standard roles an action can be attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    HumanRequestor,
    AssistantRequestor,
    BusinessAgent,
    Underwriter,
    Evaluator,
    SettlementLayer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::HumanRequestor,
        Role::AssistantRequestor,
        Role::BusinessAgent,
        Role::Underwriter,
        Role::Evaluator,
        Role::SettlementLayer,
    ];

    pub(crate) fn code(self) -> u8 {
        match self {
            Role::HumanRequestor => 0,
            Role::AssistantRequestor => 1,
            Role::BusinessAgent => 2,
            Role::Underwriter => 3,
            Role::Evaluator => 4,
            Role::SettlementLayer => 5,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub String);

impl JobId {
    pub fn new(id: impl Into<String>) -> Self {
        JobId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A participant acting in a standard role.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub id: String,
    pub role: Role,
}

impl PartyId {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        PartyId {
            id: id.into(),
            role,
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role, self.id)
    }
}

/// Whether the requestor side is a human alone, or an assistant acting for a
/// human principal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestorKind {
    Human,
    Assistant,
}

/// The roster of a job. The requestor side is either `{human}` or
/// `{assistant, human}`; the human is always the owner of requestor funds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parties {
    pub human: String,
    #[serde(default)]
    pub assistant: Option<String>,
    pub business_agent: String,
    #[serde(default)]
    pub underwriter: Option<String>,
    pub evaluator: String,
    pub settlement: String,
}

impl Parties {
    pub fn requestor_kind(&self) -> RequestorKind {
        if self.assistant.is_some() {
            RequestorKind::Assistant
        } else {
            RequestorKind::Human
        }
    }

    /// The party that speaks for the requestor side in negotiation.
    pub fn requestor(&self) -> PartyId {
        match &self.assistant {
            Some(a) => PartyId::new(a.clone(), Role::AssistantRequestor),
            None => self.human(),
        }
    }

    pub fn human(&self) -> PartyId {
        PartyId::new(self.human.clone(), Role::HumanRequestor)
    }

    pub fn business_agent(&self) -> PartyId {
        PartyId::new(self.business_agent.clone(), Role::BusinessAgent)
    }

    pub fn underwriter(&self) -> Option<PartyId> {
        self.underwriter
            .as_ref()
            .map(|u| PartyId::new(u.clone(), Role::Underwriter))
    }

    pub fn evaluator(&self) -> PartyId {
        PartyId::new(self.evaluator.clone(), Role::Evaluator)
    }

    pub fn settlement(&self) -> PartyId {
        PartyId::new(self.settlement.clone(), Role::SettlementLayer)
    }

    /// The job's party holding `role`, if the roster has one.
    pub fn party(&self, role: Role) -> Option<PartyId> {
        match role {
            Role::HumanRequestor => Some(self.human()),
            Role::AssistantRequestor => self
                .assistant
                .as_ref()
                .map(|a| PartyId::new(a.clone(), Role::AssistantRequestor)),
            Role::BusinessAgent => Some(self.business_agent()),
            Role::Underwriter => self.underwriter(),
            Role::Evaluator => Some(self.evaluator()),
            Role::SettlementLayer => Some(self.settlement()),
        }
    }

    pub fn contains(&self, party: &PartyId) -> bool {
        self.party(party.role).as_ref() == Some(party)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssuranceMode {
    FeeOnly,
    FundInvolving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeeCustody {
    Escrow,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeeTerms {
    pub amount: Money,
    #[serde(default = "default_custody")]
    pub custody: FeeCustody,
}

fn default_custody() -> FeeCustody {
    FeeCustody::Escrow
}

impl FeeTerms {
    pub fn escrow(amount: Money) -> Self {
        FeeTerms {
            amount,
            custody: FeeCustody::Escrow,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalTerms {
    pub amount: Money,
    /// Party id receiving the released principal.
    pub destination: String,
}

/// Absolute deadlines on the engine clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deadlines {
    /// After this, an unpaid premium counts as declined coverage.
    pub premium: Timestamp,
    pub delivery: Timestamp,
    pub claim: Timestamp,
    pub dispute: Timestamp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PremiumRefundPolicy {
    #[default]
    Refundable,
    NonRefundable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollateralPolicy {
    #[default]
    SlashUpToLoss,
    NoSlash,
}

/// The canonical job contract both sides sign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredAgreement {
    pub job_id: JobId,
    pub parties: Parties,
    pub task_spec: String,
    pub assurance_mode: AssuranceMode,
    pub fee_terms: FeeTerms,
    #[serde(default)]
    pub principal_terms: Option<PrincipalTerms>,
    /// Opaque descriptor handed to the evaluator. Keys are unordered.
    #[serde(default)]
    pub acceptance_criteria: BTreeMap<String, String>,
    pub deadlines: Deadlines,
    #[serde(default)]
    pub premium_refund_policy: PremiumRefundPolicy,
    pub coverage_limit: Money,
    #[serde(default)]
    pub collateral_policy: CollateralPolicy,
    /// Whether an underwriting rejection may be overridden by the human.
    #[serde(default = "default_true")]
    pub override_allowed: bool,
}

fn default_true() -> bool {
    true
}

impl StructuredAgreement {
    pub fn validate(&self) -> Result<(), AgreementError> {
        let bad = |m: &str| Err(AgreementError::InvalidAgreement(m.to_string()));
        if self.job_id.0.is_empty() {
            return bad("empty job_id");
        }
        if self.fee_terms.amount < Money::ZERO {
            return bad("negative fee");
        }
        if self.coverage_limit < Money::ZERO {
            return bad("negative coverage limit");
        }
        match (&self.assurance_mode, &self.principal_terms) {
            (AssuranceMode::FeeOnly, None) => {}
            (AssuranceMode::FundInvolving, Some(p)) => {
                if !p.amount.is_positive() {
                    return bad("principal amount must be positive");
                }
                if self.coverage_limit > p.amount {
                    return bad("coverage limit exceeds principal");
                }
                if p.destination.is_empty() {
                    return bad("empty principal destination");
                }
                if self.parties.underwriter.is_none() {
                    return bad("fund-involving job without an underwriter");
                }
            }
            (AssuranceMode::FeeOnly, Some(_)) => return bad("fee-only job with principal terms"),
            (AssuranceMode::FundInvolving, None) => {
                return bad("fund-involving job without principal terms")
            }
        }
        Ok(())
    }

    pub fn principal_amount(&self) -> Option<Money> {
        self.principal_terms.as_ref().map(|p| p.amount)
    }

    pub fn hash(&self) -> Result<AgreementHash, AgreementError> {
        canonical_hash(self)
    }
}
