//! The job state machine.
//!
//! A job moves through coarse phases
//! `REQUEST → NEGOTIATION → TRANSACTION → EVALUATION → CLOSED` (or
//! `CANCELLED`). Inside `TRANSACTION` a fee track and, for fund-involving
//! jobs, a principal track progress concurrently. [`StateMachine::apply`] is
//! a pure function of `(state, action, now)`: it never touches custody, it
//! returns the [`LedgerInstruction`](crate::ledger::LedgerInstruction)s the
//! settlement layer must execute.

mod action;
mod machine;
mod predicates;
mod state;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::PartyId;
use crate::money::Timestamp;

pub use action::{
    Action, ActionBody, ActionKind, CollateralDecision, FeeDecision, OverrideChoice, UwVerdict,
    Verdict,
};
pub use machine::{
    enabled_actions, AllowAll, AuthorizationGate, EnabledAction, Evaluation, Evaluator,
    StateMachine, Transition,
};
pub use predicates::{coverage_bound, release_auth, release_ready, PredicateFacts};
pub use state::{ClaimFact, Facts, JobEvent, JobState, OutcomeFact, RequestTerms, UwDecisionFact};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Request,
    Negotiation,
    Transaction,
    Evaluation,
    Closed,
    Cancelled,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Closed | Phase::Cancelled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeeTrackState {
    FeeAwaitLock,
    FeeEscrowLocked,
    FeeDelivered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PrincipalTrackState {
    UwAwaitRequest,
    UwReview,
    PremiumPending,
    CollateralRequested,
    OverridePending,
    ApprovalPending,
    Releasable,
    ExecutionPending,
    Cancelled,
}

impl PrincipalTrackState {
    pub const ALL: [PrincipalTrackState; 9] = [
        PrincipalTrackState::UwAwaitRequest,
        PrincipalTrackState::UwReview,
        PrincipalTrackState::PremiumPending,
        PrincipalTrackState::CollateralRequested,
        PrincipalTrackState::OverridePending,
        PrincipalTrackState::ApprovalPending,
        PrincipalTrackState::Releasable,
        PrincipalTrackState::ExecutionPending,
        PrincipalTrackState::Cancelled,
    ];
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("{kind:?} is not enabled in {phase:?} (fee {fee:?}, principal {principal:?})")]
    NotEnabled {
        kind: ActionKind,
        phase: Phase,
        fee: FeeTrackState,
        principal: Option<PrincipalTrackState>,
    },
    #[error("{sender} may not send {kind:?}")]
    WrongSender { kind: ActionKind, sender: PartyId },
    #[error("bad binding: {0}")]
    BadBinding(String),
    #[error("{kind:?} at t={now} is past its deadline t={deadline}")]
    DeadlineExceeded {
        kind: ActionKind,
        deadline: Timestamp,
        now: Timestamp,
    },
    #[error("policy violation: {0}")]
    PolicyViolation(String),
}
