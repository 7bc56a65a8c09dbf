//! Settlement-layer primitives for agentic jobs.
//!
//! The crate is organised bottom-up:
//!
//! * [`agreement`]: parties, the structured agreement, its canonical hash and
//!   the keyed signature tokens that bind actions to it.
//! * [`lifecycle`]: the job state machine (phases, fee and principal tracks,
//!   typed actions, release predicates).
//! * [`ledger`]: conditional custody: wallets, per-job vaults, receipts.
//! * [`engine`]: runs actions through the state machine, executes the emitted
//!   ledger instructions atomically and keeps a replayable event log.
//! * [`underwriting`]: the simulated underwriter's pricing model.
//! * [`market_sim`]: Monte Carlo episodes, cell metrics and parameter sweeps.

pub mod agreement;
pub mod engine;
pub mod ledger;
pub mod lifecycle;
pub mod market_sim;
pub mod money;
pub mod scenario;
pub mod underwriting;

pub use agreement::{
    AgreementError, AgreementHash, AssuranceMode, CollateralPolicy, Deadlines, FeeTerms, JobId,
    Keyring, Parties, PartyId, PremiumRefundPolicy, PrincipalTerms, RequestorKind, Role,
    SignatureToken, StructuredAgreement,
};
pub use engine::{Engine, EngineError};
pub use ledger::{AccountId, InstructionKind, Ledger, LedgerError, LedgerInstruction, Receipt};
pub use lifecycle::{
    Action, ActionBody, ActionKind, FeeTrackState, JobState, Phase, PrincipalTrackState,
    StateMachine, TransitionError,
};
pub use money::{Money, Timestamp};
