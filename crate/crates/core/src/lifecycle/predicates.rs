//! Release authorization predicates.

use serde::{Deserialize, Serialize};

use super::action::UwVerdict;
use super::state::JobState;
use crate::agreement::{RequestorKind, Role};

/// Indicator view over a job's facts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateFacts {
    /// Human approval present.
    pub h: bool,
    /// Assistant approval present.
    pub a: bool,
    /// Underwriter approval present.
    pub u: bool,
    pub coverage_bound: bool,
    pub override_ack: bool,
}

impl PredicateFacts {
    /// Indicators over the approvals recorded on `state`. Recorded tokens were
    /// verified on entry, so only the signer's role matters here.
    pub fn of(state: &JobState) -> Self {
        let has = |role: Role| {
            state
                .facts
                .approvals
                .iter()
                .any(|t| t.signer.role == role && state.parties.contains(&t.signer))
        };
        PredicateFacts {
            h: has(Role::HumanRequestor),
            a: has(Role::AssistantRequestor),
            u: has(Role::Underwriter),
            coverage_bound: coverage_bound(state),
            override_ack: state.facts.override_ack,
        }
    }
}

/// `A ∧ (U ∨ H)`, where `A` holds trivially when no assistant signs for
/// the requestor.
pub fn release_auth(f: &PredicateFacts, kind: RequestorKind) -> bool {
    let a = match kind {
        RequestorKind::Human => true,
        RequestorKind::Assistant => f.a,
    };
    a && (f.u || f.h)
}

/// An approving underwriting decision and a paid premium are both on record,
/// and the premium has not been handed back.
pub fn coverage_bound(state: &JobState) -> bool {
    let approved = matches!(
        state.facts.uw_decision,
        Some(d) if d.decision == UwVerdict::Approve
    );
    approved && state.facts.premium_paid.is_some() && state.facts.premium_refund_ref.is_none()
}

pub fn release_ready(state: &JobState) -> bool {
    let f = PredicateFacts::of(state);
    release_auth(&f, state.parties.requestor_kind()) && (f.coverage_bound || f.override_ack)
}
