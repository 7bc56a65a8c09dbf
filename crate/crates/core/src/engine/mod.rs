//! Drives jobs through the state machine and the ledger together.
//!
//! Each accepted action is applied to its job, the emitted ledger
//! instructions run as one atomic batch, and a record is appended to the
//! event log. A rejected action leaves jobs, balances and log untouched.

mod eventlog;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agreement::{AgreementHash, JobId, PartyId};
use crate::ledger::{Account, AccountId, Ledger, LedgerError};
use crate::lifecycle::{Action, ActionBody, JobState, StateMachine, TransitionError};
use crate::money::Timestamp;

pub use eventlog::{
    replay, EventRecord, LogLine, ReplayError, ReplayReport, LOG_FORMAT, LOG_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("ledger rejected the emitted instructions: {0}")]
    Ledger(#[from] LedgerError),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} already exists")]
    DuplicateJob(JobId),
}

#[derive(Clone, Debug)]
pub struct Engine {
    machine: StateMachine,
    ledger: Ledger,
    opening: BTreeMap<AccountId, Account>,
    jobs: BTreeMap<JobId, JobState>,
    records: Vec<EventRecord>,
    recording: bool,
}

impl Engine {
    /// Wraps a ledger whose accounts are already opened; its current balances
    /// become the opening balances of the log.
    pub fn new(machine: StateMachine, ledger: Ledger) -> Self {
        let opening = ledger.accounts().clone();
        Engine {
            machine,
            ledger,
            opening,
            jobs: BTreeMap::new(),
            records: Vec::new(),
            recording: true,
        }
    }

    pub fn machine(&self) -> &StateMachine {
        &self.machine
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn job(&self, id: &JobId) -> Option<&JobState> {
        self.jobs.get(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobState> {
        self.jobs.values()
    }

    /// Turns the event log on or off. Long simulations switch it off; a log
    /// with gaps cannot be replayed.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    /// Removes a job from the engine, returning its final state.
    pub fn evict(&mut self, id: &JobId) -> Option<JobState> {
        self.jobs.remove(id)
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn opening_balances(&self) -> &BTreeMap<AccountId, Account> {
        &self.opening
    }

    pub fn submit(&mut self, action: Action, now: Timestamp) -> Result<&JobState, EngineError> {
        let transition = match &action.body {
            ActionBody::SubmitRequest { .. } => {
                if self.jobs.contains_key(&action.job_id) {
                    return Err(EngineError::DuplicateJob(action.job_id.clone()));
                }
                self.machine.open(&action, now)?
            }
            _ => {
                let state = self
                    .jobs
                    .get(&action.job_id)
                    .ok_or_else(|| EngineError::UnknownJob(action.job_id.clone()))?;
                self.machine.apply(state, &action, now)?
            }
        };
        let receipts = self.ledger.execute_batch(transition.instructions)?;
        let state = transition.state;
        if self.recording {
            self.records.push(EventRecord {
                seq: self.records.len() as u64,
                timestamp: now,
                job_id: state.job_id.clone(),
                agreement_hash: state.subject_hash(),
                actor: action.sender.clone(),
                kind: action.kind(),
                action,
                phase: state.phase,
                fee_state: state.fee_state,
                principal_state: state.principal_state,
                receipts: receipts.into_iter().map(|r| r.reference).collect(),
            });
        }
        let id = state.job_id.clone();
        self.jobs.insert(id.clone(), state);
        Ok(&self.jobs[&id])
    }

    /// Fills in the job's current agreement hash, the recorded release
    /// approvals when none are given, and the sender's signature when the
    /// kind needs one and the machine's keyring holds the sender's key.
    pub fn prepare(&self, job_id: &JobId, sender: PartyId, mut body: ActionBody) -> Action {
        let state = self.jobs.get(job_id);
        let subject = state
            .map(JobState::subject_hash)
            .unwrap_or(AgreementHash::ZERO);
        if let Some(h) = body.agreement_hash_mut() {
            *h = subject;
        }
        if let (ActionBody::ReleasePrincipal { approvals, .. }, Some(s)) = (&mut body, state) {
            if approvals.is_empty() {
                approvals.extend(s.facts.approvals.iter().cloned());
            }
        }
        let kind = body.kind();
        let mut action = Action::new(job_id.clone(), sender, body);
        if kind.requires_signature() {
            action.signature = self
                .machine
                .keys()
                .sign(&action.sender, job_id, &subject, kind);
        }
        action
    }

    /// The log so far: header, one line per accepted action, trailer.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &LogLine| {
            out.push_str(&serde_json::to_string(line).expect("log lines serialize"));
            out.push('\n');
        };
        push(&LogLine::header(self.opening.clone()));
        for r in &self.records {
            push(&LogLine::Event(r.clone()));
        }
        push(&LogLine::trailer(self));
        out
    }
}
