//! Line-delimited JSON event log and bit-exact replay.
//!
//! ```text
//! {"type":"header","format":"ars-event-log","version":1,"accounts":{...}}
//! {"type":"event","seq":0,"timestamp":...,"job_id":...,...}
//! ...
//! {"type":"trailer","events":n,"receipts":k,"balances":{...},"total_supply":...}
//! ```
//!
//! Replay rebuilds a fresh engine from the header, resubmits every logged
//! action at its logged timestamp and requires each regenerated line to
//! equal the logged one byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Engine;
use crate::agreement::{AgreementHash, JobId, PartyId};
use crate::ledger::{Account, AccountId, Ledger};
use crate::lifecycle::{
    Action, ActionKind, FeeTrackState, Phase, PrincipalTrackState, StateMachine,
};
use crate::money::{Money, Timestamp};

pub const LOG_FORMAT: &str = "ars-event-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub job_id: JobId,
    pub agreement_hash: AgreementHash,
    pub actor: PartyId,
    pub kind: ActionKind,
    pub action: Action,
    pub phase: Phase,
    pub fee_state: FeeTrackState,
    pub principal_state: Option<PrincipalTrackState>,
    /// Refs of the receipts the action's ledger instructions produced.
    pub receipts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogLine {
    Header {
        format: String,
        version: u32,
        accounts: BTreeMap<AccountId, Account>,
    },
    Event(EventRecord),
    Trailer {
        events: u64,
        receipts: u64,
        balances: BTreeMap<AccountId, Money>,
        total_supply: Money,
    },
}

impl LogLine {
    pub fn header(accounts: BTreeMap<AccountId, Account>) -> Self {
        LogLine::Header {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            accounts,
        }
    }

    pub fn trailer(engine: &Engine) -> Self {
        let ledger = engine.ledger();
        LogLine::Trailer {
            events: engine.records().len() as u64,
            receipts: ledger.receipts().len() as u64,
            balances: ledger
                .accounts()
                .iter()
                .map(|(k, a)| (k.clone(), a.balance))
                .collect(),
            total_supply: ledger.total_supply(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("replay diverges at seq {seq} (line {line}): {reason}")]
    Divergence {
        seq: u64,
        line: usize,
        reason: String,
    },
    #[error("trailer mismatch: {0}")]
    Trailer(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub events: u64,
    pub jobs: usize,
    pub receipts: u64,
    pub total_supply: Money,
    pub trailer_checked: bool,
}

/// Replays `log` against `machine`. The machine must hold the keys the
/// original run verified signatures with.
pub fn replay(log: &str, machine: StateMachine) -> Result<ReplayReport, ReplayError> {
    let mut lines = log
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let malformed = |line: usize, reason: String| ReplayError::Malformed {
        line: line + 1,
        reason,
    };

    let (n, first) = lines
        .next()
        .ok_or_else(|| malformed(0, "empty log".into()))?;
    let accounts = match serde_json::from_str::<LogLine>(first) {
        Ok(LogLine::Header {
            format,
            version,
            accounts,
        }) => {
            if format != LOG_FORMAT || version != LOG_VERSION {
                return Err(malformed(
                    n,
                    format!("unsupported format {format} v{version}"),
                ));
            }
            accounts
        }
        Ok(_) => return Err(malformed(n, "first line is not a header".into())),
        Err(e) => return Err(malformed(n, e.to_string())),
    };
    let ledger = Ledger::from_receipts(&accounts, &[]).map_err(|e| malformed(n, e.to_string()))?;
    let mut engine = Engine::new(machine, ledger);
    let mut trailer_checked = false;

    for (n, text) in lines {
        if trailer_checked {
            return Err(malformed(n, "content after trailer".into()));
        }
        let parsed: LogLine =
            serde_json::from_str(text).map_err(|e| malformed(n, e.to_string()))?;
        match parsed {
            LogLine::Header { .. } => return Err(malformed(n, "second header".into())),
            LogLine::Event(rec) => {
                let seq = rec.seq;
                let diverge = |reason: String| ReplayError::Divergence {
                    seq,
                    line: n + 1,
                    reason,
                };
                if seq != engine.records().len() as u64 {
                    return Err(diverge(format!("expected seq {}", engine.records().len())));
                }
                engine
                    .submit(rec.action, rec.timestamp)
                    .map_err(|e| diverge(format!("action rejected: {e}")))?;
                let again = LogLine::Event(engine.records().last().expect("just pushed").clone());
                let again = serde_json::to_string(&again).expect("log lines serialize");
                if again != text {
                    return Err(diverge("regenerated record differs".into()));
                }
            }
            LogLine::Trailer { .. } => {
                let ours =
                    serde_json::to_string(&LogLine::trailer(&engine)).expect("log lines serialize");
                if ours != text {
                    return Err(ReplayError::Trailer(format!("expected {ours}")));
                }
                trailer_checked = true;
            }
        }
    }
    Ok(ReplayReport {
        events: engine.records().len() as u64,
        jobs: engine.jobs().count(),
        receipts: engine.ledger().receipts().len() as u64,
        total_supply: engine.ledger().total_supply(),
        trailer_checked,
    })
}
