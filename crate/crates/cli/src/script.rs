//! Scripted action files for `ars episode`.
//!
//! A script names the roster shape, the opening balance of every wallet and
//! the actions in order. Each step's `action` is an action body as it
//! appears in the event log. `agreement_hash` may be omitted: it is filled
//! with the job's current subject hash. Actions that need a signature are
//! signed with the demo keyring for the step's actor.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ars_core::{ActionBody, AgreementHash, JobId, Money, Role, Timestamp};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub assistant: bool,
    /// Opening balance of every wallet, in cents.
    pub endowment: Money,
    #[serde(alias = "steps")]
    pub step: Vec<Step>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub job: JobId,
    pub actor: Role,
    /// Logical time of the step; defaults to one tick after the previous one.
    pub at: Option<Timestamp>,
    pub action: serde_json::Value,
}

/// Kinds whose bodies carry no agreement hash.
const UNBOUND: [&str; 4] = ["SubmitRequest", "AcceptRequest", "RejectRequest", "ProposeAgreement"];

pub struct Body {
    pub body: ActionBody,
    pub explicit_hash: bool,
}

impl Step {
    pub fn body(&self) -> Result<Body> {
        let mut v = self.action.clone();
        let obj = v.as_object_mut().context("action must be a table")?;
        let kind = obj
            .get("kind")
            .and_then(|k| k.as_str())
            .context("action has no `kind`")?
            .to_string();
        let explicit_hash = obj.contains_key("agreement_hash");
        if !explicit_hash && !UNBOUND.contains(&kind.as_str()) {
            obj.insert("agreement_hash".into(), AgreementHash::ZERO.to_string().into());
        }
        let body = serde_json::from_value(v).with_context(|| format!("bad {kind} action"))?;
        Ok(Body { body, explicit_hash })
    }
}

pub fn load(path: &Path) -> Result<Script> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script: Script = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        Some("toml") => toml::from_str(&text)?,
        _ => bail!("script must be .toml or .json"),
    };
    if script.step.is_empty() {
        bail!("script has no steps");
    }
    Ok(script)
}
