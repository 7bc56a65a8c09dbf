//! Canonical agreement encoding.
//!
//! Byte layout, version 1. Every integer is big-endian. `str` is a `u32`
//! byte length followed by UTF-8 bytes. `opt<T>` is a `u8` presence flag
//! (0 or 1) followed by `T` when present. Enums are a single `u8` code.
//!
//! ```text
//! str   "ARS/agreement"
//! u8    1                                  format version
//! str   job_id
//! str   parties.human
//! opt   str parties.assistant
//! str   parties.business_agent
//! opt   str parties.underwriter
//! str   parties.evaluator
//! str   parties.settlement
//! str   task_spec
//! u8    assurance_mode       0 FeeOnly, 1 FundInvolving
//! i64   fee_terms.amount     minor units
//! u8    fee_terms.custody    0 Escrow
//! opt   { i64 amount, str destination }    principal_terms
//! u32   n                                  acceptance criteria entries
//! n x   { str key, str value }             sorted by key bytes
//! u64   deadlines.premium
//! u64   deadlines.delivery
//! u64   deadlines.claim
//! u64   deadlines.dispute
//! u8    premium_refund_policy  0 Refundable, 1 NonRefundable
//! i64   coverage_limit
//! u8    collateral_policy      0 SlashUpToLoss, 1 NoSlash
//! u8    override_allowed       0 or 1
//! ```
//!
//! The agreement hash is SHA-256 over these bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{
    AgreementError, AssuranceMode, CollateralPolicy, FeeCustody, PremiumRefundPolicy,
    StructuredAgreement,
};

const MAGIC: &str = "ARS/agreement";
const VERSION: u8 = 1;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AgreementHash(pub [u8; 32]);

impl AgreementHash {
    /// Placeholder subject for actions issued before any draft exists.
    pub const ZERO: AgreementHash = AgreementHash([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for AgreementHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgreementHash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for AgreementHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for AgreementHash {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(AgreementHash(out))
    }
}

impl Serialize for AgreementHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for AgreementHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub(crate) fn str(&mut self, s: &str) -> &mut Self {
        self.buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub(crate) fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub(crate) fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub(crate) fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub(crate) fn opt_str(&mut self, s: Option<&str>) -> &mut Self {
        match s {
            Some(s) => self.u8(1).str(s),
            None => self.u8(0),
        }
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Encodes a validated agreement in the canonical layout described above.
pub fn canonical_bytes(a: &StructuredAgreement) -> Result<Vec<u8>, AgreementError> {
    a.validate()?;
    let mut e = Encoder::default();
    e.str(MAGIC).u8(VERSION).str(a.job_id.as_str());

    let p = &a.parties;
    e.str(&p.human)
        .opt_str(p.assistant.as_deref())
        .str(&p.business_agent)
        .opt_str(p.underwriter.as_deref())
        .str(&p.evaluator)
        .str(&p.settlement);

    e.str(&a.task_spec);
    e.u8(match a.assurance_mode {
        AssuranceMode::FeeOnly => 0,
        AssuranceMode::FundInvolving => 1,
    });
    e.i64(a.fee_terms.amount.minor());
    e.u8(match a.fee_terms.custody {
        FeeCustody::Escrow => 0,
    });
    match &a.principal_terms {
        Some(pt) => {
            e.u8(1).i64(pt.amount.minor()).str(&pt.destination);
        }
        None => {
            e.u8(0);
        }
    }

    // BTreeMap<String, _> iterates in byte order of the keys.
    e.u32(a.acceptance_criteria.len() as u32);
    for (k, v) in &a.acceptance_criteria {
        e.str(k).str(v);
    }

    let d = &a.deadlines;
    e.u64(d.premium).u64(d.delivery).u64(d.claim).u64(d.dispute);
    e.u8(match a.premium_refund_policy {
        PremiumRefundPolicy::Refundable => 0,
        PremiumRefundPolicy::NonRefundable => 1,
    });
    e.i64(a.coverage_limit.minor());
    e.u8(match a.collateral_policy {
        CollateralPolicy::SlashUpToLoss => 0,
        CollateralPolicy::NoSlash => 1,
    });
    e.u8(a.override_allowed as u8);
    Ok(e.finish())
}

pub fn canonical_hash(a: &StructuredAgreement) -> Result<AgreementHash, AgreementError> {
    let bytes = canonical_bytes(a)?;
    Ok(AgreementHash(Sha256::digest(&bytes).into()))
}
