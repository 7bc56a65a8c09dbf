//! Keyed authenticators standing in for party signatures.
//!
//! A token is HMAC-SHA256 under the signer's secret over the canonical
//! subject `(signer, job_id, agreement_hash, action kind)`.

use std::collections::BTreeMap;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::canonical::Encoder;
use super::{AgreementHash, JobId, PartyId};
use crate::lifecycle::ActionKind;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureToken {
    pub signer: PartyId,
    pub job_id: JobId,
    pub agreement_hash: AgreementHash,
    pub kind: ActionKind,
    /// Hex-encoded authenticator.
    pub tag: String,
}

impl SignatureToken {
    fn subject_bytes(
        signer: &PartyId,
        job_id: &JobId,
        hash: &AgreementHash,
        kind: ActionKind,
    ) -> Vec<u8> {
        let mut e = Encoder::default();
        e.str("ARS/signature")
            .str(&signer.id)
            .u8(signer.role.code())
            .str(job_id.as_str())
            .raw(&hash.0)
            .str(kind.name());
        e.finish()
    }
}

/// Per-party secret keys. Held by whoever plays the parties (tests, the
/// simulator, the CLI) and by the verifier.
#[derive(Clone, Debug, Default)]
pub struct Keyring {
    keys: BTreeMap<String, Vec<u8>>,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    /// Derives a key for each id as `SHA-256(secret || 0x00 || id)`.
    pub fn derived<'a>(secret: &str, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ring = Keyring::new();
        for id in ids {
            ring.insert(id, derive_key(secret, id));
        }
        ring
    }

    pub fn insert(&mut self, party_id: impl Into<String>, key: Vec<u8>) {
        self.keys.insert(party_id.into(), key);
    }

    pub fn contains(&self, party_id: &str) -> bool {
        self.keys.contains_key(party_id)
    }

    fn mac(&self, signer: &PartyId) -> Option<HmacSha256> {
        let key = self.keys.get(&signer.id)?;
        Some(HmacSha256::new_from_slice(key).expect("hmac accepts any key length"))
    }

    pub fn sign(
        &self,
        signer: &PartyId,
        job_id: &JobId,
        hash: &AgreementHash,
        kind: ActionKind,
    ) -> Option<SignatureToken> {
        let mut mac = self.mac(signer)?;
        mac.update(&SignatureToken::subject_bytes(signer, job_id, hash, kind));
        Some(SignatureToken {
            signer: signer.clone(),
            job_id: job_id.clone(),
            agreement_hash: *hash,
            kind,
            tag: hex::encode(mac.finalize().into_bytes()),
        })
    }

    /// True iff the token's subject is `(job_id, hash)` and its tag
    /// authenticates the named signer.
    pub fn verify_signature(
        &self,
        token: &SignatureToken,
        job_id: &JobId,
        hash: &AgreementHash,
    ) -> bool {
        if &token.job_id != job_id || &token.agreement_hash != hash {
            return false;
        }
        let Ok(tag) = hex::decode(&token.tag) else {
            return false;
        };
        let Some(mut mac) = self.mac(&token.signer) else {
            return false;
        };
        mac.update(&SignatureToken::subject_bytes(
            &token.signer,
            &token.job_id,
            &token.agreement_hash,
            token.kind,
        ));
        mac.verify_slice(&tag).is_ok()
    }
}

pub(crate) fn derive_key(secret: &str, id: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(secret.as_bytes());
    h.update([0u8]);
    h.update(id.as_bytes());
    h.finalize().to_vec()
}
