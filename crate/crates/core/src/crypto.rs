//! Simulated signatures and vote aggregation.
//!
//! A signature is a keyed hash of the message under the signer's secret
//! seed. That is enough for the simulator's threat model: Byzantine code
//! never gets a handle to an honest seed, so it cannot produce a verifying
//! signature for an honest identity. The interface mirrors a real scheme so
//! one could be swapped in.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sha256, DecisionProof, ProofValue, Quorums, Vote};

/// Public identity of a signer: a validator slot or a user key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignerId {
    Validator(u32),
    User(String),
}

impl fmt::Display for SignerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignerId::Validator(v) => write!(f, "v{v}"),
            SignerId::User(u) => write!(f, "u:{u}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub signer: SignerId,
    pub mac: [u8; 32],
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub id: SignerId,
    seed: [u8; 32],
}

impl KeyPair {
    pub fn new(id: SignerId, seed: [u8; 32]) -> Self {
        KeyPair { id, seed }
    }

    /// Derives a keypair deterministically from arbitrary seed material.
    pub fn from_seed_material(domain: &[u8], material: &[u8]) -> Self {
        let mut bytes = Vec::with_capacity(domain.len() + material.len() + 1);
        bytes.extend_from_slice(domain);
        bytes.push(0x1f);
        bytes.extend_from_slice(material);
        let seed = sha256(&bytes);
        let id = SignerId::User(String::from_utf8_lossy(material).into_owned());
        KeyPair { id, seed }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature { signer: self.id.clone(), mac: mac_bytes(&self.seed, msg) }
    }
}

fn mac_bytes(seed: &[u8; 32], msg: &[u8]) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(seed.len() + msg.len());
    bytes.extend_from_slice(seed);
    bytes.extend_from_slice(msg);
    sha256(&bytes)
}

/// Registry of public identities to seeds, used by verifiers to recompute
/// MACs. Shared read-only by the whole simulation.
#[derive(Debug, Clone, Default)]
pub struct KeyStore {
    seeds: BTreeMap<SignerId, [u8; 32]>,
}

impl KeyStore {
    pub fn register(&mut self, key: &KeyPair) {
        self.seeds.insert(key.id.clone(), key.seed);
    }

    pub fn verify(&self, signer: &SignerId, msg: &[u8], sig: &Signature) -> bool {
        if sig.signer != *signer {
            return false;
        }
        match self.seeds.get(signer) {
            Some(seed) => mac_bytes(seed, msg) == sig.mac,
            None => false,
        }
    }

    pub fn keypair(&self, signer: &SignerId) -> Option<KeyPair> {
        self.seeds.get(signer).map(|seed| KeyPair { id: signer.clone(), seed: *seed })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("need {needed} distinct valid votes, have {got}")]
    BelowThreshold { needed: u32, got: u32 },
    #[error("votes disagree on scope or value")]
    Mixed,
    #[error("duplicate voter {0}")]
    DuplicateVoter(u32),
    #[error("invalid signature from voter {0}")]
    BadSignature(u32),
}

/// Builds a fast-decision proof from at least a fast quorum of distinct
/// valid votes for one value.
pub fn aggregate(
    votes: &[Vote],
    value: ProofValue,
    quorums: &Quorums,
    keys: &KeyStore,
) -> Result<DecisionProof, AggregateError> {
    let scope = match votes.first() {
        Some(v) => v.scope.clone(),
        None => return Err(AggregateError::BelowThreshold { needed: quorums.fast, got: 0 }),
    };
    let digest = value.digest();
    let mut seen = std::collections::BTreeSet::new();
    for vote in votes {
        if vote.scope != scope || vote.value != Some(digest) {
            return Err(AggregateError::Mixed);
        }
        if !seen.insert(vote.voter) {
            return Err(AggregateError::DuplicateVoter(vote.voter));
        }
        let bytes = Vote::signing_bytes(&vote.scope, &vote.value);
        if !keys.verify(&SignerId::Validator(vote.voter), &bytes, &vote.signature) {
            return Err(AggregateError::BadSignature(vote.voter));
        }
    }
    if (seen.len() as u32) < quorums.fast {
        return Err(AggregateError::BelowThreshold { needed: quorums.fast, got: seen.len() as u32 });
    }
    Ok(DecisionProof { scope, value, votes: votes.to_vec() })
}

/// Recomputes signatures, voter distinctness and the fast-quorum count.
pub fn verify_proof(proof: &DecisionProof, quorums: &Quorums, keys: &KeyStore) -> bool {
    let digest = proof.value.digest();
    let mut seen = std::collections::BTreeSet::new();
    for vote in &proof.votes {
        if vote.scope != proof.scope || vote.value != Some(digest) {
            return false;
        }
        if !seen.insert(vote.voter) {
            return false;
        }
        let bytes = Vote::signing_bytes(&vote.scope, &vote.value);
        if !keys.verify(&SignerId::Validator(vote.voter), &bytes, &vote.signature) {
            return false;
        }
    }
    seen.len() as u32 >= quorums.fast
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActorId, SystemParams, Transaction, TxBody, VoteScope};

    fn keystore(n: u32) -> (KeyStore, Vec<KeyPair>) {
        let mut store = KeyStore::default();
        let keys: Vec<KeyPair> = (0..n)
            .map(|i| KeyPair::new(SignerId::Validator(i), sha256(&i.to_be_bytes())))
            .collect();
        for k in &keys {
            store.register(k);
        }
        (store, keys)
    }

    fn sample_tx() -> Transaction {
        Transaction::new(TxBody::Ua {
            sender: ActorId::user("alice"),
            sn: 0,
            consumed: vec![],
            code: vec![],
        })
    }

    fn vote_for(tx: &Transaction, key: &KeyPair, voter: u32) -> Vote {
        let scope = VoteScope::Pob { actor: ActorId::user("alice"), sn: 0 };
        let value = Some(tx.tx_id().0);
        let bytes = Vote::signing_bytes(&scope, &value);
        Vote { scope, value, voter, signature: key.sign(&bytes) }
    }

    #[test]
    fn sign_verify_roundtrip() {
        let (store, keys) = keystore(1);
        let sig = keys[0].sign(b"hello");
        assert!(store.verify(&keys[0].id, b"hello", &sig));
        assert!(!store.verify(&keys[0].id, b"hullo", &sig));
    }

    #[test]
    fn signature_bound_to_signer() {
        let (store, keys) = keystore(2);
        let sig = keys[0].sign(b"msg");
        assert!(!store.verify(&keys[1].id, b"msg", &sig));
    }

    #[test]
    fn signing_is_deterministic() {
        let (_, keys) = keystore(1);
        assert_eq!(keys[0].sign(b"m"), keys[0].sign(b"m"));
    }

    #[test]
    fn aggregate_fast_quorum() {
        let params = SystemParams { n: 6, f: 1, p: 1, delta_bound: 1, gst: 0 };
        let q = params.quorums().unwrap();
        let (store, keys) = keystore(6);
        let tx = sample_tx();
        let votes: Vec<Vote> = (0..5).map(|i| vote_for(&tx, &keys[i as usize], i)).collect();
        let proof = aggregate(&votes, ProofValue::Tx(tx), &q, &store).unwrap();
        assert!(verify_proof(&proof, &q, &store));
    }

    #[test]
    fn aggregate_rejects_below_threshold() {
        let params = SystemParams { n: 6, f: 1, p: 1, delta_bound: 1, gst: 0 };
        let q = params.quorums().unwrap();
        let (store, keys) = keystore(6);
        let tx = sample_tx();
        let votes: Vec<Vote> = (0..4).map(|i| vote_for(&tx, &keys[i as usize], i)).collect();
        assert_eq!(
            aggregate(&votes, ProofValue::Tx(tx), &q, &store),
            Err(AggregateError::BelowThreshold { needed: 5, got: 4 })
        );
    }

    #[test]
    fn aggregate_rejects_duplicate_voter() {
        // Oracle check: five votes where two share a voter id must not count
        // as a fast quorum even though the raw count reads five.
        let params = SystemParams { n: 6, f: 1, p: 1, delta_bound: 1, gst: 0 };
        let q = params.quorums().unwrap();
        let (store, keys) = keystore(6);
        let tx = sample_tx();
        let mut votes: Vec<Vote> = (0..4).map(|i| vote_for(&tx, &keys[i as usize], i)).collect();
        votes.push(vote_for(&tx, &keys[3], 3));
        assert_eq!(
            aggregate(&votes, ProofValue::Tx(tx), &q, &store),
            Err(AggregateError::DuplicateVoter(3))
        );
    }

    #[test]
    fn proof_with_forged_signature_rejected() {
        let params = SystemParams { n: 6, f: 1, p: 1, delta_bound: 1, gst: 0 };
        let q = params.quorums().unwrap();
        let (store, keys) = keystore(6);
        let tx = sample_tx();
        let mut votes: Vec<Vote> = (0..5).map(|i| vote_for(&tx, &keys[i as usize], i)).collect();
        // Voter 4's endorsement forged by voter 0's key.
        votes[4].signature = keys[0].sign(&Vote::signing_bytes(&votes[4].scope, &votes[4].value));
        let proof = DecisionProof {
            scope: votes[0].scope.clone(),
            value: ProofValue::Tx(tx),
            votes,
        };
        assert!(!verify_proof(&proof, &q, &store));
    }
}
