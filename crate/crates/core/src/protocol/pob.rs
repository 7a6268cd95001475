//! Per-user optimistic broadcast: one instance per (actor, sequence
//! number).
//!
//! The fast path is a single vote round: lock-gated votes, decide at a fast
//! quorum, then gossip a transferable proof and go quiet. A slow trigger at
//! `n - p - 2f` matching votes routes the transaction into its per-slot
//! agreement, independently of whether a decision already fell.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{aggregate, verify_proof, SignerId};
use crate::model::{
    ActorId, DecisionProof, ProofValue, Transaction, TxId, ValidatorId, Vote, VoteScope,
};
use crate::protocol::messages::{Message, UaVote};
use crate::protocol::{DecidePath, ProtoCtx};

#[derive(Debug, Clone)]
pub enum PobOut {
    /// Send to the same user's entity at every validator.
    Broadcast(Message),
    /// The slow trigger fired for this transaction: try to slow-path lock
    /// it and propose the locked value to the per-slot agreement.
    SlowTrigger(Transaction),
    Decide(Transaction, DecidePath),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PobInstance {
    actor: ActorId,
    sn: u64,
    /// First vote per voter wins; equivocations are ignored.
    voters_seen: BTreeSet<ValidatorId>,
    /// Tally per endorsed transaction (negative votes tallied separately).
    tallies: BTreeMap<TxId, Vec<UaVote>>,
    bot_votes: u32,
    decided: Option<TxId>,
    proof_gossiped: bool,
    slow_triggered: bool,
}

impl PobInstance {
    pub fn new(actor: ActorId, sn: u64) -> Self {
        PobInstance {
            actor,
            sn,
            voters_seen: BTreeSet::new(),
            tallies: BTreeMap::new(),
            bot_votes: 0,
            decided: None,
            proof_gossiped: false,
            slow_triggered: false,
        }
    }

    pub fn scope(&self) -> VoteScope {
        VoteScope::Pob { actor: self.actor.clone(), sn: self.sn }
    }

    pub fn is_decided(&self) -> bool {
        self.decided.is_some()
    }

    /// A transaction for this slot was delivered; the entity already ran the
    /// fast-path lock and reports whether it holds for this transaction.
    pub fn on_tx(&mut self, tx: &Transaction, lock_ok: bool, ctx: &ProtoCtx) -> Vec<PobOut> {
        if self.decided.is_some() {
            return vec![];
        }
        let value = if lock_ok { Some(tx.clone()) } else { None };
        let scope = self.scope();
        let digest = value.as_ref().map(|t| t.tx_id().0);
        let signature = ctx.my_key.sign(&Vote::signing_bytes(&scope, &digest));
        vec![PobOut::Broadcast(Message::UaVote(UaVote {
            actor: self.actor.clone(),
            sn: self.sn,
            value,
            voter: ctx.me,
            signature,
        }))]
    }

    pub fn on_vote(&mut self, vote: &UaVote, ctx: &ProtoCtx) -> Vec<PobOut> {
        let scope = self.scope();
        let digest = vote.value.as_ref().map(|t| t.tx_id().0);
        let bytes = Vote::signing_bytes(&scope, &digest);
        if !ctx.keys.verify(&SignerId::Validator(vote.voter), &bytes, &vote.signature) {
            return vec![];
        }
        if !self.voters_seen.insert(vote.voter) {
            return vec![];
        }
        let mut out = Vec::new();
        match &vote.value {
            None => self.bot_votes += 1,
            Some(tx) => {
                let entry = self.tallies.entry(tx.tx_id()).or_default();
                entry.push(vote.clone());
                let count = entry.len() as u32;
                if count >= ctx.quorums.fast && self.decided.is_none() {
                    let votes: Vec<Vote> = entry
                        .iter()
                        .map(|v| Vote {
                            scope: scope.clone(),
                            value: digest,
                            voter: v.voter,
                            signature: v.signature.clone(),
                        })
                        .collect();
                    let proof =
                        aggregate(&votes, ProofValue::Tx(tx.clone()), ctx.quorums, ctx.keys)
                            .expect("fast quorum of verified votes aggregates");
                    self.decided = Some(tx.tx_id());
                    if !self.proof_gossiped {
                        self.proof_gossiped = true;
                        out.push(PobOut::Broadcast(Message::UaProof(proof)));
                    }
                    out.push(PobOut::Decide(tx.clone(), DecidePath::Fast));
                }
                if count >= ctx.quorums.slow_trigger && !self.slow_triggered {
                    self.slow_triggered = true;
                    out.push(PobOut::SlowTrigger(tx.clone()));
                }
            }
        }
        out
    }

    pub fn on_proof(&mut self, proof: &DecisionProof, ctx: &ProtoCtx) -> Vec<PobOut> {
        if proof.scope != self.scope() || !verify_proof(proof, ctx.quorums, ctx.keys) {
            return vec![];
        }
        let ProofValue::Tx(tx) = &proof.value else { return vec![] };
        let mut out = Vec::new();
        if !self.proof_gossiped {
            self.proof_gossiped = true;
            out.push(PobOut::Broadcast(Message::UaProof(proof.clone())));
        }
        if self.decided.is_none() {
            self.decided = Some(tx.tx_id());
            out.push(PobOut::Decide(tx.clone(), DecidePath::Proof));
        }
        out
    }

    /// The per-slot agreement decided; adopt its value if still undecided.
    pub fn on_ta_decided(&mut self, tx: &Transaction) -> Vec<PobOut> {
        if self.decided.is_some() {
            return vec![];
        }
        self.decided = Some(tx.tx_id());
        vec![PobOut::Decide(tx.clone(), DecidePath::Slow)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyPair, KeyStore};
    use crate::model::{sha256, SystemParams, TxBody};

    fn setup(n: u32) -> (SystemParams, crate::model::Quorums, KeyStore, Vec<KeyPair>) {
        let params = SystemParams { n, f: 1, p: 1, delta_bound: 100, gst: 0 };
        let quorums = params.quorums().unwrap();
        let mut keys = KeyStore::default();
        let pairs: Vec<KeyPair> = (0..n)
            .map(|i| KeyPair::new(SignerId::Validator(i), sha256(&[i as u8])))
            .collect();
        for k in &pairs {
            keys.register(k);
        }
        (params, quorums, keys, pairs)
    }

    fn ctx<'a>(
        me: ValidatorId,
        params: &'a SystemParams,
        quorums: &'a crate::model::Quorums,
        keys: &'a KeyStore,
        pairs: &'a [KeyPair],
    ) -> ProtoCtx<'a> {
        ProtoCtx { me, params, quorums, keys, my_key: &pairs[me as usize] }
    }

    fn tx(sn: u64, marker: u64) -> Transaction {
        Transaction::new(TxBody::Ua {
            sender: ActorId::user("alice"),
            sn,
            consumed: vec![crate::model::OwnedObject::coin(format!("c{marker}"), marker, ActorId::user("alice"))],
            code: vec![],
        })
    }

    fn vote_from(
        voter: ValidatorId,
        value: Option<Transaction>,
        pairs: &[KeyPair],
    ) -> UaVote {
        let scope = VoteScope::Pob { actor: ActorId::user("alice"), sn: 0 };
        let digest = value.as_ref().map(|t| t.tx_id().0);
        UaVote {
            actor: ActorId::user("alice"),
            sn: 0,
            value,
            voter,
            signature: pairs[voter as usize].sign(&Vote::signing_bytes(&scope, &digest)),
        }
    }

    #[test]
    fn first_delivery_votes_for_tx_conflict_votes_bot() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        let out = inst.on_tx(&t, true, &c);
        assert!(matches!(
            &out[..],
            [PobOut::Broadcast(Message::UaVote(UaVote { value: Some(_), .. }))]
        ));
        // Conflicting transaction after the lock: explicit negative vote.
        let out = inst.on_tx(&tx(0, 2), false, &c);
        assert!(matches!(
            &out[..],
            [PobOut::Broadcast(Message::UaVote(UaVote { value: None, .. }))]
        ));
    }

    #[test]
    fn fast_decide_at_fast_quorum_and_proof_gossip() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        let mut decided = None;
        let mut proof_broadcasts = 0;
        let mut slow = 0;
        for voter in 0..5 {
            for out in inst.on_vote(&vote_from(voter, Some(t.clone()), &pairs), &c) {
                match out {
                    PobOut::Decide(tx, path) => decided = Some((tx, path)),
                    PobOut::Broadcast(Message::UaProof(_)) => proof_broadcasts += 1,
                    PobOut::SlowTrigger(_) => slow += 1,
                    _ => {}
                }
            }
        }
        let (dtx, path) = decided.expect("fast quorum decides");
        assert_eq!(dtx.tx_id(), t.tx_id());
        assert_eq!(path, DecidePath::Fast);
        assert_eq!(proof_broadcasts, 1);
        // Slow trigger fired independently at n - p - 2f = 3 votes.
        assert_eq!(slow, 1);
    }

    #[test]
    fn four_votes_do_not_decide() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        for voter in 0..4 {
            for out in inst.on_vote(&vote_from(voter, Some(t.clone()), &pairs), &c) {
                assert!(!matches!(out, PobOut::Decide(..)));
            }
        }
        assert!(!inst.is_decided());
    }

    #[test]
    fn equivocating_voter_counts_once() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t1 = tx(0, 1);
        let t2 = tx(0, 2);
        assert!(inst.on_vote(&vote_from(3, Some(t1.clone()), &pairs), &c).is_empty());
        // Same voter, different value: ignored.
        assert!(inst.on_vote(&vote_from(3, Some(t2), &pairs), &c).is_empty());
        assert_eq!(inst.tallies.get(&t1.tx_id()).map(Vec::len), Some(1));
    }

    #[test]
    fn forged_vote_rejected() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        let mut v = vote_from(2, Some(t), &pairs);
        v.signature = pairs[0].sign(b"junk");
        assert!(inst.on_vote(&v, &c).is_empty());
        assert!(inst.voters_seen.is_empty());
    }

    #[test]
    fn ta_decision_decides_once() {
        let (params, quorums, keys, pairs) = setup(6);
        let c = ctx(0, &params, &quorums, &keys, &pairs);
        let mut inst = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        let out = inst.on_ta_decided(&t);
        assert!(matches!(&out[..], [PobOut::Decide(_, DecidePath::Slow)]));
        assert!(inst.on_ta_decided(&t).is_empty());
        // Later fast quorum no longer re-decides.
        for voter in 0..5 {
            for out in inst.on_vote(&vote_from(voter, Some(t.clone()), &pairs), &c) {
                assert!(!matches!(out, PobOut::Decide(..)));
            }
        }
    }

    #[test]
    fn proof_regossips_once_then_goes_quiet() {
        let (params, quorums, keys, pairs) = setup(6);
        let c0 = ctx(0, &params, &quorums, &keys, &pairs);
        let mut source = PobInstance::new(ActorId::user("alice"), 0);
        let t = tx(0, 1);
        let mut proof = None;
        for voter in 0..5 {
            for out in source.on_vote(&vote_from(voter, Some(t.clone()), &pairs), &c0) {
                if let PobOut::Broadcast(Message::UaProof(p)) = out {
                    proof = Some(p);
                }
            }
        }
        let proof = proof.unwrap();
        let c5 = ctx(5, &params, &quorums, &keys, &pairs);
        let mut other = PobInstance::new(ActorId::user("alice"), 0);
        let out = other.on_proof(&proof, &c5);
        assert_eq!(out.len(), 2); // one re-gossip + one decide
        let out = other.on_proof(&proof, &c5);
        assert!(out.is_empty());
    }
}
