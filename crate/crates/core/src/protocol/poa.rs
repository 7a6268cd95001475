//! Block agreement for one reactive actor instance.
//!
//! Fast path: the instance leader proposes its pool, validators vote after
//! fast-path locks clear, and a fast quorum of matching votes decides in
//! one round. Failing that, a round timer expires, validators exchange
//! negative votes and fallback blocks, slow-path locks gate a proposal into
//! quorum consensus, and each user transaction of the consensus block runs
//! through its per-slot agreement before the final decision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{aggregate, verify_proof, Signature, SignerId};
use crate::model::{
    ActorId, Block, BlockHash, DecisionProof, ProofValue, Transaction, TxId, ValidatorId, Vote,
    VoteScope,
};
use crate::protocol::messages::{poa_proposal_bytes, Message, PoaProposal, PoaVoteMsg};
use crate::protocol::{DecidePath, ProtoCtx};

#[derive(Debug, Clone)]
pub enum PoaOut {
    /// To this actor's entity at every validator.
    Broadcast(Message),
    /// Inner-link fast-path lock request to the transaction sender's entity.
    FpLockReq(Transaction),
    /// Inner-link slow-path lock request (phase 1 = voted candidate,
    /// phase 2 = fallback-derived candidate).
    SpLockReq { phase: u8, tx: Transaction },
    /// Inner-link request to run a consensus-decided user transaction
    /// through its per-slot agreement.
    UaInitiate(Transaction),
    /// Propose to this instance's quorum consensus.
    QcPropose(Block),
    /// Arm the round timer (3 delta).
    StartRoundTimer,
    Decide(Block, DecidePath),
}

pub type Pool = BTreeMap<TxId, Transaction>;

fn pool_block(instance: u64, pool: &Pool) -> Block {
    Block::new(instance, pool.values().cloned())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoaInstance {
    actor: ActorId,
    instance: u64,
    leader: ValidatorId,
    active: bool,
    timer_expired: bool,
    /// Leader proposal, first valid one wins.
    block: Option<Block>,
    fp_phase_started: bool,
    fp_pending: BTreeSet<TxId>,
    fp_fail: bool,
    voted: bool,
    /// First vote per voter.
    votes: BTreeMap<ValidatorId, Option<BlockHash>>,
    vote_sigs: BTreeMap<BlockHash, Vec<(ValidatorId, Signature)>>,
    vote_blocks: BTreeMap<BlockHash, Block>,
    fallbacks: BTreeMap<ValidatorId, Block>,
    slow_triggered: bool,
    sp_candidate: Option<Block>,
    sp_pending: BTreeSet<TxId>,
    sp_fail: bool,
    fallback_phase: bool,
    sp2_candidate: Option<Block>,
    sp2_pending: BTreeSet<TxId>,
    sp2_locked: BTreeSet<TxId>,
    qc_proposed: bool,
    qc_block: Option<Block>,
    ta_pending: BTreeSet<TxId>,
    ta_failed: BTreeSet<TxId>,
    decided: Option<BlockHash>,
    proof_gossiped: bool,
}

impl PoaInstance {
    pub fn new(actor: ActorId, instance: u64, leader: ValidatorId) -> Self {
        PoaInstance {
            actor,
            instance,
            leader,
            active: false,
            timer_expired: false,
            block: None,
            fp_phase_started: false,
            fp_pending: BTreeSet::new(),
            fp_fail: false,
            voted: false,
            votes: BTreeMap::new(),
            vote_sigs: BTreeMap::new(),
            vote_blocks: BTreeMap::new(),
            fallbacks: BTreeMap::new(),
            slow_triggered: false,
            sp_candidate: None,
            sp_pending: BTreeSet::new(),
            sp_fail: false,
            fallback_phase: false,
            sp2_candidate: None,
            sp2_pending: BTreeSet::new(),
            sp2_locked: BTreeSet::new(),
            qc_proposed: false,
            qc_block: None,
            ta_pending: BTreeSet::new(),
            ta_failed: BTreeSet::new(),
            decided: None,
            proof_gossiped: false,
        }
    }

    pub fn scope(&self) -> VoteScope {
        VoteScope::Poa { actor: self.actor.clone(), instance: self.instance }
    }

    pub fn leader(&self) -> ValidatorId {
        self.leader
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_decided(&self) -> bool {
        self.decided.is_some()
    }

    pub fn qc_was_proposed(&self) -> bool {
        self.qc_proposed
    }

    /// Starts the instance: restart the round timer, and as leader propose
    /// the current pool (an empty proposal is legal).
    pub fn activate(&mut self, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if self.active {
            return vec![];
        }
        self.active = true;
        let mut out = vec![PoaOut::StartRoundTimer];
        if self.leader == ctx.me {
            let block = pool_block(self.instance, pool);
            let signature = ctx.my_key.sign(&poa_proposal_bytes(&self.scope(), &block));
            out.push(PoaOut::Broadcast(Message::PoaProposal(PoaProposal {
                actor: self.actor.clone(),
                instance: self.instance,
                block,
                proposer: ctx.me,
                signature,
            })));
        }
        out.extend(self.try_fp_phase(pool, ctx));
        out
    }

    pub fn on_proposal(&mut self, msg: &PoaProposal, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if msg.proposer != self.leader || self.block.is_some() {
            return vec![];
        }
        let bytes = poa_proposal_bytes(&self.scope(), &msg.block);
        if !ctx.keys.verify(&SignerId::Validator(msg.proposer), &bytes, &msg.signature) {
            return vec![];
        }
        if msg.block.instance != self.instance {
            return vec![];
        }
        self.block = Some(msg.block.clone());
        self.try_fp_phase(pool, ctx)
    }

    /// Re-evaluates the fast-vote gate; called when the proposal lands and
    /// whenever the pool changes (a proposal may reference reactive-actor
    /// transactions this validator has not emitted yet).
    pub fn poll_pool(&mut self, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        self.try_fp_phase(pool, ctx)
    }

    fn try_fp_phase(&mut self, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if !self.active
            || self.fp_phase_started
            || self.voted
            || self.timer_expired
            || self.decided.is_some()
        {
            return vec![];
        }
        let Some(block) = &self.block else { return vec![] };
        // Every locally emitted transaction of the proposal must already be
        // in our own pool; otherwise wait (the round timer bounds the wait).
        if block.txs().iter().any(|tx| tx.is_ra_ra() && !pool.contains_key(&tx.tx_id())) {
            return vec![];
        }
        self.fp_phase_started = true;
        let mut out = Vec::new();
        for tx in block.txs() {
            if tx.is_ua_ra() {
                self.fp_pending.insert(tx.tx_id());
                out.push(PoaOut::FpLockReq(tx.clone()));
            }
        }
        if self.fp_pending.is_empty() {
            out.extend(self.cast_vote(pool, ctx));
        }
        out
    }

    pub fn on_fp_reply(&mut self, tx_id: TxId, ok: bool, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        // Replies landing after the vote went out are discarded.
        if self.voted || !self.fp_pending.remove(&tx_id) {
            return vec![];
        }
        self.fp_fail |= !ok;
        if self.fp_pending.is_empty() {
            return self.cast_vote(pool, ctx);
        }
        vec![]
    }

    fn cast_vote(&mut self, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if self.voted {
            return vec![];
        }
        self.voted = true;
        let vote = if self.fp_fail { None } else { self.block.clone() };
        let scope = self.scope();
        let digest = vote.as_ref().map(|b| b.hash().0);
        let signature = ctx.my_key.sign(&Vote::signing_bytes(&scope, &digest));
        vec![PoaOut::Broadcast(Message::PoaVote(PoaVoteMsg {
            actor: self.actor.clone(),
            instance: self.instance,
            vote,
            fallback: pool_block(self.instance, pool),
            voter: ctx.me,
            signature,
        }))]
    }

    pub fn on_round_timer(&mut self, pool: &Pool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if self.timer_expired || !self.active {
            return vec![];
        }
        self.timer_expired = true;
        let mut out = Vec::new();
        if !self.voted && self.decided.is_none() {
            // No complete fast round in time: vote negative, but still ship
            // the fallback block so the slow path has material.
            self.fp_fail = true;
            out.extend(self.cast_vote(pool, ctx));
        }
        out.extend(self.check_slow_trigger(ctx));
        out
    }

    pub fn on_vote(&mut self, msg: &PoaVoteMsg, ctx: &ProtoCtx) -> Vec<PoaOut> {
        let scope = self.scope();
        let digest = msg.vote.as_ref().map(|b| b.hash().0);
        let bytes = Vote::signing_bytes(&scope, &digest);
        if !ctx.keys.verify(&SignerId::Validator(msg.voter), &bytes, &msg.signature) {
            return vec![];
        }
        if self.votes.contains_key(&msg.voter) {
            return vec![];
        }
        if let Some(b) = &msg.vote {
            if b.instance != self.instance {
                return vec![];
            }
        }
        if msg.fallback.instance != self.instance {
            return vec![];
        }
        let hash = msg.vote.as_ref().map(|b| b.hash());
        self.votes.insert(msg.voter, hash);
        self.fallbacks.insert(msg.voter, msg.fallback.clone());
        let mut out = Vec::new();
        if let (Some(h), Some(b)) = (hash, &msg.vote) {
            self.vote_blocks.insert(h, b.clone());
            self.vote_sigs.entry(h).or_default().push((msg.voter, msg.signature.clone()));
            let count = self.vote_sigs.get(&h).map(|v| v.len() as u32).unwrap_or(0);
            if count >= ctx.quorums.fast && self.decided.is_none() {
                out.extend(self.fast_decide(h, ctx));
            }
        }
        out.extend(self.check_slow_trigger(ctx));
        out
    }

    fn fast_decide(&mut self, hash: BlockHash, ctx: &ProtoCtx) -> Vec<PoaOut> {
        let block = self.vote_blocks.get(&hash).expect("voted block recorded").clone();
        let scope = self.scope();
        let votes: Vec<Vote> = self
            .vote_sigs
            .get(&hash)
            .expect("sigs recorded")
            .iter()
            .map(|(voter, signature)| Vote {
                scope: scope.clone(),
                value: Some(hash.0),
                voter: *voter,
                signature: signature.clone(),
            })
            .collect();
        let proof = aggregate(&votes, ProofValue::Block(block.clone()), ctx.quorums, ctx.keys)
            .expect("fast quorum of verified votes aggregates");
        self.decided = Some(hash);
        let mut out = Vec::new();
        if !self.proof_gossiped {
            self.proof_gossiped = true;
            out.push(PoaOut::Broadcast(Message::PoaProof(proof)));
        }
        out.push(PoaOut::Decide(block, DecidePath::Fast));
        out
    }

    pub fn on_proof(&mut self, proof: &DecisionProof, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if proof.scope != self.scope() || !verify_proof(proof, ctx.quorums, ctx.keys) {
            return vec![];
        }
        let ProofValue::Block(block) = &proof.value else { return vec![] };
        let mut out = Vec::new();
        if !self.proof_gossiped {
            self.proof_gossiped = true;
            out.push(PoaOut::Broadcast(Message::PoaProof(proof.clone())));
        }
        if self.decided.is_none() {
            self.decided = Some(block.hash());
            out.push(PoaOut::Decide(block.clone(), DecidePath::Proof));
        }
        out
    }

    fn check_slow_trigger(&mut self, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if self.decided.is_some()
            || self.slow_triggered
            || !self.timer_expired
            || (self.votes.len() as u32) < ctx.quorums.round_votes
        {
            return vec![];
        }
        self.slow_triggered = true;
        // Strongest non-negative candidate, if any cleared the slow trigger
        // threshold. Ties break on the lower hash.
        let mut best: Option<(u32, BlockHash)> = None;
        for (hash, sigs) in &self.vote_sigs {
            let count = sigs.len() as u32;
            if count < ctx.quorums.slow_trigger {
                continue;
            }
            let better = match best {
                None => true,
                Some((c, h)) => count > c || (count == c && *hash < h),
            };
            if better {
                best = Some((count, *hash));
            }
        }
        match best {
            Some((_, hash)) => {
                let candidate = self.vote_blocks.get(&hash).expect("recorded").clone();
                self.sp_candidate = Some(candidate.clone());
                let mut out = Vec::new();
                for tx in candidate.txs() {
                    if tx.is_ua_ra() {
                        self.sp_pending.insert(tx.tx_id());
                        out.push(PoaOut::SpLockReq { phase: 1, tx: tx.clone() });
                    }
                }
                if self.sp_pending.is_empty() {
                    out.extend(self.propose_candidate(candidate));
                }
                out
            }
            None => self.start_fallback_phase(ctx),
        }
    }

    fn propose_candidate(&mut self, block: Block) -> Vec<PoaOut> {
        if self.qc_proposed {
            return vec![];
        }
        self.qc_proposed = true;
        vec![PoaOut::QcPropose(block)]
    }

    fn start_fallback_phase(&mut self, ctx: &ProtoCtx) -> Vec<PoaOut> {
        if self.fallback_phase {
            return vec![];
        }
        self.fallback_phase = true;
        // Transactions present in enough fallback blocks are safe to carry.
        let mut counts: BTreeMap<TxId, (u32, Transaction)> = BTreeMap::new();
        for fb in self.fallbacks.values() {
            for tx in fb.txs() {
                let e = counts.entry(tx.tx_id()).or_insert_with(|| (0, tx.clone()));
                e.0 += 1;
            }
        }
        let carried: Vec<Transaction> = counts
            .values()
            .filter(|(c, _)| *c >= ctx.quorums.fallback)
            .map(|(_, tx)| tx.clone())
            .collect();
        let candidate = Block::new(self.instance, carried);
        self.sp2_candidate = Some(candidate.clone());
        let mut out = Vec::new();
        for tx in candidate.txs() {
            if tx.is_ua_ra() {
                self.sp2_pending.insert(tx.tx_id());
                out.push(PoaOut::SpLockReq { phase: 2, tx: tx.clone() });
            }
        }
        if self.sp2_pending.is_empty() {
            out.extend(self.propose_fallback());
        }
        out
    }

    fn propose_fallback(&mut self) -> Vec<PoaOut> {
        let candidate = self.sp2_candidate.clone().expect("fallback candidate set");
        let txs: Vec<Transaction> = candidate
            .txs()
            .iter()
            .filter(|tx| tx.is_ra_ra() || self.sp2_locked.contains(&tx.tx_id()))
            .cloned()
            .collect();
        self.propose_candidate(Block::new(self.instance, txs))
    }

    pub fn on_sp_reply(&mut self, phase: u8, tx_id: TxId, ok: bool, ctx: &ProtoCtx) -> Vec<PoaOut> {
        match phase {
            1 => {
                if !self.sp_pending.remove(&tx_id) {
                    return vec![];
                }
                self.sp_fail |= !ok;
                if !self.sp_pending.is_empty() {
                    return vec![];
                }
                if self.sp_fail {
                    self.start_fallback_phase(ctx)
                } else {
                    let candidate = self.sp_candidate.clone().expect("candidate set");
                    self.propose_candidate(candidate)
                }
            }
            2 => {
                if !self.sp2_pending.remove(&tx_id) {
                    return vec![];
                }
                if ok {
                    self.sp2_locked.insert(tx_id);
                }
                if self.sp2_pending.is_empty() {
                    self.propose_fallback()
                } else {
                    vec![]
                }
            }
            _ => vec![],
        }
    }

    /// The instance's quorum consensus decided: fan every user transaction
    /// out to its per-slot agreement, then decide on what survived.
    pub fn on_qc_decided(&mut self, block: &Block, ctx: &ProtoCtx) -> Vec<PoaOut> {
        let _ = ctx;
        if self.decided.is_some() || self.qc_block.is_some() {
            return vec![];
        }
        self.qc_block = Some(block.clone());
        let mut out = Vec::new();
        for tx in block.txs() {
            if tx.is_ua_ra() {
                self.ta_pending.insert(tx.tx_id());
                out.push(PoaOut::UaInitiate(tx.clone()));
            }
        }
        if self.ta_pending.is_empty() {
            self.decided = Some(block.hash());
            out.push(PoaOut::Decide(block.clone(), DecidePath::Slow));
        }
        out
    }

    pub fn on_ta_result(&mut self, tx_id: TxId, ok: bool) -> Vec<PoaOut> {
        if self.decided.is_some() || !self.ta_pending.remove(&tx_id) {
            return vec![];
        }
        if !ok {
            self.ta_failed.insert(tx_id);
        }
        if !self.ta_pending.is_empty() {
            return vec![];
        }
        let base = self.qc_block.clone().expect("qc block recorded");
        let final_block = base.without(&self.ta_failed);
        self.decided = Some(final_block.hash());
        vec![PoaOut::Decide(final_block, DecidePath::Slow)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyPair, KeyStore};
    use crate::model::{sha256, OwnedObject, SystemParams, TxBody};
    use crate::vm::CallSpec;

    struct Setup {
        params: SystemParams,
        quorums: crate::model::Quorums,
        keys: KeyStore,
        pairs: Vec<KeyPair>,
    }

    fn setup(n: u32, f: u32, p: u32) -> Setup {
        let params = SystemParams { n, f, p, delta_bound: 100, gst: 0 };
        let quorums = params.quorums().unwrap();
        let mut keys = KeyStore::default();
        let pairs: Vec<KeyPair> = (0..n)
            .map(|i| KeyPair::new(SignerId::Validator(i), sha256(&[i as u8, 7])))
            .collect();
        for k in &pairs {
            keys.register(k);
        }
        Setup { params, quorums, keys, pairs }
    }

    impl Setup {
        fn ctx(&self, me: ValidatorId) -> ProtoCtx<'_> {
            ProtoCtx {
                me,
                params: &self.params,
                quorums: &self.quorums,
                keys: &self.keys,
                my_key: &self.pairs[me as usize],
            }
        }
    }

    fn x() -> ActorId {
        ActorId::reactive("X")
    }

    fn ua_ra(sn: u64, marker: u64) -> Transaction {
        Transaction::new(TxBody::UaRa {
            sender: ActorId::user("alice"),
            sn,
            recipient: x(),
            consumed: vec![OwnedObject::coin(format!("c{marker}"), marker, ActorId::user("alice"))],
            code_pre: vec![],
            call: CallSpec { function: "inc".into(), args: vec![] },
            code_post: vec![],
        })
    }

    fn ra_ra(marker: u64) -> Transaction {
        Transaction::new(TxBody::RaRa {
            sender: ActorId::reactive("Y"),
            recipient: x(),
            consumed: vec![OwnedObject::coin(format!("r{marker}"), marker, ActorId::reactive("Y"))],
            call: CallSpec { function: "receive".into(), args: vec![] },
            code_post: vec![],
        })
    }

    fn pool_of(txs: &[Transaction]) -> Pool {
        txs.iter().map(|t| (t.tx_id(), t.clone())).collect()
    }

    fn signed_vote(s: &Setup, voter: ValidatorId, vote: Option<Block>, fallback: Block) -> PoaVoteMsg {
        let scope = VoteScope::Poa { actor: x(), instance: 0 };
        let digest = vote.as_ref().map(|b| b.hash().0);
        PoaVoteMsg {
            actor: x(),
            instance: 0,
            vote,
            fallback,
            voter,
            signature: s.pairs[voter as usize].sign(&Vote::signing_bytes(&scope, &digest)),
        }
    }

    fn proposal(s: &Setup, leader: ValidatorId, block: Block) -> PoaProposal {
        let scope = VoteScope::Poa { actor: x(), instance: 0 };
        PoaProposal {
            actor: x(),
            instance: 0,
            block: block.clone(),
            proposer: leader,
            signature: s.pairs[leader as usize].sign(&poa_proposal_bytes(&scope, &block)),
        }
    }

    #[test]
    fn leader_proposes_pool_on_activation() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        let txs = [ua_ra(0, 1), ua_ra(1, 2)];
        let out = inst.activate(&pool_of(&txs), &ctx);
        let proposed: Vec<&Block> = out
            .iter()
            .filter_map(|o| match o {
                PoaOut::Broadcast(Message::PoaProposal(p)) => Some(&p.block),
                _ => None,
            })
            .collect();
        assert_eq!(proposed.len(), 1);
        assert_eq!(proposed[0].len(), 2);
        assert!(out.iter().any(|o| matches!(o, PoaOut::StartRoundTimer)));
    }

    #[test]
    fn non_leader_only_arms_timer() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(1);
        let mut inst = PoaInstance::new(x(), 0, 0);
        let out = inst.activate(&Pool::new(), &ctx);
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0], PoaOut::StartRoundTimer));
    }

    #[test]
    fn empty_pool_leader_proposes_empty_block() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        let out = inst.activate(&Pool::new(), &ctx);
        let ok = out.iter().any(|o| {
            matches!(o, PoaOut::Broadcast(Message::PoaProposal(p)) if p.block.is_empty())
        });
        assert!(ok);
    }

    #[test]
    fn proposal_with_user_txs_fans_out_lock_requests() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(1);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let block = Block::new(0, [ua_ra(0, 1), ua_ra(1, 2)]);
        let out = inst.on_proposal(&proposal(&s, 0, block), &Pool::new(), &ctx);
        let locks = out.iter().filter(|o| matches!(o, PoaOut::FpLockReq(_))).count();
        assert_eq!(locks, 2);
    }

    #[test]
    fn unpooled_reactive_tx_defers_vote_until_emitted() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(1);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let r = ra_ra(5);
        let block = Block::new(0, [r.clone()]);
        let out = inst.on_proposal(&proposal(&s, 0, block), &Pool::new(), &ctx);
        assert!(out.is_empty(), "no vote while the reactive tx is missing locally");
        // Once the transaction shows up in the pool the vote goes out.
        let pool = pool_of(&[r]);
        let out = inst.poll_pool(&pool, &ctx);
        assert!(out.iter().any(|o| matches!(
            o,
            PoaOut::Broadcast(Message::PoaVote(PoaVoteMsg { vote: Some(_), .. }))
        )));
    }

    #[test]
    fn late_proposal_gets_no_fast_vote_but_bot_vote_carries_fallback() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(1);
        let mut inst = PoaInstance::new(x(), 0, 0);
        let t = ua_ra(0, 1);
        let pool = pool_of(&[t.clone()]);
        inst.activate(&pool, &ctx);
        let out = inst.on_round_timer(&pool, &ctx);
        let bot_vote = out.iter().find_map(|o| match o {
            PoaOut::Broadcast(Message::PoaVote(v)) => Some(v.clone()),
            _ => None,
        });
        let v = bot_vote.expect("timeout vote");
        assert!(v.vote.is_none());
        assert!(v.fallback.contains(t.tx_id()));
        // A proposal arriving after expiry must not trigger the fast path.
        let out = inst.on_proposal(&proposal(&s, 0, Block::new(0, [t])), &pool, &ctx);
        assert!(out.is_empty());
    }

    #[test]
    fn lock_failure_turns_vote_negative() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(1);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let t1 = ua_ra(0, 1);
        let t2 = ua_ra(1, 2);
        inst.on_proposal(&proposal(&s, 0, Block::new(0, [t1.clone(), t2.clone()])), &Pool::new(), &ctx);
        assert!(inst.on_fp_reply(t1.tx_id(), true, &Pool::new(), &ctx).is_empty());
        let out = inst.on_fp_reply(t2.tx_id(), false, &Pool::new(), &ctx);
        let vote = out.iter().find_map(|o| match o {
            PoaOut::Broadcast(Message::PoaVote(v)) => Some(v.clone()),
            _ => None,
        });
        assert!(vote.expect("vote cast").vote.is_none());
    }

    #[test]
    fn fast_quorum_of_matching_votes_decides() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let block = Block::new(0, [ra_ra(1)]);
        let mut decided = None;
        let mut proofs = 0;
        for voter in 0..5 {
            let msg = signed_vote(&s, voter, Some(block.clone()), Block::empty(0));
            for out in inst.on_vote(&msg, &ctx) {
                match out {
                    PoaOut::Decide(b, path) => decided = Some((b, path)),
                    PoaOut::Broadcast(Message::PoaProof(_)) => proofs += 1,
                    _ => {}
                }
            }
        }
        let (b, path) = decided.expect("decided");
        assert_eq!(b, block);
        assert_eq!(path, DecidePath::Fast);
        assert_eq!(proofs, 1);
    }

    #[test]
    fn negative_votes_never_count_toward_fast_quorum() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let block = Block::new(0, [ra_ra(1)]);
        for voter in 0..4 {
            inst.on_vote(&signed_vote(&s, voter, Some(block.clone()), Block::empty(0)), &ctx);
        }
        let out = inst.on_vote(&signed_vote(&s, 4, None, Block::empty(0)), &ctx);
        assert!(!out.iter().any(|o| matches!(o, PoaOut::Decide(..))));
        assert!(!inst.is_decided());
    }

    #[test]
    fn slow_trigger_proposes_voted_candidate_after_locks() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let t = ua_ra(0, 1);
        let block = Block::new(0, [t.clone()]);
        // Three matching votes (slow trigger), two negative: n - f votes.
        for voter in 0..3 {
            inst.on_vote(&signed_vote(&s, voter, Some(block.clone()), block.clone()), &ctx);
        }
        for voter in 3..5 {
            inst.on_vote(&signed_vote(&s, voter, None, Block::empty(0)), &ctx);
        }
        let out = inst.on_round_timer(&Pool::new(), &ctx);
        let sp: Vec<u8> = out
            .iter()
            .filter_map(|o| match o {
                PoaOut::SpLockReq { phase, .. } => Some(*phase),
                _ => None,
            })
            .collect();
        assert_eq!(sp, vec![1]);
        let out = inst.on_sp_reply(1, t.tx_id(), true, &ctx);
        assert!(matches!(&out[..], [PoaOut::QcPropose(b)] if b == &block));
    }

    #[test]
    fn fallback_branch_collects_widely_held_txs() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let t = ua_ra(0, 1);
        let fb_with = Block::new(0, [t.clone()]);
        // All five votes negative; four fallbacks carry t (n - 2f = 4).
        for voter in 0..4 {
            inst.on_vote(&signed_vote(&s, voter, None, fb_with.clone()), &ctx);
        }
        inst.on_vote(&signed_vote(&s, 4, None, Block::empty(0)), &ctx);
        let out = inst.on_round_timer(&Pool::new(), &ctx);
        let sp: Vec<(u8, TxId)> = out
            .iter()
            .filter_map(|o| match o {
                PoaOut::SpLockReq { phase, tx } => Some((*phase, tx.tx_id())),
                _ => None,
            })
            .collect();
        assert_eq!(sp, vec![(2, t.tx_id())]);
        let out = inst.on_sp_reply(2, t.tx_id(), true, &ctx);
        assert!(matches!(&out[..], [PoaOut::QcPropose(b)] if b.contains(t.tx_id())));
    }

    #[test]
    fn failed_phase1_lock_falls_back_and_drops_conflicter() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let t = ua_ra(0, 1);
        let block = Block::new(0, [t.clone()]);
        for voter in 0..3 {
            inst.on_vote(&signed_vote(&s, voter, Some(block.clone()), Block::empty(0)), &ctx);
        }
        for voter in 3..5 {
            inst.on_vote(&signed_vote(&s, voter, None, Block::empty(0)), &ctx);
        }
        inst.on_round_timer(&Pool::new(), &ctx);
        // Slow-path lock failed: fall back to the fallback-block rule,
        // which here carries nothing.
        let out = inst.on_sp_reply(1, t.tx_id(), false, &ctx);
        assert!(matches!(&out[..], [PoaOut::QcPropose(b)] if b.is_empty()));
    }

    #[test]
    fn consensus_block_fans_out_and_failed_slots_drop() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let t1 = ua_ra(0, 1);
        let t2 = ua_ra(1, 2);
        let r = ra_ra(3);
        let qc_block = Block::new(0, [t1.clone(), t2.clone(), r.clone()]);
        let out = inst.on_qc_decided(&qc_block, &ctx);
        let inits = out.iter().filter(|o| matches!(o, PoaOut::UaInitiate(_))).count();
        assert_eq!(inits, 2);
        assert!(inst.on_ta_result(t1.tx_id(), true).is_empty());
        let out = inst.on_ta_result(t2.tx_id(), false);
        let decided = out.iter().find_map(|o| match o {
            PoaOut::Decide(b, path) => Some((b.clone(), *path)),
            _ => None,
        });
        let (b, path) = decided.expect("slow decide");
        assert_eq!(path, DecidePath::Slow);
        assert!(b.contains(t1.tx_id()));
        assert!(!b.contains(t2.tx_id()));
        assert!(b.contains(r.tx_id()));
    }

    #[test]
    fn qc_block_with_only_reactive_txs_decides_immediately() {
        let s = setup(6, 1, 1);
        let ctx = s.ctx(0);
        let mut inst = PoaInstance::new(x(), 0, 0);
        inst.activate(&Pool::new(), &ctx);
        let qc_block = Block::new(0, [ra_ra(1)]);
        let out = inst.on_qc_decided(&qc_block, &ctx);
        assert!(matches!(&out[..], [PoaOut::Decide(b, DecidePath::Slow)] if b == &qc_block));
    }

    #[test]
    fn proof_decides_undecided_validator_and_regossips_once() {
        let s = setup(6, 1, 1);
        let block = Block::new(0, [ra_ra(1)]);
        // Build a proof at validator 0 via a fast quorum.
        let ctx0 = s.ctx(0);
        let mut source = PoaInstance::new(x(), 0, 0);
        source.activate(&Pool::new(), &ctx0);
        let mut proof = None;
        for voter in 0..5 {
            for out in source.on_vote(&signed_vote(&s, voter, Some(block.clone()), Block::empty(0)), &ctx0) {
                if let PoaOut::Broadcast(Message::PoaProof(p)) = out {
                    proof = Some(p);
                }
            }
        }
        let proof = proof.unwrap();
        let ctx5 = s.ctx(5);
        let mut lagging = PoaInstance::new(x(), 0, 0);
        lagging.activate(&Pool::new(), &ctx5);
        let out = lagging.on_proof(&proof, &ctx5);
        assert_eq!(out.len(), 2);
        assert!(lagging.on_proof(&proof, &ctx5).is_empty());
    }
}
