//! Byzantine validator behaviors.
//!
//! A Byzantine validator runs the honest entity logic internally but its
//! outgoing traffic passes through a strategy filter that can drop,
//! withhold, split or rewrite messages. Strategies sign with the
//! validator's own key only; honest signatures cannot be forged.

use std::collections::BTreeMap;

use crate::crypto::KeyPair;
use crate::entities::SendReq;
use crate::model::{ActorId, Transaction, TxBody, Vote, VoteScope};
use crate::protocol::messages::{
    poa_proposal_bytes, Justification, Message, PoaProposal, QcBody, UaVote,
};
use crate::sim::LinkKind;
use crate::vm::CallSpec;

use super::scenario::StrategyCfg;

/// One nondeterministic adversary decision: in seeded runs it comes from
/// the run's generator, in exploration it is a enumerated branch point.
pub trait Chooser {
    fn pick(&mut self, domain: usize) -> usize;
}

pub struct ByzCtx<'a> {
    pub me: u32,
    pub n: u32,
    pub my_key: &'a KeyPair,
    pub quorums: &'a crate::model::Quorums,
}

#[derive(Debug, Clone)]
pub struct ByzState {
    pub strategy: StrategyCfg,
    pub release_at: u64,
    pub released: bool,
    pub buffer: Vec<SendReq>,
    /// User transactions seen per slot; conflicting pairs feed equivocation.
    seen: BTreeMap<(ActorId, u64), Vec<Transaction>>,
}

impl ByzState {
    pub fn new(strategy: StrategyCfg, release_at: u64) -> Self {
        ByzState { strategy, release_at, released: false, buffer: Vec::new(), seen: BTreeMap::new() }
    }

    pub fn observe_incoming(&mut self, msg: &Message) {
        let tx = match msg {
            Message::UaTx(tx) if tx.is_user_tx() => tx,
            _ => return,
        };
        let key = (tx.sender().clone(), tx.sn().expect("user tx"));
        let entry = self.seen.entry(key).or_default();
        if entry.len() < 2 && entry.iter().all(|t| t.tx_id() != tx.tx_id()) {
            entry.push(tx.clone());
        }
    }

    /// Rewrites this validator's outgoing sends according to the strategy.
    pub fn filter_outgoing(
        &mut self,
        sends: Vec<SendReq>,
        ctx: &ByzCtx,
        chooser: &mut dyn Chooser,
    ) -> Vec<SendReq> {
        match self.strategy {
            StrategyCfg::Silent => sends
                .into_iter()
                .filter(|s| s.link != LinkKind::Outer)
                .collect(),
            StrategyCfg::WithholdThenRelease => {
                if self.released {
                    return sends;
                }
                let (held, pass): (Vec<_>, Vec<_>) =
                    sends.into_iter().partition(|s| s.link == LinkKind::Outer);
                self.buffer.extend(held);
                pass
            }
            StrategyCfg::EquivocateVotes => self.equivocate(sends, ctx, chooser),
            StrategyCfg::ConflictingProposals => self.split_proposals(sends, ctx, chooser),
            StrategyCfg::ArbitraryJustified => self.rejustify(sends, ctx, chooser),
            StrategyCfg::BadLeader => self.poison_proposals(sends, ctx),
        }
    }

    pub fn take_buffer(&mut self) -> Vec<SendReq> {
        self.released = true;
        std::mem::take(&mut self.buffer)
    }

    fn alt_user_vote(&self, v: &UaVote) -> Option<Transaction> {
        let pair = self.seen.get(&(v.actor.clone(), v.sn))?;
        let current = v.value.as_ref().map(|t| t.tx_id());
        pair.iter().find(|t| Some(t.tx_id()) != current).cloned()
    }

    fn equivocate(
        &mut self,
        sends: Vec<SendReq>,
        ctx: &ByzCtx,
        chooser: &mut dyn Chooser,
    ) -> Vec<SendReq> {
        let mut out = Vec::new();
        let mut mode_for_vote: BTreeMap<String, usize> = BTreeMap::new();
        for mut send in sends {
            match (&send.msg, send.link) {
                (Message::UaVote(v), LinkKind::Outer) => {
                    let key = format!("ua:{}:{}", v.actor, v.sn);
                    let mode = *mode_for_vote
                        .entry(key)
                        .or_insert_with(|| chooser.pick(3));
                    if mode != 0 {
                        if let Some(recipient) = send.to.validator() {
                            let flip = (recipient % 2 == 0) == (mode == 1);
                            if flip {
                                let alt = self.alt_user_vote(v);
                                let mut v2 = v.clone();
                                v2.value = alt;
                                v2.voter = ctx.me;
                                let scope =
                                    VoteScope::Pob { actor: v2.actor.clone(), sn: v2.sn };
                                let digest = v2.value.as_ref().map(|t| t.tx_id().0);
                                v2.signature =
                                    ctx.my_key.sign(&Vote::signing_bytes(&scope, &digest));
                                send.msg = Message::UaVote(v2);
                            }
                        }
                    }
                }
                (Message::PoaVote(v), LinkKind::Outer) => {
                    let key = format!("poa:{}:{}", v.actor, v.instance);
                    let mode = *mode_for_vote
                        .entry(key)
                        .or_insert_with(|| chooser.pick(3));
                    if mode != 0 && v.vote.is_some() {
                        if let Some(recipient) = send.to.validator() {
                            let flip = (recipient % 2 == 0) == (mode == 1);
                            if flip {
                                let mut v2 = v.clone();
                                v2.vote = None;
                                v2.voter = ctx.me;
                                let scope = VoteScope::Poa {
                                    actor: v2.actor.clone(),
                                    instance: v2.instance,
                                };
                                v2.signature =
                                    ctx.my_key.sign(&Vote::signing_bytes(&scope, &None));
                                send.msg = Message::PoaVote(v2);
                            }
                        }
                    }
                }
                _ => {}
            }
            out.push(send);
        }
        out
    }

    fn split_proposals(
        &mut self,
        sends: Vec<SendReq>,
        ctx: &ByzCtx,
        chooser: &mut dyn Chooser,
    ) -> Vec<SendReq> {
        let mut out = Vec::new();
        let mut mode_for_instance: BTreeMap<u64, usize> = BTreeMap::new();
        for mut send in sends {
            if let (Message::PoaProposal(p), LinkKind::Outer) = (&send.msg, send.link) {
                let mode =
                    *mode_for_instance.entry(p.instance).or_insert_with(|| chooser.pick(3));
                if mode != 0 && !p.block.is_empty() {
                    if let Some(recipient) = send.to.validator() {
                        let flip = (recipient % 2 == 0) == (mode == 1);
                        if flip {
                            // The other half sees the proposal minus its
                            // largest transaction.
                            let dropped =
                                p.block.txs().last().map(|t| t.tx_id()).into_iter().collect();
                            let block = p.block.without(&dropped);
                            let scope = VoteScope::Poa {
                                actor: p.actor.clone(),
                                instance: p.instance,
                            };
                            let signature =
                                ctx.my_key.sign(&poa_proposal_bytes(&scope, &block));
                            send.msg = Message::PoaProposal(PoaProposal {
                                actor: p.actor.clone(),
                                instance: p.instance,
                                block,
                                proposer: ctx.me,
                                signature,
                            });
                        }
                    }
                }
            }
            out.push(send);
        }
        out
    }

    /// A Byzantine consensus leader may pick any justifiable value: choose
    /// among derivations over different round-quorum-sized proposal
    /// subsets. The same (verifying) variant goes to every recipient.
    fn rejustify(
        &mut self,
        sends: Vec<SendReq>,
        ctx: &ByzCtx,
        chooser: &mut dyn Chooser,
    ) -> Vec<SendReq> {
        let mut choice_for_view: BTreeMap<u64, usize> = BTreeMap::new();
        let mut out = Vec::new();
        for mut send in sends {
            if let Message::Qc {
                scope,
                body:
                    QcBody::LeaderValue {
                        view,
                        justification: Justification::Derived { proposals },
                        ..
                    },
            } = &send.msg
            {
                if proposals.len() as u32 > ctx.quorums.round_votes {
                    let variants = 1 + proposals.len().min(3);
                    let choice =
                        *choice_for_view.entry(*view).or_insert_with(|| chooser.pick(variants));
                    if choice > 0 {
                        let drop_idx = (choice - 1) % proposals.len();
                        let mut subset = proposals.clone();
                        subset.remove(drop_idx);
                        let map: BTreeMap<u32, _> =
                            subset.iter().map(|sp| (sp.proposer, sp.clone())).collect();
                        let derived = crate::protocol::qc::derive_value(scope, &map, ctx.quorums);
                        send.msg = Message::Qc {
                            scope: scope.clone(),
                            body: QcBody::LeaderValue {
                                view: *view,
                                value: derived,
                                justification: Justification::Derived { proposals: subset },
                            },
                        };
                    }
                }
            }
            out.push(send);
        }
        out
    }

    /// A bad instance leader proposes a transaction nobody pooled: a
    /// fabricated reactive-actor transaction. Honest validators wait for it
    /// locally, never fast-vote, and the slow path excludes it.
    fn poison_proposals(&mut self, sends: Vec<SendReq>, ctx: &ByzCtx) -> Vec<SendReq> {
        let mut out = Vec::new();
        for mut send in sends {
            if let (Message::PoaProposal(p), LinkKind::Outer | LinkKind::Local) =
                (&send.msg, send.link)
            {
                let poison = Transaction::new(TxBody::RaRa {
                    sender: p.actor.clone(),
                    recipient: p.actor.clone(),
                    consumed: vec![],
                    call: CallSpec {
                        function: "inc".into(),
                        args: vec![crate::vm::Value::U64(p.instance)],
                    },
                    code_post: vec![],
                });
                let mut txs: Vec<Transaction> = p.block.txs().to_vec();
                txs.push(poison);
                let block = crate::model::Block::new(p.instance, txs);
                let scope = VoteScope::Poa { actor: p.actor.clone(), instance: p.instance };
                let signature = ctx.my_key.sign(&poa_proposal_bytes(&scope, &block));
                send.msg = Message::PoaProposal(PoaProposal {
                    actor: p.actor.clone(),
                    instance: p.instance,
                    block,
                    proposer: ctx.me,
                    signature,
                });
            }
            out.push(send);
        }
        out
    }
}
