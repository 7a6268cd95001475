//! The per-validator entity of one reactive actor.
//!
//! Keeps the transaction pool, the executed set, the actor's own objects
//! and program state, and one agreement instance per slot. Blocks execute
//! strictly in instance order; execution emits outgoing reactive-actor
//! transactions, reports effects to sender entities, and arms the next
//! instance.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{LocalEvent, Outputs};
use crate::model::{ActorId, Block, ObjectId, OwnedObject, TxId, ValidatorId};
use crate::protocol::messages::{Message, QcScope, TimerId};
use crate::protocol::poa::{PoaInstance, PoaOut, Pool};
use crate::protocol::qc::{QcInstance, QcOut};
use crate::protocol::{DecidePath, ProtoCtx};
use crate::sim::{Address, LinkKind};
use crate::vm::{execute_at_ra, ProgramKind, ProgramState};

#[derive(Debug, Clone)]
pub struct ReactiveActorEntity {
    pub actor: ActorId,
    pub program: ProgramKind,
    pub state: ProgramState,
    pub pool: Pool,
    pub executed: BTreeSet<TxId>,
    pub owned: BTreeMap<ObjectId, OwnedObject>,
    /// Next instance to decide and execute.
    pub current: u64,
    pub instances: BTreeMap<u64, PoaInstance>,
    pub qcs: BTreeMap<u64, QcInstance>,
    /// Decided blocks not yet executed (must run in instance order).
    pub pending_blocks: BTreeMap<u64, Block>,
    /// Messages for instances beyond the current one.
    pub buffered: BTreeMap<u64, Vec<(Address, Message)>>,
    /// Replay queue drained by `poll` after instance advancement.
    pub replay: VecDeque<(Address, Message)>,
    /// Start an instance as soon as it exists, rather than on first
    /// activity.
    pub initiate_immediate: bool,
    /// Instance k is led by `(leader_offset + k) mod n`.
    pub leader_offset: u32,
}

impl ReactiveActorEntity {
    pub fn new(
        actor: ActorId,
        program: ProgramKind,
        state: ProgramState,
        genesis: Vec<OwnedObject>,
        leader_offset: u32,
        initiate_immediate: bool,
    ) -> Self {
        ReactiveActorEntity {
            actor,
            program,
            state,
            pool: Pool::new(),
            executed: BTreeSet::new(),
            owned: genesis.into_iter().map(|o| (o.object_id.clone(), o)).collect(),
            current: 0,
            instances: BTreeMap::new(),
            qcs: BTreeMap::new(),
            pending_blocks: BTreeMap::new(),
            buffered: BTreeMap::new(),
            replay: VecDeque::new(),
            initiate_immediate,
            leader_offset,
        }
    }

    pub fn leader_of(&self, instance: u64, n: u32) -> ValidatorId {
        ((self.leader_offset as u64 + instance) % n as u64) as ValidatorId
    }

    fn qc_leader_start(&self, instance: u64, n: u32) -> u32 {
        // Rotate past the instance leader so a Byzantine instance leader
        // does not automatically lead the failover consensus too.
        ((self.leader_offset as u64 + instance + 1) % n as u64) as u32
    }

    fn poa_call(
        &mut self,
        k: u64,
        ctx: &ProtoCtx,
        out: &mut Outputs,
        f: impl FnOnce(&mut PoaInstance, &Pool, &ProtoCtx) -> Vec<PoaOut>,
    ) {
        let mut inst = self.instances.remove(&k).unwrap_or_else(|| {
            PoaInstance::new(self.actor.clone(), k, self.leader_of(k, ctx.n()))
        });
        let outs = f(&mut inst, &self.pool, ctx);
        self.instances.insert(k, inst);
        self.route_poa(k, outs, ctx, out);
    }

    fn qc_call(
        &mut self,
        k: u64,
        ctx: &ProtoCtx,
        out: &mut Outputs,
        f: impl FnOnce(&mut QcInstance, &ProtoCtx) -> Vec<QcOut>,
    ) {
        let mut inst = self.qcs.remove(&k).unwrap_or_else(|| {
            QcInstance::new(
                QcScope::Poa { actor: self.actor.clone(), instance: k },
                self.qc_leader_start(k, ctx.n()),
            )
        });
        let outs = f(&mut inst, ctx);
        self.qcs.insert(k, inst);
        self.route_qc(k, outs, ctx, out);
    }

    /// Arms the current instance when there is a reason to run it.
    fn try_activate(&mut self, by_message: bool, ctx: &ProtoCtx, out: &mut Outputs) {
        let k = self.current;
        let active = self.instances.get(&k).map(|i| i.is_active()).unwrap_or(false);
        if active {
            return;
        }
        if !(self.initiate_immediate || by_message || !self.pool.is_empty()) {
            return;
        }
        let leader = self.leader_of(k, ctx.n());
        out.events.push(LocalEvent::Activate {
            actor: self.actor.clone(),
            instance: k,
            leader,
            pool: self.pool.keys().copied().collect(),
        });
        self.poa_call(k, ctx, out, |inst, pool, ctx| inst.activate(pool, ctx));
    }

    pub fn on_deliver(&mut self, from: &Address, msg: &Message, ctx: &ProtoCtx, out: &mut Outputs) {
        self.dispatch(from.clone(), msg.clone(), ctx, out);
        self.poll(ctx, out);
    }

    /// Activation nudge for immediate-start configurations.
    pub fn kick(&mut self, ctx: &ProtoCtx, out: &mut Outputs) {
        self.try_activate(false, ctx, out);
        self.poll(ctx, out);
    }

    pub fn on_timer(&mut self, id: &TimerId, ctx: &ProtoCtx, out: &mut Outputs) {
        match id {
            TimerId::PoaRound { actor, instance } if *actor == self.actor => {
                let k = *instance;
                self.poa_call(k, ctx, out, |inst, pool, ctx| inst.on_round_timer(pool, ctx));
            }
            TimerId::QcView { scope: QcScope::Poa { actor, instance }, view }
                if *actor == self.actor =>
            {
                let (k, view) = (*instance, *view);
                self.qc_call(k, ctx, out, |inst, ctx| inst.on_view_timer(view, ctx));
            }
            TimerId::QcGrace { scope: QcScope::Poa { actor, instance }, view }
                if *actor == self.actor =>
            {
                let (k, view) = (*instance, *view);
                self.qc_call(k, ctx, out, |inst, ctx| inst.on_grace_timer(view, ctx));
            }
            _ => {}
        }
        self.poll(ctx, out);
    }

    fn dispatch(&mut self, from: Address, msg: Message, ctx: &ProtoCtx, out: &mut Outputs) {
        match &msg {
            // A transaction handed over for pooling, either forwarded by a
            // user-actor entity or emitted by a peer reactive actor here.
            Message::UaTx(tx) => {
                if !self.executed.contains(&tx.tx_id()) {
                    self.pool.insert(tx.tx_id(), tx.clone());
                    self.try_activate(false, ctx, out);
                    let k = self.current;
                    self.poa_call(k, ctx, out, |inst, pool, ctx| inst.poll_pool(pool, ctx));
                }
            }
            Message::PoaProposal(p) => {
                let k = p.instance;
                let p = p.clone();
                self.instance_scoped(k, from, msg.clone(), ctx, out, |me, ctx, out| {
                    me.poa_call(k, ctx, out, |inst, pool, ctx| inst.on_proposal(&p, pool, ctx));
                });
            }
            Message::PoaVote(v) => {
                let k = v.instance;
                let v = v.clone();
                self.instance_scoped(k, from, msg.clone(), ctx, out, |me, ctx, out| {
                    me.poa_call(k, ctx, out, |inst, _, ctx| inst.on_vote(&v, ctx));
                });
            }
            Message::PoaProof(proof) => {
                if let crate::model::VoteScope::Poa { actor, instance } = &proof.scope {
                    if *actor == self.actor {
                        let k = *instance;
                        let proof = proof.clone();
                        self.instance_scoped(k, from, msg.clone(), ctx, out, |me, ctx, out| {
                            me.poa_call(k, ctx, out, |inst, _, ctx| inst.on_proof(&proof, ctx));
                        });
                    }
                }
            }
            Message::FpLockResp { instance, tx_id, ok } => {
                let (k, tx_id, ok) = (*instance, *tx_id, *ok);
                self.poa_call(k, ctx, out, |inst, pool, ctx| {
                    inst.on_fp_reply(tx_id, ok, pool, ctx)
                });
            }
            Message::SpLockResp { instance, phase, tx_id, ok } => {
                let (k, phase, tx_id, ok) = (*instance, *phase, *tx_id, *ok);
                self.poa_call(k, ctx, out, |inst, _, ctx| inst.on_sp_reply(phase, tx_id, ok, ctx));
            }
            Message::TaResult { instance, tx_id, ok } => {
                let (k, tx_id, ok) = (*instance, *tx_id, *ok);
                self.poa_call(k, ctx, out, |inst, _, _| inst.on_ta_result(tx_id, ok));
            }
            Message::Qc { scope: QcScope::Poa { actor, instance }, body }
                if *actor == self.actor =>
            {
                let k = *instance;
                let body = body.clone();
                let voter = from.validator().unwrap_or(u32::MAX);
                self.instance_scoped(k, from, msg.clone(), ctx, out, |me, ctx, out| {
                    me.qc_call(k, ctx, out, |inst, ctx| inst.on_body(voter, &body, ctx));
                });
            }
            _ => {}
        }
    }

    /// Feeds an instance-scoped message: future instances are buffered,
    /// the current one is activated on first contact.
    fn instance_scoped(
        &mut self,
        k: u64,
        from: Address,
        msg: Message,
        ctx: &ProtoCtx,
        out: &mut Outputs,
        f: impl FnOnce(&mut Self, &ProtoCtx, &mut Outputs),
    ) {
        if k > self.current {
            self.buffered.entry(k).or_default().push((from, msg));
            return;
        }
        if k == self.current {
            self.try_activate(true, ctx, out);
        }
        f(self, ctx, out);
    }

    fn route_poa(&mut self, k: u64, outs: Vec<PoaOut>, ctx: &ProtoCtx, out: &mut Outputs) {
        for o in outs {
            match o {
                PoaOut::Broadcast(msg) => {
                    let actor = self.actor.clone();
                    out.broadcast(&actor, ctx.me, ctx.n(), msg);
                }
                PoaOut::FpLockReq(tx) => {
                    let sender = tx.sender().clone();
                    out.send(
                        Address::entity(ctx.me, sender),
                        Message::FpLockReq { requester: self.actor.clone(), instance: k, tx },
                        LinkKind::Inner,
                    );
                }
                PoaOut::SpLockReq { phase, tx } => {
                    let sender = tx.sender().clone();
                    out.send(
                        Address::entity(ctx.me, sender),
                        Message::SpLockReq { requester: self.actor.clone(), instance: k, phase, tx },
                        LinkKind::Inner,
                    );
                }
                PoaOut::UaInitiate(tx) => {
                    let sender = tx.sender().clone();
                    out.send(
                        Address::entity(ctx.me, sender),
                        Message::UaInitiate { requester: self.actor.clone(), instance: k, tx },
                        LinkKind::Inner,
                    );
                }
                PoaOut::QcPropose(block) => {
                    out.events.push(LocalEvent::QcPropose {
                        scope: QcScope::Poa { actor: self.actor.clone(), instance: k },
                        txs: block.txs().iter().map(|t| t.tx_id()).collect(),
                    });
                    self.qc_call(k, ctx, out, |inst, ctx| inst.propose(block, ctx));
                }
                PoaOut::StartRoundTimer => {
                    out.timers_set.push((
                        TimerId::PoaRound { actor: self.actor.clone(), instance: k },
                        3 * ctx.params.delta_bound,
                    ));
                }
                PoaOut::Decide(block, path) => self.on_poa_decide(k, block, path, ctx, out),
            }
        }
    }

    fn route_qc(&mut self, k: u64, outs: Vec<QcOut>, ctx: &ProtoCtx, out: &mut Outputs) {
        let scope = QcScope::Poa { actor: self.actor.clone(), instance: k };
        for o in outs {
            match o {
                QcOut::Broadcast(body) => {
                    let actor = self.actor.clone();
                    out.broadcast(&actor, ctx.me, ctx.n(), Message::Qc { scope: scope.clone(), body });
                }
                QcOut::SetViewTimer { view, duration_deltas } => {
                    out.timers_set.push((
                        TimerId::QcView { scope: scope.clone(), view },
                        duration_deltas * ctx.params.delta_bound,
                    ));
                }
                QcOut::SetGraceTimer { view } => {
                    out.timers_set.push((
                        TimerId::QcGrace { scope: scope.clone(), view },
                        ctx.params.delta_bound,
                    ));
                }
                QcOut::Decide(block) => {
                    self.poa_call(k, ctx, out, |inst, _, ctx| inst.on_qc_decided(&block, ctx));
                }
            }
        }
    }

    fn on_poa_decide(&mut self, k: u64, block: Block, path: DecidePath, ctx: &ProtoCtx, out: &mut Outputs) {
        out.events.push(LocalEvent::Decide {
            scope: format!("poa:{}/{}", self.actor, k),
            value: block.hash().to_string(),
            path,
            txs: block.txs().iter().map(|t| t.tx_id()).collect(),
        });
        out.timers_cancelled.push(TimerId::PoaRound { actor: self.actor.clone(), instance: k });
        out.qc_scopes_cancelled.push(QcScope::Poa { actor: self.actor.clone(), instance: k });
        if let Some(qc) = self.qcs.get_mut(&k) {
            qc.cancel();
        }
        self.pending_blocks.insert(k, block);
        let _ = ctx;
    }

    /// Executes decided blocks in instance order and advances.
    pub fn poll(&mut self, ctx: &ProtoCtx, out: &mut Outputs) {
        loop {
            if let Some((from, msg)) = self.replay.pop_front() {
                self.dispatch(from, msg, ctx, out);
                continue;
            }
            let k = self.current;
            let Some(block) = self.pending_blocks.remove(&k) else { return };
            self.execute_block(&block, ctx, out);
            self.current = k + 1;
            if let Some(buffered) = self.buffered.remove(&self.current) {
                self.replay.extend(buffered);
            }
            self.try_activate(false, ctx, out);
        }
    }

    fn execute_block(&mut self, block: &Block, ctx: &ProtoCtx, out: &mut Outputs) {
        for tx in block.txs() {
            self.pool.remove(&tx.tx_id());
        }
        for tx in block.txs() {
            if self.executed.contains(&tx.tx_id()) {
                continue;
            }
            self.executed.insert(tx.tx_id());
            let (state, effects, spent) =
                execute_at_ra(tx, self.program, &self.state, &self.actor, &self.owned);
            self.state = state;
            for oid in &spent {
                self.owned.remove(oid);
            }
            let consumed: Vec<String> = tx
                .consumed()
                .iter()
                .map(|o| o.object_id.0.clone())
                .chain(spent.iter().map(|o| o.0.clone()))
                .collect();
            let mut created_ids = Vec::new();
            for obj in &effects.created {
                created_ids.push(obj.object_id.0.clone());
                if obj.owner == self.actor {
                    self.owned.insert(obj.object_id.clone(), obj.clone());
                } else if obj.owner.is_user() {
                    out.send(
                        Address::entity(ctx.me, obj.owner.clone()),
                        Message::ObjectCredit { object: obj.clone() },
                        LinkKind::Inner,
                    );
                } else {
                    out.events.push(LocalEvent::DroppedTx {
                        tx_id: tx.tx_id(),
                        reason: "object created at foreign reactive actor".into(),
                    });
                }
            }
            out.events.push(LocalEvent::Execute {
                actor: self.actor.clone(),
                tx: tx.clone(),
                consumed,
                created: created_ids,
                failed: effects.failed,
            });
            // Emitted reactive-actor transactions leave only if this actor
            // still owns everything they consume; otherwise they vanish.
            for rara in &effects.rara_txs {
                let have_all = rara.consumed().iter().all(|o| self.owned.contains_key(&o.object_id));
                if !have_all {
                    out.events.push(LocalEvent::DroppedTx {
                        tx_id: rara.tx_id(),
                        reason: "emitted without owned inputs".into(),
                    });
                    continue;
                }
                out.events.push(LocalEvent::Emit {
                    tx: rara.clone(),
                    predicate_ok: true,
                    by: format!("v{}.{}", ctx.me, self.actor),
                });
                for o in rara.consumed() {
                    self.owned.remove(&o.object_id);
                }
                let recipient = rara.recipient().expect("reactive tx has recipient").clone();
                out.send(
                    Address::entity(ctx.me, recipient),
                    Message::UaTx(rara.clone()),
                    LinkKind::Inner,
                );
            }
            if tx.is_ua_ra() {
                let sender = tx.sender().clone();
                out.send(
                    Address::entity(ctx.me, sender),
                    Message::Executed { tx: tx.clone(), effects: effects.clone() },
                    LinkKind::Inner,
                );
            }
        }
    }

    pub fn snapshot_details(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("actor".into(), serde_json::Value::from(self.actor.name.clone()));
        m.insert("state".into(), serde_json::Value::from(self.state.digest_string()));
        m.insert("instance".into(), serde_json::Value::from(self.current));
        m.insert(
            "owned".into(),
            serde_json::Value::from(
                self.owned
                    .values()
                    .map(|o| format!("{}:{}:{}", o.object_id, o.type_tag, o.payload))
                    .collect::<Vec<_>>(),
            ),
        );
        m.insert(
            "pool".into(),
            serde_json::Value::from(self.pool.keys().map(|t| t.short()).collect::<Vec<_>>()),
        );
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::ProgramKind;

    #[test]
    fn leaders_rotate_round_robin() {
        let entity = ReactiveActorEntity::new(
            ActorId::reactive("X"),
            ProgramKind::Counter,
            crate::vm::ProgramState::Counter(0),
            vec![],
            0,
            false,
        );
        assert_eq!(entity.leader_of(0, 6), 0);
        assert_eq!(entity.leader_of(7, 6), 1);
        assert_eq!(entity.leader_of(11, 6), 5);

        let offset = ReactiveActorEntity::new(
            ActorId::reactive("Y"),
            ProgramKind::Counter,
            crate::vm::ProgramState::Counter(0),
            vec![],
            4,
            false,
        );
        assert_eq!(offset.leader_of(0, 6), 4);
        assert_eq!(offset.leader_of(2, 6), 0);
    }
}
