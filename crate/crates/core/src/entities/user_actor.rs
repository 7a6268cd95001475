//! The per-validator entity of one user actor.
//!
//! Owns the fast/slow lock registry for the actor's sequence numbers, the
//! per-slot broadcast and agreement instances, the owned-object set and the
//! executed ledger. Lock slots are write-once: once a sequence number is
//! bound to a transaction it never rebinds, which is what makes parallel
//! instances safe against double spends.

use std::collections::{BTreeMap, BTreeSet};

use super::{LocalEvent, Outputs};
use crate::model::{ActorId, ObjectId, OwnedObject, Transaction, TxId};
use crate::protocol::messages::{ClientNotify, Message, QcScope, TimerId};
use crate::protocol::pob::{PobInstance, PobOut};
use crate::protocol::qc::{QcInstance, QcOut};
use crate::protocol::ProtoCtx;
use crate::sim::{Address, LinkKind};
use crate::vm::{execute_ua, Effects};

/// Deterministic first-leader slot for a per-slot agreement scope.
pub fn ta_leader_start(actor: &ActorId, sn: u64, n: u32) -> u32 {
    let mut bytes = actor.name.as_bytes().to_vec();
    bytes.extend_from_slice(&sn.to_be_bytes());
    let h = crate::model::sha256(&bytes);
    (u32::from_be_bytes([h[0], h[1], h[2], h[3]])) % n
}

#[derive(Debug, Clone)]
pub struct UserActorEntity {
    pub actor: ActorId,
    pub fp_locked: BTreeMap<u64, Transaction>,
    pub sp_locked: BTreeMap<u64, Transaction>,
    pub executed: BTreeMap<u64, TxId>,
    pub owned: BTreeMap<ObjectId, OwnedObject>,
    /// Broadcast-decided plain user transactions awaiting sequential
    /// execution.
    pub pending_ua: BTreeMap<u64, Transaction>,
    pub pob: BTreeMap<u64, PobInstance>,
    pub ta: BTreeMap<u64, QcInstance>,
    /// Reactive actors waiting on a per-slot agreement verdict, per slot:
    /// requester -> (instance, asked transaction).
    pub ta_requests: BTreeMap<u64, BTreeMap<ActorId, (u64, TxId)>>,
    /// Slot agreement outcomes; `None` decided empty.
    pub ta_decided: BTreeMap<u64, Option<Transaction>>,
    /// Recipient-bearing transactions locked here, waiting for execution
    /// preconditions before being handed to the recipient's entity.
    pub uara_wait: BTreeMap<u64, Transaction>,
    pub forwarded: BTreeSet<u64>,
    /// Fast-path lock requests inside their grace window, keyed by
    /// (sn, requesting actor, instance).
    pub grace: BTreeMap<(u64, ActorId, u64), Transaction>,
    /// Execution reports waiting for preconditions, one per slot.
    pub settle_wait: BTreeMap<u64, (Transaction, Effects)>,
}

impl UserActorEntity {
    pub fn new(actor: ActorId, genesis: Vec<OwnedObject>) -> Self {
        UserActorEntity {
            actor,
            fp_locked: BTreeMap::new(),
            sp_locked: BTreeMap::new(),
            executed: BTreeMap::new(),
            owned: genesis.into_iter().map(|o| (o.object_id.clone(), o)).collect(),
            pending_ua: BTreeMap::new(),
            pob: BTreeMap::new(),
            ta: BTreeMap::new(),
            ta_requests: BTreeMap::new(),
            ta_decided: BTreeMap::new(),
            uara_wait: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            grace: BTreeMap::new(),
            settle_wait: BTreeMap::new(),
        }
    }

    fn executed_prev(&self, sn: u64) -> bool {
        sn == 0 || self.executed.contains_key(&(sn - 1))
    }

    fn owns_all(&self, tx: &Transaction) -> bool {
        tx.consumed().iter().all(|o| self.owned.contains_key(&o.object_id))
    }

    fn preconditions(&self, tx: &Transaction) -> bool {
        let sn = tx.sn().expect("user tx");
        self.executed_prev(sn) && self.owns_all(tx)
    }

    fn verify_user_sig(&self, tx: &Transaction, ctx: &ProtoCtx) -> bool {
        let Some(sig) = &tx.signature else { return false };
        let signer = crate::crypto::SignerId::User(tx.sender().name.clone());
        ctx.keys.verify(&signer, &tx.tx_id().0, sig)
    }

    /// Write-once fast-path lock. Returns whether the slot now holds `tx`.
    fn fp_lock_attempt(&mut self, tx: &Transaction, out: &mut Outputs) -> bool {
        let sn = tx.sn().expect("user tx");
        match self.fp_locked.get(&sn) {
            Some(held) => held.tx_id() == tx.tx_id(),
            None => {
                self.fp_locked.insert(sn, tx.clone());
                out.events.push(LocalEvent::Lock {
                    slow_path: false,
                    actor: self.actor.clone(),
                    sn,
                    tx_id: tx.tx_id(),
                });
                true
            }
        }
    }

    /// Write-once slow-path lock. Returns whether the slot now holds `tx`.
    fn sp_lock_attempt(&mut self, tx: &Transaction, out: &mut Outputs) -> bool {
        let sn = tx.sn().expect("user tx");
        match self.sp_locked.get(&sn) {
            Some(held) => held.tx_id() == tx.tx_id(),
            None => {
                self.sp_locked.insert(sn, tx.clone());
                out.events.push(LocalEvent::Lock {
                    slow_path: true,
                    actor: self.actor.clone(),
                    sn,
                    tx_id: tx.tx_id(),
                });
                true
            }
        }
    }

    pub fn on_deliver(&mut self, from: &Address, msg: &Message, ctx: &ProtoCtx, out: &mut Outputs) {
        match msg {
            Message::UaTx(tx) if tx.is_ua() => self.on_pob_tx(tx, ctx, out),
            Message::UaTx(tx) if tx.is_ua_ra() => self.on_uara_tx(tx, ctx, out),
            Message::UaTx(_) => {}
            Message::UaVote(v) => {
                if v.actor == self.actor {
                    let outs = self.pob_mut(v.sn).on_vote(v, ctx);
                    self.route_pob(v.sn, outs, ctx, out);
                }
            }
            Message::UaProof(p) => {
                if let crate::model::VoteScope::Pob { actor, sn } = &p.scope {
                    if *actor == self.actor {
                        let sn = *sn;
                        let outs = self.pob_mut(sn).on_proof(p, ctx);
                        self.route_pob(sn, outs, ctx, out);
                    }
                }
            }
            Message::FpLockReq { requester, instance, tx } => {
                self.on_fp_lock_req(requester, *instance, tx, ctx, out)
            }
            Message::SpLockReq { requester, instance, phase, tx } => {
                let ok = self.sp_lock_attempt(tx, out);
                out.send(
                    Address::entity(ctx.me, requester.clone()),
                    Message::SpLockResp { instance: *instance, phase: *phase, tx_id: tx.tx_id(), ok },
                    LinkKind::Inner,
                );
            }
            Message::UaInitiate { requester, instance, tx } => {
                self.on_ua_initiate(requester, *instance, tx, ctx, out)
            }
            Message::Qc { scope: QcScope::Ta { actor, sn }, body } if *actor == self.actor => {
                let sn = *sn;
                let voter = from.validator().unwrap_or(u32::MAX);
                let outs = self.ta_mut(sn, ctx).on_body(voter, body, ctx);
                self.route_ta(sn, outs, ctx, out);
            }
            Message::Executed { tx, effects } => {
                let sn = tx.sn().expect("recipient-bearing user tx");
                if !self.executed.contains_key(&sn) {
                    self.settle_wait.entry(sn).or_insert_with(|| (tx.clone(), effects.clone()));
                }
            }
            Message::ObjectCredit { object }
                if object.owner == self.actor => {
                    self.owned.insert(object.object_id.clone(), object.clone());
                    self.notify_client_credit(object, out);
                }
            _ => {}
        }
        self.poll(ctx, out);
    }

    pub fn on_timer(&mut self, id: &TimerId, ctx: &ProtoCtx, out: &mut Outputs) {
        match id {
            TimerId::FpGrace { sn, requester, instance, .. } => {
                // Grace expired with preconditions still unmet: refuse.
                if let Some(tx) = self.grace.remove(&(*sn, requester.clone(), *instance)) {
                    out.send(
                        Address::entity(ctx.me, requester.clone()),
                        Message::FpLockResp { instance: *instance, tx_id: tx.tx_id(), ok: false },
                        LinkKind::Inner,
                    );
                }
            }
            TimerId::QcView { scope: QcScope::Ta { actor, sn }, view } if *actor == self.actor => {
                let (sn, view) = (*sn, *view);
                let outs = self.ta_mut(sn, ctx).on_view_timer(view, ctx);
                self.route_ta(sn, outs, ctx, out);
            }
            TimerId::QcGrace { scope: QcScope::Ta { actor, sn }, view } if *actor == self.actor => {
                let (sn, view) = (*sn, *view);
                let outs = self.ta_mut(sn, ctx).on_grace_timer(view, ctx);
                self.route_ta(sn, outs, ctx, out);
            }
            _ => {}
        }
        self.poll(ctx, out);
    }

    fn pob_mut(&mut self, sn: u64) -> &mut PobInstance {
        let actor = self.actor.clone();
        self.pob.entry(sn).or_insert_with(|| PobInstance::new(actor, sn))
    }

    fn ta_mut(&mut self, sn: u64, ctx: &ProtoCtx) -> &mut QcInstance {
        let scope = QcScope::Ta { actor: self.actor.clone(), sn };
        let start = ta_leader_start(&self.actor, sn, ctx.n());
        self.ta.entry(sn).or_insert_with(|| QcInstance::new(scope, start))
    }

    fn on_pob_tx(&mut self, tx: &Transaction, ctx: &ProtoCtx, out: &mut Outputs) {
        if !self.verify_user_sig(tx, ctx) {
            return;
        }
        let lock_ok = self.fp_lock_attempt(tx, out);
        let sn = tx.sn().expect("user tx");
        let outs = self.pob_mut(sn).on_tx(tx, lock_ok, ctx);
        self.route_pob(sn, outs, ctx, out);
    }

    /// A recipient-bearing transaction straight from its user: lock the
    /// slot, then hand it to the recipient once preconditions hold. A
    /// conflicting slot drops the transaction silently.
    fn on_uara_tx(&mut self, tx: &Transaction, ctx: &ProtoCtx, out: &mut Outputs) {
        if !self.verify_user_sig(tx, ctx) {
            return;
        }
        let sn = tx.sn().expect("user tx");
        if !self.fp_lock_attempt(tx, out) {
            out.events.push(LocalEvent::DroppedTx {
                tx_id: tx.tx_id(),
                reason: "conflicting fast-path lock".into(),
            });
            return;
        }
        if !self.forwarded.contains(&sn) {
            self.uara_wait.entry(sn).or_insert_with(|| tx.clone());
        }
    }

    fn on_fp_lock_req(
        &mut self,
        requester: &ActorId,
        instance: u64,
        tx: &Transaction,
        ctx: &ProtoCtx,
        out: &mut Outputs,
    ) {
        let reply = |ok: bool, out: &mut Outputs| {
            out.send(
                Address::entity(ctx.me, requester.clone()),
                Message::FpLockResp { instance, tx_id: tx.tx_id(), ok },
                LinkKind::Inner,
            );
        };
        if !self.verify_user_sig(tx, ctx) {
            reply(false, out);
            return;
        }
        if !self.fp_lock_attempt(tx, out) {
            reply(false, out);
            return;
        }
        if self.preconditions(tx) {
            reply(true, out);
            return;
        }
        // Preconditions may land shortly; wait out one grace period.
        let sn = tx.sn().expect("user tx");
        self.grace.insert((sn, requester.clone(), instance), tx.clone());
        out.timers_set.push((
            TimerId::FpGrace { user: self.actor.clone(), sn, requester: requester.clone(), instance },
            ctx.params.delta_bound,
        ));
    }

    fn on_ua_initiate(
        &mut self,
        requester: &ActorId,
        instance: u64,
        tx: &Transaction,
        ctx: &ProtoCtx,
        out: &mut Outputs,
    ) {
        let sn = tx.sn().expect("user tx");
        self.sp_lock_attempt(tx, out);
        if let Some(decided) = self.ta_decided.get(&sn) {
            let ok = decided.as_ref().map(|t| t.tx_id()) == Some(tx.tx_id());
            out.send(
                Address::entity(ctx.me, requester.clone()),
                Message::TaResult { instance, tx_id: tx.tx_id(), ok },
                LinkKind::Inner,
            );
            return;
        }
        self.ta_requests
            .entry(sn)
            .or_default()
            .entry(requester.clone())
            .or_insert((instance, tx.tx_id()));
        let proposal = self.sp_locked.get(&sn).expect("locked above").clone();
        self.ta_propose(sn, proposal, ctx, out);
    }

    fn ta_propose(&mut self, sn: u64, tx: Transaction, ctx: &ProtoCtx, out: &mut Outputs) {
        let tx_id = tx.tx_id();
        let outs = {
            let inst = self.ta_mut(sn, ctx);
            if inst.has_proposed() || inst.decided().is_some() {
                vec![]
            } else {
                inst.propose(crate::model::Block::new(sn, [tx]), ctx)
            }
        };
        if !outs.is_empty() {
            out.events.push(LocalEvent::QcPropose {
                scope: QcScope::Ta { actor: self.actor.clone(), sn },
                txs: vec![tx_id],
            });
        }
        self.route_ta(sn, outs, ctx, out);
    }

    fn route_ta(&mut self, sn: u64, outs: Vec<QcOut>, ctx: &ProtoCtx, out: &mut Outputs) {
        let scope = QcScope::Ta { actor: self.actor.clone(), sn };
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
                QcOut::Decide(block) => self.on_ta_decide(sn, block, ctx, out),
            }
        }
    }

    fn on_ta_decide(&mut self, sn: u64, block: crate::model::Block, ctx: &ProtoCtx, out: &mut Outputs) {
        if self.ta_decided.contains_key(&sn) {
            return;
        }
        let value = block.txs().first().cloned();
        self.ta_decided.insert(sn, value.clone());
        let scope = QcScope::Ta { actor: self.actor.clone(), sn };
        out.qc_scopes_cancelled.push(scope.clone());
        out.events.push(LocalEvent::Decide {
            scope: scope.to_string(),
            value: value.as_ref().map(|t| t.tx_id().short()).unwrap_or_else(|| "none".into()),
            path: crate::protocol::DecidePath::Slow,
            txs: value.iter().map(|t| t.tx_id()).collect(),
        });
        if let Some(requests) = self.ta_requests.remove(&sn) {
            for (requester, (instance, asked)) in requests {
                let ok = value.as_ref().map(|t| t.tx_id()) == Some(asked);
                out.send(
                    Address::entity(ctx.me, requester),
                    Message::TaResult { instance, tx_id: asked, ok },
                    LinkKind::Inner,
                );
            }
        }
        if let Some(tx) = value {
            let outs = self.pob_mut(sn).on_ta_decided(&tx);
            self.route_pob(sn, outs, ctx, out);
        }
    }

    fn route_pob(&mut self, sn: u64, outs: Vec<PobOut>, ctx: &ProtoCtx, out: &mut Outputs) {
        for o in outs {
            match o {
                PobOut::Broadcast(msg) => {
                    let actor = self.actor.clone();
                    out.broadcast(&actor, ctx.me, ctx.n(), msg);
                }
                PobOut::SlowTrigger(tx) => {
                    // Propose only when our slow-path slot actually holds
                    // this transaction; a conflicting lock wins the slot.
                    if let Some(held) = self.sp_locked.get(&sn) {
                        if held.tx_id() != tx.tx_id() {
                            continue;
                        }
                    }
                    self.sp_lock_attempt(&tx, out);
                    self.ta_propose(sn, tx, ctx, out);
                }
                PobOut::Decide(tx, path) => {
                    out.events.push(LocalEvent::Decide {
                        scope: format!("pob:{}/{}", self.actor, sn),
                        value: tx.tx_id().short(),
                        path,
                        txs: vec![tx.tx_id()],
                    });
                    if tx.is_ua() && !self.executed.contains_key(&sn) {
                        self.pending_ua.insert(sn, tx);
                    }
                }
            }
        }
    }

    /// Re-evaluates every waiting set; state changes cascade until a fixed
    /// point (an execution can unblock a forward, a settle, a grace reply).
    pub fn poll(&mut self, ctx: &ProtoCtx, out: &mut Outputs) {
        loop {
            let mut progressed = false;

            let ready: Vec<u64> = self
                .pending_ua
                .iter()
                .filter(|(_, tx)| self.preconditions(tx))
                .map(|(&sn, _)| sn)
                .collect();
            for sn in ready {
                let tx = self.pending_ua.remove(&sn).expect("present");
                self.execute_ua_tx(sn, &tx, ctx, out);
                progressed = true;
            }

            let forwardable: Vec<u64> = self
                .uara_wait
                .iter()
                .filter(|(_, tx)| self.preconditions(tx))
                .map(|(&sn, _)| sn)
                .collect();
            for sn in forwardable {
                let tx = self.uara_wait.remove(&sn).expect("present");
                self.forwarded.insert(sn);
                let recipient = tx.recipient().expect("recipient-bearing").clone();
                out.send(Address::entity(ctx.me, recipient), Message::UaTx(tx), LinkKind::Inner);
                progressed = true;
            }

            let settleable: Vec<u64> = self
                .settle_wait
                .iter()
                .filter(|(sn, (tx, _))| !self.executed.contains_key(sn) && self.preconditions(tx))
                .map(|(&sn, _)| sn)
                .collect();
            for sn in settleable {
                let (tx, effects) = self.settle_wait.remove(&sn).expect("present");
                self.apply_settle(sn, &tx, &effects, out);
                progressed = true;
            }

            let granted: Vec<(u64, ActorId, u64)> = self
                .grace
                .iter()
                .filter(|(_, tx)| self.preconditions(tx))
                .map(|(k, _)| k.clone())
                .collect();
            for key in granted {
                let tx = self.grace.remove(&key).expect("present");
                let (sn, requester, instance) = key;
                out.timers_cancelled.push(TimerId::FpGrace {
                    user: self.actor.clone(),
                    sn,
                    requester: requester.clone(),
                    instance,
                });
                out.send(
                    Address::entity(ctx.me, requester),
                    Message::FpLockResp { instance, tx_id: tx.tx_id(), ok: true },
                    LinkKind::Inner,
                );
                progressed = true;
            }

            if !progressed {
                return;
            }
        }
    }

    fn execute_ua_tx(&mut self, sn: u64, tx: &Transaction, ctx: &ProtoCtx, out: &mut Outputs) {
        let effects = execute_ua(tx);
        let consumed: Vec<String> = tx.consumed().iter().map(|o| o.object_id.0.clone()).collect();
        for o in tx.consumed() {
            self.owned.remove(&o.object_id);
        }
        let mut created_ids = Vec::new();
        let mut own_created = Vec::new();
        for obj in &effects.created {
            created_ids.push(obj.object_id.0.clone());
            if obj.owner == self.actor {
                self.owned.insert(obj.object_id.clone(), obj.clone());
                own_created.push(obj.clone());
            } else {
                out.send(
                    Address::entity(ctx.me, obj.owner.clone()),
                    Message::ObjectCredit { object: obj.clone() },
                    LinkKind::Inner,
                );
            }
        }
        out.new_actors.extend(effects.new_actors.clone());
        self.executed.insert(sn, tx.tx_id());
        out.events.push(LocalEvent::Execute {
            actor: self.actor.clone(),
            tx: tx.clone(),
            consumed: consumed.clone(),
            created: created_ids,
            failed: effects.failed,
        });
        self.notify_client_executed(sn, tx.tx_id(), consumed, own_created, out);
    }

    fn apply_settle(&mut self, sn: u64, tx: &Transaction, effects: &Effects, out: &mut Outputs) {
        let _ = effects; // created objects arrive as separate credits
        let consumed: Vec<String> = tx.consumed().iter().map(|o| o.object_id.0.clone()).collect();
        for o in tx.consumed() {
            self.owned.remove(&o.object_id);
        }
        self.executed.insert(sn, tx.tx_id());
        out.events.push(LocalEvent::Settle { actor: self.actor.clone(), sn, tx_id: tx.tx_id() });
        self.notify_client_executed(sn, tx.tx_id(), consumed, vec![], out);
    }

    fn notify_client_executed(
        &self,
        sn: u64,
        tx_id: TxId,
        consumed: Vec<String>,
        created: Vec<OwnedObject>,
        out: &mut Outputs,
    ) {
        out.send(
            Address::Client { user: self.actor.name.clone() },
            Message::ClientNotify(ClientNotify {
                actor: self.actor.clone(),
                sn,
                tx_id,
                consumed: consumed.into_iter().map(ObjectId).collect(),
                created,
            }),
            LinkKind::Outer,
        );
    }

    fn notify_client_credit(&self, object: &OwnedObject, out: &mut Outputs) {
        out.send(
            Address::Client { user: self.actor.name.clone() },
            Message::ClientNotify(ClientNotify {
                actor: self.actor.clone(),
                sn: u64::MAX,
                tx_id: object_credit_marker(object),
                consumed: vec![],
                created: vec![object.clone()],
            }),
            LinkKind::Outer,
        );
    }

    pub fn snapshot_details(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("actor".into(), serde_json::Value::from(self.actor.name.clone()));
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
            "executed".into(),
            serde_json::Value::from(
                self.executed.iter().map(|(sn, tx)| format!("{sn}:{tx}")).collect::<Vec<_>>(),
            ),
        );
        m
    }
}

/// Stable identifier for a credit notification, derived from the object id.
fn object_credit_marker(object: &OwnedObject) -> TxId {
    TxId(crate::model::sha256(object.object_id.0.as_bytes()))
}
