//! Per-validator entity state machines and the external user clients.
//!
//! Every validator hosts one entity per actor. Entities exchange messages
//! over links only, never via shared state; within one validator the links
//! are free, across validators they cost a communication step.

pub mod client;
pub mod reactive_actor;
pub mod user_actor;

use serde_json::{Map, Value};

use crate::model::{ActorId, SimTime, Transaction, TxId};
use crate::protocol::messages::{Message, QcScope, TimerId};
use crate::protocol::DecidePath;
use crate::sim::{Address, LinkKind};
use crate::vm::NewActor;

#[derive(Debug, Clone)]
pub struct SendReq {
    pub to: Address,
    pub msg: Message,
    pub link: LinkKind,
}

/// Domain events an entity wants in the trace; the world stamps ids, time
/// and cause.
#[derive(Debug, Clone)]
pub enum LocalEvent {
    Emit { tx: Transaction, predicate_ok: bool, by: String },
    Activate { actor: ActorId, instance: u64, leader: u32, pool: Vec<TxId> },
    Lock { slow_path: bool, actor: ActorId, sn: u64, tx_id: TxId },
    Decide { scope: String, value: String, path: DecidePath, txs: Vec<TxId> },
    QcPropose { scope: QcScope, txs: Vec<TxId> },
    Execute { actor: ActorId, tx: Transaction, consumed: Vec<String>, created: Vec<String>, failed: bool },
    Settle { actor: ActorId, sn: u64, tx_id: TxId },
    DroppedTx { tx_id: TxId, reason: String },
    Error { what: String },
}

impl LocalEvent {
    pub fn details(&self) -> Map<String, Value> {
        let mut m = Map::new();
        match self {
            LocalEvent::Emit { tx, predicate_ok, by } => {
                m.insert("tx".into(), Value::from(tx.tx_id().short()));
                m.insert("kind".into(), Value::from(tx_kind(tx)));
                m.insert("sender".into(), Value::from(tx.sender().name.clone()));
                if let Some(sn) = tx.sn() {
                    m.insert("sn".into(), Value::from(sn));
                }
                if let Some(r) = tx.recipient() {
                    m.insert("recipient".into(), Value::from(r.name.clone()));
                }
                m.insert("predicate_ok".into(), Value::from(*predicate_ok));
                m.insert("by".into(), Value::from(by.clone()));
                m.insert(
                    "consumed".into(),
                    Value::from(
                        tx.consumed().iter().map(|o| o.object_id.0.clone()).collect::<Vec<_>>(),
                    ),
                );
            }
            LocalEvent::Activate { actor, instance, leader, pool } => {
                m.insert("actor".into(), Value::from(actor.name.clone()));
                m.insert("k".into(), Value::from(*instance));
                m.insert("leader".into(), Value::from(*leader));
                m.insert(
                    "pool".into(),
                    Value::from(pool.iter().map(|t| t.short()).collect::<Vec<_>>()),
                );
            }
            LocalEvent::Lock { slow_path, actor, sn, tx_id } => {
                m.insert("lock".into(), Value::from(if *slow_path { "sp" } else { "fp" }));
                m.insert("actor".into(), Value::from(actor.name.clone()));
                m.insert("sn".into(), Value::from(*sn));
                m.insert("tx".into(), Value::from(tx_id.short()));
            }
            LocalEvent::Decide { scope, value, path, txs } => {
                m.insert("scope".into(), Value::from(scope.clone()));
                m.insert("value".into(), Value::from(value.clone()));
                m.insert("path".into(), Value::from(path.as_str()));
                m.insert(
                    "txs".into(),
                    Value::from(txs.iter().map(|t| t.short()).collect::<Vec<_>>()),
                );
            }
            LocalEvent::QcPropose { scope, txs } => {
                m.insert("scope".into(), Value::from(scope.to_string()));
                m.insert(
                    "txs".into(),
                    Value::from(txs.iter().map(|t| t.short()).collect::<Vec<_>>()),
                );
            }
            LocalEvent::Execute { actor, tx, consumed, created, failed } => {
                m.insert("actor".into(), Value::from(actor.name.clone()));
                m.insert("tx".into(), Value::from(tx.tx_id().short()));
                m.insert("kind".into(), Value::from(tx_kind(tx)));
                m.insert("sender".into(), Value::from(tx.sender().name.clone()));
                if let Some(sn) = tx.sn() {
                    m.insert("sn".into(), Value::from(sn));
                }
                m.insert("consumed".into(), Value::from(consumed.clone()));
                m.insert("created".into(), Value::from(created.clone()));
                if *failed {
                    m.insert("failed".into(), Value::from(true));
                }
            }
            LocalEvent::Settle { actor, sn, tx_id } => {
                m.insert("actor".into(), Value::from(actor.name.clone()));
                m.insert("sn".into(), Value::from(*sn));
                m.insert("tx".into(), Value::from(tx_id.short()));
            }
            LocalEvent::DroppedTx { tx_id, reason } => {
                m.insert("tx".into(), Value::from(tx_id.short()));
                m.insert("reason".into(), Value::from(reason.clone()));
            }
            LocalEvent::Error { what } => {
                m.insert("what".into(), Value::from(what.clone()));
            }
        }
        m
    }
}

pub fn tx_kind(tx: &Transaction) -> &'static str {
    if tx.is_ua() {
        "ua"
    } else if tx.is_ua_ra() {
        "ua_ra"
    } else {
        "ra_ra"
    }
}

/// Side effects collected from one entity invocation.
#[derive(Debug, Default)]
pub struct Outputs {
    pub sends: Vec<SendReq>,
    pub timers_set: Vec<(TimerId, SimTime)>,
    pub timers_cancelled: Vec<TimerId>,
    /// Cancel every view/grace timer of a finished consensus scope.
    pub qc_scopes_cancelled: Vec<QcScope>,
    pub events: Vec<LocalEvent>,
    pub new_actors: Vec<NewActor>,
}

impl Outputs {
    pub fn send(&mut self, to: Address, msg: Message, link: LinkKind) {
        self.sends.push(SendReq { to, msg, link });
    }

    /// Sends to the same actor's entity at every validator; the local copy
    /// uses the free self-delivery link.
    pub fn broadcast(&mut self, actor: &ActorId, me: u32, n: u32, msg: Message) {
        for v in 0..n {
            let link = if v == me { LinkKind::Local } else { LinkKind::Outer };
            self.send(Address::entity(v, actor.clone()), msg.clone(), link);
        }
    }
}

/// What the world feeds an entity.
#[derive(Debug, Clone)]
pub enum EntityInput {
    Deliver { from: Address, msg: Message },
    Timer(TimerId),
}
