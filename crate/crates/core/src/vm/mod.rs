//! Deterministic toy virtual machine for transaction `Code` and `Call`
//! fields: object actions, object creation, actor creation and transaction
//! spawning.
//!
//! Execution is total: an ill-typed command fails the whole transaction,
//! which then consumes its inputs and produces empty effects. Everything is
//! a pure function of its inputs, including created object ids, so every
//! validator derives identical effects.

pub mod programs;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::canon::{put_i64, put_slice, put_str, put_u64, put_u8, CanonicalEncode};
use crate::model::{ActorId, ActorKind, ObjectId, OwnedObject, Transaction, TxBody, TxId};
pub use programs::{ProgramKind, ProgramState};

pub const COIN: &str = "coin";

/// Argument value for a reactive-actor call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    U64(u64),
    Str(String),
}

impl Value {
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::U64(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::U64(_) => None,
        }
    }
}

impl CanonicalEncode for Value {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Value::U64(v) => {
                put_u8(out, 0);
                put_u64(out, *v);
            }
            Value::Str(s) => {
                put_u8(out, 1);
                put_str(out, s);
            }
        }
    }
}

/// A function call on a reactive actor. The function must exist in the
/// recipient's registered program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSpec {
    pub function: String,
    #[serde(default)]
    pub args: Vec<Value>,
}

impl CanonicalEncode for CallSpec {
    fn encode(&self, out: &mut Vec<u8>) {
        put_str(out, &self.function);
        put_slice(out, &self.args);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPart {
    pub amount: u64,
    pub owner: ActorId,
}

impl CanonicalEncode for SplitPart {
    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.amount);
        self.owner.encode(out);
    }
}

/// One VM command. Commands may reference only objects consumed by or
/// created within the same transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Splits a coin into parts, transferring each part to its owner. The
    /// part amounts must sum to the source amount.
    Split { object: ObjectId, parts: Vec<SplitPart> },
    /// Merges coins with a common owner into one.
    Merge { objects: Vec<ObjectId> },
    /// Mints a fresh object. Minting coins breaks coin conservation and is
    /// reserved for genesis-like scenarios.
    CreateObject { type_tag: String, payload: u64, owner: ActorId },
    /// Spawns a reactive actor running a built-in program. User code only.
    CreateReactiveActor { program: String, init: i64 },
    /// Issues a new transaction toward a reactive actor. Only meaningful
    /// while executing at a reactive actor, which becomes the sender.
    SpawnTx { recipient: ActorId, consume: Vec<ObjectId>, call: CallSpec },
}

impl CanonicalEncode for Command {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Command::Split { object, parts } => {
                put_u8(out, 0);
                object.encode(out);
                put_slice(out, parts);
            }
            Command::Merge { objects } => {
                put_u8(out, 1);
                put_slice(out, objects);
            }
            Command::CreateObject { type_tag, payload, owner } => {
                put_u8(out, 2);
                put_str(out, type_tag);
                put_u64(out, *payload);
                owner.encode(out);
            }
            Command::CreateReactiveActor { program, init } => {
                put_u8(out, 3);
                put_str(out, program);
                put_i64(out, *init);
            }
            Command::SpawnTx { recipient, consume, call } => {
                put_u8(out, 4);
                recipient.encode(out);
                put_slice(out, consume);
                call.encode(out);
            }
        }
    }
}

/// Everything a transaction execution produced. Created object ids are a
/// deterministic function of `(tx_id, allocation index)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effects {
    pub created: Vec<OwnedObject>,
    pub rara_txs: Vec<Transaction>,
    pub new_actors: Vec<NewActor>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewActor {
    pub actor: ActorId,
    pub program: String,
    pub init: i64,
}

impl Effects {
    pub fn failure() -> Self {
        Effects { failed: true, ..Default::default() }
    }

    pub fn digest_string(&self) -> String {
        if self.failed {
            return "failed".to_string();
        }
        let created: Vec<String> = self.created.iter().map(|o| o.object_id.0.clone()).collect();
        let rara: Vec<String> = self.rara_txs.iter().map(|t| t.tx_id().short()).collect();
        format!("created=[{}] rara=[{}]", created.join(","), rara.join(","))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("object {0} is not a coin")]
    NotACoin(ObjectId),
    #[error("split parts sum {parts} != coin amount {amount}")]
    SplitMismatch { amount: u64, parts: u64 },
    #[error("merge over mixed owners or empty set")]
    BadMerge,
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("bad arguments for {0}")]
    BadArgs(String),
    #[error("insufficient balance")]
    InsufficientBalance,
    #[error("command not allowed in this context")]
    Forbidden,
    #[error("unknown program {0}")]
    UnknownProgram(String),
}

/// Where a code stage runs, which gates what commands it may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecContext<'a> {
    /// Code of a plain user transaction, executing at the user actor.
    UserCode,
    /// Pre/post code of a recipient-bearing transaction, executing at the
    /// named reactive actor but without access to its state.
    RaStage(&'a ActorId),
}

/// Allocates created object and actor ids deterministically.
#[derive(Debug, Clone)]
pub struct Allocator {
    tx_id: TxId,
    next: u32,
}

impl Allocator {
    pub fn new(tx_id: TxId) -> Self {
        Allocator { tx_id, next: 0 }
    }

    pub fn object_id(&mut self) -> ObjectId {
        let id = ObjectId(format!("o:{}:{}", self.tx_id.short(), self.next));
        self.next += 1;
        id
    }

    pub fn actor_id(&mut self) -> ActorId {
        let id = ActorId::reactive(format!("ra:{}:{}", self.tx_id.short(), self.next));
        self.next += 1;
        id
    }
}

/// The mutable object environment a stage works over.
pub type ObjectEnv = BTreeMap<ObjectId, OwnedObject>;

pub fn env_from(objects: &[OwnedObject]) -> ObjectEnv {
    objects.iter().map(|o| (o.object_id.clone(), o.clone())).collect()
}

#[derive(Debug, Default, Clone)]
pub struct StageOut {
    pub rara_txs: Vec<Transaction>,
    pub new_actors: Vec<NewActor>,
}

/// Runs a command list over `env`, consuming and inserting objects in
/// place. Any error aborts the stage; the caller converts that into a
/// whole-transaction failure.
pub fn execute_code(
    code: &[Command],
    env: &mut ObjectEnv,
    alloc: &mut Allocator,
    ctx: ExecContext<'_>,
) -> Result<StageOut, ExecError> {
    let mut out = StageOut::default();
    for cmd in code {
        match cmd {
            Command::Split { object, parts } => {
                let src = env.remove(object).ok_or_else(|| ExecError::UnknownObject(object.clone()))?;
                if src.type_tag != COIN {
                    return Err(ExecError::NotACoin(object.clone()));
                }
                let total: u64 = parts.iter().map(|p| p.amount).sum();
                if total != src.payload {
                    return Err(ExecError::SplitMismatch { amount: src.payload, parts: total });
                }
                for part in parts {
                    check_owner_allowed(&part.owner, ctx)?;
                    let id = alloc.object_id();
                    env.insert(id.clone(), OwnedObject {
                        object_id: id,
                        type_tag: COIN.into(),
                        payload: part.amount,
                        owner: part.owner.clone(),
                    });
                }
            }
            Command::Merge { objects } => {
                if objects.is_empty() {
                    return Err(ExecError::BadMerge);
                }
                let mut total = 0u64;
                let mut owner: Option<ActorId> = None;
                for oid in objects {
                    let src = env.remove(oid).ok_or_else(|| ExecError::UnknownObject(oid.clone()))?;
                    if src.type_tag != COIN {
                        return Err(ExecError::NotACoin(oid.clone()));
                    }
                    if let Some(ref o) = owner {
                        if *o != src.owner {
                            return Err(ExecError::BadMerge);
                        }
                    } else {
                        owner = Some(src.owner.clone());
                    }
                    total += src.payload;
                }
                let id = alloc.object_id();
                env.insert(id.clone(), OwnedObject {
                    object_id: id,
                    type_tag: COIN.into(),
                    payload: total,
                    owner: owner.expect("non-empty merge"),
                });
            }
            Command::CreateObject { type_tag, payload, owner } => {
                check_owner_allowed(owner, ctx)?;
                let id = alloc.object_id();
                env.insert(id.clone(), OwnedObject {
                    object_id: id,
                    type_tag: type_tag.clone(),
                    payload: *payload,
                    owner: owner.clone(),
                });
            }
            Command::CreateReactiveActor { program, init } => {
                if !matches!(ctx, ExecContext::UserCode) {
                    return Err(ExecError::Forbidden);
                }
                programs::parse_program(program)?;
                out.new_actors.push(NewActor {
                    actor: alloc.actor_id(),
                    program: program.clone(),
                    init: *init,
                });
            }
            Command::SpawnTx { recipient, consume, call } => {
                let ra_self = match ctx {
                    ExecContext::RaStage(id) => id,
                    ExecContext::UserCode => return Err(ExecError::Forbidden),
                };
                if recipient.kind != ActorKind::Reactive {
                    return Err(ExecError::Forbidden);
                }
                let mut consumed = Vec::new();
                for oid in consume {
                    let obj =
                        env.remove(oid).ok_or_else(|| ExecError::UnknownObject(oid.clone()))?;
                    consumed.push(obj);
                }
                out.rara_txs.push(Transaction::new(TxBody::RaRa {
                    sender: ra_self.clone(),
                    recipient: recipient.clone(),
                    consumed,
                    call: call.clone(),
                    code_post: vec![],
                }));
            }
        }
    }
    Ok(out)
}

// Objects may be created at user actors anywhere; at a reactive actor only
// by that actor's own execution.
fn check_owner_allowed(owner: &ActorId, ctx: ExecContext<'_>) -> Result<(), ExecError> {
    match owner.kind {
        ActorKind::User => Ok(()),
        ActorKind::Reactive => match ctx {
            ExecContext::RaStage(me) if me == owner => Ok(()),
            _ => Err(ExecError::Forbidden),
        },
    }
}

/// Runs a full user transaction's code over its consumed objects.
///
/// Returns total effects: surviving non-input objects become created
/// objects; inputs are consumed whether referenced or not.
pub fn execute_ua(tx: &Transaction) -> Effects {
    let TxBody::Ua { consumed, code, .. } = &tx.body else {
        return Effects::failure();
    };
    let mut env = env_from(consumed);
    let mut alloc = Allocator::new(tx.tx_id());
    match execute_code(code, &mut env, &mut alloc, ExecContext::UserCode) {
        Ok(stage) => Effects {
            created: surviving(env, consumed),
            rara_txs: stage.rara_txs,
            new_actors: stage.new_actors,
            failed: false,
        },
        Err(_) => Effects::failure(),
    }
}

/// Runs the three stages of a recipient-bearing transaction at reactive
/// actor `ra`: pre-code over the consumed objects, the call against the
/// program state, then post-code over what the call left behind.
///
/// `ra_owned` is a read-only view of the actor's owned objects; the call may
/// list some of them as additionally consumed (for example to pay out from a
/// vault), and the caller settles that.
pub fn execute_at_ra(
    tx: &Transaction,
    program: ProgramKind,
    state: &ProgramState,
    ra: &ActorId,
    ra_owned: &ObjectEnv,
) -> (ProgramState, Effects, Vec<ObjectId>) {
    let (consumed, call, code_pre, code_post) = match &tx.body {
        TxBody::UaRa { consumed, call, code_pre, code_post, .. } => {
            (consumed, call, code_pre.as_slice(), code_post.as_slice())
        }
        TxBody::RaRa { consumed, call, code_post, .. } => {
            (consumed, call, [].as_slice(), code_post.as_slice())
        }
        TxBody::Ua { .. } => return (state.clone(), Effects::failure(), vec![]),
    };

    let mut env = env_from(consumed);
    let mut alloc = Allocator::new(tx.tx_id());
    let mut rara_txs = Vec::new();
    let mut new_actors = Vec::new();

    match execute_code(code_pre, &mut env, &mut alloc, ExecContext::RaStage(ra)) {
        Ok(stage) => {
            rara_txs.extend(stage.rara_txs);
            new_actors.extend(stage.new_actors);
        }
        Err(_) => return (state.clone(), Effects::failure(), vec![]),
    }

    let outcome = match programs::handle_call(
        program,
        state,
        call,
        &mut env,
        ra,
        tx.sender(),
        ra_owned,
        &mut alloc,
    ) {
        Ok(o) => o,
        Err(_) => return (state.clone(), Effects::failure(), vec![]),
    };
    rara_txs.extend(outcome.rara_txs.clone());

    match execute_code(code_post, &mut env, &mut alloc, ExecContext::RaStage(ra)) {
        Ok(stage) => {
            rara_txs.extend(stage.rara_txs);
            new_actors.extend(stage.new_actors);
        }
        Err(_) => return (state.clone(), Effects::failure(), vec![]),
    }

    let effects = Effects {
        created: surviving(env, consumed),
        rara_txs,
        new_actors,
        failed: false,
    };
    (outcome.state, effects, outcome.consumed_ra_objects)
}

fn surviving(env: ObjectEnv, inputs: &[OwnedObject]) -> Vec<OwnedObject> {
    let input_ids: std::collections::BTreeSet<&ObjectId> =
        inputs.iter().map(|o| &o.object_id).collect();
    env.into_values().filter(|o| !input_ids.contains(&o.object_id)).collect()
}
