//! Domain types shared by every protocol module: identifiers, owned
//! objects, transactions, blocks, votes and decision proofs.

pub mod canon;
pub mod params;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::vm::{CallSpec, Command};
use canon::{put_slice, put_str, put_u64, put_u8, CanonicalEncode};
pub use params::{derive_quorums, ParamError, Quorums, SystemParams};

/// Simulated time, in abstract ticks.
pub type SimTime = u64;

/// Validator index in `0..n`.
pub type ValidatorId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActorKind {
    User,
    Reactive,
}

/// Identifies a user or reactive actor. The kind is part of the identity and
/// never changes; user actor names are bound to exactly one signing key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActorId {
    pub kind: ActorKind,
    pub name: String,
}

impl ActorId {
    pub fn user(name: impl Into<String>) -> Self {
        ActorId { kind: ActorKind::User, name: name.into() }
    }

    pub fn reactive(name: impl Into<String>) -> Self {
        ActorId { kind: ActorKind::Reactive, name: name.into() }
    }

    pub fn is_user(&self) -> bool {
        self.kind == ActorKind::User
    }

    pub fn is_reactive(&self) -> bool {
        self.kind == ActorKind::Reactive
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl CanonicalEncode for ActorId {
    fn encode(&self, out: &mut Vec<u8>) {
        put_u8(out, match self.kind { ActorKind::User => 0, ActorKind::Reactive => 1 });
        put_str(out, &self.name);
    }
}

/// Globally unique object identifier. Genesis objects use readable names;
/// created objects derive from the creating transaction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId(pub String);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl CanonicalEncode for ObjectId {
    fn encode(&self, out: &mut Vec<u8>) {
        put_str(out, &self.0);
    }
}

/// A transferable, consumable resource owned by exactly one actor at a time.
/// Consumed objects never reappear and ids are never reused.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OwnedObject {
    pub object_id: ObjectId,
    pub type_tag: String,
    pub payload: u64,
    pub owner: ActorId,
}

impl OwnedObject {
    pub fn coin(id: impl Into<String>, amount: u64, owner: ActorId) -> Self {
        OwnedObject { object_id: ObjectId(id.into()), type_tag: "coin".into(), payload: amount, owner }
    }
}

impl CanonicalEncode for OwnedObject {
    fn encode(&self, out: &mut Vec<u8>) {
        self.object_id.encode(out);
        put_str(out, &self.type_tag);
        put_u64(out, self.payload);
        self.owner.encode(out);
    }
}

/// Content hash identifying a transaction. Equality of transactions is
/// equality of this hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub [u8; 32]);

impl TxId {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.short())
    }
}

impl CanonicalEncode for TxId {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

/// Transaction body. User variants carry a sequence number; reactive-actor
/// transactions take their order from the instance stream and omit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxBody {
    /// User transaction with no recipient.
    Ua {
        sender: ActorId,
        sn: u64,
        consumed: Vec<OwnedObject>,
        code: Vec<Command>,
    },
    /// User transaction calling a reactive actor.
    UaRa {
        sender: ActorId,
        sn: u64,
        recipient: ActorId,
        consumed: Vec<OwnedObject>,
        code_pre: Vec<Command>,
        call: CallSpec,
        code_post: Vec<Command>,
    },
    /// Transaction emitted by a reactive actor toward another one.
    RaRa {
        sender: ActorId,
        recipient: ActorId,
        consumed: Vec<OwnedObject>,
        call: CallSpec,
        code_post: Vec<Command>,
    },
}

impl CanonicalEncode for TxBody {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            TxBody::Ua { sender, sn, consumed, code } => {
                put_u8(out, 0);
                sender.encode(out);
                put_u64(out, *sn);
                put_slice(out, consumed);
                put_slice(out, code);
            }
            TxBody::UaRa { sender, sn, recipient, consumed, code_pre, call, code_post } => {
                put_u8(out, 1);
                sender.encode(out);
                put_u64(out, *sn);
                recipient.encode(out);
                put_slice(out, consumed);
                put_slice(out, code_pre);
                call.encode(out);
                put_slice(out, code_post);
            }
            TxBody::RaRa { sender, recipient, consumed, call, code_post } => {
                put_u8(out, 2);
                sender.encode(out);
                recipient.encode(out);
                put_slice(out, consumed);
                call.encode(out);
                put_slice(out, code_post);
            }
        }
    }
}

/// A transaction plus its cached content hash. The signature (user variants
/// only) covers the body hash and is not part of the identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transaction {
    pub body: TxBody,
    pub signature: Option<crate::crypto::Signature>,
    tx_id: TxId,
}

impl PartialEq for Transaction {
    fn eq(&self, other: &Self) -> bool {
        self.tx_id == other.tx_id
    }
}

impl Eq for Transaction {}

impl PartialOrd for Transaction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Transaction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.tx_id.cmp(&other.tx_id)
    }
}

impl Transaction {
    pub fn new(body: TxBody) -> Self {
        let tx_id = TxId(sha256(&body.canonical_bytes()));
        Transaction { body, signature: None, tx_id }
    }

    pub fn signed(body: TxBody, key: &crate::crypto::KeyPair) -> Self {
        let mut tx = Transaction::new(body);
        tx.signature = Some(key.sign(&tx.tx_id.0));
        tx
    }

    pub fn tx_id(&self) -> TxId {
        self.tx_id
    }

    pub fn sender(&self) -> &ActorId {
        match &self.body {
            TxBody::Ua { sender, .. }
            | TxBody::UaRa { sender, .. }
            | TxBody::RaRa { sender, .. } => sender,
        }
    }

    /// Sequence number; absent on reactive-actor transactions.
    pub fn sn(&self) -> Option<u64> {
        match &self.body {
            TxBody::Ua { sn, .. } | TxBody::UaRa { sn, .. } => Some(*sn),
            TxBody::RaRa { .. } => None,
        }
    }

    pub fn recipient(&self) -> Option<&ActorId> {
        match &self.body {
            TxBody::Ua { .. } => None,
            TxBody::UaRa { recipient, .. } | TxBody::RaRa { recipient, .. } => Some(recipient),
        }
    }

    pub fn consumed(&self) -> &[OwnedObject] {
        match &self.body {
            TxBody::Ua { consumed, .. }
            | TxBody::UaRa { consumed, .. }
            | TxBody::RaRa { consumed, .. } => consumed,
        }
    }

    pub fn is_ua(&self) -> bool {
        matches!(self.body, TxBody::Ua { .. })
    }

    pub fn is_ua_ra(&self) -> bool {
        matches!(self.body, TxBody::UaRa { .. })
    }

    pub fn is_ra_ra(&self) -> bool {
        matches!(self.body, TxBody::RaRa { .. })
    }

    /// True for transactions issued by a user actor (the ones that carry a
    /// sequence number and a signature).
    pub fn is_user_tx(&self) -> bool {
        !self.is_ra_ra()
    }
}

/// Two transactions conflict iff both are user transactions from the same
/// sender with the same sequence number but different content.
pub fn conflicts(a: &Transaction, b: &Transaction) -> bool {
    match (a.sn(), b.sn()) {
        (Some(sa), Some(sb)) => sa == sb && a.sender() == b.sender() && a.tx_id() != b.tx_id(),
        _ => false,
    }
}

/// Orders a set of transactions deterministically by content hash. Any two
/// permutations of the same set produce the same sequence.
pub fn canonical_order(txs: impl IntoIterator<Item = Transaction>) -> Vec<Transaction> {
    let mut v: Vec<Transaction> = txs.into_iter().collect();
    v.sort();
    v.dedup();
    v
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockHash(pub [u8; 32]);

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(&self.0[..6]))
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockHash({})", hex::encode(&self.0[..6]))
    }
}

impl CanonicalEncode for BlockHash {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

/// Set of transactions decided in one agreement instance, stored in its
/// canonical order. The hash covers the instance number so empty blocks of
/// different instances stay distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub instance: u64,
    txs: Vec<Transaction>,
}

impl Block {
    pub fn new(instance: u64, txs: impl IntoIterator<Item = Transaction>) -> Self {
        Block { instance, txs: canonical_order(txs) }
    }

    pub fn empty(instance: u64) -> Self {
        Block { instance, txs: Vec::new() }
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.txs.iter().any(|t| t.tx_id() == id)
    }

    pub fn without(&self, drop: &std::collections::BTreeSet<TxId>) -> Block {
        Block {
            instance: self.instance,
            txs: self.txs.iter().filter(|t| !drop.contains(&t.tx_id())).cloned().collect(),
        }
    }

    pub fn hash(&self) -> BlockHash {
        let mut bytes = Vec::new();
        put_u64(&mut bytes, self.instance);
        for tx in &self.txs {
            tx.tx_id().encode(&mut bytes);
        }
        BlockHash(sha256(&bytes))
    }
}

/// What a vote endorses: a per-user broadcast slot or a reactive-actor
/// agreement instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VoteScope {
    /// Broadcast of user transactions, keyed by (actor, sequence number).
    Pob { actor: ActorId, sn: u64 },
    /// Block agreement for a reactive actor, keyed by (actor, instance).
    Poa { actor: ActorId, instance: u64 },
}

impl fmt::Display for VoteScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteScope::Pob { actor, sn } => write!(f, "pob:{}/{}", actor, sn),
            VoteScope::Poa { actor, instance } => write!(f, "poa:{}/{}", actor, instance),
        }
    }
}

impl CanonicalEncode for VoteScope {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            VoteScope::Pob { actor, sn } => {
                put_u8(out, 0);
                actor.encode(out);
                put_u64(out, *sn);
            }
            VoteScope::Poa { actor, instance } => {
                put_u8(out, 1);
                actor.encode(out);
                put_u64(out, *instance);
            }
        }
    }
}

/// Digest of the value a vote endorses. `None` is the explicit negative vote.
pub type VoteValue = Option<[u8; 32]>;

pub fn vote_value_for_tx(tx: &Transaction) -> VoteValue {
    Some(tx.tx_id().0)
}

pub fn vote_value_for_block(b: &Block) -> VoteValue {
    Some(b.hash().0)
}

/// Signed endorsement of a value within one scope. An honest voter emits at
/// most one value per scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub scope: VoteScope,
    pub value: VoteValue,
    pub voter: ValidatorId,
    pub signature: crate::crypto::Signature,
}

impl Vote {
    pub fn signing_bytes(scope: &VoteScope, value: &VoteValue) -> Vec<u8> {
        let mut out = Vec::new();
        put_str(&mut out, "vote");
        scope.encode(&mut out);
        match value {
            None => put_u8(&mut out, 0),
            Some(d) => {
                put_u8(&mut out, 1);
                out.extend_from_slice(d);
            }
        }
        out
    }
}

/// The decided value carried inside a proof, with full bytes so a receiver
/// can act on it without having seen the value before.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProofValue {
    Tx(Transaction),
    Block(Block),
}

impl ProofValue {
    pub fn digest(&self) -> [u8; 32] {
        match self {
            ProofValue::Tx(tx) => tx.tx_id().0,
            ProofValue::Block(b) => b.hash().0,
        }
    }
}

/// A transferable fast-decision proof: at least a fast quorum of distinct
/// valid votes for one value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionProof {
    pub scope: VoteScope,
    pub value: ProofValue,
    pub votes: Vec<Vote>,
}
