//! Wire messages exchanged between entities, and timer identities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::Signature;
use crate::model::canon::{put_str, put_u64, put_u8, CanonicalEncode};
use crate::model::{
    ActorId, Block, BlockHash, DecisionProof, ObjectId, OwnedObject, Transaction, TxId,
    ValidatorId, VoteScope,
};
use crate::vm::Effects;

/// Scope of a slow-path consensus instance: one block agreement of a
/// reactive actor, or one per-user transaction slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QcScope {
    Poa { actor: ActorId, instance: u64 },
    Ta { actor: ActorId, sn: u64 },
}

impl QcScope {
    /// True for the single-transaction flavor, where blocks carry at most
    /// one transaction and the leader derivation picks a single winner.
    pub fn is_single_tx(&self) -> bool {
        matches!(self, QcScope::Ta { .. })
    }
}

impl fmt::Display for QcScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QcScope::Poa { actor, instance } => write!(f, "qc:{actor}/{instance}"),
            QcScope::Ta { actor, sn } => write!(f, "ta:{actor}/{sn}"),
        }
    }
}

impl CanonicalEncode for QcScope {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            QcScope::Poa { actor, instance } => {
                put_u8(out, 0);
                actor.encode(out);
                put_u64(out, *instance);
            }
            QcScope::Ta { actor, sn } => {
                put_u8(out, 1);
                actor.encode(out);
                put_u64(out, *sn);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedProposal {
    pub proposer: ValidatorId,
    pub block: Block,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcSig {
    pub voter: ValidatorId,
    pub signature: Signature,
}

/// Proof that a value was locked in some view: a round quorum of prepare
/// signatures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockCert {
    pub view: u64,
    pub value: Block,
    pub prepares: Vec<QcSig>,
}

/// Why a leader value is acceptable: either it was derived from a carried
/// set of signed proposals (the threshold rule recomputable by any
/// verifier), or it re-proposes a locked value with its lock certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Justification {
    Derived { proposals: Vec<SignedProposal> },
    Lock(LockCert),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QcBody {
    Proposal(SignedProposal),
    LeaderValue { view: u64, value: Block, justification: Justification },
    Prepare { view: u64, value: BlockHash, voter: ValidatorId, signature: Signature },
    Commit { view: u64, value: BlockHash, voter: ValidatorId, signature: Signature },
    ViewChange { view: u64, lock: Option<LockCert>, voter: ValidatorId, signature: Signature },
    DecideCert { view: u64, value: Block, commits: Vec<QcSig> },
}

impl QcBody {
    pub fn kind_str(&self) -> &'static str {
        match self {
            QcBody::Proposal(_) => "QcProposal",
            QcBody::LeaderValue { .. } => "QcLeaderValue",
            QcBody::Prepare { .. } => "QcPrepare",
            QcBody::Commit { .. } => "QcCommit",
            QcBody::ViewChange { .. } => "QcViewChange",
            QcBody::DecideCert { .. } => "QcDecideCert",
        }
    }
}

pub fn qc_proposal_bytes(scope: &QcScope, block: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, "qc-proposal");
    scope.encode(&mut out);
    block.hash().encode(&mut out);
    out
}

pub fn qc_phase_bytes(scope: &QcScope, phase: &str, view: u64, value: &BlockHash) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, phase);
    scope.encode(&mut out);
    put_u64(&mut out, view);
    value.encode(&mut out);
    out
}

pub fn qc_view_change_bytes(scope: &QcScope, view: u64) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, "qc-view-change");
    scope.encode(&mut out);
    put_u64(&mut out, view);
    out
}

pub fn poa_proposal_bytes(scope: &VoteScope, block: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, "poa-proposal");
    scope.encode(&mut out);
    block.hash().encode(&mut out);
    out
}

/// A broadcast vote on a per-user transaction slot. Carries the endorsed
/// transaction in full so a fast quorum is actionable anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UaVote {
    pub actor: ActorId,
    pub sn: u64,
    pub value: Option<Transaction>,
    pub voter: ValidatorId,
    pub signature: Signature,
}

/// A broadcast vote in a reactive-actor agreement instance, always carrying
/// the voter's full pool as its fallback block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoaVoteMsg {
    pub actor: ActorId,
    pub instance: u64,
    pub vote: Option<Block>,
    pub fallback: Block,
    pub voter: ValidatorId,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoaProposal {
    pub actor: ActorId,
    pub instance: u64,
    pub block: Block,
    pub proposer: ValidatorId,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientNotify {
    pub actor: ActorId,
    pub sn: u64,
    pub tx_id: TxId,
    pub consumed: Vec<ObjectId>,
    pub created: Vec<OwnedObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    /// User transaction broadcast (both plain and recipient-bearing).
    UaTx(Transaction),
    UaVote(UaVote),
    UaProof(DecisionProof),
    PoaProposal(PoaProposal),
    PoaVote(PoaVoteMsg),
    PoaProof(DecisionProof),
    FpLockReq { requester: ActorId, instance: u64, tx: Transaction },
    FpLockResp { instance: u64, tx_id: TxId, ok: bool },
    SpLockReq { requester: ActorId, instance: u64, phase: u8, tx: Transaction },
    SpLockResp { instance: u64, phase: u8, tx_id: TxId, ok: bool },
    /// After slow-path consensus: ask the sender's user-actor entity to put
    /// this transaction through its per-slot agreement.
    UaInitiate { requester: ActorId, instance: u64, tx: Transaction },
    TaResult { instance: u64, tx_id: TxId, ok: bool },
    Qc { scope: QcScope, body: QcBody },
    /// Execution effects reported from a reactive-actor entity to the
    /// sending user's entity on the same validator.
    Executed { tx: Transaction, effects: Effects },
    /// An object created for an actor hosted by another entity of the same
    /// validator.
    ObjectCredit { object: OwnedObject },
    ClientNotify(ClientNotify),
}

impl Message {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Message::UaTx(_) => "UaTx",
            Message::UaVote(_) => "UaVote",
            Message::UaProof(_) => "UaProof",
            Message::PoaProposal(_) => "PoaProposal",
            Message::PoaVote(_) => "PoaVote",
            Message::PoaProof(_) => "PoaProof",
            Message::FpLockReq { .. } => "FpLockReq",
            Message::FpLockResp { .. } => "FpLockResp",
            Message::SpLockReq { .. } => "SpLockReq",
            Message::SpLockResp { .. } => "SpLockResp",
            Message::UaInitiate { .. } => "UaInitiate",
            Message::TaResult { .. } => "TaResult",
            Message::Qc { body, .. } => body.kind_str(),
            Message::Executed { .. } => "Executed",
            Message::ObjectCredit { .. } => "ObjectCredit",
            Message::ClientNotify(_) => "ClientNotify",
        }
    }

    /// True for messages belonging to the per-user broadcast primitive.
    pub fn is_pob_kind(&self) -> bool {
        matches!(self, Message::UaTx(_) | Message::UaVote(_) | Message::UaProof(_))
    }

    /// Short digest for traces.
    pub fn digest(&self) -> String {
        match self {
            Message::UaTx(tx) => format!("UaTx({})", tx.tx_id()),
            Message::UaVote(v) => match &v.value {
                Some(tx) => format!("UaVote({}/{} {})", v.actor, v.sn, tx.tx_id()),
                None => format!("UaVote({}/{} bot)", v.actor, v.sn),
            },
            Message::UaProof(p) => format!("UaProof({})", p.scope),
            Message::PoaProposal(p) => {
                format!("PoaProposal({}/{} {})", p.actor, p.instance, p.block.hash())
            }
            Message::PoaVote(v) => match &v.vote {
                Some(b) => format!("PoaVote({}/{} {})", v.actor, v.instance, b.hash()),
                None => format!("PoaVote({}/{} bot)", v.actor, v.instance),
            },
            Message::PoaProof(p) => format!("PoaProof({})", p.scope),
            Message::FpLockReq { tx, instance, .. } => {
                format!("FpLockReq(k={} {})", instance, tx.tx_id())
            }
            Message::FpLockResp { tx_id, ok, .. } => format!("FpLockResp({tx_id} {ok})"),
            Message::SpLockReq { tx, phase, .. } => {
                format!("SpLockReq(ph={} {})", phase, tx.tx_id())
            }
            Message::SpLockResp { tx_id, ok, phase, .. } => {
                format!("SpLockResp(ph={phase} {tx_id} {ok})")
            }
            Message::UaInitiate { tx, .. } => format!("UaInitiate({})", tx.tx_id()),
            Message::TaResult { tx_id, ok, .. } => format!("TaResult({tx_id} {ok})"),
            Message::Qc { scope, body } => format!("{}({})", body.kind_str(), scope),
            Message::Executed { tx, .. } => format!("Executed({})", tx.tx_id()),
            Message::ObjectCredit { object } => format!("ObjectCredit({})", object.object_id),
            Message::ClientNotify(n) => format!("ClientNotify({}/{})", n.actor, n.sn),
        }
    }
}

/// Identity of a pending timer. Rescheduling invalidates older tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimerId {
    /// Round timer for one agreement instance of a reactive actor.
    PoaRound { actor: ActorId, instance: u64 },
    /// Grace period while a fast-path lock waits for execution
    /// preconditions.
    FpGrace { user: ActorId, sn: u64, requester: ActorId, instance: u64 },
    QcView { scope: QcScope, view: u64 },
    QcGrace { scope: QcScope, view: u64 },
    /// A withholding Byzantine validator flushing its buffer.
    ByzRelease,
    ClientScript { index: usize },
}
