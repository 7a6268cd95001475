//! Protocol state machines.
//!
//! Each agreement primitive is a deterministic message-in/message-out
//! machine with no direct access to the network or clock. Entities own the
//! machines, wire their outputs to links and timers, and feed deliveries
//! back in. This keeps every machine testable in isolation and reusable by
//! the harness oracles.

pub mod messages;
pub mod poa;
pub mod pob;
pub mod qc;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, KeyStore};
use crate::model::{Quorums, SystemParams, ValidatorId};

/// How a decision was reached, for traces and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidePath {
    /// Own fast quorum of votes.
    Fast,
    /// A forwarded fast-decision proof.
    Proof,
    /// The failover consensus route.
    Slow,
}

impl DecidePath {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecidePath::Fast => "fast",
            DecidePath::Proof => "proof",
            DecidePath::Slow => "slow",
        }
    }
}

/// Read-only context handed to machine calls.
pub struct ProtoCtx<'a> {
    pub me: ValidatorId,
    pub params: &'a SystemParams,
    pub quorums: &'a Quorums,
    pub keys: &'a KeyStore,
    pub my_key: &'a KeyPair,
}

impl<'a> ProtoCtx<'a> {
    pub fn n(&self) -> u32 {
        self.params.n
    }
}
