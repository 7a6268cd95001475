//! Deterministic simulator for a per-actor consensus system over a
//! replicated actor model.
//!
//! Validators replicate every actor as an entity. Plain user transactions
//! go through a per-user optimistic broadcast; transactions touching
//! reactive actors go through per-actor optimistic block agreement, with a
//! quorum-consensus slow path behind both. The [`harness`] runs scenarios
//! under seeded adversarial schedules, checks the protocol's safety and
//! liveness properties on the resulting traces, and can exhaustively
//! enumerate schedules for tiny configurations.

pub mod crypto;
pub mod entities;
pub mod harness;
pub mod model;
pub mod protocol;
pub mod sim;
pub mod vm;

pub use model::{derive_quorums, Quorums, SystemParams};
