//! The built-in reactive-actor program library.
//!
//! Programs are pure handlers: `(state, call, inputs) -> (state', outcome)`.
//! Scenarios pick them by name; there is no user-supplied bytecode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Allocator, CallSpec, ExecError, ObjectEnv, COIN};
use crate::model::{ActorId, ObjectId, OwnedObject, Transaction, TxBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramKind {
    Counter,
    Vault,
    Marketplace,
}

pub fn parse_program(name: &str) -> Result<ProgramKind, ExecError> {
    match name {
        "counter" => Ok(ProgramKind::Counter),
        "vault" => Ok(ProgramKind::Vault),
        "marketplace" => Ok(ProgramKind::Marketplace),
        other => Err(ExecError::UnknownProgram(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listing {
    pub seller: ActorId,
    pub price: u64,
    pub type_tag: String,
    pub payload: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgramState {
    Counter(i64),
    Vault { balances: BTreeMap<String, u64> },
    Marketplace { listings: BTreeMap<ObjectId, Listing> },
}

impl ProgramState {
    pub fn initial(kind: ProgramKind, init: i64) -> Self {
        match kind {
            ProgramKind::Counter => ProgramState::Counter(init),
            ProgramKind::Vault => ProgramState::Vault { balances: BTreeMap::new() },
            ProgramKind::Marketplace => ProgramState::Marketplace { listings: BTreeMap::new() },
        }
    }

    pub fn digest_string(&self) -> String {
        match self {
            ProgramState::Counter(v) => format!("counter={v}"),
            ProgramState::Vault { balances } => {
                let parts: Vec<String> =
                    balances.iter().map(|(k, v)| format!("{k}:{v}")).collect();
                format!("vault[{}]", parts.join(","))
            }
            ProgramState::Marketplace { listings } => format!("market[{}]", listings.len()),
        }
    }
}

/// What one call did: the new state, reactive-actor transactions it
/// emitted, plus any of the actor's own objects it spent.
pub struct Outcome {
    pub state: ProgramState,
    pub rara_txs: Vec<Transaction>,
    pub consumed_ra_objects: Vec<ObjectId>,
}

fn coins_total(env: &ObjectEnv) -> u64 {
    env.values().filter(|o| o.type_tag == COIN).map(|o| o.payload).sum()
}

fn drain_coins(env: &mut ObjectEnv) -> u64 {
    let ids: Vec<ObjectId> = env
        .iter()
        .filter(|(_, o)| o.type_tag == COIN)
        .map(|(id, _)| id.clone())
        .collect();
    let mut total = 0;
    for id in ids {
        total += env.remove(&id).map(|o| o.payload).unwrap_or(0);
    }
    total
}

/// Picks the actor's own coins worth at least `amount`, smallest id first.
fn pick_ra_coins(ra_owned: &ObjectEnv, amount: u64) -> Result<(Vec<ObjectId>, u64), ExecError> {
    let mut picked = Vec::new();
    let mut total = 0u64;
    if amount == 0 {
        return Ok((picked, total));
    }
    for (id, obj) in ra_owned {
        if obj.type_tag != COIN {
            continue;
        }
        picked.push(id.clone());
        total += obj.payload;
        if total >= amount {
            return Ok((picked, total));
        }
    }
    Err(ExecError::InsufficientBalance)
}

#[allow(clippy::too_many_arguments)]
pub fn handle_call(
    kind: ProgramKind,
    state: &ProgramState,
    call: &CallSpec,
    env: &mut ObjectEnv,
    ra: &ActorId,
    sender: &ActorId,
    ra_owned: &ObjectEnv,
    alloc: &mut Allocator,
) -> Result<Outcome, ExecError> {
    match (kind, state) {
        (ProgramKind::Counter, ProgramState::Counter(v)) => {
            counter(*v, call).map(|s| Outcome {
                state: s,
                rara_txs: vec![],
                consumed_ra_objects: vec![],
            })
        }
        (ProgramKind::Vault, ProgramState::Vault { balances }) => {
            vault(balances, call, env, ra, sender, ra_owned, alloc)
        }
        (ProgramKind::Marketplace, ProgramState::Marketplace { listings }) => {
            marketplace(listings, call, env, ra, sender, alloc)
        }
        _ => Err(ExecError::UnknownFunction(call.function.clone())),
    }
}

fn counter(value: i64, call: &CallSpec) -> Result<ProgramState, ExecError> {
    match call.function.as_str() {
        "inc" => Ok(ProgramState::Counter(value + 1)),
        "add" => {
            let k = call
                .args
                .first()
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("add".into()))?;
            Ok(ProgramState::Counter(value + k as i64))
        }
        "set" => {
            let k = call
                .args
                .first()
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("set".into()))?;
            Ok(ProgramState::Counter(k as i64))
        }
        other => Err(ExecError::UnknownFunction(other.to_string())),
    }
}

fn vault(
    balances: &BTreeMap<String, u64>,
    call: &CallSpec,
    env: &mut ObjectEnv,
    ra: &ActorId,
    sender: &ActorId,
    ra_owned: &ObjectEnv,
    alloc: &mut Allocator,
) -> Result<Outcome, ExecError> {
    let mut balances = balances.clone();
    match call.function.as_str() {
        // Credits the sender with every input coin; the value moves into a
        // fresh coin held by the vault itself.
        "deposit" | "receive" => {
            let amount = drain_coins(env);
            *balances.entry(sender.name.clone()).or_default() += amount;
            if amount > 0 {
                let id = alloc.object_id();
                env.insert(id.clone(), OwnedObject {
                    object_id: id,
                    type_tag: COIN.into(),
                    payload: amount,
                    owner: ra.clone(),
                });
            }
            Ok(Outcome { state: ProgramState::Vault { balances }, rara_txs: vec![], consumed_ra_objects: vec![] })
        }
        // Pays `amount` back to the caller out of vault-held coins.
        "withdraw" => {
            let amount = call
                .args
                .first()
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("withdraw".into()))?;
            let have = balances.get(&sender.name).copied().unwrap_or(0);
            if have < amount {
                return Err(ExecError::InsufficientBalance);
            }
            let extra = coins_total(env);
            let (spent_ids, spent_total) = pick_ra_coins(ra_owned, amount.saturating_sub(extra))?;
            balances.insert(sender.name.clone(), have - amount);
            let payout = alloc.object_id();
            env.insert(payout.clone(), OwnedObject {
                object_id: payout,
                type_tag: COIN.into(),
                payload: amount,
                owner: sender.clone(),
            });
            let change = (spent_total + extra).saturating_sub(amount);
            if change > 0 {
                drain_coins(env);
                let id = alloc.object_id();
                env.insert(id.clone(), OwnedObject {
                    object_id: id,
                    type_tag: COIN.into(),
                    payload: change,
                    owner: ra.clone(),
                });
            }
            Ok(Outcome {
                state: ProgramState::Vault { balances },
                rara_txs: vec![],
                consumed_ra_objects: spent_ids,
            })
        }
        // Moves `amount` of the caller's balance into another reactive
        // actor by emitting a coin-carrying transaction to it.
        "forward" => {
            let dest = call
                .args
                .first()
                .and_then(|v| v.as_str())
                .ok_or_else(|| ExecError::BadArgs("forward".into()))?;
            let amount = call
                .args
                .get(1)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("forward".into()))?;
            let have = balances.get(&sender.name).copied().unwrap_or(0);
            let extra = drain_coins(env);
            let from_balance = amount.saturating_sub(extra);
            if have < from_balance {
                return Err(ExecError::InsufficientBalance);
            }
            balances.insert(sender.name.clone(), have - from_balance);
            let (spent_ids, spent_total) = pick_ra_coins(ra_owned, from_balance)?;
            let carried = alloc.object_id();
            let carried_obj = OwnedObject {
                object_id: carried.clone(),
                type_tag: COIN.into(),
                payload: amount,
                owner: ra.clone(),
            };
            env.insert(carried.clone(), carried_obj.clone());
            let change = (spent_total + extra).saturating_sub(amount);
            if change > 0 {
                let id = alloc.object_id();
                env.insert(id.clone(), OwnedObject {
                    object_id: id,
                    type_tag: COIN.into(),
                    payload: change,
                    owner: ra.clone(),
                });
            }
            // The carried coin first becomes a created object of this
            // actor; emitting the transaction below deducts it again.
            let rara = Transaction::new(TxBody::RaRa {
                sender: ra.clone(),
                recipient: ActorId::reactive(dest),
                consumed: vec![carried_obj],
                call: CallSpec { function: "receive".into(), args: vec![] },
                code_post: vec![],
            });
            Ok(Outcome {
                state: ProgramState::Vault { balances },
                rara_txs: vec![rara],
                consumed_ra_objects: spent_ids,
            })
        }
        other => Err(ExecError::UnknownFunction(other.to_string())),
    }
}

fn marketplace(
    listings: &BTreeMap<ObjectId, Listing>,
    call: &CallSpec,
    env: &mut ObjectEnv,
    ra: &ActorId,
    sender: &ActorId,
    alloc: &mut Allocator,
) -> Result<Outcome, ExecError> {
    let mut listings = listings.clone();
    match call.function.as_str() {
        "list" => {
            let price = call
                .args
                .first()
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("list".into()))?;
            let item_id = env
                .iter()
                .find(|(_, o)| o.type_tag != COIN)
                .map(|(id, _)| id.clone())
                .ok_or_else(|| ExecError::BadArgs("list".into()))?;
            let item = env.remove(&item_id).expect("present");
            let held = alloc.object_id();
            env.insert(held.clone(), OwnedObject {
                object_id: held.clone(),
                type_tag: item.type_tag.clone(),
                payload: item.payload,
                owner: ra.clone(),
            });
            listings.insert(held, Listing {
                seller: sender.clone(),
                price,
                type_tag: item.type_tag,
                payload: item.payload,
            });
            Ok(Outcome { state: ProgramState::Marketplace { listings }, rara_txs: vec![], consumed_ra_objects: vec![] })
        }
        "buy" => {
            // Listings are addressed by item payload; ids are derived and
            // not knowable when the buyer writes the call.
            let wanted_payload = call
                .args
                .first()
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ExecError::BadArgs("buy".into()))?;
            let wanted = listings
                .iter()
                .find(|(_, l)| l.payload == wanted_payload)
                .map(|(id, _)| id.clone())
                .ok_or_else(|| ExecError::BadArgs("buy: no such listing".into()))?;
            let listing = listings.remove(&wanted).ok_or(ExecError::UnknownObject(wanted.clone()))?;
            let paid = drain_coins(env);
            if paid < listing.price {
                return Err(ExecError::InsufficientBalance);
            }
            let item = alloc.object_id();
            env.insert(item.clone(), OwnedObject {
                object_id: item,
                type_tag: listing.type_tag.clone(),
                payload: listing.payload,
                owner: sender.clone(),
            });
            let proceeds = alloc.object_id();
            env.insert(proceeds.clone(), OwnedObject {
                object_id: proceeds,
                type_tag: COIN.into(),
                payload: listing.price,
                owner: listing.seller.clone(),
            });
            if paid > listing.price {
                let change = alloc.object_id();
                env.insert(change.clone(), OwnedObject {
                    object_id: change,
                    type_tag: COIN.into(),
                    payload: paid - listing.price,
                    owner: sender.clone(),
                });
            }
            Ok(Outcome {
                state: ProgramState::Marketplace { listings },
                rara_txs: vec![],
                consumed_ra_objects: vec![wanted],
            })
        }
        other => Err(ExecError::UnknownFunction(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TxId;
    use crate::vm::{env_from, execute_at_ra, Value};

    fn alice() -> ActorId {
        ActorId::user("alice")
    }

    fn vault_actor() -> ActorId {
        ActorId::reactive("V")
    }

    fn ua_ra(call: CallSpec, consumed: Vec<OwnedObject>) -> Transaction {
        Transaction::new(TxBody::UaRa {
            sender: alice(),
            sn: 0,
            recipient: vault_actor(),
            consumed,
            code_pre: vec![],
            call,
            code_post: vec![],
        })
    }

    #[test]
    fn counter_inc_from_zero() {
        let tx = ua_ra(CallSpec { function: "inc".into(), args: vec![] }, vec![]);
        let (state, fx, _) = execute_at_ra(
            &tx,
            ProgramKind::Counter,
            &ProgramState::Counter(0),
            &vault_actor(),
            &ObjectEnv::new(),
        );
        assert!(!fx.failed);
        assert_eq!(state, ProgramState::Counter(1));
    }

    #[test]
    fn unknown_function_leaves_state_unchanged() {
        let tx = ua_ra(CallSpec { function: "nope".into(), args: vec![] }, vec![]);
        let before = ProgramState::Counter(7);
        let (state, fx, _) =
            execute_at_ra(&tx, ProgramKind::Counter, &before, &vault_actor(), &ObjectEnv::new());
        assert!(fx.failed);
        assert_eq!(state, before);
    }

    #[test]
    fn vault_deposit_then_withdraw_returns_amount() {
        // Deposit 5, then withdraw 5; the withdrawal must hand a coin worth
        // 5 back to the caller.
        let ra = vault_actor();
        let coin = OwnedObject::coin("c0", 5, alice());
        let deposit = ua_ra(CallSpec { function: "deposit".into(), args: vec![] }, vec![coin]);
        let (state, fx, spent) = execute_at_ra(
            &deposit,
            ProgramKind::Vault,
            &ProgramState::initial(ProgramKind::Vault, 0),
            &ra,
            &ObjectEnv::new(),
        );
        assert!(!fx.failed);
        assert!(spent.is_empty());
        let pool: Vec<&OwnedObject> = fx.created.iter().filter(|o| o.owner == ra).collect();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].payload, 5);

        let ra_owned = env_from(&fx.created.iter().filter(|o| o.owner == ra).cloned().collect::<Vec<_>>());
        let withdraw = Transaction::new(TxBody::UaRa {
            sender: alice(),
            sn: 1,
            recipient: ra.clone(),
            consumed: vec![],
            code_pre: vec![],
            call: CallSpec { function: "withdraw".into(), args: vec![Value::U64(5)] },
            code_post: vec![],
        });
        let (state2, fx2, spent2) =
            execute_at_ra(&withdraw, ProgramKind::Vault, &state, &ra, &ra_owned);
        assert!(!fx2.failed);
        assert_eq!(spent2.len(), 1);
        let paid: Vec<&OwnedObject> = fx2.created.iter().filter(|o| o.owner == alice()).collect();
        assert_eq!(paid.len(), 1);
        assert_eq!(paid[0].payload, 5);
        assert_eq!(state2, ProgramState::Vault { balances: [("alice".to_string(), 0)].into() });
    }

    #[test]
    fn vault_forward_emits_coin_carrying_transaction() {
        let ra = vault_actor();
        let coin = OwnedObject::coin("c0", 5, alice());
        let tx = ua_ra(
            CallSpec {
                function: "forward".into(),
                args: vec![Value::Str("W".into()), Value::U64(5)],
            },
            vec![coin],
        );
        let (_, fx, _) = execute_at_ra(
            &tx,
            ProgramKind::Vault,
            &ProgramState::initial(ProgramKind::Vault, 0),
            &ra,
            &ObjectEnv::new(),
        );
        assert!(!fx.failed);
        assert_eq!(fx.rara_txs.len(), 1);
        let rara = &fx.rara_txs[0];
        assert!(rara.is_ra_ra());
        assert_eq!(rara.recipient().unwrap(), &ActorId::reactive("W"));
        assert_eq!(rara.consumed().len(), 1);
        assert_eq!(rara.consumed()[0].payload, 5);
        assert_eq!(rara.consumed()[0].owner, ra);
    }

    #[test]
    fn execution_is_deterministic() {
        let ra = vault_actor();
        let coin = OwnedObject::coin("c0", 9, alice());
        let tx = ua_ra(CallSpec { function: "deposit".into(), args: vec![] }, vec![coin]);
        let st = ProgramState::initial(ProgramKind::Vault, 0);
        let a = execute_at_ra(&tx, ProgramKind::Vault, &st, &ra, &ObjectEnv::new());
        let b = execute_at_ra(&tx, ProgramKind::Vault, &st, &ra, &ObjectEnv::new());
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn allocator_ids_embed_tx_and_index() {
        let mut alloc = Allocator::new(TxId([7u8; 32]));
        let a = alloc.object_id();
        let b = alloc.object_id();
        assert_ne!(a, b);
        assert!(a.0.ends_with(":0"));
        assert!(b.0.ends_with(":1"));
    }
}
