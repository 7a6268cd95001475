//! External user clients.
//!
//! A client controls one user actor: it assigns sequence numbers, signs and
//! broadcasts transactions, and tracks execution through validator
//! notifications (an outcome counts once f+1 validators report it). Honest
//! clients only emit when the emission preconditions hold in their local
//! view; the misbehaving flavors deliberately skip those checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LocalEvent, Outputs};
use crate::crypto::KeyPair;
use crate::model::{ActorId, ObjectId, OwnedObject, SimTime, Transaction, TxBody};
use crate::protocol::messages::{ClientNotify, Message};
use crate::protocol::ProtoCtx;
use crate::sim::{Address, LinkKind};
use crate::vm::{execute_ua, CallSpec, Command};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Signs several transactions for one sequence number and sprays them
    /// at disjoint validator subsets.
    DoubleSpender,
    /// Emits transactions consuming objects it no longer owns.
    StaleObject,
}

/// One transaction to sign and send, already fully resolved except for
/// object values.
#[derive(Debug, Clone)]
pub struct TxTemplate {
    pub is_call: bool,
    pub consume: Vec<ObjectId>,
    pub code: Vec<Command>,
    pub recipient: Option<ActorId>,
    pub code_pre: Vec<Command>,
    pub call: Option<CallSpec>,
    pub code_post: Vec<Command>,
    /// None broadcasts to every validator.
    pub to_validators: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct ScriptEntry {
    pub at: SimTime,
    /// Hold until this sequence number is confirmed locally.
    pub after_confirm: Option<u64>,
    pub sn_override: Option<u64>,
    pub variants: Vec<TxTemplate>,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub user: String,
    pub actor: ActorId,
    pub key: KeyPair,
    pub behavior: Behavior,
    pub next_sn: u64,
    /// Confirmed view of owned objects.
    pub view: BTreeMap<ObjectId, OwnedObject>,
    /// View plus predicted outputs of in-flight emissions.
    pub predicted: BTreeMap<ObjectId, OwnedObject>,
    /// Every object value ever known, spent or not (material for the
    /// misbehaving flavors).
    pub all_seen: BTreeMap<ObjectId, OwnedObject>,
    pub confirmed: BTreeSet<u64>,
    pub tallies: BTreeMap<String, BTreeSet<u32>>,
    pub script: Vec<ScriptEntry>,
    pub fired: BTreeSet<usize>,
    pub waiting: BTreeSet<usize>,
    /// Co-located with this validator: sends to it use a free local link.
    pub local_validator: Option<u32>,
}

impl ClientState {
    pub fn new(
        user: String,
        key: KeyPair,
        behavior: Behavior,
        genesis: Vec<OwnedObject>,
        script: Vec<ScriptEntry>,
        local_validator: Option<u32>,
    ) -> Self {
        let view: BTreeMap<ObjectId, OwnedObject> =
            genesis.into_iter().map(|o| (o.object_id.clone(), o)).collect();
        ClientState {
            user: user.clone(),
            actor: ActorId::user(user),
            key,
            behavior,
            next_sn: 0,
            predicted: view.clone(),
            all_seen: view.clone(),
            view,
            confirmed: BTreeSet::new(),
            tallies: BTreeMap::new(),
            script,
            fired: BTreeSet::new(),
            waiting: BTreeSet::new(),
            local_validator,
        }
    }

    pub fn on_script_timer(&mut self, index: usize, ctx: &ProtoCtx, out: &mut Outputs) {
        self.try_fire(index, ctx, out);
    }

    fn try_fire(&mut self, index: usize, ctx: &ProtoCtx, out: &mut Outputs) {
        if self.fired.contains(&index) || index >= self.script.len() {
            return;
        }
        let entry = self.script[index].clone();
        if let Some(need) = entry.after_confirm {
            if !self.confirmed.contains(&need) {
                self.waiting.insert(index);
                return;
            }
        }
        self.fired.insert(index);
        self.waiting.remove(&index);

        let sn = entry.sn_override.unwrap_or(self.next_sn);
        self.next_sn = self.next_sn.max(sn + 1);

        for template in &entry.variants {
            let Some(consumed) = self.resolve_objects(&template.consume, out) else {
                continue;
            };
            let predicate_ok = self.emission_predicate(&consumed);
            if self.behavior == Behavior::Honest && !predicate_ok {
                out.events.push(LocalEvent::Error {
                    what: format!("{}: not possible to emit sn={sn}", self.user),
                });
                continue;
            }
            // Code written against symbolic object names gets the resolved
            // ids substituted in.
            let subst: BTreeMap<&ObjectId, &ObjectId> = template
                .consume
                .iter()
                .zip(consumed.iter())
                .map(|(spec, obj)| (spec, &obj.object_id))
                .collect();
            let rewrite = |code: &[Command]| -> Vec<Command> {
                code.iter().map(|c| substitute_refs(c, &subst)).collect()
            };
            let body = if template.is_call {
                TxBody::UaRa {
                    sender: self.actor.clone(),
                    sn,
                    recipient: template.recipient.clone().expect("call template has recipient"),
                    consumed: consumed.clone(),
                    code_pre: rewrite(&template.code_pre),
                    call: template.call.clone().expect("call template has call"),
                    code_post: rewrite(&template.code_post),
                }
            } else {
                TxBody::Ua {
                    sender: self.actor.clone(),
                    sn,
                    consumed: consumed.clone(),
                    code: rewrite(&template.code),
                }
            };
            let tx = Transaction::signed(body, &self.key);
            out.events.push(LocalEvent::Emit {
                tx: tx.clone(),
                predicate_ok,
                by: format!("client:{}", self.user),
            });
            self.predict_spend(&tx, entry.variants.len() == 1);
            let targets: Vec<u32> = match &template.to_validators {
                Some(v) => v.clone(),
                None => (0..ctx.n()).collect(),
            };
            for v in targets {
                let link = if self.local_validator == Some(v) {
                    LinkKind::Local
                } else {
                    LinkKind::Outer
                };
                out.send(Address::entity(v, self.actor.clone()), Message::UaTx(tx.clone()), link);
            }
        }
    }

    /// Looks object values up, preferring the live view; the misbehaving
    /// flavors may reference any value ever seen. `auto:<tag>` and
    /// `auto:<tag>:<payload>` pick the first matching object in the
    /// predicted view, so scripts can consume objects whose derived ids are
    /// unknown when the scenario is written.
    fn resolve_objects(&self, ids: &[ObjectId], out: &mut Outputs) -> Option<Vec<OwnedObject>> {
        let mut resolved: Vec<OwnedObject> = Vec::new();
        for id in ids {
            let obj = if let Some(spec) = id.0.strip_prefix("auto:") {
                let (tag, payload) = match spec.split_once(':') {
                    Some((t, p)) => (t, p.parse::<u64>().ok()),
                    None => (spec, None),
                };
                self.predicted
                    .values()
                    .find(|o| {
                        o.type_tag == tag
                            && payload.is_none_or(|p| o.payload == p)
                            && !resolved.iter().any(|r| r.object_id == o.object_id)
                    })
                    .cloned()
            } else {
                self.predicted.get(id).or_else(|| self.all_seen.get(id)).cloned()
            };
            match obj {
                Some(o) => resolved.push(o),
                None => {
                    out.events.push(LocalEvent::Error {
                        what: format!("{}: unknown object {id}", self.user),
                    });
                    return None;
                }
            }
        }
        Some(resolved)
    }

    fn emission_predicate(&self, consumed: &[OwnedObject]) -> bool {
        consumed.iter().all(|o| self.predicted.contains_key(&o.object_id))
    }

    fn predict_spend(&mut self, tx: &Transaction, predict_outputs: bool) {
        for o in tx.consumed() {
            self.predicted.remove(&o.object_id);
        }
        if predict_outputs && tx.is_ua() {
            let effects = execute_ua(tx);
            if !effects.failed {
                for obj in effects.created {
                    if obj.owner == self.actor {
                        self.all_seen.insert(obj.object_id.clone(), obj.clone());
                        self.predicted.insert(obj.object_id.clone(), obj);
                    }
                }
            }
        }
    }

    pub fn on_notify(&mut self, from: &Address, n: &ClientNotify, ctx: &ProtoCtx, out: &mut Outputs) {
        let Some(validator) = from.validator() else { return };
        if n.actor != self.actor {
            return;
        }
        let key = format!(
            "{}:{}:{}:{}",
            n.sn,
            n.tx_id,
            n.consumed.iter().map(|o| o.0.clone()).collect::<Vec<_>>().join(","),
            n.created.iter().map(|o| o.object_id.0.clone()).collect::<Vec<_>>().join(",")
        );
        let votes = self.tallies.entry(key).or_default();
        votes.insert(validator);
        if votes.len() as u32 != ctx.params.f + 1 {
            return;
        }
        // f+1 matching reports: at least one honest validator stands behind
        // this outcome.
        if n.sn != u64::MAX {
            self.confirmed.insert(n.sn);
            for id in &n.consumed {
                self.view.remove(id);
            }
        }
        for obj in &n.created {
            if obj.owner == self.actor {
                self.view.insert(obj.object_id.clone(), obj.clone());
                self.predicted.insert(obj.object_id.clone(), obj.clone());
                self.all_seen.insert(obj.object_id.clone(), obj.clone());
            }
        }
        let waiting: Vec<usize> = self.waiting.iter().copied().collect();
        for index in waiting {
            self.try_fire(index, ctx, out);
        }
    }
}

fn substitute_refs(cmd: &Command, subst: &BTreeMap<&ObjectId, &ObjectId>) -> Command {
    let map = |id: &ObjectId| -> ObjectId {
        subst.get(id).map(|r| (*r).clone()).unwrap_or_else(|| id.clone())
    };
    match cmd {
        Command::Split { object, parts } => {
            Command::Split { object: map(object), parts: parts.clone() }
        }
        Command::Merge { objects } => Command::Merge { objects: objects.iter().map(map).collect() },
        Command::SpawnTx { recipient, consume, call } => Command::SpawnTx {
            recipient: recipient.clone(),
            consume: consume.iter().map(map).collect(),
            call: call.clone(),
        },
        other => other.clone(),
    }
}
