//! The simulation world: validators with their entities, external clients,
//! the event queue and the trace.
//!
//! One single-threaded loop processes events in (time, sequence) order. All
//! nondeterminism flows through one seeded generator (timed runs) or an
//! explicit decision schedule (exploration), so a (scenario, seed) or
//! (scenario, schedule) pair fully determines the trace.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::{Map, Value};

use crate::crypto::{KeyPair, SignerId};
use crate::entities::client::ClientState;
use crate::entities::reactive_actor::ReactiveActorEntity;
use crate::entities::user_actor::UserActorEntity;
use crate::entities::{LocalEvent, Outputs, SendReq};
use crate::model::{ActorId, SimTime};
use crate::protocol::messages::{Message, QcScope, TimerId};
use crate::protocol::ProtoCtx;
use crate::sim::net::{DelayPolicy, Delivery};
use crate::sim::trace::{EventKind, RunOutcome, Trace, TraceEvent, TraceMeta};
use crate::sim::{Address, EventKey, EventQueue, LinkKind};
use crate::vm::ProgramState;

use super::byzantine::{ByzCtx, ByzState, Chooser};
use super::scenario::Compiled;

#[derive(Debug, Clone)]
pub enum Payload {
    Deliver { from: Address, msg: Message, link: LinkKind, send_id: u64 },
    Timer(TimerId),
    ByzRelease { validator: u32 },
    /// Zero-time activation nudge for entities configured to start
    /// immediately.
    Kick,
}

#[derive(Debug, Clone)]
pub struct QueuedEvent {
    pub target: Address,
    pub payload: Payload,
}

pub struct ValidatorState {
    pub users: BTreeMap<ActorId, UserActorEntity>,
    pub ras: BTreeMap<ActorId, ReactiveActorEntity>,
    pub byz: Option<ByzState>,
}

/// One recorded adversary decision.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub chosen: usize,
    pub domain: usize,
}

/// Replays a schedule prefix and records every decision point; past the
/// prefix (or past the decision budget) the first alternative is taken,
/// which makes any prefix a complete, replayable run.
#[derive(Debug, Clone, Default)]
pub struct Driver {
    pub prefix: Vec<usize>,
    pub pos: usize,
    pub recorded: Vec<Decision>,
}

impl Driver {
    pub fn with_prefix(prefix: Vec<usize>) -> Self {
        Driver { prefix, pos: 0, recorded: Vec::new() }
    }

    pub fn choose(&mut self, domain: usize) -> usize {
        debug_assert!(domain > 0);
        let chosen = if self.pos < self.prefix.len() {
            self.prefix[self.pos].min(domain - 1)
        } else {
            0
        };
        self.pos += 1;
        self.recorded.push(Decision { chosen, domain });
        chosen
    }
}

pub enum RunMode {
    Timed,
    /// Adversary-scheduled mode: any pending event may fire next.
    Explore { driver: Driver, max_steps: usize },
}

enum WorldChooser<'a> {
    Rng(&'a mut ChaCha12Rng),
    Driver(&'a mut Driver),
}

impl Chooser for WorldChooser<'_> {
    fn pick(&mut self, domain: usize) -> usize {
        match self {
            WorldChooser::Rng(rng) => rng.gen_range(0..domain),
            WorldChooser::Driver(d) => d.choose(domain),
        }
    }
}

pub struct World {
    pub compiled: Compiled,
    pub seed: u64,
    pub validators: Vec<ValidatorState>,
    pub clients: BTreeMap<String, ClientState>,
    pub vkeys: Vec<KeyPair>,
    pub queue: EventQueue<QueuedEvent>,
    pub active_timers: BTreeMap<(Address, TimerId), EventKey>,
    pub now: SimTime,
    pub steps: usize,
    pub trace: Trace,
    next_event_id: u64,
    rng: ChaCha12Rng,
    policy: DelayPolicy,
    pub mode: RunMode,
    /// Exploration skips transport-level trace records; the safety
    /// checkers only need domain events.
    lite_trace: bool,
    /// Messages for reactive entities not yet instantiated locally.
    pending_actor_msgs: BTreeMap<(u32, ActorId), Vec<QueuedEvent>>,
}

impl World {
    pub fn new(compiled: Compiled, seed: u64, mode: RunMode) -> World {
        let n = compiled.params.n;
        let vkeys: Vec<KeyPair> = (0..n)
            .map(|v| compiled.keys.keypair(&SignerId::Validator(v)).expect("validator key"))
            .collect();

        let mut validators = Vec::new();
        for v in 0..n {
            let mut users = BTreeMap::new();
            for u in &compiled.users {
                users.insert(
                    ActorId::user(&u.name),
                    UserActorEntity::new(ActorId::user(&u.name), u.genesis.clone()),
                );
            }
            let mut ras = BTreeMap::new();
            for r in &compiled.reactive {
                ras.insert(
                    r.actor.clone(),
                    ReactiveActorEntity::new(
                        r.actor.clone(),
                        r.program,
                        r.state.clone(),
                        r.genesis.clone(),
                        r.leader_offset,
                        r.initiate_immediate,
                    ),
                );
            }
            let byz = compiled
                .byzantine
                .get(&v)
                .map(|b| ByzState::new(b.strategy, compiled.params.delta_bound * b.release_at_deltas));
            validators.push(ValidatorState { users, ras, byz });
        }

        let mut clients = BTreeMap::new();
        for u in &compiled.users {
            clients.insert(
                u.name.clone(),
                ClientState::new(
                    u.name.clone(),
                    u.key.clone(),
                    u.behavior,
                    u.genesis.clone(),
                    u.script.clone(),
                    u.local_validator,
                ),
            );
        }

        let policy = DelayPolicy {
            mode: compiled.mode,
            pre_gst_cap_deltas: compiled.pre_gst_cap_deltas,
            drop_probability_percent: compiled.drop_probability_percent,
        };

        let lite_trace = matches!(mode, RunMode::Explore { .. });
        let mut world = World {
            seed,
            vkeys,
            lite_trace,
            validators,
            clients,
            queue: EventQueue::new(),
            active_timers: BTreeMap::new(),
            now: 0,
            steps: 0,
            trace: Trace::new(),
            next_event_id: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
            policy,
            mode,
            pending_actor_msgs: BTreeMap::new(),
            compiled,
        };
        world.write_meta();
        world.schedule_initial();
        world
    }

    fn write_meta(&mut self) {
        let meta = TraceMeta {
            params: self.compiled.params,
            byzantine: self.compiled.byzantine.keys().copied().collect(),
            seed: self.seed,
            horizon: self.compiled.horizon,
        };
        let details = match serde_json::to_value(&meta).expect("meta serializes") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        let id = self.fresh_id();
        self.trace.events.push(TraceEvent {
            id,
            time: 0,
            kind: EventKind::Meta,
            from: None,
            to: None,
            payload_digest: None,
            instance: None,
            cause: None,
            details,
        });
    }

    fn schedule_initial(&mut self) {
        let users: Vec<String> = self.clients.keys().cloned().collect();
        for user in users {
            let script = self.clients[&user].script.clone();
            for (index, entry) in script.iter().enumerate() {
                self.queue.push(entry.at, QueuedEvent {
                    target: Address::Client { user: user.clone() },
                    payload: Payload::Timer(TimerId::ClientScript { index }),
                });
            }
        }
        for (v, state) in self.validators.iter().enumerate() {
            if let Some(byz) = &state.byz {
                if matches!(byz.strategy, super::scenario::StrategyCfg::WithholdThenRelease) {
                    self.queue.push(byz.release_at, QueuedEvent {
                        target: Address::Client { user: format!("byz-{v}") },
                        payload: Payload::ByzRelease { validator: v as u32 },
                    });
                }
            }
        }
        for r in &self.compiled.reactive {
            if r.initiate_immediate {
                for v in 0..self.compiled.params.n {
                    self.queue.push(0, QueuedEvent {
                        target: Address::entity(v, r.actor.clone()),
                        payload: Payload::Kick,
                    });
                }
            }
        }
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_event_id;
        self.next_event_id += 1;
        id
    }

    fn proto_ctx<'a>(
        compiled: &'a Compiled,
        vkeys: &'a [KeyPair],
        me: u32,
    ) -> ProtoCtx<'a> {
        ProtoCtx {
            me,
            params: &compiled.params,
            quorums: &compiled.quorums,
            keys: &compiled.keys,
            my_key: &vkeys[me as usize],
        }
    }

    /// Runs to quiescence or the horizon; returns the outcome.
    pub fn run(&mut self) -> RunOutcome {
        loop {
            let picked = match &mut self.mode {
                RunMode::Timed => self.queue.pop_first(),
                RunMode::Explore { driver, max_steps } => {
                    if self.steps >= *max_steps {
                        break self.finish(RunOutcome::HorizonExhausted);
                    }
                    let keys: Vec<EventKey> = self.queue.keys().copied().collect();
                    if keys.is_empty() {
                        None
                    } else {
                        let idx = driver.choose(keys.len());
                        let key = keys[idx];
                        self.queue.remove(&key).map(|e| (key, e))
                    }
                }
            };
            let Some((key, event)) = picked else {
                break self.finish(RunOutcome::Quiescent);
            };
            match self.mode {
                RunMode::Timed => {
                    if key.0 > self.compiled.horizon {
                        break self.finish(RunOutcome::HorizonExhausted);
                    }
                    self.now = key.0;
                }
                RunMode::Explore { .. } => {
                    // Logical time: one tick per processed event.
                    self.now = self.steps as SimTime;
                }
            }
            self.steps += 1;
            self.process(key, event);
        }
    }

    fn finish(&mut self, outcome: RunOutcome) -> RunOutcome {
        if !self.lite_trace {
            self.write_snapshots();
        }
        let id = self.fresh_id();
        let mut details = Map::new();
        details.insert(
            "outcome".into(),
            Value::from(match outcome {
                RunOutcome::Quiescent => "quiescent",
                RunOutcome::HorizonExhausted => "horizon_exhausted",
            }),
        );
        details.insert("pending".into(), Value::from(self.queue.len()));
        self.trace.events.push(TraceEvent {
            id,
            time: self.now,
            kind: EventKind::End,
            from: None,
            to: None,
            payload_digest: None,
            instance: None,
            cause: None,
            details,
        });
        outcome
    }

    fn write_snapshots(&mut self) {
        for v in 0..self.validators.len() {
            let addresses: Vec<(String, Map<String, Value>)> = {
                let state = &self.validators[v];
                let mut items = Vec::new();
                for (actor, entity) in &state.users {
                    items.push((
                        Address::entity(v as u32, actor.clone()).to_string(),
                        entity.snapshot_details(),
                    ));
                }
                for (actor, entity) in &state.ras {
                    items.push((
                        Address::entity(v as u32, actor.clone()).to_string(),
                        entity.snapshot_details(),
                    ));
                }
                items
            };
            for (from, details) in addresses {
                let id = self.fresh_id();
                self.trace.events.push(TraceEvent {
                    id,
                    time: self.now,
                    kind: EventKind::Snapshot,
                    from: Some(from),
                    to: None,
                    payload_digest: None,
                    instance: None,
                    cause: None,
                    details,
                });
            }
        }
    }

    fn process(&mut self, key: EventKey, event: QueuedEvent) {
        let QueuedEvent { target, payload } = event;
        match payload {
            Payload::ByzRelease { validator } => {
                let sends = self.validators[validator as usize]
                    .byz
                    .as_mut()
                    .map(|b| b.take_buffer())
                    .unwrap_or_default();
                let from = Address::entity(validator, ActorId::user("release"));
                let cause = None;
                self.emit_sends(from, sends, cause);
            }
            Payload::Kick => {
                let event_id = if self.lite_trace {
                    self.fresh_id()
                } else {
                    self.trace_event(
                        EventKind::Timer,
                        Some(target.to_string()),
                        None,
                        Some("start".into()),
                        None,
                        None,
                        Map::new(),
                    )
                };
                let mut out = Outputs::default();
                if let Address::Entity { validator, actor } = &target {
                    let v = *validator;
                    let ctx = Self::proto_ctx(&self.compiled, &self.vkeys, v);
                    if let Some(entity) = self.validators[v as usize].ras.get_mut(actor) {
                        entity.kick(&ctx, &mut out);
                    }
                }
                self.apply_outputs(target, out, event_id);
            }
            Payload::Timer(id) => {
                // Stale timer entries are removed on cancellation, so any
                // firing timer is live.
                self.active_timers.remove(&(target.clone(), id.clone()));
                let event_id = if self.lite_trace {
                    self.fresh_id()
                } else {
                    self.trace_event(
                        EventKind::Timer,
                        Some(target.to_string()),
                        None,
                        Some(timer_digest(&id)),
                        timer_scope(&id),
                        None,
                        Map::new(),
                    )
                };
                self.dispatch_timer(target, id, event_id);
            }
            Payload::Deliver { from, msg, link, send_id } => {
                let event_id = if self.lite_trace {
                    self.fresh_id()
                } else {
                    let mut details = Map::new();
                    details.insert("link".into(), Value::from(link.as_str()));
                    self.trace_event(
                        EventKind::Deliver,
                        Some(from.to_string()),
                        Some(target.to_string()),
                        Some(msg.digest()),
                        msg_scope(&msg),
                        Some(send_id),
                        details,
                    )
                };
                self.dispatch_deliver(target, from, msg, event_id);
            }
        }
        let _ = key;
    }

    #[allow(clippy::too_many_arguments)]
    fn trace_event(
        &mut self,
        kind: EventKind,
        from: Option<String>,
        to: Option<String>,
        payload_digest: Option<String>,
        instance: Option<String>,
        cause: Option<u64>,
        details: Map<String, Value>,
    ) -> u64 {
        let id = self.fresh_id();
        self.trace.events.push(TraceEvent {
            id,
            time: self.now,
            kind,
            from,
            to,
            payload_digest,
            instance,
            cause,
            details,
        });
        id
    }

    fn dispatch_timer(&mut self, target: Address, id: TimerId, cause: u64) {
        match &target {
            Address::Client { user } => {
                if let TimerId::ClientScript { index } = id {
                    let mut out = Outputs::default();
                    if let Some(client) = self.clients.get_mut(user) {
                        let ctx = Self::proto_ctx(&self.compiled, &self.vkeys, 0);
                        client.on_script_timer(index, &ctx, &mut out);
                    }
                    self.apply_outputs(target, out, cause);
                }
            }
            Address::Entity { validator, actor } => {
                let v = *validator;
                let mut out = Outputs::default();
                {
                    let ctx = Self::proto_ctx(&self.compiled, &self.vkeys, v);
                    let state = &mut self.validators[v as usize];
                    if actor.is_user() {
                        if let Some(entity) = state.users.get_mut(actor) {
                            entity.on_timer(&id, &ctx, &mut out);
                        }
                    } else if let Some(entity) = state.ras.get_mut(actor) {
                        entity.on_timer(&id, &ctx, &mut out);
                    }
                }
                self.apply_outputs(target, out, cause);
            }
        }
    }

    fn dispatch_deliver(&mut self, target: Address, from: Address, msg: Message, cause: u64) {
        match &target {
            Address::Client { user } => {
                if let Message::ClientNotify(n) = &msg {
                    let mut out = Outputs::default();
                    if let Some(client) = self.clients.get_mut(user) {
                        let ctx = Self::proto_ctx(&self.compiled, &self.vkeys, 0);
                        client.on_notify(&from, n, &ctx, &mut out);
                    }
                    self.apply_outputs(target, out, cause);
                }
            }
            Address::Entity { validator, actor } => {
                let v = *validator;
                if let Some(byz) = self.validators[v as usize].byz.as_mut() {
                    byz.observe_incoming(&msg);
                }
                let mut out = Outputs::default();
                let known = {
                    let ctx = Self::proto_ctx(&self.compiled, &self.vkeys, v);
                    let state = &mut self.validators[v as usize];
                    if actor.is_user() {
                        if let Some(entity) = state.users.get_mut(actor) {
                            entity.on_deliver(&from, &msg, &ctx, &mut out);
                            true
                        } else {
                            false
                        }
                    } else if let Some(entity) = state.ras.get_mut(actor) {
                        entity.on_deliver(&from, &msg, &ctx, &mut out);
                        true
                    } else {
                        false
                    }
                };
                if !known && actor.is_reactive() {
                    // Entity not instantiated here yet (created by a
                    // transaction this validator has not executed).
                    self.pending_actor_msgs
                        .entry((v, actor.clone()))
                        .or_default()
                        .push(QueuedEvent {
                            target: target.clone(),
                            payload: Payload::Deliver { from, msg, link: LinkKind::Inner, send_id: cause },
                        });
                    return;
                }
                self.apply_outputs(target, out, cause);
            }
        }
    }

    fn apply_outputs(&mut self, source: Address, out: Outputs, cause: u64) {
        let Outputs { mut sends, timers_set, timers_cancelled, qc_scopes_cancelled, events, new_actors } =
            out;

        // Byzantine outgoing filter.
        if let Some(v) = source.validator() {
            let has_byz = self.validators[v as usize].byz.is_some();
            if has_byz {
                let mut byz = self.validators[v as usize].byz.take().expect("checked");
                let ctx = ByzCtx {
                    me: v,
                    n: self.compiled.params.n,
                    my_key: &self.vkeys[v as usize],
                    quorums: &self.compiled.quorums,
                };
                sends = match &mut self.mode {
                    RunMode::Timed => {
                        let mut chooser = WorldChooser::Rng(&mut self.rng);
                        byz.filter_outgoing(sends, &ctx, &mut chooser)
                    }
                    RunMode::Explore { driver, .. } => {
                        let mut chooser = WorldChooser::Driver(driver);
                        byz.filter_outgoing(sends, &ctx, &mut chooser)
                    }
                };
                self.validators[v as usize].byz = Some(byz);
            }
        }

        for event in events {
            let kind = match &event {
                LocalEvent::Emit { .. } => EventKind::Emit,
                LocalEvent::Activate { .. } => EventKind::Activate,
                LocalEvent::Lock { .. } => EventKind::Lock,
                LocalEvent::Decide { .. } => EventKind::Decide,
                LocalEvent::QcPropose { .. } => EventKind::QcPropose,
                LocalEvent::Execute { .. } => EventKind::Execute,
                LocalEvent::Settle { .. } => EventKind::Settle,
                LocalEvent::DroppedTx { .. } => EventKind::Drop,
                LocalEvent::Error { .. } => EventKind::Error,
            };
            let instance = match &event {
                LocalEvent::Activate { actor, instance, .. } => {
                    Some(format!("poa:{actor}/{instance}"))
                }
                LocalEvent::Decide { scope, .. } => Some(scope.clone()),
                LocalEvent::QcPropose { scope, .. } => Some(scope.to_string()),
                _ => None,
            };
            self.trace_event(
                kind,
                Some(source.to_string()),
                None,
                None,
                instance,
                Some(cause),
                event.details(),
            );
        }

        for (id, delay) in timers_set {
            self.set_timer(source.clone(), id, delay);
        }
        for id in timers_cancelled {
            self.cancel_timer(&source, &id);
        }
        for scope in qc_scopes_cancelled {
            self.cancel_scope_timers(&source, &scope);
        }

        for actor_spec in new_actors {
            if let Some(v) = source.validator() {
                self.register_actor(v, actor_spec);
            }
        }

        self.emit_sends(source, sends, Some(cause));
    }

    fn register_actor(&mut self, v: u32, spec: crate::vm::NewActor) {
        let state = &mut self.validators[v as usize];
        if state.ras.contains_key(&spec.actor) {
            return;
        }
        let program = crate::vm::programs::parse_program(&spec.program)
            .expect("program validated at execution");
        // Leader rotation offset derived from the actor id so every
        // validator picks the same schedule.
        let h = crate::model::sha256(spec.actor.name.as_bytes());
        let offset = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) % self.compiled.params.n;
        state.ras.insert(
            spec.actor.clone(),
            ReactiveActorEntity::new(
                spec.actor.clone(),
                program,
                ProgramState::initial(program, spec.init),
                vec![],
                offset,
                false,
            ),
        );
        if let Some(pending) = self.pending_actor_msgs.remove(&(v, spec.actor.clone())) {
            for ev in pending {
                self.queue.push(self.now, ev);
            }
        }
    }

    fn set_timer(&mut self, target: Address, id: TimerId, delay: SimTime) {
        self.cancel_timer(&target, &id);
        let key = self.queue.push(self.now + delay, QueuedEvent {
            target: target.clone(),
            payload: Payload::Timer(id.clone()),
        });
        self.active_timers.insert((target, id), key);
    }

    fn cancel_timer(&mut self, target: &Address, id: &TimerId) {
        if let Some(key) = self.active_timers.remove(&(target.clone(), id.clone())) {
            self.queue.remove(&key);
        }
    }

    fn cancel_scope_timers(&mut self, target: &Address, scope: &QcScope) {
        let stale: Vec<(Address, TimerId)> = self
            .active_timers
            .keys()
            .filter(|(addr, id)| {
                addr == target
                    && matches!(
                        id,
                        TimerId::QcView { scope: s, .. } | TimerId::QcGrace { scope: s, .. }
                        if s == scope
                    )
            })
            .cloned()
            .collect();
        for (addr, id) in stale {
            self.cancel_timer(&addr, &id);
        }
    }

    fn emit_sends(&mut self, source: Address, sends: Vec<SendReq>, cause: Option<u64>) {
        for SendReq { to, msg, link } in sends {
            let send_id = if self.lite_trace {
                self.fresh_id()
            } else {
                let mut details = Map::new();
                details.insert("link".into(), Value::from(link.as_str()));
                self.trace_event(
                    EventKind::Send,
                    Some(source.to_string()),
                    Some(to.to_string()),
                    Some(msg.digest()),
                    msg_scope(&msg),
                    cause,
                    details,
                )
            };
            let delivery_time = match link {
                LinkKind::Inner | LinkKind::Local => Some(self.now),
                LinkKind::Outer => {
                    let byz_involved = [source.validator(), to.validator()]
                        .iter()
                        .flatten()
                        .any(|v| self.compiled.byzantine.contains_key(v));
                    match self.mode {
                        RunMode::Timed => {
                            match self.policy.outer_delivery(
                                &self.compiled.params,
                                self.now,
                                byz_involved,
                                &mut self.rng,
                            ) {
                                Delivery::At(t) => Some(t),
                                Delivery::Dropped => None,
                            }
                        }
                        // Exploration owns the schedule; delivery order is
                        // the adversary's choice, not the clock's.
                        RunMode::Explore { .. } => Some(self.now + 1),
                    }
                }
            };
            match delivery_time {
                Some(t) => {
                    self.queue.push(t, QueuedEvent {
                        target: to.clone(),
                        payload: Payload::Deliver { from: source.clone(), msg, link, send_id },
                    });
                }
                None => {
                    if !self.lite_trace {
                        let mut details = Map::new();
                        details.insert("reason".into(), Value::from("byzantine-involved drop"));
                        self.trace_event(
                            EventKind::Drop,
                            Some(source.to_string()),
                            Some(to.to_string()),
                            None,
                            None,
                            Some(send_id),
                            details,
                        );
                    }
                }
            }
        }
    }
}

fn timer_digest(id: &TimerId) -> String {
    match id {
        TimerId::PoaRound { actor, instance } => format!("round:{actor}/{instance}"),
        TimerId::FpGrace { user, sn, .. } => format!("grace:{user}/{sn}"),
        TimerId::QcView { scope, view } => format!("view:{scope}/{view}"),
        TimerId::QcGrace { scope, view } => format!("leadergrace:{scope}/{view}"),
        TimerId::ByzRelease => "release".into(),
        TimerId::ClientScript { index } => format!("script:{index}"),
    }
}

fn timer_scope(id: &TimerId) -> Option<String> {
    match id {
        TimerId::PoaRound { actor, instance } => Some(format!("poa:{actor}/{instance}")),
        TimerId::QcView { scope, .. } | TimerId::QcGrace { scope, .. } => Some(scope.to_string()),
        _ => None,
    }
}

fn msg_scope(msg: &Message) -> Option<String> {
    match msg {
        Message::UaTx(tx) if tx.is_ua() => {
            Some(format!("pob:{}/{}", tx.sender(), tx.sn().unwrap_or(0)))
        }
        Message::UaVote(v) => Some(format!("pob:{}/{}", v.actor, v.sn)),
        Message::UaProof(p) => Some(p.scope.to_string()),
        Message::PoaProposal(p) => Some(format!("poa:{}/{}", p.actor, p.instance)),
        Message::PoaVote(v) => Some(format!("poa:{}/{}", v.actor, v.instance)),
        Message::PoaProof(p) => Some(p.scope.to_string()),
        Message::Qc { scope, .. } => Some(scope.to_string()),
        Message::FpLockReq { requester, instance, .. }
        | Message::SpLockReq { requester, instance, .. }
        | Message::UaInitiate { requester, instance, .. } => {
            Some(format!("poa:{requester}/{instance}"))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::Scenario;
    use crate::sim::trace::{EventKind, RunOutcome};

    fn empty_scenario() -> Scenario {
        Scenario::from_toml_str(
            r#"
            [params]
            n = 4
            f = 1
            p = 0
        "#,
        )
        .unwrap()
    }

    #[test]
    fn empty_scenario_quiesces_immediately() {
        let compiled = empty_scenario().compile().unwrap();
        let mut world = World::new(compiled, 0, RunMode::Timed);
        assert_eq!(world.run(), RunOutcome::Quiescent);
        assert_eq!(world.trace.iter_kind(EventKind::Deliver).count(), 0);
        assert_eq!(world.trace.iter_kind(EventKind::Send).count(), 0);
        assert_eq!(world.now, 0);
    }

    #[test]
    fn horizon_exhaustion_reported_distinctly() {
        // A script far beyond the horizon leaves pending work behind.
        let scenario = Scenario::from_toml_str(
            r#"
            [params]
            n = 4
            f = 1
            p = 0

            [run]
            horizon_deltas = 5

            [[users]]
            name = "alice"
            coins = [1]

            [[script]]
            at_deltas = 50
            user = "alice"
            [[script.tx]]
            kind = "ua"
        "#,
        )
        .unwrap();
        let compiled = scenario.compile().unwrap();
        let mut world = World::new(compiled, 0, RunMode::Timed);
        assert_eq!(world.run(), RunOutcome::HorizonExhausted);
        assert_eq!(world.trace.outcome(), Some(RunOutcome::HorizonExhausted));
    }

    #[test]
    fn cancelled_timers_never_fire() {
        let compiled = empty_scenario().compile().unwrap();
        let mut world = World::new(compiled, 0, RunMode::Timed);
        let target = Address::entity(0, crate::model::ActorId::user("ghost"));
        let id = TimerId::ByzRelease;
        world.set_timer(target.clone(), id.clone(), 10);
        assert_eq!(world.queue.len(), 1);
        world.cancel_timer(&target, &id);
        assert_eq!(world.queue.len(), 0, "cancelled timer leaves no queue entry");
        assert_eq!(world.run(), RunOutcome::Quiescent);
        assert_eq!(world.trace.iter_kind(EventKind::Timer).count(), 0);
    }

    #[test]
    fn rescheduling_a_timer_replaces_the_old_one() {
        let compiled = empty_scenario().compile().unwrap();
        let mut world = World::new(compiled, 0, RunMode::Timed);
        let target = Address::entity(0, crate::model::ActorId::user("ghost"));
        world.set_timer(target.clone(), TimerId::ByzRelease, 10);
        world.set_timer(target.clone(), TimerId::ByzRelease, 30);
        assert_eq!(world.queue.len(), 1);
        world.run();
        // Fires exactly once, at the rescheduled time.
        let fires: Vec<u64> =
            world.trace.iter_kind(EventKind::Timer).map(|e| e.time).collect();
        assert_eq!(fires, vec![30]);
    }
}
