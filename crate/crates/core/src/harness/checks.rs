//! Trace checkers.
//!
//! Every checker is a pure function of a stored trace: it parses the
//! header, reconstructs causality from send/deliver edges, and verdicts one
//! named property, pinpointing the first violating event. Checkers run on
//! live runs and on re-loaded trace files alike.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::sim::trace::{EventKind, RunOutcome, Trace, TraceEvent, TraceMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    /// Per reactive-actor instance, honest decisions agree.
    AgreementPoa,
    /// Per user slot, honest broadcast decisions agree.
    AgreementPob,
    /// Per-slot agreement decides at most one value, of block size one.
    TaSingleValue,
    /// No two conflicting transactions decided or executed anywhere.
    NoConflict,
    /// Per user slot, one executed transaction across honest validators.
    UserAgreement,
    /// Each user transaction executed at most once per validator and only
    /// if emitted.
    UserIntegrity,
    /// Honest emissions are executed by every honest validator.
    UserValidity,
    /// Per reactive actor, honest execution sequences are prefix-compatible
    /// and equal at quiescence.
    RaTotalOrder,
    /// Reactive executions happen at most once and only for emitted
    /// transactions.
    RaIntegrity,
    /// Per object, at most one consuming transaction is ever executed.
    ObjectSafety,
    /// Outer deliveries respect max(send + delta, gst + delta).
    DeliveryBound,
    /// Honest-to-honest sends are delivered exactly once.
    PerfectLinks,
    /// Honest decisions of one instance lie within the delivery bound of
    /// the first.
    CommonTermination,
    /// Every instance decided by one honest validator is decided by all,
    /// and the run is quiescent.
    Termination,
    /// With an honest leader, a transaction in every honest pool at
    /// instance start is decided.
    ValidityI,
    /// Every decided transaction was emitted.
    ValidityII,
    /// After a fast-path decision of a transaction, no honest slow-path
    /// slot ever holds a conflicting one.
    LemmaFastSpLock,
    /// No causal edge from one reactive actor's instances into another's
    /// executions.
    Parallelization,
    /// Honest validators end with identical entity states at quiescence.
    SnapshotConsistency,
}

impl PropertyId {
    pub fn parse(name: &str) -> Option<PropertyId> {
        use PropertyId::*;
        Some(match name {
            "agreement" | "agreement_poa" => AgreementPoa,
            "agreement_pob" | "pob_agreement" => AgreementPob,
            "ta_single_value" | "ta_single" => TaSingleValue,
            "no_conflict" => NoConflict,
            "user_agreement" => UserAgreement,
            "user_integrity" => UserIntegrity,
            "user_validity" => UserValidity,
            "ra_total_order" => RaTotalOrder,
            "ra_integrity" => RaIntegrity,
            "object_safety" => ObjectSafety,
            "delivery_bound" => DeliveryBound,
            "perfect_links" => PerfectLinks,
            "common_termination" => CommonTermination,
            "termination" => Termination,
            "validity_i" => ValidityI,
            "validity_ii" => ValidityII,
            "lemma_fast_sp_lock" => LemmaFastSpLock,
            "parallelization" => Parallelization,
            "snapshot_consistency" => SnapshotConsistency,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        use PropertyId::*;
        match self {
            AgreementPoa => "agreement_poa",
            AgreementPob => "agreement_pob",
            TaSingleValue => "ta_single_value",
            NoConflict => "no_conflict",
            UserAgreement => "user_agreement",
            UserIntegrity => "user_integrity",
            UserValidity => "user_validity",
            RaTotalOrder => "ra_total_order",
            RaIntegrity => "ra_integrity",
            ObjectSafety => "object_safety",
            DeliveryBound => "delivery_bound",
            PerfectLinks => "perfect_links",
            CommonTermination => "common_termination",
            Termination => "termination",
            ValidityI => "validity_i",
            ValidityII => "validity_ii",
            LemmaFastSpLock => "lemma_fast_sp_lock",
            Parallelization => "parallelization",
            SnapshotConsistency => "snapshot_consistency",
        }
    }

    /// The standard safety set used by exploration.
    pub fn safety_set() -> Vec<PropertyId> {
        use PropertyId::*;
        vec![AgreementPoa, AgreementPob, TaSingleValue, NoConflict, UserAgreement, ObjectSafety]
    }

    pub fn all() -> Vec<PropertyId> {
        use PropertyId::*;
        vec![
            AgreementPoa,
            AgreementPob,
            TaSingleValue,
            NoConflict,
            UserAgreement,
            UserIntegrity,
            UserValidity,
            RaTotalOrder,
            RaIntegrity,
            ObjectSafety,
            DeliveryBound,
            PerfectLinks,
            CommonTermination,
            Termination,
            ValidityI,
            ValidityII,
            LemmaFastSpLock,
            Parallelization,
            SnapshotConsistency,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropResult {
    pub prop: String,
    pub pass: bool,
    pub detail: String,
    pub first_violation: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub results: Vec<PropResult>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn first_failure(&self) -> Option<&PropResult> {
        self.results.iter().find(|r| !r.pass)
    }

    pub fn summary(&self) -> String {
        self.results
            .iter()
            .map(|r| {
                format!("{} {} {}", if r.pass { "PASS" } else { "FAIL" }, r.prop, r.detail)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Everything the individual checkers need, derived once from the trace.
pub struct TraceIndex<'a> {
    pub trace: &'a Trace,
    pub meta: TraceMeta,
    pub outcome: Option<RunOutcome>,
    pub honest: BTreeSet<u32>,
    /// Event id -> index into the event vector.
    pub by_id: BTreeMap<u64, usize>,
    /// tx short id -> (sender, sn option, kind, predicate_ok).
    pub emissions: BTreeMap<String, EmitInfo>,
}

#[derive(Debug, Clone)]
pub struct EmitInfo {
    pub sender: String,
    pub sn: Option<u64>,
    pub kind: String,
    pub predicate_ok: bool,
    pub first_event: u64,
    pub consumed: Vec<String>,
    pub honest_client: bool,
    pub conflicting_spray: bool,
}

/// Parses "v3.A:alice" / "v3.X:market" into (validator, actor).
pub fn parse_entity(addr: &str) -> Option<(u32, char, String)> {
    let rest = addr.strip_prefix('v')?;
    let dot = rest.find('.')?;
    let validator: u32 = rest[..dot].parse().ok()?;
    let kind = rest.as_bytes().get(dot + 1).copied()? as char;
    let actor = rest.get(dot + 3..)?.to_string();
    Some((validator, kind, actor))
}

impl<'a> TraceIndex<'a> {
    pub fn build(trace: &'a Trace) -> Result<TraceIndex<'a>, String> {
        let meta = trace.meta().ok_or("trace has no metadata header")?;
        let honest: BTreeSet<u32> =
            (0..meta.params.n).filter(|v| !meta.byzantine.contains(v)).collect();
        let by_id = trace.events.iter().enumerate().map(|(i, e)| (e.id, i)).collect();

        // Emission log, first event per transaction. A sender emitting two
        // different transactions for one slot marks both as conflicting
        // spray (used by the validity-of-honest-emissions checker).
        let mut emissions: BTreeMap<String, EmitInfo> = BTreeMap::new();
        let mut per_slot: BTreeMap<(String, u64), BTreeSet<String>> = BTreeMap::new();
        for e in trace.iter_kind(EventKind::Emit) {
            let Some(tx) = e.detail_str("tx") else { continue };
            let sender = e.detail_str("sender").unwrap_or_default().to_string();
            let sn = e.detail_u64("sn");
            if let Some(sn) = sn {
                per_slot.entry((sender.clone(), sn)).or_default().insert(tx.to_string());
            }
            emissions.entry(tx.to_string()).or_insert_with(|| EmitInfo {
                sender,
                sn,
                kind: e.detail_str("kind").unwrap_or_default().to_string(),
                predicate_ok: e.detail_bool("predicate_ok").unwrap_or(false),
                first_event: e.id,
                consumed: e.detail_strs("consumed"),
                honest_client: e
                    .detail_str("by")
                    .map(|b| b.starts_with("client:"))
                    .unwrap_or(false),
                conflicting_spray: false,
            });
        }
        for ((sender, sn), txs) in per_slot {
            if txs.len() > 1 {
                for tx in txs {
                    if let Some(info) = emissions.get_mut(&tx) {
                        let _ = (&sender, sn);
                        info.conflicting_spray = true;
                    }
                }
            }
        }

        Ok(TraceIndex { trace, meta, outcome: trace.outcome(), honest, by_id, emissions })
    }

    pub fn is_honest_entity(&self, e: &TraceEvent) -> Option<(u32, char, String)> {
        let addr = e.from.as_deref()?;
        let parsed = parse_entity(addr)?;
        if self.honest.contains(&parsed.0) {
            Some(parsed)
        } else {
            None
        }
    }

    /// Causal outer-hop depth of an event: one per outer-link delivery on
    /// its cause chain.
    pub fn depths(&self) -> BTreeMap<u64, u32> {
        let mut depth: BTreeMap<u64, u32> = BTreeMap::new();
        for e in &self.trace.events {
            let base = e.cause.and_then(|c| depth.get(&c).copied()).unwrap_or(0);
            let own = if e.kind == EventKind::Deliver
                && e.detail_str("link") == Some("outer")
            {
                base + 1
            } else {
                base
            };
            depth.insert(e.id, own);
        }
        depth
    }

    /// Honest decide events grouped by instance scope.
    pub fn decides_by_scope(&self) -> BTreeMap<String, Vec<&TraceEvent>> {
        let mut map: BTreeMap<String, Vec<&TraceEvent>> = BTreeMap::new();
        for e in self.trace.iter_kind(EventKind::Decide) {
            if self.is_honest_entity(e).is_none() {
                continue;
            }
            if let Some(scope) = e.instance.as_deref() {
                map.entry(scope.to_string()).or_default().push(e);
            }
        }
        map
    }
}

pub fn check_properties(trace: &Trace, props: &[PropertyId]) -> CheckReport {
    let index = match TraceIndex::build(trace) {
        Ok(i) => i,
        Err(e) => {
            return CheckReport {
                results: props
                    .iter()
                    .map(|p| PropResult {
                        prop: p.name().to_string(),
                        pass: false,
                        detail: format!("index: {e}"),
                        first_violation: None,
                    })
                    .collect(),
            }
        }
    };
    CheckReport { results: props.iter().map(|p| run_one(&index, *p)).collect() }
}

fn pass(prop: PropertyId, detail: impl Into<String>) -> PropResult {
    PropResult { prop: prop.name().into(), pass: true, detail: detail.into(), first_violation: None }
}

fn fail(prop: PropertyId, detail: impl Into<String>, at: Option<u64>) -> PropResult {
    PropResult { prop: prop.name().into(), pass: false, detail: detail.into(), first_violation: at }
}

fn run_one(ix: &TraceIndex, prop: PropertyId) -> PropResult {
    match prop {
        PropertyId::AgreementPoa => scoped_agreement(ix, prop, "poa:"),
        PropertyId::AgreementPob => scoped_agreement(ix, prop, "pob:"),
        PropertyId::TaSingleValue => ta_single(ix),
        PropertyId::NoConflict => no_conflict(ix),
        PropertyId::UserAgreement => user_agreement(ix),
        PropertyId::UserIntegrity => user_integrity(ix),
        PropertyId::UserValidity => user_validity(ix),
        PropertyId::RaTotalOrder => ra_total_order(ix),
        PropertyId::RaIntegrity => ra_integrity(ix),
        PropertyId::ObjectSafety => object_safety(ix),
        PropertyId::DeliveryBound => delivery_bound(ix),
        PropertyId::PerfectLinks => perfect_links(ix),
        PropertyId::CommonTermination => common_termination(ix),
        PropertyId::Termination => termination(ix),
        PropertyId::ValidityI => validity_i(ix),
        PropertyId::ValidityII => validity_ii(ix),
        PropertyId::LemmaFastSpLock => lemma_fast_sp_lock(ix),
        PropertyId::Parallelization => parallelization(ix),
        PropertyId::SnapshotConsistency => snapshot_consistency(ix),
    }
}

fn scoped_agreement(ix: &TraceIndex, prop: PropertyId, prefix: &str) -> PropResult {
    let mut scopes = 0;
    for (scope, decides) in ix.decides_by_scope() {
        if !scope.starts_with(prefix) {
            continue;
        }
        scopes += 1;
        let mut value: Option<&str> = None;
        for d in decides {
            let v = d.detail_str("value").unwrap_or("");
            match value {
                None => value = Some(v),
                Some(prev) if prev != v => {
                    return fail(
                        prop,
                        format!("{scope}: decided {prev} and {v}"),
                        Some(d.id),
                    )
                }
                _ => {}
            }
        }
    }
    pass(prop, format!("{scopes} scopes agree"))
}

fn ta_single(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::TaSingleValue;
    let mut scopes = 0;
    for (scope, decides) in ix.decides_by_scope() {
        if !scope.starts_with("ta:") {
            continue;
        }
        scopes += 1;
        let mut value: Option<&str> = None;
        for d in decides {
            if d.detail_strs("txs").len() > 1 {
                return fail(prop, format!("{scope}: decided more than one transaction"), Some(d.id));
            }
            let v = d.detail_str("value").unwrap_or("");
            match value {
                None => value = Some(v),
                Some(prev) if prev != v => {
                    return fail(prop, format!("{scope}: decided {prev} and {v}"), Some(d.id))
                }
                _ => {}
            }
        }
    }
    pass(prop, format!("{scopes} slot agreements single-valued"))
}

/// Decided-or-executed user transactions, grouped per (sender, sn).
fn committed_user_txs(ix: &TraceIndex) -> BTreeMap<(String, u64), BTreeMap<String, u64>> {
    let mut map: BTreeMap<(String, u64), BTreeMap<String, u64>> = BTreeMap::new();
    let mut add = |sender: String, sn: u64, tx: String, id: u64| {
        map.entry((sender, sn)).or_default().entry(tx).or_insert(id);
    };
    for e in ix.trace.iter_kind(EventKind::Decide) {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        for tx in e.detail_strs("txs") {
            if let Some(info) = ix.emissions.get(&tx) {
                if let Some(sn) = info.sn {
                    add(info.sender.clone(), sn, tx, e.id);
                }
            }
        }
    }
    for e in ix.trace.iter_kind(EventKind::Execute) {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        let (Some(tx), Some(sender), Some(sn)) =
            (e.detail_str("tx"), e.detail_str("sender"), e.detail_u64("sn"))
        else {
            continue;
        };
        add(sender.to_string(), sn, tx.to_string(), e.id);
    }
    map
}

fn no_conflict(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::NoConflict;
    for ((sender, sn), txs) in committed_user_txs(ix) {
        if txs.len() > 1 {
            let ids: Vec<&String> = txs.keys().collect();
            let at = txs.values().copied().max();
            return fail(
                prop,
                format!("conflicting transactions committed for {sender}/{sn}: {ids:?}"),
                at,
            );
        }
    }
    pass(prop, "no conflicting commits")
}

fn user_agreement(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::UserAgreement;
    // Executions of user transactions at their own user-actor entities.
    let mut map: BTreeMap<(String, u64), BTreeMap<String, u64>> = BTreeMap::new();
    for e in ix.trace.events.iter() {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        match e.kind {
            EventKind::Execute => {
                if e.detail_str("kind") != Some("ua") {
                    continue;
                }
                let (Some(tx), Some(sender), Some(sn)) =
                    (e.detail_str("tx"), e.detail_str("sender"), e.detail_u64("sn"))
                else {
                    continue;
                };
                map.entry((sender.to_string(), sn))
                    .or_default()
                    .entry(tx.to_string())
                    .or_insert(e.id);
            }
            EventKind::Settle => {
                let (Some(tx), Some(actor), Some(sn)) =
                    (e.detail_str("tx"), e.detail_str("actor"), e.detail_u64("sn"))
                else {
                    continue;
                };
                map.entry((actor.to_string(), sn))
                    .or_default()
                    .entry(tx.to_string())
                    .or_insert(e.id);
            }
            _ => continue,
        }
    }
    for ((sender, sn), txs) in map {
        if txs.len() > 1 {
            let at = txs.values().copied().max();
            return fail(prop, format!("{sender}/{sn} executed two transactions"), at);
        }
    }
    pass(prop, "per-slot executions agree")
}

fn user_integrity(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::UserIntegrity;
    let mut seen: BTreeSet<(u32, String, u64)> = BTreeSet::new();
    for e in ix.trace.events.iter() {
        let Some((v, _, _)) = ix.is_honest_entity(e) else { continue };
        let (sender, sn, tx) = match e.kind {
            EventKind::Execute if e.detail_str("kind") == Some("ua") => (
                e.detail_str("sender").unwrap_or("").to_string(),
                e.detail_u64("sn"),
                e.detail_str("tx").unwrap_or(""),
            ),
            EventKind::Settle => (
                e.detail_str("actor").unwrap_or("").to_string(),
                e.detail_u64("sn"),
                e.detail_str("tx").unwrap_or(""),
            ),
            _ => continue,
        };
        let Some(sn) = sn else { continue };
        if !seen.insert((v, sender.clone(), sn)) {
            return fail(prop, format!("v{v} executed {sender}/{sn} twice"), Some(e.id));
        }
        if !ix.emissions.contains_key(tx) {
            return fail(prop, format!("executed unemitted transaction {tx}"), Some(e.id));
        }
    }
    pass(prop, "user executions unique and emitted")
}

fn user_validity(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::UserValidity;
    if ix.outcome != Some(RunOutcome::Quiescent) {
        return fail(prop, "run not quiescent (horizon exhausted)", None);
    }
    // Honest, well-formed, non-conflicting client emissions must execute at
    // every honest validator (as a user execution or a settled report).
    let mut executed_at: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for e in ix.trace.events.iter() {
        let Some((v, _, _)) = ix.is_honest_entity(e) else { continue };
        match e.kind {
            EventKind::Execute | EventKind::Settle => {
                if let Some(tx) = e.detail_str("tx") {
                    executed_at.entry(tx.to_string()).or_default().insert(v);
                }
            }
            _ => {}
        }
    }
    let mut checked = 0;
    for (tx, info) in &ix.emissions {
        if !info.honest_client || !info.predicate_ok || info.conflicting_spray {
            continue;
        }
        checked += 1;
        let got = executed_at.get(tx).map(|s| s.len()).unwrap_or(0);
        if got < ix.honest.len() {
            return fail(
                prop,
                format!("emitted {tx} executed at {got}/{} honest validators", ix.honest.len()),
                Some(info.first_event),
            );
        }
    }
    pass(prop, format!("{checked} honest emissions executed everywhere"))
}

fn ra_total_order(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::RaTotalOrder;
    // Per reactive actor, per honest validator: execution sequence.
    let mut seqs: BTreeMap<(String, u32), Vec<String>> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Execute) {
        let Some((v, kind, actor)) = ix.is_honest_entity(e) else { continue };
        if kind != 'X' {
            continue;
        }
        if let Some(tx) = e.detail_str("tx") {
            seqs.entry((actor, v)).or_default().push(tx.to_string());
        }
    }
    let mut actors: BTreeMap<String, Vec<(u32, &Vec<String>)>> = BTreeMap::new();
    for ((actor, v), seq) in &seqs {
        actors.entry(actor.clone()).or_default().push((*v, seq));
    }
    for (actor, seqs) in &actors {
        for (i, (v1, s1)) in seqs.iter().enumerate() {
            for (v2, s2) in seqs.iter().skip(i + 1) {
                let min = s1.len().min(s2.len());
                if s1[..min] != s2[..min] {
                    return fail(
                        prop,
                        format!("{actor}: v{v1} and v{v2} execution orders diverge"),
                        None,
                    );
                }
                if ix.outcome == Some(RunOutcome::Quiescent) && s1.len() != s2.len() {
                    return fail(
                        prop,
                        format!(
                            "{actor}: quiescent but v{v1} executed {} vs v{v2} {}",
                            s1.len(),
                            s2.len()
                        ),
                        None,
                    );
                }
            }
        }
    }
    pass(prop, format!("{} reactive actors totally ordered", actors.len()))
}

fn ra_integrity(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::RaIntegrity;
    let mut seen: BTreeSet<(u32, String, String)> = BTreeSet::new();
    for e in ix.trace.iter_kind(EventKind::Execute) {
        let Some((v, kind, actor)) = ix.is_honest_entity(e) else { continue };
        if kind != 'X' {
            continue;
        }
        let Some(tx) = e.detail_str("tx") else { continue };
        if !seen.insert((v, actor.clone(), tx.to_string())) {
            return fail(prop, format!("v{v}.{actor} executed {tx} twice"), Some(e.id));
        }
        if !ix.emissions.contains_key(tx) {
            return fail(prop, format!("executed unemitted transaction {tx}"), Some(e.id));
        }
    }
    pass(prop, "reactive executions unique and emitted")
}

fn object_safety(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::ObjectSafety;
    // Per object: distinct consuming transactions across honest validators.
    let mut consumers: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Execute) {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        let Some(tx) = e.detail_str("tx") else { continue };
        for obj in e.detail_strs("consumed") {
            consumers.entry(obj).or_default().entry(tx.to_string()).or_insert(e.id);
        }
    }
    for (obj, txs) in consumers {
        if txs.len() > 1 {
            let at = txs.values().copied().max();
            return fail(prop, format!("object {obj} consumed by {} transactions", txs.len()), at);
        }
    }
    pass(prop, "every object consumed at most once")
}

fn delivery_bound(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::DeliveryBound;
    let mut send_time: BTreeMap<u64, u64> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Send) {
        send_time.insert(e.id, e.time);
    }
    let mut outer = 0;
    for e in ix.trace.iter_kind(EventKind::Deliver) {
        if e.detail_str("link") != Some("outer") {
            continue;
        }
        outer += 1;
        let Some(sent) = e.cause.and_then(|c| send_time.get(&c).copied()) else {
            return fail(prop, "delivery without matching send", Some(e.id));
        };
        let bound = ix.meta.params.delivery_deadline(sent);
        if e.time > bound {
            return fail(
                prop,
                format!("delivered at {} past bound {bound} (sent {sent})", e.time),
                Some(e.id),
            );
        }
        if e.time <= sent {
            return fail(prop, "outer delivery without positive delay", Some(e.id));
        }
    }
    pass(prop, format!("{outer} outer deliveries within bound"))
}

fn perfect_links(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::PerfectLinks;
    if ix.outcome != Some(RunOutcome::Quiescent) {
        return pass(prop, "skipped: run not quiescent");
    }
    let honest_addr = |s: &str| parse_entity(s).map(|(v, _, _)| ix.honest.contains(&v));
    let mut expected: BTreeMap<u64, u64> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Send) {
        if e.detail_str("link") != Some("outer") {
            continue;
        }
        let from_honest = e.from.as_deref().and_then(honest_addr).unwrap_or(false);
        let to_honest = e.to.as_deref().and_then(honest_addr).unwrap_or(false);
        if from_honest && to_honest {
            expected.insert(e.id, 0);
        }
    }
    for e in ix.trace.iter_kind(EventKind::Deliver) {
        if let Some(c) = e.cause {
            if let Some(count) = expected.get_mut(&c) {
                *count += 1;
            }
        }
    }
    let total = expected.len();
    for (send, count) in expected {
        if count != 1 {
            return fail(
                prop,
                format!("honest send {send} delivered {count} times"),
                Some(send),
            );
        }
    }
    pass(prop, format!("{total} honest sends delivered exactly once"))
}

fn common_termination(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::CommonTermination;
    let mut scopes = 0;
    for (scope, decides) in ix.decides_by_scope() {
        if !scope.starts_with("poa:") {
            continue;
        }
        // One decide per validator (first).
        let mut first_per_validator: BTreeMap<u32, u64> = BTreeMap::new();
        for d in &decides {
            if let Some((v, _, _)) = ix.is_honest_entity(d) {
                first_per_validator.entry(v).or_insert(d.time);
            }
        }
        if first_per_validator.len() < 2 {
            continue;
        }
        scopes += 1;
        let earliest = *first_per_validator.values().min().expect("nonempty");
        let bound = ix.meta.params.delivery_deadline(earliest);
        for (v, t) in first_per_validator {
            if t > bound {
                return fail(
                    prop,
                    format!("{scope}: v{v} decided at {t}, bound {bound} (first {earliest})"),
                    None,
                );
            }
        }
    }
    pass(prop, format!("{scopes} instances within the common bound"))
}

fn termination(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::Termination;
    if ix.outcome != Some(RunOutcome::Quiescent) {
        return fail(prop, "horizon exhausted with events pending", None);
    }
    for (scope, decides) in ix.decides_by_scope() {
        if !scope.starts_with("poa:") {
            continue;
        }
        let mut deciders: BTreeSet<u32> = BTreeSet::new();
        for d in decides {
            if let Some((v, _, _)) = ix.is_honest_entity(d) {
                deciders.insert(v);
            }
        }
        if !deciders.is_empty() && deciders.len() < ix.honest.len() {
            return fail(
                prop,
                format!("{scope}: decided by {}/{} honest validators", deciders.len(), ix.honest.len()),
                None,
            );
        }
    }
    pass(prop, "all started instances decided everywhere")
}

fn validity_i(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::ValidityI;
    // Instance scope -> per honest validator pool snapshot at activation.
    let mut pools: BTreeMap<String, BTreeMap<u32, BTreeSet<String>>> = BTreeMap::new();
    let mut leaders: BTreeMap<String, u32> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Activate) {
        let Some((v, _, _)) = ix.is_honest_entity(e) else { continue };
        let Some(scope) = e.instance.as_deref() else { continue };
        if let Some(leader) = e.detail_u64("leader") {
            leaders.insert(scope.to_string(), leader as u32);
        }
        pools
            .entry(scope.to_string())
            .or_default()
            .insert(v, e.detail_strs("pool").into_iter().collect());
    }
    let decides = ix.decides_by_scope();
    let mut checked = 0;
    for (scope, per_validator) in pools {
        let Some(leader) = leaders.get(&scope) else { continue };
        if !ix.honest.contains(leader) || per_validator.len() < ix.honest.len() {
            continue;
        }
        let mut universal: Option<BTreeSet<String>> = None;
        for pool in per_validator.values() {
            universal = Some(match universal {
                None => pool.clone(),
                Some(u) => u.intersection(pool).cloned().collect(),
            });
        }
        let universal = universal.unwrap_or_default();
        if universal.is_empty() {
            continue;
        }
        let Some(ds) = decides.get(&scope) else { continue };
        let Some(first) = ds.first() else { continue };
        let decided: BTreeSet<String> = first.detail_strs("txs").into_iter().collect();
        checked += 1;
        for tx in &universal {
            if !decided.contains(tx) {
                return fail(
                    prop,
                    format!("{scope}: {tx} in every honest pool but not decided"),
                    Some(first.id),
                );
            }
        }
    }
    pass(prop, format!("{checked} honest-leader instances include universal transactions"))
}

fn validity_ii(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::ValidityII;
    for e in ix.trace.iter_kind(EventKind::Decide) {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        for tx in e.detail_strs("txs") {
            if !ix.emissions.contains_key(&tx) {
                return fail(prop, format!("decided unemitted transaction {tx}"), Some(e.id));
            }
        }
    }
    pass(prop, "all decided transactions were emitted")
}

fn lemma_fast_sp_lock(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::LemmaFastSpLock;
    // Fast-path decided user transactions (own quorum or forwarded proof).
    let mut fast_decided: BTreeMap<(String, u64), String> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Decide) {
        if ix.is_honest_entity(e).is_none() {
            continue;
        }
        match e.detail_str("path") {
            Some("fast") | Some("proof") => {}
            _ => continue,
        }
        for tx in e.detail_strs("txs") {
            if let Some(info) = ix.emissions.get(&tx) {
                if let Some(sn) = info.sn {
                    fast_decided.insert((info.sender.clone(), sn), tx);
                }
            }
        }
    }
    if fast_decided.is_empty() {
        return pass(prop, "no fast-path decisions; vacuous");
    }
    for e in ix.trace.iter_kind(EventKind::Lock) {
        if ix.is_honest_entity(e).is_none() || e.detail_str("lock") != Some("sp") {
            continue;
        }
        let (Some(actor), Some(sn), Some(tx)) =
            (e.detail_str("actor"), e.detail_u64("sn"), e.detail_str("tx"))
        else {
            continue;
        };
        if let Some(winner) = fast_decided.get(&(actor.to_string(), sn)) {
            if winner != tx {
                return fail(
                    prop,
                    format!("slow-path lock on {tx} conflicts with fast-decided {winner} ({actor}/{sn})"),
                    Some(e.id),
                );
            }
        }
    }
    pass(prop, format!("{} fast decisions uncontested in slow-path locks", fast_decided.len()))
}

fn parallelization(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::Parallelization;
    // Walk each reactive execution's cause chain; no ancestor may belong to
    // a different reactive actor's instance scope.
    let mut checked = 0;
    for e in ix.trace.iter_kind(EventKind::Execute) {
        let Some((_, kind, actor)) = ix.is_honest_entity(e) else { continue };
        if kind != 'X' {
            continue;
        }
        checked += 1;
        let own_prefix = format!("poa:{actor}/");
        let mut cursor = e.cause;
        while let Some(id) = cursor {
            let Some(&idx) = ix.by_id.get(&id) else { break };
            let ev = &ix.trace.events[idx];
            if let Some(scope) = ev.instance.as_deref() {
                if scope.starts_with("poa:") && !scope.starts_with(&own_prefix) {
                    return fail(
                        prop,
                        format!(
                            "execution at {actor} causally depends on {scope} (event {})",
                            ev.id
                        ),
                        Some(e.id),
                    );
                }
            }
            cursor = ev.cause;
        }
    }
    pass(prop, format!("{checked} reactive executions causally independent across actors"))
}

fn snapshot_consistency(ix: &TraceIndex) -> PropResult {
    let prop = PropertyId::SnapshotConsistency;
    if ix.outcome != Some(RunOutcome::Quiescent) {
        return pass(prop, "skipped: run not quiescent");
    }
    // Per actor: serialized snapshot per honest validator must be identical.
    let mut per_actor: BTreeMap<String, BTreeMap<u32, String>> = BTreeMap::new();
    for e in ix.trace.iter_kind(EventKind::Snapshot) {
        let Some((v, _, actor)) = ix.is_honest_entity(e) else { continue };
        let body = serde_json::to_string(&e.details).expect("snapshot serializes");
        per_actor.entry(actor).or_default().insert(v, body);
    }
    for (actor, versions) in per_actor {
        let mut distinct: BTreeSet<&String> = BTreeSet::new();
        for body in versions.values() {
            distinct.insert(body);
        }
        if distinct.len() > 1 {
            return fail(prop, format!("{actor}: honest validators ended in different states"), None);
        }
    }
    pass(prop, "honest validators converged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemParams;
    use serde_json::{Map, Value};

    fn meta_event() -> TraceEvent {
        let meta = TraceMeta {
            params: SystemParams { n: 4, f: 1, p: 0, delta_bound: 10, gst: 0 },
            byzantine: vec![],
            seed: 0,
            horizon: 1000,
        };
        let details = match serde_json::to_value(&meta).unwrap() {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        TraceEvent {
            id: 0,
            time: 0,
            kind: EventKind::Meta,
            from: None,
            to: None,
            payload_digest: None,
            instance: None,
            cause: None,
            details,
        }
    }

    fn decide(id: u64, from: &str, scope: &str, value: &str) -> TraceEvent {
        let mut details = Map::new();
        details.insert("scope".into(), Value::from(scope));
        details.insert("value".into(), Value::from(value));
        details.insert("path".into(), Value::from("fast"));
        details.insert("txs".into(), Value::from(Vec::<String>::new()));
        TraceEvent {
            id,
            time: 5,
            kind: EventKind::Decide,
            from: Some(from.into()),
            to: None,
            payload_digest: None,
            instance: Some(scope.into()),
            cause: None,
            details,
        }
    }

    #[test]
    fn forged_double_decide_fails_agreement() {
        // Negative control: a hand-built trace with two decisions for one
        // instance must trip the agreement checker at the second decide.
        let trace = Trace {
            events: vec![
                meta_event(),
                decide(1, "v0.X:X", "poa:X/0", "aaaa"),
                decide(2, "v1.X:X", "poa:X/0", "bbbb"),
            ],
        };
        let report = check_properties(&trace, &[PropertyId::AgreementPoa]);
        assert!(!report.all_pass());
        assert_eq!(report.results[0].first_violation, Some(2));
    }

    #[test]
    fn late_delivery_fails_bound() {
        let mut send_details = Map::new();
        send_details.insert("link".into(), Value::from("outer"));
        let send = TraceEvent {
            id: 1,
            time: 0,
            kind: EventKind::Send,
            from: Some("v0.A:alice".into()),
            to: Some("v1.A:alice".into()),
            payload_digest: None,
            instance: None,
            cause: None,
            details: send_details.clone(),
        };
        let deliver = TraceEvent {
            id: 2,
            time: 999, // far past gst + delta
            kind: EventKind::Deliver,
            from: Some("v0.A:alice".into()),
            to: Some("v1.A:alice".into()),
            payload_digest: None,
            instance: None,
            cause: Some(1),
            details: send_details,
        };
        let trace = Trace { events: vec![meta_event(), send, deliver] };
        let report = check_properties(&trace, &[PropertyId::DeliveryBound]);
        assert!(!report.all_pass());
    }

    #[test]
    fn property_names_roundtrip() {
        for p in [
            PropertyId::AgreementPoa,
            PropertyId::NoConflict,
            PropertyId::ObjectSafety,
            PropertyId::Parallelization,
            PropertyId::LemmaFastSpLock,
        ] {
            assert_eq!(PropertyId::parse(p.name()), Some(p));
        }
        assert_eq!(PropertyId::parse("nonsense"), None);
    }
}
