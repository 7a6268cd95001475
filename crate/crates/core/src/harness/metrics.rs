//! Trace-derived metrics: commit latency in communication steps, paths
//! taken, chain lengths and message counts.
//!
//! A communication step is one outer-link causal edge; inner links count
//! zero. A transaction's hop count at a validator is the causal depth of
//! that validator's execution minus the depth of the transaction's first
//! emission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sim::trace::{EventKind, Trace};

use super::checks::{parse_entity, TraceIndex};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TxMetrics {
    pub kind: String,
    pub emit_depth: u32,
    /// Validator -> outer hops from emission to that validator's execution.
    pub exec_hops: BTreeMap<u32, u32>,
    pub exec_times: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub per_tx: BTreeMap<String, TxMetrics>,
    /// Instance scope -> decide path per validator.
    pub instance_paths: BTreeMap<String, BTreeMap<u32, String>>,
    /// Reactive actor -> executed transaction count (max over validators).
    pub chain_lengths: BTreeMap<String, usize>,
    pub message_counts: BTreeMap<String, u64>,
}

pub fn compute_metrics(trace: &Trace) -> Metrics {
    let Ok(index) = TraceIndex::build(trace) else {
        return Metrics::default();
    };
    let depths = index.depths();
    let mut metrics = Metrics::default();

    for (tx, info) in &index.emissions {
        let depth = depths.get(&info.first_event).copied().unwrap_or(0);
        metrics.per_tx.insert(
            tx.clone(),
            TxMetrics { kind: info.kind.clone(), emit_depth: depth, ..Default::default() },
        );
    }

    let mut per_validator_chain: BTreeMap<(String, u32), usize> = BTreeMap::new();
    for e in trace.events.iter() {
        match e.kind {
            EventKind::Execute => {
                let Some(from) = e.from.as_deref() else { continue };
                let Some((v, entity_kind, actor)) = parse_entity(from) else { continue };
                let Some(tx) = e.detail_str("tx") else { continue };
                if let Some(m) = metrics.per_tx.get_mut(tx) {
                    let depth = depths.get(&e.id).copied().unwrap_or(0);
                    let hops = depth.saturating_sub(m.emit_depth);
                    m.exec_hops.entry(v).or_insert(hops);
                    m.exec_times.entry(v).or_insert(e.time);
                }
                if entity_kind == 'X' {
                    *per_validator_chain.entry((actor, v)).or_default() += 1;
                }
            }
            EventKind::Decide => {
                let (Some(from), Some(scope)) = (e.from.as_deref(), e.instance.as_deref()) else {
                    continue;
                };
                let Some((v, _, _)) = parse_entity(from) else { continue };
                if let Some(path) = e.detail_str("path") {
                    metrics
                        .instance_paths
                        .entry(scope.to_string())
                        .or_default()
                        .entry(v)
                        .or_insert_with(|| path.to_string());
                }
            }
            EventKind::Send => {
                if let Some(d) = e.payload_digest.as_deref() {
                    let kind = d.split('(').next().unwrap_or(d).to_string();
                    *metrics.message_counts.entry(kind).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    for ((actor, _), len) in per_validator_chain {
        let entry = metrics.chain_lengths.entry(actor).or_default();
        *entry = (*entry).max(len);
    }
    metrics
}

impl Metrics {
    /// Hop counts of one transaction at the given validators, if executed
    /// everywhere.
    pub fn hops_at(&self, tx: &str, validators: &[u32]) -> Option<Vec<u32>> {
        let m = self.per_tx.get(tx)?;
        validators.iter().map(|v| m.exec_hops.get(v).copied()).collect()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("transaction latencies (outer hops per validator):\n");
        for (tx, m) in &self.per_tx {
            let hops: Vec<String> =
                m.exec_hops.iter().map(|(v, h)| format!("v{v}:{h}")).collect();
            out.push_str(&format!("  {tx} [{}] {}\n", m.kind, hops.join(" ")));
        }
        out.push_str("instance paths:\n");
        for (scope, paths) in &self.instance_paths {
            let parts: Vec<String> = paths.iter().map(|(v, p)| format!("v{v}:{p}")).collect();
            out.push_str(&format!("  {scope} {}\n", parts.join(" ")));
        }
        out.push_str("chain lengths:\n");
        for (actor, len) in &self.chain_lengths {
            out.push_str(&format!("  {actor}: {len}\n"));
        }
        out.push_str("message counts:\n");
        for (kind, count) in &self.message_counts {
            out.push_str(&format!("  {kind}: {count}\n"));
        }
        out
    }
}
