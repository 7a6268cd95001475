//! Run entry points: seeded scenario runs and offline trace checking.

use serde::{Deserialize, Serialize};

use crate::sim::trace::{RunOutcome, Trace};

use super::checks::{check_properties, CheckReport, PropertyId};
use super::metrics::{compute_metrics, Metrics};
use super::scenario::{Scenario, ScenarioError};
use super::world::{Driver, RunMode, World};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub metrics: Metrics,
    pub report: CheckReport,
    pub outcome: RunOutcome,
}

impl RunResult {
    pub fn ok(&self) -> bool {
        self.report.all_pass()
    }
}

/// Runs a compiled scenario under one seed and evaluates its configured
/// property checks.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunResult, ScenarioError> {
    let compiled = scenario.compile()?;
    let props = compiled.props.clone();
    let mut world = World::new(compiled, seed, RunMode::Timed);
    let outcome = world.run();
    let trace = world.trace;
    let metrics = compute_metrics(&trace);
    let report = check_properties(&trace, &props);
    Ok(RunResult { trace, metrics, report, outcome })
}

/// Replays a recorded adversary schedule (from exploration) against the
/// scenario, reproducing the exact decision sequence.
pub fn run_scheduled(scenario: &Scenario, schedule: &[usize]) -> Result<RunResult, ScenarioError> {
    let compiled = scenario.compile()?;
    let props = if compiled.props.is_empty() {
        PropertyId::safety_set()
    } else {
        compiled.props.clone()
    };
    let max_steps = compiled.explore.max_steps;
    let mut world = World::new(
        compiled,
        0,
        RunMode::Explore { driver: Driver::with_prefix(schedule.to_vec()), max_steps },
    );
    let outcome = world.run();
    let trace = world.trace;
    let metrics = compute_metrics(&trace);
    let report = check_properties(&trace, &props);
    Ok(RunResult { trace, metrics, report, outcome })
}

/// Checks named properties against a stored trace.
pub fn check_trace(trace: &Trace, props: &[PropertyId]) -> CheckReport {
    check_properties(trace, props)
}

/// A recorded counterexample: replaying the schedule reproduces the
/// violation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub schedule: Vec<usize>,
    pub violated: String,
    pub detail: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
        [params]
        n = 6
        f = 1
        p = 1

        [[users]]
        name = "alice"
        coins = [10]

        [[users]]
        name = "bob"

        [[script]]
        at_deltas = 0
        user = "alice"
        [[script.tx]]
        kind = "ua"
        consume = ["g:alice:0"]
        [[script.tx.code]]
        [script.tx.code.split]
        object = "g:alice:0"
        parts = [ { amount = 8, owner = "alice" }, { amount = 2, owner = "bob" } ]

        [checks]
        props = ["agreement_pob", "user_agreement", "no_conflict", "delivery_bound", "perfect_links", "snapshot_consistency", "validity_ii", "user_validity"]
    "#;

    #[test]
    fn single_transfer_run_is_clean_and_deterministic() {
        let scenario = Scenario::from_toml_str(SMOKE).unwrap();
        let a = run_scenario(&scenario, 11).unwrap();
        assert_eq!(a.outcome, RunOutcome::Quiescent, "trace:\n{}", a.trace.to_jsonl());
        assert!(a.ok(), "{}", a.report.summary());
        // Every honest validator executes the transfer; bob gains a coin.
        let execs = a
            .trace
            .iter_kind(crate::sim::trace::EventKind::Execute)
            .count();
        assert_eq!(execs, 6, "all six validators execute the transfer");
        let b = run_scenario(&scenario, 11).unwrap();
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
        let c = run_scenario(&scenario, 12).unwrap();
        assert!(c.ok());
    }
}
