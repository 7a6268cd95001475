//! Scenario harness: configuration, the event-loop world, Byzantine
//! strategies, trace checkers, metrics and schedule exploration.

pub mod byzantine;
pub mod checks;
pub mod explore;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod suite;
pub mod world;
