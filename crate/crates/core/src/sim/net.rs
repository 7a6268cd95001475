//! Message delay policies.
//!
//! Outer-link delays are adversary-controlled but always respect the
//! delivery bound `max(send_time + delta, gst + delta)`. Inner links (within
//! a validator) have zero latency. The adversary can never drop a message
//! between honest entities.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::model::{SimTime, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Uniform delay in `(0, delta]`, pre- and post-stabilization alike.
    #[default]
    Synchronous,
    /// Before stabilization, delays are drawn up to a cap (default 20
    /// delta) and clamped by the delivery bound; after it, synchronous.
    PreGstAdversarial,
    /// Synchronous delays, but messages to or from Byzantine validators may
    /// be dropped.
    DropByzantine,
}

#[derive(Debug, Clone)]
pub struct DelayPolicy {
    pub mode: DelayMode,
    pub pre_gst_cap_deltas: u64,
    pub drop_probability_percent: u32,
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy { mode: DelayMode::Synchronous, pre_gst_cap_deltas: 20, drop_probability_percent: 30 }
    }
}

pub enum Delivery {
    At(SimTime),
    Dropped,
}

/// Post-stabilization delay: jitter close to the bound itself, the usual
/// synchrony abstraction where the bound is "the" network latency. Keeping
/// the jitter narrow means a quorum of first-class messages always beats a
/// forwarded shortcut that needs an extra step.
fn synchronous_delay(delta: u64, rng: &mut ChaCha12Rng) -> u64 {
    let low = (delta - delta / 10).max(1);
    rng.gen_range(low..=delta)
}

impl DelayPolicy {
    /// Chooses the delivery time for an outer-link message sent at `now`.
    /// `byzantine_involved` is true when the sender or receiver validator is
    /// Byzantine; only such messages may be dropped.
    pub fn outer_delivery(
        &self,
        params: &SystemParams,
        now: SimTime,
        byzantine_involved: bool,
        rng: &mut ChaCha12Rng,
    ) -> Delivery {
        let deadline = params.delivery_deadline(now);
        match self.mode {
            DelayMode::Synchronous => {
                Delivery::At(now + synchronous_delay(params.delta_bound, rng))
            }
            DelayMode::PreGstAdversarial => {
                if now >= params.gst {
                    Delivery::At(now + synchronous_delay(params.delta_bound, rng))
                } else {
                    let cap = self.pre_gst_cap_deltas.max(1) * params.delta_bound;
                    let delay = rng.gen_range(1..=cap);
                    Delivery::At((now + delay).min(deadline))
                }
            }
            DelayMode::DropByzantine => {
                if byzantine_involved && rng.gen_range(0..100) < self.drop_probability_percent {
                    Delivery::Dropped
                } else {
                    Delivery::At(now + synchronous_delay(params.delta_bound, rng))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(delta: u64, gst: u64) -> SystemParams {
        SystemParams { n: 6, f: 1, p: 1, delta_bound: delta, gst }
    }

    #[test]
    fn synchronous_delivery_within_delta() {
        let policy = DelayPolicy::default();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            match policy.outer_delivery(&params(5, 0), 10, false, &mut rng) {
                Delivery::At(t) => assert!(t > 10 && t <= 15),
                Delivery::Dropped => panic!("synchronous mode never drops"),
            }
        }
    }

    #[test]
    fn adversarial_delays_respect_stabilization_bound() {
        let policy = DelayPolicy { mode: DelayMode::PreGstAdversarial, ..Default::default() };
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let p = params(5, 100);
        for _ in 0..500 {
            match policy.outer_delivery(&p, 10, false, &mut rng) {
                Delivery::At(t) => assert!(t > 10 && t <= 105),
                Delivery::Dropped => panic!("adversarial mode never drops"),
            }
        }
        // After stabilization the plain delta bound applies.
        for _ in 0..100 {
            match policy.outer_delivery(&p, 200, false, &mut rng) {
                Delivery::At(t) => assert!(t > 200 && t <= 205),
                Delivery::Dropped => panic!(),
            }
        }
    }

    #[test]
    fn only_byzantine_involved_messages_can_drop() {
        let policy = DelayPolicy {
            mode: DelayMode::DropByzantine,
            drop_probability_percent: 100,
            ..Default::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        assert!(matches!(
            policy.outer_delivery(&params(5, 0), 0, true, &mut rng),
            Delivery::Dropped
        ));
        assert!(matches!(
            policy.outer_delivery(&params(5, 0), 0, false, &mut rng),
            Delivery::At(_)
        ));
    }
}
