//! System parameters and the quorum thresholds derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Global protocol parameters shared by every validator.
///
/// `n` validators, at most `f` Byzantine, fast path tolerates up to `p`
/// faults. Resilience requires `n >= 3f + 2p + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Validator count.
    pub n: u32,
    /// Maximum Byzantine validators tolerated overall.
    pub f: u32,
    /// Maximum faults tolerated on the fast path.
    pub p: u32,
    /// Maximum post-stabilization message delay, in simulated time units.
    pub delta_bound: u64,
    /// Global stabilization time, in simulated time units.
    pub gst: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("resilience violated: n={n} < 3f + 2p + 1 = {required} (f={f}, p={p})")]
    Resilience { n: u32, f: u32, p: u32, required: u32 },
    #[error("delta_bound must be positive")]
    ZeroDelta,
}

/// Vote-count thresholds used throughout the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quorums {
    /// Votes needed for a fast-path decision: `n - p`.
    pub fast: u32,
    /// Votes for one value that force a slow-path proposal of it: `n - p - 2f`.
    pub slow_trigger: u32,
    /// Fallback-block occurrences needed to carry a transaction into a
    /// slow-path proposal: `n - 2f`.
    pub fallback: u32,
    /// Honest proposals guaranteed behind any consensus-decided transaction:
    /// `n - 3f`.
    pub qc_carry: u32,
    /// Votes that end a round and open the slow path: `n - f`.
    pub round_votes: u32,
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let required = 3 * self.f + 2 * self.p + 1;
        if self.n < required {
            return Err(ParamError::Resilience { n: self.n, f: self.f, p: self.p, required });
        }
        if self.delta_bound == 0 {
            return Err(ParamError::ZeroDelta);
        }
        Ok(())
    }

    pub fn quorums(&self) -> Result<Quorums, ParamError> {
        derive_quorums(self)
    }

    /// Delivery deadline for a message sent at `t`: `max(t + delta, gst + delta)`.
    pub fn delivery_deadline(&self, send_time: u64) -> u64 {
        (send_time + self.delta_bound).max(self.gst + self.delta_bound)
    }
}

/// Computes all five thresholds, rejecting parameters that violate the
/// resilience bound.
pub fn derive_quorums(params: &SystemParams) -> Result<Quorums, ParamError> {
    params.validate()?;
    let SystemParams { n, f, p, .. } = *params;
    Ok(Quorums {
        fast: n - p,
        slow_trigger: n - p - 2 * f,
        fallback: n - 2 * f,
        qc_carry: n - 3 * f,
        round_votes: n - f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u32, f: u32, p: u32) -> SystemParams {
        SystemParams { n, f, p, delta_bound: 100, gst: 0 }
    }

    #[test]
    fn thresholds_for_reference_config() {
        let q = derive_quorums(&params(6, 1, 1)).unwrap();
        assert_eq!(
            q,
            Quorums { fast: 5, slow_trigger: 3, fallback: 4, qc_carry: 3, round_votes: 5 }
        );
    }

    #[test]
    fn thresholds_with_no_fast_tolerance() {
        let q = derive_quorums(&params(4, 1, 0)).unwrap();
        assert_eq!(
            q,
            Quorums { fast: 4, slow_trigger: 2, fallback: 2, qc_carry: 1, round_votes: 3 }
        );
    }

    #[test]
    fn thresholds_recomputed_independently() {
        // Recompute each formula from scratch rather than trusting the impl.
        let (n, f, p) = (9u32, 2u32, 1u32);
        assert!(n >= 3 * f + 2 * p + 1);
        let expect = Quorums {
            fast: n - p,
            slow_trigger: n - p - 2 * f,
            fallback: n - 2 * f,
            qc_carry: n - 3 * f,
            round_votes: n - f,
        };
        let q = derive_quorums(&params(9, 2, 1)).unwrap();
        assert_eq!(q, expect);
        assert_eq!((q.fast, q.slow_trigger), (8, 4));
        assert_eq!((q.fallback, q.qc_carry, q.round_votes), (5, 3, 7));
    }

    #[test]
    fn rejects_insufficient_validators() {
        assert!(matches!(
            derive_quorums(&params(5, 1, 1)),
            Err(ParamError::Resilience { required: 6, .. })
        ));
        assert!(derive_quorums(&params(3, 1, 0)).is_err());
    }

    #[test]
    fn rejects_zero_delta() {
        let mut p = params(4, 1, 0);
        p.delta_bound = 0;
        assert_eq!(derive_quorums(&p), Err(ParamError::ZeroDelta));
    }

    #[test]
    fn quorum_intersection_sweep() {
        // For every admissible (f, p) up to 4, two fast quorums intersect in
        // at least 2f+1 validators and a fast quorum meets a slow trigger in
        // at least f+1.
        for f in 0u32..=4 {
            for p in 0u32..=4 {
                let min_n = 3 * f + 2 * p + 1;
                for n in min_n..min_n + 4 {
                    let q = derive_quorums(&params(n, f, p)).unwrap();
                    assert!(2 * q.fast >= n + 3 * f + 1, "fast-fast n={n} f={f} p={p}");
                    assert!(
                        q.fast + q.slow_trigger >= n + f + 1,
                        "fast-slow n={n} f={f} p={p}"
                    );
                    assert!(q.slow_trigger >= f + 1);
                    assert!(q.fast <= n);
                }
            }
        }
    }

    #[test]
    fn delivery_deadline_covers_both_regimes() {
        let p = SystemParams { n: 6, f: 1, p: 1, delta_bound: 5, gst: 100 };
        assert_eq!(p.delivery_deadline(10), 105);
        assert_eq!(p.delivery_deadline(200), 205);
    }
}
