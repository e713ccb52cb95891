//! Process-wide numeric tolerances.
//!
//! Every tolerance used by validation and membership checks is read from one
//! record. The record is stored in atomics so it can be replaced once at
//! startup (the CLI loads overrides from a file) without threading a policy
//! argument through every call.

use core::sync::atomic::{AtomicU64, Ordering};

/// Tolerances shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// Slack on tail-mass bounds and per-token caps in membership checks.
    pub membership_tol: f64,
    /// Admissible excess of a normalized head mass over 1.
    pub head_mass_tol: f64,
    /// Admissible deviation of a distribution's total from 1 in `tv`/`kl`.
    pub distribution_tol: f64,
    /// Raw hidden tail mass below `-tail_clamp_tol` is reported as clamped.
    pub tail_clamp_tol: f64,
    /// Slack on `t* <= M * c` for normalized observations.
    pub infeasibility_tol: f64,
    /// Interval tolerance for golden-section refinements.
    pub search_tol: f64,
    /// Half-width of the band around `delta` flagged as a threshold case.
    pub threshold_band: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        membership_tol: 1e-12,
        head_mass_tol: 1e-9,
        distribution_tol: 1e-9,
        tail_clamp_tol: 1e-9,
        infeasibility_tol: 1e-9,
        search_tol: 1e-10,
        threshold_band: 1e-3,
    };

    /// The policy currently in force.
    pub fn current() -> NumericPolicy {
        let get = |i: usize| f64::from_bits(SLOTS[i].load(Ordering::Relaxed));
        NumericPolicy {
            membership_tol: get(0),
            head_mass_tol: get(1),
            distribution_tol: get(2),
            tail_clamp_tol: get(3),
            infeasibility_tol: get(4),
            search_tol: get(5),
            threshold_band: get(6),
        }
    }

    /// Replace the process-wide policy. Intended to be called once at startup.
    pub fn install(self) {
        let fields = self.fields();
        for (slot, value) in SLOTS.iter().zip(fields) {
            slot.store(value.to_bits(), Ordering::Relaxed);
        }
    }

    /// Restore [`NumericPolicy::DEFAULT`].
    pub fn reset() {
        Self::DEFAULT.install();
    }

    /// True when every field is finite and non-negative.
    pub fn is_valid(&self) -> bool {
        self.fields().iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    fn fields(&self) -> [f64; 7] {
        [
            self.membership_tol,
            self.head_mass_tol,
            self.distribution_tol,
            self.tail_clamp_tol,
            self.infeasibility_tol,
            self.search_tol,
            self.threshold_band,
        ]
    }
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

const fn bits(x: f64) -> u64 {
    x.to_bits()
}

static SLOTS: [AtomicU64; 7] = [
    AtomicU64::new(bits(NumericPolicy::DEFAULT.membership_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.head_mass_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.distribution_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.tail_clamp_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.infeasibility_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.search_tol)),
    AtomicU64::new(bits(NumericPolicy::DEFAULT.threshold_band)),
];
