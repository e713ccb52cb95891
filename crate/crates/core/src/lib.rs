//! Identified-set geometry for top-K censored next-token observations.
//!
//! An API that reveals only the K highest scores of a V-token distribution
//! leaves a whole family of full distributions consistent with what was
//! observed. This crate computes that family's geometry exactly and the
//! recovery limits it implies:
//!
//! - [`observation`]: validated top-K observations and their log-domain summary
//!   (`log Z_A`, threshold `tau`, head conditional `alpha`).
//! - [`identified_set`]: total-variation diameter `U_K`, per-token caps,
//!   extremal pairs, membership, and a brute-force box-grid diameter oracle.
//! - [`minimax`]: binary-endpoint reserve and KL lower bound `R_bin`, the
//!   finite-`U` upper envelope `G`, adversary best responses, worst-case risk of
//!   an estimator, and critical-K verdicts.
//! - [`reference`]: reference-model ceilings, the shrunken diameter `U_R`, the
//!   reference-weighted estimator and calibration diagnostics.
//! - [`normalized`]: the normalized log-probability regime where the hidden
//!   tail mass is observed exactly.
//! - [`composition`]: synthetic teachers, censoring, K-sweeps and non-adaptive
//!   multi-position composition.
//!
//! All divergences are in nats. The crate is `no_std` and needs only `alloc`;
//! IO, file formats and the command line live in the `censet` crate.
//!
//! ```
//! use censet_core::observation::{AccessMode, TopKObservation, summarize};
//! use censet_core::identified_set::geometry;
//! use censet_core::minimax::binary_reserve;
//!
//! let obs = TopKObservation::new(4, vec![(2, 1.0), (0, 0.0)], AccessMode::UnnormalizedLogits, "p0")
//!     .unwrap();
//! let geom = geometry(&summarize(&obs));
//! let expected = 2.0 / (core::f64::consts::E + 3.0);
//! assert!((geom.diameter() - expected).abs() < 1e-12);
//!
//! let reserve = binary_reserve(geom.diameter()).unwrap();
//! assert!(reserve.r_bin > 0.0 && reserve.r_bin < geom.diameter());
//! ```

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod composition;
pub mod divergence;
pub mod identified_set;
pub mod math;
pub mod minimax;
pub mod normalized;
pub mod observation;
pub mod policy;
pub mod reference;

pub use identified_set::{geometry, FeasiblePoint, SetGeometry, TailAllocation};
pub use minimax::{binary_reserve, g_max, BinaryReserve, EstimatorSpec, MinimaxCertificate, TailRule};
pub use observation::{summarize, AccessMode, LogSummary, TopKObservation};
pub use policy::NumericPolicy;
