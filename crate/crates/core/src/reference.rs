//! Reference-model shrinkage of the identified set.
//!
//! If the teacher is a fine-tune of a known reference model whose censored
//! logits moved up by at most `rho`, every censored logit obeys
//! `z_u <= min(tau, z_ref(u) + rho)`. With `B_u = exp` of that ceiling and
//! `C_R = Σ B_u` the diameter shrinks to `U_R = C_R / (Z_A + C_R) <= U_K`.
//!
//! Compliance with the perturbation bound cannot be checked on censored
//! tokens; [`calibrate_rho`] only summarizes what the revealed tokens show.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::identified_set::{
    box_diameter_oracle, to_token_layout, FeasiblePoint, OracleDiameter, SetError, SetGeometry,
};
use crate::math::{binary_kl, exp, floor, logsumexp, sigmoid};
use crate::minimax::{
    kl_zero_tail, sup_over_tail_mass, tail_mass_at_ratio, CappedTailAdversary, EstimatorSpec, MinimaxError, RiskSup,
    TailRule,
};

pub const CALIBRATION_LABEL: &str = "structural prior diagnostic, not a guarantee for censored tokens";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("reference has no logit for censored token {0} and no default")]
    MissingToken(u32),
    #[error("dense reference has {got} logits, vocabulary has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("reference logit for token {0} is NaN")]
    NanLogit(u32),
    #[error("rho = {0} must be non-negative")]
    NegativeRho(f64),
    #[error("calibration needs at least 2 observed pairs, got {0}")]
    InsufficientData(usize),
    #[error("anchor index {index} out of range for {len} pairs")]
    AnchorOutOfRange { index: usize, len: usize },
    #[error("calibration pair {0} is not finite")]
    NonFinitePair(usize),
    #[error(transparent)]
    Minimax(#[from] MinimaxError),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Reference logits for one position, on the observation's additive scale.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceLogits {
    /// One logit per vocabulary entry; revealed entries are ignored.
    Dense(Vec<f64>),
    /// Explicit entries; tokens not listed take `default`, which may be `-inf`.
    Sparse { entries: BTreeMap<u32, f64>, default: Option<f64> },
}

impl ReferenceLogits {
    /// Reference logit at `token`, if the reference covers it.
    pub fn logit_at(&self, token: u32) -> Option<f64> {
        match self {
            ReferenceLogits::Dense(z) => z.get(token as usize).copied(),
            ReferenceLogits::Sparse { entries, default } => entries.get(&token).copied().or(*default),
        }
    }

    fn logit(&self, token: u32) -> Result<f64, ReferenceError> {
        let z = match self {
            ReferenceLogits::Dense(z) => z[token as usize],
            ReferenceLogits::Sparse { entries, default } => match entries.get(&token).copied().or(*default) {
                Some(z) => z,
                None => return Err(ReferenceError::MissingToken(token)),
            },
        };
        if z.is_nan() {
            return Err(ReferenceError::NanLogit(token));
        }
        Ok(z)
    }
}

/// Per-token ceilings and the shrunken diameter `U_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBound {
    pub rho: f64,
    /// `log B_u` for each censored token in ascending id order.
    pub log_b: Vec<f64>,
    /// `log C_R`; `-inf` when the reference forbids every censored token.
    pub log_cr: f64,
    pub u_r: f64,
    /// `1 - U_R` at full relative precision.
    pub complement: f64,
    /// `log C_R - log Z_A`.
    pub log_odds: f64,
}

impl ReferenceBound {
    /// Cap shares `beta_u = B_u / C_R`; all zero when `C_R = 0`.
    pub fn beta(&self) -> Vec<f64> {
        if self.log_cr == f64::NEG_INFINITY {
            return vec![0.0; self.log_b.len()];
        }
        self.log_b.iter().map(|lb| exp(lb - self.log_cr)).collect()
    }

    /// `lambda_R(t) = (C_R / Z_A) (1 - t) / t`.
    pub fn cap_ratio(&self, t: f64) -> f64 {
        exp(self.log_odds) * (1.0 - t) / t
    }
}

pub fn reference_geometry(
    geom: &SetGeometry,
    reference: &ReferenceLogits,
    rho: f64,
) -> Result<ReferenceBound, ReferenceError> {
    if rho.is_nan() || rho < 0.0 {
        return Err(ReferenceError::NegativeRho(rho));
    }
    let s = geom.summary();
    if let ReferenceLogits::Dense(z) = reference {
        if z.len() != s.vocab_size {
            return Err(ReferenceError::LengthMismatch { expected: s.vocab_size, got: z.len() });
        }
    }
    let mut log_b = Vec::with_capacity(s.m);
    for tok in s.censored_tokens() {
        let z = reference.logit(tok)?;
        // A forbidden token stays forbidden whatever the margin.
        let ceiling = if z == f64::NEG_INFINITY { z } else { (z + rho).min(s.tau) };
        log_b.push(ceiling);
    }
    let log_cr = logsumexp(&log_b);
    let log_odds = log_cr - s.log_za;
    Ok(ReferenceBound { rho, log_b, log_cr, u_r: sigmoid(log_odds), complement: sigmoid(-log_odds), log_odds })
}

/// Head `(1 - s) alpha`, censored token `u` gets `s * beta_u`; `s` defaults to `U_R / e`.
///
/// When `U_R = 0` the set is a single point and the exact head distribution
/// (`s = 0`) is returned.
pub fn reference_estimator(
    geom: &SetGeometry,
    bound: &ReferenceBound,
    reserve: Option<f64>,
) -> Result<EstimatorSpec, ReferenceError> {
    if geom.censored_count() == 0 || bound.u_r == 0.0 {
        return Ok(EstimatorSpec { reserve: 0.0, tail_rule: TailRule::Uniform });
    }
    let s = reserve.unwrap_or(bound.u_r / core::f64::consts::E);
    if !(s > 0.0 && s < 1.0) {
        return Err(MinimaxError::Domain { what: "reserve", value: s }.into());
    }
    Ok(EstimatorSpec { reserve: s, tail_rule: TailRule::ReferenceWeighted(bound.beta()) })
}

/// Zero-tail point and the tail `p_u = U_R beta_u`; their TV is `U_R`.
pub fn reference_extremal_pair(geom: &SetGeometry, bound: &ReferenceBound) -> (FeasiblePoint, FeasiblePoint) {
    let tail: BTreeMap<u32, f64> = geom
        .summary()
        .censored_tokens()
        .zip(bound.beta())
        .filter(|(_, b)| *b > 0.0)
        .map(|(tok, b)| (tok, bound.u_r * b))
        .collect();
    let far = FeasiblePoint { t: bound.u_r, tail: crate::identified_set::TailAllocation::Sparse(tail) };
    (FeasiblePoint::zero_tail(), far)
}

/// Whether `point` respects `t <= U_R` and `p_u <= (1 - t) B_u / Z_A`.
pub fn within_reference_caps(geom: &SetGeometry, bound: &ReferenceBound, point: &FeasiblePoint, tol: f64) -> bool {
    if point.t > bound.u_r + tol {
        return false;
    }
    let s = geom.summary();
    s.censored_tokens().enumerate().all(|(rank, tok)| {
        let cap = (1.0 - point.t) * exp(bound.log_b[rank] - s.log_za);
        point.tail_value(rank, tok) <= cap * (1.0 + tol)
    })
}

/// Worst-case KL of `est` over the reference-constrained set.
///
/// The inner adversary saturates capped extreme points `r_u <= lambda_R beta_u`
/// and is exact only when the caps and estimator weights are uniform; otherwise
/// `sup_kl` is a lower bound on the true supremum.
pub fn reference_worst_case_risk(
    geom: &SetGeometry,
    bound: &ReferenceBound,
    est: &EstimatorSpec,
    t_grid: usize,
) -> Result<RiskSup, ReferenceError> {
    const MIN_GRID: usize = 100;
    if t_grid < MIN_GRID {
        return Err(MinimaxError::InvalidGrid { got: t_grid, min: MIN_GRID }.into());
    }
    let m = geom.censored_count();
    if m == 0 || bound.u_r == 0.0 {
        return Ok(RiskSup { sup_kl: kl_zero_tail(est.reserve), argmax_t: 0.0, exact_inner: true });
    }
    if let TailRule::ReferenceWeighted(w) = &est.tail_rule {
        if w.len() != m {
            return Err(MinimaxError::WeightsMismatch { expected: m, got: w.len() }.into());
        }
    }
    // Tokens with B_u = 0 can carry no tail mass and drop out of the adversary.
    let beta = bound.beta();
    let (mut caps, mut weights) = (Vec::new(), Vec::new());
    for (rank, b) in beta.iter().enumerate() {
        if *b > 0.0 {
            caps.push(*b);
            weights.push(est.tail_weight(rank, m));
        }
    }
    let adversary = CappedTailAdversary::new(caps, weights);
    let s = est.reserve;
    let kl_at = |t: f64| {
        if t <= 0.0 {
            return kl_zero_tail(s);
        }
        binary_kl(t, s) + t * adversary.respond(bound.cap_ratio(t)).divergence
    };
    let kinks = tail_mass_at_ratio(bound.log_odds, adversary.saturation_ratios());
    let (sup_kl, argmax_t) = sup_over_tail_mass(kl_at, bound.u_r, t_grid, &kinks);
    Ok(RiskSup { sup_kl, argmax_t, exact_inner: adversary.exact })
}

/// Brute-force diameter of the reference-constrained set (tail weights gridded
/// in `[0, B_u / Z_A]`); the witness pair is in token-id layout.
pub fn reference_box_oracle(
    geom: &SetGeometry,
    bound: &ReferenceBound,
    resolution: usize,
) -> Result<OracleDiameter, ReferenceError> {
    let s = geom.summary();
    let bounds: Vec<f64> = bound.log_b.iter().map(|lb| exp(lb - s.log_za)).collect();
    let raw = box_diameter_oracle(&s.alpha, &bounds, resolution)?;
    Ok(OracleDiameter {
        diameter: raw.diameter,
        witness: (to_token_layout(s, &raw.witness.0), to_token_layout(s, &raw.witness.1)),
        grid_points: raw.grid_points,
    })
}

/// Empirical summary of `z_T(v) - z_ref(v)` on revealed tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoDiagnostics {
    pub n_pairs: usize,
    pub max: f64,
    pub median: f64,
    /// `(level, value)` for the 5, 25, 50, 75 and 95 percent levels.
    pub quantiles: Vec<(f64, f64)>,
    /// `(rho, fraction of pairs with perturbation <= rho)` per candidate.
    pub compliance: Vec<(f64, f64)>,
    pub anchored: bool,
    pub label: &'static str,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Perturbation diagnostics for `(z_T, z_ref)` pairs on revealed tokens.
///
/// Both models' logits are shift-arbitrary. With `anchor = Some(i)` each
/// perturbation is measured relative to pair `i`, which removes any constant
/// offset; otherwise the raw differences are used.
pub fn calibrate_rho(
    pairs: &[(f64, f64)],
    candidates: &[f64],
    anchor: Option<usize>,
) -> Result<RhoDiagnostics, ReferenceError> {
    if pairs.len() < 2 {
        return Err(ReferenceError::InsufficientData(pairs.len()));
    }
    if let Some(i) = pairs.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(ReferenceError::NonFinitePair(i));
    }
    let shift = match anchor {
        Some(i) if i >= pairs.len() => return Err(ReferenceError::AnchorOutOfRange { index: i, len: pairs.len() }),
        Some(i) => pairs[i].0 - pairs[i].1,
        None => 0.0,
    };
    let mut d: Vec<f64> = pairs.iter().map(|(zt, zr)| (zt - zr) - shift).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    let compliance = candidates.iter().map(|&rho| (rho, d.iter().filter(|x| **x <= rho).count() as f64 / n)).collect();
    Ok(RhoDiagnostics {
        n_pairs: d.len(),
        max: d[d.len() - 1],
        median: quantile(&d, 0.5),
        quantiles: QUANTILE_LEVELS.iter().map(|&q| (q, quantile(&d, q))).collect(),
        compliance,
        anchored: anchor.is_some(),
        label: CALIBRATION_LABEL,
    })
}

/// Position-level view: each position's largest perturbation, and the share
/// of positions whose largest perturbation exceeds each candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionCalibration {
    pub n_positions: usize,
    pub median_max_perturbation: f64,
    /// `(rho, fraction of positions violating rho)`.
    pub violation_rate: Vec<(f64, f64)>,
    pub label: &'static str,
}

pub fn calibrate_positions(
    positions: &[Vec<(f64, f64)>],
    candidates: &[f64],
    anchor: Option<usize>,
) -> Result<PositionCalibration, ReferenceError> {
    if positions.is_empty() {
        return Err(ReferenceError::InsufficientData(0));
    }
    let mut maxima = Vec::with_capacity(positions.len());
    for pairs in positions {
        maxima.push(calibrate_rho(pairs, &[], anchor)?.max);
    }
    maxima.sort_by(f64::total_cmp);
    let n = maxima.len() as f64;
    Ok(PositionCalibration {
        n_positions: maxima.len(),
        median_max_perturbation: quantile(&maxima, 0.5),
        violation_rate: candidates
            .iter()
            .map(|&rho| (rho, maxima.iter().filter(|x| **x > rho).count() as f64 / n))
            .collect(),
        label: CALIBRATION_LABEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identified_set::{geometry, point_tv};
    use crate::minimax::{g_max, symmetric_estimator, worst_case_risk};
    use crate::observation::{summarize, AccessMode, TopKObservation};

    fn v4() -> SetGeometry {
        let obs = TopKObservation::new(4, vec![(0, 1.0), (1, 0.0)], AccessMode::UnnormalizedLogits, "p").unwrap();
        geometry(&summarize(&obs))
    }

    fn sparse(default: Option<f64>) -> ReferenceLogits {
        ReferenceLogits::Sparse { entries: BTreeMap::new(), default }
    }

    #[test]
    fn worked_example() {
        let g = v4();
        let rb = reference_geometry(&g, &ReferenceLogits::Dense(vec![9.0, 9.0, -1.0, -1.0]), 0.5).unwrap();
        let c_r = 2.0 * libm::exp(-0.5);
        let z_a = core::f64::consts::E + 1.0;
        assert!((exp(rb.log_cr) - c_r).abs() < 1e-14);
        assert!((rb.u_r - c_r / (z_a + c_r)).abs() < 1e-14);
        assert!((rb.u_r - 0.2460).abs() < 1e-4);
        assert!(rb.u_r < g.diameter());
        let est = reference_estimator(&g, &rb, None).unwrap();
        assert_eq!(est.tail_rule, TailRule::ReferenceWeighted(vec![0.5, 0.5]));
        assert!((est.reserve - rb.u_r / core::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn saturated_ceilings_reproduce_plain_geometry() {
        let g = v4();
        let rb = reference_geometry(&g, &sparse(Some(0.0)), f64::INFINITY).unwrap();
        assert_eq!(rb.u_r, g.diameter());
        assert_eq!(rb.log_odds, g.log_odds());
        let est = reference_estimator(&g, &rb, None).unwrap();
        let sym = symmetric_estimator(&g, None).unwrap();
        for (a, b) in est.to_distribution(&g).iter().zip(sym.to_distribution(&g)) {
            assert!((a - b).abs() < 1e-15);
        }
        let a = reference_worst_case_risk(&g, &rb, &est, 400).unwrap();
        let b = worst_case_risk(&g, &sym, 400).unwrap();
        assert!((a.sup_kl - b.sup_kl).abs() < 1e-12);
    }

    #[test]
    fn forbidden_tail_collapses_set() {
        let g = v4();
        let rb = reference_geometry(&g, &sparse(Some(f64::NEG_INFINITY)), 3.0).unwrap();
        assert_eq!(rb.u_r, 0.0);
        let est = reference_estimator(&g, &rb, None).unwrap();
        assert_eq!(est.reserve, 0.0);
        assert_eq!(reference_worst_case_risk(&g, &rb, &est, 100).unwrap().sup_kl, 0.0);
    }

    #[test]
    fn coverage_and_domain_errors() {
        let g = v4();
        assert_eq!(reference_geometry(&g, &sparse(None), 1.0), Err(ReferenceError::MissingToken(2)));
        assert_eq!(reference_geometry(&g, &sparse(Some(0.0)), -0.1), Err(ReferenceError::NegativeRho(-0.1)));
        assert!(matches!(
            reference_geometry(&g, &ReferenceLogits::Dense(vec![0.0; 3]), 1.0),
            Err(ReferenceError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn extremal_pair_attains_u_r() {
        let g = v4();
        let reference = ReferenceLogits::Sparse { entries: [(2, -1.0), (3, 0.3)].into_iter().collect(), default: None };
        let rb = reference_geometry(&g, &reference, 0.4).unwrap();
        let (p, q) = reference_extremal_pair(&g, &rb);
        assert!((point_tv(&g, &p, &q) - rb.u_r).abs() < 1e-15);
        assert!(within_reference_caps(&g, &rb, &q, 1e-12));
        let oracle = reference_box_oracle(&g, &rb, 60).unwrap();
        assert!((oracle.diameter - rb.u_r).abs() < 1e-3);
    }

    #[test]
    fn reference_risk_below_envelope() {
        let g = v4();
        let reference = ReferenceLogits::Dense(vec![0.0, 0.0, -2.0, -0.5]);
        let rb = reference_geometry(&g, &reference, 0.2).unwrap();
        let est = reference_estimator(&g, &rb, None).unwrap();
        let risk = reference_worst_case_risk(&g, &rb, &est, 500).unwrap();
        assert!(!risk.exact_inner);
        assert!(risk.sup_kl <= g_max(rb.u_r).unwrap().g_max + 1e-6);
    }

    #[test]
    fn calibration_quantiles_and_anchor() {
        let pairs = [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0), (5.0, 0.0)];
        let d = calibrate_rho(&pairs, &[2.5, 5.0], None).unwrap();
        assert_eq!(d.max, 5.0);
        assert_eq!(d.median, 3.0);
        assert_eq!(d.quantiles[1], (0.25, 2.0));
        assert_eq!(d.compliance, vec![(2.5, 0.4), (5.0, 1.0)]);
        let shifted: Vec<_> = pairs.iter().map(|(a, b)| (a + 7.0, b - 3.0)).collect();
        let anchored = calibrate_rho(&shifted, &[], Some(0)).unwrap();
        assert_eq!(anchored.max, 4.0);
        assert!(calibrate_rho(&pairs[..1], &[], None).is_err());
        assert!(calibrate_rho(&pairs, &[], Some(9)).is_err());
    }

    #[test]
    fn position_calibration_counts_violations() {
        let positions = vec![vec![(1.0, 0.0), (0.0, 0.0)], vec![(6.0, 0.0), (0.0, 0.0)], vec![(3.0, 0.0), (2.0, 0.0)]];
        let c = calibrate_positions(&positions, &[5.0], None).unwrap();
        assert_eq!(c.median_max_perturbation, 3.0);
        assert!((c.violation_rate[0].1 - 1.0 / 3.0).abs() < 1e-15);
    }
}
