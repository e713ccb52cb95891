//! Certified KL recovery bounds over the identified set.
//!
//! The certified lower bound restricts the adversary to the two extremes (zero
//! tail and maximal uniform tail). Balancing the two KL risks of an estimator
//! with tail reserve `s` gives
//!
//! ```text
//! s* = A / (1 + A),  A = U (1 - U)^((1 - U) / U),  R_bin = -log(1 - s*) = log(1 + A)
//! ```
//!
//! The symmetric estimator (head `(1 - s) alpha`, uniform tail `s / M`) is
//! bracketed above by the envelope `G_U(t)`, which bounds the tail conditional
//! divergence by `log lambda(t)`. `R_bin` is a lower bound only; the finite-`U`
//! minimax value is bracketed, never claimed.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::identified_set::{FeasiblePoint, SetError, SetGeometry, TailAllocation};
use crate::math::{binary_kl, fabs, floor, golden_section_max, golden_section_min, log, log1p, sigmoid, softplus};
use crate::policy::NumericPolicy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinimaxError {
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("grid of {got} points is below the minimum {min}")]
    InvalidGrid { got: usize, min: usize },
    #[error("estimator has {got} tail weights, geometry has {expected} censored tokens")]
    WeightsMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Binary-endpoint reserve and the certified KL lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryReserve {
    pub u: f64,
    pub s_star: f64,
    /// Certified lower bound on the minimax KL risk, in nats.
    pub r_bin: f64,
    /// `u` was exactly 0 or 1 and the limit values were returned.
    pub limit: bool,
}

pub fn binary_reserve(u: f64) -> Result<BinaryReserve, MinimaxError> {
    if u == 0.0 {
        return Ok(BinaryReserve { u, s_star: 0.0, r_bin: 0.0, limit: true });
    }
    if u == 1.0 {
        return Ok(BinaryReserve { u, s_star: 0.5, r_bin: core::f64::consts::LN_2, limit: true });
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(MinimaxError::Domain { what: "U", value: u });
    }
    let log_a = log(u) + ((1.0 - u) / u) * log1p(-u);
    Ok(BinaryReserve { u, s_star: sigmoid(log_a), r_bin: softplus(log_a), limit: false })
}

/// KL from the zero-tail extreme to an estimator with reserve `s`.
pub fn kl_zero_tail(s: f64) -> f64 {
    -log1p(-s)
}

/// KL from the maximal uniform-tail extreme to the symmetric estimator with reserve `s`.
pub fn kl_full_tail(u: f64, s: f64) -> f64 {
    binary_kl(u, s)
}

/// Minimize `max(KL(p0 || q_s), KL(pU || q_s))` over the reserve `s` directly:
/// a coarse grid on `(0, 1)` followed by golden-section refinement.
pub fn balancing_oracle(u: f64, grid: usize) -> Result<(f64, f64), MinimaxError> {
    const MIN_GRID: usize = 1000;
    if !(u > 0.0 && u < 1.0) {
        return Err(MinimaxError::Domain { what: "U", value: u });
    }
    if grid < MIN_GRID {
        return Err(MinimaxError::InvalidGrid { got: grid, min: MIN_GRID });
    }
    let risk = |s: f64| {
        let zero = -log(1.0 - s);
        let full = (1.0 - u) * log((1.0 - u) / (1.0 - s)) + u * log(u / s);
        zero.max(full)
    };
    let h = 1.0 / (grid + 1) as f64;
    let mut best = (1usize, f64::INFINITY);
    for i in 1..=grid {
        let r = risk(i as f64 * h);
        if r < best.1 {
            best = (i, r);
        }
    }
    let lo = (best.0 - 1) as f64 * h;
    let hi = (best.0 + 1) as f64 * h;
    let (s, r) = golden_section_min(risk, lo, hi.min(1.0), 1e-15);
    Ok((s, r))
}

/// Finite-`U` envelope `G_U(t)` in its simplified form
/// `log(1 - t) - (1 - t) log(1 - s) + t log(U / ((1 - U) s))`.
pub fn g_envelope(u: f64, t: f64, s: f64) -> f64 {
    if t == 0.0 {
        return -log1p(-s);
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    log1p(-t) - (1.0 - t) * log1p(-s) + t * log(u / ((1.0 - u) * s))
}

/// `G_U(t)` in its defining form
/// `(1 - t) log((1 - t)/(1 - s)) + t log(U (1 - t) / ((1 - U) s))`.
pub fn g_envelope_direct(u: f64, t: f64, s: f64) -> f64 {
    let head = (1.0 - t) * log((1.0 - t) / (1.0 - s));
    if t == 0.0 {
        return head;
    }
    head + t * log(u * (1.0 - t) / ((1.0 - u) * s))
}

/// Maximum of `G_U(t)` over `t in [0, U]` with reserve `s = U / e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeMax {
    pub g_max: f64,
    pub t_dagger: f64,
    pub s: f64,
}

pub fn g_max(u: f64) -> Result<EnvelopeMax, MinimaxError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(MinimaxError::Domain { what: "U", value: u });
    }
    let s = u / core::f64::consts::E;
    let g = |t: f64| g_envelope(u, t, s);
    // G is concave; G'(t) = 0 at 1 - t = 1 / (log(1 - s) + log(U / ((1 - U) s))).
    let slope_const = log1p(-s) + log(u / ((1.0 - u) * s));
    let stationary = if slope_const > 0.0 { 1.0 - 1.0 / slope_const } else { f64::NEG_INFINITY };
    let mut best = if stationary > 0.0 && stationary < u {
        (stationary, g(stationary))
    } else {
        let tol = NumericPolicy::current().search_tol;
        let (t, v) = golden_section_max(g, 0.0, u, tol);
        (t, v)
    };
    for t in [0.0, u] {
        let v = g(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(EnvelopeMax { g_max: best.1, t_dagger: best.0, s })
}

/// Everything reported for a diameter `U`: the certified lower bound, the
/// symmetric estimator's envelope, and the first/second-order expansion terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxCertificate {
    pub u: f64,
    pub s_star: f64,
    pub r_bin: f64,
    pub g_max: f64,
    pub g_argmax: f64,
    /// `U / e`.
    pub first_order: f64,
    /// `1/(2e) - 1/(2e^2)`.
    pub second_order_coeff: f64,
}

pub const SECOND_ORDER_COEFF: f64 = 0.5 / core::f64::consts::E - 0.5 / (core::f64::consts::E * core::f64::consts::E);

impl MinimaxCertificate {
    pub fn new(u: f64) -> Result<Self, MinimaxError> {
        let reserve = binary_reserve(u)?;
        let (g_max, g_argmax) = if u > 0.0 && u < 1.0 {
            let env = g_max(u)?;
            (env.g_max, env.t_dagger)
        } else if u == 0.0 {
            (0.0, 0.0)
        } else {
            (f64::INFINITY, 1.0)
        };
        Ok(MinimaxCertificate {
            u,
            s_star: reserve.s_star,
            r_bin: reserve.r_bin,
            g_max,
            g_argmax,
            first_order: u / core::f64::consts::E,
            second_order_coeff: SECOND_ORDER_COEFF,
        })
    }
}

/// How an estimator spreads its reserve over the censored tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum TailRule {
    Uniform,
    /// Weights over censored tokens in ascending id order; they sum to 1.
    ReferenceWeighted(Vec<f64>),
}

/// A candidate recovery distribution: head `(1 - s) alpha`, tail `s * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub reserve: f64,
    pub tail_rule: TailRule,
}

impl EstimatorSpec {
    /// Tail weight `w_u` of the censored token with the given ascending rank.
    pub fn tail_weight(&self, rank: usize, m: usize) -> f64 {
        match &self.tail_rule {
            TailRule::Uniform => 1.0 / m as f64,
            TailRule::ReferenceWeighted(w) => w[rank],
        }
    }

    /// Dense estimator distribution over the vocabulary.
    pub fn to_distribution(&self, geom: &SetGeometry) -> Vec<f64> {
        let s = geom.summary();
        let mut q = vec![0.0; s.vocab_size];
        for (tok, a) in s.tokens.iter().zip(&s.alpha) {
            q[*tok as usize] = (1.0 - self.reserve) * a;
        }
        for (rank, tok) in s.censored_tokens().enumerate() {
            q[tok as usize] = self.reserve * self.tail_weight(rank, s.m);
        }
        q
    }

    fn check(&self, geom: &SetGeometry) -> Result<(), MinimaxError> {
        if let TailRule::ReferenceWeighted(w) = &self.tail_rule {
            if w.len() != geom.censored_count() {
                return Err(MinimaxError::WeightsMismatch { expected: geom.censored_count(), got: w.len() });
            }
        }
        Ok(())
    }
}

/// Head `(1 - s) alpha`, uniform tail `s / M`; `s` defaults to `U / e`.
///
/// With no censored tokens the estimator is the exact head distribution.
pub fn symmetric_estimator(geom: &SetGeometry, reserve: Option<f64>) -> Result<EstimatorSpec, MinimaxError> {
    if geom.censored_count() == 0 {
        return Ok(EstimatorSpec { reserve: 0.0, tail_rule: TailRule::Uniform });
    }
    let s = reserve.unwrap_or(geom.diameter() / core::f64::consts::E);
    if !(s > 0.0 && s < 1.0) {
        return Err(MinimaxError::Domain { what: "reserve", value: s });
    }
    Ok(EstimatorSpec { reserve: s, tail_rule: TailRule::Uniform })
}

/// Adversary maximizing `KL(r || w)` over tail conditionals `r` with
/// `r_u <= lambda * beta_u`, restricted to capped extreme points: tokens are
/// saturated in a fixed order and one residual token absorbs the remainder.
///
/// With uniform `beta` and uniform `w` this family contains the exact
/// maximizer; otherwise the value is a lower bound on the supremum.
#[derive(Debug, Clone)]
pub(crate) struct CappedTailAdversary {
    /// Censored ranks in saturation order.
    order: Vec<usize>,
    beta: Vec<f64>,
    weights: Vec<f64>,
    /// `prefix_beta[i] = Σ_{j<i} beta[order[j]]`.
    prefix_beta: Vec<f64>,
    /// `Σ_{j<i} beta ln(beta / w)` along `order`.
    prefix_log_ratio: Vec<f64>,
    pub(crate) exact: bool,
}

/// Outcome of a capped tail adversary at one `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TailResponse {
    /// Number of saturated tokens.
    pub count: usize,
    /// Conditional mass on the residual token.
    pub residual: f64,
    /// `KL(r || w)`.
    pub divergence: f64,
}

impl CappedTailAdversary {
    /// `beta` are cap shares (summing to 1), `weights` the estimator's tail weights.
    pub(crate) fn new(beta: Vec<f64>, weights: Vec<f64>) -> Self {
        let m = beta.len();
        let uniform = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        let exact = m == 0 || (uniform(&beta) && uniform(&weights));
        let mut order: Vec<usize> = (0..m).collect();
        // Largest log-ratio first; among equals, larger caps fill faster.
        order.sort_by(|&a, &b| {
            let ra = log(beta[a] / weights[a]);
            let rb = log(beta[b] / weights[b]);
            rb.total_cmp(&ra).then(beta[b].total_cmp(&beta[a])).then(a.cmp(&b))
        });
        let mut prefix_beta = Vec::with_capacity(m + 1);
        let mut prefix_log_ratio = Vec::with_capacity(m + 1);
        let (mut pb, mut pl) = (0.0, 0.0);
        prefix_beta.push(pb);
        prefix_log_ratio.push(pl);
        for &i in &order {
            pb += beta[i];
            pl += beta[i] * log(beta[i] / weights[i]);
            prefix_beta.push(pb);
            prefix_log_ratio.push(pl);
        }
        CappedTailAdversary { order, beta, weights, prefix_beta, prefix_log_ratio, exact }
    }

    pub(crate) fn respond(&self, lambda: f64) -> TailResponse {
        let m = self.order.len();
        // Largest n with lambda * prefix_beta[n] <= 1.
        let mut n = self.prefix_beta.partition_point(|&p| lambda * p <= 1.0).saturating_sub(1);
        n = n.min(m);
        let mut residual = 1.0 - lambda * self.prefix_beta[n];
        if residual < 1e-12 || n == m {
            residual = 0.0;
        }
        let mut divergence = lambda * log(lambda) * self.prefix_beta[n] + lambda * self.prefix_log_ratio[n];
        if residual > 0.0 {
            let j = self.order[n];
            divergence += residual * log(residual / self.weights[j]);
        }
        TailResponse { count: n, residual, divergence: divergence.max(0.0) }
    }

    /// Ratios `lambda` at which one more token saturates.
    pub(crate) fn saturation_ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.prefix_beta[1..].iter().map(|p| 1.0 / p)
    }

    /// Tail probabilities (by censored rank) at tail mass `t`.
    pub(crate) fn allocation(&self, lambda: f64, t: f64) -> BTreeMap<usize, f64> {
        let r = self.respond(lambda);
        let mut out = BTreeMap::new();
        for &i in &self.order[..r.count] {
            out.insert(i, t * lambda * self.beta[i]);
        }
        if r.residual > 0.0 {
            out.insert(self.order[r.count], t * r.residual);
        }
        out
    }
}

/// Closed-form `max KL(r || u_M)` over `r_u <= lambda / M`: `n = floor(M / lambda)`
/// tokens at the cap and the remainder on one more.
fn uniform_tail_response(m: usize, lambda: f64) -> TailResponse {
    let mf = m as f64;
    if lambda >= mf {
        return TailResponse { count: 0, residual: 1.0, divergence: log(mf) };
    }
    let count = floor(mf / lambda) as usize;
    let share = lambda / mf;
    let mut residual = 1.0 - count as f64 * share;
    if residual < 1e-12 {
        residual = 0.0;
    }
    let mut divergence = count as f64 * share * log(lambda);
    if residual > 0.0 {
        divergence += residual * log(mf * residual);
    }
    TailResponse { count, residual, divergence: divergence.max(0.0) }
}

/// The adversary's best response against `est` at tail mass `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub point: FeasiblePoint,
    pub kl: f64,
    /// False when the value is only a lower bound on the supremum at this `t`.
    pub exact: bool,
}

/// Worst-case KL evaluator for one estimator over one identified set.
pub(crate) struct RiskCurve<'a> {
    geom: &'a SetGeometry,
    reserve: f64,
    adversary: Option<CappedTailAdversary>,
}

impl<'a> RiskCurve<'a> {
    pub(crate) fn new(geom: &'a SetGeometry, est: &EstimatorSpec) -> Result<Self, MinimaxError> {
        est.check(geom)?;
        let adversary = match &est.tail_rule {
            TailRule::Uniform => None,
            TailRule::ReferenceWeighted(w) => {
                let m = geom.censored_count();
                Some(CappedTailAdversary::new(vec![1.0 / m as f64; m], w.clone()))
            }
        };
        Ok(RiskCurve { geom, reserve: est.reserve, adversary })
    }

    fn tail(&self, t: f64) -> TailResponse {
        let lambda = self.geom.cap_ratio(t);
        match &self.adversary {
            None => uniform_tail_response(self.geom.censored_count(), lambda),
            Some(adv) => adv.respond(lambda),
        }
    }

    pub(crate) fn exact(&self) -> bool {
        self.adversary.as_ref().is_none_or(|a| a.exact)
    }

    /// Tail masses where the saturated count of the best response changes.
    pub(crate) fn kinks(&self) -> Vec<f64> {
        let lo = self.geom.log_odds();
        match &self.adversary {
            None => {
                let m = self.geom.censored_count() as f64;
                tail_mass_at_ratio(lo, (1..=self.geom.censored_count()).map(|n| m / n as f64))
            }
            Some(adv) => tail_mass_at_ratio(lo, adv.saturation_ratios()),
        }
    }

    pub(crate) fn kl_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return kl_zero_tail(self.reserve);
        }
        binary_kl(t, self.reserve) + t * self.tail(t).divergence
    }

    fn point_at(&self, t: f64) -> FeasiblePoint {
        if t <= 0.0 {
            return FeasiblePoint::zero_tail();
        }
        let lambda = self.geom.cap_ratio(t);
        match &self.adversary {
            None => {
                let r = self.tail(t);
                let m = self.geom.censored_count() as f64;
                FeasiblePoint {
                    t,
                    tail: TailAllocation::Capped {
                        count: r.count,
                        per_token: t * lambda / m,
                        residual: t * r.residual,
                    },
                }
            }
            Some(adv) => {
                let by_rank = adv.allocation(lambda, t);
                let tokens: Vec<u32> = self.geom.summary().censored_tokens().collect();
                let map: BTreeMap<u32, f64> = by_rank.into_iter().map(|(r, v)| (tokens[r], v)).collect();
                FeasiblePoint { t, tail: TailAllocation::Sparse(map) }
            }
        }
    }
}

pub fn adversary_best_response(geom: &SetGeometry, est: &EstimatorSpec, t: f64) -> Result<BestResponse, MinimaxError> {
    let tol = NumericPolicy::current().membership_tol;
    if !(t >= 0.0 && t <= geom.diameter() + tol) {
        return Err(MinimaxError::Domain { what: "tail mass", value: t });
    }
    if geom.censored_count() == 0 {
        return Ok(BestResponse { point: FeasiblePoint::zero_tail(), kl: kl_zero_tail(est.reserve), exact: true });
    }
    let t = t.min(geom.diameter());
    let curve = RiskCurve::new(geom, est)?;
    Ok(BestResponse { point: curve.point_at(t), kl: curve.kl_at(t), exact: curve.exact() })
}

/// Supremum of a best-response risk curve over tail mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSup {
    pub sup_kl: f64,
    pub argmax_t: f64,
    /// The inner maximization was closed-form exact.
    pub exact_inner: bool,
}

/// Maximize `f` over `[0, t_max]`: `grid + 1` evenly spaced points plus the
/// `kinks`, then a golden-section refinement between the neighbours of the
/// best one.
///
/// The best-response curve is a sawtooth whose teeth peak where the number of
/// saturated tail tokens changes; a plain grid can settle on the wrong tooth,
/// so those tail masses are passed in and evaluated exactly.
pub(crate) fn sup_over_tail_mass<F: Fn(f64) -> f64>(f: F, t_max: f64, grid: usize, kinks: &[f64]) -> (f64, f64) {
    if t_max <= 0.0 {
        return (f(0.0), 0.0);
    }
    let h = t_max / grid as f64;
    let mut best = (f(0.0), 0.0);
    for i in 1..=grid {
        let t = if i == grid { t_max } else { i as f64 * h };
        let v = f(t);
        if v > best.0 {
            best = (v, t);
        }
    }
    for &t in kinks {
        if t > 0.0 && t <= t_max {
            let v = f(t);
            if v > best.0 {
                best = (v, t);
            }
        }
    }
    let lo = (best.1 - h).max(0.0);
    let hi = (best.1 + h).min(t_max);
    let tol = NumericPolicy::current().search_tol;
    let (t, v) = golden_section_max(&f, lo, hi, tol);
    if v > best.0 {
        best = (v, t);
    }
    best
}

/// Tail masses at which the cap ratio `exp(log_odds) (1 - t) / t` equals each
/// of `lambdas`.
pub(crate) fn tail_mass_at_ratio(log_odds: f64, lambdas: impl Iterator<Item = f64>) -> Vec<f64> {
    lambdas.filter(|l| *l > 0.0 && l.is_finite()).map(|l| sigmoid(log_odds - log(l))).collect()
}

pub fn worst_case_risk(geom: &SetGeometry, est: &EstimatorSpec, t_grid: usize) -> Result<RiskSup, MinimaxError> {
    const MIN_GRID: usize = 100;
    if t_grid < MIN_GRID {
        return Err(MinimaxError::InvalidGrid { got: t_grid, min: MIN_GRID });
    }
    if geom.censored_count() == 0 {
        return Ok(RiskSup { sup_kl: kl_zero_tail(est.reserve), argmax_t: 0.0, exact_inner: true });
    }
    let curve = RiskCurve::new(geom, est)?;
    let (sup_kl, argmax_t) = sup_over_tail_mass(|t| curve.kl_at(t), geom.diameter(), t_grid, &curve.kinks());
    Ok(RiskSup { sup_kl, argmax_t, exact_inner: curve.exact() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `R_bin > delta`: no estimator can guarantee risk at most `delta`.
    Impossible,
    /// The certified bound does not rule `delta` out.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KVerdict {
    pub k: usize,
    pub u: f64,
    pub r_bin: f64,
    pub verdict: Verdict,
    /// `|R_bin - delta|` falls within the policy's threshold band.
    pub at_threshold: bool,
    /// First-order heuristic `U <= e * delta`.
    pub within_first_order: bool,
}

/// Per-K impossibility verdicts for a target KL tolerance `delta`.
pub fn critical_k(geoms: &[SetGeometry], delta: f64) -> Result<Vec<KVerdict>, MinimaxError> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(MinimaxError::Domain { what: "delta", value: delta });
    }
    let band = NumericPolicy::current().threshold_band;
    geoms
        .iter()
        .map(|g| {
            let u = g.diameter();
            let r_bin = binary_reserve(u)?.r_bin;
            Ok(KVerdict {
                k: g.summary().k(),
                u,
                r_bin,
                verdict: if r_bin > delta + band { Verdict::Impossible } else { Verdict::Open },
                at_threshold: fabs(r_bin - delta) <= band,
                within_first_order: u <= core::f64::consts::E * delta,
            })
        })
        .collect()
}
