//! Synthetic teachers, censoring, K-sweeps and non-adaptive composition.
//!
//! Every position draws from its own ChaCha stream keyed by `(seed, index)`,
//! so any partition of positions across threads reproduces the same logits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use thiserror::Error;

use crate::identified_set::SetGeometry;
use crate::math::{expm1, fabs, log, logsumexp, neumaier_sum, sqrt};
use crate::minimax::{binary_reserve, worst_case_risk, EstimatorSpec, MinimaxError, RiskCurve};
use crate::observation::{summarize, AccessMode, ObservationError, TopKObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionError {
    #[error("vocabulary size {0} is below 2")]
    VocabTooSmall(usize),
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("K = {k} outside 1..={vocab_size}")]
    InvalidK { k: usize, vocab_size: usize },
    #[error("K list must be sorted ascending")]
    UnsortedK,
    #[error("no positions to compose")]
    Empty,
    #[error("{geoms} geometries but {ests} estimators")]
    LengthMismatch { geoms: usize, ests: usize },
    #[error("joint grid of {points} points exceeds {max}")]
    JointGridTooLarge { points: f64, max: usize },
    #[error("joint grid sup {joint} differs from factored sum {factored}")]
    NotSeparable { joint: f64, factored: f64 },
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Minimax(#[from] MinimaxError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogitLaw {
    /// Independent `N(mean, sd^2)` logits.
    GaussianIid { mean: f64, sd: f64 },
    /// Logits `log g_v` with `g ~ Dirichlet(concentration, ..., concentration)`.
    DirichletSoftmax { concentration: f64 },
    /// `head_size` random tokens at logit `gap`, the rest at `-|N(0, 1)|`.
    PeakedHead { head_size: usize, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTeacherConfig {
    pub vocab_size: usize,
    pub law: LogitLaw,
    pub temperature: f64,
    pub seed: u64,
}

impl SyntheticTeacherConfig {
    fn validate(&self) -> Result<(), CompositionError> {
        if self.vocab_size < 2 {
            return Err(CompositionError::VocabTooSmall(self.vocab_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(CompositionError::Domain { what: "temperature", value: self.temperature });
        }
        match self.law {
            LogitLaw::GaussianIid { mean, sd } => {
                if !mean.is_finite() || !(sd >= 0.0 && sd.is_finite()) {
                    return Err(CompositionError::Domain { what: "sd", value: sd });
                }
            }
            LogitLaw::DirichletSoftmax { concentration } => {
                if !(concentration > 0.0 && concentration.is_finite()) {
                    return Err(CompositionError::Domain { what: "concentration", value: concentration });
                }
            }
            LogitLaw::PeakedHead { head_size, gap } => {
                if head_size == 0 || head_size > self.vocab_size {
                    return Err(CompositionError::Domain { what: "head_size", value: head_size as f64 });
                }
                if !gap.is_finite() {
                    return Err(CompositionError::Domain { what: "gap", value: gap });
                }
            }
        }
        Ok(())
    }
}

/// The generator for one position: stream `index` of the seed's ChaCha8.
pub fn position_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Temperature-scaled logits for position `index`.
pub fn teacher_position(config: &SyntheticTeacherConfig, index: u64) -> Result<Vec<f64>, CompositionError> {
    config.validate()?;
    let mut rng = position_rng(config.seed, index);
    let v = config.vocab_size;
    let mut z = match config.law {
        LogitLaw::GaussianIid { mean, sd } => {
            let normal = Normal::new(mean, sd).map_err(|_| CompositionError::Domain { what: "sd", value: sd })?;
            (0..v).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>()
        }
        LogitLaw::DirichletSoftmax { concentration } => {
            let gamma = Gamma::new(concentration, 1.0)
                .map_err(|_| CompositionError::Domain { what: "concentration", value: concentration })?;
            // Shared normalizer drops out of every downstream quantity; tiny
            // draws are floored so logits stay finite.
            (0..v).map(|_| log(gamma.sample(&mut rng).max(f64::MIN_POSITIVE))).collect()
        }
        LogitLaw::PeakedHead { head_size, gap } => {
            let mut z: Vec<f64> = (0..v)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    -fabs(x)
                })
                .collect();
            for i in index::sample(&mut rng, v, head_size) {
                z[i] = gap;
            }
            z
        }
    };
    for x in z.iter_mut() {
        *x /= config.temperature;
    }
    Ok(z)
}

pub fn generate_teacher(
    config: &SyntheticTeacherConfig,
    n_positions: usize,
) -> Result<Vec<Vec<f64>>, CompositionError> {
    (0..n_positions as u64).map(|i| teacher_position(config, i)).collect()
}

/// Token ids of the `k` largest logits, ties broken toward the lower id.
pub fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Natural-log softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|z| z - lse).collect()
}

/// Reveal the top `k` of a full logit vector in the requested mode.
pub fn censor(
    logits: &[f64],
    k: usize,
    mode: AccessMode,
    position_id: &str,
) -> Result<TopKObservation, CompositionError> {
    let v = logits.len();
    if k == 0 || k > v {
        return Err(CompositionError::InvalidK { k, vocab_size: v });
    }
    let scores = match mode {
        AccessMode::UnnormalizedLogits => logits.to_vec(),
        AccessMode::NormalizedLogProbs => log_softmax(logits),
    };
    let pairs = top_k_indices(logits, k).into_iter().map(|i| (i as u32, scores[i])).collect();
    Ok(TopKObservation::new(v, pairs, mode, position_id)?)
}

/// Per-position values at one K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionStat {
    pub u: f64,
    pub r_bin: f64,
    /// Hidden tail mass of the normalized reinterpretation.
    pub tail_mass: f64,
}

/// One position across a K list; `None` where K exceeds the vocabulary.
pub fn position_stats(
    logits: &[f64],
    k_list: &[usize],
    mode: AccessMode,
) -> Result<Vec<Option<PositionStat>>, CompositionError> {
    let log_probs = log_softmax(logits);
    let order = top_k_indices(logits, logits.len());
    let mut out = Vec::with_capacity(k_list.len());
    for &k in k_list {
        if k > logits.len() {
            out.push(None);
            continue;
        }
        let obs = censor(logits, k, mode, "")?;
        let u = SetGeometry::new(summarize(&obs)).diameter();
        let head: Vec<f64> = order[..k].iter().map(|&i| log_probs[i]).collect();
        let tail_mass = (-expm1(logsumexp(&head))).clamp(0.0, 1.0);
        out.push(Some(PositionStat { u, r_bin: binary_reserve(u)?.r_bin, tail_mass }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub uk_mean: f64,
    /// Population standard deviation.
    pub uk_sd: f64,
    pub rbin_mean: f64,
    pub tail_mass_mean: f64,
    pub n_positions: usize,
    pub warning: Option<String>,
}

fn mean(xs: &[f64]) -> f64 {
    neumaier_sum(xs.iter().copied()) / xs.len() as f64
}

fn population_sd(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    sqrt(neumaier_sum(xs.iter().map(|x| (x - mu) * (x - mu))) / xs.len() as f64)
}

pub fn check_k_list(k_list: &[usize]) -> Result<(), CompositionError> {
    if let Some(&k) = k_list.iter().find(|k| **k == 0) {
        return Err(CompositionError::InvalidK { k, vocab_size: 0 });
    }
    if k_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(CompositionError::UnsortedK);
    }
    Ok(())
}

/// Aggregate per-position stats (outer index: position, inner: K) into rows.
pub fn aggregate_sweep(k_list: &[usize], stats: &[Vec<Option<PositionStat>>]) -> Vec<SweepRow> {
    k_list
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let col: Vec<PositionStat> = stats.iter().filter_map(|s| s[j]).collect();
            if col.is_empty() {
                return SweepRow {
                    k,
                    uk_mean: f64::NAN,
                    uk_sd: f64::NAN,
                    rbin_mean: f64::NAN,
                    tail_mass_mean: f64::NAN,
                    n_positions: 0,
                    warning: Some(String::from("K exceeds the vocabulary size of every position; skipped")),
                };
            }
            let skipped = stats.len() - col.len();
            let u: Vec<f64> = col.iter().map(|s| s.u).collect();
            let r: Vec<f64> = col.iter().map(|s| s.r_bin).collect();
            let t: Vec<f64> = col.iter().map(|s| s.tail_mass).collect();
            SweepRow {
                k,
                uk_mean: mean(&u),
                uk_sd: population_sd(&u),
                rbin_mean: mean(&r),
                tail_mass_mean: mean(&t),
                n_positions: col.len(),
                warning: (skipped > 0)
                    .then(|| alloc::format!("{skipped} positions skipped: K exceeds their vocabulary")),
            }
        })
        .collect()
}

/// Censor every position at every K and summarize.
pub fn ksweep(positions: &[Vec<f64>], k_list: &[usize], mode: AccessMode) -> Result<Vec<SweepRow>, CompositionError> {
    check_k_list(k_list)?;
    let stats = positions.iter().map(|z| position_stats(z, k_list, mode)).collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_sweep(k_list, &stats))
}

/// A geometry with diameter `u`: two revealed logits `(a, 0)` and at least
/// `min_censored` censored tokens, enlarged when `u` demands it.
pub fn geometry_with_diameter(u: f64, min_censored: usize) -> Result<SetGeometry, CompositionError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(CompositionError::Domain { what: "U", value: u });
    }
    // Z_A = e^a + 1 >= 2 caps U at M / (M + 2).
    let mut m = min_censored.max(1);
    while (m as f64) / (m as f64 + 2.0) < u {
        m *= 2;
    }
    let a = log(m as f64 * (1.0 - u) / u - 1.0);
    let obs = TopKObservation::new(m + 2, vec![(0, a), (1, 0.0)], AccessMode::UnnormalizedLogits, "synthetic")?;
    Ok(SetGeometry::new(summarize(&obs)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionRisk {
    pub u: f64,
    /// Certified lower bound at this position.
    pub r_bin: f64,
    /// Worst-case risk of the supplied estimator (upper side).
    pub sup_kl: f64,
    pub argmax_t: f64,
    pub exact_inner: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub per_position: Vec<PositionRisk>,
    /// Mean of per-position `R_bin`.
    pub average_lower: f64,
    /// Mean of per-position worst-case risks.
    pub average_upper: f64,
    /// Sup of the summed risk over the product tail-mass grid.
    pub joint_grid_sup: f64,
    /// Sum of the per-position sups over the same grids.
    pub factored_grid_sum: f64,
    pub joint_grid_points: usize,
}

/// Largest product grid the joint check will enumerate.
pub const JOINT_GRID_MAX_POINTS: usize = 4_000_000;

/// Average the per-position bracket `[R_bin, sup KL]` over independent positions.
///
/// As a check on the implementation, the summed risk is also maximized over
/// the full product of per-position tail-mass grids (`joint_grid + 1` points
/// each) and must match the sum of per-position grid maxima within `1e-9`.
pub fn compose_nonadaptive(
    geoms: &[SetGeometry],
    ests: &[EstimatorSpec],
    t_grid: usize,
    joint_grid: usize,
) -> Result<Composition, CompositionError> {
    if geoms.is_empty() {
        return Err(CompositionError::Empty);
    }
    if geoms.len() != ests.len() {
        return Err(CompositionError::LengthMismatch { geoms: geoms.len(), ests: ests.len() });
    }
    if joint_grid == 0 {
        return Err(CompositionError::Domain { what: "joint grid", value: 0.0 });
    }
    let points = libm::pow((joint_grid + 1) as f64, geoms.len() as f64);
    if points > JOINT_GRID_MAX_POINTS as f64 {
        return Err(CompositionError::JointGridTooLarge { points, max: JOINT_GRID_MAX_POINTS });
    }

    let mut per_position = Vec::with_capacity(geoms.len());
    let mut tables: Vec<Vec<f64>> = Vec::with_capacity(geoms.len());
    for (g, est) in geoms.iter().zip(ests) {
        let sup = worst_case_risk(g, est, t_grid)?;
        per_position.push(PositionRisk {
            u: g.diameter(),
            r_bin: binary_reserve(g.diameter())?.r_bin,
            sup_kl: sup.sup_kl,
            argmax_t: sup.argmax_t,
            exact_inner: sup.exact_inner,
        });
        let table = if g.censored_count() == 0 {
            vec![sup.sup_kl]
        } else {
            let curve = RiskCurve::new(g, est)?;
            (0..=joint_grid).map(|j| curve.kl_at(g.diameter() * j as f64 / joint_grid as f64)).collect()
        };
        tables.push(table);
    }

    let factored_grid_sum = neumaier_sum(tables.iter().map(|t| t.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    let mut joint_grid_sup = f64::NEG_INFINITY;
    let mut digits = vec![0usize; tables.len()];
    let mut count = 0usize;
    'outer: loop {
        let total = neumaier_sum(digits.iter().zip(&tables).map(|(&d, t)| t[d]));
        joint_grid_sup = joint_grid_sup.max(total);
        count += 1;
        for (d, t) in digits.iter_mut().zip(&tables) {
            *d += 1;
            if *d < t.len() {
                continue 'outer;
            }
            *d = 0;
        }
        break;
    }
    if fabs(joint_grid_sup - factored_grid_sum) > 1e-9 {
        return Err(CompositionError::NotSeparable { joint: joint_grid_sup, factored: factored_grid_sum });
    }

    let n = per_position.len() as f64;
    Ok(Composition {
        average_lower: neumaier_sum(per_position.iter().map(|p| p.r_bin)) / n,
        average_upper: neumaier_sum(per_position.iter().map(|p| p.sup_kl)) / n,
        per_position,
        joint_grid_sup,
        factored_grid_sum,
        joint_grid_points: count,
    })
}
