//! Total variation and KL divergence on dense distributions.

use thiserror::Error;

use crate::math::{fabs, neumaier_sum, xlogx_over_y};
use crate::policy::NumericPolicy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("distribution has a negative or non-finite entry")]
    InvalidEntry,
}

fn check(p: &[f64], q: &[f64]) -> Result<(), DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::LengthMismatch(p.len(), q.len()));
    }
    let tol = NumericPolicy::current().distribution_tol;
    for d in [p, q] {
        if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DivergenceError::InvalidEntry);
        }
        let total = neumaier_sum(d.iter().copied());
        if fabs(total - 1.0) > tol {
            return Err(DivergenceError::NotNormalized(total));
        }
    }
    Ok(())
}

/// Total variation `½ Σ |p_i - q_i|`.
pub fn tv(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    check(p, q)?;
    Ok(0.5 * neumaier_sum(p.iter().zip(q).map(|(a, b)| fabs(a - b))))
}

/// `KL(p || q)` in nats; `+inf` when `p` has mass where `q` has none.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    check(p, q)?;
    let mut terms = alloc::vec::Vec::with_capacity(p.len());
    for (&a, &b) in p.iter().zip(q) {
        let term = xlogx_over_y(a, b);
        if term == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        terms.push(term);
    }
    // Clamp tiny negative totals from rounding; KL is non-negative.
    Ok(neumaier_sum(terms).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(tv(&p, &p).unwrap(), 0.0);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn point_mass_against_uniform() {
        let p = [1.0, 0.0];
        let q = [0.5, 0.5];
        assert_eq!(tv(&p, &q).unwrap(), 0.5);
        assert!((kl(&p, &q).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kl(&q, &p).unwrap(), f64::INFINITY);
    }

    #[test]
    fn disjoint_tails_give_max_mass() {
        // Same head (1 - t) / (1 - s) split, tails on disjoint tokens.
        let (t, s) = (0.3, 0.1);
        let p = [0.5 * (1.0 - t), 0.5 * (1.0 - t), t, 0.0];
        let q = [0.5 * (1.0 - s), 0.5 * (1.0 - s), 0.0, s];
        assert!((tv(&p, &q).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(tv(&[1.0], &[0.5, 0.5]), Err(DivergenceError::LengthMismatch(1, 2)));
        assert!(matches!(kl(&[0.7, 0.7], &[0.5, 0.5]), Err(DivergenceError::NotNormalized(_))));
        assert_eq!(tv(&[1.5, -0.5], &[0.5, 0.5]), Err(DivergenceError::InvalidEntry));
    }
}
