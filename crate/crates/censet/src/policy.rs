//! Tolerance overrides from the `CENSET_NUMERIC_POLICY` file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use censet_core::NumericPolicy;
use serde::{Deserialize, Serialize};

pub const POLICY_ENV: &str = "CENSET_NUMERIC_POLICY";

/// Any subset of the policy fields; missing ones keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    pub membership_tol: Option<f64>,
    pub head_mass_tol: Option<f64>,
    pub distribution_tol: Option<f64>,
    pub tail_clamp_tol: Option<f64>,
    pub infeasibility_tol: Option<f64>,
    pub search_tol: Option<f64>,
    pub threshold_band: Option<f64>,
}

impl PolicyOverrides {
    pub fn apply(&self, base: NumericPolicy) -> NumericPolicy {
        NumericPolicy {
            membership_tol: self.membership_tol.unwrap_or(base.membership_tol),
            head_mass_tol: self.head_mass_tol.unwrap_or(base.head_mass_tol),
            distribution_tol: self.distribution_tol.unwrap_or(base.distribution_tol),
            tail_clamp_tol: self.tail_clamp_tol.unwrap_or(base.tail_clamp_tol),
            infeasibility_tol: self.infeasibility_tol.unwrap_or(base.infeasibility_tol),
            search_tol: self.search_tol.unwrap_or(base.search_tol),
            threshold_band: self.threshold_band.unwrap_or(base.threshold_band),
        }
    }
}

pub fn load_policy(path: &Path) -> Result<NumericPolicy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading numeric policy {}", path.display()))?;
    let overrides: PolicyOverrides =
        serde_json::from_str(&text).with_context(|| format!("parsing numeric policy {}", path.display()))?;
    let policy = overrides.apply(NumericPolicy::DEFAULT);
    if !policy.is_valid() {
        bail!("numeric policy {} has a negative or non-finite tolerance", path.display());
    }
    Ok(policy)
}

/// Install the policy named by the environment, if any; returns it.
pub fn install_from_env() -> Result<NumericPolicy> {
    match std::env::var_os(POLICY_ENV) {
        Some(path) if !path.is_empty() => {
            let policy = load_policy(Path::new(&path))?;
            policy.install();
            Ok(policy)
        }
        _ => Ok(NumericPolicy::current()),
    }
}
