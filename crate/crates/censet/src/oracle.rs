//! `censet oracle`: every brute-force cross-check, seeded.

use anyhow::Result;
use censet_core::composition::{
    censor, compose_nonadaptive, geometry_with_diameter, teacher_position, LogitLaw, SyntheticTeacherConfig,
};
use censet_core::divergence::tv;
use censet_core::identified_set::{brute_diameter_oracle, extremal_pair, point_tv, SetGeometry, ORACLE_MAX_POINTS};
use censet_core::minimax::{balancing_oracle, binary_reserve, symmetric_estimator};
use censet_core::normalized::{allocation_diameter_oracle, disjoint_witness, normalized_geometry, NormalizedCondition};
use censet_core::observation::{summarize, AccessMode};
use censet_core::reference::{reference_box_oracle, reference_geometry, ReferenceLogits};
use rayon::prelude::*;

use crate::cli::{GlobalArgs, OracleArgs};
use crate::io::read_observations;
use crate::report::{OracleCheck, OracleReport, SCHEMA_VERSION};

/// Random small geometry number `i` for this seed: V in 3..=7, Gaussian scores.
pub fn small_geometry(seed: u64, i: u64) -> Result<SetGeometry> {
    let v = 3 + (i % 5) as usize;
    let config = SyntheticTeacherConfig {
        vocab_size: v,
        law: LogitLaw::GaussianIid { mean: 0.0, sd: 1.5 },
        temperature: 1.0,
        seed,
    };
    let z = teacher_position(&config, i)?;
    let k = 1 + (i as usize / 5) % (v - 1);
    let obs = censor(&z, k, AccessMode::UnnormalizedLogits, "")?;
    Ok(SetGeometry::new(summarize(&obs)))
}

/// Finest resolution whose grid fits the oracle budget for `m` tail tokens.
pub fn resolution_for(m: usize, max_resolution: usize) -> usize {
    let mut r = max_resolution;
    while r > 2 && (r as f64).powi(m as i32) > ORACLE_MAX_POINTS as f64 / 8.0 {
        r -= 1;
    }
    r
}

struct Tally {
    cases: usize,
    max_error: f64,
    failures: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { cases: 0, max_error: 0.0, failures: Vec::new() }
    }

    fn record(&mut self, label: String, error: f64, tol: f64) {
        self.cases += 1;
        if error > self.max_error || error.is_nan() {
            self.max_error = error;
        }
        if error.is_nan() || error > tol {
            self.failures.push(format!("{label}: error {error:.3e}"));
        }
    }

    fn finish(self, name: &str, tolerance: f64) -> OracleCheck {
        let detail = if self.failures.is_empty() {
            format!("{} cases within tolerance", self.cases)
        } else {
            self.failures.join("; ")
        };
        OracleCheck {
            name: name.into(),
            passed: self.failures.is_empty() && self.cases > 0,
            cases: self.cases,
            max_error: self.max_error,
            tolerance,
            detail,
        }
    }
}

fn diameter_check(seed: u64, n: usize) -> Result<OracleCheck> {
    let errors = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let g = small_geometry(seed, i)?;
            let o = brute_diameter_oracle(&g, resolution_for(g.censored_count(), 40))?;
            Ok((i, (o.diameter - g.diameter()).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tally::new();
    for (i, e) in errors {
        t.record(format!("geometry {i}"), e, 1e-3);
    }
    Ok(t.finish("diameter_oracle", 1e-3))
}

fn extremal_check(seed: u64, n: usize) -> Result<OracleCheck> {
    let mut t = Tally::new();
    for i in 0..n as u64 {
        let g = small_geometry(seed, i)?;
        let (p, q) = extremal_pair(&g)?;
        let dense = tv(&p.to_distribution(&g), &q.to_distribution(&g))?;
        let symbolic = point_tv(&g, &p, &q);
        t.record(format!("geometry {i}"), (dense - g.diameter()).abs().max((symbolic - g.diameter()).abs()), 1e-12);
    }
    Ok(t.finish("extremal_pair", 1e-12))
}

fn balancing_check(n: usize) -> Result<OracleCheck> {
    let mut t = Tally::new();
    let (lo, hi) = (1e-4f64.ln(), 0.999f64.ln());
    for i in 0..n {
        let u = (lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).exp();
        let (_, r) = balancing_oracle(u, 4000)?;
        t.record(format!("U={u:.4e}"), (r - binary_reserve(u)?.r_bin).abs(), 1e-6);
    }
    Ok(t.finish("balancing_oracle", 1e-6))
}

fn reference_check(seed: u64, n: usize) -> Result<OracleCheck> {
    let mut t = Tally::new();
    for i in 0..n as u64 {
        let g = small_geometry(seed, i)?;
        let noise = teacher_position(
            &SyntheticTeacherConfig {
                vocab_size: g.vocab_size(),
                law: LogitLaw::GaussianIid { mean: g.summary().tau - 1.0, sd: 1.0 },
                temperature: 1.0,
                seed: seed ^ 0x5eed,
            },
            i,
        )?;
        let rho = 0.25 * (i % 5) as f64;
        let rb = reference_geometry(&g, &ReferenceLogits::Dense(noise), rho)?;
        let o = reference_box_oracle(&g, &rb, resolution_for(g.censored_count(), 40))?;
        let shrink_violation = (rb.u_r - g.diameter()).max(0.0);
        t.record(format!("geometry {i}"), (o.diameter - rb.u_r).abs().max(shrink_violation), 1e-3);
    }
    Ok(t.finish("reference_box_oracle", 1e-3))
}

fn normalized_check(n: usize) -> Result<OracleCheck> {
    let mut t = Tally::new();
    for i in 0..n {
        // Head of two tokens; t* and M vary so both regimes are visited.
        let m = 2 + i % 7;
        let t_star = 0.05 + 0.3 * ((i * 7919) % 97) as f64 / 97.0;
        let c = (t_star / (1 + i % 3) as f64).max(t_star / m as f64) * 1.05;
        let head = 1.0 - t_star;
        let p0 = head - c;
        if p0 < c {
            continue;
        }
        let obs = censet_core::TopKObservation::new(
            m + 2,
            vec![(0, p0.ln()), (1, c.ln())],
            AccessMode::NormalizedLogProbs,
            "",
        )?;
        let ng = normalized_geometry(&obs)?;
        let grid = match ng.m {
            0..=4 => 24,
            5..=6 => 12,
            _ => 8,
        };
        let o = allocation_diameter_oracle(ng.t_star, ng.c, ng.m, grid)?;
        let err = match ng.condition {
            NormalizedCondition::DisjointSupports => {
                let (p, q) = disjoint_witness(&ng, &summarize(&obs)).expect("witness");
                let g = SetGeometry::new(summarize(&obs));
                (point_tv(&g, &p, &q) - ng.t_star).abs().max((o.diameter - ng.t_star).abs())
            }
            NormalizedCondition::Indeterminate => (o.diameter - ng.bracket.0).abs().max(o.diameter - ng.bracket.1),
            NormalizedCondition::SinglePoint => o.diameter,
        };
        t.record(format!("case {i} ({:?})", ng.condition), err, 1e-3);
    }
    Ok(t.finish("allocation_oracle", 1e-3))
}

fn composition_check() -> Result<OracleCheck> {
    let mut t = Tally::new();
    let geoms = [0.1, 0.3, 0.5].iter().map(|&u| geometry_with_diameter(u, 8)).collect::<Result<Vec<_>, _>>()?;
    let ests = geoms.iter().map(|g| symmetric_estimator(g, None)).collect::<Result<Vec<_>, _>>()?;
    let c = compose_nonadaptive(&geoms, &ests, 400, 100)?;
    t.record("joint vs factored".into(), (c.joint_grid_sup - c.factored_grid_sum).abs(), 1e-9);
    Ok(t.finish("composition_joint_grid", 1e-9))
}

fn input_check(g: &GlobalArgs) -> Result<Option<OracleCheck>> {
    let Some(path) = &g.input else { return Ok(None) };
    let mut t = Tally::new();
    let mut skipped = 0;
    for l in read_observations(path)? {
        let geom = SetGeometry::new(summarize(&l.obs));
        if geom.vocab_size() > 8 {
            skipped += 1;
            continue;
        }
        let o = brute_diameter_oracle(&geom, resolution_for(geom.censored_count(), 40))?;
        t.record(l.label, (o.diameter - geom.diameter()).abs(), 1e-3);
    }
    let mut check = t.finish("input_diameter_oracle", 1e-3);
    if skipped > 0 {
        check.detail.push_str(&format!(" ({skipped} observations with V > 8 skipped)"));
    }
    Ok(Some(check))
}

pub fn run(g: &GlobalArgs, a: &OracleArgs) -> Result<OracleReport> {
    let n = a.cases.max(1);
    let mut checks = vec![
        diameter_check(g.seed, n)?,
        extremal_check(g.seed, n)?,
        balancing_check(n)?,
        reference_check(g.seed, n)?,
        normalized_check(n)?,
        composition_check()?,
    ];
    if let Some(c) = input_check(g)? {
        checks.push(c);
    }
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        command: "oracle".into(),
        seed: g.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
