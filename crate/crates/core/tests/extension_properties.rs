use censet_core::composition::{
    censor, compose_nonadaptive, generate_teacher, geometry_with_diameter, ksweep, log_softmax, teacher_position,
    LogitLaw, SyntheticTeacherConfig,
};
use censet_core::divergence::tv;
use censet_core::identified_set::SetGeometry;
use censet_core::minimax::{symmetric_estimator, worst_case_risk};
use censet_core::normalized::{disjoint_witness, normalized_geometry, within_normalized_caps, NormalizedCondition};
use censet_core::observation::{summarize, AccessMode, TopKObservation};
use censet_core::reference::{
    reference_estimator, reference_extremal_pair, reference_geometry, reference_worst_case_risk, within_reference_caps,
    ReferenceLogits,
};
use proptest::prelude::*;

fn logits_and_k(max_v: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(-6.0f64..6.0, 3..=max_v).prop_flat_map(|z| {
        let v = z.len();
        (Just(z), 1..v)
    })
}

fn geometry_of(z: &[f64], k: usize) -> SetGeometry {
    SetGeometry::new(summarize(&censor(z, k, AccessMode::UnnormalizedLogits, "").unwrap()))
}

/// Logits, K and a reference vector of the same length.
fn reference_case() -> impl Strategy<Value = (Vec<f64>, usize, Vec<f64>)> {
    logits_and_k(20).prop_flat_map(|(z, k)| {
        let v = z.len();
        (Just(z), Just(k), prop::collection::vec(-9.0f64..6.0, v))
    })
}

proptest! {
    #[test]
    fn reference_shrinks_and_grows_with_rho((z, k, r) in reference_case(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let g = geometry_of(&z, k);
        let reference = ReferenceLogits::Dense(r);
        let (lo, hi) = (a.min(b), a.max(b));
        let ra = reference_geometry(&g, &reference, lo).unwrap();
        let rb = reference_geometry(&g, &reference, hi).unwrap();
        prop_assert!(ra.u_r <= g.diameter() + 1e-15);
        prop_assert!(ra.u_r <= rb.u_r + 1e-15);
        let wide = reference_geometry(&g, &reference, 1e3).unwrap();
        prop_assert!((wide.u_r - g.diameter()).abs() <= 1e-12);
    }

    #[test]
    fn reference_extremal_pair_attains((z, k, r) in reference_case(), rho in 0.0f64..3.0) {
        let g = geometry_of(&z, k);
        let bound = reference_geometry(&g, &ReferenceLogits::Dense(r), rho).unwrap();
        let (p, q) = reference_extremal_pair(&g, &bound);
        let d = tv(&p.to_distribution(&g), &q.to_distribution(&g)).unwrap();
        prop_assert!((d - bound.u_r).abs() <= 1e-12);
        prop_assert!(within_reference_caps(&g, &bound, &p, 1e-12));
        prop_assert!(within_reference_caps(&g, &bound, &q, 1e-12));
    }

    #[test]
    fn infinite_margin_reduces_to_plain_set((z, k, r) in reference_case()) {
        let g = geometry_of(&z, k);
        let bound = reference_geometry(&g, &ReferenceLogits::Dense(r), f64::INFINITY).unwrap();
        prop_assert!((bound.u_r - g.diameter()).abs() <= 1e-12);
        let plain = worst_case_risk(&g, &symmetric_estimator(&g, None).unwrap(), 200).unwrap();
        let est = reference_estimator(&g, &bound, None).unwrap();
        prop_assert!((est.reserve - g.diameter() / std::f64::consts::E).abs() <= 1e-12);
        let via_ref = reference_worst_case_risk(&g, &bound, &est, 200).unwrap();
        prop_assert!(via_ref.exact_inner);
        prop_assert!((via_ref.sup_kl - plain.sup_kl).abs() <= 1e-12, "{} vs {}", via_ref.sup_kl, plain.sup_kl);
    }
}

/// Normalized observation from full logits: top K log-probabilities.
fn normalized_obs(z: &[f64], k: usize) -> TopKObservation {
    censor(z, k, AccessMode::NormalizedLogProbs, "").unwrap()
}

proptest! {
    #[test]
    fn tail_mass_never_exceeds_unnormalized_diameter((z, k) in logits_and_k(40)) {
        let obs = normalized_obs(&z, k);
        let ng = normalized_geometry(&obs).unwrap();
        let lp = log_softmax(&z);
        let reread: Vec<(u32, f64)> = obs.revealed().iter().map(|r| (r.token, lp[r.token as usize])).collect();
        let as_logits = TopKObservation::new(z.len(), reread, AccessMode::UnnormalizedLogits, "").unwrap();
        let u = SetGeometry::new(summarize(&as_logits)).diameter();
        prop_assert!(ng.t_star <= u + 1e-12, "t*={} U={u}", ng.t_star);
        prop_assert!(ng.bracket.0 <= ng.bracket.1 + 1e-15 && ng.bracket.1 <= ng.t_star + 1e-15);
    }

    #[test]
    fn disjoint_witness_is_exact((z, k) in logits_and_k(60)) {
        let obs = normalized_obs(&z, k);
        let ng = normalized_geometry(&obs).unwrap();
        let summary = summarize(&obs);
        match disjoint_witness(&ng, &summary) {
            Some((p, q)) => {
                prop_assert_eq!(ng.condition, NormalizedCondition::DisjointSupports);
                let g = SetGeometry::new(summary.clone());
                let d = tv(&p.to_distribution(&g), &q.to_distribution(&g)).unwrap();
                prop_assert!((d - ng.t_star).abs() <= 1e-14);
                prop_assert!(within_normalized_caps(&ng, &summary, &p, 1e-12));
                prop_assert!(within_normalized_caps(&ng, &summary, &q, 1e-12));
            }
            None => prop_assert!(ng.condition != NormalizedCondition::DisjointSupports),
        }
    }

    #[test]
    fn slack_caps_give_full_tail_mass(t_star in 0.01f64..0.5, m in 4usize..200, head in 1usize..5) {
        // Head of `head` tokens, the smallest at c >= 10 t* / M.
        let c = (10.0 * t_star / m as f64).max(1e-6);
        let rest = 1.0 - t_star - c;
        prop_assume!(rest > 0.0 && rest / (head as f64) >= c);
        let mut revealed = vec![(0u32, c.ln())];
        for i in 1..=head {
            revealed.push((i as u32, (rest / head as f64).ln()));
        }
        let obs = TopKObservation::new(head + 1 + m, revealed, AccessMode::NormalizedLogProbs, "").unwrap();
        let ng = normalized_geometry(&obs).unwrap();
        prop_assert_eq!(ng.condition, NormalizedCondition::DisjointSupports);
        prop_assert!((ng.diameter - ng.t_star).abs() <= 1e-15);
        prop_assert!((ng.t_star - t_star).abs() <= 1e-12);
    }
}

fn teacher(seed: u64, law: LogitLaw) -> SyntheticTeacherConfig {
    SyntheticTeacherConfig { vocab_size: 300, law, temperature: 1.0, seed }
}

fn laws() -> impl Strategy<Value = LogitLaw> {
    prop_oneof![
        (-2.0f64..2.0, 0.5f64..4.0).prop_map(|(mean, sd)| LogitLaw::GaussianIid { mean, sd }),
        (0.05f64..2.0).prop_map(|concentration| LogitLaw::DirichletSoftmax { concentration }),
        (1usize..4, 2.0f64..12.0).prop_map(|(head_size, gap)| LogitLaw::PeakedHead { head_size, gap }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_columns_decrease_in_k(seed in any::<u64>(), law in laws()) {
        let positions = generate_teacher(&teacher(seed, law), 16).unwrap();
        let ks = [1, 5, 10, 20, 50, 100];
        for mode in [AccessMode::UnnormalizedLogits, AccessMode::NormalizedLogProbs] {
            let rows = ksweep(&positions, &ks, mode).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].uk_mean <= w[0].uk_mean + 1e-15);
                prop_assert!(w[1].rbin_mean <= w[0].rbin_mean + 1e-15);
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic(seed in any::<u64>(), law in laws(), i in 0u64..16) {
        let config = teacher(seed, law);
        let a = generate_teacher(&config, 16).unwrap();
        let b = generate_teacher(&config, 16).unwrap();
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        // Positions are independent streams: one position alone matches the batch.
        let alone = teacher_position(&config, i).unwrap();
        prop_assert_eq!(bits(&vec![alone]), bits(&vec![a[i as usize].clone()]));
        let ra = ksweep(&a, &[1, 10, 100], AccessMode::UnnormalizedLogits).unwrap();
        let rb = ksweep(&b, &[1, 10, 100], AccessMode::UnnormalizedLogits).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert_eq!(x.uk_mean.to_bits(), y.uk_mean.to_bits());
            prop_assert_eq!(x.uk_sd.to_bits(), y.uk_sd.to_bits());
            prop_assert_eq!(x.rbin_mean.to_bits(), y.rbin_mean.to_bits());
        }
    }

    #[test]
    fn composition_averages_positions(us in prop::collection::vec(0.01f64..0.95, 1..4)) {
        let geoms: Vec<SetGeometry> = us.iter().map(|&u| geometry_with_diameter(u, 4).unwrap()).collect();
        let ests: Vec<_> = geoms.iter().map(|g| symmetric_estimator(g, None).unwrap()).collect();
        let c = compose_nonadaptive(&geoms, &ests, 200, 30).unwrap();
        let n = us.len() as f64;
        let lower: f64 = c.per_position.iter().map(|p| p.r_bin).sum::<f64>() / n;
        let upper: f64 = c.per_position.iter().map(|p| p.sup_kl).sum::<f64>() / n;
        prop_assert!((c.average_lower - lower).abs() <= 1e-15);
        prop_assert!((c.average_upper - upper).abs() <= 1e-15);
        prop_assert!((c.joint_grid_sup - c.factored_grid_sum).abs() <= 1e-9);
        for (p, &u) in c.per_position.iter().zip(&us) {
            prop_assert!((p.u - u).abs() <= 1e-12);
        }
    }
}
