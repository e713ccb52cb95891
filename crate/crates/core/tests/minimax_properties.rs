use std::f64::consts::E;

use censet_core::composition::censor;
use censet_core::divergence::kl;
use censet_core::identified_set::SetGeometry;
use censet_core::minimax::{
    adversary_best_response, binary_reserve, g_envelope, g_envelope_direct, g_max, kl_full_tail, kl_zero_tail,
    symmetric_estimator,
};
use censet_core::observation::{summarize, AccessMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SECOND_ORDER: f64 = 1.0 / (2.0 * E) - 1.0 / (2.0 * E * E);

fn open_unit() -> impl Strategy<Value = f64> {
    prop_oneof![1e-6f64..1e-2, 1e-2f64..0.999_999]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn lower_bound_below_envelope(u in open_unit()) {
        let b = binary_reserve(u).unwrap();
        prop_assert!(b.r_bin >= 0.0);
        prop_assert!((b.r_bin + (1.0 - b.s_star).ln()).abs() <= 1e-12);
        prop_assert!(b.r_bin <= g_max(u).unwrap().g_max + 1e-9);
    }

    #[test]
    fn reserve_balances_both_extremes(u in open_unit()) {
        let s = binary_reserve(u).unwrap().s_star;
        let zero = -(1.0 - s).ln();
        let full = (1.0 - u) * ((1.0 - u) / (1.0 - s)).ln() + u * (u / s).ln();
        prop_assert!((zero - full).abs() <= 1e-10, "U={u}: {zero} vs {full}");
        prop_assert!((kl_zero_tail(s) - kl_full_tail(u, s)).abs() <= 1e-10);
    }

    #[test]
    fn reserve_expansion(u in 1e-6f64..=0.5) {
        let b = binary_reserve(u).unwrap();
        prop_assert!((b.s_star - u / E).abs() <= u * u);
        if u <= 0.3 {
            prop_assert!((b.r_bin - u / E - SECOND_ORDER * u * u).abs() <= u * u * u);
        }
    }

    #[test]
    fn envelope_forms_agree(u in 0.01f64..0.99, frac in 0.0f64..=1.0, s_frac in 0.05f64..0.95) {
        let t = frac * u;
        let s = s_frac;
        let by_hand = (1.0 - t) * ((1.0 - t) / (1.0 - s)).ln()
            + if t > 0.0 { t * (u * (1.0 - t) / ((1.0 - u) * s)).ln() } else { 0.0 };
        let a = g_envelope(u, t, s);
        let b = g_envelope_direct(u, t, s);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!((a - by_hand).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

fn logits_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(-6.0f64..6.0, 3..=10).prop_flat_map(|z| {
        let v = z.len();
        (Just(z), 1..v)
    })
}

/// Dense member of the set from tail weights `y_u / e^tau` in `[0, 1]`.
fn member_from_box(g: &SetGeometry, y: &[f64]) -> (Vec<f64>, f64) {
    let s = g.summary();
    let head_scale = (s.log_za - s.tau).exp();
    let z = head_scale + y.iter().sum::<f64>();
    let mut p = vec![0.0; s.vocab_size];
    for (t, a) in s.tokens.iter().zip(&s.alpha) {
        p[*t as usize] = a * head_scale / z;
    }
    for (t, w) in s.censored_tokens().zip(y) {
        p[t as usize] = w / z;
    }
    (p, y.iter().sum::<f64>() / z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // 100 geometries x 100 sampled members against the closed-form response.
    #[test]
    fn best_response_dominates_sampled_members((z, k) in logits_and_k(), seed in any::<u64>(), s_frac in prop::option::of(0.05f64..0.9)) {
        let g = SetGeometry::new(summarize(&censor(&z, k, AccessMode::UnnormalizedLogits, "").unwrap()));
        let est = symmetric_estimator(&g, s_frac).unwrap();
        let q = est.to_distribution(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let y: Vec<f64> = (0..g.censored_count())
                .map(|_| match rng.random_range(0..3) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random::<f64>(),
                })
                .collect();
            let (p, t) = member_from_box(&g, &y);
            let best = adversary_best_response(&g, &est, t.min(g.diameter())).unwrap();
            let achieved = kl(&p, &q).unwrap();
            prop_assert!(best.kl >= achieved - 1e-9, "t={t}: best {} < sampled {achieved}", best.kl);
        }
    }
}
