mod common;

use approx::assert_abs_diff_eq;
use num_rational::Ratio;
use proptest::prelude::*;
use vigor_core::model::{grad_mean_nll, init_params, mean_nll, Completion, GradScope};
use vigor_core::reward::*;
use vigor_core::tasks::mod_add_instance;
use vigor_core::VigorError;

type Q = Ratio<i64>;

/// Independent oracle: count strictly smaller and equal signals directly.
fn oracle_rank_rewards(signals: &[f64]) -> Vec<Q> {
    let g = signals.len() as i64;
    signals
        .iter()
        .map(|&s| {
            let below = signals.iter().filter(|&&x| x < s).count() as i64;
            let equal = signals.iter().filter(|&&x| x == s).count() as i64;
            // average of ranks below..below+equal-1
            let rank = Q::new(2 * below + equal - 1, 2);
            Q::from_integer(2) * rank / Q::from_integer(g - 1) - Q::from_integer(1)
        })
        .collect()
}

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

#[test]
fn rank_grid_for_eight_distinct_signals_is_exact() {
    let signals: Vec<Q> = [-8, -1, -5, -3, -7, -2, -6, -4]
        .iter()
        .map(|&x| Q::from_integer(x))
        .collect();
    let rewards = rank_normalize(&signals).unwrap();
    let mut sorted: Vec<(Q, Q)> = signals.iter().cloned().zip(rewards).collect();
    sorted.sort();
    let grid: Vec<Q> = sorted.into_iter().map(|p| p.1).collect();
    assert_eq!(
        grid,
        vec![
            q(-1, 1),
            q(-5, 7),
            q(-3, 7),
            q(-1, 7),
            q(1, 7),
            q(3, 7),
            q(5, 7),
            q(1, 1)
        ]
    );
}

#[test]
fn rank_grid_in_floating_point_matches_rationals() {
    let signals = [-2846.05, -10.0, -3.5, -0.0, -99.0, -1e-3, -7.25, -41.0];
    let got = rank_normalize(&signals).unwrap();
    let want = oracle_rank_rewards(&signals);
    for (g, w) in got.iter().zip(want) {
        assert_eq!(*g, *w.numer() as f64 / *w.denom() as f64);
    }
}

#[test]
fn two_element_and_tie_cases() {
    assert_eq!(rank_normalize(&[-5.0, -3.0]).unwrap(), vec![-1.0, 1.0]);
    let tied = [q(-2, 1), q(-2, 1), q(-1, 1), q(-3, 1)];
    assert_eq!(
        rank_normalize(&tied).unwrap(),
        vec![q(0, 1), q(0, 1), q(1, 1), q(-1, 1)]
    );
    assert_eq!(
        rank_normalize(&[-2.0, -2.0, -1.0, -3.0]).unwrap(),
        vec![0.0, 0.0, 1.0, -1.0]
    );
    let all_tied = rank_normalize(&[q(4, 1); 5]).unwrap();
    assert!(all_tied.iter().all(|r| *r == q(0, 1)));
}

#[test]
fn group_size_errors() {
    assert!(matches!(
        rank_normalize(&[1.0]),
        Err(VigorError::GroupSize(1))
    ));
    assert!(matches!(
        minmax_normalize::<f64>(&[]),
        Err(VigorError::GroupSize(0))
    ));
    assert!(matches!(
        group_advantages(&[0.5]),
        Err(VigorError::GroupSize(1))
    ));
}

#[test]
fn minmax_examples() {
    assert_eq!(
        minmax_normalize(&[q(-4, 1), q(-2, 1), q(0, 1)]).unwrap(),
        vec![q(-1, 1), q(0, 1), q(1, 1)]
    );
    assert_eq!(minmax_normalize(&[3.0, 3.0, 3.0]).unwrap(), vec![0.0; 3]);
    let r = minmax_normalize(&[q(-10, 1), q(-9, 1), q(-1, 1)]).unwrap();
    assert_eq!(r, vec![q(-1, 1), q(-7, 9), q(1, 1)]);
    let f = minmax_normalize(&[-10.0, -9.0, -1.0]).unwrap();
    assert_abs_diff_eq!(f[1], -0.7778, epsilon = 1e-4);
}

#[test]
fn advantages_of_the_rank_grid() {
    let grid: Vec<f64> = (0..8).map(|k| (2 * k - 7) as f64 / 7.0).collect();
    let adv = group_advantages(&grid).unwrap();
    let scale = (3.0f64 / 7.0).sqrt();
    for (a, r) in adv.iter().zip(&grid) {
        assert_abs_diff_eq!(*a, r / scale, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(adv[7], 1.52753, epsilon = 1e-5);
    assert_eq!(accurate_sum(adv.iter().copied()), 0.0);
}

#[test]
fn advantages_of_binary_rewards() {
    let adv = group_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let s3 = 3.0f64.sqrt();
    assert_abs_diff_eq!(adv[0], s3, epsilon = 1e-12);
    for a in &adv[1..] {
        assert_abs_diff_eq!(*a, -1.0 / s3, epsilon = 1e-12);
    }
    assert_eq!(group_advantages(&[1.0; 8]).unwrap(), vec![0.0; 8]);
}

#[test]
fn signal_examples() {
    let s = gradient_norm_signal(&[3.0, 4.0], 4, true).unwrap();
    assert_eq!((s.value, s.gradient_norm), (-10.0, 5.0));
    assert_eq!(
        gradient_norm_signal(&[3.0, 4.0], 4, false).unwrap().value,
        -5.0
    );
    for flag in [true, false] {
        assert_eq!(gradient_norm_signal(&[0.0; 7], 9, flag).unwrap().value, 0.0);
    }
    // 180 spread over 324 = 18^2 coordinates of 10 each.
    let g = vec![10.0; 324];
    let s = gradient_norm_signal(&g, 250, true).unwrap();
    assert_abs_diff_eq!(s.gradient_norm, 180.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.value, -2846.05, epsilon = 0.01);
    assert!(matches!(
        gradient_norm_signal(&[1.0, f64::NAN], 2, true),
        Err(VigorError::Numeric(_))
    ));
    assert!(matches!(
        gradient_norm_signal(&[f64::INFINITY], 2, false),
        Err(VigorError::Numeric(_))
    ));
}

#[test]
fn confidence_and_verifier_rewards() {
    let cfg = common::tiny_config();
    let zero = vigor_core::model::ParamVector::<f64>::zeros(&cfg).unwrap();
    let c = Completion {
        tokens: vec![3, 4, 5],
        token_logprobs: vec![0.0; 3],
        terminated: false,
    };
    assert_abs_diff_eq!(
        confidence_signal(&zero, &[1], &c).unwrap(),
        -(6.0f64).ln(),
        epsilon = 1e-12
    );
    for seed in 0..5 {
        let (p, prompt, comp) = common::random_case(seed);
        assert_eq!(
            confidence_signal(&p, &prompt, &comp).unwrap(),
            -mean_nll(&p, &prompt, &comp).unwrap()
        );
    }
    let empty = Completion {
        tokens: vec![],
        token_logprobs: vec![],
        terminated: false,
    };
    assert!(matches!(
        confidence_signal(&zero, &[1], &empty),
        Err(VigorError::Domain(_))
    ));

    let inst = mod_add_instance(17, 25, 2).unwrap();
    assert_eq!(gt_reward(&inst, ". . <ans> 4 2 <eos>"), 1);
    assert_eq!(gt_reward(&inst, ". <ans> 2 4"), 0);
    assert_eq!(gt_reward(&inst, "4 2"), 0);
}

#[test]
fn confidence_is_zero_for_a_deterministic_model() {
    // A huge bias on token 3 makes it certain at every position.
    let cfg = common::tiny_config();
    let mut p = vigor_core::model::ParamVector::<f64>::zeros(&cfg).unwrap();
    p.tensor_mut("lm_head.bias").unwrap()[3] = 1e4;
    let c = Completion {
        tokens: vec![3, 3],
        token_logprobs: vec![0.0; 2],
        terminated: false,
    };
    assert_eq!(confidence_signal(&p, &[1], &c).unwrap(), 0.0);
}

#[test]
fn signals_leave_parameters_untouched() {
    let (p, prompt, comp) = common::random_case(3);
    let before = p.clone();
    let g = grad_mean_nll(&p, &prompt, &comp, GradScope::Full).unwrap();
    let _ = gradient_norm_signal(&g, comp.len(), true).unwrap();
    let _ = confidence_signal(&p, &prompt, &comp).unwrap();
    assert_eq!(
        p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        before
            .values
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
}

#[test]
fn lm_head_scope_norm_is_a_sub_norm() {
    let cfg = common::tiny_config();
    let p = init_params::<f64>(&cfg, 11).unwrap();
    let c = Completion {
        tokens: vec![3, 4, 2],
        token_logprobs: vec![0.0; 3],
        terminated: true,
    };
    let full = grad_mean_nll(&p, &[1, 5], &c, GradScope::Full).unwrap();
    let head = grad_mean_nll(&p, &[1, 5], &c, GradScope::LmHeadOnly).unwrap();
    let head_norm = l2_norm(&head);
    assert!(head_norm > 0.0 && head_norm <= l2_norm(&full));
    let range = p.lm_head_range();
    assert_abs_diff_eq!(head_norm, l2_norm(&full[range]), epsilon = 1e-15);
}

fn distinct_group() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::hash_set(-10_000i64..10_000, 2..12)
        .prop_map(|s| s.into_iter().map(|x| x as f64 / 8.0).collect())
}

fn any_group() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-40i64..40).prop_map(|x| x as f64 / 4.0), 2..12)
}

proptest! {
    #[test]
    fn rank_rewards_match_oracle_and_stay_in_range(signals in any_group()) {
        let got = rank_normalize(&signals).unwrap();
        for (g, w) in got.iter().zip(oracle_rank_rewards(&signals)) {
            prop_assert!((-1.0..=1.0).contains(g));
            prop_assert!((g - *w.numer() as f64 / *w.denom() as f64).abs() < 1e-15);
        }
        // Tied ranks break the mirror symmetry, so only rounding-level cancellation.
        prop_assert!(accurate_sum(got.iter().copied()).abs() < 1e-15);
    }

    #[test]
    fn distinct_ranks_are_a_permutation_of_the_grid(signals in distinct_group()) {
        let g = signals.len();
        let mut got = rank_normalize(&signals).unwrap();
        got.sort_by(f64::total_cmp);
        let grid: Vec<f64> = (0..g).map(|k| (2 * k) as f64 / (g - 1) as f64 - 1.0).collect();
        for (a, b) in got.iter().zip(&grid) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        prop_assert_eq!(accurate_sum(got.iter().copied()), 0.0);
        let adv = group_advantages(&rank_normalize(&signals).unwrap()).unwrap();
        prop_assert_eq!(accurate_sum(adv), 0.0);
    }

    #[test]
    fn ranks_ignore_increasing_transforms(signals in distinct_group(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let base = rank_normalize(&signals).unwrap();
        let affine: Vec<f64> = signals.iter().map(|s| a * s + b).collect();
        let cubic: Vec<f64> = signals.iter().map(|s| s * s * s + s).collect();
        let exp: Vec<f64> = signals.iter().map(|s| (s / 2000.0).exp()).collect();
        prop_assert_eq!(&rank_normalize(&affine).unwrap(), &base);
        prop_assert_eq!(&rank_normalize(&cubic).unwrap(), &base);
        prop_assert_eq!(&rank_normalize(&exp).unwrap(), &base);
    }

    #[test]
    fn scaling_norms_keeps_rewards_and_advantages(norms in prop::collection::hash_set(1u32..100_000, 2..10), lens in prop::collection::vec(1usize..40, 10), c in 0.001f64..1000.0) {
        let norms: Vec<f64> = norms.into_iter().map(|x| x as f64 / 1000.0).collect();
        let signal = |scale: f64| -> Vec<f64> {
            norms.iter().zip(&lens).map(|(n, &t)| {
                let g = [scale * n];
                gradient_norm_signal(&g, t, true).unwrap().value
            }).collect()
        };
        let r1 = rank_normalize(&signal(1.0)).unwrap();
        let r2 = rank_normalize(&signal(c)).unwrap();
        prop_assert_eq!(&r1, &r2);
        prop_assert_eq!(group_advantages(&r1).unwrap(), group_advantages(&r2).unwrap());
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-1.0f64..1.0, 2..16)) {
        let adv = group_advantages(&rewards).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let mu = rewards.iter().sum::<f64>() / n;
        let std = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt();
        if std >= MIN_GROUP_STD {
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(adv.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn advantages_ignore_affine_reward_maps(rewards in prop::collection::vec(-1.0f64..1.0, 2..16), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = group_advantages(&rewards).unwrap();
        let moved: Vec<f64> = rewards.iter().map(|r| a * r + b).collect();
        let adv = group_advantages(&moved).unwrap();
        if base.iter().any(|&x| x != 0.0) {
            for (x, y) in base.iter().zip(&adv) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn minmax_rewards_stay_in_range(signals in any_group()) {
        let r = minmax_normalize(&signals).unwrap();
        prop_assert!(r.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}
