mod common;

use common::cascade::{config, enumerate, random_instance, realization, spine, whiffle_for};
use lavagrasp_core::gripper::{self, AsperityFamily, AsperityModel, EngageCurve, FailureMode, FeatureShape, GraspRealization, GripperConfig};
use lavagrasp_core::rng;
use lavagrasp_core::{Point3, Vector3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn single_spine_holds_its_limit() {
    let r = realization(1, vec![spine(0, 10.0)], FailureMode::Cascade);
    assert_eq!(gripper::pull_force_at_failure(&r, &whiffle_for(&r, 9.0)), 10.0);
}

#[test]
fn two_equal_spines_share() {
    let r = realization(1, vec![spine(0, 10.0), spine(0, 10.0)], FailureMode::Cascade);
    assert_eq!(gripper::pull_force_at_failure(&r, &whiffle_for(&r, 9.0)), 20.0);
}

#[test]
fn three_spines_five_ten_twenty() {
    // One spine per finger, equal shares: the 5 N spine goes at 15 N and
    // takes its finger with it.
    let r = realization(3, vec![spine(0, 5.0), spine(1, 10.0), spine(2, 20.0)], FailureMode::Cascade);
    let w = whiffle_for(&r, 9.0);
    assert_eq!(gripper::pull_force_at_failure(&r, &w), 15.0);
    assert_eq!(enumerate(&r, &w, false), 15.0);
}

#[test]
fn cascade_within_one_finger() {
    let r = realization(1, vec![spine(0, 5.0), spine(0, 10.0), spine(0, 20.0)], FailureMode::Cascade);
    let w = whiffle_for(&r, 9.0);
    // 15 N sheds the weak spine, the other two then hold up to 2 x 10 N.
    assert_eq!(gripper::pull_force_at_failure(&r, &w), 20.0);
    let first = realization(1, r.spines.clone(), FailureMode::FirstDetachment);
    assert_eq!(gripper::pull_force_at_failure(&first, &w), 15.0);
}

#[test]
fn no_engaged_spines_is_zero() {
    let r = realization(2, vec![spine(0, 0.0), spine(1, 0.0)], FailureMode::Cascade);
    let cfg = config(2, 1);
    let w = gripper::whiffletree_share(&cfg, 10.0, &[true, true]).unwrap();
    assert_eq!(gripper::pull_force_at_failure(&r, &w), 0.0);
}

#[test]
fn matches_enumeration_on_200_instances() {
    for seed in 0..200 {
        for mode in [FailureMode::Cascade, FailureMode::FirstDetachment] {
            let (r, w) = random_instance(seed, mode);
            let expected = enumerate(&r, &w, mode == FailureMode::FirstDetachment);
            assert_eq!(gripper::pull_force_at_failure(&r, &w), expected, "seed {seed} {mode:?}");
        }
    }
}

#[test]
fn whiffletree_conserves_tendon_force_bitwise() {
    let mut g = rng::stream(99, 0);
    for _ in 0..1000 {
        let n = g.random_range(1..=8usize);
        let per = g.random_range(1..=6usize);
        let cfg = GripperConfig {
            tendon_force_max: 1e4,
            ..config(n, per)
        };
        let mut mask: Vec<bool> = (0..n).map(|_| g.random_bool(0.6)).collect();
        let pick = g.random_range(0..n);
        mask[pick] = true;
        let tendon = g.random_range(0.0..1e4);
        let w = gripper::whiffletree_share(&cfg, tendon, &mask).unwrap();
        assert_eq!(w.finger_shares.iter().sum::<f64>(), tendon);
        for (i, preloads) in w.spine_preloads.iter().enumerate() {
            assert_eq!(preloads.iter().sum::<f64>(), w.finger_shares[i]);
            assert!(preloads.iter().all(|&p| p >= 0.0));
            if !mask[i] {
                assert_eq!(w.finger_shares[i], 0.0);
            }
        }
    }
}

#[test]
fn realization_is_deterministic() {
    let cfg = GripperConfig::default();
    let f = FeatureShape::Sphere {
        center: Point3::new(1.0, 0.0, 0.0),
        radius: 0.12,
    };
    let pull = Vector3::new(0.0, 0.3, 1.0).normalize();
    let a = gripper::sample_realization(&cfg, &f, &pull, &mut rng::stream(5, 17)).unwrap();
    let b = gripper::sample_realization(&cfg, &f, &pull, &mut rng::stream(5, 17)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exponential_and_deterministic_families() {
    let mut cfg = GripperConfig::default();
    cfg.asperity = AsperityModel {
        family: AsperityFamily::Deterministic,
        scale: 20.0,
        shape: 1.0,
        engage: EngageCurve::Constant { probability: 1.0 },
    };
    let f = FeatureShape::Sphere {
        center: Point3::origin(),
        radius: 0.1,
    };
    let r = gripper::sample_realization(&cfg, &f, &Vector3::z(), &mut rng::stream(1, 1)).unwrap();
    assert!(r.spines.iter().all(|s| s.engaged && s.limit_force == 20.0));
    cfg.asperity.family = AsperityFamily::Exponential;
    let r = gripper::sample_realization(&cfg, &f, &Vector3::z(), &mut rng::stream(1, 1)).unwrap();
    assert!(r.spines.iter().all(|s| s.limit_force > 0.0));
}

fn limits_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=3).prop_flat_map(|fingers| {
        let per = 5 / fingers;
        (Just(fingers), prop::collection::vec(0.5f64..50.0, fingers..=fingers * per))
    })
}

fn build(fingers: usize, limits: &[f64]) -> GraspRealization {
    let spines = limits.iter().enumerate().map(|(i, &l)| spine(i % fingers, l)).collect();
    realization(fingers, spines, FailureMode::Cascade)
}

proptest! {
    #[test]
    fn adding_a_spine_to_an_engaged_finger_never_weakens((fingers, limits) in limits_strategy(), extra in 0.5f64..50.0, target in 0usize..3) {
        let before = build(fingers, &limits);
        let w = whiffle_for(&before, 9.0);
        let f_before = gripper::pull_force_at_failure(&before, &w);
        let mut after = before.clone();
        after.spines.push(spine(target % fingers, extra));
        let f_after = gripper::pull_force_at_failure(&after, &w);
        prop_assert!(f_after >= f_before);
        prop_assert_eq!(f_after, enumerate(&after, &w, false));
    }

    #[test]
    fn scaling_limits_scales_failure_force((fingers, limits) in limits_strategy(), k in 0u32..6) {
        // Powers of two keep the scaling exact.
        let c = 2f64.powi(k as i32 - 2);
        let r = build(fingers, &limits);
        let w = whiffle_for(&r, 9.0);
        let scaled: Vec<f64> = limits.iter().map(|l| l * c).collect();
        let rs = build(fingers, &scaled);
        prop_assert_eq!(gripper::pull_force_at_failure(&rs, &w), c * gripper::pull_force_at_failure(&r, &w));
    }

    #[test]
    fn scaling_is_proportional_for_any_factor((fingers, limits) in limits_strategy(), c in 0.01f64..100.0) {
        let r = build(fingers, &limits);
        let w = whiffle_for(&r, 9.0);
        let scaled: Vec<f64> = limits.iter().map(|l| l * c).collect();
        let got = gripper::pull_force_at_failure(&build(fingers, &scaled), &w);
        let want = c * gripper::pull_force_at_failure(&r, &w);
        prop_assert!((got - want).abs() <= 1e-12 * want);
    }
}
