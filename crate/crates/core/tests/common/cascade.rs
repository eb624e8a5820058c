//! Exhaustive detachment-order oracle for grasp failure forces.

use lavagrasp_core::gripper::{
    self, FailureMode, FeatureShape, FingerPlacement, GraspRealization, GripperConfig, SpineContact, WhiffletreeState,
};
use lavagrasp_core::rng;
use lavagrasp_core::{Point3, Vector3};
use rand::Rng;

pub fn config(n_fingers: usize, spines_per_finger: usize) -> GripperConfig {
    GripperConfig {
        n_fingers,
        spines_per_finger,
        fingers: (0..n_fingers)
            .map(|i| FingerPlacement::at(i as f64 * std::f64::consts::TAU / n_fingers as f64, 1.4, 0.0))
            .collect(),
        ..GripperConfig::default()
    }
}

pub fn spine(finger: usize, limit: f64) -> SpineContact {
    SpineContact {
        finger,
        engaged: limit > 0.0,
        limit_force: limit,
        contact_point: Point3::origin(),
        contact_normal: Vector3::x(),
        load_angle: 0.0,
        pull_projection: 1.0,
    }
}

pub fn realization(n_fingers: usize, spines: Vec<SpineContact>, mode: FailureMode) -> GraspRealization {
    GraspRealization {
        n_fingers,
        spines,
        feature: FeatureShape::Sphere {
            center: Point3::origin(),
            radius: 0.1,
        },
        pull_direction: Vector3::z(),
        failure_mode: mode,
    }
}

pub fn whiffle_for(r: &GraspRealization, tendon: f64) -> WhiffletreeState {
    let per_finger = r.spines.iter().filter(|s| s.finger == 0).count().max(1);
    let cfg = GripperConfig {
        tendon_force_max: tendon.max(1.0),
        ..config(r.n_fingers, per_finger)
    };
    gripper::whiffletree_share(&cfg, tendon, &r.active_fingers()).unwrap()
}

/// Ramp the external pull and let spines detach in `order`. Returns the
/// peak sustained force if the order is physically possible (each
/// detaching spine has the lowest detachment force among survivors).
pub fn ramp(r: &GraspRealization, w: &WhiffletreeState, order: &[usize], first_detachment: bool) -> Option<f64> {
    let engaged: Vec<usize> = (0..r.spines.len()).filter(|&i| r.spines[i].engaged).collect();
    let mut alive = vec![true; r.spines.len()];
    let survivors = |alive: &[bool], f: usize| engaged.iter().filter(|&&j| alive[j] && r.spines[j].finger == f).count();
    let threshold = |alive: &[bool], j: usize| {
        let s = &r.spines[j];
        let ratio = w.tendon_force / w.finger_shares[s.finger];
        s.limit_force * s.pull_projection * survivors(alive, s.finger) as f64 * ratio
    };
    let mut peak: f64 = 0.0;
    for &j in order {
        let t = threshold(&alive, j);
        let min = engaged
            .iter()
            .filter(|&&k| alive[k])
            .map(|&k| threshold(&alive, k))
            .fold(f64::INFINITY, f64::min);
        if t != min {
            return None;
        }
        peak = peak.max(t);
        alive[j] = false;
        if first_detachment || survivors(&alive, r.spines[j].finger) == 0 {
            return Some(peak);
        }
    }
    unreachable!("some finger always empties")
}

pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Failure force by exhaustive enumeration over detachment orders.
pub fn enumerate(r: &GraspRealization, w: &WhiffletreeState, first_detachment: bool) -> f64 {
    let engaged: Vec<usize> = (0..r.spines.len()).filter(|&i| r.spines[i].engaged).collect();
    if engaged.is_empty() {
        return 0.0;
    }
    let outcomes: Vec<f64> = permutations(&engaged)
        .iter()
        .filter_map(|o| ramp(r, w, o, first_detachment))
        .collect();
    assert!(!outcomes.is_empty());
    let first = outcomes[0];
    assert!(outcomes.iter().all(|&x| x == first), "orders disagree: {outcomes:?}");
    first
}

pub fn random_instance(seed: u64, mode: FailureMode) -> (GraspRealization, WhiffletreeState) {
    let mut g = rng::stream(seed, 0);
    let n_fingers = g.random_range(1..=3usize);
    let max_per = 6 / n_fingers;
    let per = g.random_range(1..=max_per);
    let mut spines = Vec::new();
    for f in 0..n_fingers {
        // Every finger keeps at least one engaged spine.
        for k in 0..per {
            let limit = if k == 0 || g.random_bool(0.8) {
                // Integers make exact ties likely as well.
                if g.random_bool(0.3) { g.random_range(1..6) as f64 } else { g.random_range(0.5..40.0) }
            } else {
                0.0
            };
            let mut s = spine(f, limit);
            s.pull_projection = g.random_range(0.3..=1.0);
            spines.push(s);
        }
    }
    let r = realization(n_fingers, spines, mode);
    let tendon = g.random_range(1.0..30.0);
    let w = whiffle_for(&r, tendon);
    (r, w)
}

