//! Procedural quadruped stand-in used in place of an artist-made zebra
//! model: a pose library of labelled vertex clouds and the capsule-like
//! layout the mock renderer fits ellipsoids to.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::keypoints::{zebra27::*, NUM_GROUPS};
use crate::scenelayout::PosedModel;

/// Limb segments between two keypoint slots, with radius in meters at
/// unit scale.
pub const SEGMENTS: [(usize, usize, f64); 14] = [
    (BACK_FRONT, BACK_END, 0.32),
    (NECK_START, NECK_END, 0.13),
    (SKULL, NOSE, 0.12),
    (LEFT_EAR_BASE, LEFT_EAR_TIP, 0.045),
    (RIGHT_EAR_BASE, RIGHT_EAR_TIP, 0.045),
    (TAIL_START, TAIL_END, 0.05),
    (THIGH_FL, KNEE_FL, 0.09),
    (THIGH_FR, KNEE_FR, 0.09),
    (THIGH_BR, KNEE_BR, 0.09),
    (THIGH_BL, KNEE_BL, 0.09),
    (KNEE_FL, HOOF_FL, 0.06),
    (KNEE_FR, HOOF_FR, 0.06),
    (KNEE_BR, HOOF_BR, 0.06),
    (KNEE_BL, HOOF_BL, 0.06),
];

/// Spheres around single keypoints.
pub const SPHERES: [(usize, f64); 3] = [(LEFT_EYE, 0.05), (RIGHT_EYE, 0.05), (BODY_MIDDLE, 0.3)];

/// Joint-angle parameters of one pose (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseParams {
    /// Upper-leg swing about the lateral axis, per leg FL, FR, BR, BL.
    pub leg_swing: [f64; 4],
    /// Additional lower-leg swing at the knee.
    pub knee_bend: [f64; 4],
    /// Head-and-neck pitch about the neck start; positive lowers the head.
    pub neck_pitch: f64,
    /// Tail swing about the vertical axis.
    pub tail_swing: f64,
}

fn rot_y(v: Vector3<f64>, a: f64) -> Vector3<f64> {
    let (s, c) = a.sin_cos();
    Vector3::new(v.x * c + v.z * s, v.y, -v.x * s + v.z * c)
}

fn rot_z(v: Vector3<f64>, a: f64) -> Vector3<f64> {
    let (s, c) = a.sin_cos();
    Vector3::new(v.x * c - v.y * s, v.x * s + v.y * c, v.z)
}

/// Keypoint positions in model frame (x forward, y left, z up).
pub fn anchors(p: &PoseParams) -> [Vector3<f64>; NUM_GROUPS] {
    let mut a = [Vector3::zeros(); NUM_GROUPS];
    a[BACK_FRONT] = Vector3::new(0.6, 0.0, 1.3);
    a[BODY_MIDDLE] = Vector3::new(0.0, 0.0, 1.25);
    a[BACK_END] = Vector3::new(-0.6, 0.0, 1.3);

    let legs = [
        (THIGH_FL, KNEE_FL, HOOF_FL, Vector3::new(0.55, 0.18, 0.95)),
        (THIGH_FR, KNEE_FR, HOOF_FR, Vector3::new(0.55, -0.18, 0.95)),
        (THIGH_BR, KNEE_BR, HOOF_BR, Vector3::new(-0.55, -0.18, 0.95)),
        (THIGH_BL, KNEE_BL, HOOF_BL, Vector3::new(-0.55, 0.18, 0.95)),
    ];
    let down = Vector3::new(0.0, 0.0, -0.45);
    for (k, (thigh, knee, hoof, at)) in legs.into_iter().enumerate() {
        a[thigh] = at;
        a[knee] = at + rot_y(down, p.leg_swing[k]);
        a[hoof] = a[knee] + rot_y(down, p.leg_swing[k] + p.knee_bend[k]);
    }

    let neck = Vector3::new(0.8, 0.0, 1.4);
    a[NECK_START] = neck;
    let head = [
        (NECK_END, Vector3::new(1.1, 0.0, 1.85)),
        (SKULL, Vector3::new(1.15, 0.0, 1.95)),
        (NOSE, Vector3::new(1.55, 0.0, 1.6)),
        (LEFT_EYE, Vector3::new(1.27, 0.1, 1.88)),
        (RIGHT_EYE, Vector3::new(1.27, -0.1, 1.88)),
        (LEFT_EAR_BASE, Vector3::new(1.1, 0.08, 2.02)),
        (RIGHT_EAR_BASE, Vector3::new(1.1, -0.08, 2.02)),
        (LEFT_EAR_TIP, Vector3::new(1.06, 0.13, 2.22)),
        (RIGHT_EAR_TIP, Vector3::new(1.06, -0.13, 2.22)),
    ];
    for (slot, at) in head {
        a[slot] = neck + rot_y(at - neck, p.neck_pitch);
    }

    a[TAIL_START] = Vector3::new(-0.8, 0.0, 1.3);
    a[TAIL_END] = a[TAIL_START] + rot_z(Vector3::new(-0.15, 0.0, -0.6), p.tail_swing);
    a
}

/// Labelled vertex cloud: three vertices per group whose mean is the group
/// anchor, plus unlabelled surface samples along every limb.
pub fn posed_model(p: &PoseParams) -> PosedModel {
    let a = anchors(p);
    let mut vertices = Vec::new();
    let mut groups = Vec::new();
    let d = 0.02;
    let h = 0.5 * 3f64.sqrt() * d;
    for (slot, anchor) in a.iter().enumerate() {
        for off in [Vector3::new(d, 0.0, 0.0), Vector3::new(-d / 2.0, h, 0.0), Vector3::new(-d / 2.0, -h, 0.0)] {
            let v = anchor + off;
            vertices.push([v.x, v.y, v.z]);
            groups.push(Some(slot as u8 + 1));
        }
    }
    for &(s, t, r) in SEGMENTS.iter() {
        for k in 0..=4 {
            let c = a[s] + (a[t] - a[s]) * (k as f64 / 4.0);
            for off in [
                Vector3::new(0.0, r, 0.0),
                Vector3::new(0.0, -r, 0.0),
                Vector3::new(0.0, 0.0, r),
                Vector3::new(0.0, 0.0, -r),
            ] {
                let v = c + off;
                vertices.push([v.x, v.y, v.z.max(0.0)]);
                groups.push(None);
            }
        }
    }
    PosedModel { vertices, groups }
}

/// `n` poses; entry 0 is the neutral standing pose, the rest are random.
pub fn pose_library(n: usize, seed: u64) -> Vec<PosedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            if k == 0 {
                return posed_model(&PoseParams::default());
            }
            let mut p = PoseParams::default();
            for leg in 0..4 {
                p.leg_swing[leg] = rng.random_range(-0.45..0.45);
                p.knee_bend[leg] = rng.random_range(-0.6..0.2);
            }
            p.neck_pitch = rng.random_range(-0.2..0.9);
            p.tail_swing = rng.random_range(-0.4..0.4);
            posed_model(&p)
        })
        .collect()
}
