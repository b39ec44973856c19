//! Procedural scene composition: randomized instance placement with
//! ground-plane collision rejection, then cameras aimed at the herd centroid.
//!
//! World frame is z-up; the ground plane is `z = env_bounds.min[2]`.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, InstanceId};
use crate::keypoints::NUM_GROUPS;

/// Keypoint-group label of a vertex: `1..=27`, or `None` for body vertices.
pub type GroupLabel = Option<u8>;

/// One entry of the pose library: a posed vertex cloud in model frame
/// (x forward, y left, z up, feet on `z = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosedModel {
    pub vertices: Vec<[f64; 3]>,
    pub groups: Vec<GroupLabel>,
}

impl PosedModel {
    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() != self.groups.len() {
            return Err(Error::Config(format!(
                "{} vertices but {} group labels",
                self.vertices.len(),
                self.groups.len()
            )));
        }
        let mut present = [false; NUM_GROUPS];
        for g in self.groups.iter().flatten() {
            let g = *g as usize;
            if g == 0 || g > NUM_GROUPS {
                return Err(Error::Schema(format!("group label {g} outside 1..={NUM_GROUPS}")));
            }
            present[g - 1] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Schema(format!("keypoint group {} has no vertices", missing + 1)));
        }
        Ok(())
    }
}

/// Rigid yaw-plus-translation placement in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl Placement {
    pub fn apply(&self, v: &[f64; 3], scale: f64) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let (x, y, z) = (v[0] * scale, v[1] * scale, v[2] * scale);
        Vector3::new(
            c * x - s * y + self.translation[0],
            s * x + c * y + self.translation[1],
            z + self.translation[2],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub id: InstanceId,
    pub scale: f64,
    pub pose_index: usize,
    pub placement: Placement,
    #[serde(rename = "vertices")]
    pub base_vertices: Vec<[f64; 3]>,
    #[serde(rename = "groups")]
    pub group_of_vertex: Vec<GroupLabel>,
}

impl SceneInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "instance {} has non-positive scale {}",
                self.id, self.scale
            )));
        }
        if self.id == 0 {
            return Err(Error::Config("instance id 0 is reserved for background".into()));
        }
        PosedModel {
            vertices: self.base_vertices.clone(),
            groups: self.group_of_vertex.clone(),
        }
        .validate()
    }

    pub fn placed_vertices(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.base_vertices
            .iter()
            .map(move |v| self.placement.apply(v, self.scale))
    }

    /// Mean of the placed vertex cloud.
    pub fn centroid(&self) -> Vector3<f64> {
        let n = self.base_vertices.len().max(1) as f64;
        self.placed_vertices().sum::<Vector3<f64>>() / n
    }

    pub fn occupancy_box(&self) -> GroundBox {
        GroundBox::around(self.placed_vertices())
    }
}

/// Axis-aligned rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl GroundBox {
    fn around(points: impl Iterator<Item = Vector3<f64>>) -> Self {
        let mut b = GroundBox {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for p in points {
            b.min[0] = b.min[0].min(p.x);
            b.min[1] = b.min[1].min(p.y);
            b.max[0] = b.max[0].max(p.x);
            b.max[1] = b.max[1].max(p.y);
        }
        b
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    /// Area of the interior overlap; touching edges do not collide.
    pub fn overlap_area(&self, other: &GroundBox) -> f64 {
        let w = self.max[0].min(other.max[0]) - self.min[0].max(other.min[0]);
        let h = self.max[1].min(other.max[1]) - self.min[1].max(other.min[1]);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn collides(&self, other: &GroundBox) -> bool {
        self.overlap_area(other) > 0.0
    }
}

/// Axis-aligned world region. Instances are placed with their feet on the
/// `min[2]` plane and their origin inside the x/y extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.min[k].is_finite() && self.max[k].is_finite()) || self.min[k] > self.max[k] {
                return Err(Error::Config(format!(
                    "bounds axis {k}: min {} must not exceed max {}",
                    self.min[k], self.max[k]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementOutcome {
    pub instances: Vec<SceneInstance>,
    pub discarded: usize,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Attempts `n` random placements and keeps those whose occupancy box does
/// not overlap an earlier accepted one. Accepted instances are numbered
/// `1, 2, ...` in placement order.
pub fn place_instances(
    pose_library: &[PosedModel],
    n: usize,
    bounds: &Bounds,
    scale_range: (f64, f64),
    rng_seed: u64,
) -> Result<PlacementOutcome> {
    if pose_library.is_empty() {
        return Err(Error::Config("pose library is empty".into()));
    }
    if n == 0 {
        return Err(Error::Config("instance count must be at least 1".into()));
    }
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Config(format!("invalid scale range ({lo}, {hi})")));
    }
    bounds.validate()?;
    for (k, pose) in pose_library.iter().enumerate() {
        pose.validate()
            .map_err(|e| Error::Config(format!("pose library entry {k}: {e}")))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut accepted: Vec<SceneInstance> = Vec::new();
    let mut boxes: Vec<GroundBox> = Vec::new();
    for _ in 0..n {
        let scale = uniform(&mut rng, lo, hi);
        let pose_index = rng.random_range(0..pose_library.len());
        let yaw = rng.random_range(0.0..TAU);
        let x = uniform(&mut rng, bounds.min[0], bounds.max[0]);
        let y = uniform(&mut rng, bounds.min[1], bounds.max[1]);
        let pose = &pose_library[pose_index];
        let candidate = SceneInstance {
            id: accepted.len() as InstanceId + 1,
            scale,
            pose_index,
            placement: Placement {
                yaw,
                translation: [x, y, bounds.min[2]],
            },
            base_vertices: pose.vertices.clone(),
            group_of_vertex: pose.groups.clone(),
        };
        let footprint = candidate.occupancy_box();
        if boxes.iter().any(|b| b.collides(&footprint)) {
            continue;
        }
        boxes.push(footprint);
        accepted.push(candidate);
    }
    let discarded = n - accepted.len();
    Ok(PlacementOutcome {
        instances: accepted,
        discarded,
    })
}

/// Intrinsics shared by every generated camera plus the elevation range
/// (degrees above the horizon) that view directions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub elevation_deg: (f64, f64),
}

impl CameraRig {
    /// Square pixels with the principal point at the image center.
    pub fn centered(width: u32, height: u32, focal: f64) -> Self {
        CameraRig {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            elevation_deg: (15.0, 90.0),
        }
    }
}

/// Mean of the per-instance vertex-cloud centroids.
pub fn herd_centroid(instances: &[SceneInstance]) -> Result<Vector3<f64>> {
    if instances.is_empty() {
        return Err(Error::EmptyScene);
    }
    Ok(instances.iter().map(SceneInstance::centroid).sum::<Vector3<f64>>()
        / instances.len() as f64)
}

/// World-to-camera rotation looking from `eye` toward `target` with world
/// z up. `right_hint` is used when the view direction is vertical.
pub fn look_at_rotation(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    right_hint: &Vector3<f64>,
) -> Result<UnitQuaternion<f64>> {
    let forward = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Config("camera coincides with its look-at target".into()))?;
    let right = match forward.cross(&Vector3::z()).try_normalize(1e-9) {
        Some(r) => r,
        None => {
            let r = right_hint - forward * forward.dot(right_hint);
            r.try_normalize(1e-9)
                .ok_or_else(|| Error::Config("degenerate right-vector hint".into()))?
        }
    };
    let down = forward.cross(&right);
    let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    Ok(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(m),
    ))
}

/// Samples `k` cameras around the herd centroid: azimuth uniform in
/// `[0, 2pi)`, elevation uniform in the rig's range, distance uniform in
/// `distance_range`. Every camera looks at the centroid.
pub fn place_cameras(
    instances: &[SceneInstance],
    k: usize,
    distance_range: (f64, f64),
    rig: &CameraRig,
    rng_seed: u64,
) -> Result<Vec<CameraModel>> {
    let target = herd_centroid(instances)?;
    if k == 0 {
        return Err(Error::Config("camera count must be at least 1".into()));
    }
    let (dlo, dhi) = distance_range;
    if !(dlo > 0.0 && dlo <= dhi && dhi.is_finite()) {
        return Err(Error::Config(format!("invalid distance range ({dlo}, {dhi})")));
    }
    let (elo, ehi) = rig.elevation_deg;
    if !(-90.0..=90.0).contains(&elo) || !(-90.0..=90.0).contains(&ehi) || elo > ehi {
        return Err(Error::Config(format!("invalid elevation range ({elo}, {ehi})")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut cams = Vec::with_capacity(k);
    for _ in 0..k {
        let azimuth = rng.random_range(0.0..TAU);
        let elevation = uniform(&mut rng, elo, ehi).to_radians().clamp(-FRAC_PI_2, FRAC_PI_2);
        let distance = uniform(&mut rng, dlo, dhi);
        let dir = Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        let eye = target + dir * distance;
        let right_hint = Vector3::new(azimuth.sin(), -azimuth.cos(), 0.0);
        let orientation = look_at_rotation(&eye, &target, &right_hint)?;
        cams.push(CameraModel::from_parts(
            eye,
            orientation,
            rig.fx,
            rig.fy,
            rig.cx,
            rig.cy,
            rig.width,
            rig.height,
        )?);
    }
    Ok(cams)
}

/// Parameters of a full scene generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub instance_count: usize,
    pub bounds: Bounds,
    pub scale_range: (f64, f64),
    pub camera_count: usize,
    pub distance_range: (f64, f64),
    pub rig: CameraRig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            instance_count: 250,
            bounds: Bounds {
                min: [-100.0, -100.0, 0.0],
                max: [100.0, 100.0, 0.0],
            },
            scale_range: (0.8, 1.2),
            camera_count: 3,
            distance_range: (20.0, 60.0),
            rig: CameraRig::centered(1920, 1080, 1400.0),
            seed: 0,
        }
    }
}

/// The scene file: generation parameters, surviving instances and cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub env_bounds: Bounds,
    pub scale_range: (f64, f64),
    pub distance_range: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub attempted: usize,
    pub discarded: usize,
    pub instances: Vec<SceneInstance>,
    pub cameras: Vec<CameraModel>,
}

impl SceneSpec {
    pub fn instance(&self, id: InstanceId) -> Option<&SceneInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_bounds.validate()?;
        let mut seen = std::collections::HashSet::new();
        for inst in &self.instances {
            inst.validate()?;
            if !seen.insert(inst.id) {
                return Err(Error::Config(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<scene>".into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene serializes");
        s.push('\n');
        s
    }
}

/// Derives an independent sub-seed; used so placement and camera sampling
/// draw from separate streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_scene(config: &SceneConfig, pose_library: &[PosedModel]) -> Result<SceneSpec> {
    let placed = place_instances(
        pose_library,
        config.instance_count,
        &config.bounds,
        config.scale_range,
        derive_seed(config.seed, 1),
    )?;
    let cameras = place_cameras(
        &placed.instances,
        config.camera_count,
        config.distance_range,
        &config.rig,
        derive_seed(config.seed, 2),
    )?;
    Ok(SceneSpec {
        seed: config.seed,
        env_bounds: config.bounds,
        scale_range: config.scale_range,
        distance_range: config.distance_range,
        elevation_deg: config.rig.elevation_deg,
        attempted: config.instance_count,
        discarded: placed.discarded,
        instances: placed.instances,
        cameras,
    })
}
