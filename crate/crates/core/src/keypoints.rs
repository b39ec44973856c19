//! Keypoint schemas, ground-truth keypoint synthesis and schema mapping.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraModel, InstanceId, InstanceMask, PixelBox};
use crate::mockrender::RenderedFrame;
use crate::scenelayout::{SceneInstance, SceneSpec};

/// Number of vertex groups, one per zebra keypoint.
pub const NUM_GROUPS: usize = 27;

/// Default labeling filter: instances whose larger box side does not exceed
/// this many pixels are skipped.
pub const DEFAULT_MIN_DIM: f64 = 30.0;

pub const ZEBRA27_NAMES: [&str; 27] = [
    "front_left_hoof",
    "front_right_hoof",
    "back_right_hoof",
    "back_left_hoof",
    "front_left_knee",
    "front_right_knee",
    "back_right_knee",
    "back_left_knee",
    "front_left_thigh",
    "front_right_thigh",
    "back_right_thigh",
    "back_left_thigh",
    "tail_start",
    "tail_end",
    "left_eye",
    "right_eye",
    "left_ear_tip",
    "right_ear_tip",
    "left_ear_base",
    "right_ear_base",
    "neck_start",
    "neck_end",
    "nose",
    "skull",
    "body_middle",
    "back_end",
    "back_front",
];

/// Slot indices into [`ZEBRA27_NAMES`].
pub mod zebra27 {
    pub const HOOF_FL: usize = 0;
    pub const HOOF_FR: usize = 1;
    pub const HOOF_BR: usize = 2;
    pub const HOOF_BL: usize = 3;
    pub const KNEE_FL: usize = 4;
    pub const KNEE_FR: usize = 5;
    pub const KNEE_BR: usize = 6;
    pub const KNEE_BL: usize = 7;
    pub const THIGH_FL: usize = 8;
    pub const THIGH_FR: usize = 9;
    pub const THIGH_BR: usize = 10;
    pub const THIGH_BL: usize = 11;
    pub const TAIL_START: usize = 12;
    pub const TAIL_END: usize = 13;
    pub const LEFT_EYE: usize = 14;
    pub const RIGHT_EYE: usize = 15;
    pub const LEFT_EAR_TIP: usize = 16;
    pub const RIGHT_EAR_TIP: usize = 17;
    pub const LEFT_EAR_BASE: usize = 18;
    pub const RIGHT_EAR_BASE: usize = 19;
    pub const NECK_START: usize = 20;
    pub const NECK_END: usize = 21;
    pub const NOSE: usize = 22;
    pub const SKULL: usize = 23;
    pub const BODY_MIDDLE: usize = 24;
    pub const BACK_END: usize = 25;
    pub const BACK_FRONT: usize = 26;
}

const ZEBRA27_FLIP: [(usize, usize); 9] = [
    (zebra27::HOOF_FL, zebra27::HOOF_FR),
    (zebra27::HOOF_BL, zebra27::HOOF_BR),
    (zebra27::KNEE_FL, zebra27::KNEE_FR),
    (zebra27::KNEE_BL, zebra27::KNEE_BR),
    (zebra27::THIGH_FL, zebra27::THIGH_FR),
    (zebra27::THIGH_BL, zebra27::THIGH_BR),
    (zebra27::LEFT_EYE, zebra27::RIGHT_EYE),
    (zebra27::LEFT_EAR_TIP, zebra27::RIGHT_EAR_TIP),
    (zebra27::LEFT_EAR_BASE, zebra27::RIGHT_EAR_BASE),
];

/// The 17-keypoint animal layout used by AP-10K and APT-36K.
pub const ANIMAL17_NAMES: [&str; 17] = [
    "left_eye",
    "right_eye",
    "nose",
    "neck",
    "root_of_tail",
    "left_shoulder",
    "left_elbow",
    "left_front_paw",
    "right_shoulder",
    "right_elbow",
    "right_front_paw",
    "left_hip",
    "left_knee",
    "left_back_paw",
    "right_hip",
    "right_knee",
    "right_back_paw",
];

const ANIMAL17_FLIP: [(usize, usize); 7] = [(0, 1), (5, 8), (6, 9), (7, 10), (11, 14), (12, 15), (13, 16)];

/// Which keypoint layout a record or manifest uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaTag {
    Zebra27,
    Animal17,
    /// Detection-only annotations without keypoints.
    Boxes,
}

impl SchemaTag {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            SchemaTag::Zebra27 => &ZEBRA27_NAMES,
            SchemaTag::Animal17 => &ANIMAL17_NAMES,
            SchemaTag::Boxes => &[],
        }
    }

    pub fn slot_count(self) -> usize {
        self.names().len()
    }

    pub fn slot(self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| *n == name)
    }

    /// Left/right partner pairs.
    pub fn flip_pairs(self) -> Vec<(usize, usize)> {
        let pairs: &[(usize, usize)] = match self {
            SchemaTag::Zebra27 => &ZEBRA27_FLIP,
            SchemaTag::Animal17 => &ANIMAL17_FLIP,
            SchemaTag::Boxes => &[],
        };
        pairs.to_vec()
    }

    /// Slot each slot swaps with under a horizontal flip.
    pub fn flip_permutation(self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.slot_count()).collect();
        for (a, b) in self.flip_pairs() {
            perm[a] = b;
            perm[b] = a;
        }
        perm
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaTag::Zebra27 => "zebra27",
            SchemaTag::Animal17 => "animal17",
            SchemaTag::Boxes => "boxes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zebra27" => Ok(SchemaTag::Zebra27),
            "animal17" => Ok(SchemaTag::Animal17),
            "boxes" => Ok(SchemaTag::Boxes),
            other => Err(Error::Schema(format!("unknown schema `{other}`"))),
        }
    }
}

/// COCO visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(u8)]
pub enum Visibility {
    #[default]
    Unlabeled = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn from_flag(flag: f64) -> Result<Self> {
        match flag {
            0.0 => Ok(Visibility::Unlabeled),
            1.0 => Ok(Visibility::Occluded),
            2.0 => Ok(Visibility::Visible),
            other => Err(Error::Schema(format!("visibility flag {other} is not 0, 1 or 2"))),
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Visibility::Unlabeled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub const UNLABELED: Keypoint = Keypoint {
        u: 0.0,
        v: 0.0,
        visibility: Visibility::Unlabeled,
    };

    pub fn new(u: f64, v: f64, visibility: Visibility) -> Self {
        Keypoint { u, v, visibility }
    }
}

/// How an annotation refers to its pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Segmentation {
    #[default]
    None,
    /// Id of the instance in the frame's instance mask.
    MaskId(InstanceId),
    Polygons(Vec<Vec<f64>>),
    /// Any other encoding (e.g. RLE), kept verbatim.
    Raw(serde_json::Value),
}

/// One animal in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub instance_id: InstanceId,
    pub bbox: PixelBox,
    pub schema: SchemaTag,
    pub keypoints: Vec<Keypoint>,
    pub segmentation: Segmentation,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.bbox.is_valid() && self.bbox.area() > 0.0) {
            return Err(Error::Schema(format!(
                "annotation for image {} instance {} has an empty box",
                self.image_id, self.instance_id
            )));
        }
        if self.keypoints.len() != self.schema.slot_count() {
            return Err(Error::Schema(format!(
                "{} keypoints for schema {} ({} slots)",
                self.keypoints.len(),
                self.schema.as_str(),
                self.schema.slot_count()
            )));
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visibility.is_labeled()).count()
    }

    /// Mirror about the vertical center line of a `width`-pixel image,
    /// swapping left/right partner slots.
    pub fn flip_horizontal(&self, width: f64) -> AnnotationRecord {
        let perm = self.schema.flip_permutation();
        let keypoints = (0..self.keypoints.len())
            .map(|slot| {
                let k = self.keypoints[perm[slot]];
                if k.visibility.is_labeled() {
                    Keypoint::new(width - k.u, k.v, k.visibility)
                } else {
                    Keypoint::UNLABELED
                }
            })
            .collect();
        AnnotationRecord {
            bbox: PixelBox::new(width - self.bbox.right(), self.bbox.y, self.bbox.w, self.bbox.h),
            keypoints,
            ..self.clone()
        }
    }
}

/// Mean world position of the placed, scaled vertices in `group` (1-based).
pub fn group_centroid(instance: &SceneInstance, group: usize) -> Result<Vector3<f64>> {
    if group == 0 || group > NUM_GROUPS {
        return Err(Error::Schema(format!("group {group} outside 1..={NUM_GROUPS}")));
    }
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for (v, g) in instance.base_vertices.iter().zip(&instance.group_of_vertex) {
        if g.map(usize::from) == Some(group) {
            sum += instance.placement.apply(v, instance.scale);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Schema(format!(
            "instance {} has no vertices in group {group}",
            instance.id
        )));
    }
    Ok(sum / n as f64)
}

/// Visible when the pixel containing `(u, v)` belongs to `instance_id`,
/// occluded otherwise (including out of frame).
pub fn classify_visibility(u: f64, v: f64, mask: &InstanceMask, instance_id: InstanceId) -> Visibility {
    match mask.id_at(u, v) {
        Some(id) if id == instance_id => Visibility::Visible,
        _ => Visibility::Occluded,
    }
}

/// Projects the 27 group centroids of `instance` and classifies them
/// against `mask`. Points behind the camera are left unlabeled.
pub fn synthesize_keypoints(
    instance: &SceneInstance,
    cam: &CameraModel,
    mask: &InstanceMask,
) -> Result<Vec<Keypoint>> {
    (1..=NUM_GROUPS)
        .map(|g| {
            let c = group_centroid(instance, g)?;
            match project(&c, cam) {
                Ok(p) => Ok(Keypoint::new(p.u, p.v, classify_visibility(p.u, p.v, mask, instance.id))),
                Err(Error::BehindCamera { .. }) => Ok(Keypoint::UNLABELED),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Emits a 27-keypoint record for every instance in the frame whose mask box
/// has a larger side strictly above `min_dim` pixels.
pub fn annotate_frame(
    scene: &SceneSpec,
    cam: &CameraModel,
    frame: &RenderedFrame,
    min_dim: f64,
) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (id, bbox, _) in frame.mask.instance_boxes() {
        let instance = scene.instance(id).ok_or_else(|| {
            Error::Consistency(format!(
                "mask of image {} contains instance {id} which is not in the scene",
                frame.image_id
            ))
        })?;
        if bbox.max_dim() <= min_dim {
            continue;
        }
        out.push(AnnotationRecord {
            image_id: frame.image_id,
            instance_id: id,
            bbox,
            schema: SchemaTag::Zebra27,
            keypoints: synthesize_keypoints(instance, cam, &frame.mask)?,
            segmentation: Segmentation::MaskId(id),
        });
    }
    Ok(out)
}

/// Injective slot correspondence between two schemas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaMapping {
    pub source: SchemaTag,
    pub target: SchemaTag,
    pairs: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct MappingFile {
    source: SchemaTag,
    target: SchemaTag,
    pairs: Vec<(String, String)>,
}

impl SchemaMapping {
    pub fn new(source: SchemaTag, target: SchemaTag, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let (ns, nt) = (source.slot_count(), target.slot_count());
        let mut src_seen = vec![false; ns];
        let mut dst_seen = vec![false; nt];
        for &(s, t) in &pairs {
            if s >= ns || t >= nt {
                return Err(Error::Mapping(format!("pair ({s}, {t}) out of range")));
            }
            if std::mem::replace(&mut src_seen[s], true) {
                return Err(Error::Mapping(format!("source slot {s} mapped twice")));
            }
            if std::mem::replace(&mut dst_seen[t], true) {
                return Err(Error::Mapping(format!("target slot {t} mapped twice")));
            }
        }
        Ok(SchemaMapping { source, target, pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Default 17 -> 27 table.
    pub fn animal17_to_zebra27() -> Self {
        use zebra27::*;
        let table = [
            ("left_eye", LEFT_EYE),
            ("right_eye", RIGHT_EYE),
            ("nose", NOSE),
            ("neck", NECK_START),
            ("root_of_tail", TAIL_START),
            ("left_shoulder", THIGH_FL),
            ("left_elbow", KNEE_FL),
            ("left_front_paw", HOOF_FL),
            ("right_shoulder", THIGH_FR),
            ("right_elbow", KNEE_FR),
            ("right_front_paw", HOOF_FR),
            ("left_hip", THIGH_BL),
            ("left_knee", KNEE_BL),
            ("left_back_paw", HOOF_BL),
            ("right_hip", THIGH_BR),
            ("right_knee", KNEE_BR),
            ("right_back_paw", HOOF_BR),
        ];
        let pairs = table
            .iter()
            .map(|(name, t)| (SchemaTag::Animal17.slot(name).expect("known name"), *t))
            .collect();
        SchemaMapping::new(SchemaTag::Animal17, SchemaTag::Zebra27, pairs).expect("default table is injective")
    }

    pub fn inverse(&self) -> SchemaMapping {
        SchemaMapping {
            source: self.target,
            target: self.source,
            pairs: self.pairs.iter().map(|&(s, t)| (t, s)).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text)
            .map_err(|e| Error::Mapping(format!("line {}: {e}", e.line())))?;
        let mut pairs = Vec::with_capacity(file.pairs.len());
        for (s, t) in &file.pairs {
            let si = file
                .source
                .slot(s)
                .ok_or_else(|| Error::Mapping(format!("`{s}` is not a {} keypoint", file.source.as_str())))?;
            let ti = file
                .target
                .slot(t)
                .ok_or_else(|| Error::Mapping(format!("`{t}` is not a {} keypoint", file.target.as_str())))?;
            pairs.push((si, ti));
        }
        SchemaMapping::new(file.source, file.target, pairs)
    }

    pub fn to_json(&self) -> String {
        let file = MappingFile {
            source: self.source,
            target: self.target,
            pairs: self
                .pairs
                .iter()
                .map(|&(s, t)| (self.source.names()[s].to_string(), self.target.names()[t].to_string()))
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("mapping serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Copies keypoints into the target schema; unmapped target slots are
/// unlabeled.
pub fn map_schema(record: &AnnotationRecord, mapping: &SchemaMapping) -> Result<AnnotationRecord> {
    if record.schema != mapping.source {
        return Err(Error::Mapping(format!(
            "record uses {} but the mapping expects {}",
            record.schema.as_str(),
            mapping.source.as_str()
        )));
    }
    if record.keypoints.len() != record.schema.slot_count() {
        return Err(Error::Mapping("record slot count does not match its schema".into()));
    }
    let mut keypoints = vec![Keypoint::UNLABELED; mapping.target.slot_count()];
    for &(s, t) in &mapping.pairs {
        keypoints[t] = record.keypoints[s];
    }
    Ok(AnnotationRecord {
        schema: mapping.target,
        keypoints,
        ..record.clone()
    })
}

/// Subset of keypoint slots that take part in an evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointSubset {
    pub schema: SchemaTag,
    include: Vec<bool>,
}

impl KeypointSubset {
    pub fn all(schema: SchemaTag) -> Self {
        KeypointSubset {
            schema,
            include: vec![true; schema.slot_count()],
        }
    }

    /// Zebra layout without the four thighs and the tail start.
    pub fn filtered_zebra27() -> Self {
        let mut s = Self::all(SchemaTag::Zebra27);
        for slot in [
            zebra27::THIGH_FL,
            zebra27::THIGH_FR,
            zebra27::THIGH_BR,
            zebra27::THIGH_BL,
            zebra27::TAIL_START,
        ] {
            s.include[slot] = false;
        }
        s
    }

    pub fn excluding(schema: SchemaTag, slots: &[usize]) -> Self {
        let mut s = Self::all(schema);
        for &slot in slots {
            if slot < s.include.len() {
                s.include[slot] = false;
            }
        }
        s
    }

    pub fn contains(&self, slot: usize) -> bool {
        self.include.get(slot).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.include.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
