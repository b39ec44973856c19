//! Dataset manifests: COCO I/O in canonical form, video-aware splitting,
//! merging, YOLO export and box-size statistics.
//!
//! Canonical JSON is what [`DatasetManifest::to_canonical_json`] writes:
//! object keys sorted, two-space indentation, LF line endings with a final
//! newline, integers for ids/flags, and the shortest round-tripping decimal
//! for every other number. Saving a loaded canonical file reproduces it
//! byte for byte.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{InstanceId, PixelBox};
use crate::keypoints::{map_schema, AnnotationRecord, Keypoint, SchemaMapping, SchemaTag, Segmentation, Visibility};

/// Links a generated crop back to the frame and instance it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropProvenance {
    pub source_image_id: u64,
    pub target_instance_id: InstanceId,
    pub crop_region: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub video_id: Option<String>,
    pub split: Option<String>,
    /// 16-bit instance mask, relative to the dataset root.
    pub mask_file: Option<String>,
    pub provenance: Option<CropProvenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub schema: SchemaTag,
    pub category: String,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Default, Deserialize)]
struct RawFile {
    #[serde(default)]
    info: Option<RawInfo>,
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<RawCategory>,
}

#[derive(Debug, Default, Deserialize)]
struct RawInfo {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    schema: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: u64,
    #[serde(default)]
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    video_id: Option<Value>,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    mask_file: Option<String>,
    #[serde(default)]
    provenance: Option<CropProvenance>,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    image_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    keypoints: Vec<f64>,
    #[serde(default)]
    instance_id: Option<InstanceId>,
    #[serde(default)]
    segmentation: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct RawCategory {
    #[serde(default)]
    name: String,
    #[serde(default)]
    keypoints: Vec<String>,
}

fn parse_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn segmentation_from_json(v: Option<Value>) -> Segmentation {
    match v {
        None | Some(Value::Null) => Segmentation::None,
        Some(Value::Array(a)) if a.is_empty() => Segmentation::None,
        Some(Value::Object(o)) if o.len() == 1 && o.get("mask_id").and_then(Value::as_u64).is_some() => {
            Segmentation::MaskId(o["mask_id"].as_u64().unwrap() as InstanceId)
        }
        Some(Value::Array(a)) => {
            let polys: Option<Vec<Vec<f64>>> = a
                .iter()
                .map(|p| p.as_array().and_then(|xs| xs.iter().map(Value::as_f64).collect()))
                .collect();
            match polys {
                Some(p) => Segmentation::Polygons(p),
                None => Segmentation::Raw(Value::Array(a)),
            }
        }
        Some(other) => Segmentation::Raw(other),
    }
}

fn segmentation_to_json(s: &Segmentation) -> Value {
    match s {
        Segmentation::None => json!([]),
        Segmentation::MaskId(id) => json!({ "mask_id": id }),
        Segmentation::Polygons(p) => json!(p),
        Segmentation::Raw(v) => v.clone(),
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn box_json(b: &PixelBox) -> Value {
    Value::Array(vec![num(b.x), num(b.y), num(b.w), num(b.h)])
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, schema: SchemaTag) -> Self {
        DatasetManifest {
            name: name.into(),
            schema,
            category: "zebra".into(),
            images: Vec::new(),
            annotations: Vec::new(),
        }
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_index(&self) -> HashMap<u64, &ImageEntry> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }

    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&AnnotationRecord>> {
        let mut m: BTreeMap<u64, Vec<&AnnotationRecord>> = BTreeMap::new();
        for a in &self.annotations {
            m.entry(a.image_id).or_default().push(a);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::Manifest(format!("duplicate image id {}", img.id)));
            }
        }
        for (k, a) in self.annotations.iter().enumerate() {
            if !ids.contains(&a.image_id) {
                return Err(Error::DanglingReference {
                    annotation_index: k,
                    image_id: a.image_id,
                });
            }
            if a.schema != self.schema {
                return Err(Error::Schema(format!(
                    "annotation {k} uses {} in a {} manifest",
                    a.schema.as_str(),
                    self.schema.as_str()
                )));
            }
            a.validate()
                .map_err(|e| Error::Manifest(format!("annotation {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> Value {
        let keypoint_names: Vec<&str> = self.schema.names().to_vec();
        let flip: Vec<[usize; 2]> = self.schema.flip_pairs().into_iter().map(|(a, b)| [a, b]).collect();
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|img| {
                let mut o = json!({
                    "id": img.id,
                    "file_name": img.file_name,
                    "width": img.width,
                    "height": img.height,
                });
                let m = o.as_object_mut().unwrap();
                if let Some(v) = &img.video_id {
                    m.insert("video_id".into(), json!(v));
                }
                if let Some(s) = &img.split {
                    m.insert("split".into(), json!(s));
                }
                if let Some(f) = &img.mask_file {
                    m.insert("mask_file".into(), json!(f));
                }
                if let Some(p) = &img.provenance {
                    m.insert(
                        "provenance".into(),
                        json!({
                            "source_image_id": p.source_image_id,
                            "target_instance_id": p.target_instance_id,
                            "crop_region": box_json(&p.crop_region),
                        }),
                    );
                }
                o
            })
            .collect();
        let annotations: Vec<Value> = self
            .annotations
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let mut flat = Vec::with_capacity(a.keypoints.len() * 3);
                for kp in &a.keypoints {
                    flat.push(num(kp.u));
                    flat.push(num(kp.v));
                    flat.push(json!(kp.visibility as u8));
                }
                let mut o = json!({
                    "id": k + 1,
                    "image_id": a.image_id,
                    "category_id": 1,
                    "bbox": box_json(&a.bbox),
                    "area": num(a.bbox.area()),
                    "iscrowd": 0,
                    "instance_id": a.instance_id,
                    "segmentation": segmentation_to_json(&a.segmentation),
                });
                if self.schema != SchemaTag::Boxes {
                    let m = o.as_object_mut().unwrap();
                    m.insert("keypoints".into(), Value::Array(flat));
                    m.insert("num_keypoints".into(), json!(a.labeled_count()));
                }
                o
            })
            .collect();
        json!({
            "info": { "name": self.name, "schema": self.schema.as_str() },
            "images": images,
            "annotations": annotations,
            "categories": [{
                "id": 1,
                "name": self.category,
                "supercategory": "animal",
                "keypoints": keypoint_names,
                "flip_pairs": flip,
                "skeleton": [],
            }],
        })
    }

    pub fn to_canonical_json(&self) -> String {
        // serde_json's default map is ordered, so keys come out sorted.
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses COCO JSON; `origin` is only used in error messages and as the
    /// fallback dataset name.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let raw: RawFile = serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        let info = raw.info.unwrap_or_default();
        let schema = match &info.schema {
            Some(s) => SchemaTag::parse(s)?,
            None => match raw.categories.first().map(|c| c.keypoints.len()).unwrap_or(0) {
                0 => SchemaTag::Boxes,
                17 => SchemaTag::Animal17,
                27 => SchemaTag::Zebra27,
                n => return Err(Error::Schema(format!("categories declare {n} keypoints; expected 0, 17 or 27"))),
            },
        };
        if let Some(cat) = raw.categories.first() {
            if !cat.keypoints.is_empty() && cat.keypoints.len() != schema.slot_count() {
                return Err(Error::Schema(format!(
                    "category declares {} keypoints but schema {} has {}",
                    cat.keypoints.len(),
                    schema.as_str(),
                    schema.slot_count()
                )));
            }
        }
        let name = info.name.unwrap_or_else(|| {
            origin
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let category = raw
            .categories
            .first()
            .map(|c| c.name.clone())
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| "zebra".into());

        let images = raw
            .images
            .into_iter()
            .map(|r| ImageEntry {
                id: r.id,
                file_name: r.file_name,
                width: r.width,
                height: r.height,
                video_id: r.video_id.and_then(|v| match v {
                    Value::String(s) => Some(s),
                    Value::Null => None,
                    other => Some(other.to_string()),
                }),
                split: r.split,
                mask_file: r.mask_file,
                provenance: r.provenance,
            })
            .collect();

        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for (k, a) in raw.annotations.into_iter().enumerate() {
            let slots = schema.slot_count();
            let keypoints = if schema == SchemaTag::Boxes {
                Vec::new()
            } else {
                if a.keypoints.len() != 3 * slots {
                    return Err(Error::Schema(format!(
                        "annotation {k} has {} keypoint values, expected {}",
                        a.keypoints.len(),
                        3 * slots
                    )));
                }
                a.keypoints
                    .chunks_exact(3)
                    .map(|c| {
                        let vis = Visibility::from_flag(c[2])
                            .map_err(|e| Error::Schema(format!("annotation {k}: {e}")))?;
                        Ok(Keypoint::new(c[0], c[1], vis))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            annotations.push(AnnotationRecord {
                image_id: a.image_id,
                instance_id: a.instance_id.unwrap_or(0),
                bbox: PixelBox::from(a.bbox),
                schema,
                keypoints,
                segmentation: segmentation_from_json(a.segmentation),
            });
        }

        let m = DatasetManifest {
            name,
            schema,
            category,
            images,
            annotations,
        };
        m.validate()?;
        Ok(m)
    }
}

pub fn load_coco(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_json_str(&text, path)
}

pub fn save_coco(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, manifest.to_canonical_json()).map_err(|e| Error::io(path, e))
}

/// YOLO lines (`class cx cy w h`, normalized, six decimals) for one image.
pub fn yolo_lines(image: &ImageEntry, annotations: &[&AnnotationRecord]) -> Result<Vec<String>> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::Conversion(format!("image {} has a zero dimension", image.id)));
    }
    let (w, h) = (image.width as f64, image.height as f64);
    Ok(annotations
        .iter()
        .map(|a| {
            let b = a.bbox.clamp_to(w, h);
            let cx = (b.x + b.w / 2.0) / w;
            let cy = (b.y + b.h / 2.0) / h;
            format!("0 {cx:.6} {cy:.6} {:.6} {:.6}", b.w / w, b.h / h)
        })
        .collect())
}

/// Writes one label file per image, mirroring the image's relative path with
/// a `.txt` extension.
pub fn convert_yolo(manifest: &DatasetManifest, out_dir: &Path) -> Result<Vec<PathBuf>> {
    manifest.validate()?;
    let by_image = manifest.annotations_by_image();
    let mut written = Vec::with_capacity(manifest.images.len());
    for img in &manifest.images {
        let anns = by_image.get(&img.id).cloned().unwrap_or_default();
        let lines = yolo_lines(img, &anns)?;
        // Only plain components, so labels stay under `out_dir`.
        let rel: PathBuf = Path::new(&img.file_name)
            .components()
            .filter_map(|c| match c {
                std::path::Component::Normal(s) => Some(s),
                _ => None,
            })
            .collect();
        let rel = if rel.as_os_str().is_empty() {
            PathBuf::from(format!("{}.txt", img.id))
        } else {
            rel.with_extension("txt")
        };
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut body = lines.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub warnings: Vec<String>,
}

fn subset(m: &DatasetManifest, name: String, split: &str, keep: &HashSet<u64>) -> DatasetManifest {
    DatasetManifest {
        name,
        schema: m.schema,
        category: m.category.clone(),
        images: m
            .images
            .iter()
            .filter(|i| keep.contains(&i.id))
            .map(|i| ImageEntry {
                split: Some(split.to_string()),
                ..i.clone()
            })
            .collect(),
        annotations: m.annotations.iter().filter(|a| keep.contains(&a.image_id)).cloned().collect(),
    }
}

/// Partitions whole videos: videos are shuffled with `seed` (then ordered
/// largest first when `largest_first` is set) and handed to the training
/// side until it holds at least `ratio` of all images. Images without a
/// video id count as single-frame videos.
pub fn split_by_video(manifest: &DatasetManifest, ratio: f64, seed: u64, largest_first: bool) -> Result<SplitOutcome> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut videos: HashMap<String, Vec<u64>> = HashMap::new();
    for img in &manifest.images {
        let key = match &img.video_id {
            Some(v) => format!("v:{v}"),
            None => format!("i:{}", img.id),
        };
        let entry = videos.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(img.id);
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if largest_first {
        order.sort_by_key(|k| std::cmp::Reverse(videos[k].len()));
    }

    let target = ratio * manifest.images.len() as f64;
    let mut train = HashSet::new();
    let mut val = HashSet::new();
    for key in &order {
        let side = if (train.len() as f64) < target { &mut train } else { &mut val };
        side.extend(videos[key].iter().copied());
    }
    let mut warnings = Vec::new();
    if val.is_empty() && !manifest.images.is_empty() {
        let msg = format!(
            "{}: validation split is empty ({} video(s) cannot be divided at ratio {ratio})",
            manifest.name,
            order.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(SplitOutcome {
        train: subset(manifest, format!("{}_train", manifest.name), "train", &train),
        val: subset(manifest, format!("{}_val", manifest.name), "val", &val),
        warnings,
    })
}

type RecordConverter<'a> = Box<dyn Fn(&AnnotationRecord) -> Result<AnnotationRecord> + 'a>;

/// Concatenates manifests under fresh image ids (`1..`) and a `+`-joined
/// name. With `target` set, manifests in another schema are converted via
/// the matching entry of `mappings` (or stripped to boxes when the target
/// is [`SchemaTag::Boxes`]).
pub fn merge(manifests: &[&DatasetManifest], target: Option<SchemaTag>, mappings: &[SchemaMapping]) -> Result<DatasetManifest> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::Merge("nothing to merge".into()))?;
    let schema = match target {
        Some(t) => t,
        None => {
            let mut with_anns = manifests.iter().filter(|m| !m.annotations.is_empty()).map(|m| m.schema);
            let s = with_anns.next().unwrap_or(first.schema);
            if let Some(other) = with_anns.find(|o| *o != s) {
                return Err(Error::Merge(format!(
                    "incompatible schemas {} and {} with no target schema",
                    s.as_str(),
                    other.as_str()
                )));
            }
            s
        }
    };

    let mut out = DatasetManifest {
        name: manifests.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+"),
        schema,
        category: first.category.clone(),
        images: Vec::new(),
        annotations: Vec::new(),
    };
    let mut next_id = 1u64;
    for m in manifests {
        let convert: RecordConverter<'_> = if m.schema == schema || m.annotations.is_empty() {
            Box::new(|a: &AnnotationRecord| Ok(AnnotationRecord { schema, ..a.clone() }))
        } else if schema == SchemaTag::Boxes {
            Box::new(|a: &AnnotationRecord| {
                Ok(AnnotationRecord {
                    schema,
                    keypoints: Vec::new(),
                    ..a.clone()
                })
            })
        } else {
            let mapping = mappings
                .iter()
                .find(|mp| mp.source == m.schema && mp.target == schema)
                .ok_or_else(|| {
                    Error::Merge(format!(
                        "{} uses {} and no mapping to {} was supplied",
                        m.name,
                        m.schema.as_str(),
                        schema.as_str()
                    ))
                })?;
            Box::new(move |a: &AnnotationRecord| map_schema(a, mapping))
        };

        let mut remap = HashMap::with_capacity(m.images.len());
        for img in &m.images {
            remap.insert(img.id, next_id);
            next_id += 1;
        }
        for img in &m.images {
            let mut e = img.clone();
            e.id = remap[&img.id];
            if let Some(p) = e.provenance.as_mut() {
                if let Some(&new_src) = remap.get(&p.source_image_id) {
                    p.source_image_id = new_src;
                }
            }
            out.images.push(e);
        }
        for a in &m.annotations {
            let mut rec = convert(a)?;
            rec.image_id = *remap.get(&a.image_id).ok_or(Error::DanglingReference {
                annotation_index: 0,
                image_id: a.image_id,
            })?;
            out.annotations.push(rec);
        }
    }
    Ok(out)
}

/// File paths that occur on more than one image, sorted.
pub fn duplicate_file_paths(manifest: &DatasetManifest) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for img in &manifest.images {
        *counts.entry(img.file_name.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(p, _)| p.to_string())
        .collect()
}

/// Sorted per-annotation box width and height ratios w.r.t. image size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatioCdf {
    pub width: Vec<f64>,
    pub height: Vec<f64>,
}

impl RatioCdf {
    pub fn len(&self) -> usize {
        self.width.len()
    }

    pub fn is_empty(&self) -> bool {
        self.width.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "cdf", "width_ratio", "height_ratio"])?;
        let n = self.len();
        for k in 0..n {
            w.write_record(&[
                (k + 1).to_string(),
                format!("{:.6}", (k + 1) as f64 / n as f64),
                format!("{:.6}", self.width[k]),
                format!("{:.6}", self.height[k]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn bbox_ratio_cdf(manifest: &DatasetManifest) -> RatioCdf {
    bbox_ratio_cdf_where(manifest, |_| true)
}

/// Same as [`bbox_ratio_cdf`] restricted to images accepted by `keep`.
pub fn bbox_ratio_cdf_where(manifest: &DatasetManifest, keep: impl Fn(&ImageEntry) -> bool) -> RatioCdf {
    let images = manifest.image_index();
    let mut cdf = RatioCdf::default();
    for a in &manifest.annotations {
        let Some(img) = images.get(&a.image_id) else { continue };
        if !keep(img) || img.width == 0 || img.height == 0 {
            continue;
        }
        cdf.width.push(a.bbox.w / img.width as f64);
        cdf.height.push(a.bbox.h / img.height as f64);
    }
    cdf.width.sort_by(f64::total_cmp);
    cdf.height.sort_by(f64::total_cmp);
    cdf
}

/// Nearest-rank quantile of an ascending sample.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dominance {
    pub quantiles_checked: usize,
    pub violations: usize,
    pub strict: usize,
}

impl Dominance {
    pub fn holds(&self) -> bool {
        self.quantiles_checked > 0 && self.violations == 0
    }
}

/// Compares quantiles on the grid `k / steps` (k = 1..steps): counts where
/// `larger` falls below `smaller` (violations) and where it is strictly
/// above. A curve whose quantiles are all at least as large has its CDF
/// at or below the other one.
pub fn cdf_dominance(larger: &[f64], smaller: &[f64], steps: usize) -> Dominance {
    let mut d = Dominance {
        quantiles_checked: 0,
        violations: 0,
        strict: 0,
    };
    if larger.is_empty() || smaller.is_empty() {
        return d;
    }
    for k in 1..=steps {
        let p = k as f64 / steps as f64;
        let (a, b) = (quantile(larger, p).unwrap(), quantile(smaller, p).unwrap());
        d.quantiles_checked += 1;
        if a < b {
            d.violations += 1;
        } else if a > b {
            d.strict += 1;
        }
    }
    d
}

/// Table-style bookkeeping for one manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub schema: String,
    pub images: usize,
    pub annotations: usize,
    pub generated_crops: usize,
    pub videos: usize,
    pub per_split: BTreeMap<String, usize>,
}

pub fn summarize(manifest: &DatasetManifest) -> DatasetSummary {
    let mut per_split = BTreeMap::new();
    let mut videos = HashSet::new();
    for img in &manifest.images {
        *per_split
            .entry(img.split.clone().unwrap_or_else(|| "unsplit".into()))
            .or_insert(0) += 1;
        match &img.video_id {
            Some(v) => videos.insert(format!("v:{v}")),
            None => videos.insert(format!("i:{}", img.id)),
        };
    }
    DatasetSummary {
        name: manifest.name.clone(),
        schema: manifest.schema.as_str().into(),
        images: manifest.images.len(),
        annotations: manifest.annotations.len(),
        generated_crops: manifest.images.iter().filter(|i| i.provenance.is_some()).count(),
        videos: videos.len(),
        per_split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(id: u64, video: Option<&str>) -> ImageEntry {
        ImageEntry {
            id,
            file_name: format!("frames/{id:05}.png"),
            width: 1920,
            height: 1080,
            video_id: video.map(String::from),
            ..Default::default()
        }
    }

    fn record(image_id: u64, bbox: PixelBox) -> AnnotationRecord {
        AnnotationRecord {
            image_id,
            instance_id: 1,
            bbox,
            schema: SchemaTag::Zebra27,
            keypoints: (0..27)
                .map(|k| Keypoint::new(bbox.x + k as f64 * 0.5, bbox.y + 1.25, if k % 4 == 0 { Visibility::Unlabeled } else { Visibility::Visible }))
                .collect(),
            segmentation: Segmentation::MaskId(1),
        }
    }

    fn fixture() -> DatasetManifest {
        let mut m = DatasetManifest::new("SC", SchemaTag::Zebra27);
        for id in 1..=3 {
            m.images.push(image(id, Some("clip_a")));
        }
        m.images[2].provenance = Some(CropProvenance {
            source_image_id: 1,
            target_instance_id: 1,
            crop_region: PixelBox::new(10.0, 20.0, 300.0, 200.0),
        });
        m.annotations.push(record(1, PixelBox::new(100.0, 200.0, 50.5, 40.0)));
        m.annotations.push(record(3, PixelBox::new(0.0, 0.0, 1920.0, 1080.0)));
        m
    }

    #[test]
    fn empty_manifest_has_empty_arrays() {
        let m = DatasetManifest::new("empty", SchemaTag::Boxes);
        let v: Value = serde_json::from_str(&m.to_canonical_json()).unwrap();
        assert_eq!(v["images"], json!([]));
        assert_eq!(v["annotations"], json!([]));
        assert_eq!(v["categories"][0]["keypoints"], json!([]));
        let back = DatasetManifest::from_json_str(&m.to_canonical_json(), Path::new("e.json")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let m = fixture();
        let text = m.to_canonical_json();
        let back = DatasetManifest::from_json_str(&text, Path::new("x.json")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_canonical_json(), text);
        assert!(text.ends_with("}\n") && !text.contains('\r'));
    }

    #[test]
    fn dangling_reference_is_reported() {
        let mut m = fixture();
        m.annotations.push(record(99, PixelBox::new(0.0, 0.0, 5.0, 5.0)));
        let text = serde_json::to_string(&m.to_json_value()).unwrap();
        match DatasetManifest::from_json_str(&text, Path::new("x.json")) {
            Err(Error::DanglingReference { annotation_index, image_id }) => {
                assert_eq!((annotation_index, image_id), (2, 99));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = DatasetManifest::from_json_str("{\n  \"images\": [\n    {\"id\": }\n  ]\n}", Path::new("bad.json")).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 12)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keypoint_count_mismatch_is_a_schema_error() {
        let mut v = fixture().to_json_value();
        v["annotations"][0]["keypoints"] = json!([1.0, 2.0, 2]);
        let text = serde_json::to_string(&v).unwrap();
        assert!(matches!(DatasetManifest::from_json_str(&text, Path::new("x")), Err(Error::Schema(_))));
    }

    #[test]
    fn foreign_coco_file_loads() {
        let text = r#"{"images":[{"id":5,"file_name":"a.jpg","width":640,"height":480,"video_id":12}],
            "annotations":[{"id":77,"image_id":5,"category_id":1,"bbox":[1,2,3,4],"area":12,"iscrowd":0,
              "segmentation":[[1,2,3,4,5,6]],
              "keypoints":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,10,20,2]}],
            "categories":[{"id":1,"name":"zebra","keypoints":["left_eye","right_eye","nose","neck","root_of_tail","left_shoulder","left_elbow","left_front_paw","right_shoulder","right_elbow","right_front_paw","left_hip","left_knee","left_back_paw","right_hip","right_knee","right_back_paw"]}]}"#;
        let m = DatasetManifest::from_json_str(text, Path::new("/data/a36.json")).unwrap();
        assert_eq!(m.name, "a36");
        assert_eq!(m.schema, SchemaTag::Animal17);
        assert_eq!(m.images[0].video_id.as_deref(), Some("12"));
        assert_eq!(m.annotations[0].keypoints[16], Keypoint::new(10.0, 20.0, Visibility::Visible));
        assert_eq!(m.annotations[0].segmentation, Segmentation::Polygons(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]));
    }

    #[test]
    fn yolo_examples() {
        let img = image(1, None);
        let full = record(1, PixelBox::new(0.0, 0.0, 1920.0, 1080.0));
        assert_eq!(yolo_lines(&img, &[&full]).unwrap(), vec!["0 0.500000 0.500000 1.000000 1.000000"]);
        // center (480 + 480, 270 + 270) / (1920, 1080) = (0.5, 0.5); size 960/1920, 540/1080
        let half = record(1, PixelBox::new(480.0, 270.0, 960.0, 540.0));
        assert_eq!(yolo_lines(&img, &[&half]).unwrap(), vec!["0 0.500000 0.500000 0.500000 0.500000"]);
        assert!(yolo_lines(&img, &[]).unwrap().is_empty());
        let zero = ImageEntry { width: 0, ..img };
        assert!(matches!(yolo_lines(&zero, &[]), Err(Error::Conversion(_))));
    }

    #[test]
    fn yolo_files_are_written_per_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture();
        let files = convert_yolo(&m, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(std::fs::read_to_string(&files[1]).unwrap(), "");
        assert_eq!(std::fs::read_to_string(&files[2]).unwrap(), "0 0.500000 0.500000 1.000000 1.000000\n");
        assert!(files[0].ends_with("frames/00001.txt"));
        let mut up = m.clone();
        up.images[0].file_name = "../../elsewhere/a.png".into();
        let files = convert_yolo(&up, dir.path()).unwrap();
        assert_eq!(files[0], dir.path().join("elsewhere/a.txt"));
    }

    fn videos(sizes: &[usize]) -> DatasetManifest {
        let mut m = DatasetManifest::new("A36", SchemaTag::Zebra27);
        let mut id = 1;
        for (v, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                m.images.push(image(id, Some(&format!("vid{v}"))));
                m.annotations.push(record(id, PixelBox::new(1.0, 1.0, 10.0, 10.0)));
                id += 1;
            }
        }
        m
    }

    fn video_set(m: &DatasetManifest) -> HashSet<String> {
        m.images.iter().filter_map(|i| i.video_id.clone()).collect()
    }

    #[test]
    fn ten_even_videos_split_eighty_twenty() {
        let m = videos(&[10; 10]);
        for seed in 0..5 {
            let s = split_by_video(&m, 0.8, seed, false).unwrap();
            assert_eq!((s.train.images.len(), s.val.images.len()), (80, 20));
            assert_eq!((video_set(&s.train).len(), video_set(&s.val).len()), (8, 2));
            assert!(s.warnings.is_empty());
        }
    }

    #[test]
    fn single_video_goes_to_train_with_warning() {
        let m = videos(&[12]);
        let s = split_by_video(&m, 0.8, 3, false).unwrap();
        assert_eq!((s.train.images.len(), s.val.images.len()), (12, 0));
        assert_eq!(s.warnings.len(), 1);
    }

    /// Re-implements the assignment rule over video sizes only.
    fn greedy_oracle(sizes_in_order: &[usize], ratio: f64) -> usize {
        let total: usize = sizes_in_order.iter().sum();
        let mut train = 0;
        for &s in sizes_in_order {
            if (train as f64) < ratio * total as f64 {
                train += s;
            }
        }
        train
    }

    #[test]
    fn uneven_videos_largest_first() {
        let m = videos(&[50, 30, 20]);
        assert_eq!(greedy_oracle(&[50, 30, 20], 0.8), 80);
        for seed in 0..10 {
            let s = split_by_video(&m, 0.8, seed, true).unwrap();
            assert_eq!(s.train.images.len(), 80);
            assert!(video_set(&s.train).is_disjoint(&video_set(&s.val)));
        }
    }

    #[test]
    fn uneven_videos_shuffled_follow_the_oracle() {
        let m = videos(&[50, 30, 20]);
        for seed in 0..10 {
            let s = split_by_video(&m, 0.8, seed, false).unwrap();
            // Recover the shuffled order from the rng directly.
            let mut order = vec![50usize, 30, 20];
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(s.train.images.len(), greedy_oracle(&order, 0.8));
        }
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let m = videos(&[3]);
        for r in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(split_by_video(&m, r, 0, false), Err(Error::Config(_))));
        }
    }

    #[test]
    fn images_without_video_are_singletons() {
        let mut m = videos(&[]);
        for id in 1..=10 {
            m.images.push(image(id, None));
        }
        let s = split_by_video(&m, 0.8, 1, false).unwrap();
        assert_eq!((s.train.images.len(), s.val.images.len()), (8, 2));
    }

    #[test]
    fn merge_with_empty() {
        let a = fixture();
        let empty = DatasetManifest::new("empty", SchemaTag::Zebra27);
        let m = merge(&[&a, &empty], None, &[]).unwrap();
        assert_eq!(m.name, "SC+empty");
        assert_eq!(m.images.len(), a.images.len());
        assert_eq!(m.annotations, a.annotations);
        m.validate().unwrap();
    }

    #[test]
    fn merge_keeps_duplicate_paths_under_new_ids() {
        let a = fixture();
        let m = merge(&[&a, &a], None, &[]).unwrap();
        assert_eq!(m.images.len(), 6);
        assert_eq!(m.annotations.len(), 4);
        m.validate().unwrap();
        assert_eq!(duplicate_file_paths(&m).len(), 3);
        // Provenance in the second copy points at the second copy's source.
        assert_eq!(m.images[5].provenance.unwrap().source_image_id, 4);
    }

    #[test]
    fn merge_schema_rules() {
        let a = fixture();
        let mut b = DatasetManifest::new("A10", SchemaTag::Animal17);
        b.images.push(image(1, None));
        b.annotations.push(AnnotationRecord {
            image_id: 1,
            instance_id: 0,
            bbox: PixelBox::new(0.0, 0.0, 4.0, 4.0),
            schema: SchemaTag::Animal17,
            keypoints: vec![Keypoint::new(1.0, 1.0, Visibility::Visible); 17],
            segmentation: Segmentation::None,
        });
        assert!(matches!(merge(&[&a, &b], None, &[]), Err(Error::Merge(_))));
        assert!(matches!(merge(&[&a, &b], Some(SchemaTag::Zebra27), &[]), Err(Error::Merge(_))));
        let m = merge(&[&a, &b], Some(SchemaTag::Zebra27), &[SchemaMapping::animal17_to_zebra27()]).unwrap();
        assert_eq!(m.schema, SchemaTag::Zebra27);
        assert_eq!(m.annotations[2].labeled_count(), 17);
        m.validate().unwrap();
        let boxes = merge(&[&a, &b], Some(SchemaTag::Boxes), &[]).unwrap();
        assert!(boxes.annotations.iter().all(|r| r.keypoints.is_empty()));
        boxes.validate().unwrap();
    }

    #[test]
    fn merged_counts_add_up() {
        let mut a = DatasetManifest::new("SC", SchemaTag::Boxes);
        a.images = (1..=14401).map(|i| image(i, None)).collect();
        let mut b = DatasetManifest::new("crops", SchemaTag::Boxes);
        b.images = (1..=8783).map(|i| image(i, None)).collect();
        assert_eq!(merge(&[&a, &b], None, &[]).unwrap().images.len(), 23184);
    }

    #[test]
    fn ratio_cdf_examples() {
        let mut m = fixture();
        m.annotations.clear();
        m.annotations.push(record(1, PixelBox::new(0.0, 0.0, 1920.0, 1080.0)));
        let c = bbox_ratio_cdf(&m);
        assert_eq!((c.width.clone(), c.height.clone()), (vec![1.0], vec![1.0]));
        m.annotations.clear();
        m.annotations.push(record(1, PixelBox::new(0.0, 0.0, 1440.0, 810.0)));
        m.annotations.push(record(2, PixelBox::new(0.0, 0.0, 480.0, 270.0)));
        let c = bbox_ratio_cdf(&m);
        assert_eq!(c.width, vec![0.25, 0.75]);
        assert_eq!(c.height, vec![0.25, 0.75]);
    }

    #[test]
    fn dominance_detects_shift() {
        let small = [0.1, 0.2, 0.3, 0.4];
        let big = [0.2, 0.3, 0.4, 0.5];
        let d = cdf_dominance(&big, &small, 100);
        assert!(d.holds() && d.strict == 100);
        assert!(!cdf_dominance(&small, &big, 100).holds());
        assert!(!cdf_dominance(&[], &small, 100).holds());
    }

    proptest! {
        #[test]
        fn split_partitions_images_and_videos(
            sizes in proptest::collection::vec(1usize..8, 1..12),
            seed in any::<u64>(),
            ratio in 0.05f64..0.95,
            largest in any::<bool>(),
        ) {
            let m = videos(&sizes);
            let s = split_by_video(&m, ratio, seed, largest).unwrap();
            let tr: HashSet<u64> = s.train.images.iter().map(|i| i.id).collect();
            let va: HashSet<u64> = s.val.images.iter().map(|i| i.id).collect();
            prop_assert!(tr.is_disjoint(&va));
            prop_assert_eq!(tr.len() + va.len(), m.images.len());
            prop_assert!(video_set(&s.train).is_disjoint(&video_set(&s.val)));
            prop_assert_eq!(s.train.annotations.len() + s.val.annotations.len(), m.annotations.len());
        }

        #[test]
        fn canonical_json_round_trips(
            boxes in proptest::collection::vec((0.0f64..1900.0, 0.0f64..1000.0, 0.5f64..300.0, 0.5f64..300.0), 0..6),
        ) {
            let mut m = DatasetManifest::new("P", SchemaTag::Zebra27);
            m.images.push(image(1, Some("v")));
            for b in boxes {
                m.annotations.push(record(1, PixelBox::new(b.0, b.1, b.2, b.3)));
            }
            let text = m.to_canonical_json();
            let back = DatasetManifest::from_json_str(&text, Path::new("p.json")).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_canonical_json(), text);
        }

        #[test]
        fn yolo_values_stay_normalized(x in -500.0f64..2500.0, y in -500.0f64..1500.0, w in 0.1f64..3000.0, h in 0.1f64..3000.0) {
            let img = image(1, None);
            let r = record(1, PixelBox::new(x, y, w, h));
            for line in yolo_lines(&img, &[&r]).unwrap() {
                for v in line.split(' ').skip(1) {
                    let v: f64 = v.parse().unwrap();
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
