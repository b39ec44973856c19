//! Targeted crop-and-scale augmentation: large instances are cut out with a
//! random margin and blown up to full frame size, and labels for the new
//! frame are regenerated from the upscaled instance mask.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datasets::{CropProvenance, DatasetManifest, ImageEntry};
use crate::error::{Error, Result};
use crate::geometry::{InstanceId, InstanceMask, PixelBox};
use crate::keypoints::{AnnotationRecord, Keypoint, SchemaTag, Segmentation, Visibility};
use crate::mockrender::read_mask_png;
use crate::scenelayout::derive_seed;

/// Frames whose masks are decoded at once by [`augment_dataset_with`].
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Strict lower bound on a target's box area, px².
    pub area_threshold: f64,
    /// Upper bound of each side's integer margin, px.
    pub max_offset: u32,
    pub output_size: (u32, u32),
    pub min_visible_pixels: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            area_threshold: 5000.0,
            max_offset: 150,
            output_size: (1920, 1080),
            min_visible_pixels: 16,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_threshold > 0.0 && self.area_threshold.is_finite()) {
            return Err(Error::Config(format!("area threshold {} must be positive", self.area_threshold)));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::Config("output size must be nonzero".into()));
        }
        Ok(())
    }
}

/// Records whose box area exceeds the threshold, in input order.
pub fn select_targets<'a>(records: &[&'a AnnotationRecord], cfg: &AugmentConfig) -> Vec<&'a AnnotationRecord> {
    records
        .iter()
        .copied()
        .filter(|r| r.bbox.area() > cfg.area_threshold)
        .collect()
}

/// Integer region around `bbox`: its outward-rounded extent grown by four
/// independent offsets in `[0, max_offset]` (left, top, right, bottom draw
/// order), clamped to the frame. `bbox` must intersect the frame.
pub fn crop_region(bbox: &PixelBox, frame_size: (u32, u32), max_offset: u32, rng: &mut impl Rng) -> PixelBox {
    let (fw, fh) = (frame_size.0 as f64, frame_size.1 as f64);
    let mut off = [0f64; 4];
    for o in &mut off {
        *o = rng.random_range(0..=max_offset) as f64;
    }
    let x0 = (bbox.x.floor() - off[0]).clamp(0.0, fw);
    let y0 = (bbox.y.floor() - off[1]).clamp(0.0, fh);
    let x1 = (bbox.right().ceil() + off[2]).clamp(0.0, fw);
    let y1 = (bbox.bottom().ceil() + off[3]).clamp(0.0, fh);
    PixelBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Maps source coordinates inside `region` onto an output frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub region: PixelBox,
    pub output_size: (u32, u32),
}

impl CropTransform {
    pub fn scale(&self) -> (f64, f64) {
        (
            self.output_size.0 as f64 / self.region.w,
            self.output_size.1 as f64 / self.region.h,
        )
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let (sx, sy) = self.scale();
        ((u - self.region.x) * sx, (v - self.region.y) * sy)
    }

    /// Nearest-neighbour resample: output pixel centers pulled back into the
    /// region.
    pub fn resample_mask(&self, mask: &InstanceMask) -> InstanceMask {
        let (w, h) = self.output_size;
        let pull = |n: u32, origin: f64, extent: f64, limit: u32| -> Vec<u32> {
            (0..n)
                .map(|i| {
                    let s = origin + ((i as f64 + 0.5) * extent / n as f64).floor();
                    (s as u32).min(limit - 1)
                })
                .collect()
        };
        let xs = pull(w, self.region.x, self.region.w, mask.width());
        let ys = pull(h, self.region.y, self.region.h, mask.height());
        let mut ids = Vec::with_capacity(w as usize * h as usize);
        for &y in &ys {
            for &x in &xs {
                ids.push(mask.get(x, y));
            }
        }
        InstanceMask::new(w, h, ids).expect("dimensions match")
    }

    /// Bilinear resample of the region's pixels.
    pub fn resample_image(&self, img: &RgbImage) -> RgbImage {
        let r = &self.region;
        let crop = imageops::crop_imm(img, r.x as u32, r.y as u32, r.w as u32, r.h as u32).to_image();
        imageops::resize(&crop, self.output_size.0, self.output_size.1, FilterType::Triangle)
    }
}

/// One generated frame before it receives an image id.
#[derive(Debug, Clone, PartialEq)]
pub struct CropOutput {
    pub target_instance_id: InstanceId,
    pub region: PixelBox,
    pub mask: InstanceMask,
    pub image: Option<RgbImage>,
    /// `image_id` is left at 0.
    pub records: Vec<AnnotationRecord>,
}

fn transform_keypoints(source: &AnnotationRecord, t: &CropTransform, mask: &InstanceMask, id: InstanceId) -> Vec<Keypoint> {
    source
        .keypoints
        .iter()
        .map(|kp| {
            if !kp.visibility.is_labeled() {
                return Keypoint::UNLABELED;
            }
            let (u, v) = t.apply(kp.u, kp.v);
            let vis = if mask.id_at(u, v) == Some(id) {
                Visibility::Visible
            } else {
                Visibility::Occluded
            };
            Keypoint::new(u, v, vis)
        })
        .collect()
}

/// Generates one frame per selected target of a single source frame.
/// `records` are all annotations of that frame; `rng` is consumed in target
/// order.
pub fn crop_and_scale(
    mask: &InstanceMask,
    image: Option<&RgbImage>,
    records: &[&AnnotationRecord],
    schema: SchemaTag,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<CropOutput>> {
    if let Some(img) = image {
        if img.dimensions() != (mask.width(), mask.height()) {
            return Err(Error::Consistency(format!(
                "image is {:?} but mask is {}x{}",
                img.dimensions(),
                mask.width(),
                mask.height()
            )));
        }
    }
    let frame = (mask.width(), mask.height());
    let by_instance: HashMap<InstanceId, &AnnotationRecord> = records.iter().map(|r| (r.instance_id, *r)).collect();
    let mut out = Vec::new();
    for target in select_targets(records, cfg) {
        let frame_box = PixelBox::new(0.0, 0.0, frame.0 as f64, frame.1 as f64);
        if target.bbox.intersection_area(&frame_box) <= 0.0 {
            return Err(Error::Consistency(format!(
                "target {} of image {} lies outside its frame",
                target.instance_id, target.image_id
            )));
        }
        if mask.pixel_count(target.instance_id) == 0 {
            return Err(Error::Consistency(format!(
                "no mask pixels for instance {} of image {}",
                target.instance_id, target.image_id
            )));
        }
        let region = crop_region(&target.bbox, frame, cfg.max_offset, rng);
        let t = CropTransform {
            region,
            output_size: cfg.output_size,
        };
        let up = t.resample_mask(mask);
        let recs = up
            .instance_boxes()
            .into_iter()
            .filter(|&(_, _, n)| n >= cfg.min_visible_pixels)
            .map(|(id, bbox, _)| {
                let keypoints = match by_instance.get(&id) {
                    Some(src) if src.schema == schema => transform_keypoints(src, &t, &up, id),
                    _ => vec![Keypoint::UNLABELED; schema.slot_count()],
                };
                AnnotationRecord {
                    image_id: 0,
                    instance_id: id,
                    bbox,
                    schema,
                    keypoints,
                    segmentation: Segmentation::MaskId(id),
                }
            })
            .collect();
        out.push(CropOutput {
            target_instance_id: target.instance_id,
            region,
            image: image.map(|img| t.resample_image(img)),
            mask: up,
            records: recs,
        });
    }
    Ok(out)
}

/// Supplies masks (and optionally pixels) for manifest frames.
pub trait FrameSource: Sync {
    fn mask(&self, image: &ImageEntry) -> Result<Arc<InstanceMask>>;

    fn pixels(&self, _image: &ImageEntry) -> Result<Option<RgbImage>> {
        Ok(None)
    }
}

impl FrameSource for HashMap<u64, Arc<InstanceMask>> {
    fn mask(&self, image: &ImageEntry) -> Result<Arc<InstanceMask>> {
        self.get(&image.id)
            .cloned()
            .ok_or_else(|| Error::Consistency(format!("no mask for image {}", image.id)))
    }
}

/// Reads `mask_file` and `file_name` relative to a dataset root. Missing
/// image files are tolerated; missing masks are not.
#[derive(Debug, Clone)]
pub struct DirSource {
    pub root: PathBuf,
    pub with_pixels: bool,
}

impl FrameSource for DirSource {
    fn mask(&self, image: &ImageEntry) -> Result<Arc<InstanceMask>> {
        let rel = image
            .mask_file
            .as_ref()
            .ok_or_else(|| Error::Consistency(format!("image {} has no mask file", image.id)))?;
        let m = read_mask_png(&self.root.join(rel))?;
        if (m.width(), m.height()) != (image.width, image.height) {
            return Err(Error::Consistency(format!(
                "mask of image {} is {}x{}, entry says {}x{}",
                image.id,
                m.width(),
                m.height(),
                image.width,
                image.height
            )));
        }
        Ok(Arc::new(m))
    }

    fn pixels(&self, image: &ImageEntry) -> Result<Option<RgbImage>> {
        if !self.with_pixels {
            return Ok(None);
        }
        let path = self.root.join(&image.file_name);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(image::open(&path)?.to_rgb8()))
    }
}

/// A generated frame with its final manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCrop {
    pub entry: ImageEntry,
    pub mask: InstanceMask,
    pub image: Option<RgbImage>,
    pub records: Vec<AnnotationRecord>,
}

/// Original frames plus every generated crop, discarding crop pixels.
pub fn augment_dataset(manifest: &DatasetManifest, source: &dyn FrameSource, cfg: &AugmentConfig) -> Result<DatasetManifest> {
    augment_dataset_with(manifest, source, cfg, |_| Ok(()))
}

/// As [`augment_dataset`], handing each crop to `sink` in output order.
/// Frames are processed in parallel; ids, file names and random draws do
/// not depend on the thread count.
pub fn augment_dataset_with(
    manifest: &DatasetManifest,
    source: &dyn FrameSource,
    cfg: &AugmentConfig,
    mut sink: impl FnMut(&GeneratedCrop) -> Result<()>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    manifest.validate()?;
    let by_image = manifest.annotations_by_image();
    let work: Vec<(&ImageEntry, Vec<&AnnotationRecord>)> = manifest
        .images
        .iter()
        .filter_map(|img| {
            let recs = by_image.get(&img.id)?;
            if select_targets(recs, cfg).is_empty() {
                None
            } else {
                Some((img, recs.clone()))
            }
        })
        .collect();

    let mut out = manifest.clone();
    let mut next_id = manifest.images.iter().map(|i| i.id).max().unwrap_or(0) + 1;
    for chunk in work.chunks(CHUNK) {
        let results: Vec<Result<Vec<CropOutput>>> = chunk
            .par_iter()
            .map(|(img, recs)| {
                let mask = source.mask(img)?;
                if (mask.width(), mask.height()) != (img.width, img.height) {
                    return Err(Error::Consistency(format!("mask size differs from image {}", img.id)));
                }
                let pixels = source.pixels(img)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, img.id));
                crop_and_scale(&mask, pixels.as_ref(), recs, manifest.schema, cfg, &mut rng)
            })
            .collect();
        for ((img, _), res) in chunk.iter().zip(results) {
            for crop in res? {
                let id = next_id;
                next_id += 1;
                let entry = ImageEntry {
                    id,
                    file_name: format!("crops/{id:08}.png"),
                    width: cfg.output_size.0,
                    height: cfg.output_size.1,
                    video_id: img.video_id.clone(),
                    split: img.split.clone(),
                    mask_file: Some(format!("crops/{id:08}_mask.png")),
                    provenance: Some(CropProvenance {
                        source_image_id: img.id,
                        target_instance_id: crop.target_instance_id,
                        crop_region: crop.region,
                    }),
                };
                let records: Vec<AnnotationRecord> = crop
                    .records
                    .into_iter()
                    .map(|r| AnnotationRecord { image_id: id, ..r })
                    .collect();
                let g = GeneratedCrop {
                    entry,
                    mask: crop.mask,
                    image: crop.image,
                    records,
                };
                sink(&g)?;
                out.images.push(g.entry);
                out.annotations.extend(g.records);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mask_to_box;
    use proptest::prelude::*;
    use rand::Rng;

    fn rect_mask(w: u32, h: u32, rects: &[(InstanceId, u32, u32, u32, u32)]) -> InstanceMask {
        let mut m = InstanceMask::background(w, h);
        for &(id, x, y, rw, rh) in rects {
            for j in y..y + rh {
                for i in x..x + rw {
                    m.set(i, j, id);
                }
            }
        }
        m
    }

    fn boxes_record(image_id: u64, id: InstanceId, b: PixelBox) -> AnnotationRecord {
        AnnotationRecord {
            image_id,
            instance_id: id,
            bbox: b,
            schema: SchemaTag::Boxes,
            keypoints: vec![],
            segmentation: Segmentation::MaskId(id),
        }
    }

    #[test]
    fn area_threshold_boundary() {
        let cfg = AugmentConfig::default();
        let below = boxes_record(1, 1, PixelBox::new(0.0, 0.0, 70.0, 70.0));
        let above = boxes_record(1, 2, PixelBox::new(0.0, 0.0, 70.0, 72.0));
        let exact = boxes_record(1, 3, PixelBox::new(0.0, 0.0, 50.0, 100.0));
        let picked = select_targets(&[&below, &above, &exact], &cfg);
        assert_eq!(picked.iter().map(|r| r.instance_id).collect::<Vec<_>>(), vec![2]);
        assert!(select_targets(&[], &cfg).is_empty());
    }

    #[test]
    fn zero_offset_region_is_clamped_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = crop_region(&PixelBox::new(10.2, 20.7, 30.1, 40.0), (1920, 1080), 0, &mut rng);
        assert_eq!(r, PixelBox::new(10.0, 20.0, 31.0, 41.0));
        let r = crop_region(&PixelBox::new(-5.0, 1070.0, 30.0, 40.0), (1920, 1080), 0, &mut rng);
        assert_eq!(r, PixelBox::new(0.0, 1070.0, 25.0, 10.0));
    }

    #[test]
    fn offsets_are_four_independent_draws() {
        let b = PixelBox::new(500.0, 400.0, 100.0, 80.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = crop_region(&b, (1920, 1080), 150, &mut rng);
        let mut oracle = ChaCha8Rng::seed_from_u64(9);
        let o: Vec<u32> = (0..4).map(|_| oracle.random_range(0..=150u32)).collect();
        assert_eq!(r.x, 500.0 - o[0] as f64);
        assert_eq!(r.y, 400.0 - o[1] as f64);
        assert_eq!(r.right(), 600.0 + o[2] as f64);
        assert_eq!(r.bottom(), 480.0 + o[3] as f64);
    }

    #[test]
    fn left_half_crop_doubles_boxes() {
        let mask = rect_mask(1920, 1080, &[(1, 100, 50, 300, 200), (2, 700, 400, 100, 100), (3, 1500, 100, 100, 100)]);
        let t = CropTransform {
            region: PixelBox::new(0.0, 0.0, 960.0, 540.0),
            output_size: (1920, 1080),
        };
        let up = t.resample_mask(&mask);
        let boxes = up.instance_boxes();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].1, PixelBox::new(200.0, 100.0, 600.0, 400.0));
        assert_eq!(boxes[1].1, PixelBox::new(1400.0, 800.0, 200.0, 200.0));
        assert_eq!(t.apply(100.0, 50.0), (200.0, 100.0));
    }

    #[test]
    fn instances_outside_crop_get_no_record() {
        let mask = rect_mask(200, 100, &[(1, 10, 10, 80, 80), (2, 150, 10, 40, 40)]);
        let recs = [
            boxes_record(1, 1, mask_to_box(&mask, 1).unwrap()),
            boxes_record(1, 2, mask_to_box(&mask, 2).unwrap()),
        ];
        let refs: Vec<&AnnotationRecord> = recs.iter().collect();
        let cfg = AugmentConfig {
            area_threshold: 5000.0,
            max_offset: 0,
            output_size: (200, 100),
            ..Default::default()
        };
        let out = crop_and_scale(&mask, None, &refs, SchemaTag::Boxes, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].records.len(), 1);
        assert_eq!(out[0].records[0].instance_id, 1);
        assert_eq!(out[0].records[0].bbox, PixelBox::new(0.0, 0.0, 200.0, 100.0));
    }

    #[test]
    fn slivers_below_min_visible_are_dropped() {
        // Instance 2 keeps a 1x1 sliver inside the region, upscaled to 2x2.
        let mask = rect_mask(100, 100, &[(1, 0, 0, 50, 50), (2, 50, 49, 10, 10)]);
        let recs = [boxes_record(1, 1, PixelBox::new(0.0, 0.0, 50.0, 50.0))];
        let refs: Vec<&AnnotationRecord> = recs.iter().collect();
        let cfg = AugmentConfig {
            area_threshold: 100.0,
            max_offset: 0,
            output_size: (100, 100),
            ..Default::default()
        };
        let out = crop_and_scale(&mask, None, &refs, SchemaTag::Boxes, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out[0].mask.pixel_count(2), 0);
        let cfg = AugmentConfig { max_offset: 1, ..cfg };
        for seed in 0..20 {
            let out = crop_and_scale(&mask, None, &refs, SchemaTag::Boxes, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (id, _, n) in out[0].mask.instance_boxes() {
                let kept = out[0].records.iter().any(|r| r.instance_id == id);
                assert_eq!(kept, n >= 16, "seed {seed} id {id} n {n}");
            }
        }
    }

    #[test]
    fn missing_mask_is_a_consistency_error() {
        let mask = InstanceMask::background(100, 100);
        let rec = boxes_record(1, 4, PixelBox::new(0.0, 0.0, 90.0, 90.0));
        let cfg = AugmentConfig::default();
        let err = crop_and_scale(&mask, None, &[&rec], SchemaTag::Boxes, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Consistency(_))));
        let source: HashMap<u64, Arc<InstanceMask>> = HashMap::new();
        let mut m = DatasetManifest::new("x", SchemaTag::Boxes);
        m.images.push(ImageEntry { id: 1, width: 100, height: 100, ..Default::default() });
        m.annotations.push(rec);
        assert!(matches!(augment_dataset(&m, &source, &cfg), Err(Error::Consistency(_))));
    }

    #[test]
    fn keypoints_follow_the_affine_map() {
        let mask = rect_mask(400, 200, &[(1, 100, 50, 100, 80), (2, 150, 100, 100, 60)]);
        let mut kps = vec![Keypoint::UNLABELED; 27];
        kps[0] = Keypoint::new(110.5, 60.5, Visibility::Visible); // on instance 1
        kps[1] = Keypoint::new(160.5, 110.5, Visibility::Occluded); // under instance 2
        kps[2] = Keypoint::new(399.0, 199.0, Visibility::Visible); // will leave the crop
        let rec = AnnotationRecord {
            image_id: 1,
            instance_id: 1,
            bbox: PixelBox::new(100.0, 50.0, 100.0, 80.0),
            schema: SchemaTag::Zebra27,
            keypoints: kps,
            segmentation: Segmentation::MaskId(1),
        };
        let cfg = AugmentConfig {
            area_threshold: 1000.0,
            max_offset: 0,
            output_size: (400, 320),
            ..Default::default()
        };
        let out = crop_and_scale(&mask, None, &[&rec], SchemaTag::Zebra27, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r1 = out[0].records.iter().find(|r| r.instance_id == 1).unwrap();
        // region (100,50,100,80) → scale (4, 4)
        assert_eq!((r1.keypoints[0].u, r1.keypoints[0].v), (42.0, 42.0));
        assert_eq!(r1.keypoints[0].visibility, Visibility::Visible);
        assert_eq!(r1.keypoints[1].visibility, Visibility::Occluded);
        assert_eq!(r1.keypoints[2].visibility, Visibility::Occluded);
        assert_eq!(r1.keypoints[3], Keypoint::UNLABELED);
        // instance 2 has no source record: keypoints unlabeled
        let r2 = out[0].records.iter().find(|r| r.instance_id == 2).unwrap();
        assert_eq!(r2.labeled_count(), 0);
    }

    #[test]
    fn image_is_resampled_to_output_size() {
        let mut img = RgbImage::new(40, 20);
        for (x, _, p) in img.enumerate_pixels_mut() {
            *p = image::Rgb([if x < 20 { 0 } else { 200 }, 0, 0]);
        }
        let mask = rect_mask(40, 20, &[(1, 0, 0, 20, 20)]);
        let rec = boxes_record(1, 1, PixelBox::new(0.0, 0.0, 20.0, 20.0));
        let cfg = AugmentConfig {
            area_threshold: 10.0,
            max_offset: 0,
            output_size: (80, 40),
            ..Default::default()
        };
        let out = crop_and_scale(&mask, Some(&img), &[&rec], SchemaTag::Boxes, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let im = out[0].image.as_ref().unwrap();
        assert_eq!(im.dimensions(), (80, 40));
        assert!(im.pixels().all(|p| p.0[0] == 0));
    }

    fn fixture_dataset(frames: u64) -> (DatasetManifest, HashMap<u64, Arc<InstanceMask>>) {
        let shared = Arc::new(rect_mask(64, 64, &[(1, 4, 4, 40, 40), (2, 50, 50, 10, 10)]));
        let mut m = DatasetManifest::new("fx", SchemaTag::Boxes);
        let mut masks = HashMap::new();
        for id in 1..=frames {
            m.images.push(ImageEntry { id, width: 64, height: 64, video_id: Some(format!("v{}", id % 3)), ..Default::default() });
            for (iid, b, _) in shared.instance_boxes() {
                m.annotations.push(boxes_record(id, iid, b));
            }
            masks.insert(id, shared.clone());
        }
        (m, masks)
    }

    #[test]
    fn dataset_gains_one_frame_per_target() {
        let (m, masks) = fixture_dataset(10);
        let cfg = AugmentConfig {
            area_threshold: 1000.0,
            max_offset: 10,
            output_size: (64, 64),
            seed: 7,
            ..Default::default()
        };
        let out = augment_dataset(&m, &masks, &cfg).unwrap();
        assert_eq!(out.images.len(), 20);
        out.validate().unwrap();
        let crops: Vec<&ImageEntry> = out.images.iter().filter(|i| i.provenance.is_some()).collect();
        assert_eq!(crops.len(), 10);
        assert_eq!(crops[0].id, 11);
        assert_eq!(crops[3].provenance.unwrap().source_image_id, 4);
        assert_eq!(crops[3].video_id, m.images[3].video_id);
        assert_eq!(out.to_canonical_json(), augment_dataset(&m, &masks, &cfg).unwrap().to_canonical_json());
        let other = augment_dataset(&m, &masks, &AugmentConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(out.to_canonical_json(), other.to_canonical_json());
    }

    #[test]
    fn no_targets_leaves_dataset_unchanged() {
        let (m, masks) = fixture_dataset(4);
        let out = augment_dataset(&m, &masks, &AugmentConfig { output_size: (64, 64), ..Default::default() }).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (m, masks) = fixture_dataset(1);
        for cfg in [
            AugmentConfig { area_threshold: 0.0, ..Default::default() },
            AugmentConfig { output_size: (0, 10), ..Default::default() },
        ] {
            assert!(matches!(augment_dataset(&m, &masks, &cfg), Err(Error::Config(_))));
        }
    }

    proptest! {
        #[test]
        fn region_contains_box_and_stays_in_frame(
            x in -50.0f64..1900.0, y in -50.0f64..1060.0, w in 1.0f64..400.0, h in 1.0f64..400.0,
            off in 0u32..200, seed in any::<u64>(),
        ) {
            let b = PixelBox::new(x, y, w, h);
            let frame = PixelBox::new(0.0, 0.0, 1920.0, 1080.0);
            prop_assume!(b.intersection_area(&frame) > 0.0);
            let r = crop_region(&b, (1920, 1080), off, &mut ChaCha8Rng::seed_from_u64(seed));
            let inside = b.clamp_to(1920.0, 1080.0);
            prop_assert!(r.x >= 0.0 && r.y >= 0.0 && r.right() <= 1920.0 && r.bottom() <= 1080.0);
            prop_assert!(r.x <= inside.x && r.y <= inside.y && r.right() >= inside.right() && r.bottom() >= inside.bottom());
            prop_assert!(b.x.floor() - r.x <= off as f64 && r.right() - b.right().ceil() <= off as f64);
            prop_assert!(b.y.floor() - r.y <= off as f64 && r.bottom() - b.bottom().ceil() <= off as f64);
            prop_assert_eq!(r, crop_region(&b, (1920, 1080), off, &mut ChaCha8Rng::seed_from_u64(seed)));
        }

        #[test]
        fn crops_are_label_consistent(
            x in 0u32..60, y in 0u32..30, w in 20u32..60, h in 20u32..40,
            ox in 0u32..100, oy in 0u32..60, seed in any::<u64>(), off in 0u32..40,
        ) {
            let mask = rect_mask(160, 90, &[(1, x, y, w, h), (2, ox.min(150), oy.min(80), 10, 10)]);
            let b1 = mask_to_box(&mask, 1).unwrap();
            let mut kps = vec![Keypoint::UNLABELED; 27];
            for (k, kp) in kps.iter_mut().enumerate() {
                *kp = Keypoint::new(b1.x + (k as f64 * 7.3) % b1.w, b1.y + (k as f64 * 3.1) % b1.h, Visibility::Visible);
            }
            let rec = AnnotationRecord { image_id: 1, instance_id: 1, bbox: b1, schema: SchemaTag::Zebra27, keypoints: kps, segmentation: Segmentation::MaskId(1) };
            let cfg = AugmentConfig { area_threshold: 100.0, max_offset: off, output_size: (160, 90), ..Default::default() };
            let out = crop_and_scale(&mask, None, &[&rec], SchemaTag::Zebra27, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), 1);
            let c = &out[0];
            for r in &c.records {
                prop_assert_eq!(r.bbox, mask_to_box(&c.mask, r.instance_id).unwrap());
                for kp in &r.keypoints {
                    if kp.visibility == Visibility::Visible {
                        prop_assert_eq!(c.mask.id_at(kp.u, kp.v), Some(r.instance_id));
                    }
                }
            }
            // Magnification ≥ 1 per axis for the target.
            let t = c.records.iter().find(|r| r.instance_id == 1).unwrap();
            prop_assert!(t.bbox.w / 160.0 >= b1.w / 160.0 && t.bbox.h / 90.0 >= b1.h / 90.0);
        }
    }
}
