//! Python bindings: scenes, rendering, manifests, augmentation and metrics.

use std::fs;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use synthherd_core::augment::{augment_dataset_with, AugmentConfig, DirSource};
use synthherd_core::datasets::{
    bbox_ratio_cdf, cdf_dominance, convert_yolo, load_coco, merge, save_coco, split_by_video, summarize,
    DatasetManifest, ImageEntry,
};
use synthherd_core::geometry::{self, PixelBox};
use synthherd_core::keypoints::{annotate_frame, KeypointSubset, SchemaTag};
use synthherd_core::metrics::{self, Detection, GtBox, KeypointPrediction, PckOptions};
use synthherd_core::mockrender::{preview_image, render_scene, write_mask_png, RenderedFrame};
use synthherd_core::scenelayout::{generate_scene, Bounds, CameraRig, SceneConfig, SceneSpec};
use synthherd_core::standin::pose_library;
use synthherd_core::Error;

create_exception!(synthherd, SynthHerdError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        e @ Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => SynthHerdError::new_err(other.to_string()),
    }
}

type BoxTuple = (f64, f64, f64, f64);
type KeypointRow = (u64, u32, Vec<(f64, f64, u8)>);
type PointsRow = (u64, u32, Vec<(f64, f64)>);

fn to_box((x, y, w, h): BoxTuple) -> PixelBox {
    PixelBox { x, y, w, h }
}

fn from_box(b: &PixelBox) -> BoxTuple {
    (b.x, b.y, b.w, b.h)
}

/// A placed herd with its cameras.
#[pyclass(name = "Scene", frozen)]
struct PyScene {
    inner: SceneSpec,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    #[pyo3(signature = (
        instances = 250, cameras = 3, seed = 0, width = 1920, height = 1080, focal = 1400.0,
        extent = 100.0, scale = (0.8, 1.2), distance = (20.0, 60.0), elevation = (15.0, 90.0),
        poses = 16, pose_seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        py: Python<'_>,
        instances: usize,
        cameras: usize,
        seed: u64,
        width: u32,
        height: u32,
        focal: f64,
        extent: f64,
        scale: (f64, f64),
        distance: (f64, f64),
        elevation: (f64, f64),
        poses: usize,
        pose_seed: u64,
    ) -> PyResult<Self> {
        let mut rig = CameraRig::centered(width, height, focal);
        rig.elevation_deg = elevation;
        let cfg = SceneConfig {
            instance_count: instances,
            bounds: Bounds {
                min: [-extent, -extent, 0.0],
                max: [extent, extent, 0.0],
            },
            scale_range: scale,
            camera_count: cameras,
            distance_range: distance,
            rig,
            seed,
        };
        let inner = py
            .detach(|| generate_scene(&cfg, &pose_library(poses, pose_seed)))
            .map_err(to_py)?;
        Ok(PyScene { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyScene {
            inner: SceneSpec::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn instance_count(&self) -> usize {
        self.inner.instances.len()
    }

    #[getter]
    fn camera_count(&self) -> usize {
        self.inner.cameras.len()
    }

    /// Placements rejected for overlapping an earlier instance.
    #[getter]
    fn discarded(&self) -> usize {
        self.inner.discarded
    }

    #[pyo3(signature = (camera, image_id = None))]
    fn render(&self, py: Python<'_>, camera: usize, image_id: Option<u64>) -> PyResult<PyFrame> {
        let cam = self
            .inner
            .cameras
            .get(camera)
            .ok_or_else(|| SynthHerdError::new_err(format!("scene has no camera {camera}")))?;
        let id = image_id.unwrap_or(camera as u64 + 1);
        let inner = py.detach(|| render_scene(&self.inner, cam, id)).map_err(to_py)?;
        Ok(PyFrame { inner })
    }

    /// Renders every camera into `out_dir` and returns a keypoint manifest
    /// whose paths are relative to `out_dir`.
    #[pyo3(signature = (out_dir, name = "scene", min_dim = 30.0))]
    fn write_dataset(&self, py: Python<'_>, out_dir: PathBuf, name: &str, min_dim: f64) -> PyResult<PyManifest> {
        let scene = &self.inner;
        let inner = py
            .detach(|| -> synthherd_core::Result<DatasetManifest> {
                fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
                let mut m = DatasetManifest::new(name, SchemaTag::Zebra27);
                for (k, cam) in scene.cameras.iter().enumerate() {
                    let id = k as u64 + 1;
                    let frame = render_scene(scene, cam, id)?;
                    let file_name = format!("{name}_cam{k}.png");
                    let mask_file = format!("{name}_cam{k}_mask.png");
                    preview_image(&frame).save(out_dir.join(&file_name))?;
                    write_mask_png(&out_dir.join(&mask_file), &frame.mask)?;
                    m.annotations.extend(annotate_frame(scene, cam, &frame, min_dim)?);
                    m.images.push(ImageEntry {
                        id,
                        file_name,
                        width: frame.width,
                        height: frame.height,
                        video_id: Some(name.to_string()),
                        mask_file: Some(mask_file),
                        ..Default::default()
                    });
                }
                Ok(m)
            })
            .map_err(to_py)?;
        Ok(PyManifest { inner })
    }
}

/// One camera's instance mask and depth.
#[pyclass(name = "Frame", frozen)]
struct PyFrame {
    inner: RenderedFrame,
}

#[pymethods]
impl PyFrame {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    /// Row-major instance ids, 0 for background.
    fn mask(&self) -> Vec<u32> {
        self.inner.mask.ids().to_vec()
    }

    /// Row-major camera depth, `inf` for background.
    fn depth(&self) -> Vec<f32> {
        self.inner.depth.clone()
    }

    fn pixel_count(&self, instance_id: u32) -> usize {
        self.inner.mask.pixel_count(instance_id)
    }

    /// `(instance_id, (x, y, w, h), pixels)` for each visible instance.
    fn instance_boxes(&self) -> Vec<(u32, BoxTuple, usize)> {
        self.inner
            .mask
            .instance_boxes()
            .iter()
            .map(|(id, b, n)| (*id, from_box(b), *n))
            .collect()
    }
}

/// A COCO-style dataset manifest.
#[pyclass(name = "Manifest")]
struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyManifest {
            inner: load_coco(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyManifest {
            inner: DatasetManifest::from_json_str(text, "<string>".as_ref()).map_err(to_py)?,
        })
    }

    /// Canonical JSON: sorted keys, stable ids, trailing newline.
    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_coco(&self.inner, &path).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[setter]
    fn set_name(&mut self, name: String) {
        self.inner.name = name;
    }

    #[getter]
    fn schema(&self) -> &'static str {
        self.inner.schema.as_str()
    }

    #[getter]
    fn image_count(&self) -> usize {
        self.inner.images.len()
    }

    #[getter]
    fn annotation_count(&self) -> usize {
        self.inner.annotations.len()
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = summarize(&self.inner);
        let d = PyDict::new(py);
        d.set_item("name", s.name)?;
        d.set_item("schema", s.schema)?;
        d.set_item("images", s.images)?;
        d.set_item("annotations", s.annotations)?;
        d.set_item("generated_crops", s.generated_crops)?;
        d.set_item("videos", s.videos)?;
        d.set_item("per_split", s.per_split)?;
        Ok(d)
    }

    /// `(image_id, instance_id, (x, y, w, h))` per annotation.
    fn boxes(&self) -> Vec<(u64, u32, BoxTuple)> {
        self.inner
            .annotations
            .iter()
            .map(|r| (r.image_id, r.instance_id, from_box(&r.bbox)))
            .collect()
    }

    /// `(image_id, instance_id, [(u, v, visibility), ...])` per annotation.
    fn keypoints(&self) -> Vec<KeypointRow> {
        self.inner
            .annotations
            .iter()
            .map(|r| {
                let kps = r.keypoints.iter().map(|k| (k.u, k.v, k.visibility as u8)).collect();
                (r.image_id, r.instance_id, kps)
            })
            .collect()
    }

    /// Returns `(train, val, warnings)`; no video spans both parts.
    #[pyo3(signature = (ratio = 0.8, seed = 0, largest_first = false))]
    fn split(&self, ratio: f64, seed: u64, largest_first: bool) -> PyResult<(PyManifest, PyManifest, Vec<String>)> {
        let out = split_by_video(&self.inner, ratio, seed, largest_first).map_err(to_py)?;
        Ok((PyManifest { inner: out.train }, PyManifest { inner: out.val }, out.warnings))
    }

    /// Concatenates manifests with fresh ids. `target_schema="boxes"`
    /// drops keypoints so mixed schemas can be combined.
    #[staticmethod]
    #[pyo3(signature = (manifests, target_schema = None))]
    fn merge(manifests: Vec<PyRef<'_, PyManifest>>, target_schema: Option<&str>) -> PyResult<PyManifest> {
        let target = target_schema.map(SchemaTag::parse).transpose().map_err(to_py)?;
        let refs: Vec<&DatasetManifest> = manifests.iter().map(|m| &m.inner).collect();
        Ok(PyManifest {
            inner: merge(&refs, target, &[]).map_err(to_py)?,
        })
    }

    /// Adds crop-and-scale frames for instances larger than
    /// `area_threshold`. Masks are read from and crops written under
    /// `root`, so returned paths stay relative to it.
    #[pyo3(signature = (
        root, area_threshold = 5000.0, max_offset = 150, output_size = (1920, 1080),
        min_visible_pixels = 16, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn augment(
        &self,
        py: Python<'_>,
        root: PathBuf,
        area_threshold: f64,
        max_offset: u32,
        output_size: (u32, u32),
        min_visible_pixels: usize,
        seed: u64,
    ) -> PyResult<PyManifest> {
        let cfg = AugmentConfig {
            area_threshold,
            max_offset,
            output_size,
            min_visible_pixels,
            seed,
        };
        let source = DirSource {
            root: root.clone(),
            with_pixels: true,
        };
        let m = &self.inner;
        let inner = py
            .detach(|| {
                let crops = root.join("crops");
                fs::create_dir_all(&crops).map_err(|e| Error::io(&crops, e))?;
                augment_dataset_with(m, &source, &cfg, |g| {
                    if let Some(mask_file) = &g.entry.mask_file {
                        write_mask_png(&root.join(mask_file), &g.mask)?;
                    }
                    if let Some(img) = &g.image {
                        img.save(root.join(&g.entry.file_name))?;
                    }
                    Ok(())
                })
            })
            .map_err(to_py)?;
        Ok(PyManifest { inner })
    }

    /// Sorted box-to-frame width and height ratios.
    fn bbox_ratio_cdf(&self) -> (Vec<f64>, Vec<f64>) {
        let cdf = bbox_ratio_cdf(&self.inner);
        (cdf.width, cdf.height)
    }

    /// Writes YOLO label files and returns their paths.
    fn to_yolo(&self, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        convert_yolo(&self.inner, &out_dir).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Manifest(name={:?}, schema={}, images={}, annotations={})",
            self.inner.name,
            self.inner.schema.as_str(),
            self.inner.images.len(),
            self.inner.annotations.len()
        )
    }
}

#[pyfunction]
fn iou(a: BoxTuple, b: BoxTuple) -> f64 {
    geometry::iou(&to_box(a), &to_box(b))
}

fn to_detections(dets: Vec<(u64, BoxTuple, f64)>) -> Vec<Detection> {
    dets.into_iter()
        .map(|(image_id, b, score)| Detection::new(image_id, to_box(b), score))
        .collect()
}

fn gt_list(gts: Vec<(u64, BoxTuple)>) -> Vec<GtBox> {
    gts.into_iter()
        .map(|(image_id, b)| GtBox {
            image_id,
            bbox: to_box(b),
        })
        .collect()
}

/// Single-class AP with 101-point interpolation; `None` without ground truth.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, iou_threshold = 0.5))]
fn average_precision(
    detections: Vec<(u64, BoxTuple, f64)>,
    ground_truth: Vec<(u64, BoxTuple)>,
    iou_threshold: f64,
) -> PyResult<Option<f64>> {
    metrics::average_precision(&to_detections(detections), &gt_list(ground_truth), iou_threshold).map_err(to_py)
}

/// `(mAP50, mAP)` over IoU 0.50:0.95; `None` without ground truth.
#[pyfunction]
fn mean_ap(detections: Vec<(u64, BoxTuple, f64)>, ground_truth: Vec<(u64, BoxTuple)>) -> PyResult<Option<(f64, f64)>> {
    let r = metrics::mean_ap(&to_detections(detections), &gt_list(ground_truth)).map_err(to_py)?;
    Ok(r.map(|m| (m.map50, m.map)))
}

/// Dataset PCK against `ground_truth`. Predictions are
/// `(image_id, instance_id, [(u, v), ...])`; missing ones count as wrong.
/// Returns `(correct, evaluated)`.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, alpha, filtered = false, visible_only = false))]
fn pck(
    predictions: Vec<PointsRow>,
    ground_truth: PyRef<'_, PyManifest>,
    alpha: f64,
    filtered: bool,
    visible_only: bool,
) -> PyResult<(usize, usize)> {
    let gt = &ground_truth.inner;
    let subset = if filtered {
        KeypointSubset::filtered_zebra27()
    } else {
        KeypointSubset::all(gt.schema)
    };
    let preds: Vec<KeypointPrediction> = predictions
        .into_iter()
        .map(|(image_id, instance_id, pts)| KeypointPrediction {
            image_id,
            instance_id,
            points: pts.into_iter().map(|(u, v)| [u, v]).collect(),
        })
        .collect();
    let opts = PckOptions {
        alpha,
        subset: &subset,
        visible_only,
    };
    let c = metrics::pck_dataset(&preds, &gt.annotations, &opts).map_err(to_py)?;
    Ok((c.correct, c.evaluated))
}

/// Whether `larger` is at least `smaller` at every checked quantile.
/// Returns `(holds, violations, strict)`.
#[pyfunction]
#[pyo3(signature = (larger, smaller, steps = 100))]
fn cdf_dominates(mut larger: Vec<f64>, mut smaller: Vec<f64>, steps: usize) -> (bool, usize, usize) {
    larger.sort_by(f64::total_cmp);
    smaller.sort_by(f64::total_cmp);
    let d = cdf_dominance(&larger, &smaller, steps);
    (d.holds(), d.violations, d.strict)
}

#[pymodule]
pub fn synthherd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SynthHerdError", m.py().get_type::<SynthHerdError>())?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ap, m)?)?;
    m.add_function(wrap_pyfunction!(pck, m)?)?;
    m.add_function(wrap_pyfunction!(cdf_dominates, m)?)?;
    Ok(())
}
