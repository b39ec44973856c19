use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use synthherd::augment::{augment_dataset_with, AugmentConfig, DirSource};
use synthherd::datasets::{
    bbox_ratio_cdf_where, cdf_dominance, convert_yolo, duplicate_file_paths, load_coco, merge as merge_manifests, save_coco,
    split_by_video, summarize, DatasetManifest, ImageEntry,
};
use synthherd::keypoints::{annotate_frame, KeypointSubset, SchemaMapping, SchemaTag};
use synthherd::metrics::{
    aggregate, average_precision, gt_boxes, load_detections, load_keypoint_predictions, pck_dataset, DatasetMetrics, EvalReport,
    PckOptions,
};
use synthherd::mockrender::{preview_image, read_depth, read_mask_png, render_scene, write_depth, write_mask_png, RenderedFrame};
use synthherd::scenelayout::{generate_scene, Bounds, CameraRig, SceneConfig, SceneSpec};
use synthherd::standin::pose_library;

use crate::runlog::RunManifest;
use crate::{
    AnnotateArgs, AugmentArgs, ConvertArgs, EvalDetArgs, EvalPoseArgs, MergeArgs, RenderArgs, SceneGenArgs, SplitArgs, StatsArgs,
};

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into())
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SceneSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn relative_to(path: &Path, base: &Path) -> Result<String> {
    let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
    let base = fs::canonicalize(base).with_context(|| format!("resolving {}", base.display()))?;
    let rel = pathdiff::diff_paths(&abs, &base).unwrap_or(abs);
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

/// Resolves `.` and `..` without touching the filesystem.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Re-expresses relative image and mask paths from `from` to `to`. Paths
/// that do not exist on disk are joined lexically.
fn rebase(m: &mut DatasetManifest, from: &Path, to: &Path) -> Result<()> {
    let from = fs::canonicalize(from).with_context(|| format!("resolving {}", from.display()))?;
    let to = fs::canonicalize(to).with_context(|| format!("resolving {}", to.display()))?;
    if from == to {
        return Ok(());
    }
    let fix = |p: &str| -> String {
        if p.is_empty() || Path::new(p).is_absolute() {
            return p.to_string();
        }
        let joined = fs::canonicalize(from.join(p)).unwrap_or_else(|_| normalize(&from.join(p)));
        pathdiff::diff_paths(&joined, &to)
            .map(|r| r.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|| joined.to_string_lossy().into_owned())
    };
    for img in &mut m.images {
        img.file_name = fix(&img.file_name);
        img.mask_file = img.mask_file.as_deref().map(fix);
    }
    Ok(())
}

pub fn scene_gen(a: &SceneGenArgs, args: &[String]) -> Result<()> {
    let mut rig = CameraRig::centered(a.width, a.height, a.focal);
    rig.elevation_deg = (a.elevation_min, a.elevation_max);
    let cfg = SceneConfig {
        instance_count: a.instances,
        bounds: Bounds {
            min: [-a.extent, -a.extent, 0.0],
            max: [a.extent, a.extent, 0.0],
        },
        scale_range: (a.scale_min, a.scale_max),
        camera_count: a.cameras,
        distance_range: (a.distance_min, a.distance_max),
        rig,
        seed: a.seed,
    };
    ensure!(a.poses > 0, "--poses must be at least 1");
    let scene = generate_scene(&cfg, &pose_library(a.poses, a.pose_seed))?;
    log::info!(
        "placed {} of {} instances ({} discarded), {} cameras",
        scene.instances.len(),
        scene.attempted,
        scene.discarded,
        scene.cameras.len()
    );
    ensure_parent(&a.out)?;
    fs::write(&a.out, scene.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    RunManifest {
        subcommand: "scene-gen",
        args: args.to_vec(),
        seed: Some(a.seed),
        inputs: vec![],
        outputs: vec![a.out.clone()],
    }
    .write()
}

fn frame_names(stem: &str, k: usize) -> (String, String, String) {
    (
        format!("{stem}_cam{k}.png"),
        format!("{stem}_cam{k}_mask.png"),
        format!("{stem}_cam{k}_depth.bin"),
    )
}

pub fn render(a: &RenderArgs, args: &[String]) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let stem = a.stem.clone().unwrap_or_else(|| stem_of(&a.scene));
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    scene
        .cameras
        .par_iter()
        .enumerate()
        .map(|(k, cam)| -> Result<()> {
            let frame = render_scene(&scene, cam, k as u64)?;
            let (img, mask, depth) = frame_names(&stem, k);
            preview_image(&frame)
                .save(a.out_dir.join(&img))
                .with_context(|| format!("writing {img}"))?;
            write_mask_png(&a.out_dir.join(&mask), &frame.mask)?;
            write_depth(&a.out_dir.join(&depth), frame.width, frame.height, &frame.depth)?;
            log::debug!("rendered camera {k}: {} instances visible", frame.mask.instance_ids().len());
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    RunManifest {
        subcommand: "render",
        args: args.to_vec(),
        seed: Some(scene.seed),
        inputs: vec![a.scene.clone()],
        outputs: vec![a.out_dir.clone()],
    }
    .write()
}

pub fn annotate(a: &AnnotateArgs, args: &[String]) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let stem = a.stem.clone().unwrap_or_else(|| stem_of(&a.scene));
    ensure_parent(&a.out)?;
    let out_dir = parent_dir(&a.out);
    let mut m = DatasetManifest::new(a.name.clone().unwrap_or_else(|| stem.clone()), SchemaTag::Zebra27);
    for (k, cam) in scene.cameras.iter().enumerate() {
        let id = a.first_image_id + k as u64;
        let (img, mask_name, depth_name) = frame_names(&stem, k);
        let mask_path = a.render_dir.join(&mask_name);
        let mask = read_mask_png(&mask_path).with_context(|| format!("reading {}", mask_path.display()))?;
        let (w, h, depth) = read_depth(&a.render_dir.join(&depth_name))?;
        let frame = RenderedFrame {
            image_id: id,
            width: w,
            height: h,
            mask,
            depth,
        };
        frame.validate()?;
        let mut recs = annotate_frame(&scene, cam, &frame, a.min_dim)?;
        recs.iter_mut().for_each(|r| r.image_id = id);
        log::debug!("camera {k}: {} records", recs.len());
        m.images.push(ImageEntry {
            id,
            file_name: relative_to(&a.render_dir.join(&img), &out_dir)?,
            width: w,
            height: h,
            video_id: Some(stem.clone()),
            split: None,
            mask_file: Some(relative_to(&mask_path, &out_dir)?),
            provenance: None,
        });
        m.annotations.extend(recs);
    }
    save_coco(&m, &a.out)?;
    RunManifest {
        subcommand: "annotate",
        args: args.to_vec(),
        seed: Some(scene.seed),
        inputs: vec![a.scene.clone(), a.render_dir.clone()],
        outputs: vec![a.out.clone()],
    }
    .write()
}

pub fn augment(a: &AugmentArgs, args: &[String]) -> Result<()> {
    let mut m = load_coco(&a.manifest)?;
    let root = a.root.clone().unwrap_or_else(|| parent_dir(&a.manifest));
    ensure_parent(&a.out)?;
    let out_dir = parent_dir(&a.out);
    let cfg = AugmentConfig {
        area_threshold: a.area_threshold,
        max_offset: a.max_offset,
        output_size: (a.out_width, a.out_height),
        min_visible_pixels: a.min_visible,
        seed: a.seed,
    };
    let source = DirSource {
        root: root.clone(),
        with_pixels: true,
    };
    fs::create_dir_all(out_dir.join("crops"))?;
    let mut crops = 0usize;
    let mut out = augment_dataset_with(&m, &source, &cfg, |g| {
        if let Some(mask_file) = &g.entry.mask_file {
            write_mask_png(&out_dir.join(mask_file), &g.mask)?;
        }
        if let Some(img) = &g.image {
            img.save(out_dir.join(&g.entry.file_name))?;
        }
        crops += 1;
        Ok(())
    })?;
    log::info!("generated {crops} crops from {} frames", m.images.len());
    // Original entries still point into the input root.
    let originals = m.images.len();
    m.images = out.images.drain(..originals).collect();
    rebase(&mut m, &root, &out_dir)?;
    out.images.splice(0..0, m.images);
    out.name = a.name.clone().unwrap_or_else(|| stem_of(&a.out));
    save_coco(&out, &a.out)?;
    RunManifest {
        subcommand: "augment",
        args: args.to_vec(),
        seed: Some(a.seed),
        inputs: vec![a.manifest.clone()],
        outputs: vec![a.out.clone()],
    }
    .write()
}

pub fn split(a: &SplitArgs, args: &[String]) -> Result<()> {
    let m = load_coco(&a.manifest)?;
    let src_dir = parent_dir(&a.manifest);
    let mut s = split_by_video(&m, a.ratio, a.seed, a.largest_first)?;
    for (out, part) in [(&a.train_out, &mut s.train), (&a.val_out, &mut s.val)] {
        ensure_parent(out)?;
        rebase(part, &src_dir, &parent_dir(out))?;
        save_coco(part, out)?;
    }
    println!("train {} images, val {} images", s.train.images.len(), s.val.images.len());
    RunManifest {
        subcommand: "split",
        args: args.to_vec(),
        seed: Some(a.seed),
        inputs: vec![a.manifest.clone()],
        outputs: vec![a.train_out.clone(), a.val_out.clone()],
    }
    .write()
}

pub fn convert(a: &ConvertArgs, args: &[String]) -> Result<()> {
    let m = load_coco(&a.manifest)?;
    fs::create_dir_all(&a.out_dir)?;
    let files = match a.format {
        crate::Format::Yolo => convert_yolo(&m, &a.out_dir)?,
    };
    fs::write(a.out_dir.join("classes.txt"), format!("{}\n", m.category))?;
    log::info!("wrote {} label files", files.len());
    RunManifest {
        subcommand: "convert",
        args: args.to_vec(),
        seed: None,
        inputs: vec![a.manifest.clone()],
        outputs: vec![a.out_dir.clone()],
    }
    .write()
}

pub fn merge(a: &MergeArgs, args: &[String]) -> Result<()> {
    ensure_parent(&a.out)?;
    let out_dir = parent_dir(&a.out);
    let mut inputs = Vec::new();
    for p in &a.manifests {
        let mut m = load_coco(p)?;
        rebase(&mut m, &parent_dir(p), &out_dir)?;
        inputs.push(m);
    }
    let target = a.target_schema.as_deref().map(SchemaTag::parse).transpose()?;
    let mappings = a.mappings.iter().map(|p| SchemaMapping::load(p)).collect::<synthherd::Result<Vec<_>>>()?;
    let refs: Vec<&DatasetManifest> = inputs.iter().collect();
    let merged = merge_manifests(&refs, target, &mappings)?;
    let dups = duplicate_file_paths(&merged);
    if !dups.is_empty() {
        log::warn!("{} file paths occur more than once (first: {})", dups.len(), dups[0]);
    }
    save_coco(&merged, &a.out)?;
    println!("{}: {} images, {} annotations", merged.name, merged.images.len(), merged.annotations.len());
    let mut all_inputs = a.manifests.clone();
    all_inputs.extend(a.mappings.iter().cloned());
    RunManifest {
        subcommand: "merge",
        args: args.to_vec(),
        seed: None,
        inputs: all_inputs,
        outputs: vec![a.out.clone()],
    }
    .write()
}

fn parse_tags(tags: &[String]) -> Result<BTreeMap<String, String>> {
    tags.iter()
        .map(|t| match t.split_once('=') {
            Some((k, v)) => Ok((k.to_string(), v.to_string())),
            None => bail!("tag {t:?} is not key=value"),
        })
        .collect()
}

fn write_report(report: &EvalReport, tags: &[String], path: &Path) -> Result<()> {
    let mut v = serde_json::to_value(report)?;
    v["tags"] = json!(parse_tags(tags)?);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.to_table());
    Ok(())
}

fn paired<'a>(gts: &'a [PathBuf], preds: &'a [PathBuf], names: &[String]) -> Result<Vec<(&'a PathBuf, &'a PathBuf, Option<String>)>> {
    ensure!(gts.len() == preds.len(), "{} --gt but {} --pred", gts.len(), preds.len());
    ensure!(names.is_empty() || names.len() == gts.len(), "--name must be given once per dataset or not at all");
    Ok(gts
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(k, (g, p))| (g, p, names.get(k).cloned()))
        .collect())
}

pub fn eval_det(a: &EvalDetArgs, args: &[String]) -> Result<()> {
    let ious = if a.ious.is_empty() {
        synthherd::metrics::coco_iou_thresholds().to_vec()
    } else {
        a.ious.clone()
    };
    ensure!(ious.iter().all(|t| *t > 0.0 && *t <= 1.0), "IoU thresholds must lie in (0, 1]");
    let mut rows = Vec::new();
    for (gt_path, pred_path, name) in paired(&a.gts, &a.preds, &a.names)? {
        let gt = load_coco(gt_path)?;
        let dets = load_detections(pred_path)?;
        let boxes = gt_boxes(&gt.annotations);
        let map50 = average_precision(&dets, &boxes, 0.5)?;
        let mut aps = Vec::new();
        for &t in &ious {
            if let Some(ap) = average_precision(&dets, &boxes, t)? {
                aps.push(ap);
            }
        }
        let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        rows.push(DatasetMetrics {
            name: name.unwrap_or(gt.name.clone()),
            image_count: gt.images.len(),
            values: [("mAP50".to_string(), map50), ("mAP".to_string(), map)].into(),
        });
    }
    write_report(&aggregate(rows)?, &a.tags, &a.report)?;
    let mut inputs = a.gts.clone();
    inputs.extend(a.preds.iter().cloned());
    RunManifest {
        subcommand: "eval-det",
        args: args.to_vec(),
        seed: None,
        inputs,
        outputs: vec![a.report.clone()],
    }
    .write()
}

pub fn eval_pose(a: &EvalPoseArgs, args: &[String]) -> Result<()> {
    let alphas = if a.alphas.is_empty() { vec![0.05, 0.1] } else { a.alphas.clone() };
    let mut rows = Vec::new();
    for (gt_path, pred_path, name) in paired(&a.gts, &a.preds, &a.names)? {
        let gt = load_coco(gt_path)?;
        ensure!(gt.schema != SchemaTag::Boxes, "{} has no keypoints", gt_path.display());
        let subset = if a.filtered {
            ensure!(gt.schema == SchemaTag::Zebra27, "--filtered applies to zebra27 manifests only");
            KeypointSubset::filtered_zebra27()
        } else {
            KeypointSubset::all(gt.schema)
        };
        let preds = load_keypoint_predictions(pred_path)?;
        let mut values = BTreeMap::new();
        for &alpha in &alphas {
            let opts = PckOptions {
                alpha,
                subset: &subset,
                visible_only: a.visible_only,
            };
            values.insert(format!("P_{alpha}"), pck_dataset(&preds, &gt.annotations, &opts)?.ratio());
        }
        rows.push(DatasetMetrics {
            name: name.unwrap_or(gt.name.clone()),
            image_count: gt.images.len(),
            values,
        });
    }
    write_report(&aggregate(rows)?, &a.tags, &a.report)?;
    let mut inputs = a.gts.clone();
    inputs.extend(a.preds.iter().cloned());
    RunManifest {
        subcommand: "eval-pose",
        args: args.to_vec(),
        seed: None,
        inputs,
        outputs: vec![a.report.clone()],
    }
    .write()
}

pub fn stats(a: &StatsArgs, args: &[String]) -> Result<()> {
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    if let Some(dir) = &a.cdf {
        fs::create_dir_all(dir)?;
    }
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "Dataset", "Images", "Boxes", "Crops", "Videos");
    for p in &a.manifests {
        let m = load_coco(p)?;
        let s = summarize(&m);
        println!("{:<24} {:>8} {:>8} {:>8} {:>8}", s.name, s.images, s.annotations, s.generated_crops, s.videos);
        if let Some(dir) = &a.cdf {
            let stem = stem_of(p);
            let all = bbox_ratio_cdf_where(&m, |_| true);
            let path = dir.join(format!("{stem}.csv"));
            all.write_csv(&path)?;
            outputs.push(path);
            if s.generated_crops > 0 {
                let src = bbox_ratio_cdf_where(&m, |i| i.provenance.is_none());
                let crops = bbox_ratio_cdf_where(&m, |i| i.provenance.is_some());
                for (suffix, cdf) in [("source", &src), ("crops", &crops)] {
                    let path = dir.join(format!("{stem}_{suffix}.csv"));
                    cdf.write_csv(&path)?;
                    outputs.push(path);
                }
                let dw = cdf_dominance(&crops.width, &src.width, 100);
                let dh = cdf_dominance(&crops.height, &src.height, 100);
                println!(
                    "  crops vs source: width {} ({} of 100 quantiles strictly larger), height {} ({})",
                    if dw.holds() { "dominates" } else { "does not dominate" },
                    dw.strict,
                    if dh.holds() { "dominates" } else { "does not dominate" },
                    dh.strict
                );
            }
        }
        summaries.push(s);
    }
    if let Some(path) = &a.json {
        ensure_parent(path)?;
        let mut text = serde_json::to_string_pretty(&summaries)?;
        text.push('\n');
        fs::write(path, text)?;
        outputs.push(path.clone());
    }
    if outputs.is_empty() {
        return Ok(());
    }
    RunManifest {
        subcommand: "stats",
        args: args.to_vec(),
        seed: None,
        inputs: a.manifests.clone(),
        outputs,
    }
    .write()
}
