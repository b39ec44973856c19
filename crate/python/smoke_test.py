"""End-to-end check of the Python bindings: generate, render, augment,
split, merge and evaluate a small scene."""

import json
import math
import sys
import tempfile
from pathlib import Path

import synthherd as sh


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)


def main():
    scene = sh.Scene.generate(
        instances=10, cameras=2, seed=7, width=960, height=540, focal=1400.0,
        extent=8.0, distance=(12.0, 20.0),
    )
    check(scene.camera_count == 2, "two cameras placed")
    check(scene.instance_count + scene.discarded == 10, "placements accounted for")
    again = sh.Scene.from_json(scene.to_json())
    check(again.to_json() == scene.to_json(), "scene JSON round trip")

    frame = scene.render(0)
    mask = frame.mask()
    check(len(mask) == frame.width * frame.height, "mask size")
    for inst, (x, y, w, h), pixels in frame.instance_boxes():
        check(pixels == sum(1 for v in mask if v == inst), f"pixel count of {inst}")
        check(0 <= x and x + w <= frame.width and 0 <= y and y + h <= frame.height, "box inside frame")
    depth = frame.depth()
    check(all(math.isinf(d) for d, m in zip(depth, mask) if m == 0), "background depth is inf")

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        m = scene.write_dataset(root, name="herd")
        m.validate()
        check(m.schema == "zebra27" and m.image_count == 2, "manifest shape")
        check(m.annotation_count > 0, "annotations produced")
        check(sh.Manifest.from_json(m.to_json()).to_json() == m.to_json(), "canonical round trip")
        doc = json.loads(m.to_json())
        check(len(doc["categories"][0]["keypoints"]) == 27, "27 keypoint names")

        aug = m.augment(root, area_threshold=5000.0, max_offset=150, seed=7)
        aug.validate()
        crops = aug.image_count - m.image_count
        check(crops > 0, "crops generated")
        check(aug.summary()["generated_crops"] == crops, "summary counts crops")
        check((root / "crops").is_dir(), "crop files written")
        again = m.augment(root, area_threshold=5000.0, max_offset=150, seed=7)
        check(again.to_json() == aug.to_json(), "augmentation is deterministic")

        train, val, warnings = aug.split(ratio=0.8, seed=1)
        check(train.image_count + val.image_count == aug.image_count, "split covers all images")
        check(val.image_count == 0 and warnings, "one video cannot be split")

        merged = sh.Manifest.merge([m, aug])
        check(merged.image_count == m.image_count + aug.image_count, "merge keeps images")
        check(merged.name == "herd+herd", "merged name")

        labels = aug.to_yolo(root / "yolo")
        check(len(labels) == aug.image_count, "one YOLO file per image")

        gts = [(img, b) for img, _, b in m.boxes()]
        dets = [(img, b, 1.0) for img, b in gts]
        check(sh.mean_ap(dets, gts) == (1.0, 1.0), "ground truth scores mAP 1")
        check(sh.average_precision([], gts) == 0.0, "no detections score 0")
        check(sh.average_precision(dets, []) is None, "no ground truth is undefined")

        preds = [(img, inst, [(u, v) for u, v, _ in kps]) for img, inst, kps in m.keypoints()]
        correct, evaluated = sh.pck(preds, m, 0.05, filtered=True)
        check(evaluated > 0 and correct == evaluated, "ground truth keypoints score PCK 1")
        correct, _ = sh.pck([], m, 0.1)
        check(correct == 0, "missing predictions count as wrong")

        w_src, _ = m.bbox_ratio_cdf()
        w_aug, _ = aug.bbox_ratio_cdf()
        check(len(w_aug) > len(w_src), "crop boxes add ratios")

    check(abs(sh.iou((0, 0, 2, 2), (1, 1, 2, 2)) - 1 / 7) < 1e-12, "IoU of offset squares")
    check(sh.cdf_dominates([2.0, 3.0], [1.0, 2.0])[0], "shifted CDF dominates")

    try:
        sh.Manifest.from_json('{"images": [}')
        check(False, "malformed JSON rejected")
    except sh.SynthHerdError as e:
        check("1:" in str(e), "parse error carries a position")
    try:
        scene.render(5)
        check(False, "bad camera index rejected")
    except sh.SynthHerdError:
        pass

    print("smoke test passed")


if __name__ == "__main__":
    main()
