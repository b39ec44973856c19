#![allow(dead_code)]

use synthherd::scenelayout::{generate_scene, Bounds, CameraRig, SceneConfig, SceneSpec};
use synthherd::standin::pose_library;

/// Small herd in a tight pen so most animals land in view.
pub fn small_scene_config(width: u32, height: u32, focal: f64) -> SceneConfig {
    SceneConfig {
        instance_count: 6,
        bounds: Bounds {
            min: [-10.0, -10.0, 0.0],
            max: [10.0, 10.0, 0.0],
        },
        scale_range: (0.8, 1.2),
        camera_count: 1,
        distance_range: (12.0, 40.0),
        rig: CameraRig::centered(width, height, focal),
        seed: 0,
    }
}

pub fn small_scene(seed: u64, instances: usize, cameras: usize, size: (u32, u32), focal: f64) -> SceneSpec {
    let cfg = SceneConfig {
        instance_count: instances,
        camera_count: cameras,
        seed,
        ..small_scene_config(size.0, size.1, focal)
    };
    generate_scene(&cfg, &pose_library(8, 11)).expect("scene generates")
}
