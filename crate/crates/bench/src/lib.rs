//! Shared fixtures for the pipeline benchmarks.

use warplab_core::geometry::{log_map, CameraIntrinsics, PoseVector};
use warplab_core::image::{ImageBuffer, InverseDepthMap};
use warplab_core::synthscene::{preset, render, RenderedScene, ScenePreset};

/// A rendered static scene split into the loss inputs.
pub struct Fixture {
    pub scene: RenderedScene,
    pub target: ImageBuffer,
    pub sources: Vec<ImageBuffer>,
    pub intrinsics: CameraIntrinsics,
    pub inv_depth: InverseDepthMap,
    pub poses: Vec<PoseVector>,
}

pub fn static_fixture() -> Fixture {
    let scene = render(&preset(ScenePreset::Static)).expect("preset renders");
    let target = scene.frames[1].image.clone();
    let sources = vec![scene.frames[0].image.clone(), scene.frames[2].image.clone()];
    let intrinsics = scene.spec.intrinsics;
    let inv_depth =
        InverseDepthMap::from_depth(&scene.frames[1].depth).expect("positive depths");
    let poses = vec![
        log_map(&scene.relative_pose(1, 0)).expect("small rotation"),
        log_map(&scene.relative_pose(1, 2)).expect("small rotation"),
    ];
    Fixture {
        scene,
        target,
        sources,
        intrinsics,
        inv_depth,
        poses,
    }
}
