//! On-disk layout of a rendered scene and its loading for the pipeline
//! commands.
//!
//! A scene directory holds `intrinsics.txt`, `poses.txt` (camera-to-world,
//! one 3x4 line per frame), and per frame `frame_NNN.ppm`, `depth_NNN.pfm`
//! and `motion_NNN.pgm`. The target is the middle frame; all other frames
//! act as sources.

use crate::CliError;
use std::path::{Path, PathBuf};
use warplab_core::geometry::{log_map, CameraIntrinsics, PoseVector, RigidTransform};
use warplab_core::grid::Grid;
use warplab_core::image::ImageBuffer;
use warplab_core::io;
use warplab_core::synthscene::RenderedScene;

pub fn frame_image_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("frame_{idx:03}.ppm"))
}

pub fn frame_float_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("frame_{idx:03}.pfm"))
}

pub fn frame_depth_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("depth_{idx:03}.pfm"))
}

pub fn frame_motion_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("motion_{idx:03}.pgm"))
}

/// Writes a rendered scene into `dir`.
pub fn write_scene(dir: &Path, scene: &RenderedScene) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    io::write_intrinsics(&dir.join("intrinsics.txt"), &scene.spec.intrinsics)?;
    let cam_to_world: Vec<RigidTransform> =
        scene.frames.iter().map(|f| f.pose.inverse()).collect();
    io::write_pose_file(&dir.join("poses.txt"), &cam_to_world)?;
    for (i, frame) in scene.frames.iter().enumerate() {
        io::write_ppm(&frame_image_path(dir, i), &frame.image)?;
        // Lossless copy alongside the 8-bit view: the pipeline prefers it.
        io::write_pfm_color(&frame_float_path(dir, i), &frame.image)?;
        io::write_pfm(&frame_depth_path(dir, i), &frame.depth)?;
        io::write_mask_pgm(&frame_motion_path(dir, i), &frame.motion_mask)?;
    }
    Ok(())
}

/// A scene directory loaded back into memory.
pub struct SceneDir {
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera poses.
    pub poses: Vec<RigidTransform>,
    pub images: Vec<ImageBuffer>,
    pub depths: Vec<Grid<f64>>,
    pub target: usize,
    pub sources: Vec<usize>,
}

impl SceneDir {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let intrinsics = io::read_intrinsics(&dir.join("intrinsics.txt"))?;
        let cam_to_world = io::read_pose_file(&dir.join("poses.txt"))?;
        if cam_to_world.len() < 2 {
            return Err(CliError::Data(format!(
                "{}: need at least 2 frames, found {}",
                dir.display(),
                cam_to_world.len()
            )));
        }
        let poses: Vec<RigidTransform> = cam_to_world.iter().map(|t| t.inverse()).collect();
        let n = poses.len();
        let mut images = Vec::with_capacity(n);
        let mut depths = Vec::with_capacity(n);
        for i in 0..n {
            let float_path = frame_float_path(dir, i);
            if float_path.exists() {
                images.push(io::read_pfm_color(&float_path)?);
            } else {
                images.push(io::read_ppm(&frame_image_path(dir, i))?);
            }
            depths.push(io::read_pfm(&frame_depth_path(dir, i))?);
        }
        let target = n / 2;
        let sources = (0..n).filter(|&i| i != target).collect();
        Ok(Self {
            intrinsics,
            poses,
            images,
            depths,
            target,
            sources,
        })
    }

    /// Relative pose taking target-frame points into source frame `s`.
    pub fn relative_pose(&self, s: usize) -> RigidTransform {
        self.poses[s].compose(&self.poses[self.target].inverse())
    }

    /// Ground-truth relative poses of every source, as pose vectors.
    pub fn gt_pose_vectors(&self) -> Result<Vec<PoseVector>, CliError> {
        self.sources
            .iter()
            .map(|&s| {
                log_map(&self.relative_pose(s))
                    .map_err(|e| CliError::Data(format!("ground-truth pose: {e}")))
            })
            .collect()
    }

    pub fn source_images(&self) -> Vec<ImageBuffer> {
        self.sources.iter().map(|&s| self.images[s].clone()).collect()
    }

    pub fn target_image(&self) -> &ImageBuffer {
        &self.images[self.target]
    }

    pub fn target_depth(&self) -> &Grid<f64> {
        &self.depths[self.target]
    }
}
