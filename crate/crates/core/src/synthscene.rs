//! Synthetic scene rendering with exact ground truth.
//!
//! Scenes are axis-aligned textured rectangles and boxes under per-frame
//! rigid motion, ray-cast per pixel with a z-buffer. Textures are procedural
//! (checker and smoothed value noise), so renders are resolution-independent
//! and reproducible from a seed alone. Every scene carries a far background
//! plane so each ray hits geometry and depth maps are total.

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::grid::{Grid, MaskMap};
use crate::image::{synthesize_view, ImageBuffer};
use crate::parallel::ordered_row_map;
use crate::photometric::{photometric_error, ErrorMap, PhotometricError};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Minimum ray parameter for a valid hit.
const RAY_EPS: f64 = 1e-9;
/// Slack for the occlusion distance comparison.
const OCCLUSION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene needs at least one primitive")]
    NoPrimitives,
    #[error("scene needs at least one frame")]
    NoFrames,
    #[error("resolution {0}x{1} below the 16x12 minimum")]
    ResolutionTooSmall(usize, usize),
    #[error("ray through pixel ({x},{y}) of frame {frame} hit no geometry")]
    RayEscaped { frame: usize, x: usize, y: usize },
    #[error("frame index {0} out of range (have {1})")]
    FrameOutOfRange(usize, usize),
    #[error(transparent)]
    Photometric(#[from] PhotometricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    #[inline]
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two in-plane axes, in a fixed order.
    #[inline]
    fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    /// Rectangle normal to `axis` at coordinate `coord`, bounded in the two
    /// remaining axes.
    Rect {
        axis: Axis,
        coord: f64,
        min: (f64, f64),
        max: (f64, f64),
    },
    /// Axis-aligned box.
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
}

#[derive(Debug, Clone)]
pub enum Texture {
    /// Two-tone checkerboard with cells of `scale` world units.
    Checker {
        scale: f64,
        bright: [f64; 3],
        dark: [f64; 3],
    },
    /// Smoothed two-octave value noise around `base` with peak-to-peak
    /// `amplitude`, lattice pitch `scale` world units.
    Noise {
        scale: f64,
        seed: u64,
        amplitude: f64,
        base: f64,
    },
    /// Constant color; the degenerate texture for low-texture regions.
    Flat { color: [f64; 3] },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        seed ^ (ix as u64).wrapping_mul(0x9e3779b97f4a7c15)
            ^ (iy as u64).wrapping_mul(0xc2b2ae3d27d4eb4f),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Quintic fade: C2-continuous, so warps of the texture interpolate well.
#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = fade(u - x0);
    let fy = fade(v - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice_value(seed, ix, iy);
    let v10 = lattice_value(seed, ix + 1, iy);
    let v01 = lattice_value(seed, ix, iy + 1);
    let v11 = lattice_value(seed, ix + 1, iy + 1);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

impl Texture {
    fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        match *self {
            Texture::Checker {
                scale,
                bright,
                dark,
            } => {
                let cell =
                    ((u / scale).floor() as i64 + (v / scale).floor() as i64).rem_euclid(2);
                if cell == 0 {
                    bright
                } else {
                    dark
                }
            }
            Texture::Noise {
                scale,
                seed,
                amplitude,
                base,
            } => {
                let mut out = [0.0; 3];
                for (c, slot) in out.iter_mut().enumerate() {
                    let s = seed.wrapping_add(c as u64).wrapping_mul(0x2545f4914f6cdd1d);
                    let coarse = value_noise(s, u / scale, v / scale);
                    let fine = value_noise(
                        s ^ 0xa076_1d64_78bd_642f,
                        u / (scale * 0.5),
                        v / (scale * 0.5),
                    );
                    let n = 0.9 * coarse + 0.1 * fine;
                    *slot = (base + amplitude * (n - 0.5)).clamp(0.005, 0.995);
                }
                out
            }
            Texture::Flat { color } => color,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
    /// Object-to-world motion applied once per frame; pose at frame `k` is
    /// this transform composed `k` times. Identity means static.
    pub motion: RigidTransform,
}

impl Primitive {
    pub fn is_static(&self) -> bool {
        (self.motion.rotation - Matrix3::identity()).norm() == 0.0
            && self.motion.translation.norm() == 0.0
    }
}

/// Declarative scene description: camera, trajectory, primitives.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera pose per frame.
    pub trajectory: Vec<RigidTransform>,
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() {
            return Err(SceneError::NoPrimitives);
        }
        if self.trajectory.is_empty() {
            return Err(SceneError::NoFrames);
        }
        if self.intrinsics.width < 16 || self.intrinsics.height < 12 {
            return Err(SceneError::ResolutionTooSmall(
                self.intrinsics.width,
                self.intrinsics.height,
            ));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }
}

/// One rendered frame with its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image: ImageBuffer,
    pub depth: Grid<f64>,
    /// World-to-camera pose.
    pub pose: RigidTransform,
    /// True where the pixel lies on a non-static primitive.
    pub motion_mask: MaskMap,
    /// Index of the primitive each pixel hit.
    pub hit_index: Grid<usize>,
}

/// A rendered scene bundles the frames with the spec that produced them,
/// which occlusion queries need (moving primitives must be intersected at
/// the other frame's configuration).
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub spec: SceneSpec,
    pub frames: Vec<RenderedFrame>,
}

fn ray_rect(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    axis: Axis,
    coord: f64,
    min: (f64, f64),
    max: (f64, f64),
) -> Option<(f64, f64, f64)> {
    let a = axis.index();
    let da = dir[a];
    if da.abs() < 1e-15 {
        return None;
    }
    let s = (coord - origin[a]) / da;
    if s <= RAY_EPS {
        return None;
    }
    let (u_axis, v_axis) = axis.others();
    let u = origin[u_axis] + s * dir[u_axis];
    let v = origin[v_axis] + s * dir[v_axis];
    if u < min.0 || u > max.0 || v < min.1 || v > max.1 {
        return None;
    }
    Some((s, u, v))
}

fn ray_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    min: &Vector3<f64>,
    max: &Vector3<f64>,
) -> Option<(f64, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let t1 = (min[a] - origin[a]) / dir[a];
        let t2 = (max[a] - origin[a]) / dir[a];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            near_axis = a;
        }
        t_far = t_far.min(hi);
    }
    if t_near <= t_far && t_near > RAY_EPS {
        Some((t_near, near_axis))
    } else {
        None
    }
}

/// Nearest hit of a world-space ray against one primitive, intersected in
/// object space. Returns the ray parameter and the texture sample.
fn intersect(
    prim: &Primitive,
    world_to_obj: &RigidTransform,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, [f64; 3])> {
    let o = world_to_obj.apply(origin);
    let d = world_to_obj.rotation * dir;
    match &prim.shape {
        Shape::Rect {
            axis,
            coord,
            min,
            max,
        } => {
            let (s, u, v) = ray_rect(&o, &d, *axis, *coord, *min, *max)?;
            Some((s, prim.texture.eval(u, v)))
        }
        Shape::Cuboid { min, max } => {
            let (s, face_axis) = ray_box(&o, &d, min, max)?;
            let hit = o + d * s;
            let (u_axis, v_axis) = match face_axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            Some((s, prim.texture.eval(hit[u_axis], hit[v_axis])))
        }
    }
}

/// Object poses at a given frame: the per-frame motion composed `frame`
/// times, with the inverses cached for ray transformation.
fn object_poses(spec: &SceneSpec, frame: usize) -> Vec<(RigidTransform, RigidTransform)> {
    spec.primitives
        .iter()
        .map(|p| {
            let mut pose = RigidTransform::identity();
            for _ in 0..frame {
                pose = p.motion.compose(&pose);
            }
            let inv = pose.inverse();
            (pose, inv)
        })
        .collect()
}

struct Hit {
    depth: f64,
    color: [f64; 3],
    prim: usize,
}

fn cast_ray(
    spec: &SceneSpec,
    poses: &[(RigidTransform, RigidTransform)],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (idx, prim) in spec.primitives.iter().enumerate() {
        let (_, world_to_obj) = &poses[idx];
        if let Some((s, color)) = intersect(prim, world_to_obj, origin, dir) {
            if best.as_ref().map_or(true, |b| s < b.depth) {
                best = Some(Hit {
                    depth: s,
                    color,
                    prim: idx,
                });
            }
        }
    }
    best
}

/// Renders every frame of the scene by per-pixel ray casting.
pub fn render(spec: &SceneSpec) -> Result<RenderedScene, SceneError> {
    spec.validate()?;
    let k = &spec.intrinsics;
    let w = k.width;
    let h = k.height;
    let mut frames = Vec::with_capacity(spec.frame_count());
    for (frame_idx, pose) in spec.trajectory.iter().enumerate() {
        let poses = object_poses(spec, frame_idx);
        let cam_to_world = pose.inverse();
        let center = cam_to_world.translation;

        let rows = ordered_row_map(h, |y| {
            let mut img_row = vec![0.0f64; w * 3];
            let mut depth_row = vec![0.0f64; w];
            let mut motion_row = vec![false; w];
            let mut hit_row = vec![0usize; w];
            let mut escaped = None;
            for x in 0..w {
                // Ray scaled so the parameter equals camera-frame depth.
                // Depth, motion and hit index are point samples at the
                // pixel center; the intensity is anti-aliased over a 2x2
                // subpixel grid so warps of the raster interpolate cleanly.
                let dir_cam = Vector3::new(
                    (x as f64 - k.cx) / k.fx,
                    (y as f64 - k.cy) / k.fy,
                    1.0,
                );
                let dir_world = cam_to_world.rotation * dir_cam;
                match cast_ray(spec, &poses, &center, &dir_world) {
                    Some(hit) => {
                        depth_row[x] = hit.depth;
                        motion_row[x] = !spec.primitives[hit.prim].is_static();
                        hit_row[x] = hit.prim;
                    }
                    None => {
                        escaped = Some((x, y));
                    }
                }
                let mut color = [0.0f64; 3];
                for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let dir_cam = Vector3::new(
                        (x as f64 + sx - k.cx) / k.fx,
                        (y as f64 + sy - k.cy) / k.fy,
                        1.0,
                    );
                    let dir_world = cam_to_world.rotation * dir_cam;
                    match cast_ray(spec, &poses, &center, &dir_world) {
                        Some(hit) => {
                            for c in 0..3 {
                                color[c] += 0.25 * hit.color[c];
                            }
                        }
                        None => {
                            escaped = Some((x, y));
                        }
                    }
                }
                img_row[x * 3..x * 3 + 3].copy_from_slice(&color);
            }
            (img_row, depth_row, motion_row, hit_row, escaped)
        });

        let mut img = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h);
        let mut motion = Vec::with_capacity(w * h);
        let mut hits = Vec::with_capacity(w * h);
        for (img_row, depth_row, motion_row, hit_row, escaped) in rows {
            if let Some((x, y)) = escaped {
                return Err(SceneError::RayEscaped {
                    frame: frame_idx,
                    x,
                    y,
                });
            }
            img.extend_from_slice(&img_row);
            depth.extend_from_slice(&depth_row);
            motion.extend_from_slice(&motion_row);
            hits.extend_from_slice(&hit_row);
        }

        frames.push(RenderedFrame {
            image: ImageBuffer::new(w, h, 3, img).expect("texture colors are clamped"),
            depth: Grid::from_vec(w, h, depth).expect("sized above"),
            pose: *pose,
            motion_mask: MaskMap::from_vec(w, h, motion).expect("sized above"),
            hit_index: Grid::from_vec(w, h, hits).expect("sized above"),
        });
    }
    Ok(RenderedScene {
        spec: spec.clone(),
        frames,
    })
}

impl RenderedScene {
    /// Relative transform taking target-frame camera points into the source
    /// frame.
    pub fn relative_pose(&self, target: usize, source: usize) -> RigidTransform {
        self.frames[source]
            .pose
            .compose(&self.frames[target].pose.inverse())
    }

    /// Pixels of frame `t` whose surface point is not visible from frame
    /// `s`: the material point (tracked through object motion) is either
    /// outside frame `s`'s view or something else intersects the sight ray
    /// first.
    pub fn occlusion_vs(&self, t: usize, s: usize) -> Result<MaskMap, SceneError> {
        let n = self.frames.len();
        if t >= n || s >= n {
            return Err(SceneError::FrameOutOfRange(t.max(s), n));
        }
        let frame_t = &self.frames[t];
        let k = &self.spec.intrinsics;
        let w = k.width;
        let h = k.height;
        let poses_t = object_poses(&self.spec, t);
        let poses_s = object_poses(&self.spec, s);
        let cam_t = frame_t.pose.inverse();
        let cam_s_pose = &self.frames[s].pose;
        let center_s = cam_s_pose.inverse().translation;

        let rows = ordered_row_map(h, |y| {
            let mut row = vec![false; w];
            for x in 0..w {
                let depth = *frame_t.depth.at(x, y);
                let dir_cam = Vector3::new(
                    (x as f64 - k.cx) / k.fx,
                    (y as f64 - k.cy) / k.fy,
                    1.0,
                );
                let hit_world_t = cam_t.apply(&(dir_cam * depth));
                // Track the material point to its frame-s position.
                let prim = *frame_t.hit_index.at(x, y);
                let obj_point = poses_t[prim].1.apply(&hit_world_t);
                let point_s = poses_s[prim].0.apply(&obj_point);

                // Visibility from camera s.
                let cam_point = cam_s_pose.apply(&point_s);
                if cam_point.z <= RAY_EPS {
                    row[x] = true;
                    continue;
                }
                let u = k.fx * (cam_point.x / cam_point.z) + k.cx;
                let v = k.fy * (cam_point.y / cam_point.z) + k.cy;
                if u < 0.0 || u > (w - 1) as f64 || v < 0.0 || v > (h - 1) as f64 {
                    row[x] = true;
                    continue;
                }
                let dir = point_s - center_s;
                match cast_ray(&self.spec, &poses_s, &center_s, &dir) {
                    // The cast is parameterized so the target point sits at
                    // s = 1; anything strictly before it occludes.
                    Some(hit) => row[x] = hit.depth < 1.0 - OCCLUSION_TOL,
                    None => row[x] = true,
                }
            }
            row
        });
        let mut data = Vec::with_capacity(w * h);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Ok(MaskMap::from_vec(w, h, data).expect("sized above"))
    }

    /// Photometric residual between frame `t` and the warp of frame `s`
    /// using true depth and true relative pose. High exactly on occluded or
    /// moving pixels.
    pub fn ground_truth_photometric_residual(
        &self,
        t: usize,
        s: usize,
    ) -> Result<ErrorMap, SceneError> {
        let n = self.frames.len();
        if t >= n || s >= n {
            return Err(SceneError::FrameOutOfRange(t.max(s), n));
        }
        let rel = self.relative_pose(t, s);
        let (warped, _valid) = synthesize_view(
            &self.frames[s].image,
            &self.frames[t].depth,
            &self.spec.intrinsics,
            &rel,
        )
        .map_err(|_| SceneError::FrameOutOfRange(t, n))?;
        Ok(photometric_error(&self.frames[t].image, &warped)?)
    }
}

/// Morphological dilation of a mask by a square radius.
pub fn dilate_mask(mask: &MaskMap, radius: usize) -> MaskMap {
    let r = radius as isize;
    MaskMap::from_fn(mask.width(), mask.height(), |x, y| {
        for dy in -r..=r {
            for dx in -r..=r {
                let xx = x as isize + dx;
                let yy = y as isize + dy;
                if xx >= 0
                    && yy >= 0
                    && (xx as usize) < mask.width()
                    && (yy as usize) < mask.height()
                    && *mask.at(xx as usize, yy as usize)
                {
                    return true;
                }
            }
        }
        false
    })
}

/// Pixels adjacent to a relative depth step larger than 2%.
pub fn depth_discontinuities(depth: &Grid<f64>) -> MaskMap {
    MaskMap::from_fn(depth.width(), depth.height(), |x, y| {
        let d = *depth.at(x, y);
        for (dx, dy) in [(1isize, 0isize), (0, 1), (-1, 0), (0, -1)] {
            let xx = x as isize + dx;
            let yy = y as isize + dy;
            if xx >= 0
                && yy >= 0
                && (xx as usize) < depth.width()
                && (yy as usize) < depth.height()
            {
                let n = *depth.at(xx as usize, yy as usize);
                if (n - d).abs() / d.min(n) > 0.02 {
                    return true;
                }
            }
        }
        false
    })
}

impl RenderedScene {
    /// Pixels of the target frame where warp consistency cannot hold even
    /// with perfect depth and pose: occluded in one of the sources, on a
    /// moving object, or near a depth discontinuity, dilated by the 3x3
    /// photometric window plus the bilinear footprint.
    pub fn unreliable_pixels(&self, target: usize, sources: &[usize]) -> MaskMap {
        let frame = &self.frames[target];
        let mut bad = depth_discontinuities(&frame.depth);
        for y in 0..bad.height() {
            for x in 0..bad.width() {
                if *frame.motion_mask.at(x, y) {
                    *bad.at_mut(x, y) = true;
                }
            }
        }
        for &s in sources {
            let occ = self
                .occlusion_vs(target, s)
                .expect("frame indices validated by caller");
            for y in 0..bad.height() {
                for x in 0..bad.width() {
                    if *occ.at(x, y) {
                        *bad.at_mut(x, y) = true;
                    }
                }
            }
        }
        dilate_mask(&bad, 3)
    }
}

/// The canned scene geometries used as test fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// Rigid scene, gently moving camera.
    Static,
    /// Foreground rectangle occluding the background under lateral motion.
    Occlusion,
    /// An object moving with the camera at matched speed.
    CoMotion,
    /// An oncoming object moving against the camera.
    ContraMotion,
    /// A large low-texture region in an otherwise static scene.
    TexturelessPatch,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 5] = [
        ScenePreset::Static,
        ScenePreset::Occlusion,
        ScenePreset::CoMotion,
        ScenePreset::ContraMotion,
        ScenePreset::TexturelessPatch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenePreset::Static => "static",
            ScenePreset::Occlusion => "occlusion",
            ScenePreset::CoMotion => "co_motion",
            ScenePreset::ContraMotion => "contra_motion",
            ScenePreset::TexturelessPatch => "textureless_patch",
        }
    }
}

impl std::str::FromStr for ScenePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ScenePreset::Static),
            "occlusion" => Ok(ScenePreset::Occlusion),
            "co_motion" => Ok(ScenePreset::CoMotion),
            "contra_motion" => Ok(ScenePreset::ContraMotion),
            "textureless_patch" => Ok(ScenePreset::TexturelessPatch),
            other => Err(format!(
                "unknown preset '{other}' (expected static, occlusion, co_motion, \
                 contra_motion or textureless_patch)"
            )),
        }
    }
}

const PRESET_WIDTH: usize = 64;
const PRESET_HEIGHT: usize = 48;

fn preset_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(36.0, 36.0, 32.0, 24.0, PRESET_WIDTH, PRESET_HEIGHT)
        .expect("valid preset intrinsics")
}

/// World-to-camera trajectory for a camera translating by `step` per frame.
fn linear_trajectory(frames: usize, step: Vector3<f64>) -> Vec<RigidTransform> {
    (0..frames)
        .map(|k| {
            // Camera center at k*step, axes world-aligned.
            RigidTransform::from_translation(-step * k as f64)
        })
        .collect()
}

fn noise(scale: f64, seed: u64, amplitude: f64, base: f64) -> Texture {
    Texture::Noise {
        scale,
        seed,
        amplitude,
        base,
    }
}

fn static_prim(shape: Shape, texture: Texture) -> Primitive {
    Primitive {
        shape,
        texture,
        motion: RigidTransform::identity(),
    }
}

fn moving_prim(shape: Shape, texture: Texture, step: Vector3<f64>) -> Primitive {
    Primitive {
        shape,
        texture,
        motion: RigidTransform::from_translation(step),
    }
}

fn background(depth: f64, seed: u64) -> Primitive {
    static_prim(
        Shape::Rect {
            axis: Axis::Z,
            coord: depth,
            min: (-60.0, -60.0),
            max: (60.0, 60.0),
        },
        noise(8.5, seed, 0.30, 0.48),
    )
}

/// Builds one of the canned scenes at the default 64x48 resolution with
/// three frames (sources are the first and last, target the middle).
pub fn preset(p: ScenePreset) -> SceneSpec {
    let intrinsics = preset_intrinsics();
    match p {
        ScenePreset::Static => SceneSpec {
            intrinsics,
            // Lateral-dominant motion keeps the focus of expansion outside
            // the image, so every pixel moves and auto-masking has a
            // nonzero static error to beat.
            trajectory: linear_trajectory(3, Vector3::new(0.26, 0.0312, 0.0208)),
            primitives: vec![
                background(16.0, 11),
                static_prim(
                    Shape::Rect {
                        axis: Axis::Z,
                        coord: 9.5,
                        min: (-6.4, -3.4),
                        max: (-1.6, 3.4),
                    },
                    noise(3.4, 23, 0.24, 0.48),
                ),
                static_prim(
                    Shape::Rect {
                        axis: Axis::Z,
                        coord: 12.5,
                        min: (1.8, -2.4),
                        max: (6.2, 2.8),
                    },
                    noise(3.0, 37, 0.24, 0.48),
                ),
            ],
        },
        ScenePreset::Occlusion => SceneSpec {
            intrinsics,
            trajectory: linear_trajectory(3, Vector3::new(0.25, 0.0, 0.0)),
            primitives: vec![
                background(15.0, 41),
                static_prim(
                    Shape::Rect {
                        axis: Axis::Z,
                        coord: 5.0,
                        min: (-1.0, -2.0),
                        max: (2.5, 2.0),
                    },
                    noise(1.8, 53, 0.30, 0.52),
                ),
            ],
        },
        ScenePreset::CoMotion => {
            let step = Vector3::new(0.0, 0.0, 0.15);
            SceneSpec {
                intrinsics,
                trajectory: linear_trajectory(3, step),
                primitives: vec![
                    background(18.0, 61),
                    static_prim(
                        Shape::Rect {
                            axis: Axis::Z,
                            coord: 9.0,
                            min: (-7.0, -4.5),
                            max: (-2.0, 4.5),
                        },
                        noise(3.5, 67, 0.30, 0.5),
                    ),
                    // Same velocity as the camera: constant appearance.
                    moving_prim(
                        Shape::Cuboid {
                            min: Vector3::new(-1.2, -1.3, 5.6),
                            max: Vector3::new(1.4, 1.5, 7.0),
                        },
                        noise(1.2, 71, 0.48, 0.5),
                        step,
                    ),
                ],
            }
        }
        ScenePreset::ContraMotion => SceneSpec {
            intrinsics,
            trajectory: linear_trajectory(3, Vector3::new(0.0, 0.0, 0.15)),
            primitives: vec![
                background(18.0, 83),
                static_prim(
                    Shape::Rect {
                        axis: Axis::Z,
                        coord: 9.5,
                        min: (-8.0, -5.0),
                        max: (-2.2, 5.0),
                    },
                    noise(3.2, 89, 0.30, 0.5),
                ),
                // Oncoming along the camera axis: the exact geometry that
                // drives depth underestimation when unmasked.
                moving_prim(
                    Shape::Cuboid {
                        min: Vector3::new(1.6, -1.6, 5.9),
                        max: Vector3::new(4.4, 1.6, 7.3),
                    },
                    noise(0.7, 97, 0.5, 0.5),
                    Vector3::new(0.0, 0.0, -0.4),
                ),
            ],
        },
        ScenePreset::TexturelessPatch => SceneSpec {
            intrinsics,
            trajectory: linear_trajectory(3, Vector3::new(0.44, 0.053, 0.035)),
            primitives: vec![
                background(16.0, 101),
                // A flat, featureless slab dominating the center.
                static_prim(
                    Shape::Rect {
                        axis: Axis::Z,
                        coord: 13.0,
                        min: (-3.9, -2.9),
                        max: (3.9, 2.9),
                    },
                    Texture::Flat { color: [0.5; 3] },
                ),
            ],
        },
    }
}

/// A randomized static-plus-motion scene for gradient checking: two or
/// three noise-textured primitives at varied depths and a camera with a
/// small random step. Deterministic in the seed.
pub fn random_scene(seed: u64, width: usize, height: usize) -> SceneSpec {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let fx = width as f64 * 0.72;
    let intrinsics = CameraIntrinsics::new(
        fx,
        fx,
        width as f64 * 0.5,
        height as f64 * 0.5,
        width,
        height,
    )
    .expect("valid random-scene intrinsics");
    // A minimum baseline keeps the scene's projections off the bilinear
    // grid lines; a near-static camera makes a useless fixture.
    let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
    let step = Vector3::new(
        sign(&mut rng) * rng.random_range(0.02..0.05),
        sign(&mut rng) * rng.random_range(0.008..0.03),
        sign(&mut rng) * rng.random_range(0.01..0.06),
    );
    let mut primitives = vec![background(rng.random_range(13.0..19.0), seed ^ 0x5bd1)];
    let n_extra = rng.random_range(1..=2);
    for i in 0..n_extra {
        let z = rng.random_range(5.0..9.0);
        let cx = rng.random_range(-2.0..2.0);
        let cy = rng.random_range(-1.2..1.2);
        let hw = rng.random_range(1.2..2.6);
        let hh = rng.random_range(1.0..2.0);
        primitives.push(static_prim(
            Shape::Rect {
                axis: Axis::Z,
                coord: z,
                min: (cx - hw, cy - hh),
                max: (cx + hw, cy + hh),
            },
            noise(
                rng.random_range(0.9..1.6),
                seed.wrapping_mul(31).wrapping_add(i as u64),
                0.46,
                0.5,
            ),
        ));
    }
    SceneSpec {
        intrinsics,
        trajectory: linear_trajectory(3, step),
        primitives,
    }
}
