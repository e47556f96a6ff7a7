//! Pinhole camera model, rigid transforms, and projective correspondence.
//!
//! Pixel coordinates are continuous with integer values at pixel centers;
//! the image origin is the top-left corner, `x` grows rightward and `y`
//! downward. Rotation is parameterized by an axis-angle 3-vector with the
//! closed-form exponential; rotation and translation form a joint 6-vector
//! with no SE(3) coupling between the two blocks.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3, Vector6};
use thiserror::Error;

/// Points closer than this to the camera plane count as behind the camera.
pub const EPS_DEPTH: f64 = 1e-6;

/// Guard band, in pixels, for in-bounds checks. Absorbs the few-ulp noise of
/// projecting through an identity transform.
pub const EPS_BOUNDS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation matrix is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("rotation angle {0} too close to pi for log map")]
    AngleNearPi(f64),
    #[error("point is behind the camera (depth {0:.3e})")]
    BehindCamera(f64),
}

/// Pinhole intrinsics `K` with the image size they refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64) || !(cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self::new_unchecked(fx, fy, cx, cy, width, height))
    }

    /// Skips the principal-point bounds check. Used for per-level scaled
    /// intrinsics and for degenerate test configurations.
    pub fn new_unchecked(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Intrinsics of pyramid level `level`: focal lengths and principal
    /// point divided by `2^level`, image size floored accordingly.
    pub fn scaled_for_level(&self, level: usize) -> CameraIntrinsics {
        let s = (1u64 << level) as f64;
        Self::new_unchecked(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width >> level,
            self.height >> level,
        )
    }
}

/// Rigid motion `X_out = R X + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        let dev = t.orthonormality_deviation();
        if dev > 1e-9 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Max absolute deviation of `R^T R` from identity plus `|det R - 1|`.
    pub fn orthonormality_deviation(&self) -> f64 {
        let rtr = self.rotation.transpose() * self.rotation;
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((rtr[(i, j)] - target).abs());
            }
        }
        dev.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Minimal 6-parameter pose: axis-angle rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseVector {
    pub fn zero() -> Self {
        Self {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Self {
            rotation: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        )
    }

    pub fn component(&self, i: usize) -> f64 {
        match i {
            0 => self.rotation.x,
            1 => self.rotation.y,
            2 => self.rotation.z,
            3 => self.translation.x,
            4 => self.translation.y,
            5 => self.translation.z,
            _ => panic!("pose component index {i} out of range"),
        }
    }

    pub fn component_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.rotation.x,
            1 => &mut self.rotation.y,
            2 => &mut self.rotation.z,
            3 => &mut self.translation.x,
            4 => &mut self.translation.y,
            5 => &mut self.translation.z,
            _ => panic!("pose component index {i} out of range"),
        }
    }
}

#[inline]
fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues rotation for an axis-angle vector.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let wx = hat(w);
    if theta2 < 1e-24 {
        // Second-order Taylor expansion near zero.
        return Matrix3::identity() + wx + wx * wx * 0.5;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + wx * a + wx * wx * b
}

/// Axis-angle vector of a rotation matrix. Fails for angles within `1e-6`
/// of pi, where the direction becomes ambiguous.
pub fn rotation_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta >= std::f64::consts::PI - 1e-6 {
        return Err(GeometryError::AngleNearPi(theta));
    }
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-9 {
        // sin(theta)/theta -> 1; v = 2 sin(theta) * axis.
        return Ok(v * 0.5);
    }
    Ok(v * (theta / (2.0 * theta.sin())))
}

/// Exponential of the joint 6-vector: Rodrigues on the rotation block,
/// translation copied through.
pub fn exp_map(v: &PoseVector) -> RigidTransform {
    RigidTransform {
        rotation: rotation_exp(&v.rotation),
        translation: v.translation,
    }
}

/// Inverse of [`exp_map`].
pub fn log_map(t: &RigidTransform) -> Result<PoseVector, GeometryError> {
    Ok(PoseVector {
        rotation: rotation_log(&t.rotation)?,
        translation: t.translation,
    })
}

/// Result of projecting a target pixel into a source view.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Continuous source-image coordinate.
    pub pixel: Vector2<f64>,
    /// Depth of the transformed point in the source camera frame.
    pub source_depth: f64,
    /// False when the point lands behind the source camera.
    pub in_front: bool,
}

/// Back-projects pixel `p_t` at `depth` into camera coordinates.
pub fn backproject(p_t: Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    debug_assert!(depth > 0.0);
    Vector3::new(
        depth * ((p_t.x - k.cx) / k.fx),
        depth * ((p_t.y - k.cy) / k.fy),
        depth,
    )
}

fn project_point(p: &Vector3<f64>, k: &CameraIntrinsics) -> (Vector2<f64>, f64, bool) {
    let z = p.z;
    let in_front = z > EPS_DEPTH;
    let pixel = Vector2::new(k.fx * (p.x / z) + k.cx, k.fy * (p.y / z) + k.cy);
    (pixel, z, in_front)
}

/// Projects target pixel `p_t` with depth `depth` through `t` into a source
/// view. A behind-camera point is still mapped but flagged `in_front=false`;
/// callers must not trust the coordinate in that case.
pub fn project(
    p_t: Vector2<f64>,
    depth: f64,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Projection {
    let x = backproject(p_t, depth, k);
    let y = t.apply(&x);
    let (pixel, source_depth, in_front) = project_point(&y, k);
    Projection {
        pixel,
        source_depth,
        in_front,
    }
}

/// Derivatives of the projected source pixel.
#[derive(Debug, Clone)]
pub struct ProjectionJacobian {
    /// d p_s / d depth, a 2-vector.
    pub d_depth: Vector2<f64>,
    /// d p_s / d pose, 2x6; columns 0..3 rotation, 3..6 translation.
    pub d_pose: SMatrix<f64, 2, 6>,
}

/// Left Jacobian of the axis-angle exponential.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let wx = hat(w);
    if theta2 < 1e-24 {
        return Matrix3::identity() + wx * 0.5 + wx * wx * (1.0 / 6.0);
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + wx * a + wx * wx * b
}

/// Precomputed state for differentiating many projections through the same
/// pose: the exponential and the SO(3) left Jacobian only depend on the
/// pose, not on the pixel.
pub struct ProjectionDifferentiator {
    k: CameraIntrinsics,
    transform: RigidTransform,
    left_jacobian: Matrix3<f64>,
}

impl ProjectionDifferentiator {
    pub fn new(k: &CameraIntrinsics, pose: &PoseVector) -> Self {
        Self {
            k: *k,
            transform: exp_map(pose),
            left_jacobian: so3_left_jacobian(&pose.rotation),
        }
    }

    pub fn transform(&self) -> &RigidTransform {
        &self.transform
    }

    pub fn jacobians(
        &self,
        p_t: Vector2<f64>,
        depth: f64,
    ) -> Result<ProjectionJacobian, GeometryError> {
        let k = &self.k;
        let x = backproject(p_t, depth, k);
        let y = self.transform.apply(&x);
        if y.z <= EPS_DEPTH {
            return Err(GeometryError::BehindCamera(y.z));
        }

        let iz = 1.0 / y.z;
        let iz2 = iz * iz;
        // d p_s / d Y for the pinhole map.
        let d_pix_d_y = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * y.x * iz2,
            0.0,
            k.fy * iz,
            -k.fy * y.y * iz2,
        );

        // Y is linear in depth: dY/d depth = R * (X / depth).
        let d_y_d_depth = self.transform.rotation * (x / depth);
        let d_depth = d_pix_d_y * d_y_d_depth;

        // d(R(w) X)/dw = -[R X]_x * J_l(w); dY/dt = I.
        let rx = self.transform.rotation * x;
        let d_y_d_w = -hat(&rx) * self.left_jacobian;
        let d_pix_d_w = d_pix_d_y * d_y_d_w;

        let mut d_pose = SMatrix::<f64, 2, 6>::zeros();
        for c in 0..3 {
            d_pose[(0, c)] = d_pix_d_w[(0, c)];
            d_pose[(1, c)] = d_pix_d_w[(1, c)];
            d_pose[(0, c + 3)] = d_pix_d_y[(0, c)];
            d_pose[(1, c + 3)] = d_pix_d_y[(1, c)];
        }

        Ok(ProjectionJacobian { d_depth, d_pose })
    }
}

/// Analytic derivatives of `project(p_t, depth, K, exp_map(pose))` with
/// respect to `depth` and the pose 6-vector. Errors out for behind-camera
/// points, whose projection is not differentiable in any useful sense.
pub fn project_jacobians(
    p_t: Vector2<f64>,
    depth: f64,
    k: &CameraIntrinsics,
    pose: &PoseVector,
) -> Result<ProjectionJacobian, GeometryError> {
    ProjectionDifferentiator::new(k, pose).jacobians(p_t, depth)
}
