//! Raster storage, pyramids, differentiable bilinear sampling, and view
//! synthesis.
//!
//! Intensities live in linear [0,1]; 8-bit inputs are divided by 255 at the
//! I/O boundary. Sampling outside the image is edge-clamped; exclusion of
//! such pixels is the principled mask's job, not the sampler's.

use crate::geometry::{project, CameraIntrinsics, RigidTransform, EPS_BOUNDS};
use crate::grid::{Grid, MaskMap};
use crate::parallel::par_fill_rows;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("data length {len} does not match {width}x{height}x{channels}")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0} (must be 1 or 3)")]
    BadChannels(usize),
    #[error("intensity {value} at index {index} outside [0,1] or not finite")]
    BadIntensity { index: usize, value: f64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} too small to build a 4-level pyramid")]
    TooSmallForPyramid(usize, usize),
    #[error("zero-sized target {0}x{1}")]
    ZeroTarget(usize, usize),
    #[error("inverse depth {value} at index {index} must be positive and finite")]
    BadInverseDepth { index: usize, value: f64 },
}

pub const MAX_CHANNELS: usize = 3;

/// Single- or multi-channel raster of intensities in [0,1], row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::DataLength {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(ImageError::BadIntensity { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("constant in range")
    }

    /// Builds a grayscale image from a function of pixel coordinates.
    pub fn from_fn_gray(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn from_fn_rgb(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, c: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// Channel mean at a pixel.
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let base = (y * self.width + x) * self.channels;
        let mut sum = 0.0;
        for c in 0..self.channels {
            sum += self.data[base + c];
        }
        sum / self.channels as f64
    }
}

/// Bilinear sample with its analytic spatial gradient.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub value: [f64; MAX_CHANNELS],
    pub grad_x: [f64; MAX_CHANNELS],
    pub grad_y: [f64; MAX_CHANNELS],
    pub in_bounds: bool,
}

#[inline]
fn sanitize(coord: f64, max: f64) -> f64 {
    if coord.is_finite() {
        coord.clamp(0.0, max)
    } else {
        0.0
    }
}

/// Edge-clamped bilinear sampling at a continuous coordinate, with the exact
/// analytic gradient of the clamped interpolant. `in_bounds` reports whether
/// `p` lies inside `[0, w-1] x [0, h-1]` (with a tiny guard band).
pub fn bilinear_sample(img: &ImageBuffer, px: f64, py: f64) -> Sample {
    let w = img.width();
    let h = img.height();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;

    let in_x = px >= -EPS_BOUNDS && px <= max_x + EPS_BOUNDS;
    let in_y = py >= -EPS_BOUNDS && py <= max_y + EPS_BOUNDS;
    let in_bounds = in_x && in_y && px.is_finite() && py.is_finite();

    let cx = sanitize(px, max_x);
    let cy = sanitize(py, max_y);
    let x0 = cx.floor().min(max_x) as usize;
    let y0 = cy.floor().min(max_y) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;

    let mut value = [0.0; MAX_CHANNELS];
    let mut grad_x = [0.0; MAX_CHANNELS];
    let mut grad_y = [0.0; MAX_CHANNELS];
    // The clamped interpolant is constant past the border, so its derivative
    // vanishes in a clamped direction.
    let dx_active = px > 0.0 && px < max_x;
    let dy_active = py > 0.0 && py < max_y;
    for c in 0..img.channels() {
        let v00 = img.value(x0, y0, c);
        let v10 = img.value(x1, y0, c);
        let v01 = img.value(x0, y1, c);
        let v11 = img.value(x1, y1, c);
        value[c] = v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy;
        if dx_active {
            grad_x[c] = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        }
        if dy_active {
            grad_y[c] = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
        }
    }

    Sample {
        value,
        grad_x,
        grad_y,
        in_bounds,
    }
}

/// Positive per-pixel depth in scene units.
pub type DepthMap = Grid<f64>;

/// Per-pixel positive inverse depth, the optimization variable.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap(Grid<f64>);

impl InverseDepthMap {
    pub fn new(grid: Grid<f64>) -> Result<Self, ImageError> {
        for (index, &value) in grid.data().iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(ImageError::BadInverseDepth { index, value });
            }
        }
        Ok(Self(grid))
    }

    pub fn from_depth(depth: &DepthMap) -> Result<Self, ImageError> {
        Self::new(depth.map(|&d| 1.0 / d))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(Grid::from_elem(width, height, value))
    }

    #[inline]
    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        *self.0.at(x, y)
    }

    pub fn to_depth(&self) -> DepthMap {
        self.0.map(|&d| 1.0 / d)
    }

    /// Box-downsampled half-resolution copy. Positive values stay positive.
    pub fn downsample2x(&self) -> InverseDepthMap {
        InverseDepthMap(downsample2x_scalar(&self.0))
    }

    /// The pyramid levels used by the multi-scale loss, level 0 first: up
    /// to four, fewer when the map runs out of pixels to halve.
    pub fn pyramid(&self) -> Vec<InverseDepthMap> {
        let mut levels = vec![self.clone()];
        for _ in 1..4 {
            let prev = levels.last().unwrap();
            if prev.width() / 2 == 0 || prev.height() / 2 == 0 {
                break;
            }
            levels.push(prev.downsample2x());
        }
        levels
    }
}

/// Box-filter 2x downsampling of a scalar grid (odd trailing row/column
/// dropped).
pub fn downsample2x_scalar(grid: &Grid<f64>) -> Grid<f64> {
    let w = grid.width() / 2;
    let h = grid.height() / 2;
    Grid::from_fn(w, h, |x, y| {
        0.25 * (grid.at(2 * x, 2 * y)
            + grid.at(2 * x + 1, 2 * y)
            + grid.at(2 * x, 2 * y + 1)
            + grid.at(2 * x + 1, 2 * y + 1))
    })
}

/// Box-filter 2x downsampling of an image.
pub fn downsample2x(img: &ImageBuffer) -> ImageBuffer {
    let w = img.width() / 2;
    let h = img.height() / 2;
    let ch = img.channels();
    let mut data = vec![0.0; w * h * ch];
    par_fill_rows(&mut data, w * ch, |y, row| {
        for x in 0..w {
            for c in 0..ch {
                row[x * ch + c] = 0.25
                    * (img.value(2 * x, 2 * y, c)
                        + img.value(2 * x + 1, 2 * y, c)
                        + img.value(2 * x, 2 * y + 1, c)
                        + img.value(2 * x + 1, 2 * y + 1, c));
            }
        }
    });
    ImageBuffer::new(w, h, ch, data).expect("averages of in-range values stay in range")
}

/// Bilinear resampling to an arbitrary size, pixel-center aligned.
pub fn upsample_to(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroTarget(width, height));
    }
    let ch = img.channels();
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let mut data = vec![0.0; width * height * ch];
    par_fill_rows(&mut data, width * ch, |y, row| {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let s = bilinear_sample(img, src_x, src_y);
            for c in 0..ch {
                row[x * ch + c] = s.value[c];
            }
        }
    });
    ImageBuffer::new(width, height, ch, data)
}

/// Bilinear resampling of a scalar grid, pixel-center aligned. Used when a
/// coarse inverse-depth estimate seeds a finer level.
pub fn upsample_scalar_to(
    grid: &Grid<f64>,
    width: usize,
    height: usize,
) -> Result<Grid<f64>, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroTarget(width, height));
    }
    let sx = grid.width() as f64 / width as f64;
    let sy = grid.height() as f64 / height as f64;
    let max_x = (grid.width() - 1) as f64;
    let max_y = (grid.height() - 1) as f64;
    Ok(Grid::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let x0 = fx.floor().min(max_x) as usize;
        let y0 = fy.floor().min(max_y) as usize;
        let x1 = (x0 + 1).min(grid.width() - 1);
        let y1 = (y0 + 1).min(grid.height() - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        grid.at(x0, y0) * (1.0 - ax) * (1.0 - ay)
            + grid.at(x1, y0) * ax * (1.0 - ay)
            + grid.at(x0, y1) * (1.0 - ax) * ay
            + grid.at(x1, y1) * ax * ay
    }))
}

/// Four-level image pyramid; each level is a 2x box downsampling of the
/// previous one.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<ImageBuffer>,
}

impl Pyramid {
    pub const LEVELS: usize = 4;

    pub fn build(img: &ImageBuffer) -> Result<Self, ImageError> {
        if img.width() >> (Self::LEVELS - 1) == 0 || img.height() >> (Self::LEVELS - 1) == 0 {
            return Err(ImageError::TooSmallForPyramid(img.width(), img.height()));
        }
        let mut levels = vec![img.clone()];
        for _ in 1..Self::LEVELS {
            levels.push(downsample2x(levels.last().unwrap()));
        }
        Ok(Self { levels })
    }

    #[inline]
    pub fn level(&self, r: usize) -> &ImageBuffer {
        &self.levels[r]
    }

    pub fn levels(&self) -> &[ImageBuffer] {
        &self.levels
    }
}

/// Warped image plus its validity map (in-bounds and in front of the
/// camera); the validity map doubles as the principled mask.
pub fn synthesize_view(
    source: &ImageBuffer,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<(ImageBuffer, MaskMap), ImageError> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(ImageError::ShapeMismatch(
            depth.width(),
            depth.height(),
            k.width,
            k.height,
        ));
    }
    if source.width() != k.width || source.height() != k.height {
        return Err(ImageError::ShapeMismatch(
            source.width(),
            source.height(),
            k.width,
            k.height,
        ));
    }
    let w = k.width;
    let h = k.height;
    let ch = source.channels();
    let rows = crate::parallel::ordered_row_map(h, |y| {
        let mut img_row = vec![0.0; w * ch];
        let mut mask_row = vec![false; w];
        for x in 0..w {
            let d = *depth.at(x, y);
            let proj = project(nalgebra::Vector2::new(x as f64, y as f64), d, k, t);
            let s = bilinear_sample(source, proj.pixel.x, proj.pixel.y);
            img_row[x * ch..(x + 1) * ch].copy_from_slice(&s.value[..ch]);
            mask_row[x] = proj.in_front && s.in_bounds;
        }
        (img_row, mask_row)
    });
    let mut data = Vec::with_capacity(w * h * ch);
    let mut valid = Vec::with_capacity(w * h);
    for (img_row, mask_row) in rows {
        data.extend_from_slice(&img_row);
        valid.extend_from_slice(&mask_row);
    }
    let img = ImageBuffer::new(w, h, ch, data)?;
    let mask = MaskMap::from_vec(w, h, valid).expect("sized above");
    Ok((img, mask))
}

/// Channel-averaged absolute forward differences, last column/row zero.
pub fn image_gradients(img: &ImageBuffer) -> (Grid<f64>, Grid<f64>) {
    let w = img.width();
    let h = img.height();
    let ch = img.channels() as f64;
    let gx = Grid::from_fn(w, h, |x, y| {
        if x + 1 >= w {
            return 0.0;
        }
        let mut sum = 0.0;
        for c in 0..img.channels() {
            sum += (img.value(x + 1, y, c) - img.value(x, y, c)).abs();
        }
        sum / ch
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        if y + 1 >= h {
            return 0.0;
        }
        let mut sum = 0.0;
        for c in 0..img.channels() {
            sum += (img.value(x, y + 1, c) - img.value(x, y, c)).abs();
        }
        sum / ch
    });
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::Vector3;

    fn ramp_image(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn_gray(w, h, |x, _| x as f64 / (w - 1) as f64).unwrap()
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(ImageBuffer::new(2, 1, 1, vec![0.0, 1.5]).is_err());
        assert!(ImageBuffer::new(2, 1, 1, vec![0.0, f64::NAN]).is_err());
        assert!(ImageBuffer::new(2, 1, 2, vec![0.0; 4]).is_err());
        assert!(ImageBuffer::new(2, 1, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn sample_at_integer_coordinate_is_exact() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        for (x, y, want) in [(0, 0, 0.0), (1, 0, 0.25), (0, 1, 0.5), (1, 1, 0.75)] {
            let s = bilinear_sample(&img, x as f64, y as f64);
            assert_eq!(s.value[0], want);
            assert!(s.in_bounds);
        }
    }

    #[test]
    fn sample_center_of_two_by_two() {
        // Values 0,1,2,3 scaled into [0,1] by 1/4 to satisfy the range
        // invariant; the expected numbers scale identically.
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        let s = bilinear_sample(&img, 0.5, 0.5);
        assert!((s.value[0] - 1.5 * 0.25).abs() < 1e-15);
        assert!((s.grad_x[0] - 1.0 * 0.25).abs() < 1e-15);
        assert!((s.grad_y[0] - 2.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn sample_outside_is_clamped_and_flagged() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        let s = bilinear_sample(&img, -1.0, -1.0);
        assert!(!s.in_bounds);
        assert_eq!(s.value[0], 0.0);
        assert_eq!(s.grad_x[0], 0.0);
        let s = bilinear_sample(&img, 5.0, 0.0);
        assert!(!s.in_bounds);
        assert_eq!(s.value[0], 0.25);
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = ImageBuffer::from_fn_gray(16, 12, |x, y| {
            (((x * 7 + y * 13) % 29) as f64) / 29.0
        })
        .unwrap();
        let step = 1e-4;
        let mut checked = 0;
        while checked < 500 {
            let x: f64 = rng.random_range(0.5..14.5);
            let y: f64 = rng.random_range(0.5..10.5);
            // Skip kink points on the integer grid.
            if (x - x.round()).abs() < 1e-3 || (y - y.round()).abs() < 1e-3 {
                continue;
            }
            let s = bilinear_sample(&img, x, y);
            let fx = (bilinear_sample(&img, x + step, y).value[0]
                - bilinear_sample(&img, x - step, y).value[0])
                / (2.0 * step);
            let fy = (bilinear_sample(&img, x, y + step).value[0]
                - bilinear_sample(&img, x, y - step).value[0])
                / (2.0 * step);
            assert!((s.grad_x[0] - fx).abs() < 1e-6);
            assert!((s.grad_y[0] - fy).abs() < 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn downsample_constant_fixed_point() {
        let img = ImageBuffer::constant(16, 12, 3, 0.5);
        let py = Pyramid::build(&img).unwrap();
        for level in py.levels() {
            for &v in level.data() {
                assert_eq!(v, 0.5);
            }
        }
    }

    #[test]
    fn downsample_two_by_two_mean() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        let down = downsample2x(&img);
        assert_eq!(down.width(), 1);
        assert_eq!(down.height(), 1);
        assert!((down.value(0, 0, 0) - 1.5 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn pyramid_dimensions_and_memory() {
        let img = ImageBuffer::constant(37, 23, 1, 0.25);
        let py = Pyramid::build(&img).unwrap();
        for (r, level) in py.levels().iter().enumerate() {
            assert_eq!(level.width(), 37 >> r);
            assert_eq!(level.height(), 23 >> r);
        }
        let total: usize = py.levels().iter().map(|l| l.data().len()).sum();
        assert!((total as f64) < (4.0 / 3.0) * (37.0 * 23.0));
    }

    #[test]
    fn down_then_up_preserves_ramp_mean() {
        let img = ramp_image(16, 12);
        let down = downsample2x(&img);
        let up = upsample_to(&down, 16, 12).unwrap();
        let mean = |im: &ImageBuffer| im.data().iter().sum::<f64>() / im.data().len() as f64;
        assert!((mean(&img) - mean(&up)).abs() < 1e-9);
    }

    #[test]
    fn upsample_constant_fixed_point() {
        let img = ImageBuffer::constant(4, 3, 1, 0.5);
        let up = upsample_to(&img, 9, 7).unwrap();
        for &v in up.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!(upsample_to(&img, 0, 7).is_err());
    }

    #[test]
    fn synthesize_identity_is_identity() {
        let k = CameraIntrinsics::new(30.0, 30.0, 8.0, 6.0, 16, 12).unwrap();
        let img = ImageBuffer::from_fn_gray(16, 12, |x, y| {
            ((x * 5 + y * 11) % 17) as f64 / 17.0
        })
        .unwrap();
        let depth = Grid::from_elem(16, 12, 7.5);
        let (syn, valid) = synthesize_view(&img, &depth, &k, &RigidTransform::identity()).unwrap();
        for (a, b) in syn.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(valid.count_true(), 16 * 12);
    }

    #[test]
    fn synthesize_forward_translation_invalidates_border_band() {
        // Camera moves backward along z so the source sees a narrower
        // field: target border pixels project outside the source image.
        let k = CameraIntrinsics::new(20.0, 20.0, 16.0, 12.0, 32, 24).unwrap();
        let img = ImageBuffer::constant(32, 24, 1, 0.5);
        let depth = Grid::from_elem(32, 24, 5.0);
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -1.0));
        let (_, valid) = synthesize_view(&img, &depth, &k, &t).unwrap();
        // Hand flow at the left edge, x=0: ray x-component (0-16)/20 = -0.8,
        // point (-4, ., 5) -> z=4 => u = 20*(-4/4)+16 = -4 < 0, out of
        // bounds. Column 0 must be invalid everywhere.
        for y in 0..24 {
            assert!(!*valid.at(0, y));
        }
        // The flow reaches zero displacement at the principal point, which
        // stays valid.
        assert!(*valid.at(16, 12));
        // Along the central row, u(x) = 1.25*(x-16)+16 >= 0 <=> x >= 3.2 and
        // u(x) <= 31 <=> x <= 28, so the valid band is columns 4..=28.
        for x in 0..32 {
            let want = (4..=28).contains(&x);
            assert_eq!(*valid.at(x, 12), want, "column {x}");
        }
    }

    #[test]
    fn synthesize_rejects_dimension_mismatch() {
        let k = CameraIntrinsics::new(30.0, 30.0, 8.0, 6.0, 16, 12).unwrap();
        let img = ImageBuffer::constant(16, 12, 1, 0.5);
        let depth = Grid::from_elem(8, 6, 5.0);
        assert!(synthesize_view(&img, &depth, &k, &RigidTransform::identity()).is_err());
    }

    #[test]
    fn gradients_of_constant_are_zero() {
        let img = ImageBuffer::constant(8, 6, 3, 0.3);
        let (gx, gy) = image_gradients(&img);
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_of_step_edge() {
        let img =
            ImageBuffer::from_fn_gray(8, 6, |x, _| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        let (gx, gy) = image_gradients(&img);
        for y in 0..6 {
            for x in 0..8 {
                let want = if x == 3 { 1.0 } else { 0.0 };
                assert_eq!(*gx.at(x, y), want);
            }
        }
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_brute_force() {
        let img = ImageBuffer::from_fn_rgb(9, 7, |x, y| {
            [
                ((x * 3 + y) % 11) as f64 / 11.0,
                ((x + y * 5) % 7) as f64 / 7.0,
                ((x * 2 + y * 3) % 13) as f64 / 13.0,
            ]
        })
        .unwrap();
        let (gx, gy) = image_gradients(&img);
        for y in 0..7 {
            for x in 0..9 {
                let bx = if x + 1 < 9 {
                    (0..3)
                        .map(|c| (img.value(x + 1, y, c) - img.value(x, y, c)).abs())
                        .sum::<f64>()
                        / 3.0
                } else {
                    0.0
                };
                let by = if y + 1 < 7 {
                    (0..3)
                        .map(|c| (img.value(x, y + 1, c) - img.value(x, y, c)).abs())
                        .sum::<f64>()
                        / 3.0
                } else {
                    0.0
                };
                assert!((gx.at(x, y) - bx).abs() < 1e-15);
                assert!((gy.at(x, y) - by).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inverse_depth_validation_and_round_trip() {
        assert!(InverseDepthMap::new(Grid::from_elem(2, 2, 0.0)).is_err());
        assert!(InverseDepthMap::new(Grid::from_elem(2, 2, -1.0)).is_err());
        let d = InverseDepthMap::constant(2, 2, 0.5).unwrap();
        let depth = d.to_depth();
        assert_eq!(*depth.at(0, 0), 2.0);
        let back = InverseDepthMap::from_depth(&depth).unwrap();
        assert_eq!(back.value(1, 1), 0.5);
    }
}
