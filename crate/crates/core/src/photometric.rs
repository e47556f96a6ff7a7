//! Photometric error and regularization: the SSIM+L1 mix and the
//! edge-aware smoothness term.
//!
//! SSIM uses 3x3 box-filtered local statistics with C1=0.01^2, C2=0.03^2
//! and edge-replicate padding; the small window keeps the receptive field
//! usable at the coarsest pyramid scale. The L1 term is channel-averaged so
//! the error stays in [0,1] regardless of channel count.

use crate::grid::Grid;
use crate::image::{image_gradients, ImageBuffer, InverseDepthMap};
use crate::parallel::{ordered_row_map, ordered_row_sum};
use thiserror::Error;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WEIGHT: f64 = 0.85;
const L1_WEIGHT: f64 = 0.15;

/// Error maps may exceed 1 only by rounding noise.
pub const ERROR_MAP_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PhotometricError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("error value {value} at index {index} is negative or not finite")]
    BadErrorValue { index: usize, value: f64 },
    #[error("mean inverse depth {0} is not positive")]
    NonPositiveMeanDepth(f64),
}

/// Per-pixel nonnegative photometric error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap(Grid<f64>);

impl ErrorMap {
    /// Validates finiteness and nonnegativity. The [0, 1+eps] bound is a
    /// property of [`photometric_error`] outputs, not of every error map
    /// (pooled statistics are also taken over synthetic diagnostic maps).
    pub fn new(grid: Grid<f64>) -> Result<Self, PhotometricError> {
        for (index, &value) in grid.data().iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(PhotometricError::BadErrorValue { index, value });
            }
        }
        Ok(Self(grid))
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

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

#[inline]
fn clamp_index(v: isize, max: usize) -> usize {
    v.clamp(0, max as isize) as usize
}

/// Local window statistics for one channel pair at one pixel.
#[derive(Debug, Clone, Copy, Default)]
struct WindowStats {
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn window_stats(a: &ImageBuffer, b: &ImageBuffer, x: usize, y: usize, c: usize) -> WindowStats {
    let w = a.width();
    let h = a.height();
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for dy in -1..=1isize {
        let yy = clamp_index(y as isize + dy, h - 1);
        for dx in -1..=1isize {
            let xx = clamp_index(x as isize + dx, w - 1);
            let va = a.value(xx, yy, c);
            let vb = b.value(xx, yy, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let n = 9.0;
    let mu_a = sa / n;
    let mu_b = sb / n;
    WindowStats {
        mu_a,
        mu_b,
        var_a: saa / n - mu_a * mu_a,
        var_b: sbb / n - mu_b * mu_b,
        cov: sab / n - mu_a * mu_b,
    }
}

#[inline]
fn ssim_from_stats(s: &WindowStats) -> f64 {
    let n1 = 2.0 * s.mu_a * s.mu_b + SSIM_C1;
    let n2 = 2.0 * s.cov + SSIM_C2;
    let d1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + SSIM_C1;
    let d2 = s.var_a + s.var_b + SSIM_C2;
    (n1 * n2) / (d1 * d2)
}

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), PhotometricError> {
    if !a.same_shape(b) {
        if a.channels() != b.channels() {
            return Err(PhotometricError::ChannelMismatch(a.channels(), b.channels()));
        }
        return Err(PhotometricError::ShapeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// Channel-averaged per-pixel SSIM in [-1, 1].
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<Grid<f64>, PhotometricError> {
    check_shapes(a, b)?;
    let w = a.width();
    let rows = ordered_row_map(a.height(), |y| {
        let mut row = vec![0.0; w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for c in 0..a.channels() {
                sum += ssim_from_stats(&window_stats(a, b, x, y, c));
            }
            *out = sum / a.channels() as f64;
        }
        row
    });
    let mut data = Vec::with_capacity(w * a.height());
    for row in rows {
        data.extend_from_slice(&row);
    }
    Ok(Grid::from_vec(w, a.height(), data).expect("sized above"))
}

/// The SSIM+L1 mix: `0.85*(1-SSIM)/2 + 0.15*|a-b|`, channel-averaged.
pub fn photometric_error(a: &ImageBuffer, b: &ImageBuffer) -> Result<ErrorMap, PhotometricError> {
    check_shapes(a, b)?;
    let w = a.width();
    let ch = a.channels() as f64;
    let rows = ordered_row_map(a.height(), |y| {
        let mut row = vec![0.0; w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut ssim = 0.0;
            let mut l1 = 0.0;
            for c in 0..a.channels() {
                ssim += ssim_from_stats(&window_stats(a, b, x, y, c));
                l1 += (a.value(x, y, c) - b.value(x, y, c)).abs();
            }
            ssim /= ch;
            l1 /= ch;
            // Rounding can push SSIM a hair past 1; keep the error
            // nonnegative so downstream invariants hold.
            *out = (SSIM_WEIGHT * 0.5 * (1.0 - ssim) + L1_WEIGHT * l1).max(0.0);
        }
        row
    });
    let mut data = Vec::with_capacity(w * a.height());
    for row in rows {
        data.extend_from_slice(&row);
    }
    ErrorMap::new(Grid::from_vec(w, a.height(), data).expect("sized above"))
}

/// Per-channel gradient of a weighted sum of photometric errors with
/// respect to the second image: given `weight(p)` multiplying `PE(p)` in
/// some scalar objective, returns d objective / d b(q, c). The SSIM window
/// spreads each pixel's influence over its 3x3 neighborhood, which the
/// gather below mirrors exactly, including edge-replicate multiplicity.
pub fn photometric_error_backward(
    a: &ImageBuffer,
    b: &ImageBuffer,
    weight: &Grid<f64>,
) -> Result<Vec<Grid<f64>>, PhotometricError> {
    check_shapes(a, b)?;
    let w = a.width();
    let h = a.height();
    let channels = a.channels();
    let ch = channels as f64;

    // coef[o][c] holds, per window-center pixel p, the derivative of
    // weight(p)*PE(p) with respect to the sample at window offset o.
    let offsets: [(isize, isize); 9] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (-1, 0),
        (0, 0),
        (1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    let mut coef: Vec<Vec<Grid<f64>>> = (0..9)
        .map(|_| (0..channels).map(|_| Grid::from_elem(w, h, 0.0)).collect())
        .collect();

    // Coefficient rows can be produced in parallel; they are copied back in
    // row order afterwards.
    let rows: Vec<Vec<Vec<f64>>> = ordered_row_map(h, |y| {
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; w * channels]; 9];
        for x in 0..w {
            let wp = *weight.at(x, y);
            if wp == 0.0 {
                continue;
            }
            for c in 0..channels {
                let st = window_stats(a, b, x, y, c);
                let n1 = 2.0 * st.mu_a * st.mu_b + SSIM_C1;
                let n2 = 2.0 * st.cov + SSIM_C2;
                let d1 = st.mu_a * st.mu_a + st.mu_b * st.mu_b + SSIM_C1;
                let d2 = st.var_a + st.var_b + SSIM_C2;
                let s = (n1 * n2) / (d1 * d2);
                let inv_d1d2 = 1.0 / (d1 * d2);
                for (oi, &(dx, dy)) in offsets.iter().enumerate() {
                    let xx = clamp_index(x as isize + dx, w - 1);
                    let yy = clamp_index(y as isize + dy, h - 1);
                    let av = a.value(xx, yy, c);
                    let bv = b.value(xx, yy, c);
                    // Derivatives of the window statistics w.r.t. this
                    // sample of b (one ninth per occurrence).
                    let dn1 = 2.0 * st.mu_a / 9.0;
                    let dn2 = 2.0 * (av - st.mu_a) / 9.0;
                    let dd1 = 2.0 * st.mu_b / 9.0;
                    let dd2 = 2.0 * (bv - st.mu_b) / 9.0;
                    let ds = (dn1 * n2 + n1 * dn2 - s * (dd1 * d2 + d1 * dd2)) * inv_d1d2;
                    let mut g = -SSIM_WEIGHT * 0.5 * ds / ch;
                    if dx == 0 && dy == 0 {
                        let diff = bv - a.value(x, y, c);
                        if diff != 0.0 {
                            g += L1_WEIGHT * diff.signum() / ch;
                        }
                    }
                    out[oi][x * channels + c] = wp * g;
                }
            }
        }
        out
    });
    for (y, row) in rows.into_iter().enumerate() {
        for (oi, plane) in row.into_iter().enumerate() {
            for x in 0..w {
                for c in 0..channels {
                    *coef[oi][c].at_mut(x, y) = plane[x * channels + c];
                }
            }
        }
    }

    // Gather: for sample position q, sum the contributions of every window
    // whose clamped offset lands on q. inv_range(o, q) enumerates the window
    // centers p with clamp(p + o) == q along one axis.
    let inv_range = |offset: isize, q: usize, n: usize| -> Vec<usize> {
        let mut ps = Vec::with_capacity(2);
        let qi = q as isize;
        let direct = qi - offset;
        if direct >= 0 && (direct as usize) < n {
            ps.push(direct as usize);
        }
        // Border replication: clamp also maps the border center onto itself
        // for the outward offset.
        if q == 0 && offset == -1 {
            ps.push(0);
        }
        if q == n - 1 && offset == 1 {
            ps.push(n - 1);
        }
        ps.sort_unstable();
        ps.dedup();
        ps
    };

    let mut grads: Vec<Grid<f64>> = Vec::with_capacity(channels);
    for c in 0..channels {
        let rows: Vec<Vec<f64>> = ordered_row_map(h, |qy| {
            let mut row = vec![0.0; w];
            for (qx, out) in row.iter_mut().enumerate() {
                let mut sum = 0.0;
                for (oi, &(dx, dy)) in offsets.iter().enumerate() {
                    for &py in &inv_range(dy, qy, h) {
                        for &px in &inv_range(dx, qx, w) {
                            sum += *coef[oi][c].at(px, py);
                        }
                    }
                }
                *out = sum;
            }
            row
        });
        let mut data = Vec::with_capacity(w * h);
        for row in rows {
            data.extend_from_slice(&row);
        }
        grads.push(Grid::from_vec(w, h, data).expect("sized above"));
    }
    Ok(grads)
}

/// Edge-aware smoothness of the mean-normalized inverse depth: the mean of
/// `|dx d*| e^{-|dx I|} + |dy d*| e^{-|dy I|}` with forward differences and
/// zero-padded last row/column.
pub fn smoothness_loss(
    d: &InverseDepthMap,
    target: &ImageBuffer,
) -> Result<f64, PhotometricError> {
    if d.width() != target.width() || d.height() != target.height() {
        return Err(PhotometricError::ShapeMismatch(
            d.width(),
            d.height(),
            target.width(),
            target.height(),
        ));
    }
    let mean = d.grid().mean();
    if mean <= 0.0 {
        return Err(PhotometricError::NonPositiveMeanDepth(mean));
    }
    let (wx, wy) = image_gradients(target);
    let w = d.width();
    let h = d.height();
    let total = ordered_row_sum(h, |y| {
        let mut s = 0.0;
        for x in 0..w {
            let dv = d.value(x, y) / mean;
            if x + 1 < w {
                let gx = (d.value(x + 1, y) / mean - dv).abs();
                s += gx * (-*wx.at(x, y)).exp();
            }
            if y + 1 < h {
                let gy = (d.value(x, y + 1) / mean - dv).abs();
                s += gy * (-*wy.at(x, y)).exp();
            }
        }
        s
    });
    Ok(total / (w * h) as f64)
}

/// Gradient of [`smoothness_loss`] with respect to the inverse depth map.
///
/// With `u = d / mean(d)` the loss is `S(d) / mean(d)` where `S` is the mean
/// of edge-weighted absolute raw differences, so the chain rule adds a
/// `-L/mean * 1/N` term through the normalizer.
pub fn smoothness_gradient(
    d: &InverseDepthMap,
    target: &ImageBuffer,
) -> Result<Grid<f64>, PhotometricError> {
    if d.width() != target.width() || d.height() != target.height() {
        return Err(PhotometricError::ShapeMismatch(
            d.width(),
            d.height(),
            target.width(),
            target.height(),
        ));
    }
    let mean = d.grid().mean();
    if mean <= 0.0 {
        return Err(PhotometricError::NonPositiveMeanDepth(mean));
    }
    let (wx, wy) = image_gradients(target);
    let w = d.width();
    let h = d.height();
    let n = (w * h) as f64;

    // d L / d d(q) = (1/mean) * dS/dd(q) - (S/mean^2) / N, with S the mean
    // of weighted |forward differences| of the raw inverse depth.
    let mut raw = Grid::from_elem(w, h, 0.0);
    let mut s_total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dv = d.value(x, y);
            if x + 1 < w {
                let diff = d.value(x + 1, y) - dv;
                let wgt = (-*wx.at(x, y)).exp() / n;
                s_total += diff.abs() * wgt;
                if diff != 0.0 {
                    let g = diff.signum() * wgt;
                    *raw.at_mut(x + 1, y) += g;
                    *raw.at_mut(x, y) -= g;
                }
            }
            if y + 1 < h {
                let diff = d.value(x, y + 1) - dv;
                let wgt = (-*wy.at(x, y)).exp() / n;
                s_total += diff.abs() * wgt;
                if diff != 0.0 {
                    let g = diff.signum() * wgt;
                    *raw.at_mut(x, y + 1) += g;
                    *raw.at_mut(x, y) -= g;
                }
            }
        }
    }
    let mean_term = s_total / (mean * mean) / n;
    Ok(Grid::from_fn(w, h, |x, y| *raw.at(x, y) / mean - mean_term))
}
