//! The weighted multi-scale masked photometric loss and its gradient.
//!
//! The total energy is
//!
//! ```text
//! L = eta * sum_r f^r sum_s  mean_{M_s=1} PE(I_t, I_{s->t})
//!   + lambda * sum_r e^r L_es^r
//! ```
//!
//! with per-scale masks rebuilt from the current error maps and treated as
//! constants during differentiation. Per-level intrinsics divide `fx, fy,
//! cx, cy` by `2^r`; warping happens at each scale's native resolution.
//! Empty-mask terms contribute zero and are flagged in the breakdown rather
//! than failing, since they are transient during optimization.

use crate::geometry::{exp_map, CameraIntrinsics, PoseVector, ProjectionDifferentiator};
use crate::grid::{Grid, MaskMap};
use crate::image::{bilinear_sample, synthesize_view, ImageBuffer, ImageError, InverseDepthMap, Pyramid};
use crate::masking::{
    auto_mask, error_statistics, min_reprojection_mask, outlier_mask, principled_mask, MaskSet,
    MaskingError, SourceMasks,
};
use crate::parallel::{ordered_row_map, ordered_row_sum};
use crate::photometric::{
    photometric_error, photometric_error_backward, smoothness_gradient, smoothness_loss,
    ErrorMap, PhotometricError,
};
use nalgebra::{Vector2, Vector6};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no source views")]
    NoSources,
    #[error("{0} sources but {1} poses")]
    PoseCountMismatch(usize, usize),
    #[error("inverse-depth pyramid has {0} levels, need {1}")]
    MissingLevels(usize, usize),
    #[error("level {level} inverse depth is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    LevelShape {
        level: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("mask set mismatch at scale {0}")]
    MaskShape(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Photometric(#[from] PhotometricError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
}

/// Weights and toggles of the energy.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Photometric weight.
    pub eta: f64,
    /// Smoothness weight.
    pub lambda: f64,
    /// Per-scale decay of the smoothness term.
    pub e_scale: f64,
    /// Per-scale decay of the photometric term.
    pub f_scale: f64,
    /// Lower sigma multiplier of the outlier mask.
    pub l_threshold: f64,
    /// Upper sigma multiplier of the outlier mask.
    pub u_threshold: f64,
    /// Number of pyramid scales used, 1..=4.
    pub scales: usize,
    pub use_outlier: bool,
    pub use_principled: bool,
    pub use_auto: bool,
    pub use_min_reprojection: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda: 0.001,
            e_scale: 0.5,
            f_scale: 0.25,
            l_threshold: 1.0,
            u_threshold: 0.5,
            scales: 4,
            use_outlier: true,
            use_principled: true,
            use_auto: true,
            use_min_reprojection: true,
        }
    }
}

impl LossConfig {
    /// `f` must stay in (0, 1]; 1 degenerates to the unweighted multi-scale
    /// scheme, which the reduction tests rely on.
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.f_scale > 0.0 && self.f_scale <= 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "f must be in (0, 1], got {}",
                self.f_scale
            )));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("e", self.e_scale),
            ("l", self.l_threshold),
            ("u", self.u_threshold),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LossError::InvalidConfig(format!(
                    "{name} must be a nonnegative finite number, got {v}"
                )));
            }
        }
        if self.scales == 0 || self.scales > Pyramid::LEVELS {
            return Err(LossError::InvalidConfig(format!(
                "scales must be 1..=4, got {}",
                self.scales
            )));
        }
        Ok(())
    }
}

/// The geometric scale weights `w_r = f^r` for the four pyramid levels.
pub fn scale_weights(f: f64) -> [f64; 4] {
    [1.0, f, f * f, f * f * f]
}

/// Everything the energy is evaluated on. The inverse-depth pyramid is
/// passed explicitly; each level is treated as an independent variable by
/// the gradient (callers that derive coarse levels from level 0 chain the
/// downsampling adjoint themselves).
pub struct LossInputs<'a> {
    pub target: &'a ImageBuffer,
    pub sources: &'a [ImageBuffer],
    pub intrinsics: &'a CameraIntrinsics,
    pub inv_depth: &'a [InverseDepthMap],
    pub poses: &'a [PoseVector],
}

/// One `(scale, source)` photometric term.
#[derive(Debug, Clone, Copy)]
pub struct TermBreakdown {
    pub scale: usize,
    pub source: usize,
    /// `f^scale`.
    pub weight: f64,
    /// Masked mean photometric error, zero when the mask is empty.
    pub pe_mean: f64,
    pub mask_count: usize,
    /// Flags a degenerate all-masked term.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ScaleSmoothness {
    pub scale: usize,
    /// `e^scale`.
    pub weight: f64,
    pub value: f64,
}

/// The loss with every intermediate needed to reassemble it.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub photometric_part: f64,
    pub smoothness_part: f64,
    pub eta: f64,
    pub lambda: f64,
    pub terms: Vec<TermBreakdown>,
    pub smoothness: Vec<ScaleSmoothness>,
}

impl LossBreakdown {
    /// Recomputes the total from the stored parts, in the same order as the
    /// forward pass.
    pub fn reassemble(&self) -> f64 {
        let mut photometric = 0.0;
        let mut scale = usize::MAX;
        let mut scale_sum = 0.0;
        let mut scale_weight = 0.0;
        for t in &self.terms {
            if t.scale != scale {
                photometric += scale_weight * scale_sum;
                scale = t.scale;
                scale_sum = 0.0;
                scale_weight = t.weight;
            }
            scale_sum += t.pe_mean;
        }
        photometric += scale_weight * scale_sum;
        let smooth: f64 = self.smoothness.iter().map(|s| s.weight * s.value).sum();
        self.eta * photometric + self.lambda * smooth
    }

    /// Flat text table: one `r s weight pe_mean mask_count smooth` row per
    /// term plus a total line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("r s weight pe_mean mask_count smooth\n");
        for t in &self.terms {
            let smooth = self
                .smoothness
                .iter()
                .find(|s| s.scale == t.scale)
                .map(|s| s.value)
                .unwrap_or(0.0);
            out.push_str(&format!(
                "{} {} {:.10} {:.12} {} {:.12}\n",
                t.scale, t.source, t.weight, t.pe_mean, t.mask_count, smooth
            ));
        }
        out.push_str(&format!("total {:.12}\n", self.total));
        out
    }
}

/// Masked mean of an error map: `sum(M * PE) / #{M=1}`, `(0, 0)` when the
/// mask is empty.
pub fn masked_mean(pe: &ErrorMap, mask: &MaskMap) -> Result<(f64, usize), LossError> {
    if !pe.grid().same_shape(mask) {
        return Err(LossError::Masking(MaskingError::ShapeMismatch(
            pe.width(),
            pe.height(),
            mask.width(),
            mask.height(),
        )));
    }
    let count = mask.count_true();
    if count == 0 {
        return Ok((0.0, 0));
    }
    let sum = ordered_row_sum(pe.height(), |y| {
        let mut s = 0.0;
        for x in 0..pe.width() {
            if *mask.at(x, y) {
                s += pe.value(x, y);
            }
        }
        s
    });
    Ok((sum / count as f64, count))
}

struct SourceScaleData {
    warped: ImageBuffer,
    validity: MaskMap,
    pe_warped: ErrorMap,
    pe_static: ErrorMap,
}

struct ScaleData {
    target: ImageBuffer,
    source_levels: Vec<ImageBuffer>,
    k: CameraIntrinsics,
    sources: Vec<SourceScaleData>,
}

fn validate_inputs(inputs: &LossInputs, cfg: &LossConfig) -> Result<(), LossError> {
    cfg.validate()?;
    if inputs.sources.is_empty() {
        return Err(LossError::NoSources);
    }
    if inputs.sources.len() != inputs.poses.len() {
        return Err(LossError::PoseCountMismatch(
            inputs.sources.len(),
            inputs.poses.len(),
        ));
    }
    if inputs.inv_depth.len() < cfg.scales {
        return Err(LossError::MissingLevels(inputs.inv_depth.len(), cfg.scales));
    }
    for (level, d) in inputs.inv_depth.iter().take(cfg.scales).enumerate() {
        let want_w = inputs.target.width() >> level;
        let want_h = inputs.target.height() >> level;
        if d.width() != want_w || d.height() != want_h {
            return Err(LossError::LevelShape {
                level,
                got_w: d.width(),
                got_h: d.height(),
                want_w,
                want_h,
            });
        }
    }
    Ok(())
}

fn build_scale_data(inputs: &LossInputs, cfg: &LossConfig) -> Result<Vec<ScaleData>, LossError> {
    // Levels are built on demand so the loss also works on images too small
    // for a full four-level pyramid (e.g. inside coarse-to-fine stages).
    let mut target_level = inputs.target.clone();
    let mut source_levels_cur: Vec<ImageBuffer> = inputs.sources.to_vec();
    let mut scales = Vec::with_capacity(cfg.scales);
    for r in 0..cfg.scales {
        if r > 0 {
            target_level = crate::image::downsample2x(&target_level);
            for s in source_levels_cur.iter_mut() {
                *s = crate::image::downsample2x(s);
            }
        }
        if target_level.width() == 0 || target_level.height() == 0 {
            return Err(LossError::InvalidConfig(format!(
                "image too small for {} scales",
                cfg.scales
            )));
        }
        let k = inputs.intrinsics.scaled_for_level(r);
        let target = target_level.clone();
        let depth = inputs.inv_depth[r].to_depth();
        let mut sources = Vec::with_capacity(inputs.sources.len());
        let mut source_levels = Vec::with_capacity(inputs.sources.len());
        for (s, level) in source_levels_cur.iter().enumerate() {
            let t = exp_map(&inputs.poses[s]);
            let (warped, validity) = synthesize_view(level, &depth, &k, &t)?;
            let pe_warped = photometric_error(&target, &warped)?;
            let pe_static = photometric_error(&target, level)?;
            sources.push(SourceScaleData {
                warped,
                validity,
                pe_warped,
                pe_static,
            });
            source_levels.push(level.clone());
        }
        scales.push(ScaleData {
            target,
            source_levels,
            k,
            sources,
        });
    }
    Ok(scales)
}

fn build_masks(scale: &ScaleData, cfg: &LossConfig) -> Result<MaskSet, LossError> {
    let w = scale.target.width();
    let h = scale.target.height();
    let stats = if cfg.use_outlier {
        let maps: Vec<&ErrorMap> = scale.sources.iter().map(|s| &s.pe_warped).collect();
        Some(error_statistics(&maps)?)
    } else {
        None
    };
    let mr_masks = if cfg.use_min_reprojection {
        let maps: Vec<&ErrorMap> = scale.sources.iter().map(|s| &s.pe_warped).collect();
        Some(min_reprojection_mask(&maps)?)
    } else {
        None
    };
    let mut sources = Vec::with_capacity(scale.sources.len());
    for (s, data) in scale.sources.iter().enumerate() {
        let ol = match &stats {
            Some(st) => outlier_mask(&data.pe_warped, st, cfg.l_threshold, cfg.u_threshold),
            None => MaskMap::all_true(w, h),
        };
        let p = if cfg.use_principled {
            principled_mask(&data.validity)
        } else {
            MaskMap::all_true(w, h)
        };
        let a = if cfg.use_auto {
            auto_mask(&data.pe_warped, &data.pe_static)?
        } else {
            MaskMap::all_true(w, h)
        };
        let mr = match &mr_masks {
            Some(ms) => ms[s].clone(),
            None => MaskMap::all_true(w, h),
        };
        sources.push(SourceMasks::combine(ol, p, a, mr)?);
    }
    Ok(MaskSet { sources })
}

fn assemble(
    scales: &[ScaleData],
    masks: &[MaskSet],
    inputs: &LossInputs,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let f_w = scale_weights(cfg.f_scale);
    let e_w = scale_weights(cfg.e_scale);
    let mut terms = Vec::new();
    let mut smoothness = Vec::new();
    let mut photometric = 0.0;
    let mut smooth_total = 0.0;
    for (r, scale) in scales.iter().enumerate() {
        let mut scale_sum = 0.0;
        for (s, data) in scale.sources.iter().enumerate() {
            let mask = &masks[r].sources[s].combined;
            let (pe_mean, mask_count) = masked_mean(&data.pe_warped, mask)?;
            scale_sum += pe_mean;
            terms.push(TermBreakdown {
                scale: r,
                source: s,
                weight: f_w[r],
                pe_mean,
                mask_count,
                empty: mask_count == 0,
            });
        }
        photometric += f_w[r] * scale_sum;
        let value = smoothness_loss(&inputs.inv_depth[r], &scale.target)?;
        smoothness.push(ScaleSmoothness {
            scale: r,
            weight: e_w[r],
            value,
        });
        smooth_total += e_w[r] * value;
    }
    let photometric_part = cfg.eta * photometric;
    let smoothness_part = cfg.lambda * smooth_total;
    Ok(LossBreakdown {
        total: photometric_part + smoothness_part,
        photometric_part,
        smoothness_part,
        eta: cfg.eta,
        lambda: cfg.lambda,
        terms,
        smoothness,
    })
}

/// Evaluates the energy, building the per-scale masks from the current
/// error maps. Returns the breakdown and the masks (one set per scale).
pub fn total_loss(
    inputs: &LossInputs,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<MaskSet>), LossError> {
    validate_inputs(inputs, cfg)?;
    let scales = build_scale_data(inputs, cfg)?;
    let masks: Vec<MaskSet> = scales
        .iter()
        .map(|sc| build_masks(sc, cfg))
        .collect::<Result<_, _>>()?;
    let breakdown = assemble(&scales, &masks, inputs, cfg)?;
    Ok((breakdown, masks))
}

/// Evaluates the energy under externally supplied (frozen) masks. This is
/// the evaluation the gradient is consistent with, and what finite
/// differences must probe.
pub fn total_loss_with_masks(
    inputs: &LossInputs,
    cfg: &LossConfig,
    masks: &[MaskSet],
) -> Result<LossBreakdown, LossError> {
    validate_inputs(inputs, cfg)?;
    if masks.len() < cfg.scales {
        return Err(LossError::MissingLevels(masks.len(), cfg.scales));
    }
    let scales = build_scale_data(inputs, cfg)?;
    for (r, (sc, ms)) in scales.iter().zip(masks).enumerate() {
        if ms.sources.len() != sc.sources.len()
            || ms
                .sources
                .iter()
                .any(|m| !m.combined.same_shape(sc.sources[0].pe_warped.grid()))
        {
            return Err(LossError::MaskShape(r));
        }
    }
    assemble(&scales, masks, inputs, cfg)
}

/// Gradients of the energy under frozen masks.
#[derive(Debug, Clone)]
pub struct LossGradient {
    /// One gradient grid per pyramid level (same shapes as the inputs).
    pub inv_depth: Vec<Grid<f64>>,
    /// One 6-vector per source pose.
    pub poses: Vec<Vector6<f64>>,
}

/// Analytic gradient of [`total_loss_with_masks`] with respect to every
/// inverse-depth level and every source pose. Pixels whose projection falls
/// behind the camera contribute no projection gradient (the warp is not
/// usefully differentiable there).
pub fn total_loss_gradient(
    inputs: &LossInputs,
    cfg: &LossConfig,
    masks: &[MaskSet],
) -> Result<LossGradient, LossError> {
    validate_inputs(inputs, cfg)?;
    if masks.len() < cfg.scales {
        return Err(LossError::MissingLevels(masks.len(), cfg.scales));
    }
    let scales = build_scale_data(inputs, cfg)?;
    let f_w = scale_weights(cfg.f_scale);
    let e_w = scale_weights(cfg.e_scale);

    let mut depth_grads: Vec<Grid<f64>> = inputs
        .inv_depth
        .iter()
        .map(|d| Grid::from_elem(d.width(), d.height(), 0.0))
        .collect();
    let mut pose_grads = vec![Vector6::<f64>::zeros(); inputs.sources.len()];

    for (r, scale) in scales.iter().enumerate() {
        let w = scale.target.width();
        let h = scale.target.height();
        let d_level = &inputs.inv_depth[r];

        for (s, data) in scale.sources.iter().enumerate() {
            let mask = &masks[r].sources[s].combined;
            if !mask.same_shape(data.pe_warped.grid()) {
                return Err(LossError::MaskShape(r));
            }
            let count = mask.count_true();
            if count == 0 {
                continue;
            }
            let coeff = cfg.eta * f_w[r] / count as f64;
            let weight = Grid::from_fn(w, h, |x, y| if *mask.at(x, y) { coeff } else { 0.0 });

            // d objective / d warped intensity, per channel.
            let g_warp =
                photometric_error_backward(&scale.target, &data.warped, &weight)?;

            // Chain through the sampler and the projection, row by row;
            // the pose gradient reduces over rows in order.
            let differ = ProjectionDifferentiator::new(&scale.k, &inputs.poses[s]);
            let source_level = &scale.source_levels[s];
            let channels = source_level.channels();
            let row_results: Vec<(Vec<f64>, Vector6<f64>)> = ordered_row_map(h, |y| {
                let mut depth_row = vec![0.0; w];
                let mut pose_row = Vector6::<f64>::zeros();
                for x in 0..w {
                    let mut any = false;
                    for c in 0..channels {
                        if *g_warp[c].at(x, y) != 0.0 {
                            any = true;
                            break;
                        }
                    }
                    if !any {
                        continue;
                    }
                    let d_inv = d_level.value(x, y);
                    let depth = 1.0 / d_inv;
                    let p_t = Vector2::new(x as f64, y as f64);
                    let jac = match differ.jacobians(p_t, depth) {
                        Ok(j) => j,
                        Err(_) => continue, // behind camera: no gradient
                    };
                    let proj = crate::geometry::project(p_t, depth, &scale.k, differ.transform());
                    let sample = bilinear_sample(source_level, proj.pixel.x, proj.pixel.y);
                    let mut d_pix = Vector2::new(0.0, 0.0);
                    for c in 0..channels {
                        let g = *g_warp[c].at(x, y);
                        if g != 0.0 {
                            d_pix.x += g * sample.grad_x[c];
                            d_pix.y += g * sample.grad_y[c];
                        }
                    }
                    if d_pix.x == 0.0 && d_pix.y == 0.0 {
                        continue;
                    }
                    // dL/dD then dD/dd = -1/d^2 = -D^2.
                    let d_depth = d_pix.dot(&jac.d_depth);
                    depth_row[x] = -d_depth * depth * depth;
                    pose_row += jac.d_pose.transpose() * d_pix;
                }
                (depth_row, pose_row)
            });
            for (y, (depth_row, pose_row)) in row_results.into_iter().enumerate() {
                for x in 0..w {
                    if depth_row[x] != 0.0 {
                        *depth_grads[r].at_mut(x, y) += depth_row[x];
                    }
                }
                pose_grads[s] += pose_row;
            }
        }

        // Smoothness gradient of this level.
        if cfg.lambda != 0.0 {
            let sg = smoothness_gradient(d_level, &scale.target)?;
            let scale_coeff = cfg.lambda * e_w[r];
            for y in 0..h {
                for x in 0..w {
                    *depth_grads[r].at_mut(x, y) += scale_coeff * sg.at(x, y);
                }
            }
        }
    }

    Ok(LossGradient {
        inv_depth: depth_grads,
        poses: pose_grads,
    })
}
