//! First-order minimization of the masked photometric energy over a
//! level-0 inverse-depth map and one 6-DoF pose per source.
//!
//! Coarser inverse-depth levels are derived from level 0 by box
//! downsampling, so per-level gradients are pulled back through the
//! downsampling adjoint before the update. Masks are recomputed from the
//! current error maps every iteration and frozen for that iteration's
//! gradient; a freeze-masks mode exists for monotonicity diagnostics.

use crate::geometry::{CameraIntrinsics, PoseVector};
use crate::grid::Grid;
use crate::image::{ImageBuffer, ImageError, InverseDepthMap};
use crate::loss::{
    total_loss, total_loss_gradient, total_loss_with_masks, LossBreakdown, LossConfig, LossError,
    LossInputs,
};
use crate::masking::MaskSet;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Clamp range of the inverse depth, corresponding to depths in
/// [0.1, 100] scene units.
pub const INV_DEPTH_MIN: f64 = 1.0 / 100.0;
pub const INV_DEPTH_MAX: f64 = 1.0 / 0.1;

/// Optimization variables: level-0 inverse depth plus one pose per source.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub inv_depth: InverseDepthMap,
    pub poses: Vec<PoseVector>,
    pub iteration: usize,
    pub loss_history: Vec<f64>,
}

impl OptimState {
    pub fn new(inv_depth: InverseDepthMap, poses: Vec<PoseVector>) -> Self {
        Self {
            inv_depth,
            poses,
            iteration: 0,
            loss_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimSettings {
    /// Step size (learning rate) of the inverse-depth variable.
    pub depth_step: f64,
    /// Step size of the pose variables.
    pub pose_step: f64,
    pub max_iters: usize,
    /// Convergence tolerance on the relative loss decrease; zero disables
    /// early stopping.
    pub tol: f64,
    /// Adaptive per-coordinate moments (bias-corrected) when true; plain
    /// descent with halving on increase otherwise.
    pub adaptive: bool,
    /// Compute masks once at the start and keep them for the whole run.
    pub freeze_masks: bool,
    /// Iterations at which to snapshot the state (0 = initial state).
    pub snapshot_at: Vec<usize>,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            depth_step: 4e-3,
            pose_step: 8e-4,
            max_iters: 500,
            tol: 0.0,
            adaptive: true,
            freeze_masks: false,
            snapshot_at: Vec::new(),
        }
    }
}

impl OptimSettings {
    fn validate(&self) -> Result<(), OptimError> {
        // A zero step holds that block of variables fixed (e.g. a pose-only
        // warm-up); both zero would make the run a no-op.
        if !(self.depth_step >= 0.0)
            || !(self.pose_step >= 0.0)
            || (self.depth_step == 0.0 && self.pose_step == 0.0)
        {
            return Err(OptimError::InvalidSettings(format!(
                "need nonnegative steps with at least one positive, got depth={} pose={}",
                self.depth_step, self.pose_step
            )));
        }
        if self.tol < 0.0 {
            return Err(OptimError::InvalidSettings(format!(
                "tolerance must be nonnegative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// One trace row per iteration.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub pe_part: f64,
    pub smooth_part: f64,
    /// Mean combined-mask fraction over scales and sources.
    pub mask_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub state: OptimState,
    pub trace: Vec<TraceRow>,
    /// Snapshots requested via `snapshot_at`, in iteration order.
    pub snapshots: Vec<(usize, OptimState)>,
}

struct AdamBuffers {
    m_depth: Vec<f64>,
    v_depth: Vec<f64>,
    m_pose: Vec<[f64; 6]>,
    v_pose: Vec<[f64; 6]>,
    t: usize,
}

impl AdamBuffers {
    fn new(n_depth: usize, n_poses: usize) -> Self {
        Self {
            m_depth: vec![0.0; n_depth],
            v_depth: vec![0.0; n_depth],
            m_pose: vec![[0.0; 6]; n_poses],
            v_pose: vec![[0.0; 6]; n_poses],
            t: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adjoint of the box-downsampling chain: pulls per-level gradients back to
/// level 0. Each coarse cell distributes a quarter of its gradient to the
/// four fine cells it averaged (pixels dropped by odd dimensions get none).
pub fn collapse_pyramid_gradient(levels: &[Grid<f64>]) -> Grid<f64> {
    let mut acc = levels.last().expect("at least one level").clone();
    for level in levels.iter().rev().skip(1) {
        let mut next = level.clone();
        for y in 0..acc.height() {
            for x in 0..acc.width() {
                let g = *acc.at(x, y) * 0.25;
                if g != 0.0 {
                    *next.at_mut(2 * x, 2 * y) += g;
                    *next.at_mut(2 * x + 1, 2 * y) += g;
                    *next.at_mut(2 * x, 2 * y + 1) += g;
                    *next.at_mut(2 * x + 1, 2 * y + 1) += g;
                }
            }
        }
        acc = next;
    }
    acc
}

fn evaluate(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    k: &CameraIntrinsics,
    state: &OptimState,
    cfg: &LossConfig,
    frozen: Option<&[MaskSet]>,
) -> Result<(LossBreakdown, Vec<MaskSet>, Vec<InverseDepthMap>), OptimError> {
    let pyramid = state.inv_depth.pyramid();
    let inputs = LossInputs {
        target,
        sources,
        intrinsics: k,
        inv_depth: &pyramid,
        poses: &state.poses,
    };
    let (breakdown, masks) = match frozen {
        Some(m) => (total_loss_with_masks(&inputs, cfg, m)?, m.to_vec()),
        None => total_loss(&inputs, cfg)?,
    };
    Ok((breakdown, masks, pyramid))
}

fn gradient(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    k: &CameraIntrinsics,
    state: &OptimState,
    pyramid: &[InverseDepthMap],
    cfg: &LossConfig,
    masks: &[MaskSet],
) -> Result<(Grid<f64>, Vec<nalgebra::Vector6<f64>>), OptimError> {
    let inputs = LossInputs {
        target,
        sources,
        intrinsics: k,
        inv_depth: pyramid,
        poses: &state.poses,
    };
    let grad = total_loss_gradient(&inputs, cfg, masks)?;
    Ok((collapse_pyramid_gradient(&grad.inv_depth), grad.poses))
}

fn mask_fraction(masks: &[MaskSet]) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    masks.iter().map(|m| m.combined_fraction()).sum::<f64>() / masks.len() as f64
}

fn clamp_depth(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = v.clamp(INV_DEPTH_MIN, INV_DEPTH_MAX);
    }
}

/// Runs the optimizer until convergence or `max_iters`. The trace records
/// the loss every iteration and the mask fraction (refreshed at least every
/// 10 iterations). Aborts with the iteration number if the loss turns
/// non-finite.
pub fn optimize(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    k: &CameraIntrinsics,
    init: OptimState,
    cfg: &LossConfig,
    settings: &OptimSettings,
) -> Result<OptimOutcome, OptimError> {
    settings.validate()?;
    cfg.validate()?;
    let mut state = init;
    let mut trace = Vec::with_capacity(settings.max_iters);
    let mut snapshots = Vec::new();
    let mut adam = AdamBuffers::new(state.inv_depth.grid().len(), state.poses.len());
    let mut plain_step_scale = 1.0f64;

    let frozen_masks: Option<Vec<MaskSet>> = if settings.freeze_masks {
        let (_, masks, _) = evaluate(target, sources, k, &state, cfg, None)?;
        Some(masks)
    } else {
        None
    };

    let mut prev_loss = f64::INFINITY;
    for iter in 0..settings.max_iters {
        if settings.snapshot_at.contains(&iter) {
            snapshots.push((iter, state.clone()));
        }
        let (breakdown, masks, pyramid) =
            evaluate(target, sources, k, &state, cfg, frozen_masks.as_deref())?;
        if !breakdown.total.is_finite() {
            return Err(OptimError::NonFiniteLoss { iteration: iter });
        }
        state.loss_history.push(breakdown.total);
        trace.push(TraceRow {
            iteration: iter,
            total: breakdown.total,
            pe_part: breakdown.photometric_part,
            smooth_part: breakdown.smoothness_part,
            mask_fraction: mask_fraction(&masks),
        });

        // Convergence on relative decrease.
        if settings.tol > 0.0 && prev_loss.is_finite() {
            let rel = (prev_loss - breakdown.total).abs() / prev_loss.abs().max(1e-300);
            if rel < settings.tol {
                state.iteration = iter;
                return Ok(OptimOutcome {
                    state,
                    trace,
                    snapshots,
                });
            }
        }
        prev_loss = breakdown.total;

        let (depth_grad, pose_grads) =
            gradient(target, sources, k, &state, &pyramid, cfg, &masks)?;

        if settings.adaptive {
            adam.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
            let mut depth_values = state.inv_depth.grid().data().to_vec();
            for (i, v) in depth_values.iter_mut().enumerate() {
                let g = depth_grad.data()[i];
                adam.m_depth[i] = ADAM_BETA1 * adam.m_depth[i] + (1.0 - ADAM_BETA1) * g;
                adam.v_depth[i] = ADAM_BETA2 * adam.v_depth[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = adam.m_depth[i] / bc1;
                let v_hat = adam.v_depth[i] / bc2;
                *v -= settings.depth_step * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            clamp_depth(&mut depth_values);
            state.inv_depth = InverseDepthMap::new(
                Grid::from_vec(
                    state.inv_depth.width(),
                    state.inv_depth.height(),
                    depth_values,
                )
                .expect("same size"),
            )?;
            for (s, pg) in pose_grads.iter().enumerate() {
                for i in 0..6 {
                    let g = pg[i];
                    adam.m_pose[s][i] = ADAM_BETA1 * adam.m_pose[s][i] + (1.0 - ADAM_BETA1) * g;
                    adam.v_pose[s][i] =
                        ADAM_BETA2 * adam.v_pose[s][i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = adam.m_pose[s][i] / bc1;
                    let v_hat = adam.v_pose[s][i] / bc2;
                    *state.poses[s].component_mut(i) -=
                        settings.pose_step * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        } else {
            // Plain descent: try the step, halve while the loss increases.
            // Acceptance compares both states under this iteration's masks,
            // so mask churn cannot drown out small true decreases; the
            // masks themselves still refresh every iteration. The accepted
            // scale seeds the next iteration, doubled, so early rejections
            // do not permanently stall the run.
            plain_step_scale = (plain_step_scale * 2.0).min(1.0);
            let mut accepted = false;
            for _ in 0..30 {
                let mut candidate = state.clone();
                let mut depth_values = candidate.inv_depth.grid().data().to_vec();
                for (i, v) in depth_values.iter_mut().enumerate() {
                    *v -= plain_step_scale * settings.depth_step * depth_grad.data()[i];
                }
                clamp_depth(&mut depth_values);
                candidate.inv_depth = InverseDepthMap::new(
                    Grid::from_vec(
                        candidate.inv_depth.width(),
                        candidate.inv_depth.height(),
                        depth_values,
                    )
                    .expect("same size"),
                )?;
                for (s, pg) in pose_grads.iter().enumerate() {
                    for i in 0..6 {
                        *candidate.poses[s].component_mut(i) -=
                            plain_step_scale * settings.pose_step * pg[i];
                    }
                }
                let (cand_break, _, _) =
                    evaluate(target, sources, k, &candidate, cfg, Some(&masks))?;
                if cand_break.total.is_finite() && cand_break.total <= breakdown.total {
                    state.inv_depth = candidate.inv_depth;
                    state.poses = candidate.poses;
                    accepted = true;
                    break;
                }
                plain_step_scale *= 0.5;
            }
            if !accepted {
                // No improving step at any scale: stationary up to clamping.
                state.iteration = iter;
                return Ok(OptimOutcome {
                    state,
                    trace,
                    snapshots,
                });
            }
        }
        state.iteration = iter + 1;
    }

    if settings.snapshot_at.contains(&settings.max_iters) {
        snapshots.push((settings.max_iters, state.clone()));
    }
    Ok(OptimOutcome {
        state,
        trace,
        snapshots,
    })
}

/// Per-stage iteration budget of the coarse-to-fine schedule, coarsest
/// stage first.
#[derive(Debug, Clone)]
pub struct CoarseToFinePlan {
    /// Iterations per stage; stage `i` runs at pyramid level `len-1-i`.
    pub stage_iters: Vec<usize>,
}

impl Default for CoarseToFinePlan {
    fn default() -> Self {
        Self {
            stage_iters: vec![400, 400, 400, 800],
        }
    }
}

/// Coarse-to-fine minimization: optimize at the coarsest level first, then
/// upsample the inverse depth and refine at progressively finer levels.
/// Poses carry across stages. Avoids the locality of the bilinear-sampler
/// gradient when the initial misalignment spans several pixels.
pub fn optimize_coarse_to_fine(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    k: &CameraIntrinsics,
    init: OptimState,
    cfg: &LossConfig,
    settings: &OptimSettings,
    plan: &CoarseToFinePlan,
) -> Result<OptimOutcome, OptimError> {
    settings.validate()?;
    let n_stages = plan.stage_iters.len();
    if n_stages == 0 {
        return Err(OptimError::InvalidSettings(
            "coarse-to-fine plan needs at least one stage".into(),
        ));
    }

    // Image and depth stacks, full resolution first.
    let mut targets = vec![target.clone()];
    let mut source_stacks = vec![sources.to_vec()];
    for _ in 1..n_stages {
        targets.push(crate::image::downsample2x(targets.last().unwrap()));
        source_stacks.push(
            source_stacks
                .last()
                .unwrap()
                .iter()
                .map(crate::image::downsample2x)
                .collect(),
        );
    }

    let mut poses = init.poses.clone();
    let mut inv_depth_stage = {
        let mut d = init.inv_depth.clone();
        for _ in 1..n_stages {
            d = d.downsample2x();
        }
        d
    };

    let mut trace = Vec::new();
    let mut loss_history = Vec::new();
    for (stage, &iters) in plan.stage_iters.iter().enumerate() {
        let level = n_stages - 1 - stage;
        let stage_target = &targets[level];
        let stage_sources = &source_stacks[level];
        let stage_k = k.scaled_for_level(level);
        let mut stage_cfg = cfg.clone();
        // Deeper levels cannot sustain the full 4-scale pyramid.
        let max_scales = {
            let mut s = 1;
            let (mut w, mut h) = (stage_target.width(), stage_target.height());
            while s < cfg.scales && w / 2 > 0 && h / 2 > 0 {
                s += 1;
                w /= 2;
                h /= 2;
            }
            s
        };
        stage_cfg.scales = cfg.scales.min(max_scales);
        let mut stage_settings = settings.clone();
        stage_settings.max_iters = iters;
        stage_settings.snapshot_at = Vec::new();

        let state = OptimState::new(inv_depth_stage.clone(), poses.clone());
        let out = optimize(
            stage_target,
            stage_sources,
            &stage_k,
            state,
            &stage_cfg,
            &stage_settings,
        )?;
        poses = out.state.poses.clone();
        loss_history.extend(out.state.loss_history.iter().copied());
        trace.extend(out.trace.iter().copied());

        if level > 0 {
            // Seed the next stage by bilinear upsampling.
            let next = &targets[level - 1];
            let up = crate::image::upsample_scalar_to(
                out.state.inv_depth.grid(),
                next.width(),
                next.height(),
            )?;
            inv_depth_stage = InverseDepthMap::new(up)?;
        } else {
            inv_depth_stage = out.state.inv_depth;
        }
    }

    let mut state = OptimState::new(inv_depth_stage, poses);
    state.loss_history = loss_history;
    state.iteration = trace.len();
    Ok(OptimOutcome {
        state,
        trace,
        snapshots: Vec::new(),
    })
}

/// Serializes a trace as `iter,total,pe_part,smooth_part,mask_frac` CSV.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,total,pe_part,smooth_part,mask_frac\n");
    for row in trace {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.6}\n",
            row.iteration, row.total, row.pe_part, row.smooth_part, row.mask_fraction
        ));
    }
    out
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_deviation: f64,
    pub probes: usize,
}

/// Central-difference step for the gradient check.
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Probes whose projection falls within this distance of an integer grid
/// line are excluded: the bilinear interpolant kinks there.
pub const GRID_KINK_MARGIN: f64 = 1e-3;
/// Probes whose target/warped intensity difference is this small in some
/// channel are excluded: the finite-difference step could flip the sign of
/// the L1 term, which kinks exactly like a grid line does.
pub const L1_KINK_MARGIN: f64 = 1e-3;
/// Probes whose inverse depth is this close (in units of the step) to a
/// neighbor are excluded: the smoothness term's absolute differences kink
/// at ties.
pub const SMOOTHNESS_KINK_FACTOR: f64 = 3.0;

fn relative_deviation(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        // Below finite-difference resolution on both sides.
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Compares the analytic gradient against central finite differences of the
/// frozen-mask loss at `n_probes` random inverse-depth coordinates across
/// all pyramid levels.
///
/// Probes are re-drawn when any source projection of the probed pixel lands
/// within [`GRID_KINK_MARGIN`] of an integer grid line, behind a camera, or
/// within [`L1_KINK_MARGIN`] of a target/warped intensity tie; all three are
/// kinks of the energy where central differences measure the wrong one-sided
/// slope. Pose coordinates are not probed here: a pose step sweeps every
/// pixel's projection simultaneously, so some pixels always cross bilinear
/// kinks and no exclusion can make the comparison clean at the fixed step
/// (pose gradients are checked separately with a smaller step in the test
/// suite).
pub fn gradient_check(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    k: &CameraIntrinsics,
    state: &OptimState,
    cfg: &LossConfig,
    n_probes: usize,
    seed: u64,
) -> Result<GradCheckReport, OptimError> {
    let pyramid = state.inv_depth.pyramid();
    let inputs = LossInputs {
        target,
        sources,
        intrinsics: k,
        inv_depth: &pyramid,
        poses: &state.poses,
    };
    let (_, masks) = total_loss(&inputs, cfg)?;
    let grad = total_loss_gradient(&inputs, cfg, &masks)?;

    // Warped views per (scale, source) for the L1-kink exclusion.
    let target_pyramid = crate::image::Pyramid::build(target)?;
    let mut warped: Vec<Vec<ImageBuffer>> = Vec::with_capacity(cfg.scales);
    for r in 0..cfg.scales {
        let k_level = k.scaled_for_level(r);
        let depth = pyramid[r].to_depth();
        let mut per_source = Vec::with_capacity(sources.len());
        for (s, src) in sources.iter().enumerate() {
            let src_level = crate::image::Pyramid::build(src)?.level(r).clone();
            let t = crate::geometry::exp_map(&state.poses[s]);
            let (img, _) = crate::image::synthesize_view(&src_level, &depth, &k_level, &t)?;
            per_source.push(img);
        }
        warped.push(per_source);
    }

    let eval = |pyr: &[InverseDepthMap], poses: &[PoseVector]| -> Result<f64, OptimError> {
        let inputs = LossInputs {
            target,
            sources,
            intrinsics: k,
            inv_depth: pyr,
            poses,
        };
        Ok(total_loss_with_masks(&inputs, cfg, &masks)?.total)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < n_probes {
        attempts += 1;
        if attempts > n_probes * 200 {
            break; // pathological scene; report what we have
        }
        let level = rng.random_range(0..cfg.scales);
        let d = &pyramid[level];
        let x = rng.random_range(0..d.width());
        let y = rng.random_range(0..d.height());

        let k_level = k.scaled_for_level(level);
        let d_inv = d.value(x, y);
        let depth = 1.0 / d_inv;
        let p_t = nalgebra::Vector2::new(x as f64, y as f64);
        let target_level = target_pyramid.level(level);
        let mut excluded = false;
        // Smoothness kink: a neighbor within a few steps of a tie flips
        // the sign of its absolute difference under the probe. An exact
        // tie is fine: the central difference is symmetric there and both
        // sides read zero.
        if cfg.lambda != 0.0 {
            let tie_margin = SMOOTHNESS_KINK_FACTOR * GRADCHECK_STEP;
            for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let xx = x as isize + dx;
                let yy = y as isize + dy;
                if xx >= 0
                    && yy >= 0
                    && (xx as usize) < d.width()
                    && (yy as usize) < d.height()
                {
                    let diff = (d.value(xx as usize, yy as usize) - d_inv).abs();
                    if diff != 0.0 && diff < tie_margin {
                        excluded = true;
                        break;
                    }
                }
            }
            if excluded {
                continue;
            }
        }
        for (s, pose) in state.poses.iter().enumerate() {
            let proj =
                crate::geometry::project(p_t, depth, &k_level, &crate::geometry::exp_map(pose));
            if !proj.in_front {
                excluded = true;
                break;
            }
            // The finite-difference step moves the projection itself; the
            // kink margins must cover that motion, not just a fixed band.
            let motion = match crate::geometry::project_jacobians(p_t, depth, &k_level, pose) {
                Ok(j) => (j.d_depth.norm() * depth * depth * GRADCHECK_STEP) * 1.5,
                Err(_) => {
                    excluded = true;
                    break;
                }
            };
            let margin = GRID_KINK_MARGIN + motion;
            let fx = (proj.pixel.x - proj.pixel.x.round()).abs();
            let fy = (proj.pixel.y - proj.pixel.y.round()).abs();
            if fx < margin || fy < margin {
                excluded = true;
                break;
            }
            let w_img = &warped[level][s];
            let sample =
                crate::image::bilinear_sample(w_img, p_t.x, p_t.y);
            for c in 0..target_level.channels() {
                let slope = sample.grad_x[c].abs() + sample.grad_y[c].abs();
                let l1_margin = L1_KINK_MARGIN + 3.0 * slope * motion;
                if (target_level.value(x, y, c) - w_img.value(x, y, c)).abs() < l1_margin {
                    excluded = true;
                    break;
                }
            }
            if excluded {
                break;
            }
        }
        if excluded {
            continue;
        }

        let perturb = |delta: f64| -> Vec<InverseDepthMap> {
            let mut levels = pyramid.clone();
            let mut grid = levels[level].grid().clone();
            *grid.at_mut(x, y) += delta;
            levels[level] = InverseDepthMap::new(grid).expect("still positive");
            levels
        };
        let fd = (eval(&perturb(GRADCHECK_STEP), &state.poses)?
            - eval(&perturb(-GRADCHECK_STEP), &state.poses)?)
            / (2.0 * GRADCHECK_STEP);
        let analytic = *grad.inv_depth[level].at(x, y);
        max_dev = max_dev.max(relative_deviation(analytic, fd));
        done += 1;
    }

    Ok(GradCheckReport {
        max_rel_deviation: max_dev,
        probes: done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::log_map;
    use crate::synthscene::{preset, random_scene, render, RenderedScene, ScenePreset};
    use nalgebra::Vector3;

    fn scene_setup(
        scene: &RenderedScene,
    ) -> (ImageBuffer, Vec<ImageBuffer>, CameraIntrinsics, OptimState) {
        let target = scene.frames[1].image.clone();
        let sources = vec![scene.frames[0].image.clone(), scene.frames[2].image.clone()];
        let k = scene.spec.intrinsics;
        let inv = InverseDepthMap::from_depth(&scene.frames[1].depth).unwrap();
        let poses = vec![
            log_map(&scene.relative_pose(1, 0)).unwrap(),
            log_map(&scene.relative_pose(1, 2)).unwrap(),
        ];
        (target, sources, k, OptimState::new(inv, poses))
    }

    #[test]
    fn collapse_gradient_matches_finite_differences_of_derived_pyramid() {
        // End-to-end check of the downsampling adjoint: f(d0) = loss of the
        // pyramid derived from d0.
        let scene = render(&random_scene(3, 16, 12)).unwrap();
        let (target, sources, k, state) = scene_setup(&scene);
        let mut cfg = LossConfig::default();
        cfg.scales = 2;
        let pyramid = state.inv_depth.pyramid();
        let inputs = LossInputs {
            target: &target,
            sources: &sources,
            intrinsics: &k,
            inv_depth: &pyramid,
            poses: &state.poses,
        };
        let (_, masks) = total_loss(&inputs, &cfg).unwrap();
        let grad = total_loss_gradient(&inputs, &cfg, &masks).unwrap();
        let g0 = collapse_pyramid_gradient(&grad.inv_depth[..cfg.scales]);

        let eval = |inv: &InverseDepthMap| -> f64 {
            let pyr = inv.pyramid();
            let inputs = LossInputs {
                target: &target,
                sources: &sources,
                intrinsics: &k,
                inv_depth: &pyr,
                poses: &state.poses,
            };
            total_loss_with_masks(&inputs, &cfg, &masks).unwrap().total
        };
        let step = 1e-5;
        let mut checked = 0;
        for y in (0..12).step_by(3) {
            for x in (0..16).step_by(3) {
                // Skip near-kink pixels for the same reason the gradient
                // check does.
                let k0 = k.scaled_for_level(0);
                let depth = 1.0 / state.inv_depth.value(x, y);
                let mut skip = false;
                for pose in &state.poses {
                    let proj = crate::geometry::project(
                        nalgebra::Vector2::new(x as f64, y as f64),
                        depth,
                        &k0,
                        &crate::geometry::exp_map(pose),
                    );
                    let fx = (proj.pixel.x - proj.pixel.x.round()).abs();
                    let fy = (proj.pixel.y - proj.pixel.y.round()).abs();
                    if fx < 1e-2 || fy < 1e-2 || !proj.in_front {
                        skip = true;
                    }
                }
                if skip {
                    continue;
                }
                let mut plus = state.inv_depth.grid().clone();
                *plus.at_mut(x, y) += step;
                let mut minus = state.inv_depth.grid().clone();
                *minus.at_mut(x, y) -= step;
                let fd = (eval(&InverseDepthMap::new(plus).unwrap())
                    - eval(&InverseDepthMap::new(minus).unwrap()))
                    / (2.0 * step);
                let a = *g0.at(x, y);
                // Gradients below ~1e-6 drown in finite-difference noise;
                // the adjoint is exercised by the informative pixels.
                if a.abs().max(fd.abs()) < 1e-6 {
                    continue;
                }
                let denom = a.abs().max(fd.abs());
                assert!(
                    (a - fd).abs() / denom < 1e-3,
                    "({x},{y}): analytic {a} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 5, "too few usable probes ({checked})");
    }

    #[test]
    fn gradient_check_on_random_scene() {
        let scene = render(&random_scene(7, 32, 24)).unwrap();
        let (target, sources, k, mut state) = scene_setup(&scene);
        // Perturb away from the minimum so gradients are informative.
        let perturbed = state.inv_depth.grid().map(|&d| d * 1.17);
        state.inv_depth = InverseDepthMap::new(perturbed).unwrap();
        state.poses[0].translation += Vector3::new(0.01, -0.005, 0.02);
        let cfg = LossConfig::default();
        let report =
            gradient_check(&target, &sources, &k, &state, &cfg, 48, 12345).unwrap();
        assert!(report.probes >= 32, "only {} probes", report.probes);
        assert!(
            report.max_rel_deviation < 1e-3,
            "deviation {}",
            report.max_rel_deviation
        );
    }

    #[test]
    fn optimizer_at_ground_truth_stays_put() {
        let scene = render(&preset(ScenePreset::Static)).unwrap();
        let (target, sources, k, state) = scene_setup(&scene);
        let init_depth = state.inv_depth.clone();
        let init_poses = state.poses.clone();
        let mut settings = OptimSettings::default();
        settings.max_iters = 40;
        settings.adaptive = true;
        settings.depth_step = 1e-4;
        settings.pose_step = 1e-5;
        let cfg = LossConfig::default();
        let out = optimize(&target, &sources, &k, state, &cfg, &settings).unwrap();
        // Loss history stays tiny and the state barely moves.
        let first = out.trace.first().unwrap().total;
        let last = out.trace.last().unwrap().total;
        assert!(first < 1e-3);
        assert!(last < 2e-3, "{last}");
        let max_depth_move = out
            .state
            .inv_depth
            .grid()
            .data()
            .iter()
            .zip(init_depth.grid().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_depth_move < 0.05, "{max_depth_move}");
        for (p, q) in out.state.poses.iter().zip(&init_poses) {
            assert!((p.to_vector() - q.to_vector()).norm() < 0.01);
        }
    }

    #[test]
    fn plain_descent_with_frozen_masks_is_monotone() {
        let scene = render(&preset(ScenePreset::Static)).unwrap();
        let (target, sources, k, mut state) = scene_setup(&scene);
        let perturbed = state.inv_depth.grid().map(|&d| d * 1.25);
        state.inv_depth = InverseDepthMap::new(perturbed).unwrap();
        let mut settings = OptimSettings::default();
        settings.adaptive = false;
        settings.freeze_masks = true;
        settings.max_iters = 60;
        settings.depth_step = 0.5;
        settings.pose_step = 0.05;
        let cfg = LossConfig::default();
        let out = optimize(&target, &sources, &k, state, &cfg, &settings).unwrap();
        for pair in out.trace.windows(2) {
            assert!(
                pair[1].total <= pair[0].total + 1e-15,
                "loss increased: {} -> {}",
                pair[0].total,
                pair[1].total
            );
        }
    }

    #[test]
    fn optimizer_is_deterministic() {
        let scene = render(&preset(ScenePreset::Static)).unwrap();
        let (target, sources, k, mut state) = scene_setup(&scene);
        let perturbed = state.inv_depth.grid().map(|&d| d * 1.1);
        state.inv_depth = InverseDepthMap::new(perturbed).unwrap();
        let mut settings = OptimSettings::default();
        settings.max_iters = 15;
        let cfg = LossConfig::default();
        let a = optimize(&target, &sources, &k, state.clone(), &cfg, &settings).unwrap();
        let b = optimize(&target, &sources, &k, state, &cfg, &settings).unwrap();
        assert_eq!(
            a.state.inv_depth.grid().data(),
            b.state.inv_depth.grid().data()
        );
        for (p, q) in a.state.poses.iter().zip(&b.state.poses) {
            assert_eq!(p.to_vector(), q.to_vector());
        }
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.total.to_bits(), rb.total.to_bits());
        }
    }

    #[test]
    fn snapshots_are_taken_at_requested_iterations() {
        let scene = render(&preset(ScenePreset::Static)).unwrap();
        let (target, sources, k, state) = scene_setup(&scene);
        let mut settings = OptimSettings::default();
        settings.max_iters = 10;
        settings.snapshot_at = vec![0, 5, 10];
        let cfg = LossConfig::default();
        let out = optimize(&target, &sources, &k, state, &cfg, &settings).unwrap();
        let iters: Vec<usize> = out.snapshots.iter().map(|(i, _)| *i).collect();
        assert_eq!(iters, vec![0, 5, 10]);
    }

    #[test]
    fn trace_csv_format() {
        let rows = vec![TraceRow {
            iteration: 0,
            total: 0.5,
            pe_part: 0.4,
            smooth_part: 0.1,
            mask_fraction: 0.9,
        }];
        let csv = trace_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,total,pe_part,smooth_part,mask_frac"));
        assert!(lines.next().unwrap().starts_with("0,"));
    }
}
