//! Command-line workbench: scene synthesis, warping, loss inspection, mask
//! dumps, direct optimization, and the evaluation metrics, glued together
//! by plain files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
//! failure. Machine-readable results go to stdout, diagnostics to stderr.

mod scene_dir;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use scene_dir::SceneDir;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use warplab_core::geometry::{exp_map, PoseVector};
use warplab_core::grid::MaskMap;
use warplab_core::image::{synthesize_view, InverseDepthMap};
use warplab_core::io;
use warplab_core::loss::{total_loss, LossConfig, LossInputs};
use warplab_core::masking::error_statistics;
use warplab_core::metrics::{eval_ate_snippets, eval_depth, Crop, DepthEvalConfig};
use warplab_core::optimize::{
    gradient_check, optimize, trace_to_csv, OptimSettings, OptimState,
};
use warplab_core::photometric::{photometric_error, ErrorMap};
use warplab_core::synthscene::{preset, render, RenderedScene, SceneSpec, ScenePreset};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<warplab_core::io::IoError> for CliError {
    fn from(e: warplab_core::io::IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<warplab_core::synthscene::SceneError> for CliError {
    fn from(e: warplab_core::synthscene::SceneError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<warplab_core::loss::LossError> for CliError {
    fn from(e: warplab_core::loss::LossError) -> Self {
        match e {
            warplab_core::loss::LossError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<warplab_core::optimize::OptimError> for CliError {
    fn from(e: warplab_core::optimize::OptimError) -> Self {
        match e {
            warplab_core::optimize::OptimError::InvalidSettings(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<warplab_core::metrics::MetricsError> for CliError {
    fn from(e: warplab_core::metrics::MetricsError) -> Self {
        match e {
            warplab_core::metrics::MetricsError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<warplab_core::image::ImageError> for CliError {
    fn from(e: warplab_core::image::ImageError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<warplab_core::photometric::PhotometricError> for CliError {
    fn from(e: warplab_core::photometric::PhotometricError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<warplab_core::masking::MaskingError> for CliError {
    fn from(e: warplab_core::masking::MaskingError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "warplab",
    about = "Masked photometric-error workbench over synthetic scenes",
    version
)]
struct Cli {
    /// Worker threads; 1 is the reference behavior, other counts produce
    /// identical numbers through ordered reductions.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MaskToggles {
    /// Disable the statistical outlier mask.
    #[arg(long = "no-ol")]
    no_outlier: bool,
    /// Disable the principled (in-view) mask.
    #[arg(long = "no-principled")]
    no_principled: bool,
    /// Disable auto-masking.
    #[arg(long = "no-auto")]
    no_auto: bool,
    /// Disable the minimum-reprojection mask.
    #[arg(long = "no-minrep")]
    no_min_reprojection: bool,
}

#[derive(Args, Clone)]
struct LossFlags {
    #[command(flatten)]
    toggles: MaskToggles,
    /// Pyramid scales to use (1-4).
    #[arg(long)]
    scales: Option<usize>,
    /// Photometric weight.
    #[arg(long)]
    eta: Option<f64>,
    /// Smoothness weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Run-configuration file providing defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl LossFlags {
    fn build(&self) -> Result<LossConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => io::read_run_config(path)?.loss,
            None => LossConfig::default(),
        };
        if self.toggles.no_outlier {
            cfg.use_outlier = false;
        }
        if self.toggles.no_principled {
            cfg.use_principled = false;
        }
        if self.toggles.no_auto {
            cfg.use_auto = false;
        }
        if self.toggles.no_min_reprojection {
            cfg.use_min_reprojection = false;
        }
        if let Some(s) = self.scales {
            cfg.scales = s;
        }
        if let Some(eta) = self.eta {
            cfg.eta = eta;
        }
        if let Some(lambda) = self.lambda {
            cfg.lambda = lambda;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct StateFlags {
    /// Inverse depth is read from this depth map (PFM, scene units).
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Relative poses, one 3x4 line per source.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Use ground-truth depth and poses (the default when --depth is
    /// absent).
    #[arg(long = "gt-init")]
    gt_init: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render a canned preset or a scene description into a directory.
    Synth {
        #[arg(long, conflicts_with = "spec")]
        preset: Option<ScenePreset>,
        /// Scene description file.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Texture seed offset mixed into every primitive.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Warp one source into the target view and write image + validity.
    Warp {
        #[arg(long)]
        scene: PathBuf,
        /// Index into the source list (not the frame index).
        #[arg(long, default_value_t = 0)]
        source: usize,
        #[command(flatten)]
        state: StateFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the loss breakdown table for a state.
    Loss {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        state: StateFlags,
        #[command(flatten)]
        loss: LossFlags,
        /// Also write per-source scale-0 error maps (PFM + heatmap PGM)
        /// into this directory.
        #[arg(long = "dump-errors")]
        dump_errors: Option<PathBuf>,
    },
    /// Dump every mask layer and print per-source fraction summaries.
    Masks {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        state: StateFlags,
        #[command(flatten)]
        loss: LossFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimize the energy over inverse depth and poses.
    Optimize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        loss: LossFlags,
        /// Initial state: `gt`, `gt-scaled:<factor>` (depth times factor)
        /// or `flat:<inverse-depth>`.
        #[arg(long, default_value = "gt")]
        init: String,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 4e-3)]
        depth_step: f64,
        #[arg(long, default_value_t = 8e-4)]
        pose_step: f64,
        /// Plain descent with halving instead of adaptive moments.
        #[arg(long)]
        plain: bool,
        /// Keep poses fixed at their initialization.
        #[arg(long)]
        freeze_poses: bool,
        /// Compute masks once and keep them for the whole run.
        #[arg(long)]
        freeze_masks: bool,
        /// Convergence tolerance on relative loss decrease (0 = run all
        /// iterations).
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
    /// Evaluate a predicted depth map against ground truth.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Validity mask (PGM, 0 or 255); all pixels valid when absent.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        min_depth: f64,
        #[arg(long, default_value_t = 80.0)]
        max_depth: f64,
        #[arg(long = "no-median-scaling")]
        no_median_scaling: bool,
        /// Crop region: none or eigen.
        #[arg(long, default_value = "none")]
        crop: String,
    },
    /// Snippet ATE between two trajectory files.
    EvalOdom {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 5)]
        snippet: usize,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, conflicts_with = "spec")]
        preset: Option<ScenePreset>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deviation above this exits with a numerical-failure code.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        loss: LossFlags,
    },
    /// Photometric-error histogram (64 bins over [0,1]) plus statistics.
    Histogram {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        state: StateFlags,
        /// CSV output path for the binned histogram.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    let threads = cli.threads.max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("cannot build thread pool: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_spec(
    preset_name: &Option<ScenePreset>,
    spec: &Option<PathBuf>,
    seed: u64,
) -> Result<SceneSpec, CliError> {
    let mut scene_spec = match (preset_name, spec) {
        (Some(p), None) => preset(*p),
        (None, Some(path)) => io::read_scene_spec(path)?,
        _ => {
            return Err(CliError::Usage(
                "exactly one of --preset or --spec is required".into(),
            ))
        }
    };
    if seed != 0 {
        for prim in scene_spec.primitives.iter_mut() {
            if let warplab_core::synthscene::Texture::Noise { seed: s, .. } = &mut prim.texture {
                *s = s.wrapping_add(seed.wrapping_mul(0x9e3779b97f4a7c15));
            }
        }
    }
    Ok(scene_spec)
}

/// Loads the optimization state for a scene: ground truth by default,
/// explicit files when given.
fn load_state(
    dir: &SceneDir,
    state: &StateFlags,
) -> Result<(InverseDepthMap, Vec<PoseVector>), CliError> {
    if state.gt_init && state.depth.is_some() {
        return Err(CliError::Usage(
            "--gt-init conflicts with --depth/--poses".into(),
        ));
    }
    let inv_depth = match &state.depth {
        Some(path) => InverseDepthMap::from_depth(&io::read_pfm(path)?)?,
        None => InverseDepthMap::from_depth(dir.target_depth())?,
    };
    let poses = match &state.poses {
        Some(path) => {
            let transforms = io::read_pose_file(path)?;
            if transforms.len() != dir.sources.len() {
                return Err(CliError::Data(format!(
                    "{} poses in file but scene has {} sources",
                    transforms.len(),
                    dir.sources.len()
                )));
            }
            transforms
                .iter()
                .map(|t| {
                    warplab_core::geometry::log_map(t)
                        .map_err(|e| CliError::Data(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => dir.gt_pose_vectors()?,
    };
    Ok((inv_depth, poses))
}

fn pooled_scale0_errors(
    dir: &SceneDir,
    inv_depth: &InverseDepthMap,
    poses: &[PoseVector],
) -> Result<Vec<ErrorMap>, CliError> {
    let depth = inv_depth.to_depth();
    let target = dir.target_image();
    let mut maps = Vec::with_capacity(dir.sources.len());
    for (i, &s) in dir.sources.iter().enumerate() {
        let (warped, _) = synthesize_view(&dir.images[s], &depth, &dir.intrinsics, &exp_map(&poses[i]))?;
        maps.push(photometric_error(target, &warped)?);
    }
    Ok(maps)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            preset,
            spec,
            out,
            seed,
        } => {
            let scene_spec = load_spec(&preset, &spec, seed)?;
            let scene = render(&scene_spec)?;
            scene_dir::write_scene(&out, &scene)?;
            println!("frames={} width={} height={}", scene.frames.len(),
                scene_spec.intrinsics.width, scene_spec.intrinsics.height);
            Ok(())
        }

        Command::Warp {
            scene,
            source,
            state,
            out,
        } => {
            let dir = SceneDir::load(&scene)?;
            if source >= dir.sources.len() {
                return Err(CliError::Usage(format!(
                    "--source {source} out of range ({} sources)",
                    dir.sources.len()
                )));
            }
            let (inv_depth, poses) = load_state(&dir, &state)?;
            let depth = inv_depth.to_depth();
            let frame = dir.sources[source];
            let (warped, validity) = synthesize_view(
                &dir.images[frame],
                &depth,
                &dir.intrinsics,
                &exp_map(&poses[source]),
            )?;
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
            io::write_ppm(&out.join("warped.ppm"), &warped)?;
            io::write_mask_pgm(&out.join("validity.pgm"), &validity)?;
            println!("validity_fraction={:.6}", validity.fraction());
            Ok(())
        }

        Command::Loss {
            scene,
            state,
            loss,
            dump_errors,
        } => {
            let dir = SceneDir::load(&scene)?;
            let cfg = loss.build()?;
            let (inv_depth, poses) = load_state(&dir, &state)?;
            let pyramid = inv_depth.pyramid();
            let sources = dir.source_images();
            let inputs = LossInputs {
                target: dir.target_image(),
                sources: &sources,
                intrinsics: &dir.intrinsics,
                inv_depth: &pyramid,
                poses: &poses,
            };
            let (breakdown, _) = total_loss(&inputs, &cfg)?;
            print!("{}", breakdown.to_table());
            if let Some(out) = dump_errors {
                std::fs::create_dir_all(&out).map_err(|e| {
                    CliError::Data(format!("cannot create {}: {e}", out.display()))
                })?;
                let errors = pooled_scale0_errors(&dir, &inv_depth, &poses)?;
                for (s, e) in errors.iter().enumerate() {
                    io::write_pfm(&out.join(format!("error_s{s}.pfm")), e.grid())?;
                    io::write_heatmap_pgm(&out.join(format!("error_s{s}.pgm")), e.grid())?;
                }
            }
            Ok(())
        }

        Command::Masks {
            scene,
            state,
            loss,
            out,
        } => {
            let dir = SceneDir::load(&scene)?;
            let cfg = loss.build()?;
            let (inv_depth, poses) = load_state(&dir, &state)?;
            let pyramid = inv_depth.pyramid();
            let sources = dir.source_images();
            let inputs = LossInputs {
                target: dir.target_image(),
                sources: &sources,
                intrinsics: &dir.intrinsics,
                inv_depth: &pyramid,
                poses: &poses,
            };
            let (_, masks) = total_loss(&inputs, &cfg)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
            for (r, set) in masks.iter().enumerate() {
                for (s, sm) in set.sources.iter().enumerate() {
                    for (layer, mask) in [
                        ("ol", &sm.outlier),
                        ("p", &sm.principled),
                        ("a", &sm.auto),
                        ("mr", &sm.min_reprojection),
                        ("combined", &sm.combined),
                    ] {
                        io::write_mask_pgm(
                            &out.join(format!("mask_r{r}_s{s}_{layer}.pgm")),
                            mask,
                        )?;
                    }
                    println!(
                        "scale={r} source={s} ol={:.4} p={:.4} a={:.4} mr={:.4} combined={:.4}",
                        sm.outlier.fraction(),
                        sm.principled.fraction(),
                        sm.auto.fraction(),
                        sm.min_reprojection.fraction(),
                        sm.combined.fraction()
                    );
                }
            }
            Ok(())
        }

        Command::Optimize {
            scene,
            out,
            loss,
            init,
            iters,
            depth_step,
            pose_step,
            plain,
            freeze_poses,
            freeze_masks,
            tol,
        } => {
            let dir = SceneDir::load(&scene)?;
            let cfg = loss.build()?;
            let gt_inv = InverseDepthMap::from_depth(dir.target_depth())?;
            let inv_depth = if init == "gt" {
                gt_inv
            } else if let Some(factor) = init.strip_prefix("gt-scaled:") {
                let f: f64 = factor
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad factor in --init {init}")))?;
                if f <= 0.0 {
                    return Err(CliError::Usage("--init gt-scaled factor must be > 0".into()));
                }
                InverseDepthMap::new(gt_inv.grid().map(|&d| d / f))?
            } else if let Some(value) = init.strip_prefix("flat:") {
                let d: f64 = value
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad value in --init {init}")))?;
                InverseDepthMap::constant(dir.intrinsics.width, dir.intrinsics.height, d)?
            } else {
                return Err(CliError::Usage(format!(
                    "--init must be gt, gt-scaled:<f> or flat:<d>, got {init}"
                )));
            };
            let poses = dir.gt_pose_vectors()?;
            let settings = OptimSettings {
                depth_step,
                pose_step: if freeze_poses { 0.0 } else { pose_step },
                max_iters: iters,
                tol,
                adaptive: !plain,
                freeze_masks,
                snapshot_at: Vec::new(),
            };
            let sources = dir.source_images();
            let outcome = optimize(
                dir.target_image(),
                &sources,
                &dir.intrinsics,
                OptimState::new(inv_depth, poses),
                &cfg,
                &settings,
            )?;
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
            std::fs::write(out.join("trace.csv"), trace_to_csv(&outcome.trace))
                .map_err(|e| CliError::Data(format!("cannot write trace: {e}")))?;
            io::write_pfm(&out.join("depth_final.pfm"), &outcome.state.inv_depth.to_depth())?;
            let rel: Vec<_> = outcome.state.poses.iter().map(exp_map).collect();
            io::write_pose_file(&out.join("poses_final.txt"), &rel)?;
            println!(
                "iterations={} final_loss={:.12e}",
                outcome.trace.len(),
                outcome.trace.last().map(|r| r.total).unwrap_or(f64::NAN)
            );
            Ok(())
        }

        Command::EvalDepth {
            pred,
            gt,
            valid,
            min_depth,
            max_depth,
            no_median_scaling,
            crop,
        } => {
            let pred_map = io::read_pfm(&pred)?;
            let gt_map = io::read_pfm(&gt)?;
            let valid_mask = match valid {
                Some(path) => io::read_mask_pgm(&path)?,
                None => MaskMap::all_true(gt_map.width(), gt_map.height()),
            };
            let crop = match crop.as_str() {
                "none" => Crop::None,
                "eigen" => Crop::Eigen,
                other => {
                    return Err(CliError::Usage(format!(
                        "--crop must be none or eigen, got {other}"
                    )))
                }
            };
            let cfg = DepthEvalConfig {
                min_depth,
                max_depth,
                median_scaling: !no_median_scaling,
                crop,
                ..DepthEvalConfig::default()
            };
            let metrics = eval_depth(&pred_map, &gt_map, &valid_mask, &cfg)?;
            println!("{}", metrics.to_csv_row());
            Ok(())
        }

        Command::EvalOdom { pred, gt, snippet } => {
            let pred_traj = io::read_pose_file(&pred)?;
            let gt_traj = io::read_pose_file(&gt)?;
            let report = eval_ate_snippets(&pred_traj, &gt_traj, snippet)?;
            if report.degenerate_windows > 0 {
                eprintln!(
                    "warning: {} of {} windows had all-zero predicted translations",
                    report.degenerate_windows, report.windows
                );
            }
            println!("{:.6},{:.6}", report.mean, report.std);
            Ok(())
        }

        Command::Gradcheck {
            preset,
            spec,
            probes,
            seed,
            tol,
            loss,
        } => {
            let scene_spec = load_spec(&preset, &spec, 0)?;
            let cfg = loss.build()?;
            let scene = render(&scene_spec)?;
            let (target, sources, poses) = split_scene(&scene)?;
            // Deterministic jitter away from the ground-truth minimum so
            // the gradients are informative.
            let gt_inv = InverseDepthMap::from_depth(&scene.frames[scene.frames.len() / 2].depth)?;
            let jittered = {
                let mut grid = gt_inv.grid().clone();
                for y in 0..grid.height() {
                    for x in 0..grid.width() {
                        let u = hash01(seed, x as u64, y as u64);
                        *grid.at_mut(x, y) *= 0.85 + 0.3 * u;
                    }
                }
                InverseDepthMap::new(grid)?
            };
            let mut poses = poses;
            for (i, pose) in poses.iter_mut().enumerate() {
                let u = hash01(seed ^ 0xabcd, i as u64, 0) - 0.5;
                let v = hash01(seed ^ 0xabcd, i as u64, 1) - 0.5;
                pose.translation.x += 0.02 * u;
                pose.translation.z += 0.02 * v;
                pose.rotation.y += 0.005 * (hash01(seed ^ 0xabcd, i as u64, 2) - 0.5);
            }
            let state = OptimState::new(jittered, poses);
            let report = gradient_check(
                &target,
                &sources,
                &scene.spec.intrinsics,
                &state,
                &cfg,
                probes,
                seed,
            )?;
            println!(
                "max_rel_deviation={:.6e} probes={}",
                report.max_rel_deviation, report.probes
            );
            if report.max_rel_deviation >= tol {
                return Err(CliError::Numerical(format!(
                    "gradient deviation {:.6e} exceeds tolerance {tol:.6e}",
                    report.max_rel_deviation
                )));
            }
            Ok(())
        }

        Command::Histogram { scene, state, out } => {
            let dir = SceneDir::load(&scene)?;
            let (inv_depth, poses) = load_state(&dir, &state)?;
            let errors = pooled_scale0_errors(&dir, &inv_depth, &poses)?;
            let refs: Vec<&ErrorMap> = errors.iter().collect();
            let stats = error_statistics(&refs)?;
            let upper = stats.upper_bound(0.5);
            let lower = stats.lower_bound(1.0);

            const BINS: usize = 64;
            let mut counts = [0u64; BINS];
            let mut below = 0u64;
            let mut tail_sum = 0.0;
            let mut tail_count = 0u64;
            let mut total = 0u64;
            for e in &errors {
                for &v in e.grid().data() {
                    let bin = ((v * BINS as f64) as usize).min(BINS - 1);
                    counts[bin] += 1;
                    total += 1;
                    if v < upper {
                        below += 1;
                    } else {
                        tail_sum += v;
                        tail_count += 1;
                    }
                }
            }
            let mut csv = String::from("bin,lo,hi,count\n");
            for (i, c) in counts.iter().enumerate() {
                csv.push_str(&format!(
                    "{i},{:.6},{:.6},{c}\n",
                    i as f64 / BINS as f64,
                    (i + 1) as f64 / BINS as f64
                ));
            }
            std::fs::write(&out, csv)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
            let tail_mean = if tail_count > 0 {
                tail_sum / tail_count as f64
            } else {
                0.0
            };
            println!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9},{:.9e}",
                stats.mu,
                stats.sigma,
                lower,
                upper,
                below as f64 / total as f64,
                tail_mean
            );
            Ok(())
        }
    }
}

/// Target image, source images, and ground-truth relative poses of a
/// rendered scene (target = middle frame).
fn split_scene(
    scene: &RenderedScene,
) -> Result<
    (
        warplab_core::image::ImageBuffer,
        Vec<warplab_core::image::ImageBuffer>,
        Vec<PoseVector>,
    ),
    CliError,
> {
    let t = scene.frames.len() / 2;
    let target = scene.frames[t].image.clone();
    let mut sources = Vec::new();
    let mut poses = Vec::new();
    for s in 0..scene.frames.len() {
        if s == t {
            continue;
        }
        sources.push(scene.frames[s].image.clone());
        poses.push(
            warplab_core::geometry::log_map(&scene.relative_pose(t, s))
                .map_err(|e| CliError::Data(e.to_string()))?,
        );
    }
    Ok((target, sources, poses))
}

fn hash01(seed: u64, a: u64, b: u64) -> f64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xc2b2ae3d27d4eb4f));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
