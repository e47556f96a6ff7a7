//! Acceptance suite: each test checks one release criterion end to end and
//! prints a PASS line with the measured numbers (visible under
//! `cargo test --test acceptance -- --nocapture`).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use warplab_core::geometry::{exp_map, log_map, PoseVector, RigidTransform};
use warplab_core::grid::{Grid, MaskMap};
use warplab_core::image::InverseDepthMap;
use warplab_core::io;
use warplab_core::loss::{scale_weights, total_loss, LossConfig, LossInputs};
use warplab_core::masking::{error_statistics, outlier_mask};
use warplab_core::metrics::{eval_ate_snippets, eval_depth, DepthEvalConfig};
use warplab_core::optimize::{gradient_check, optimize, OptimSettings, OptimState};
use warplab_core::photometric::ErrorMap;
use warplab_core::synthscene::{preset, random_scene, render, RenderedScene, ScenePreset};

fn warplab_bin() -> &'static str {
    env!("CARGO_BIN_EXE_warplab")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("warplab-acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Target/sources/ground-truth poses of a rendered 3-frame scene.
fn split(scene: &RenderedScene) -> (usize, Vec<usize>, Vec<PoseVector>) {
    let t = scene.frames.len() / 2;
    let sources: Vec<usize> = (0..scene.frames.len()).filter(|&i| i != t).collect();
    let poses = sources
        .iter()
        .map(|&s| log_map(&scene.relative_pose(t, s)).unwrap())
        .collect();
    (t, sources, poses)
}

/// The fixed A3/A4 perturbation: depth times 1.3, each pose rotated by
/// 0.02 rad and translated by 0.05 units along fixed directions.
fn perturb_poses(poses: &mut [PoseVector]) {
    let axes = [
        Vector3::new(1.0, 0.4, -0.2).normalize(),
        Vector3::new(-0.3, 1.0, 0.5).normalize(),
    ];
    let dirs = [
        Vector3::new(0.6, -0.8, 0.2).normalize(),
        Vector3::new(-0.5, 0.2, 0.9).normalize(),
    ];
    for (i, pose) in poses.iter_mut().enumerate() {
        pose.rotation += axes[i % 2] * 0.02;
        pose.translation += dirs[i % 2] * 0.05;
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

/// Abs Rel over a region after full-image median scaling, the evaluation
/// protocol with a region restriction for aggregation.
fn region_abs_rel(pred: &Grid<f64>, gt: &Grid<f64>, region: &MaskMap) -> f64 {
    let scale = median(gt.data()) / median(pred.data());
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if *region.at(x, y) {
                sum += (pred.at(x, y) * scale - gt.at(x, y)).abs() / gt.at(x, y);
                n += 1;
            }
        }
    }
    sum / n as f64
}

// ---------------------------------------------------------------------------
// A1: gradient fidelity
// ---------------------------------------------------------------------------

#[test]
fn a1_gradient_fidelity() {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let scene = render(&random_scene(seed, 32, 24)).unwrap();
        let (t, sources, mut poses) = split(&scene);
        let target = scene.frames[t].image.clone();
        let source_imgs: Vec<_> = sources.iter().map(|&s| scene.frames[s].image.clone()).collect();

        // Jitter the state away from the minimum, deterministically.
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(41) ^ 0x5eed);
        let mut grid = InverseDepthMap::from_depth(&scene.frames[t].depth)
            .unwrap()
            .grid()
            .clone();
        for v in grid.data_mut() {
            *v *= rng.random_range(0.85..1.15);
        }
        for pose in poses.iter_mut() {
            pose.translation += Vector3::new(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            pose.rotation += Vector3::new(0.0, rng.random_range(-0.003..0.003), 0.0);
        }
        let state = OptimState::new(InverseDepthMap::new(grid).unwrap(), poses);
        let report = gradient_check(
            &target,
            &source_imgs,
            &scene.spec.intrinsics,
            &state,
            &cfg,
            64,
            seed ^ 0xfeed,
        )
        .unwrap();
        assert_eq!(report.probes, 64, "scene {seed} ran out of probe candidates");
        assert!(
            report.max_rel_deviation < 1e-3,
            "scene {seed}: deviation {}",
            report.max_rel_deviation
        );
        worst = worst.max(report.max_rel_deviation);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    println!("A1 gradient fidelity: PASS (worst deviation {worst:.3e} over 10 scenes, {elapsed:.1}s)");
}

// ---------------------------------------------------------------------------
// A2: ground-truth fixed point
// ---------------------------------------------------------------------------

#[test]
fn a2_ground_truth_fixed_point() {
    let start = Instant::now();
    let scene = render(&preset(ScenePreset::Static)).unwrap();
    let (t, sources, poses) = split(&scene);
    let target = scene.frames[t].image.clone();
    let source_imgs: Vec<_> = sources.iter().map(|&s| scene.frames[s].image.clone()).collect();
    let inv = InverseDepthMap::from_depth(&scene.frames[t].depth).unwrap();
    let pyramid = inv.pyramid();
    let mut cfg = LossConfig::default();
    cfg.lambda = 0.0;
    let inputs = LossInputs {
        target: &target,
        sources: &source_imgs,
        intrinsics: &scene.spec.intrinsics,
        inv_depth: &pyramid,
        poses: &poses,
    };
    let (breakdown, masks) = total_loss(&inputs, &cfg).unwrap();
    assert!(
        breakdown.total < 1e-3,
        "ground-truth loss {} >= 1e-3",
        breakdown.total
    );

    // Auto and min-reprojection masks away from depth discontinuities.
    let bad = scene.unreliable_pixels(t, &sources);
    let mut checked = 0usize;
    for y in 0..target.height() {
        for x in 0..target.width() {
            if *bad.at(x, y) {
                continue;
            }
            checked += 1;
            for (si, sm) in masks[0].sources.iter().enumerate() {
                assert!(
                    *sm.auto.at(x, y),
                    "auto mask false at ({x},{y}) source {si}"
                );
            }
            let any_mr = masks[0]
                .sources
                .iter()
                .any(|sm| *sm.min_reprojection.at(x, y));
            assert!(any_mr, "no source retains ({x},{y}) under min-reprojection");
        }
    }
    assert!(checked > 500, "exclusion left too few pixels: {checked}");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.1}s, budget 5s");
    println!(
        "A2 ground-truth fixed point: PASS (loss {:.3e}, masks clean on {checked} px, {elapsed:.2}s)",
        breakdown.total
    );
}

// ---------------------------------------------------------------------------
// A3: direct recovery
// ---------------------------------------------------------------------------

#[test]
fn a3_direct_recovery() {
    let start = Instant::now();
    let scene = render(&preset(ScenePreset::Static)).unwrap();
    let (t, sources, mut poses) = split(&scene);
    let target = scene.frames[t].image.clone();
    let source_imgs: Vec<_> = sources.iter().map(|&s| scene.frames[s].image.clone()).collect();
    let gt_depth = scene.frames[t].depth.clone();

    let gt_inv = InverseDepthMap::from_depth(&gt_depth).unwrap();
    let init_inv = InverseDepthMap::new(gt_inv.grid().map(|&d| d / 1.3)).unwrap();
    perturb_poses(&mut poses);

    let cfg = LossConfig::default();
    // Pose warm-up, then gentle joint refinement: 1600 of the allowed 2000
    // iterations.
    let mut warm = OptimSettings::default();
    warm.depth_step = 0.0;
    warm.pose_step = 1e-3;
    warm.max_iters = 1000;
    let k = scene.spec.intrinsics;
    let o1 = optimize(
        &target,
        &source_imgs,
        &k,
        OptimState::new(init_inv, poses),
        &cfg,
        &warm,
    )
    .unwrap();

    let mut joint = OptimSettings::default();
    joint.adaptive = false;
    joint.depth_step = 2.0;
    joint.pose_step = 0.2;
    joint.max_iters = 600;
    let o2 = optimize(
        &target,
        &source_imgs,
        &k,
        OptimState::new(o1.state.inv_depth, o1.state.poses),
        &cfg,
        &joint,
    )
    .unwrap();
    let iterations = o1.trace.len() + o2.trace.len();
    assert!(iterations <= 2000, "{iterations} iterations");

    let pred = o2.state.inv_depth.to_depth();
    let valid = MaskMap::all_true(gt_depth.width(), gt_depth.height());
    let metrics = eval_depth(&pred, &gt_depth, &valid, &DepthEvalConfig::default()).unwrap();
    assert!(
        metrics.abs_rel < 0.05,
        "Abs Rel {} >= 0.05 after {iterations} iterations",
        metrics.abs_rel
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "took {elapsed:.1}s, budget 300s");
    println!(
        "A3 direct recovery: PASS (Abs Rel {:.4} after {iterations} iterations, {elapsed:.0}s)",
        metrics.abs_rel
    );
}

// ---------------------------------------------------------------------------
// A4 + A6 share the contra-motion runs
// ---------------------------------------------------------------------------

struct ContraRuns {
    scene: RenderedScene,
    masked: Vec<(usize, OptimState)>,
    masked_final: OptimState,
    unmasked_final: OptimState,
    elapsed: f64,
}

fn contra_runs() -> &'static ContraRuns {
    static RUNS: OnceLock<ContraRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let scene = render(&preset(ScenePreset::ContraMotion)).unwrap();
        let (t, sources, poses) = split(&scene);
        let target = scene.frames[t].image.clone();
        let source_imgs: Vec<_> =
            sources.iter().map(|&s| scene.frames[s].image.clone()).collect();
        let gt_inv = InverseDepthMap::from_depth(&scene.frames[t].depth).unwrap();
        let init = InverseDepthMap::new(gt_inv.grid().map(|&d| d / 1.3)).unwrap();

        // Depth-only plain descent from the scaled init with true poses:
        // the paired ablation isolates what the outlier mask does to the
        // depth of the moving object.
        let mut settings = OptimSettings::default();
        settings.adaptive = false;
        settings.depth_step = 1.0;
        settings.pose_step = 0.0;
        settings.max_iters = 2000;
        settings.snapshot_at = vec![0, 500, 2000];

        let run = |use_outlier: bool| {
            let mut cfg = LossConfig::default();
            cfg.use_outlier = use_outlier;
            optimize(
                &target,
                &source_imgs,
                &scene.spec.intrinsics,
                OptimState::new(init.clone(), poses.clone()),
                &cfg,
                &settings,
            )
            .unwrap()
        };
        let on = run(true);
        let off = run(false);
        ContraRuns {
            scene,
            masked: on.snapshots,
            masked_final: on.state,
            unmasked_final: off.state,
            elapsed: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn a4_contra_motion_masking_benefit() {
    let runs = contra_runs();
    let scene = &runs.scene;
    let t = scene.frames.len() / 2;
    let gt_depth = &scene.frames[t].depth;
    let motion = &scene.frames[t].motion_mask;
    let background = motion.map(|&m| !m);

    let on_pred = runs.masked_final.inv_depth.to_depth();
    let off_pred = runs.unmasked_final.inv_depth.to_depth();
    let on_obj = region_abs_rel(&on_pred, gt_depth, motion);
    let off_obj = region_abs_rel(&off_pred, gt_depth, motion);
    let on_bg = region_abs_rel(&on_pred, gt_depth, &background);
    let off_bg = region_abs_rel(&off_pred, gt_depth, &background);

    assert!(
        on_obj <= 0.7 * off_obj,
        "object Abs Rel: masked {on_obj:.4} vs unmasked {off_obj:.4} (need 30% lower)"
    );
    assert!(
        on_bg <= 1.1 * off_bg,
        "background Abs Rel: masked {on_bg:.4} vs unmasked {off_bg:.4} (max 10% worse)"
    );
    assert!(
        runs.elapsed < 600.0,
        "paired runs took {:.0}s, budget 600s",
        runs.elapsed
    );
    println!(
        "A4 contra-motion masking benefit: PASS (object {on_obj:.4} vs {off_obj:.4}, \
         background {on_bg:.4} vs {off_bg:.4}, {:.0}s)",
        runs.elapsed
    );
}

#[test]
fn a6_error_distribution_evolution() {
    let runs = contra_runs();
    let scene = &runs.scene;
    assert_eq!(runs.masked.len(), 3, "snapshots at 0, 500, 2000");

    // Write the scene once, then drive the histogram command on each
    // checkpoint state.
    let dir = tmp_dir("a6-scene");
    let synth = Command::new(warplab_bin())
        .args(["synth", "--preset", "contra_motion", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(synth.status.success());
    let _ = scene;

    let mut frac_below = Vec::new();
    let mut tail_means = Vec::new();
    for (iter, state) in &runs.masked {
        let depth_path = dir.join(format!("snap_{iter}.pfm"));
        let poses_path = dir.join(format!("snap_{iter}_poses.txt"));
        io::write_pfm(&depth_path, &state.inv_depth.to_depth()).unwrap();
        let rel: Vec<RigidTransform> = state.poses.iter().map(exp_map).collect();
        io::write_pose_file(&poses_path, &rel).unwrap();
        let out_csv = dir.join(format!("hist_{iter}.csv"));
        let output = Command::new(warplab_bin())
            .args(["histogram", "--scene"])
            .arg(&dir)
            .args(["--depth"])
            .arg(&depth_path)
            .args(["--poses"])
            .arg(&poses_path)
            .args(["--out"])
            .arg(&out_csv)
            .output()
            .unwrap();
        assert!(output.status.success(), "histogram command failed");
        let stdout = String::from_utf8(output.stdout).unwrap();
        let fields: Vec<f64> = stdout
            .trim()
            .split(',')
            .map(|f| f.parse().unwrap())
            .collect();
        assert_eq!(fields.len(), 6, "summary row: {stdout}");
        frac_below.push(fields[4]);
        tail_means.push(fields[5]);
        // The binned CSV must exist and carry 64 bins.
        let csv = std::fs::read_to_string(&out_csv).unwrap();
        assert_eq!(csv.lines().count(), 65);
    }

    assert!(
        frac_below[0] < frac_below[1] && frac_below[1] < frac_below[2],
        "sub-bound mass not monotone: {frac_below:?}"
    );
    let tail_drop = (tail_means[0] - tail_means[2]) / tail_means[0];
    assert!(
        tail_drop < 0.20,
        "tail mean dropped {:.1}% (limit 20%): {tail_means:?}",
        tail_drop * 100.0
    );
    println!(
        "A6 error-distribution evolution: PASS (sub-bound mass {:.4} -> {:.4} -> {:.4}, \
         tail mean change {:+.1}%)",
        frac_below[0],
        frac_below[1],
        frac_below[2],
        -tail_drop * 100.0
    );
}

// ---------------------------------------------------------------------------
// A5: outlier-mask statistics
// ---------------------------------------------------------------------------

#[test]
fn a5_outlier_statistics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20260808);
    let n = 512 * 512;
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        vals.push((0.5 + 0.08 * z).clamp(0.0, 1.0));
    }
    let e = ErrorMap::new(Grid::from_vec(512, 512, vals).unwrap()).unwrap();
    let stats = error_statistics(&[&e]).unwrap();
    let mask = outlier_mask(&e, &stats, 1.0, 0.5);
    let hi = stats.upper_bound(0.5);
    let lo = stats.lower_bound(1.0);
    let above = e.grid().data().iter().filter(|&&v| v >= hi).count() as f64 / n as f64;
    let below = e.grid().data().iter().filter(|&&v| v <= lo).count() as f64 / n as f64;
    // Gaussian reference: 1 - Phi(0.5) and Phi(-1).
    assert!(
        (above - 0.308537538725987).abs() < 0.01,
        "upper-bound fraction {above:.4}"
    );
    assert!(
        (below - 0.158655253931457).abs() < 0.01,
        "lower-bound fraction {below:.4}"
    );
    // The produced mask matches the complement of both cuts.
    assert!((mask.fraction() - (1.0 - above - below)).abs() < 1e-12);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.2}s, budget 1s");
    println!(
        "A5 outlier statistics: PASS (upper {:.2}% lower {:.2}%, {elapsed:.2}s)",
        above * 100.0,
        below * 100.0
    );
}

// ---------------------------------------------------------------------------
// A7: metric oracle equivalence
// ---------------------------------------------------------------------------

/// Brute-force scalar reimplementation of the seven depth metrics.
fn depth_metrics_oracle(
    pred: &[f64],
    gt: &[f64],
    min_depth: f64,
    max_depth: f64,
    median_scaling: bool,
) -> Option<[f64; 7]> {
    let mut p_vals = Vec::new();
    let mut g_vals = Vec::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= min_depth && g <= max_depth {
            p_vals.push(p);
            g_vals.push(g);
        }
    }
    if p_vals.is_empty() {
        return None;
    }
    if median_scaling {
        let m_p = median(&p_vals);
        let m_g = median(&g_vals);
        for p in p_vals.iter_mut() {
            *p = (*p / m_p) * m_g;
        }
    }
    for p in p_vals.iter_mut() {
        *p = p.clamp(min_depth, max_depth);
    }
    let n = p_vals.len() as f64;
    let mut out = [0.0f64; 7];
    for (&p, &g) in p_vals.iter().zip(&g_vals) {
        out[0] += (p - g).abs() / g;
        out[1] += (p - g) * (p - g) / g;
        out[2] += (p - g) * (p - g);
        out[3] += (p.ln() - g.ln()) * (p.ln() - g.ln());
        let r = (p / g).max(g / p);
        if r < 1.25 {
            out[4] += 1.0;
        }
        if r < 1.25f64.powi(2) {
            out[5] += 1.0;
        }
        if r < 1.25f64.powi(3) {
            out[6] += 1.0;
        }
    }
    Some([
        out[0] / n,
        out[1] / n,
        (out[2] / n).sqrt(),
        (out[3] / n).sqrt(),
        out[4] / n,
        out[5] / n,
        out[6] / n,
    ])
}

/// Brute-force snippet ATE.
fn ate_oracle(pred: &[RigidTransform], gt: &[RigidTransform], len: usize) -> (f64, f64) {
    let mut ates = Vec::new();
    for start in 0..=(pred.len() - len) {
        let p0 = pred[start].inverse();
        let g0 = gt[start].inverse();
        let p: Vec<Vector3<f64>> = (0..len)
            .map(|j| p0.compose(&pred[start + j]).translation)
            .collect();
        let g: Vec<Vector3<f64>> = (0..len)
            .map(|j| g0.compose(&gt[start + j]).translation)
            .collect();
        let den: f64 = p.iter().map(|v| v.dot(v)).sum();
        let s = if den == 0.0 {
            1.0
        } else {
            p.iter().zip(&g).map(|(a, b)| a.dot(b)).sum::<f64>() / den
        };
        ates.push(p.iter().zip(&g).map(|(a, b)| (a * s - b).norm()).sum::<f64>() / len as f64);
    }
    let mean = ates.iter().sum::<f64>() / ates.len() as f64;
    let var = ates.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / ates.len() as f64;
    (mean, var.sqrt())
}

#[test]
fn a7_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for case in 0..50 {
        let w = 8;
        let h = 6;
        let pred = Grid::from_fn(w, h, |_, _| rng.random_range(0.5..60.0));
        let gt = Grid::from_fn(w, h, |_, _| rng.random_range(0.05..100.0));
        let scaling = case % 2 == 0;
        let cfg = DepthEvalConfig {
            median_scaling: scaling,
            ..DepthEvalConfig::default()
        };
        let valid = MaskMap::all_true(w, h);
        let ours = eval_depth(&pred, &gt, &valid, &cfg);
        let oracle = depth_metrics_oracle(pred.data(), gt.data(), 0.1, 80.0, scaling);
        match (ours, oracle) {
            (Ok(m), Some(o)) => {
                let got = [m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.a1, m.a2, m.a3];
                for (i, (a, b)) in got.iter().zip(&o).enumerate() {
                    assert!(
                        (a - b).abs() < 1e-12,
                        "case {case} metric {i}: {a} vs {b}"
                    );
                }
            }
            (Err(_), None) => {}
            (a, b) => panic!("case {case}: implementation {a:?} vs oracle {b:?}"),
        }

        // Snippet ATE against its oracle.
        let n = 8;
        let traj = |rng: &mut ChaCha8Rng| -> Vec<RigidTransform> {
            let mut out = Vec::new();
            for i in 0..n {
                out.push(RigidTransform::from_translation(Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    i as f64 + rng.random_range(-0.2..0.2),
                )));
            }
            out
        };
        let p = traj(&mut rng);
        let g = traj(&mut rng);
        let ours = eval_ate_snippets(&p, &g, 5).unwrap();
        let (mean, std) = ate_oracle(&p, &g, 5);
        assert!((ours.mean - mean).abs() < 1e-12);
        assert!((ours.std - std).abs() < 1e-12);
    }

    // Median-scaling invariance, exact: dyadic predictions scale exactly
    // under the tested factors, so every metric must match bitwise.
    let mut rng = ChaCha8Rng::seed_from_u64(778);
    let pred = Grid::from_fn(9, 7, |_, _| {
        (1u64 << rng.random_range(0..7)) as f64 * 0.25
    });
    let gt = Grid::from_fn(9, 7, |_, _| rng.random_range(1.0..40.0));
    let valid = MaskMap::all_true(9, 7);
    let cfg = DepthEvalConfig::default();
    let base = eval_depth(&pred, &gt, &valid, &cfg).unwrap();
    for c in [0.1, 1.0, 17.0] {
        let scaled = pred.map(|&p| p * c);
        let m = eval_depth(&scaled, &gt, &valid, &cfg).unwrap();
        assert_eq!(m, base, "median-scaling invariance broke at c={c}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2}s, budget 5s");
    println!("A7 metric oracle equivalence: PASS (50 cases + exact invariance, {elapsed:.2}s)");
}

// ---------------------------------------------------------------------------
// A8: weighted multi-scale constants
// ---------------------------------------------------------------------------

#[test]
fn a8_constants() {
    assert_eq!(scale_weights(0.25), [1.0, 0.25, 0.0625, 0.015625]);
    let cfg = LossConfig::default();
    assert_eq!(cfg.eta, 1.0);
    assert_eq!(cfg.lambda, 0.001);
    assert_eq!(cfg.e_scale, 0.5);
    assert_eq!(cfg.l_threshold, 1.0);
    assert_eq!(cfg.u_threshold, 0.5);
    assert_eq!(cfg.f_scale, 0.25);
    println!("A8 constants: PASS (w = {:?}, eta/lambda/e = 1/0.001/0.5, l/u = 1/0.5)", scale_weights(0.25));
}

// ---------------------------------------------------------------------------
// A9: determinism
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str], extra: &[(&str, &Path)]) -> (Vec<u8>, Vec<u8>) {
    let mut cmd = Command::new(warplab_bin());
    cmd.args(args);
    for (flag, path) in extra {
        cmd.arg(flag).arg(path);
    }
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (out.stdout, out.stderr)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn a9_determinism() {
    let start = Instant::now();
    let base = tmp_dir("a9");

    // One scene feeds the downstream commands.
    let scene_a = base.join("scene_a");
    let scene_b = base.join("scene_b");
    let scene_mt = base.join("scene_mt");

    struct Step {
        name: &'static str,
        args: Vec<String>,
        out_dirs: Vec<PathBuf>,
    }

    let mk = |name: &'static str, args: Vec<String>, out_dirs: Vec<PathBuf>| Step {
        name,
        args,
        out_dirs,
    };

    let s = |v: &str| v.to_string();
    let scene_arg = |p: &Path| p.to_string_lossy().into_owned();

    // synth twice + threads variant.
    for (dir, threads) in [(&scene_a, "1"), (&scene_b, "1"), (&scene_mt, "4")] {
        run_cli(
            &[
                "synth", "--preset", "contra_motion", "--seed", "9", "--threads", threads,
                "--out", &scene_arg(dir),
            ],
            &[],
        );
    }
    assert_eq!(dir_bytes(&scene_a), dir_bytes(&scene_b), "synth not deterministic");
    assert_eq!(dir_bytes(&scene_a), dir_bytes(&scene_mt), "synth thread-dependent");

    // Odometry fixture: a longer trajectory file.
    let traj_path = base.join("traj.txt");
    let traj: Vec<RigidTransform> = (0..8)
        .map(|i| RigidTransform::from_translation(Vector3::new(0.1 * i as f64, 0.0, i as f64)))
        .collect();
    io::write_pose_file(&traj_path, &traj).unwrap();

    let scene = scene_arg(&scene_a);
    let steps = vec![
        mk(
            "warp",
            vec![s("warp"), s("--scene"), scene.clone(), s("--source"), s("0"), s("--out")],
            vec![base.join("warp1"), base.join("warp2"), base.join("warp_mt")],
        ),
        mk(
            "loss",
            vec![s("loss"), s("--scene"), scene.clone(), s("--gt-init")],
            vec![],
        ),
        mk(
            "masks",
            vec![s("masks"), s("--scene"), scene.clone(), s("--out")],
            vec![base.join("masks1"), base.join("masks2"), base.join("masks_mt")],
        ),
        mk(
            "optimize",
            vec![
                s("optimize"), s("--scene"), scene.clone(), s("--init"), s("gt-scaled:1.2"),
                s("--iters"), s("40"), s("--out"),
            ],
            vec![base.join("opt1"), base.join("opt2"), base.join("opt_mt")],
        ),
        mk(
            "eval-depth",
            vec![
                s("eval-depth"),
                s("--pred"),
                scene_arg(&scene_a.join("depth_000.pfm")),
                s("--gt"),
                scene_arg(&scene_a.join("depth_001.pfm")),
            ],
            vec![],
        ),
        mk(
            "eval-odom",
            vec![
                s("eval-odom"),
                s("--pred"),
                scene_arg(&traj_path),
                s("--gt"),
                scene_arg(&traj_path),
            ],
            vec![],
        ),
        mk(
            "gradcheck",
            vec![
                s("gradcheck"), s("--preset"), s("static"), s("--probes"), s("24"),
                s("--seed"), s("3"),
            ],
            vec![],
        ),
        mk(
            "histogram",
            vec![s("histogram"), s("--scene"), scene.clone(), s("--out")],
            vec![
                base.join("hist1").join("hist.csv"),
                base.join("hist2").join("hist.csv"),
                base.join("hist_mt").join("hist.csv"),
            ],
        ),
    ];

    for step in &steps {
        let mut outputs: Vec<Vec<u8>> = Vec::new();
        let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for (i, threads) in ["1", "1", "4"].iter().enumerate() {
            let mut args: Vec<String> = step.args.clone();
            if !step.out_dirs.is_empty() {
                if let Some(parent) = step.out_dirs[i].parent() {
                    std::fs::create_dir_all(parent).unwrap();
                }
                args.push(scene_arg(&step.out_dirs[i]));
            }
            args.push(s("--threads"));
            args.push(s(threads));
            let argv: Vec<&str> = args.iter().map(|a| a.as_str()).collect();
            let (stdout, _) = run_cli(&argv, &[]);
            outputs.push(stdout);
            if !step.out_dirs.is_empty() {
                let p = &step.out_dirs[i];
                if p.extension().is_some() {
                    artifacts.push(vec![(
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        std::fs::read(p).unwrap(),
                    )]);
                } else {
                    artifacts.push(dir_bytes(p));
                }
            }
        }
        assert_eq!(
            outputs[0], outputs[1],
            "{}: stdout differs between identical runs",
            step.name
        );
        assert_eq!(
            outputs[0], outputs[2],
            "{}: stdout differs between thread counts",
            step.name
        );
        if !artifacts.is_empty() {
            // Artifact file names differ only by the output directory.
            let names = |a: &Vec<(String, Vec<u8>)>| {
                a.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()
            };
            assert_eq!(names(&artifacts[0]), names(&artifacts[1]));
            assert_eq!(artifacts[0], artifacts[1], "{}: files differ", step.name);
            assert_eq!(
                artifacts[0], artifacts[2],
                "{}: files differ across thread counts",
                step.name
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("A9 determinism: PASS (9 subcommands, two runs + 4-thread variant, {elapsed:.0}s)");
}
