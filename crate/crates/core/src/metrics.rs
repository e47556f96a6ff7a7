//! Depth evaluation (seven standard metrics with median scaling, depth cap
//! and optional crop) and snippet absolute trajectory error.
//!
//! Median scaling divides the prediction by its median before multiplying
//! by the ground-truth median, and the median of an even-length set is the
//! lower middle element. Both choices make the evaluation exactly invariant
//! to prediction rescaling whenever the rescaled inputs are themselves
//! exact, which the equality-based invariance tests rely on.

use crate::geometry::RigidTransform;
use crate::grid::{Grid, MaskMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no valid pixels after masking, cropping and depth capping")]
    NoValidPixels,
    #[error("median of predictions is {0}, must be positive")]
    NonPositiveMedian(f64),
    #[error("trajectories have {0} and {1} poses, need equal lengths >= {2}")]
    BadTrajectoryLengths(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crop {
    None,
    /// The conventional crop fractions of the evaluation protocol this
    /// follows; the numbers live in config, not code.
    Eigen,
}

/// Depth evaluation protocol parameters.
#[derive(Debug, Clone)]
pub struct DepthEvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
    pub median_scaling: bool,
    pub crop: Crop,
    /// Fractions of height (top, bottom) and width (left, right) retained
    /// by the Eigen crop.
    pub eigen_crop: [f64; 4],
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self {
            min_depth: 0.1,
            max_depth: 80.0,
            median_scaling: true,
            crop: Crop::None,
            eigen_crop: [0.40810811, 0.99189189, 0.03594771, 0.96405229],
        }
    }
}

impl DepthEvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(MetricsError::InvalidConfig(format!(
                "need 0 < min_depth < max_depth, got {} and {}",
                self.min_depth, self.max_depth
            )));
        }
        let c = &self.eigen_crop;
        if c.iter().any(|f| !(0.0..=1.0).contains(f)) || c[0] >= c[1] || c[2] >= c[3] {
            return Err(MetricsError::InvalidConfig(format!(
                "crop fractions must be ordered within [0,1], got {c:?}"
            )));
        }
        Ok(())
    }
}

/// The four error metrics and three accuracy metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl DepthMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.a1, self.a2, self.a3
        )
    }
}

/// Lower-middle-element median; `values` must be non-empty.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    sorted[(sorted.len() - 1) / 2]
}

/// Evaluates predicted against ground-truth depth. Pixels are retained when
/// valid, inside the crop, and with ground truth in `[min_depth,
/// max_depth]`; predictions are median-scaled (optionally) and clamped to
/// the same range.
pub fn eval_depth(
    pred: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &MaskMap,
    cfg: &DepthEvalConfig,
) -> Result<DepthMetrics, MetricsError> {
    cfg.validate()?;
    if !pred.same_shape(gt) {
        return Err(MetricsError::ShapeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    if !pred.same_shape(valid) {
        return Err(MetricsError::ShapeMismatch(
            pred.width(),
            pred.height(),
            valid.width(),
            valid.height(),
        ));
    }
    let (x0, x1, y0, y1) = match cfg.crop {
        Crop::None => (0, pred.width(), 0, pred.height()),
        Crop::Eigen => {
            let h = pred.height() as f64;
            let w = pred.width() as f64;
            (
                (cfg.eigen_crop[2] * w) as usize,
                (cfg.eigen_crop[3] * w) as usize,
                (cfg.eigen_crop[0] * h) as usize,
                (cfg.eigen_crop[1] * h) as usize,
            )
        }
    };

    let mut p_vals = Vec::new();
    let mut g_vals = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let g = *gt.at(x, y);
            if *valid.at(x, y) && g >= cfg.min_depth && g <= cfg.max_depth {
                p_vals.push(*pred.at(x, y));
                g_vals.push(g);
            }
        }
    }
    if p_vals.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }

    if cfg.median_scaling {
        let m_p = median(&p_vals);
        if m_p <= 0.0 {
            return Err(MetricsError::NonPositiveMedian(m_p));
        }
        let m_g = median(&g_vals);
        // Divide by the prediction median first: the scale of the input
        // cancels in the division, so rescaled-but-exact inputs evaluate
        // bit-identically.
        for p in p_vals.iter_mut() {
            *p = (*p / m_p) * m_g;
        }
    }
    for p in p_vals.iter_mut() {
        *p = p.clamp(cfg.min_depth, cfg.max_depth);
    }

    let n = p_vals.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut a3 = 0.0;
    for (&p, &g) in p_vals.iter().zip(&g_vals) {
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            a1 += 1.0;
        }
        if ratio < 1.25 * 1.25 {
            a2 += 1.0;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            a3 += 1.0;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        a1: a1 / n,
        a2: a2 / n,
        a3: a3 / n,
    })
}

/// Snippet ATE report. `degenerate_windows` counts windows where the
/// predicted translations were all zero against nonzero ground truth, in
/// which case the scale is pinned to 1 instead of fit.
#[derive(Debug, Clone, Copy)]
pub struct AteReport {
    pub mean: f64,
    pub std: f64,
    pub windows: usize,
    pub degenerate_windows: usize,
}

/// Absolute trajectory error over sliding `snippet_len`-frame windows.
/// Poses are camera-to-world; each window is re-expressed relative to its
/// first frame and the predicted translations are scale-aligned by the
/// least-squares scalar before averaging per-frame distances.
pub fn eval_ate_snippets(
    pred: &[RigidTransform],
    gt: &[RigidTransform],
    snippet_len: usize,
) -> Result<AteReport, MetricsError> {
    if pred.len() != gt.len() || pred.len() < snippet_len || snippet_len < 2 {
        return Err(MetricsError::BadTrajectoryLengths(
            pred.len(),
            gt.len(),
            snippet_len.max(2),
        ));
    }
    let mut ates = Vec::new();
    let mut degenerate = 0usize;
    for start in 0..=(pred.len() - snippet_len) {
        let p0 = pred[start].inverse();
        let g0 = gt[start].inverse();
        let mut p_tr = Vec::with_capacity(snippet_len);
        let mut g_tr = Vec::with_capacity(snippet_len);
        for j in 0..snippet_len {
            p_tr.push(p0.compose(&pred[start + j]).translation);
            g_tr.push(g0.compose(&gt[start + j]).translation);
        }
        let num: f64 = p_tr.iter().zip(&g_tr).map(|(p, g)| p.dot(g)).sum();
        let den: f64 = p_tr.iter().map(|p| p.dot(p)).sum();
        let scale = if den == 0.0 {
            degenerate += 1;
            1.0
        } else {
            num / den
        };
        let ate = p_tr
            .iter()
            .zip(&g_tr)
            .map(|(p, g)| (p * scale - g).norm())
            .sum::<f64>()
            / snippet_len as f64;
        ates.push(ate);
    }
    let n = ates.len() as f64;
    let mean = ates.iter().sum::<f64>() / n;
    let var = ates.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    Ok(AteReport {
        mean,
        std: var.sqrt(),
        windows: ates.len(),
        degenerate_windows: degenerate,
    })
}
