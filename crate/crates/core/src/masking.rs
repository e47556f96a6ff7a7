//! The four per-source masks and their conjunction.
//!
//! Outlier masking keeps pixels whose photometric error lies strictly
//! inside `(mu - l*sigma, mu + u*sigma)` of the sample's pooled error
//! statistics. The principled mask keeps reprojections that land inside the
//! source image in front of the camera, auto-masking keeps pixels that the
//! warp explains better than the unwarped source, and minimum reprojection
//! keeps the best source per pixel. Masks are built from the current error
//! maps but treated as constants during differentiation.

use crate::grid::MaskMap;
use crate::photometric::ErrorMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskingError {
    #[error("empty error-map list")]
    EmptyList,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// Pooled error statistics over all source error maps of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStatistics {
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
}

impl ErrorStatistics {
    pub fn lower_bound(&self, l: f64) -> f64 {
        self.mu - l * self.sigma
    }

    pub fn upper_bound(&self, u: f64) -> f64 {
        self.mu + u * self.sigma
    }
}

/// Mean and population standard deviation pooled over every pixel of every
/// source error map. No pixels are excluded: statistics see the whole
/// sample, including pixels the principled mask will later drop.
pub fn error_statistics(errors: &[&ErrorMap]) -> Result<ErrorStatistics, MaskingError> {
    let first = *errors.first().ok_or(MaskingError::EmptyList)?;
    for e in errors {
        if !e.grid().same_shape(first.grid()) {
            return Err(MaskingError::ShapeMismatch(
                e.width(),
                e.height(),
                first.width(),
                first.height(),
            ));
        }
    }
    let count: usize = errors.iter().map(|e| e.grid().len()).sum();
    let n = count as f64;
    // Two-pass for numerical stability; sums run in deterministic order.
    let total: f64 = errors
        .iter()
        .map(|e| {
            (0..e.height())
                .map(|y| e.grid().row(y).iter().sum::<f64>())
                .sum::<f64>()
        })
        .sum();
    let mu = total / n;
    let sq: f64 = errors
        .iter()
        .map(|e| {
            (0..e.height())
                .map(|y| {
                    e.grid()
                        .row(y)
                        .iter()
                        .map(|&v| (v - mu) * (v - mu))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum();
    Ok(ErrorStatistics {
        mu,
        sigma: (sq / n).sqrt(),
        count,
    })
}

/// A sigma at or below this times the mean is degenerate: it cannot exceed
/// the rounding noise of averaging equal values.
pub const DEGENERATE_SIGMA_FACTOR: f64 = 1e-12;

impl ErrorStatistics {
    /// Constant error maps should give sigma exactly zero, but averaging
    /// equal floats leaves rounding residue; treat anything at that level
    /// as zero spread.
    pub fn is_degenerate(&self) -> bool {
        self.sigma <= DEGENERATE_SIGMA_FACTOR * self.mu.abs().max(f64::MIN_POSITIVE)
    }
}

/// Strict two-sided threshold test against the pooled statistics. With a
/// degenerate sigma no statistical outliers exist and the mask is all-true
/// (the strict inequalities would otherwise reject every pixel).
pub fn outlier_mask(error: &ErrorMap, stats: &ErrorStatistics, l: f64, u: f64) -> MaskMap {
    if stats.is_degenerate() {
        return MaskMap::all_true(error.width(), error.height());
    }
    let lo = stats.lower_bound(l);
    let hi = stats.upper_bound(u);
    error.grid().map(|&v| lo < v && v < hi)
}

/// The validity map of view synthesis is the principled mask.
pub fn principled_mask(validity: &MaskMap) -> MaskMap {
    validity.clone()
}

/// Keeps pixels where the warped reconstruction beats the unwarped source,
/// strictly. Ties (e.g. exactly zero error on both) are masked out.
pub fn auto_mask(
    warped_error: &ErrorMap,
    static_error: &ErrorMap,
) -> Result<MaskMap, MaskingError> {
    if !warped_error.grid().same_shape(static_error.grid()) {
        return Err(MaskingError::ShapeMismatch(
            warped_error.width(),
            warped_error.height(),
            static_error.width(),
            static_error.height(),
        ));
    }
    let data = warped_error
        .grid()
        .data()
        .iter()
        .zip(static_error.grid().data())
        .map(|(&w, &s)| w < s)
        .collect();
    Ok(MaskMap::from_vec(warped_error.width(), warped_error.height(), data).expect("same shape"))
}

/// Per-source minimum-reprojection masks: a pixel stays in source `s` when
/// its error is `<=` the minimum over all sources, so exact ties keep every
/// tied source.
pub fn min_reprojection_mask(errors: &[&ErrorMap]) -> Result<Vec<MaskMap>, MaskingError> {
    let first = *errors.first().ok_or(MaskingError::EmptyList)?;
    for e in errors {
        if !e.grid().same_shape(first.grid()) {
            return Err(MaskingError::ShapeMismatch(
                e.width(),
                e.height(),
                first.width(),
                first.height(),
            ));
        }
    }
    let w = first.width();
    let h = first.height();
    let mut mins = vec![f64::INFINITY; w * h];
    for e in errors {
        for (m, &v) in mins.iter_mut().zip(e.grid().data()) {
            if v < *m {
                *m = v;
            }
        }
    }
    Ok(errors
        .iter()
        .map(|e| {
            let data = e
                .grid()
                .data()
                .iter()
                .zip(&mins)
                .map(|(&v, &m)| v <= m)
                .collect();
            MaskMap::from_vec(w, h, data).expect("same shape")
        })
        .collect())
}

/// The four masks of one source and their conjunction.
#[derive(Debug, Clone)]
pub struct SourceMasks {
    pub outlier: MaskMap,
    pub principled: MaskMap,
    pub auto: MaskMap,
    pub min_reprojection: MaskMap,
    pub combined: MaskMap,
}

impl SourceMasks {
    /// Element-wise conjunction of the four masks.
    pub fn combine(
        outlier: MaskMap,
        principled: MaskMap,
        auto: MaskMap,
        min_reprojection: MaskMap,
    ) -> Result<Self, MaskingError> {
        let combined = combine_masks(&outlier, &principled, &auto, &min_reprojection)?;
        Ok(Self {
            outlier,
            principled,
            auto,
            min_reprojection,
            combined,
        })
    }
}

pub fn combine_masks(
    outlier: &MaskMap,
    principled: &MaskMap,
    auto: &MaskMap,
    min_reprojection: &MaskMap,
) -> Result<MaskMap, MaskingError> {
    let to_err = |a: &MaskMap, b: &MaskMap| {
        MaskingError::ShapeMismatch(a.width(), a.height(), b.width(), b.height())
    };
    let ab = outlier
        .and(principled)
        .map_err(|_| to_err(outlier, principled))?;
    let abc = ab.and(auto).map_err(|_| to_err(&ab, auto))?;
    abc.and(min_reprojection)
        .map_err(|_| to_err(&abc, min_reprojection))
}

/// Per-source masks of one pyramid scale.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub sources: Vec<SourceMasks>,
}

impl MaskSet {
    /// Mean fraction of combined-mask pixels across sources.
    pub fn combined_fraction(&self) -> f64 {
        if self.sources.is_empty() {
            return 0.0;
        }
        self.sources
            .iter()
            .map(|s| s.combined.fraction())
            .sum::<f64>()
            / self.sources.len() as f64
    }
}
