//! Row-major 2-D grids shared by depth maps, error maps, and masks.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("data length {len} does not match {width}x{height}")]
    DataLength {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("zero-sized grid {0}x{1}")]
    ZeroSize(usize, usize),
}

/// Dense row-major grid. `(x, y)` indexes column `x` of row `y`; the origin
/// is the top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn from_elem(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, GridError> {
        if data.len() != width * height {
            return Err(GridError::DataLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        debug_assert!(x < self.width && y < self.height);
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Grid<f64> {
    /// Mean over all cells, summed row by row in index order.
    pub fn mean(&self) -> f64 {
        let total: f64 = (0..self.height)
            .map(|y| self.row(y).iter().sum::<f64>())
            .sum();
        total / self.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Binary per-pixel mask.
pub type MaskMap = Grid<bool>;

impl MaskMap {
    pub fn all_true(width: usize, height: usize) -> Self {
        Self::from_elem(width, height, true)
    }

    pub fn count_true(&self) -> usize {
        self.data().iter().filter(|&&m| m).count()
    }

    /// Fraction of set pixels.
    pub fn fraction(&self) -> f64 {
        self.count_true() as f64 / self.len() as f64
    }

    pub fn and(&self, other: &MaskMap) -> Result<MaskMap, GridError> {
        if !self.same_shape(other) {
            return Err(GridError::ShapeMismatch(
                self.width(),
                self.height(),
                other.width(),
                other.height(),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(MaskMap::from_vec(self.width(), self.height(), data).expect("shape checked"))
    }

    /// True where `self` is a pixelwise subset of `other`.
    pub fn subset_of(&self, other: &MaskMap) -> bool {
        self.same_shape(other)
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(&a, &b)| !a || b)
    }
}
