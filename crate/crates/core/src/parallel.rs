//! Deterministic parallel helpers.
//!
//! All reductions in this crate go through these functions: rows are
//! processed independently and the final fold runs in row order, so results
//! are bit-identical for any thread count.

use rayon::prelude::*;

/// Sum per-row values in row order. `row_value` must be pure.
pub fn ordered_row_sum(height: usize, row_value: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let partials: Vec<f64> = (0..height).into_par_iter().map(&row_value).collect();
    partials.into_iter().sum()
}

/// Collect one value per row, preserving row order.
pub fn ordered_row_map<R: Send>(height: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..height).into_par_iter().map(f).collect()
}

/// Fill a row-major buffer row by row. Rows are disjoint, so parallel writes
/// cannot race and the result is independent of scheduling.
pub fn par_fill_rows<T: Send>(
    out: &mut [T],
    width: usize,
    fill: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| fill(y, row));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_sum_matches_sequential() {
        let seq: f64 = (0..1000).map(|y| (y as f64).sin()).sum();
        let par = ordered_row_sum(1000, |y| (y as f64).sin());
        assert_eq!(seq.to_bits(), par.to_bits());
    }

    #[test]
    fn fill_rows_writes_every_cell() {
        let mut buf = vec![0usize; 12];
        par_fill_rows(&mut buf, 4, |y, row| {
            for (x, v) in row.iter_mut().enumerate() {
                *v = y * 4 + x;
            }
        });
        assert_eq!(buf, (0..12).collect::<Vec<_>>());
    }
}
