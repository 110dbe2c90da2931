use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::experts::{WindowBatch, WindowShape};
use crate::numerics::Matrix;

/// All windows of a series, flattened time-major into rows.
///
/// Row `w` is the window ending at time `t = w + L`, i.e. observations
/// `t−L+1 ..= t`; the matching row of `previous` ends one step earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub shape: WindowShape,
    pub current: Matrix,
    pub previous: Matrix,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.current.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.current.rows() == 0
    }

    /// End time of window `w`.
    pub fn time(&self, w: usize) -> usize {
        w + self.shape.len
    }

    pub fn batch(&self, rows: &[usize]) -> WindowBatch {
        WindowBatch {
            current: self.current.select_rows(rows),
            previous: self.previous.select_rows(rows),
        }
    }

    pub fn range_batch(&self, range: Range<usize>) -> WindowBatch {
        let rows: Vec<usize> = range.collect();
        self.batch(&rows)
    }
}

/// One window per `t ∈ [L, T)`.
pub fn make_windows(series: &Matrix, len: usize) -> Result<WindowSet> {
    let (t_len, dim) = series.shape();
    if len == 0 {
        return Err(CicadaError::BadConfig("window length must be at least 1".into()));
    }
    if t_len <= len {
        return Err(CicadaError::SeriesTooShort { len: t_len, window: len });
    }
    let n = t_len - len;
    let flat = len * dim;
    let data = series.as_slice();
    let mut current = Vec::with_capacity(n * flat);
    let mut previous = Vec::with_capacity(n * flat);
    for w in 0..n {
        let t = w + len;
        current.extend_from_slice(&data[(t + 1 - len) * dim..(t + 1) * dim]);
        previous.extend_from_slice(&data[(t - len) * dim..t * dim]);
    }
    Ok(WindowSet {
        shape: WindowShape { len, dim },
        current: Matrix::from_vec(n, flat, current)?,
        previous: Matrix::from_vec(n, flat, previous)?,
    })
}

/// A contiguous run of windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowedSegment {
    pub index: usize,
    /// Window indices.
    pub windows: Range<usize>,
}

impl WindowedSegment {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `n` windows into `segments` contiguous parts whose sizes differ by at
/// most one, larger parts first.
pub fn partition_segments(n: usize, segments: usize) -> Result<Vec<WindowedSegment>> {
    if segments == 0 {
        return Err(CicadaError::BadConfig("segment count must be at least 1".into()));
    }
    if n < segments {
        return Err(CicadaError::TooFewWindows { windows: n, segments });
    }
    let base = n / segments;
    let extra = n % segments;
    let mut start = 0;
    Ok((0..segments)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let seg = WindowedSegment {
                index: i,
                windows: start..start + size,
            };
            start += size;
            seg
        })
        .collect())
}

/// Per-variable affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(series: &Matrix) -> Self {
        let (t, d) = series.shape();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..t {
            for (m, x) in mean.iter_mut().zip(series.row(i)) {
                *m += x / t as f64;
            }
        }
        for i in 0..t {
            for (j, x) in series.row(i).iter().enumerate() {
                var[j] += (x - mean[j]).powi(2) / t as f64;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn transform(&self, series: &Matrix) -> Result<Matrix> {
        if series.cols() != self.mean.len() {
            return Err(CicadaError::DimensionMismatch {
                expected: self.mean.len(),
                found: series.cols(),
            });
        }
        Ok(Matrix::from_fn(series.rows(), series.cols(), |i, j| {
            (series[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_follow_time_order() {
        let s = Matrix::col_vector(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = make_windows(&s, 2).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.current.row(0), &[2.0, 3.0]);
        assert_eq!(w.current.row(2), &[4.0, 5.0]);
        assert_eq!(w.previous.row(0), &[1.0, 2.0]);
        assert_eq!(w.time(0), 2);
    }

    #[test]
    fn unit_windows_are_observations() {
        let s = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let w = make_windows(&s, 1).unwrap();
        assert_eq!(w.current.row(0), &[3.0, 4.0]);
        assert_eq!(w.current.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn window_rows_are_time_major() {
        let s = Matrix::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]]);
        let w = make_windows(&s, 2).unwrap();
        assert_eq!(w.current.row(0), &[2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn too_short_series() {
        let s = Matrix::col_vector(&[1.0, 2.0]);
        assert!(matches!(
            make_windows(&s, 2),
            Err(CicadaError::SeriesTooShort { len: 2, window: 2 })
        ));
    }

    #[test]
    fn segment_sizes() {
        let sizes = |n, k| -> Vec<usize> {
            partition_segments(n, k).unwrap().iter().map(|s| s.len()).collect()
        };
        assert_eq!(sizes(16, 4), vec![4, 4, 4, 4]);
        assert_eq!(sizes(17, 4), vec![5, 4, 4, 4]);
        assert!(matches!(
            partition_segments(3, 4),
            Err(CicadaError::TooFewWindows { .. })
        ));
        let segs = partition_segments(103, 7).unwrap();
        assert_eq!(segs.last().unwrap().windows.end, 103);
        for pair in segs.windows(2) {
            assert_eq!(pair[0].windows.end, pair[1].windows.start);
        }
    }

    #[test]
    fn scaler_standardizes() {
        let s = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        let sc = Scaler::fit(&s);
        let z = sc.transform(&s).unwrap();
        assert_eq!(z.row(0), &[-1.0, 0.0]);
        assert_eq!(z.row(1), &[1.0, 0.0]);
    }
}
