//! Factorizations and closed-form operators on [`Matrix`].

use super::{Matrix, NumericsError};

/// Pivot norms below this are treated as linearly dependent columns.
pub const RANK_TOL: f64 = 1e-12;

/// Condition-number ceiling for an unregularized normal-equation solve.
pub const COND_LIMIT: f64 = 1e12;

/// Slices along which [`softmax_axis`] normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    /// Every row sums to one.
    Row,
    /// Every column sums to one.
    Col,
}

/// Orthonormal basis for the column span of `w`, via modified Gram–Schmidt
/// with one re-orthogonalization pass. Columns keep their order and the
/// implied triangular factor has a positive diagonal, so the result is the
/// `Q` of the unique thin QR factorization.
pub fn qr_orthonormalize(w: &Matrix) -> Result<Matrix, NumericsError> {
    let (rows, cols) = w.shape();
    if rows < cols {
        return Err(NumericsError::ShapeMismatch {
            op: "qr_orthonormalize",
            left: (rows, cols),
            right: (cols, cols),
        });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = w.col(j);
        for _pass in 0..2 {
            for q in &basis {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > RANK_TOL) {
            return Err(NumericsError::RankDeficient { column: j, norm });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut q = Matrix::zeros(rows, cols);
    for (j, col) in basis.iter().enumerate() {
        q.set_col(j, col);
    }
    Ok(q)
}

/// Cholesky factor `L` (lower triangular) of a symmetric positive definite
/// matrix, together with the pivot-ratio condition estimate.
pub(crate) fn cholesky(a: &Matrix) -> Result<(Matrix, f64), NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::ShapeMismatch {
            op: "cholesky",
            left: a.shape(),
            right: (n, n),
        });
    }
    let mut l = Matrix::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    let mut max_pivot: f64 = 0.0;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NumericsError::Singular { condition: f64::INFINITY });
        }
        min_pivot = min_pivot.min(d);
        max_pivot = max_pivot.max(d);
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    let cond = if n == 0 { 1.0 } else { max_pivot / min_pivot };
    Ok((l, cond))
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let (l, _) = cholesky(a)?;
    cholesky_solve(&l, b)
}

fn cholesky_solve(l: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let n = l.rows();
    if b.rows() != n {
        return Err(NumericsError::ShapeMismatch {
            op: "spd_solve",
            left: l.shape(),
            right: b.shape(),
        });
    }
    let m = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for c in 0..m {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix, NumericsError> {
    spd_solve(a, &Matrix::identity(a.rows()))
}

/// Ridge-regularized left pseudo-inverse `(HᵀH + ridge·I)⁻¹Hᵀ`.
///
/// With `ridge = 0` and full column rank this is the Moore–Penrose inverse.
pub fn pseudo_inverse(h: &Matrix, ridge: f64) -> Result<Matrix, NumericsError> {
    Ok(pseudo_inverse_parts(h, ridge)?.0)
}

/// Returns the pseudo-inverse together with `S = (HᵀH + ridge·I)⁻¹`, which
/// the backward pass reuses.
pub(crate) fn pseudo_inverse_parts(
    h: &Matrix,
    ridge: f64,
) -> Result<(Matrix, Matrix), NumericsError> {
    if !(ridge >= 0.0) {
        return Err(NumericsError::InvalidArgument(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    let mut gram = h.t_matmul(h)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += ridge;
    }
    let (l, cond) = cholesky(&gram)?;
    if ridge == 0.0 && cond > COND_LIMIT {
        return Err(NumericsError::Singular { condition: cond });
    }
    let s = cholesky_solve(&l, &Matrix::identity(gram.rows()))?;
    let pinv = s.matmul_t(h)?;
    Ok((pinv, s))
}

/// Numerically stable softmax over each slice along `axis`.
pub fn softmax_axis(m: &Matrix, axis: Axis) -> Matrix {
    match axis {
        Axis::Row => {
            let mut out = m.clone();
            for i in 0..m.rows() {
                softmax_in_place(out.row_mut(i));
            }
            out
        }
        Axis::Col => softmax_axis(&m.transpose(), Axis::Row).transpose(),
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Projects `g` onto the tangent space of the Stiefel manifold at the
/// orthonormal `w`: `g − w·sym(wᵀg)`.
pub fn stiefel_tangent(w: &Matrix, g: &Matrix) -> Result<Matrix, NumericsError> {
    let wtg = w.t_matmul(g)?;
    let sym = wtg.add(&wtg.transpose())?.scale(0.5);
    g.sub(&w.matmul(&sym)?)
}

/// Rescales every column of `m` to unit Euclidean norm.
pub fn normalize_columns(m: &Matrix) -> Result<Matrix, NumericsError> {
    let mut out = m.clone();
    for j in 0..m.cols() {
        let col = m.col(j);
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > RANK_TOL) {
            return Err(NumericsError::RankDeficient { column: j, norm });
        }
        let scaled: Vec<f64> = col.iter().map(|x| x / norm).collect();
        out.set_col(j, &scaled);
    }
    Ok(out)
}

/// Removes the per-column radial component: `g_j − ⟨g_j, a_j⟩ a_j` for unit
/// columns `a_j`. This is the tangent space of a product of unit spheres.
pub fn unit_column_tangent(a: &Matrix, g: &Matrix) -> Result<Matrix, NumericsError> {
    if a.shape() != g.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "unit_column_tangent",
            left: a.shape(),
            right: g.shape(),
        });
    }
    let mut out = g.clone();
    for j in 0..a.cols() {
        let ac = a.col(j);
        let gc = g.col(j);
        let proj: f64 = ac.iter().zip(&gc).map(|(x, y)| x * y).sum();
        let t: Vec<f64> = gc.iter().zip(&ac).map(|(y, x)| y - proj * x).collect();
        out.set_col(j, &t);
    }
    Ok(out)
}

/// Linear-interpolated empirical percentile (`q` in `[0, 100]`) of unsorted
/// data.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(percentile_sorted(&sorted, q))
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn gram_defect(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&Matrix::identity(q.cols())).unwrap().frobenius()
    }

    #[test]
    fn qr_identity_is_fixed() {
        let i3 = Matrix::identity(3);
        assert_eq!(qr_orthonormalize(&i3).unwrap(), i3);
    }

    #[test]
    fn qr_hand_example() {
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let q = qr_orthonormalize(&w).unwrap();
        assert!(q.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn qr_random_is_orthonormal_and_idempotent() {
        let mut rng = SeededRng::new(11);
        let w = rng.normal_matrix(8, 3, 1.0);
        let q = qr_orthonormalize(&w).unwrap();
        assert!(gram_defect(&q) < 1e-10);
        let q2 = qr_orthonormalize(&q).unwrap();
        assert!(q2.sub(&q).unwrap().frobenius() < 1e-10);
        // same span: projecting w onto span(q) leaves it unchanged
        let proj = q.matmul(&q.t_matmul(&w).unwrap()).unwrap();
        assert!(proj.sub(&w).unwrap().frobenius() < 1e-10);
    }

    #[test]
    fn qr_rank_deficient() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!(matches!(
            qr_orthonormalize(&w),
            Err(NumericsError::RankDeficient { column: 1, .. })
        ));
    }

    #[test]
    fn pinv_examples() {
        let p = pseudo_inverse(&Matrix::identity(2), 0.0).unwrap();
        assert_eq!(p, Matrix::identity(2));
        let d = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let p = pseudo_inverse(&d, 0.0).unwrap();
        assert!(p.sub(&Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.25]])).unwrap().max_abs() < 1e-15);
        let c = Matrix::col_vector(&[1.0, 1.0]);
        let p = pseudo_inverse(&c, 0.0).unwrap();
        assert!(p.sub(&Matrix::row_vector(&[0.5, 0.5])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn pinv_singular_without_ridge() {
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(pseudo_inverse(&h, 0.0), Err(NumericsError::Singular { .. })));
        assert!(pseudo_inverse(&h, 1e-3).is_ok());
        assert!(pseudo_inverse(&h, -1.0).is_err());
    }

    #[test]
    fn pinv_penrose_identity() {
        let mut rng = SeededRng::new(3);
        let h = rng.normal_matrix(7, 3, 1.0);
        let p = pseudo_inverse(&h, 0.0).unwrap();
        let php = p.matmul(&h).unwrap().matmul(&p).unwrap();
        assert!(php.sub(&p).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_axis(&Matrix::row_vector(&[0.0, 0.0, 0.0]), Axis::Row);
        for &x in s.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_axis(&Matrix::row_vector(&[1f64.ln(), 3f64.ln()]), Axis::Row);
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((s[(0, 1)] - 0.75).abs() < 1e-15);
        let s = softmax_axis(&Matrix::row_vector(&[1000.0, 0.0]), Axis::Row);
        assert!(s.is_finite());
        assert_eq!(s[(0, 0)], 1.0);
        let c = softmax_axis(&Matrix::col_vector(&[1.0, 2.0, 3.0]), Axis::Col);
        assert!((c.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let inv = spd_inverse(&a).unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn tangent_projection_kills_radial_part() {
        let mut rng = SeededRng::new(5);
        let w = qr_orthonormalize(&rng.normal_matrix(6, 2, 1.0)).unwrap();
        // a gradient of the form W·S with symmetric S is purely normal
        let s = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, -1.0]]);
        let g = w.matmul(&s).unwrap();
        assert!(stiefel_tangent(&w, &g).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 100.0), Some(3.0));
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0), Some(2.0));
        assert_eq!(percentile(&[1.0, 2.0], 25.0), Some(1.25));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
