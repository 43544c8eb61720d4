//! Deterministic linear algebra and numerically stable scalar kernels.
//!
//! Everything here is a pure function over immutable inputs. The basis
//! extraction uses one-sided Jacobi orthogonalization on the uncentered
//! data matrix, so truncated reconstructions are orthogonal projections
//! and their cosine to the original grows monotonically with the number
//! of retained components.

use crate::{Error, Result};

/// Convergence threshold on the normalized off-diagonal mass of the
/// column Gram matrix during Jacobi sweeps.
const JACOBI_TOL: f64 = 1e-12;
/// Hard cap on Jacobi sweeps; convergence is quadratic and reached long
/// before this at desk dimensions.
const JACOBI_MAX_SWEEPS: usize = 100;
/// Singular values at or below `RANK_TOL * max_singular_value` are treated
/// as numerically zero and dropped from the basis.
const RANK_TOL: f64 = 1e-12;

/// Row-major dense matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from explicit dimensions and row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                context: "Matrix::new data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "Matrix entries must be finite".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("Matrix::from_rows"));
        }
        let cols = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows row length",
                    expected: cols,
                    got: rows[i].len(),
                });
            }
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` copied out as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }
}

/// Orthonormal basis with importance weights in non-increasing order.
///
/// `vectors[k]` is the k-th basis direction (dimension `dim`); `importance[k]`
/// is the corresponding singular value of the uncentered matrix the basis was
/// fit on. Numerically zero directions are dropped, so `len()` can be smaller
/// than `min(rows, cols)` for rank-deficient input.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBasis {
    vectors: Vec<Vec<f64>>,
    importance: Vec<f64>,
}

impl ComponentBasis {
    /// Assemble from pre-validated parts. Intended for tests that need a
    /// hand-built basis; `orthonormal_basis` is the production constructor.
    pub fn from_parts(vectors: Vec<Vec<f64>>, importance: Vec<f64>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput("ComponentBasis::from_parts"));
        }
        if vectors.len() != importance.len() {
            return Err(Error::DimensionMismatch {
                context: "ComponentBasis importance length",
                expected: vectors.len(),
                got: importance.len(),
            });
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument(
                "ComponentBasis vectors must share one dimension".into(),
            ));
        }
        if importance.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "ComponentBasis importance must be non-increasing".into(),
            ));
        }
        Ok(Self { vectors, importance })
    }

    /// Number of basis vectors (the rank `r`).
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Dimension of the space the basis lives in.
    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }
}

/// Dot product. Panics on length mismatch; callers validate dimensions at
/// their public boundary.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity, clamped to [-1, 1] against rounding overshoot.
///
/// Errors on dimension mismatch and on zero-norm input rather than
/// emitting NaN.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine_sim",
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_sim"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Scale a vector to unit Euclidean norm. Errors on zero-norm input.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm("l2_normalize"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// log(sum(exp(x_i))) via max-shift; exact to 1e-12 relative on |x_i| <= 700.
pub fn stable_logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("stable_logsumexp"));
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    Ok(m + sum.ln())
}

/// Orthonormal basis of the row space of the UNCENTERED matrix `m`, with
/// singular values as importance weights in non-increasing order.
///
/// One-sided Jacobi: columns of the working matrix are rotated pairwise
/// until mutually orthogonal (normalized off-diagonal mass <= 1e-12, at
/// most 100 sweeps). No mean subtraction. Numerically zero directions are
/// dropped; an all-zero matrix has no principal direction and errors.
///
/// Determinism: cyclic pair order, stable descending sort on the weights
/// (ties keep algorithm order), and a sign convention that makes each
/// vector's largest-magnitude entry non-negative.
pub fn orthonormal_basis(m: &Matrix) -> Result<ComponentBasis> {
    let (n, d) = (m.rows(), m.cols());
    if m.data.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm("orthonormal_basis (all-zero matrix)"));
    }

    let (sigma, mut basis) = if n >= d {
        // Rotate the d columns of M; the accumulated rotations are the
        // right singular vectors, read off as rows of the accumulator.
        let mut cols: Vec<Vec<f64>> = (0..d).map(|j| m.column(j)).collect();
        let mut acc: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                e
            })
            .collect();
        jacobi_sweeps(&mut cols, Some(&mut acc));
        let sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
        // acc[j][k] tracks V[k][j] of M = U S V^T; transpose into basis rows.
        let basis: Vec<Vec<f64>> = (0..d)
            .map(|j| (0..d).map(|k| acc[k][j]).collect())
            .collect();
        (sigma, basis)
    } else {
        // Rotate the n columns of M^T (the rows of M, each of dimension d);
        // once orthogonal, their normalized directions are the basis.
        let mut cols: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        jacobi_sweeps(&mut cols, None);
        let sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
        let basis: Vec<Vec<f64>> = cols
            .iter()
            .zip(&sigma)
            .map(|(c, &s)| {
                if s > 0.0 {
                    c.iter().map(|x| x / s).collect()
                } else {
                    vec![0.0; d]
                }
            })
            .collect();
        (sigma, basis)
    };

    // Stable descending order; equal weights keep the algorithm's order.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let max_sigma = sigma[order[0]];
    if max_sigma == 0.0 {
        return Err(Error::ZeroNorm("orthonormal_basis (all-zero matrix)"));
    }

    let mut vectors = Vec::new();
    let mut importance = Vec::new();
    for &idx in &order {
        if sigma[idx] <= RANK_TOL * max_sigma {
            continue;
        }
        let mut v = std::mem::take(&mut basis[idx]);
        fix_sign(&mut v);
        vectors.push(v);
        importance.push(sigma[idx]);
    }
    drop(sigma);

    ComponentBasis::from_parts(vectors, importance)
}

/// Cyclic one-sided Jacobi sweeps over column pairs. Rotations are applied
/// to `cols` and mirrored onto `acc` rows when an accumulator is supplied.
fn jacobi_sweeps(cols: &mut [Vec<f64>], mut acc: Option<&mut Vec<Vec<f64>>>) {
    let k = cols.len();
    if k < 2 {
        return;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                let denom = (alpha * beta).sqrt();
                if denom == 0.0 {
                    continue;
                }
                let off = gamma.abs() / denom;
                if off > max_off {
                    max_off = off;
                }
                if off <= JACOBI_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(cols, p, q, c, s);
                if let Some(v) = acc.as_deref_mut() {
                    rotate_pair(v, p, q, c, s);
                }
            }
        }
        if max_off <= JACOBI_TOL {
            break;
        }
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Flip the vector so its largest-magnitude entry (first such index on
/// ties) is non-negative.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn reconstruction_error(m: &Matrix, basis: &ComponentBasis) -> f64 {
        let mut err_sq = 0.0;
        for i in 0..m.rows() {
            let row = m.row(i);
            let mut recon = vec![0.0; m.cols()];
            for b in basis.vectors() {
                let c = dot(row, b);
                for (r, &bv) in recon.iter_mut().zip(b) {
                    *r += c * bv;
                }
            }
            for (x, r) in row.iter().zip(&recon) {
                err_sq += (x - r) * (x - r);
            }
        }
        err_sq.sqrt()
    }

    fn max_orthonormality_defect(basis: &ComponentBasis) -> f64 {
        let r = basis.len();
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let expect = if i == j { 1.0 } else { 0.0 };
                let d = (dot(basis.vector(i), basis.vector(j)) - expect).abs();
                worst = worst.max(d);
            }
        }
        worst
    }

    #[test]
    fn cosine_identical_unit_vectors() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_antipodal() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn cosine_rejects_dim_mismatch() {
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_axis_vector() {
        assert_eq!(l2_normalize(&[0.0, 0.0, 5.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_diagonal_pair() {
        let v = l2_normalize(&[1.0, 1.0]).unwrap();
        let expect = 1.0 / 2.0f64.sqrt();
        assert!((v[0] - expect).abs() < 1e-12);
        assert!((v[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn logsumexp_two_equal_terms() {
        let got = stable_logsumexp(&[0.0, 0.0]).unwrap();
        assert!((got - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_shift_by_max() {
        let got = stable_logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!((got - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn logsumexp_singleton_is_identity() {
        assert_eq!(stable_logsumexp(&[-3.5]).unwrap(), -3.5);
    }

    #[test]
    fn logsumexp_rejects_empty() {
        assert!(matches!(stable_logsumexp(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn basis_of_diagonal_matrix() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b.importance()[0] - 2.0).abs() < 1e-12);
        assert!((b.importance()[1] - 1.0).abs() < 1e-12);
        assert!((b.vector(0)[0] - 1.0).abs() < 1e-12);
        assert!(b.vector(0)[1].abs() < 1e-12);
        assert!((b.vector(1)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_of_rank_one_matrix() {
        let n = 5usize;
        let m = Matrix::from_rows(&vec![vec![1.0, 0.0]; n]).unwrap();
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b.importance()[0] - (n as f64).sqrt()).abs() < 1e-12);
        assert!((b.vector(0)[0] - 1.0).abs() < 1e-12);
        assert!(b.vector(0)[1].abs() < 1e-12);
    }

    #[test]
    fn basis_rejects_all_zero_matrix() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(orthonormal_basis(&m), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn basis_reconstructs_random_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::new(
            6,
            4,
            (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(b.len(), 4);
        assert!(max_orthonormality_defect(&b) < 1e-9);
        assert!(reconstruction_error(&m, &b) < 1e-9);
    }

    #[test]
    fn basis_reconstructs_random_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = Matrix::new(
            3,
            7,
            (0..21).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(b.len(), 3);
        assert!(max_orthonormality_defect(&b) < 1e-9);
        assert!(reconstruction_error(&m, &b) < 1e-9);
    }

    #[test]
    fn basis_importance_is_sorted_and_weights_match_frobenius() {
        // Sum of squared singular values equals the squared Frobenius norm.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let rows = rng.random_range(2..9);
            let cols = rng.random_range(2..9);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let frob_sq: f64 = data.iter().map(|x| x * x).sum();
            let m = Matrix::new(rows, cols, data).unwrap();
            let b = orthonormal_basis(&m).unwrap();
            for w in b.importance().windows(2) {
                assert!(w[0] >= w[1]);
            }
            let sum_sq: f64 = b.importance().iter().map(|s| s * s).sum();
            assert!((sum_sq - frob_sq).abs() < 1e-9 * frob_sq.max(1.0));
        }
    }

    #[test]
    fn basis_sign_convention_largest_entry_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = Matrix::new(
            8,
            5,
            (0..40).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = orthonormal_basis(&m).unwrap();
        for v in b.vectors() {
            let mut best = 0usize;
            let mut best_abs = 0.0f64;
            for (i, &x) in v.iter().enumerate() {
                if x.abs() > best_abs {
                    best_abs = x.abs();
                    best = i;
                }
            }
            assert!(v[best] >= 0.0);
        }
    }

    #[test]
    fn basis_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::new(6, 5, data).unwrap();
        let a = orthonormal_basis(&m).unwrap();
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(a, b);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // cosine_sim is symmetric and invariant under positive scaling.
            #[test]
            fn cosine_symmetric_and_scale_invariant(
                a in proptest::collection::vec(-10.0f64..10.0, 3),
                b in proptest::collection::vec(-10.0f64..10.0, 3),
                lambda in 0.01f64..100.0,
            ) {
                prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
                let ab = cosine_sim(&a, &b).unwrap();
                let ba = cosine_sim(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
                let s = cosine_sim(&scaled, &b).unwrap();
                prop_assert!((ab - s).abs() < 1e-12);
            }

            // logsumexp of shifted inputs equals shift plus logsumexp.
            #[test]
            fn logsumexp_shift_identity(
                xs in proptest::collection::vec(-50.0f64..50.0, 1..8),
                shift in -500.0f64..500.0,
            ) {
                let base = stable_logsumexp(&xs).unwrap();
                let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
                let got = stable_logsumexp(&shifted).unwrap();
                prop_assert!((got - (base + shift)).abs() < 1e-9);
            }
        }
    }
}
