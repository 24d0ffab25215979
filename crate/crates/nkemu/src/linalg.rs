//! Dense SPD factorization, triangular solves, Tikhonov Gram assembly and a
//! condition-number estimate.
//!
//! Convention: factors are lower triangular with strictly positive diagonal
//! throughout. The inverse factor `R` of a Gram matrix `A` satisfies
//! `R R^T = A^{-1}` (so applying `A^{-1}` costs two triangular mat-vecs);
//! the transpose relation to an upper-triangular convention is `R = U^T`.

use crate::error::{NkError, Result};
use crate::matrix::Matrix;

/// Symmetric positive-definite matrix. Symmetry is checked on construction
/// (1e-12 relative); positive definiteness surfaces when factorizing.
#[derive(Debug, Clone)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(NkError::ShapeMismatch(format!(
                "SPD matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if m.asymmetry() > 1e-12 {
            return Err(NkError::ShapeMismatch(format!(
                "matrix asymmetry {:.3e} exceeds 1e-12",
                m.asymmetry()
            )));
        }
        Ok(SpdMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Lower-triangular matrix with strictly positive diagonal. Entries above
/// the diagonal are exactly zero.
#[derive(Debug, Clone)]
pub struct TriangularFactor(Matrix);

impl TriangularFactor {
    /// Wraps a matrix, verifying triangularity and the positive diagonal.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(NkError::ShapeMismatch("factor must be square".into()));
        }
        let n = m.rows();
        for i in 0..n {
            if m.get(i, i) <= 0.0 {
                return Err(NkError::NotPositiveDefinite {
                    pivot: m.get(i, i),
                    index: i,
                    threshold: 0.0,
                });
            }
            for j in i + 1..n {
                if m.get(i, j) != 0.0 {
                    return Err(NkError::ShapeMismatch(format!(
                        "nonzero above diagonal at ({i},{j})"
                    )));
                }
            }
        }
        Ok(TriangularFactor(m))
    }

    pub(crate) fn from_raw(m: Matrix) -> Self {
        TriangularFactor(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// `L x` (lower-triangular mat-vec).
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(NkError::DimensionMismatch { expected: n, got: x.len() });
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.0.row(i)[..=i];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(&x[..=i]) {
                s += a * b;
            }
            y[i] = s;
        }
        Ok(y)
    }

    /// `L^T x` without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(NkError::DimensionMismatch { expected: n, got: x.len() });
        }
        let mut y = vec![0.0; n];
        for i in 0..n {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &self.0.row(i)[..=i];
            for (yj, a) in y[..=i].iter_mut().zip(row) {
                *yj += xi * a;
            }
        }
        Ok(y)
    }

    /// Applies `L L^T` (two triangular mat-vecs).
    pub fn apply_outer(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.matvec_transpose(x)?;
        self.matvec(&t)
    }

    /// Reconstructs `L L^T` densely.
    pub fn outer(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += self.0.get(i, k) * self.0.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }

    /// Forward substitution: solves `L x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(NkError::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            let row = self.0.row(i);
            let mut s = b[i];
            for j in 0..i {
                s -= row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        Ok(x)
    }

    /// Back substitution: solves `L^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(NkError::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.0.get(i, i);
            let xi = x[i];
            for j in 0..i {
                x[j] -= self.0.get(i, j) * xi;
            }
        }
        Ok(x)
    }

    /// Solves `L L^T x = b`.
    pub fn solve_outer(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = self.solve(b)?;
        self.solve_transpose(&y)
    }

    /// Explicit `L^{-1}` (lower triangular), via `n` forward substitutions.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        for col in 0..n {
            // forward substitution against e_col, exploiting leading zeros
            for i in col..n {
                let mut s = if i == col { 1.0 } else { 0.0 };
                let row = self.0.row(i);
                for j in col..i {
                    s -= row[j] * inv.get(j, col);
                }
                inv.set(i, col, s / row[i]);
            }
        }
        inv
    }
}

/// Result of a factorization attempt, recording whether the diagonal had to
/// be jittered to complete.
#[derive(Debug, Clone)]
pub struct CholeskyOutcome {
    pub factor: TriangularFactor,
    pub jittered: bool,
}

fn cholesky_attempt(a: &Matrix, threshold: f64) -> std::result::Result<Matrix, (f64, usize)> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = a.get(j, j);
        for k in 0..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        if s <= threshold || !s.is_finite() {
            return Err((s, j));
        }
        let d = s.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut t = a.get(i, j);
            for k in 0..j {
                t -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, t / d);
        }
    }
    Ok(l)
}

/// Lower Cholesky factorization `L L^T = A` with a one-shot jitter retry.
///
/// The first pass requires every pivot to exceed `tau = 1e-12 * trace(A)/n`;
/// on failure the factorization is retried once on `A + tau I` (any positive
/// pivot accepted). A second failure raises `NotPositiveDefinite`, which at
/// the call sites signals a too-small Tikhonov parameter or a defective
/// Jacobian.
pub fn cholesky_lower_detailed(a: &SpdMatrix) -> Result<CholeskyOutcome> {
    let m = a.as_matrix();
    let n = m.rows();
    let tau = 1e-12 * m.trace() / n as f64;
    let tau = if tau.is_finite() && tau > 0.0 { tau } else { 0.0 };
    match cholesky_attempt(m, tau) {
        Ok(l) => Ok(CholeskyOutcome {
            factor: TriangularFactor::from_raw(l),
            jittered: false,
        }),
        Err(_) => {
            let mut jittered = m.clone();
            jittered.add_scaled_identity(tau);
            match cholesky_attempt(&jittered, 0.0) {
                Ok(l) => Ok(CholeskyOutcome {
                    factor: TriangularFactor::from_raw(l),
                    jittered: true,
                }),
                Err((pivot, index)) => Err(NkError::NotPositiveDefinite {
                    pivot,
                    index,
                    threshold: tau,
                }),
            }
        }
    }
}

/// Lower Cholesky factor of an SPD matrix. See [`cholesky_lower_detailed`]
/// for the jitter policy.
pub fn cholesky_lower(a: &SpdMatrix) -> Result<TriangularFactor> {
    Ok(cholesky_lower_detailed(a)?.factor)
}

/// Forward substitution `L x = b` as a free function.
pub fn solve_lower(l: &TriangularFactor, b: &[f64]) -> Result<Vec<f64>> {
    l.solve(b)
}

/// Assembles the Tikhonov Gram matrix `lambda I + J^T J`.
///
/// The product is symmetrized as `(M + M^T)/2` to strip accumulation
/// asymmetry; with the symmetric accumulation in [`Matrix::gram`] this is
/// exact.
pub fn tikhonov_gram(j: &Matrix, lambda: f64) -> Result<SpdMatrix> {
    if lambda < 0.0 {
        return Err(NkError::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let mut g = j.gram();
    let n = g.rows();
    for i in 0..n {
        for jj in 0..i {
            let avg = 0.5 * (g.get(i, jj) + g.get(jj, i));
            g.set(i, jj, avg);
            g.set(jj, i, avg);
        }
    }
    g.add_scaled_identity(lambda);
    SpdMatrix::new(g)
}

/// Inverse Cholesky factor and its jitter flag: lower `R` with
/// `R R^T = (lambda I + J^T J)^{-1}`.
///
/// Accuracy note: the congruence identity `R^T (lambda I + J^T J) R = I`
/// holds to roughly machine precision times sqrt(cond); the product form
/// `R R^T (lambda I + J^T J) = I` carries the forward factorization's
/// backward error amplified by the full condition number, which is the
/// floor any double-precision construction of the inverse factor has.
pub fn inverse_cholesky_factor_detailed(j: &Matrix, lambda: f64) -> Result<CholeskyOutcome> {
    let gram = tikhonov_gram(j, lambda)?;
    let out = cholesky_lower_detailed(&gram)?;
    let jittered = out.jittered;
    // A^{-1} = L^{-T} L^{-1}; refactorize to get the lower factor of A^{-1}.
    let linv = out.factor.inverse();
    let ainv = linv.gram(); // (L^{-1})^T L^{-1}
    let inner = cholesky_lower_detailed(&SpdMatrix::new(ainv)?)?;
    Ok(CholeskyOutcome {
        factor: inner.factor,
        jittered: jittered || inner.jittered,
    })
}

/// Lower `R` with `R R^T = (lambda I + J^T J)^{-1}`.
pub fn inverse_cholesky_factor(j: &Matrix, lambda: f64) -> Result<TriangularFactor> {
    Ok(inverse_cholesky_factor_detailed(j, lambda)?.factor)
}

/// Ratio of extreme eigenvalue estimates of an SPD matrix, via power
/// iteration on `A` and inverse iteration through its Cholesky factor.
/// Accurate to well within a factor of two on the matrices used here.
pub fn condition_estimate(a: &SpdMatrix) -> Result<f64> {
    let factor = cholesky_lower(a)?;
    let n = a.dim();
    let m = a.as_matrix();
    let mut x: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.7 } / (i + 1) as f64)
        .collect();
    normalize(&mut x);
    let mut lam_max = 0.0;
    for _ in 0..300 {
        let mut y = m.matvec(&x)?;
        let nrm = normalize(&mut y);
        let converged = (nrm - lam_max).abs() <= 1e-12 * nrm.max(1.0);
        lam_max = nrm;
        x = y;
        if converged {
            break;
        }
    }
    let mut z: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + (i % 5) as f64)).collect();
    normalize(&mut z);
    let mut inv_max = 0.0;
    for _ in 0..300 {
        let mut y = factor.solve_outer(&z)?;
        let nrm = normalize(&mut y);
        let converged = (nrm - inv_max).abs() <= 1e-12 * nrm.max(1.0);
        inv_max = nrm;
        z = y;
        if converged {
            break;
        }
    }
    Ok(lam_max * inv_max)
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = crate::matrix::norm2(x);
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(rows: &[&[f64]]) -> SpdMatrix {
        SpdMatrix::new(Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn identity_factors_to_identity() {
        let a = spd(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let l = cholesky_lower(&a).unwrap();
        assert!(l.as_matrix().sub(&Matrix::identity(3)).unwrap().frobenius_norm() == 0.0);
    }

    #[test]
    fn two_by_two_known_factor() {
        // chol([[4,2],[2,3]]) = [[2,0],[1,sqrt(2)]]; checked by reconstruction
        let a = spd(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let l = cholesky_lower(&a).unwrap();
        assert!((l.as_matrix().get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l.as_matrix().get(1, 0) - 1.0).abs() < 1e-15);
        assert!((l.as_matrix().get(1, 1) - 2.0_f64.sqrt()).abs() < 1e-15);
        let recon = l.outer();
        assert!(recon.sub(a.as_matrix()).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = SpdMatrix::new(Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
        match cholesky_lower(&a) {
            Err(NkError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(SpdMatrix::new(Matrix::from_rows(&[&[1.0, 0.5], &[0.2, 1.0]])).is_err());
    }

    #[test]
    fn solve_lower_identity_returns_rhs() {
        let l = TriangularFactor::new(Matrix::identity(4)).unwrap();
        let b = vec![3.0, -1.0, 0.5, 2.0];
        assert_eq!(solve_lower(&l, &b).unwrap(), b);
    }

    #[test]
    fn solve_lower_known_case() {
        // L = [[2,0],[1,sqrt(2)]], b = [2, 1+sqrt(2)] -> x = [1, 1]
        let l = TriangularFactor::new(Matrix::from_rows(&[
            &[2.0, 0.0],
            &[1.0, 2.0_f64.sqrt()],
        ]))
        .unwrap();
        let x = solve_lower(&l, &[2.0, 1.0 + 2.0_f64.sqrt()]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let l = TriangularFactor::new(Matrix::identity(3)).unwrap();
        assert!(matches!(
            solve_lower(&l, &[1.0, 2.0]),
            Err(NkError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tikhonov_gram_diagonal_case() {
        let j = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let g = tikhonov_gram(&j, 1.0).unwrap();
        assert_eq!(g.as_matrix().get(0, 0), 2.0);
        assert_eq!(g.as_matrix().get(1, 1), 5.0);
        assert_eq!(g.as_matrix().get(0, 1), 0.0);
        let gi = tikhonov_gram(&Matrix::identity(3), 0.0).unwrap();
        assert!(gi.as_matrix().sub(&Matrix::identity(3)).unwrap().frobenius_norm() == 0.0);
    }

    #[test]
    fn inverse_factor_diagonal() {
        // J = diag(1,2), lambda = 0 -> R = diag(1, 1/2)
        let j = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let r = inverse_cholesky_factor(&j, 0.0).unwrap();
        assert!((r.as_matrix().get(0, 0) - 1.0).abs() < 1e-14);
        assert!((r.as_matrix().get(1, 1) - 0.5).abs() < 1e-14);
        let ident = inverse_cholesky_factor(&Matrix::identity(3), 0.0).unwrap();
        assert!(ident.as_matrix().sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn condition_estimate_diagonal() {
        let a = spd(&[&[1.0, 0.0], &[0.0, 1e4]]);
        let c = condition_estimate(&a).unwrap();
        assert!(c > 0.5e4 && c < 2.0e4, "got {c}");
        let i = SpdMatrix::new(Matrix::identity(5)).unwrap();
        let ci = condition_estimate(&i).unwrap();
        assert!((ci - 1.0).abs() < 1e-9);
    }

    #[test]
    fn triangular_inverse_matches_solves() {
        let l = TriangularFactor::new(Matrix::from_rows(&[
            &[2.0, 0.0, 0.0],
            &[0.5, 1.5, 0.0],
            &[-1.0, 0.25, 1.25],
        ]))
        .unwrap();
        let inv = l.inverse();
        let prod = l.as_matrix().mul(&inv).unwrap();
        assert!(prod.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-13);
    }
}
