//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::scalar::{cond_limit, lit, to_f64, Real};

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Largest absolute entry of `m - m'`.
pub fn max_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    (m - m.transpose()).amax()
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        T::zero()
    } else {
        m.amax()
    }
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<T> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).first().copied().unwrap_or_else(T::zero)
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).last().copied().unwrap_or_else(T::zero)
}

/// Induced 1-norm (largest absolute column sum).
pub fn norm1<T: Real>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |acc, x| acc + x.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Inverse together with its 1-norm condition number.
pub fn inverse_with_cond<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, T)> {
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { cond: f64::INFINITY })?;
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    Ok((inv, cond))
}

/// Solves `m x = rhs`, rejecting systems whose condition estimate exceeds [`cond_limit`].
pub fn solve_checked<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let lu = m.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::Singular { cond: f64::INFINITY })?;
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > cond_limit::<T>() {
        return Err(Error::Singular { cond: to_f64(cond) });
    }
    lu.solve(rhs).ok_or(Error::Singular { cond: to_f64(cond) })
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues in `[-tol, 0)` are clipped to zero; anything below `-tol` is an error.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>, tol: T, name: &'static str) -> Result<DMatrix<T>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut roots = DVector::zeros(n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < -tol {
            return Err(Error::Definiteness {
                name,
                property: "positive semidefinite",
                margin: to_f64(ev),
            });
        }
        roots[i] = ev.max(T::zero()).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose())))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<Vec<Complex<T>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigenvalue input"));
    }
    let schur = Schur::try_new(m.clone(), T::eps(), 100_000)
        .ok_or_else(|| Error::Eigen("real Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| modulus(*z))
        .fold(T::zero(), |a, b| a.max(b)))
}

/// `|z|` for a complex scalar.
pub fn modulus<T: Real>(z: Complex<T>) -> T {
    nalgebra::ComplexField::modulus(z)
}

pub fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

/// Numerical rank with threshold `min(rows, cols) * sigma_max * rel`.
pub fn complex_rank<T: Real>(m: DMatrix<Complex<T>>, rel: T) -> (usize, Vec<T>) {
    if m.is_empty() {
        return (0, Vec::new());
    }
    let dim = m.nrows().min(m.ncols());
    let sv: Vec<T> = SVD::new(m, false, false).singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let threshold = lit::<T>(dim as f64) * smax * rel;
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    (rank, sv)
}

/// Right singular vectors of the `count` smallest singular values of a square complex matrix.
pub fn null_vectors<T: Real>(m: DMatrix<Complex<T>>, count: usize) -> Result<Vec<DVector<Complex<T>>>> {
    let n = m.ncols();
    let svd = SVD::new(m, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Eigen("SVD did not produce right singular vectors".into()))?;
    Ok((n.saturating_sub(count)..n)
        .map(|r| v_t.row(r).transpose().map(|z| z.conj()))
        .collect())
}

/// Right singular vectors of the `count` smallest singular values of a square real matrix.
pub fn null_vectors_real<T: Real>(m: DMatrix<T>, count: usize) -> Result<Vec<DVector<T>>> {
    let n = m.ncols();
    let svd = SVD::new(m, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Eigen("SVD did not produce right singular vectors".into()))?;
    Ok((n.saturating_sub(count)..n).map(|r| v_t.row(r).transpose()).collect())
}

/// 2-norm condition number (ratio of extreme singular values).
pub fn cond2<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::one();
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let smin = sv.iter().copied().fold(smax, |a, b| a.min(b));
    if smin <= T::zero() {
        lit(f64::INFINITY)
    } else {
        smax / smin
    }
}

/// Block matrix `[[a, b], [c, d]]`.
pub fn block2<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>, d: &DMatrix<T>) -> DMatrix<T> {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m, 1e-12, "M").unwrap();
        assert!((&r * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_negative() {
        let m = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(psd_sqrt(&m, 1e-12, "M"), Err(Error::Definiteness { .. })));
    }

    #[test]
    fn solve_checked_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let rhs = DMatrix::identity(2, 2);
        assert!(matches!(solve_checked(&m, &rhs), Err(Error::Singular { .. })));
    }

    #[test]
    fn rotation_eigenvalues_are_complex() {
        let m: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert!(ev.iter().all(|z| (modulus(*z) - 2.0).abs() < 1e-12 && z.re.abs() < 1e-12));
        assert!((spectral_radius(&m).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn null_vector_of_rank_one() {
        let m = to_complex(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let v = &null_vectors(m.clone(), 1).unwrap()[0];
        assert!((m * v).norm() < 1e-12);
        assert_eq!(complex_rank(to_complex(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])), 1e-12).0, 1);
    }
}
