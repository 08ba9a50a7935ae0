//! Dense linear-algebra helpers shared by the rest of the crate.
//!
//! Matrices are `nalgebra::DMatrix<f64>` throughout. Non-symmetric eigenvalue
//! problems are routed through `faer`, which is markedly more robust than the
//! pure Schur iteration for the Hamiltonian matrices met in H-infinity
//! computations. Lyapunov and Stein equations are solved with a real Schur
//! (Bartels-Stewart) scheme that handles 2x2 diagonal blocks.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))
}

/// Largest real part of the spectrum (negative for Hurwitz matrices).
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest eigenvalue modulus (below one for Schur-stable matrices).
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(sym(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = sym(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Square root of the PSD part of a symmetric matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose()
}

/// Largest eigenvalue of `P Q` for symmetric PSD `P`, `Q`; real and nonnegative.
pub fn lambda_max_product(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let root = psd_sqrt(p);
    lambda_max(&(&root * q * &root)).max(0.0)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn spectral_norm_complex(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Top singular triple `(sigma, u, v)` of a real matrix.
pub fn top_singular_triple(m: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let gram = m.transpose() * m;
    let (vals, vecs) = sym_eigen(&gram);
    let k = vals.len() - 1;
    let v = vecs.column(k).clone_owned();
    let mv = m * &v;
    let sigma = mv.norm();
    let u = if sigma > 0.0 {
        mv / sigma
    } else {
        let mut e = DVector::zeros(m.nrows());
        e[0] = 1.0;
        e
    };
    (sigma, u, v)
}

/// `‖TᵀT − I‖_F`.
pub fn orthonormality_defect(t: &DMatrix<f64>) -> f64 {
    let k = t.ncols();
    (t.transpose() * t - DMatrix::identity(k, k)).norm()
}

/// Orthonormal basis of the column span via thin QR, with the sign of each
/// column fixed so that the diagonal of R is nonnegative.
pub fn orthonormalize(t: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = t.shape();
    let mut q = t.clone();
    // Modified Gram-Schmidt, run twice for stability.
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let qk = q.column(k).clone_owned();
                q.column_mut(j).axpy(-proj, &qk, 1.0);
            }
        }
        let norm = q.column(j).norm();
        if norm > 1e-300 {
            q.column_mut(j).scale_mut(1.0 / norm);
        } else {
            // Rank deficient input: complete with the first unused axis.
            let mut fill = DVector::zeros(rows);
            for axis in 0..rows {
                fill.fill(0.0);
                fill[axis] = 1.0;
                for k in 0..j {
                    let proj = q.column(k).dot(&fill);
                    fill.axpy(-proj, &q.column(k).clone_owned(), 1.0);
                }
                if fill.norm() > 0.5 {
                    break;
                }
            }
            let n = fill.norm();
            q.set_column(j, &(fill / n));
        }
    }
    q
}

/// Diagonal block partition `(start, size)` of an upper quasi-triangular matrix.
fn quasi_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)].abs();
            let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub > f64::EPSILON * scale.max(f64::MIN_POSITIVE) {
                out.push((i, 2));
                i += 2;
                continue;
            }
        }
        out.push((i, 1));
        i += 1;
    }
    out
}

fn real_schur(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    Schur::try_new(a.clone(), f64::EPSILON, 1000 * n + 1000)
        .map(|s| s.unpack())
        .ok_or_else(|| Error::Numerical("real Schur iteration did not converge".into()))
}

/// Solves the at most 4x4 system `kron · vec(Y) = vec(rhs)` (column-major vec).
fn solve_small(kron: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, c) = rhs.shape();
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = kron
        .full_piv_lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    Ok(DMatrix::from_column_slice(r, c, x.as_slice()))
}

/// Solves `T Y + Y Sᵀ = R` for upper quasi-triangular `T` (n x n) and `S` (p x p).
fn quasi_sylvester(t: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let p = s.nrows();
    let rb = quasi_blocks(t);
    let cb = quasi_blocks(s);
    let mut y = DMatrix::zeros(n, p);
    for &(j0, sj) in cb.iter().rev() {
        let j_end = j0 + sj;
        let mut rhs = r.columns(j0, sj).clone_owned();
        if j_end < p {
            rhs -= y.columns(j_end, p - j_end) * s.view((j0, j_end), (sj, p - j_end)).transpose();
        }
        let s_jj = s.view((j0, j0), (sj, sj)).clone_owned();
        for &(i0, ri) in rb.iter().rev() {
            let i_end = i0 + ri;
            let mut small = rhs.rows(i0, ri).clone_owned();
            if i_end < n {
                small -= t.view((i0, i_end), (ri, n - i_end)) * y.view((i_end, j0), (n - i_end, sj));
            }
            let t_ii = t.view((i0, i0), (ri, ri)).clone_owned();
            let kron = DMatrix::identity(sj, sj).kronecker(&t_ii)
                + s_jj.kronecker(&DMatrix::identity(ri, ri));
            let block = solve_small(kron, &small)?;
            y.view_mut((i0, j0), (ri, sj)).copy_from(&block);
        }
    }
    Ok(y)
}

/// Solves `T Y Sᵀ − Y = R` for upper quasi-triangular `T` and `S`.
fn quasi_stein(t: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let p = s.nrows();
    let rb = quasi_blocks(t);
    let cb = quasi_blocks(s);
    let mut y = DMatrix::zeros(n, p);
    for &(j0, sj) in cb.iter().rev() {
        let j_end = j0 + sj;
        let tz = if j_end < p {
            let z = y.columns(j_end, p - j_end) * s.view((j0, j_end), (sj, p - j_end)).transpose();
            t * z
        } else {
            DMatrix::zeros(n, sj)
        };
        let s_jj = s.view((j0, j0), (sj, sj)).clone_owned();
        for &(i0, ri) in rb.iter().rev() {
            let i_end = i0 + ri;
            let mut small = r.view((i0, j0), (ri, sj)) - tz.rows(i0, ri);
            if i_end < n {
                let partial =
                    t.view((i0, i_end), (ri, n - i_end)) * y.view((i_end, j0), (n - i_end, sj));
                small -= partial * s_jj.transpose();
            }
            let t_ii = t.view((i0, i0), (ri, ri)).clone_owned();
            let kron = s_jj.kronecker(&t_ii) - DMatrix::identity(ri * sj, ri * sj);
            let block = solve_small(kron, &small)?;
            y.view_mut((i0, j0), (ri, sj)).copy_from(&block);
        }
    }
    Ok(y)
}

/// Solves the continuous Lyapunov equation `A X + X Aᵀ + Q = 0`.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension("Lyapunov equation operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (u, t) = real_schur(a)?;
    let rhs = -(u.transpose() * q * &u);
    let y = quasi_sylvester(&t, &t, &rhs)?;
    Ok(sym(&(&u * y * u.transpose())))
}

/// Solves the discrete Lyapunov (Stein) equation `A X Aᵀ − X + Q = 0`.
pub fn stein(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension("Stein equation operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (u, t) = real_schur(a)?;
    let rhs = -(u.transpose() * q * &u);
    let y = quasi_stein(&t, &t, &rhs)?;
    Ok(sym(&(&u * y * u.transpose())))
}

/// Smallest `|λ_i + λ_j|` over the spectrum, relative to the spectral radius.
/// Small values mean the continuous Lyapunov operator is close to singular.
pub fn lyapunov_separation(eigs: &[Complex64], discrete: bool) -> f64 {
    let scale = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max).max(1e-300);
    let mut sep = f64::INFINITY;
    for a in eigs {
        for b in eigs {
            let v = if discrete {
                (Complex64::new(1.0, 0.0) - a * b.conj()).norm()
            } else {
                (a + b.conj()).norm() / scale
            };
            sep = sep.min(v);
        }
    }
    sep
}

/// Solves the complex linear system `M X = B`.
pub fn solve_complex(m: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    m.clone().lu().solve(b)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// `D + C (λI − A)^{-1} B`, or `None` when `λ` is (numerically) in the spectrum.
pub fn frequency_response(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    lambda: Complex64,
) -> Option<CMatrix> {
    let n = a.nrows();
    if n == 0 {
        return Some(to_complex(d));
    }
    let mut shifted = -to_complex(a);
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let x = solve_complex(&shifted, &to_complex(b))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return None;
    }
    Some(to_complex(d) + to_complex(c) * x)
}

/// Row-major nested vectors, the on-disk matrix layout.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], expected_cols: Option<usize>) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows
        .first()
        .map(|r| r.len())
        .or(expected_cols)
        .unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lyapunov_residual_with_complex_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 17] {
            // Rotation-heavy matrix guarantees 2x2 Schur blocks.
            let skew = random(n, n, &mut rng);
            let a = (&skew - skew.transpose()) * 3.0 - DMatrix::identity(n, n) * 0.5;
            let b = random(n, 2, &mut rng);
            let q = &b * b.transpose();
            let x = lyapunov(&a, &q).unwrap();
            let res = &a * &x + &x * a.transpose() + &q;
            assert!(res.norm() < 1e-11 * (a.norm() * x.norm() + q.norm()), "n={n}");
        }
    }

    #[test]
    fn stein_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 3, 8] {
            let raw = random(n, n, &mut rng);
            let a = &raw * (0.9 / spectral_radius(&raw).unwrap());
            let b = random(n, 2, &mut rng);
            let q = &b * b.transpose();
            let x = stein(&a, &q).unwrap();
            let res = &a * &x * a.transpose() - &x + &q;
            assert!(res.norm() < 1e-10 * (x.norm() + q.norm()), "n={n}");
        }
    }

    #[test]
    fn scalar_lyapunov_closed_form() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!((lyapunov(&a, &q).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_keeps_span_and_signs() {
        let t = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let q = orthonormalize(&t);
        assert!(orthonormality_defect(&q) < 1e-15);
        assert_eq!(q[(0, 0)], 1.0);
        assert_eq!(q[(1, 1)], 1.0);
    }

    #[test]
    fn psd_eigen_lemmas() {
        // Sum of PSD matrices is PSD and the spectrum of a PSD product is real
        // and nonnegative.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random(6, 4, &mut rng);
            let h = random(6, 6, &mut rng);
            let a = &g * g.transpose();
            let b = &h * h.transpose();
            assert!(lambda_min(&(&a + &b)) >= -1e-12);
            for l in eigenvalues(&(&a * &b)).unwrap() {
                let scale = 1.0 + a.norm() * b.norm();
                assert!(l.re >= -1e-10 * scale);
                assert!(l.im.abs() <= 1e-8 * scale);
            }
        }
    }
}
