//! Dense real-matrix utilities: symmetric eigendecomposition, numerical rank,
//! definiteness and stability tests, PSD square-root factors and the Kalman
//! rank tests for controllability and observability.
//!
//! Everything here is a pure function of its inputs.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Matrix;

pub type CMatrix = DMatrix<Complex<f64>>;

/// Relative tolerance for symmetry checks.
pub const SYM_TOL: f64 = 1e-10;
/// Absolute tolerance for PSD eigenvalue checks.
pub const PSD_TOL: f64 = 1e-9;

const MAX_ITER: usize = 10_000;

pub fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (max absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Eigendecomposition `M = V diag(λ) Vᵀ` of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        &self.eigenvectors
            * Matrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    ensure_square(m)?;
    let asym = max_asymmetry(m);
    if asym > SYM_TOL * max_abs(m) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    sym_eig_of_symmetric_part(m)
}

/// Decomposes `(M + Mᵀ)/2` without checking how far `M` is from symmetric.
pub(crate) fn sym_eig_of_symmetric_part(m: &Matrix) -> Result<SymEig> {
    let n = ensure_square(m)?;
    if n == 0 {
        return Ok(SymEig {
            eigenvalues: DVector::zeros(0),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn default_rank_tol(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON
}

/// Numerical rank: the number of singular values above `tol`
/// (default `max(rows, cols)·σ_max·ε`).
pub fn rank_svd(m: &Matrix, tol: Option<f64>) -> Result<usize> {
    Ok(rank_with_margin(m, tol)?.0)
}

/// Rank together with the smallest retained singular value.
fn rank_with_margin(m: &Matrix, tol: Option<f64>) -> Result<(usize, f64)> {
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = tol.unwrap_or_else(|| default_rank_tol(m.nrows(), m.ncols(), smax));
    let kept: Vec<f64> = s.into_iter().filter(|&x| x > tol).collect();
    let margin = kept.last().copied().unwrap_or(0.0);
    Ok((kept.len(), margin))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    let n = ensure_square(m)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = complex_schur(m)?;
    Ok(t.diagonal().iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzTest {
    pub hurwitz: bool,
    pub max_real_part: f64,
}

/// True iff every eigenvalue has real part below `-margin`.
pub fn is_hurwitz(m: &Matrix, margin: f64) -> Result<HurwitzTest> {
    let max_real_part = eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzTest {
        hurwitz: max_real_part < -margin,
        max_real_part,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Definiteness {
    pub symmetric: bool,
    pub psd: bool,
    pub pd: bool,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
}

/// Symmetry plus semi/definiteness of the symmetric part. An asymmetric
/// matrix is reported as neither PSD nor PD.
pub fn definiteness(m: &Matrix, tol: f64) -> Result<Definiteness> {
    ensure_square(m)?;
    let asymmetry = max_asymmetry(m);
    let symmetric = asymmetry <= tol * (1.0 + max_abs(m));
    let min_eigenvalue = if m.nrows() == 0 {
        0.0
    } else {
        sym_eig_of_symmetric_part(m)?.min()
    };
    Ok(Definiteness {
        symmetric,
        psd: symmetric && min_eigenvalue >= -tol,
        pd: symmetric && min_eigenvalue > tol,
        min_eigenvalue,
        asymmetry,
    })
}

/// Returns `Δ` (r×n, r = numerical rank) with `ΔᵀΔ = M`.
///
/// Eigenvalues in `[-tol, 0]` are clamped to zero; anything below `-tol`
/// is rejected.
pub fn psd_sqrt_factor(m: &Matrix, tol: f64) -> Result<Matrix> {
    let n = ensure_square(m)?;
    let asym = max_asymmetry(m);
    if asym > SYM_TOL * (1.0 + max_abs(m)) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = sym_eig_of_symmetric_part(m)?;
    if n > 0 && eig.min() < -tol {
        return Err(Error::NotPsd { min_eig: eig.min() });
    }
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep_above = n as f64 * lmax * f64::EPSILON;
    let kept: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > keep_above).collect();
    let mut delta = Matrix::zeros(kept.len(), n);
    // Largest eigenvalue first.
    for (row, &i) in kept.iter().rev().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        delta.set_row(row, &(eig.eigenvectors.column(i).transpose() * s));
    }
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTest {
    pub full_rank: bool,
    pub rank: usize,
    pub dim: usize,
    /// Smallest singular value that counted towards the rank.
    pub margin: f64,
}

/// Kalman rank test on `[B, AB, …, A^{n-1}B]`, each block scaled by
/// `1/max(1, ‖A‖)^j`.
pub fn is_controllable(a: &Matrix, b: &Matrix, tol: Option<f64>) -> Result<RankTest> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "A is {n}x{n} but B has {} rows",
            b.nrows()
        )));
    }
    let m = b.ncols();
    if n == 0 {
        return Ok(RankTest {
            full_rank: true,
            rank: 0,
            dim: 0,
            margin: 0.0,
        });
    }
    let scale = a.norm().max(1.0);
    let a_scaled = a / scale;
    let mut krylov = Matrix::zeros(n, n * m);
    let mut block = b.clone();
    for j in 0..n {
        krylov.view_mut((0, j * m), (n, m)).copy_from(&block);
        block = &a_scaled * block;
    }
    let (rank, margin) = rank_with_margin(&krylov, tol)?;
    Ok(RankTest {
        full_rank: rank == n,
        rank,
        dim: n,
        margin,
    })
}

/// Dual of [`is_controllable`]: `(A, C)` observable iff `(Aᵀ, Cᵀ)` controllable.
pub fn is_observable(a: &Matrix, c: &Matrix, tol: Option<f64>) -> Result<RankTest> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "A is {n}x{n} but C has {} columns",
            c.ncols()
        )));
    }
    is_controllable(&a.transpose(), &c.transpose(), tol)
}

fn to_complex(m: &Matrix) -> CMatrix {
    m.map(|x| Complex::new(x, 0.0))
}

/// PBH test: `rank [A - λI, B] = n` for every eigenvalue with `Re λ ≥ 0`.
pub fn is_stabilizable(a: &Matrix, b: &Matrix) -> Result<bool> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "A is {n}x{n} but B has {} rows",
            b.nrows()
        )));
    }
    let scale = a.norm().max(b.norm()).max(1.0);
    for lambda in eigenvalues(a)? {
        if lambda.re < -1e-10 * scale {
            continue;
        }
        let mut pencil = CMatrix::zeros(n, n + b.ncols());
        pencil
            .view_mut((0, 0), (n, n))
            .copy_from(&(to_complex(a) - CMatrix::identity(n, n) * lambda));
        pencil.view_mut((0, n), b.shape()).copy_from(&to_complex(b));
        let svd = SVD::try_new(pencil, false, false, f64::EPSILON, MAX_ITER)
            .ok_or_else(|| Error::NumericalFailure("complex SVD did not converge".into()))?;
        let smax = svd.singular_values.max();
        let tol = (2 * n + b.ncols()) as f64 * smax.max(scale) * 1e-12;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Dual of [`is_stabilizable`].
pub fn is_detectable(a: &Matrix, c: &Matrix) -> Result<bool> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "A is {n}x{n} but C has {} columns",
            c.ncols()
        )));
    }
    is_stabilizable(&a.transpose(), &c.transpose())
}

/// Complex Schur form `M = Q T Qᴴ` with the eigenvalues selected by `select`
/// moved to the leading diagonal positions. Returns `(Q, T, count)`.
pub fn ordered_complex_schur<F>(m: &Matrix, select: F) -> Result<(CMatrix, CMatrix, usize)>
where
    F: Fn(Complex<f64>) -> bool,
{
    let n = ensure_square(m)?;
    if n == 0 {
        return Ok((CMatrix::zeros(0, 0), CMatrix::zeros(0, 0), 0));
    }
    let (mut q, mut t) = complex_schur(m)?;

    let mut next = 0;
    for i in 0..n {
        if select(t[(i, i)]) {
            let mut k = i;
            while k > next {
                swap_adjacent(&mut t, &mut q, k - 1);
                k -= 1;
            }
            next += 1;
        }
    }
    Ok((q, t, next))
}

/// Complex Schur form `M = Q T Qᴴ`. The real Schur form is computed first and
/// its 2x2 blocks are split by unitary rotations; the direct complex iteration
/// is the fallback.
fn complex_schur(m: &Matrix) -> Result<(CMatrix, CMatrix)> {
    let n = m.nrows();
    let (q, mut t) = match real_schur(m) {
        Some((q, t)) => {
            let (mut q, mut t) = (to_complex(&q), to_complex(&t));
            let mut k = 0;
            while k + 1 < n {
                if t[(k + 1, k)].re != 0.0 {
                    let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
                    let half = (a - d) * 0.5;
                    let lambda = (a + d) * 0.5 + (half * half + b * c).sqrt();
                    rotate_to_front(&mut t, &mut q, k, lambda);
                }
                k += 1;
            }
            (q, t)
        }
        None => Schur::try_new(to_complex(m), f64::EPSILON, MAX_ITER)
            .ok_or_else(|| Error::NumericalFailure("Schur iteration did not converge".into()))?
            .unpack(),
    };
    // Round-off below the diagonal.
    for j in 0..n {
        for i in j + 1..n {
            t[(i, j)] = Complex::new(0.0, 0.0);
        }
    }
    Ok((q, t))
}

/// Real Schur form. The shifted QR iteration can cycle on some matrices; those
/// are retried after a fixed orthogonal similarity `M -> Zᵀ M Z`.
fn real_schur(m: &Matrix) -> Option<(Matrix, Matrix)> {
    if let Some(s) = Schur::try_new(m.clone(), f64::EPSILON, MAX_ITER) {
        return Some(s.unpack());
    }
    let n = m.nrows();
    (0..3u64).find_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let (q, t) = Schur::try_new(z.transpose() * m * &z, f64::EPSILON, MAX_ITER)?.unpack();
        Some((z * q, t))
    })
}

/// Swaps diagonal entries `k` and `k+1` of upper-triangular `T` by a unitary
/// rotation, updating `Q` so that `Q T Qᴴ` is unchanged.
fn swap_adjacent(t: &mut CMatrix, q: &mut CMatrix, k: usize) {
    let (a, d) = (t[(k, k)], t[(k + 1, k + 1)]);
    if a == d {
        return;
    }
    rotate_to_front(t, q, k, d);
    t[(k, k)] = d;
    t[(k + 1, k + 1)] = a;
    t[(k + 1, k)] = Complex::new(0.0, 0.0);
}

/// Applies the rotation whose first column is an eigenvector of the 2x2 block
/// at `k` for eigenvalue `lambda`, so `lambda` moves to position `k`.
fn rotate_to_front(t: &mut CMatrix, q: &mut CMatrix, k: usize, lambda: Complex<f64>) {
    let n = t.nrows();
    let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
    let (u1, u2) = (b, lambda - a);
    let (w1, w2) = (lambda - d, c);
    let (v1, v2) = if u1.norm_sqr() + u2.norm_sqr() >= w1.norm_sqr() + w2.norm_sqr() {
        (u1, u2)
    } else {
        (w1, w2)
    };
    let norm = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
    if norm == 0.0 {
        return;
    }
    let (c1, c2) = (v1 / norm, v2 / norm);
    // G = [[c1, -conj(c2)], [c2, conj(c1)]]
    let g = [[c1, -c2.conj()], [c2, c1.conj()]];

    // T <- Gᴴ T on rows k, k+1.
    for j in k..n {
        let x = t[(k, j)];
        let y = t[(k + 1, j)];
        t[(k, j)] = g[0][0].conj() * x + g[1][0].conj() * y;
        t[(k + 1, j)] = g[0][1].conj() * x + g[1][1].conj() * y;
    }
    // T <- T G and Q <- Q G on columns k, k+1.
    for i in 0..(k + 2).min(n) {
        let x = t[(i, k)];
        let y = t[(i, k + 1)];
        t[(i, k)] = x * g[0][0] + y * g[1][0];
        t[(i, k + 1)] = x * g[0][1] + y * g[1][1];
    }
    for i in 0..n {
        let x = q[(i, k)];
        let y = q[(i, k + 1)];
        q[(i, k)] = x * g[0][0] + y * g[1][0];
        q[(i, k + 1)] = x * g[0][1] + y * g[1][1];
    }
    t[(k + 1, k)] = Complex::new(0.0, 0.0);
}
