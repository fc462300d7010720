//! Continuous algebraic Riccati and Lyapunov solvers, plus residual
//! evaluators for the rectangular (generalized) Riccati equation that links
//! subsystem and composite LQR designs, and for its square lift.

use nalgebra::{Complex, LU};

use crate::error::{Error, Result};
use crate::matkit::{self, CMatrix, SYM_TOL};
use crate::Matrix;

/// Target relative residual for [`solve_care`].
pub const CARE_TOL: f64 = 1e-9;
/// Residuals above this (relative) are a hard failure.
pub const CARE_HARD_TOL: f64 = 1e-6;
/// Maximum number of Newton–Kleinman sweeps after the Schur step.
pub const MAX_NEWTON_SWEEPS: usize = 5;
/// Largest dimension solved by Kronecker vectorization; beyond this the
/// Bartels–Stewart route is used.
pub const KRONECKER_MAX_DIM: usize = 60;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Matrix,
    /// Frobenius norm of the CARE residual at `p`.
    pub residual_norm: f64,
    /// Largest eigenvalue real part of `A - B R⁻¹ Bᵀ P`.
    pub closed_loop_max_re: f64,
    pub newton_sweeps: usize,
    /// Estimated Frobenius-norm forward error of `p`: the Lyapunov sensitivity
    /// `‖H‖₂` (with `AclᵀH + H Acl + I = 0`) times the residual plus its
    /// rounding floor.
    pub error_estimate: f64,
}

fn check_care_shapes(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<(usize, usize)> {
    let n = matkit::ensure_square(a)?;
    let m = b.ncols();
    if b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "B has {} rows, expected {n}",
            b.nrows()
        )));
    }
    if q.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    if r.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "R is {}x{}, expected {m}x{m}",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok((n, m))
}

pub(crate) fn invert(r: &Matrix) -> Result<Matrix> {
    matkit::ensure_square(r)?;
    if r.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let inv = LU::new(r.clone()).try_inverse().ok_or(Error::RSingular)?;
    if inv.iter().all(|x| x.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::RSingular)
    }
}

/// `-PA - AᵀP - Q + P B R⁻¹ Bᵀ P`.
pub fn care_residual(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    p: &Matrix,
) -> Result<(Matrix, f64)> {
    let (n, _) = check_care_shapes(a, b, q, r)?;
    if p.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("P must be {n}x{n}")));
    }
    let g = b * invert(r)? * b.transpose();
    let res = -(p * a) - a.transpose() * p - q + p * g * p;
    let norm = res.norm();
    Ok((res, norm))
}

fn care_scale(p: &Matrix, a: &Matrix) -> f64 {
    1.0 + p.norm() * a.norm()
}

/// Stabilizing solution of `AᵀP + PA - P B R⁻¹ Bᵀ P + Q = 0`.
///
/// The stable invariant subspace of the Hamiltonian
/// `[[A, -BR⁻¹Bᵀ], [-Q, -Aᵀ]]` is read off an ordered Schur form, then
/// refined by Newton–Kleinman sweeps.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<RiccatiSolution> {
    let (n, _) = check_care_shapes(a, b, q, r)?;
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        matkit::ensure_finite(mat, name)?;
    }
    let rdef = matkit::definiteness(r, SYM_TOL)?;
    if !rdef.pd {
        return Err(Error::RNotPd {
            min_eig: rdef.min_eigenvalue,
        });
    }
    let qdef = matkit::definiteness(q, SYM_TOL)?;
    if !qdef.symmetric {
        return Err(Error::NotSymmetric {
            asymmetry: qdef.asymmetry,
        });
    }
    if !qdef.psd {
        return Err(Error::NotPsd {
            min_eig: qdef.min_eigenvalue,
        });
    }
    if n == 0 {
        return Ok(RiccatiSolution {
            p: Matrix::zeros(0, 0),
            residual_norm: 0.0,
            closed_loop_max_re: f64::NEG_INFINITY,
            newton_sweeps: 0,
            error_estimate: 0.0,
        });
    }

    let q = matkit::symmetrize(q);
    let r = matkit::symmetrize(r);
    let r_inv = invert(&r)?;
    let g = matkit::symmetrize(&(b * &r_inv * b.transpose()));

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let (z, t, stable) = matkit::ordered_complex_schur(&h, |lam| lam.re < 0.0)?;
    let axis_tol = 1e-8 * (1.0 + h.norm());
    if stable != n || (0..2 * n).any(|i| t[(i, i)].re.abs() <= axis_tol) {
        return Err(Error::NotStabilizable(
            "Hamiltonian has eigenvalues on the imaginary axis".into(),
        ));
    }

    let u1 = z.view((0, 0), (n, n)).clone_owned();
    let u2 = z.view((n, 0), (n, n)).clone_owned();
    let smin = u1.singular_values().min();
    if smin < 1e-13 {
        return Err(Error::NotStabilizable(format!(
            "stable subspace basis is singular (smallest singular value {smin:e})"
        )));
    }
    // P = U2 U1⁻¹  <=>  U1ᵀ Pᵀ = U2ᵀ
    let pt: CMatrix = LU::new(u1.transpose())
        .solve(&u2.transpose())
        .ok_or_else(|| Error::NotStabilizable("stable subspace basis is singular".into()))?;
    let p0 = matkit::symmetrize(&pt.transpose().map(|z: Complex<f64>| z.re));
    if !p0.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericalFailure("non-finite Riccati solution".into()));
    }

    let mut best_res = care_residual(a, b, &q, &r, &p0)?.1;
    let mut best = p0.clone();
    let mut current = p0;
    let mut sweeps = 0;
    while sweeps < MAX_NEWTON_SWEEPS && best_res > CARE_TOL * care_scale(&best, a) {
        let f = &r_inv * b.transpose() * &current;
        let acl = a - b * &f;
        if !matkit::is_hurwitz(&acl, 0.0)?.hurwitz {
            break;
        }
        let w = &q + f.transpose() * &r * &f;
        let next = match solve_lyapunov(&acl, &w) {
            Ok(x) => x,
            Err(_) => break,
        };
        sweeps += 1;
        let res = care_residual(a, b, &q, &r, &next)?.1;
        if res < best_res {
            best = next.clone();
            best_res = res;
        }
        current = next;
    }

    if best_res > CARE_HARD_TOL * care_scale(&best, a) {
        return Err(Error::NumericalFailure(format!(
            "CARE residual {best_res:e} could not be reduced below tolerance"
        )));
    }
    let acl = a - b * (&r_inv * b.transpose() * &best);
    let hz = matkit::is_hurwitz(&acl, 0.0)?;
    if !hz.hurwitz {
        return Err(Error::NotStabilizable(format!(
            "closed loop is not Hurwitz (max real part {:e})",
            hz.max_real_part
        )));
    }
    let floor = f64::EPSILON
        * n as f64
        * (q.norm() + 2.0 * a.norm() * best.norm() + best.norm_squared() * g.norm());
    let error_estimate = solve_lyapunov(&acl, &Matrix::identity(n, n))
        .and_then(|h| matkit::sym_eig(&h))
        .map(|e| e.eigenvalues.max() * (best_res + floor))
        .unwrap_or(f64::INFINITY);
    Ok(RiccatiSolution {
        p: best,
        residual_norm: best_res,
        closed_loop_max_re: hz.max_real_part,
        newton_sweeps: sweeps,
        error_estimate,
    })
}

/// Solves `AclᵀX + X·Acl + W = 0` for Hurwitz `Acl`.
pub fn solve_lyapunov(acl: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = matkit::ensure_square(acl)?;
    if w.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!("W must be {n}x{n}")));
    }
    let hz = matkit::is_hurwitz(acl, 0.0)?;
    if n > 0 && !hz.hurwitz {
        return Err(Error::NotHurwitz {
            max_re: hz.max_real_part,
        });
    }
    let x = if n <= KRONECKER_MAX_DIM {
        lyapunov_kronecker(acl, w)?
    } else {
        lyapunov_bartels_stewart(acl, w)?
    };
    let rel = lyapunov_residual(acl, w, &x) / (1.0 + w.norm() + x.norm() * acl.norm());
    if !(rel <= 1e-8) {
        return Err(Error::NumericalFailure(format!(
            "Lyapunov relative residual {rel:e}"
        )));
    }
    Ok(x)
}

pub fn lyapunov_residual(acl: &Matrix, w: &Matrix, x: &Matrix) -> f64 {
    (acl.transpose() * x + x * acl + w).norm()
}

fn finish_symmetric(x: Matrix, w: &Matrix) -> Matrix {
    if matkit::max_asymmetry(w) <= SYM_TOL * (1.0 + matkit::max_abs(w)) {
        matkit::symmetrize(&x)
    } else {
        x
    }
}

/// Kronecker route: `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X) = -vec(W)`.
pub fn lyapunov_kronecker(acl: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = acl.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let eye = Matrix::identity(n, n);
    let at = acl.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Matrix::from_column_slice(n * n, 1, w.as_slice());
    let sol = LU::new(op)
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Lyapunov operator".into()))?;
    Ok(finish_symmetric(
        Matrix::from_column_slice(n, n, sol.as_slice()),
        w,
    ))
}

/// Bartels–Stewart route on the complex Schur form `Acl = Z T Zᴴ`:
/// `Tᴴ Y + Y T + Zᴴ W Z = 0`, solved one column at a time.
pub fn lyapunov_bartels_stewart(acl: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = acl.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let (z, t, _) = matkit::ordered_complex_schur(acl, |_| false)?;
    let wc = w.map(|x| Complex::new(x, 0.0));
    let wt = z.adjoint() * wc * &z;
    let th = t.adjoint();
    let mut y = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut rhs = -wt.column(j).clone_owned();
        for i in 0..j {
            let tij = t[(i, j)];
            rhs -= y.column(i) * tij;
        }
        // (Tᴴ + t_jj I) y_j = rhs, lower triangular
        let shift = t[(j, j)];
        for row in 0..n {
            let mut acc = rhs[row];
            for col in 0..row {
                acc -= th[(row, col)] * y[(col, j)];
            }
            let diag = th[(row, row)] + shift;
            if diag.norm() == 0.0 {
                return Err(Error::NumericalFailure("singular Sylvester diagonal".into()));
            }
            y[(row, j)] = acc / diag;
        }
    }
    let x = (&z * y * z.adjoint()).map(|c| c.re);
    Ok(finish_symmetric(x, w))
}

struct Composite<'a> {
    abar: &'a Matrix,
    bbar: &'a Matrix,
    k: &'a Matrix,
    qcal: &'a Matrix,
    rbar: &'a Matrix,
}

impl Composite<'_> {
    fn check(&self) -> Result<(usize, usize)> {
        let big = matkit::ensure_square(self.abar)?;
        let small = self.k.ncols();
        if self.k.nrows() != big {
            return Err(Error::ShapeMismatch(format!(
                "K has {} rows, expected {big}",
                self.k.nrows()
            )));
        }
        if self.bbar.nrows() != big {
            return Err(Error::ShapeMismatch(format!(
                "B̄ has {} rows, expected {big}",
                self.bbar.nrows()
            )));
        }
        if self.qcal.shape() != (small, small) {
            return Err(Error::ShapeMismatch(format!(
                "composite Q must be {small}x{small}"
            )));
        }
        let m = self.bbar.ncols();
        if self.rbar.shape() != (m, m) {
            return Err(Error::ShapeMismatch(format!("R̄ must be {m}x{m}")));
        }
        Ok((big, small))
    }

    fn gain_kernel(&self) -> Result<Matrix> {
        Ok(self.bbar * invert(self.rbar)? * self.bbar.transpose())
    }
}

/// Residual of the rectangular Riccati equation
/// `-XᵀĀK - KᵀĀᵀX - 𝒬 + XᵀB̄R̄⁻¹B̄ᵀX` for `X` of shape `(n1+n2)×(n1+n2-k)`.
///
/// Both `P̄K` (stacked subsystem solutions) and `K𝒫` (composite solution)
/// zero it.
pub fn gare_residual(
    abar: &Matrix,
    bbar: &Matrix,
    k: &Matrix,
    qcal: &Matrix,
    rbar: &Matrix,
    x: &Matrix,
) -> Result<(Matrix, f64)> {
    let c = Composite {
        abar,
        bbar,
        k,
        qcal,
        rbar,
    };
    let (big, small) = c.check()?;
    if x.shape() != (big, small) {
        return Err(Error::ShapeMismatch(format!("X must be {big}x{small}")));
    }
    let g = c.gain_kernel()?;
    let xt_ak = x.transpose() * abar * k;
    let res = -&xt_ak - xt_ak.transpose() - qcal + x.transpose() * g * x;
    let norm = res.norm();
    Ok((res, norm))
}

/// Residual of the square lift
/// `-𝒳(ĀKKᵀ) - (ĀKKᵀ)ᵀ𝒳 - K𝒬Kᵀ + 𝒳B̄R̄⁻¹B̄ᵀ𝒳` for symmetric `𝒳`.
///
/// Asymmetric `𝒳` is rejected: only there do the two transpose placements
/// of the lift agree.
pub fn constructed_are_residual(
    abar: &Matrix,
    bbar: &Matrix,
    k: &Matrix,
    qcal: &Matrix,
    rbar: &Matrix,
    xcal: &Matrix,
    sym_tol: f64,
) -> Result<(Matrix, f64)> {
    let c = Composite {
        abar,
        bbar,
        k,
        qcal,
        rbar,
    };
    let (big, _) = c.check()?;
    if xcal.shape() != (big, big) {
        return Err(Error::ShapeMismatch(format!("𝒳 must be {big}x{big}")));
    }
    let asym = matkit::max_asymmetry(xcal);
    if asym > sym_tol * (1.0 + matkit::max_abs(xcal)) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let g = c.gain_kernel()?;
    let akk = abar * k * k.transpose();
    let x_akk = xcal * &akk;
    let res = -&x_akk - akk.transpose() * xcal - k * qcal * k.transpose() + xcal * g * xcal;
    let norm = res.norm();
    Ok((res, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn s(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    /// Positive root of the scalar ARE `2ap - (b²/r)p² + q = 0` in closed form.
    fn scalar_are_root(a: f64, bb_over_r: f64, q: f64) -> f64 {
        (a + (a * a + bb_over_r * q).sqrt()) / bb_over_r
    }

    #[test]
    fn scalar_care_roots() {
        let cases = [
            (s(-1.0), s(1.0), s(1.0), s(1.0), 2f64.sqrt() - 1.0),
            (s(-2.0), s(1.0), s(1.0), s(1.0), 5f64.sqrt() - 2.0),
            (
                s(-3.0),
                Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
                s(2.0),
                Matrix::identity(2, 2),
                (13f64.sqrt() - 3.0) / 2.0,
            ),
        ];
        for (a, b, q, r, expected) in cases {
            let bb = (&b * r.clone().try_inverse().unwrap() * b.transpose())[(0, 0)];
            let oracle = scalar_are_root(a[(0, 0)], bb, q[(0, 0)]);
            assert_relative_eq!(oracle, expected, epsilon = 1e-15);
            let sol = solve_care(&a, &b, &q, &r).unwrap();
            assert!((sol.p[(0, 0)] - expected).abs() < 1e-10, "{}", sol.p);
            assert!(sol.closed_loop_max_re < 0.0);
        }
    }

    #[test]
    fn care_residual_examples() {
        let p = s(2f64.sqrt() - 1.0);
        let (_, norm) = care_residual(&s(-1.0), &s(1.0), &s(1.0), &s(1.0), &p).unwrap();
        assert!(norm < 1e-12);

        let a = Matrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let b = Matrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let (res, _) = care_residual(&a, &b, &Matrix::zeros(2, 2), &s(3.0), &Matrix::zeros(2, 2))
            .unwrap();
        assert_eq!(res, Matrix::zeros(2, 2));

        // -(1)(-1) - (-1)(1) - 1 + 1 = 2
        let (res, _) = care_residual(&s(-1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert_relative_eq!(res[(0, 0)], 2.0, epsilon = 1e-15);

        assert!(matches!(
            care_residual(&s(-1.0), &s(1.0), &s(1.0), &s(0.0), &s(1.0)),
            Err(Error::RSingular)
        ));
        assert!(matches!(
            care_residual(&s(-1.0), &s(1.0), &s(1.0), &s(1.0), &Matrix::zeros(2, 2)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn care_zero_state_cost_with_hurwitz_a() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sol = solve_care(&a, &b, &Matrix::zeros(2, 2), &s(1.0)).unwrap();
        assert!(sol.p.norm() < 1e-12);
    }

    #[test]
    fn care_unstable_zero_cost_still_stabilizes() {
        // q = 0, a = 1: stabilizing root of 2p - p² = 0 is p = 2
        let sol = solve_care(&s(1.0), &s(1.0), &s(0.0), &s(1.0)).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn care_errors() {
        assert!(matches!(
            solve_care(&s(-1.0), &s(1.0), &s(1.0), &s(-1.0)),
            Err(Error::RNotPd { .. })
        ));
        // unstable mode with zero input
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            solve_care(&a, &b, &Matrix::identity(2, 2), &s(1.0)),
            Err(Error::NotStabilizable(_))
        ));
        assert!(matches!(
            solve_care(&s(-1.0), &s(1.0), &s(-1.0), &s(1.0)),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            solve_care(&s(-1.0), &Matrix::zeros(2, 1), &s(1.0), &s(1.0)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn double_integrator() {
        // Known solution for A = [[0,1],[0,0]], B = [0;1], Q = I, R = 1:
        // P = [[√3, 1], [1, √3]]
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sol = solve_care(&a, &b, &Matrix::identity(2, 2), &s(1.0)).unwrap();
        let r3 = 3f64.sqrt();
        let expected = Matrix::from_row_slice(2, 2, &[r3, 1.0, 1.0, r3]);
        assert!((sol.p - expected).norm() < 1e-10);
    }

    #[test]
    fn lyapunov_examples() {
        let x = solve_lyapunov(&s(-1.0), &s(2.0)).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);

        for (a, q) in [(0.5, 3.0), (2.0, 1.0), (7.0, 0.25)] {
            let x = solve_lyapunov(&s(-a), &s(q)).unwrap();
            assert_relative_eq!(x[(0, 0)], q / (2.0 * a), epsilon = 1e-14);
        }

        let acl = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let x = solve_lyapunov(&acl, &Matrix::identity(2, 2)).unwrap();
        let expected = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.25]));
        assert!((x - expected).norm() < 1e-14);

        assert!(matches!(
            solve_lyapunov(&s(1.0), &s(1.0)),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn lyapunov_routes_agree() {
        let acl = Matrix::from_row_slice(
            3,
            3,
            &[-2.0, 1.0, 0.5, -0.3, -1.0, 2.0, 0.0, -1.5, -0.7],
        );
        let w = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.0, 0.1, 0.0, 3.0]);
        let k = lyapunov_kronecker(&acl, &w).unwrap();
        let bs = lyapunov_bartels_stewart(&acl, &w).unwrap();
        assert!((&k - &bs).norm() < 1e-12 * (1.0 + k.norm()));
        assert!(lyapunov_residual(&acl, &w, &bs) < 1e-12);
    }

    #[test]
    fn gare_zero_solution_with_zero_cost() {
        let abar = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let bbar = Matrix::identity(2, 2);
        let k = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (res, norm) = gare_residual(
            &abar,
            &bbar,
            &k,
            &s(0.0),
            &Matrix::identity(2, 2),
            &Matrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(res.shape(), (1, 1));
        assert_eq!(norm, 0.0);

        let (_, norm) = constructed_are_residual(
            &abar,
            &bbar,
            &k,
            &s(0.0),
            &Matrix::identity(2, 2),
            &Matrix::zeros(2, 2),
            1e-8,
        )
        .unwrap();
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn constructed_are_rejects_asymmetric() {
        let abar = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let k = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let x = Matrix::from_row_slice(2, 2, &[0.4, 0.4, 0.2, 0.2]);
        assert!(matches!(
            constructed_are_residual(
                &abar,
                &Matrix::identity(2, 2),
                &k,
                &s(2.0),
                &Matrix::identity(2, 2),
                &x,
                1e-8
            ),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
