//! Closed-loop simulation and infinite-horizon quadratic cost.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matkit;
use crate::riccati;
use crate::rsm::{CompositeCost, CompositeSystem};
use crate::Matrix;

/// States beyond this magnitude stop the integration.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per sample.
    pub states: Matrix,
    /// Integration stopped early because the state blew past [`OVERFLOW_GUARD`].
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }

    /// CSV with header `t,x0,x1,...`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.states.ncols() {
            write!(out, ",x{i}").unwrap();
        }
        out.push('\n');
        for (row, t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}").unwrap();
            for x in self.states.row(row).iter() {
                write!(out, ",{x:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `∫ xᵀ W x dt` over the samples by composite Simpson (trapezoid on a
    /// trailing odd interval).
    pub fn quadratic_integral(&self, w: &Matrix) -> Result<f64> {
        if w.shape() != (self.states.ncols(), self.states.ncols()) {
            return Err(Error::DimensionMismatch("weight does not match state".into()));
        }
        let vals: Vec<f64> = self
            .states
            .row_iter()
            .map(|x| (x * w * x.transpose())[(0, 0)])
            .collect();
        if vals.len() < 2 {
            return Ok(0.0);
        }
        let h = self.times[1] - self.times[0];
        let intervals = vals.len() - 1;
        let even = intervals - intervals % 2;
        let mut acc = 0.0;
        for i in (0..even).step_by(2) {
            acc += h / 3.0 * (vals[i] + 4.0 * vals[i + 1] + vals[i + 2]);
        }
        if even < intervals {
            acc += h / 2.0 * (vals[even] + vals[even + 1]);
        }
        Ok(acc)
    }
}

/// Fixed-step classical RK4 for `ẋ = Acl x` on `[0, horizon]`.
///
/// The step is shrunk slightly so that the grid lands exactly on `horizon`.
pub fn simulate(acl: &Matrix, x0: &DVector<f64>, horizon: f64, step: f64) -> Result<Trajectory> {
    let n = matkit::ensure_square(acl)?;
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, expected {n}",
            x0.len()
        )));
    }
    if !(step > 0.0) || !(horizon >= step) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need step > 0 and horizon >= step (step {step}, horizon {horizon})"
        )));
    }
    let steps = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;

    let mut times = Vec::with_capacity(steps + 1);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    times.push(0.0);
    rows.push(x.clone());
    let mut diverged = false;
    for i in 1..=steps {
        let k1 = acl * &x;
        let k2 = acl * (&x + &k1 * (h / 2.0));
        let k3 = acl * (&x + &k2 * (h / 2.0));
        let k4 = acl * (&x + &k3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
            diverged = true;
            break;
        }
        times.push(i as f64 * h);
        rows.push(x.clone());
    }
    let mut states = Matrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        states.set_row(i, &r.transpose());
    }
    Ok(Trajectory {
        times,
        states,
        diverged,
    })
}

#[derive(Debug, Clone)]
pub struct CostResult {
    /// `x₀ᵀ W x₀`, or `f64::INFINITY` when the closed loop is unstable.
    pub value: f64,
    /// Solution of `AclᵀW + W·Acl + Q + FᵀRF = 0`; absent when unstable.
    pub gram: Option<Matrix>,
    pub stable: bool,
}

/// Infinite-horizon cost of `u = F x` from `x0`, evaluated exactly through a
/// Lyapunov equation.
pub fn closed_loop_cost(
    a: &Matrix,
    b: &Matrix,
    f: &Matrix,
    q: &Matrix,
    r: &Matrix,
    x0: &DVector<f64>,
) -> Result<CostResult> {
    let n = matkit::ensure_square(a)?;
    let m = b.ncols();
    if b.nrows() != n || f.shape() != (m, n) || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "closed_loop_cost: A {n}x{n}, B {}x{}, F {}x{}, Q {}x{}, R {}x{}",
            b.nrows(),
            b.ncols(),
            f.nrows(),
            f.ncols(),
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, expected {n}",
            x0.len()
        )));
    }
    let acl = a + b * f;
    if !matkit::is_hurwitz(&acl, 0.0)?.hurwitz {
        return Ok(CostResult {
            value: f64::INFINITY,
            gram: None,
            stable: false,
        });
    }
    let w = q + f.transpose() * r * f;
    let gram = riccati::solve_lyapunov(&acl, &w)?;
    let value = (x0.transpose() * &gram * x0)[(0, 0)];
    Ok(CostResult {
        value,
        gram: Some(gram),
        stable: true,
    })
}

#[derive(Debug, Clone)]
pub struct GapResult {
    pub j_composed: CostResult,
    pub j_direct: CostResult,
    /// `J_composed - J_direct`, solved directly from the cost-difference
    /// Lyapunov equation; infinite when only the composed loop is unstable
    /// and `None` when the direct one is.
    pub gap: Option<f64>,
}

/// Excess cost of the composed controller over the direct one on the
/// composite system.
pub fn optimality_gap(
    sys: &CompositeSystem,
    cost: &CompositeCost,
    f_composed: &Matrix,
    f_direct: &Matrix,
    x0: &DVector<f64>,
) -> Result<GapResult> {
    let j_composed = closed_loop_cost(&sys.acal, &sys.bcal, f_composed, &cost.qcal, &cost.rbar, x0)?;
    let j_direct = closed_loop_cost(&sys.acal, &sys.bcal, f_direct, &cost.qcal, &cost.rbar, x0)?;
    let gap = match (&j_composed.gram, &j_direct.gram) {
        (Some(_), Some(w2)) => Some(cost_difference(sys, cost, f_composed, f_direct, w2, x0)?),
        (None, Some(_)) => Some(f64::INFINITY),
        _ => None,
    };
    Ok(GapResult {
        j_composed,
        j_direct,
        gap,
    })
}

/// `x₀ᵀ D x₀` where `D = W₁ - W₂` solves `Acl₁ᵀD + D Acl₁ + E = 0` with
/// `E = ΔFᵀC + CᵀΔF + ΔFᵀRΔF`, `ΔF = F₁ - F₂`, `C = BᵀW₂ + RF₂`. Exact for
/// any two stabilizing gains; subtracting the two costs instead loses all
/// digits when they are large and close.
fn cost_difference(
    sys: &CompositeSystem,
    cost: &CompositeCost,
    f1: &Matrix,
    f2: &Matrix,
    w2: &Matrix,
    x0: &DVector<f64>,
) -> Result<f64> {
    let (b, r) = (&sys.bcal, &cost.rbar);
    let df = f1 - f2;
    let c = b.transpose() * w2 + r * f2;
    let e = matkit::symmetrize(&(df.transpose() * &c + c.transpose() * &df + df.transpose() * r * &df));
    let d = riccati::solve_lyapunov(&(&sys.acal + b * f1), &e)?;
    Ok((x0.transpose() * d * x0)[(0, 0)])
}
