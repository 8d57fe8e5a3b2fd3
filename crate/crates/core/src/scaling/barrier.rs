//! Logarithmic-barrier method for small smooth programs with a linear
//! objective, linear equalities and smooth inequality constraints `g(x) < 0`.
//!
//! Centering uses equality-constrained Newton steps. The delay constraints are
//! not jointly convex in (capability, higher rate), so the reduced Hessian can
//! be indefinite; a growing diagonal shift restores a descent direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One inequality `value < 0` with sparse first and second derivatives.
#[derive(Debug, Clone, Default)]
pub(crate) struct Constraint {
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
    pub hess: Vec<(usize, usize, f64)>,
}

impl Constraint {
    pub fn linear(value: f64, grad: Vec<(usize, f64)>) -> Self {
        Constraint {
            value,
            grad,
            hess: Vec::new(),
        }
    }
}

pub(crate) trait BarrierProgram {
    fn dim(&self) -> usize;
    fn cost(&self) -> &[f64];
    /// Rows `(coefficients, rhs)` of `A x = b`.
    fn equalities(&self) -> &[(Vec<(usize, f64)>, f64)];
    /// All inequality constraints at `x`, or `None` if `x` lies outside the
    /// domain where they are defined.
    fn constraints(&self, x: &[f64]) -> Option<Vec<Constraint>>;
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierSettings {
    /// Stop when `constraints / t` falls below this absolute gap.
    pub gap_tol: f64,
    pub t0: f64,
    pub growth: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub newton_tol: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        BarrierSettings {
            gap_tol: 1e-10,
            t0: 1.0,
            growth: 8.0,
            max_outer: 60,
            max_newton: 200,
            newton_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub x: Vec<f64>,
    pub newton_steps: usize,
}

fn strictly_feasible(cons: &[Constraint]) -> bool {
    cons.iter().all(|c| c.value < 0.0 && c.value.is_finite())
}

fn merit(program: &dyn BarrierProgram, t: f64, x: &[f64]) -> Option<f64> {
    let cons = program.constraints(x)?;
    if !strictly_feasible(&cons) {
        return None;
    }
    let lin: f64 = program.cost().iter().zip(x).map(|(c, v)| c * v).sum();
    Some(t * lin - cons.iter().map(|c| (-c.value).ln()).sum::<f64>())
}

/// Minimizes `cost · x` from a strictly feasible `x0`. The start is projected
/// onto the affine set of the equalities, and iterates are parametrized over
/// its null space so that the equalities hold to rounding throughout.
pub(crate) fn minimize(program: &dyn BarrierProgram, x0: Vec<f64>, settings: &BarrierSettings) -> Result<BarrierOutcome> {
    let n = program.dim();
    let (base, basis) = affine_parametrization(program.equalities(), n)?;
    let k = basis.ncols();
    let mut z = basis.transpose() * (DVector::from_vec(x0) - &base);
    let point = |z: &DVector<f64>| -> Vec<f64> { (&base + &basis * z).iter().copied().collect() };

    let mut x = point(&z);
    let initial = program
        .constraints(&x)
        .ok_or_else(|| Error::Numerical("barrier start outside the domain".into()))?;
    if !strictly_feasible(&initial) {
        return Err(Error::Numerical("barrier start is not strictly feasible".into()));
    }
    let m = initial.len().max(1) as f64;
    let mut t = settings.t0;
    let mut newton_steps = 0;

    for _ in 0..settings.max_outer {
        for _ in 0..settings.max_newton {
            let cons = program.constraints(&x).expect("iterate stays in the domain");
            let mut grad = DVector::from_iterator(n, program.cost().iter().map(|c| t * c));
            let mut hess = DMatrix::<f64>::zeros(n, n);
            for c in &cons {
                let inv = -1.0 / c.value;
                for &(i, gi) in &c.grad {
                    grad[i] += gi * inv;
                    for &(j, gj) in &c.grad {
                        hess[(i, j)] += gi * gj * inv * inv;
                    }
                }
                for &(i, j, h) in &c.hess {
                    hess[(i, j)] += h * inv;
                }
            }
            let g = basis.transpose() * &grad;
            let h = basis.transpose() * &hess * &basis;
            if k == 0 {
                break;
            }

            // A diagonal shift restores positive definiteness where the
            // constraint curvature makes the reduced Hessian indefinite.
            let scale = (0..k).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut shift = 0.0;
            let mut step = None;
            for _ in 0..60 {
                let mut shifted = h.clone();
                for i in 0..k {
                    shifted[(i, i)] += shift;
                }
                if let Some(chol) = shifted.cholesky() {
                    let dz = -chol.solve(&g);
                    if dz.iter().all(|v| v.is_finite()) {
                        step = Some(dz);
                        break;
                    }
                }
                shift = if shift == 0.0 { 1e-12 * scale } else { shift * 10.0 };
            }
            let dz = step.ok_or_else(|| Error::Numerical("no descent direction".into()))?;
            newton_steps += 1;
            let slope = g.dot(&dz);
            if -slope / 2.0 <= settings.newton_tol || slope >= 0.0 {
                break;
            }

            let f0 = merit(program, t, &x).expect("current iterate is feasible");
            let mut s = 1.0;
            let mut moved = false;
            while s > 1e-18 {
                let trial_z = &z + &dz * s;
                let trial = point(&trial_z);
                if let Some(f1) = merit(program, t, &trial) {
                    if f1 <= f0 + 0.25 * s * slope || (f1 - f0).abs() <= 1e-14 * f0.abs().max(1.0) {
                        z = trial_z;
                        x = trial;
                        moved = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if m / t < settings.gap_tol {
            return Ok(BarrierOutcome { x, newton_steps });
        }
        t *= settings.growth;
    }
    Err(Error::Numerical(format!(
        "barrier did not reach gap {} (reached {})",
        settings.gap_tol,
        m / t
    )))
}

/// Least-norm solution of `A x = b` and an orthonormal basis of the null
/// space of `A`.
fn affine_parametrization(eqs: &[(Vec<(usize, f64)>, f64)], n: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if eqs.is_empty() {
        return Ok((DVector::zeros(n), DMatrix::identity(n, n)));
    }
    let mut a = DMatrix::<f64>::zeros(eqs.len(), n);
    let mut b = DVector::<f64>::zeros(eqs.len());
    for (r, (row, rhs)) in eqs.iter().enumerate() {
        for &(i, v) in row {
            a[(r, i)] += v;
        }
        b[r] = *rhs;
    }
    let gram = a.transpose() * &a;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-12 * top).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| eig.eigenvectors[(r, null[c])]);
    let base = a
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?
        * b;
    Ok((base, basis))
}
