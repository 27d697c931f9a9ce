//! Solution of the bordered saddle-point system.
//!
//! The default path factorizes one velocity component block by sparse
//! Cholesky (both components share it) and runs conjugate gradients on the
//! pressure Schur complement `B A^{-1} B^T`, restricted to mean-free
//! pressures. With orthonormal pressure bases the Schur complement is
//! spectrally equivalent to the identity, so iteration counts stay bounded
//! under refinement. A sparse LU of the full bordered matrix is the fallback.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::{Col, Par, Side};
use log::{debug, warn};
use nalgebra::DVector;

use crate::assembly::SaddleSystem;
use crate::error::{Error, Result};
use crate::sparse::{dot, norm, CsrMatrix};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Condition numbers above this trigger a warning.
pub const ILL_CONDITIONED: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Schur-complement CG, falling back to bordered LU if the velocity block is not positive definite.
    Auto,
    SchurCg,
    BorderedLu,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative residual bound on the full bordered system.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Estimate the 1-norm condition number of the bordered matrix (costly).
    pub condition_estimate: bool,
    /// Turn a failed velocity-block Cholesky into [`Error::PenaltyTooSmall`].
    pub check_coercivity: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 5000,
            condition_estimate: false,
            check_coercivity: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolutionFields {
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub multiplier: f64,
    /// `||K x - b|| / max(1, ||b||)` for the full bordered system.
    pub residual_norm: f64,
    pub iterations: usize,
    pub condition: Option<f64>,
}

pub fn solve(system: &SaddleSystem, options: &SolverOptions) -> Result<SolutionFields> {
    faer::set_global_parallelism(Par::Seq);
    let mut fields = match options.kind {
        SolverKind::BorderedLu => solve_bordered(system)?,
        SolverKind::SchurCg => solve_schur(system, options, &factor_velocity(system, options)?)?,
        SolverKind::Auto => match factor_velocity(system, options) {
            Ok(llt) => solve_schur(system, options, &llt)?,
            Err(Error::PenaltyTooSmall) if options.check_coercivity => {
                return Err(Error::PenaltyTooSmall)
            }
            Err(e) => {
                warn!("velocity block factorization failed ({e}); using bordered LU");
                solve_bordered(system)?
            }
        },
    };
    if options.condition_estimate {
        let cond = condition_estimate(&system.bordered_matrix())?;
        if cond > ILL_CONDITIONED {
            warn!("bordered matrix is ill-conditioned: estimated condition number {cond:e}");
        }
        fields.condition = Some(cond);
    }
    if !(fields.residual_norm <= options.tolerance) {
        return Err(Error::ResidualTooLarge {
            residual: fields.residual_norm,
            tolerance: options.tolerance,
        });
    }
    Ok(fields)
}

fn factor_velocity(system: &SaddleSystem, options: &SolverOptions) -> Result<Llt<usize, f64>> {
    let a = system.a_scalar.to_faer()?;
    a.sp_cholesky(Side::Lower).map_err(|e| {
        if options.check_coercivity {
            Error::PenaltyTooSmall
        } else {
            Error::SingularSystem {
                reason: format!("velocity block Cholesky failed: {e:?}"),
            }
        }
    })
}

/// Applies `A^{-1}` to a full velocity vector.
fn velocity_solve(system: &SaddleSystem, llt: &Llt<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; system.n_u()];
    for c in 0..2 {
        let comp = system.gather_component(rhs, c);
        let x = llt.solve(Col::<f64>::from_fn(comp.len(), |i| comp[i]));
        let x: Vec<f64> = (0..comp.len()).map(|i| x[i]).collect();
        system.scatter_component(&x, c, &mut out);
    }
    out
}

/// Full bordered residual `b - K x` for `x = (u, p, lambda)`.
pub fn residual(system: &SaddleSystem, u: &[f64], p: &[f64], lambda: f64) -> Vec<f64> {
    let au = system.apply_a(u);
    let btp = system.b.mul_transpose_vec(p);
    let bu = system.b.mul_vec(u);
    let mut r = Vec::with_capacity(system.size());
    r.extend((0..system.n_u()).map(|i| system.rhs_u[i] - au[i] - btp[i]));
    r.extend((0..system.n_p()).map(|i| -bu[i] - system.m[i] * lambda));
    r.push(-dot(system.m.as_slice(), p));
    r
}

fn relative_residual(system: &SaddleSystem, u: &[f64], p: &[f64], lambda: f64) -> f64 {
    norm(&residual(system, u, p, lambda)) / norm(system.rhs_u.as_slice()).max(1.0)
}

fn solve_schur(
    system: &SaddleSystem,
    options: &SolverOptions,
    llt: &Llt<usize, f64>,
) -> Result<SolutionFields> {
    let m = system.m.as_slice();
    let mm = dot(m, m);
    let project = |v: &mut [f64]| {
        if mm > 0.0 {
            let s = dot(m, v) / mm;
            v.iter_mut().zip(m).for_each(|(x, mi)| *x -= s * mi);
        }
    };
    let schur = |p: &[f64]| -> Vec<f64> {
        let w = velocity_solve(system, llt, &system.b.mul_transpose_vec(p));
        system.b.mul_vec(&w)
    };

    let a_inv_f = velocity_solve(system, llt, system.rhs_u.as_slice());
    let g = system.b.mul_vec(&a_inv_f);
    let scale = norm(system.rhs_u.as_slice()).max(1.0);
    let target = 0.25 * options.tolerance * scale;

    let n_p = system.n_p();
    let mut p = vec![0.0; n_p];
    let mut r = g.clone();
    project(&mut r);
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while rr.sqrt() > target {
        if iterations >= options.max_iterations {
            return Err(Error::NonConvergence {
                what: "Schur complement CG",
                iterations,
            });
        }
        let mut sd = schur(&d);
        project(&mut sd);
        let dsd = dot(&d, &sd);
        if !(dsd > 0.0) {
            return Err(Error::SingularSystem {
                reason: "pressure Schur complement is not positive definite".into(),
            });
        }
        let alpha = rr / dsd;
        p.iter_mut().zip(&d).for_each(|(x, di)| *x += alpha * di);
        r.iter_mut().zip(&sd).for_each(|(x, si)| *x -= alpha * si);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        d.iter_mut().zip(&r).for_each(|(x, ri)| *x = ri + beta * *x);
        rr = rr_new;
        iterations += 1;
        // recompute the true residual now and then to avoid drift
        if iterations % 50 == 0 {
            let mut t = schur(&p);
            t.iter_mut().zip(&g).for_each(|(x, gi)| *x = gi - *x);
            project(&mut t);
            r = t;
            rr = dot(&r, &r);
        }
    }
    project(&mut p);
    debug!("Schur CG converged in {iterations} iterations");

    let btp = system.b.mul_transpose_vec(&p);
    let rhs: Vec<f64> = (0..system.n_u())
        .map(|i| system.rhs_u[i] - btp[i])
        .collect();
    let u = velocity_solve(system, llt, &rhs);
    // S p - g = -m lambda
    let bu = system.b.mul_vec(&u);
    let lambda = if mm > 0.0 { -dot(m, &bu) / mm } else { 0.0 };
    let residual_norm = relative_residual(system, &u, &p, lambda);
    Ok(SolutionFields {
        u: DVector::from_vec(u),
        p: DVector::from_vec(p),
        multiplier: lambda,
        residual_norm,
        iterations,
        condition: None,
    })
}

fn lu_factor(k: &CsrMatrix) -> Result<Lu<usize, f64>> {
    k.to_faer()?.sp_lu().map_err(|e| Error::SingularSystem {
        reason: format!("sparse LU failed: {e:?}"),
    })
}

fn lu_solve(lu: &Lu<usize, f64>, b: &[f64]) -> Vec<f64> {
    let x = lu.solve(Col::<f64>::from_fn(b.len(), |i| b[i]));
    (0..b.len()).map(|i| x[i]).collect()
}

fn solve_bordered(system: &SaddleSystem) -> Result<SolutionFields> {
    let k = system.bordered_matrix();
    let lu = lu_factor(&k)?;
    let x = lu_solve(&lu, &system.rhs());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            reason: "non-finite solution from sparse LU".into(),
        });
    }
    let (n_u, n_p) = (system.n_u(), system.n_p());
    let (u, p, lambda) = (&x[..n_u], &x[n_u..n_u + n_p], x[n_u + n_p]);
    let residual_norm = relative_residual(system, u, p, lambda);
    Ok(SolutionFields {
        u: DVector::from_column_slice(u),
        p: DVector::from_column_slice(p),
        multiplier: lambda,
        residual_norm,
        iterations: 1,
        condition: None,
    })
}

/// Hager–Higham estimate of the 1-norm condition number (symmetric matrices).
pub fn condition_estimate(k: &CsrMatrix) -> Result<f64> {
    let n = k.nrows;
    let norm1 = (0..n)
        .map(|i| k.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lu = lu_factor(k)?;
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = lu_solve(&lu, &x);
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi: Vec<f64> = y
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        // symmetric: the transposed solve is the same solve
        let z = lu_solve(&lu, &xi);
        let (j, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if zmax <= dot(&z, &x) {
            break;
        }
        x = vec![0.0; n];
        x[j] = 1.0;
    }
    Ok(norm1 * estimate)
}
