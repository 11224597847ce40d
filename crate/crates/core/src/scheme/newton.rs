//! Newton iteration with backtracking line search and a frozen-coefficient
//! (Picard) fallback, on top of a matrix-free preconditioned BiCGStab.

use crate::grid::{ops, VectorField};

use super::residual::{Linearization, StepContext};

pub(crate) struct NewtonOutcome {
    pub v: VectorField,
    pub newton_iters: u32,
    pub picard_iters: u32,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum NewtonFailure {
    NonFinite,
    Stalled { residual: f64 },
    MaxIterations { residual: f64 },
}

impl std::fmt::Display for NewtonFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NewtonFailure::NonFinite => write!(f, "non-finite residual"),
            NewtonFailure::Stalled { residual } => {
                write!(f, "line search stalled at residual {residual:.3e}")
            }
            NewtonFailure::MaxIterations { residual } => {
                write!(f, "iteration budget exhausted at residual {residual:.3e}")
            }
        }
    }
}

const KRYLOV_MAX_ITERS: usize = 800;
const KRYLOV_REL_TOL: f64 = 1e-8;
const LINE_SEARCH_STEPS: u32 = 30;
const ARMIJO: f64 = 1e-4;

/// Solve the per-step nonlinear system to the given residual tolerance.
pub(crate) fn solve(
    ctx: &StepContext,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome, NewtonFailure> {
    let mut v = ctx.u_prev.clone();
    let mut r = ctx.residual(&v);
    let mut rn = ops::norm_h(&r);
    let mut newton_iters = 0u32;
    let mut picard_iters = 0u32;

    for _ in 0..max_iter {
        if !rn.is_finite() {
            return Err(NewtonFailure::NonFinite);
        }
        if rn <= tol {
            return Ok(NewtonOutcome { v, newton_iters, picard_iters, residual_norm: rn });
        }

        let lin = ctx.linearize(&v);
        let diag = ctx.jacobi_diagonal(&lin);
        let mut rhs = r.clone();
        rhs.scale(-1.0);

        let mut accepted = try_direction(ctx, &lin, &diag, &v, &rhs, rn, tol, false);
        if accepted.is_none() {
            // Frozen-coefficient fallback: lag the alpha/B arguments one
            // inner iteration, keeping the SPD principal part.
            accepted = try_direction(ctx, &lin, &diag, &v, &rhs, rn, tol, true);
            if accepted.is_some() {
                picard_iters += 1;
            }
        }
        match accepted {
            Some((v_new, r_new, rn_new)) => {
                v = v_new;
                r = r_new;
                rn = rn_new;
                newton_iters += 1;
            }
            None => return Err(NewtonFailure::Stalled { residual: rn }),
        }
    }
    if rn <= tol {
        Ok(NewtonOutcome { v, newton_iters, picard_iters, residual_norm: rn })
    } else {
        Err(NewtonFailure::MaxIterations { residual: rn })
    }
}

#[allow(clippy::too_many_arguments)]
fn try_direction(
    ctx: &StepContext,
    lin: &Linearization,
    diag: &VectorField,
    v: &VectorField,
    rhs: &VectorField,
    rn: f64,
    tol: f64,
    frozen: bool,
) -> Option<(VectorField, VectorField, f64)> {
    let dir = bicgstab(
        |q| ctx.jacobian_apply(lin, q, frozen),
        rhs,
        diag,
        (KRYLOV_REL_TOL * rn).max(0.01 * tol),
        KRYLOV_MAX_ITERS,
    )?;
    line_search(ctx, v, &dir, rn, tol)
}

fn line_search(
    ctx: &StepContext,
    v: &VectorField,
    dir: &VectorField,
    rn: f64,
    tol: f64,
) -> Option<(VectorField, VectorField, f64)> {
    let mut step = 1.0;
    for _ in 0..LINE_SEARCH_STEPS {
        let v_trial = v.add_scaled(step, dir);
        if v_trial.is_finite() {
            let r_trial = ctx.residual(&v_trial);
            let rn_trial = ops::norm_h(&r_trial);
            if rn_trial.is_finite() && (rn_trial <= (1.0 - ARMIJO * step) * rn || rn_trial <= tol) {
                return Some((v_trial, r_trial, rn_trial));
            }
        }
        step *= 0.5;
    }
    None
}

/// Preconditioned BiCGStab with the weighted nodal inner product. Returns the
/// best iterate on breakdown, or `None` when no progress at all was made.
fn bicgstab<F>(
    apply: F,
    b: &VectorField,
    diag: &VectorField,
    tol_abs: f64,
    max_iters: usize,
) -> Option<VectorField>
where
    F: Fn(&VectorField) -> VectorField,
{
    let dot = |a: &VectorField, c: &VectorField| ops::inner_h(a, c).expect("matching fields");
    let precond = |r: &VectorField| {
        let mut z = r.clone();
        for (zi, di) in z.values_mut().iter_mut().zip(diag.values()) {
            *zi /= di;
        }
        z
    };

    let bn = ops::norm_h(b);
    if bn == 0.0 {
        return Some(VectorField::zeros(b.grid(), b.components()));
    }
    let tol = tol_abs.min(bn);

    let mut x = VectorField::zeros(b.grid(), b.components());
    let mut r = b.clone();
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut p = VectorField::zeros(b.grid(), b.components());
    let mut av = VectorField::zeros(b.grid(), b.components());
    let mut made_progress = false;

    for iter in 0..max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        if iter == 0 {
            p = r.clone();
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            // p = r + beta (p - omega v)
            p.axpy(-omega, &av);
            p.scale(beta);
            p.axpy(1.0, &r);
        }
        rho = rho_new;
        let y = precond(&p);
        av = apply(&y);
        let denom = dot(&r_hat, &av);
        if denom.abs() < 1e-300 {
            break;
        }
        alpha = rho / denom;
        let mut s = r.clone();
        s.axpy(-alpha, &av);
        if ops::norm_h(&s) <= tol {
            x.axpy(alpha, &y);
            return Some(x);
        }
        let z = precond(&s);
        let t = apply(&z);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            break;
        }
        omega = dot(&t, &s) / tt;
        x.axpy(alpha, &y);
        x.axpy(omega, &z);
        made_progress = true;
        r = s;
        r.axpy(-omega, &t);
        if ops::norm_h(&r) <= tol {
            return Some(x);
        }
        if omega.abs() < 1e-300 {
            break;
        }
    }
    // Hand back what we have; the caller's line search decides whether the
    // inexact direction is usable.
    if made_progress && x.is_finite() {
        Some(x)
    } else {
        None
    }
}
