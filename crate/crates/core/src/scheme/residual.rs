//! Assembly of the per-step residual and its Newton linearization.
//!
//! The residual is the Riesz representative (in the weighted nodal inner
//! product) of the semi-implicit weak form: divergence-form terms are
//! evaluated at the trial state `v`, the lower-order anisotropy terms at the
//! previous state. Divergences are assembled through the exact adjoint of the
//! discrete gradient, so pairing the residual with any test field reproduces
//! the discrete weak form identically.
//!
//! The Newton linearization differentiates the implicit terms only; the
//! `frozen` variant additionally freezes the state arguments of `alpha` and
//! `B`, leaving a symmetric positive definite operator used as the fallback
//! (Picard) direction.

use std::sync::Arc;

use crate::grid::{ops, Grid, MatrixField, VectorField};
use crate::model::{upsilon_grad, upsilon_hess_apply, upsilon_hess_scale, ModelSpec};
use crate::par;
use crate::tensor::{SMat, SVec};

use super::StepParams;

/// Per-step immutable data: previous state, its gradient/averages, the lagged
/// lower-order terms, and the frozen mobility.
pub(crate) struct StepContext<'a> {
    pub spec: &'a ModelSpec,
    pub u_prev: &'a VectorField,
    pub tau: f64,
    pub nu: f64,
    pub eps: f64,
    pub mu: f64,
    grid: Arc<Grid>,
    m: usize,
    grad_prev: MatrixField,
    /// `A(u_prev)` per node, row-major `m x m` blocks.
    mobility_prev: Vec<f64>,
    /// Scattered lagged terms, already a nodal Riesz representative.
    explicit: VectorField,
    use_gamma: bool,
}

impl<'a> StepContext<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        u_prev: &'a VectorField,
        params: &StepParams,
        tau: f64,
    ) -> Self {
        let grid = u_prev.grid().clone();
        let m = u_prev.components();
        let n = grid.dim();
        let grad_prev = ops::gradient(u_prev);
        let use_gamma = spec.weight.sup() > 0.0;

        let uvals = u_prev.values();
        let mut mobility_prev = vec![0.0; m * m * grid.num_nodes()];
        par::chunked_fill(&mut mobility_prev, m * m, |n0, chunk| {
            for (local, node) in (n0..n0 + chunk.len() / (m * m)).enumerate() {
                let v = SVec::from_slice(&uvals[node * m..(node + 1) * m]);
                let a = spec.mobility.eval(&v);
                chunk[local * m * m..(local + 1) * m * m].copy_from_slice(a.as_slice());
            }
        });

        let explicit = if use_gamma {
            let cells_prev = ops::cell_average(u_prev);
            let gvals = grad_prev.values();
            let mut lagged = vec![0.0; m * grid.num_cells()];
            par::chunked_fill(&mut lagged, m, |c0, chunk| {
                for (local, cell) in (c0..c0 + chunk.len() / m).enumerate() {
                    let vc = SVec::from_slice(&cells_prev[cell * m..(cell + 1) * m]);
                    let gp = SMat::from_rows(m, n, &gvals[cell * m * n..(cell + 1) * m * n]);
                    let b0 = spec.coupling.b0(&vc);
                    let b1 = spec.coupling.b1(&vc);
                    let w = b0.matmul(&gp).matmul(&b1);
                    let gamma_val = spec.anisotropy.smoothed(&w, params.eps);
                    let gamma_grad = spec.anisotropy.smoothed_grad(&w, params.eps);
                    let alpha = spec.weight.eval(&vc);
                    let dalpha = spec.weight.grad(&vc);
                    let mut s = dalpha.scaled(gamma_val);
                    if alpha != 0.0 {
                        for k in 0..m {
                            let comp = spec
                                .coupling
                                .db0(&vc, k)
                                .matmul(&gp)
                                .matmul(&b1)
                                .add(&b0.matmul(&gp).matmul(&spec.coupling.db1(&vc, k)));
                            s[k] += alpha * gamma_grad.ddot(&comp);
                        }
                    }
                    chunk[local * m..(local + 1) * m].copy_from_slice(s.as_slice());
                }
            });
            ops::scatter_cells(&grid, m, &lagged)
        } else {
            VectorField::zeros(&grid, m)
        };

        Self {
            spec,
            u_prev,
            tau,
            nu: params.nu,
            eps: params.eps,
            mu: params.mu,
            grid,
            m,
            grad_prev,
            mobility_prev,
            explicit,
            use_gamma,
        }
    }

    /// Residual at the trial state `v`.
    pub fn residual(&self, v: &VectorField) -> VectorField {
        let m = self.m;
        let n = self.grid.dim();
        let spec = self.spec;

        // Nodal part: mobility difference quotient, potential gradient,
        // lagged terms.
        let mut r = VectorField::zeros(&self.grid, m);
        let vvals = v.values();
        let pvals = self.u_prev.values();
        let evals = self.explicit.values();
        let inv_tau = 1.0 / self.tau;
        {
            let rvals = r.values_mut();
            let mob = &self.mobility_prev;
            let grid = &self.grid;
            par::chunked_fill(rvals, m, |n0, chunk| {
                for (local, node) in (n0..n0 + chunk.len() / m).enumerate() {
                    let vn = SVec::from_slice(&vvals[node * m..(node + 1) * m]);
                    let gp = spec.potential.grad(node, &grid.node_pos(node), &vn);
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += mob[(node * m + i) * m + j]
                                * (vvals[node * m + j] - pvals[node * m + j]);
                        }
                        chunk[local * m + i] = inv_tau * acc + gp[i] + evals[node * m + i];
                    }
                }
            });
        }

        // Divergence-form part.
        let grad_v = ops::gradient(v);
        let cells_v = if self.use_gamma { ops::cell_average(v) } else { Vec::new() };
        let mut flux = MatrixField::zeros(&self.grid, m);
        {
            let gv = grad_v.values();
            let gpv = self.grad_prev.values();
            let (kappa, mu_tau, nu, p, eps) =
                (spec.kappa, self.mu * inv_tau, self.nu, spec.p, self.eps);
            let use_gamma = self.use_gamma;
            let cells_v = &cells_v;
            par::chunked_fill(flux.values_mut(), m * n, |c0, chunk| {
                for (local, cell) in (c0..c0 + chunk.len() / (m * n)).enumerate() {
                    let w = SMat::from_rows(m, n, &gv[cell * m * n..(cell + 1) * m * n]);
                    let wp = SMat::from_rows(m, n, &gpv[cell * m * n..(cell + 1) * m * n]);
                    let mut z = w.scaled(kappa).add(&w.sub(&wp).scaled(mu_tau));
                    if nu > 0.0 {
                        z = z.add(&upsilon_grad(p, &w).scaled(nu));
                    }
                    if use_gamma {
                        let vc = SVec::from_slice(&cells_v[cell * m..(cell + 1) * m]);
                        let alpha = spec.weight.eval(&vc);
                        if alpha != 0.0 {
                            let b0 = spec.coupling.b0(&vc);
                            let b1 = spec.coupling.b1(&vc);
                            let bw = b0.matmul(&w).matmul(&b1);
                            let g = spec.anisotropy.smoothed_grad(&bw, eps);
                            let bstar =
                                b0.transpose().matmul(&g).matmul(&b1.transpose());
                            z = z.add(&bstar.scaled(alpha));
                        }
                    }
                    chunk[local * m * n..(local + 1) * m * n].copy_from_slice(z.as_slice());
                }
            });
        }
        r.axpy(-1.0, &ops::divergence(&flux));
        r
    }

    /// Precompute what the Jacobian action needs at a fixed trial state.
    pub fn linearize(&self, v: &VectorField) -> Linearization {
        let m = self.m;
        let n = self.grid.dim();
        let spec = self.spec;
        let grad_v = ops::gradient(v);
        let cells_v = ops::cell_average(v);

        let vvals = v.values();
        let grid = &self.grid;
        let mut hess_pot = vec![0.0; m * m * grid.num_nodes()];
        par::chunked_fill(&mut hess_pot, m * m, |n0, chunk| {
            for (local, node) in (n0..n0 + chunk.len() / (m * m)).enumerate() {
                let vn = SVec::from_slice(&vvals[node * m..(node + 1) * m]);
                let h = spec.potential.hess(node, &grid.node_pos(node), &vn);
                chunk[local * m * m..(local + 1) * m * m].copy_from_slice(h.as_slice());
            }
        });

        let cell_coef = if self.use_gamma {
            let gv = grad_v.values();
            par::indexed_map(grid.num_cells(), |cell| {
                let vc = SVec::from_slice(&cells_v[cell * m..(cell + 1) * m]);
                let w = SMat::from_rows(m, n, &gv[cell * m * n..(cell + 1) * m * n]);
                let b0 = spec.coupling.b0(&vc);
                let b1 = spec.coupling.b1(&vc);
                let bw = b0.matmul(&w).matmul(&b1);
                CellCoef {
                    alpha: spec.weight.eval(&vc),
                    dalpha: spec.weight.grad(&vc),
                    vc,
                    b0,
                    b1,
                    grad: w,
                    bw,
                    g: spec.anisotropy.smoothed_grad(&bw, self.eps),
                }
            })
        } else {
            Vec::new()
        };

        Linearization { grad_v, hess_pot, cell_coef }
    }

    /// Directional derivative of the residual in direction `q`, using the
    /// precomputed linearization. With `frozen` the state arguments of
    /// `alpha` and `B` are not differentiated, yielding the symmetric
    /// positive definite fallback operator.
    pub fn jacobian_apply(&self, lin: &Linearization, q: &VectorField, frozen: bool) -> VectorField {
        let m = self.m;
        let n = self.grid.dim();
        let spec = self.spec;
        let inv_tau = 1.0 / self.tau;

        let mut r = VectorField::zeros(&self.grid, m);
        {
            let qvals = q.values();
            let mob = &self.mobility_prev;
            let hess = &lin.hess_pot;
            let rvals = r.values_mut();
            par::chunked_fill(rvals, m, |n0, chunk| {
                for (local, node) in (n0..n0 + chunk.len() / m).enumerate() {
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += (inv_tau * mob[(node * m + i) * m + j]
                                + hess[(node * m + i) * m + j])
                                * qvals[node * m + j];
                        }
                        chunk[local * m + i] = acc;
                    }
                }
            });
        }

        let grad_q = ops::gradient(q);
        let cells_q = if self.use_gamma && !frozen {
            ops::cell_average(q)
        } else {
            Vec::new()
        };
        let mut flux = MatrixField::zeros(&self.grid, m);
        {
            let gq = grad_q.values();
            let gv = lin.grad_v.values();
            let (kappa, mu_tau, nu, p, eps) =
                (spec.kappa, self.mu * inv_tau, self.nu, spec.p, self.eps);
            let use_gamma = self.use_gamma;
            let coefs = &lin.cell_coef;
            let cells_q = &cells_q;
            par::chunked_fill(flux.values_mut(), m * n, |c0, chunk| {
                for (local, cell) in (c0..c0 + chunk.len() / (m * n)).enumerate() {
                    let dq = SMat::from_rows(m, n, &gq[cell * m * n..(cell + 1) * m * n]);
                    let mut z = dq.scaled(kappa + mu_tau);
                    if nu > 0.0 {
                        let w = SMat::from_rows(m, n, &gv[cell * m * n..(cell + 1) * m * n]);
                        z = z.add(&upsilon_hess_apply(p, &w, &dq).scaled(nu));
                    }
                    if use_gamma {
                        let c = &coefs[cell];
                        if frozen {
                            if c.alpha != 0.0 {
                                let dw = c.b0.matmul(&dq).matmul(&c.b1);
                                let dg = spec.anisotropy.smoothed_hess_apply(&c.bw, &dw, eps);
                                let bstar =
                                    c.b0.transpose().matmul(&dg).matmul(&c.b1.transpose());
                                z = z.add(&bstar.scaled(c.alpha));
                            }
                        } else {
                            let qc = SVec::from_slice(&cells_q[cell * m..(cell + 1) * m]);
                            let da = c.dalpha.dot(&qc);
                            // dW = B0 dq B1 + sum_k q_k (dB0_k grad B1 + B0 grad dB1_k)
                            let mut dw = c.b0.matmul(&dq).matmul(&c.b1);
                            let mut db_star_g = SMat::zeros(m, n);
                            for k in 0..m {
                                if qc[k] == 0.0 {
                                    continue;
                                }
                                let db0 = spec.coupling.db0(&c.vc, k);
                                let db1 = spec.coupling.db1(&c.vc, k);
                                dw = dw.add(
                                    &db0.matmul(&c.grad)
                                        .matmul(&c.b1)
                                        .add(&c.b0.matmul(&c.grad).matmul(&db1))
                                        .scaled(qc[k]),
                                );
                                db_star_g = db_star_g.add(
                                    &db0.transpose()
                                        .matmul(&c.g)
                                        .matmul(&c.b1.transpose())
                                        .add(
                                            &c.b0
                                                .transpose()
                                                .matmul(&c.g)
                                                .matmul(&db1.transpose()),
                                        )
                                        .scaled(qc[k]),
                                );
                            }
                            let dg = spec.anisotropy.smoothed_hess_apply(&c.bw, &dw, eps);
                            let mut gamma_part =
                                c.b0.transpose().matmul(&dg).matmul(&c.b1.transpose());
                            gamma_part = gamma_part.scaled(c.alpha).add(&db_star_g.scaled(c.alpha));
                            let bstar_g =
                                c.b0.transpose().matmul(&c.g).matmul(&c.b1.transpose());
                            gamma_part = gamma_part.add(&bstar_g.scaled(da));
                            z = z.add(&gamma_part);
                        }
                    }
                    chunk[local * m * n..(local + 1) * m * n].copy_from_slice(z.as_slice());
                }
            });
        }
        r.axpy(-1.0, &ops::divergence(&flux));
        r
    }

    /// Diagonal estimate of the Jacobian for Jacobi preconditioning.
    pub fn jacobi_diagonal(&self, lin: &Linearization) -> VectorField {
        let m = self.m;
        let n = self.grid.dim();
        let spec = self.spec;
        let inv_tau = 1.0 / self.tau;
        let grid = &self.grid;

        // Per-cell scalar diffusion estimate.
        let gv = lin.grad_v.values();
        let coef: Vec<f64> = par::indexed_map(grid.num_cells(), |cell| {
            let mut c = spec.kappa + self.mu * inv_tau;
            if self.nu > 0.0 {
                let w = SMat::from_rows(m, n, &gv[cell * m * n..(cell + 1) * m * n]);
                c += self.nu * upsilon_hess_scale(spec.p, &w);
            }
            if self.use_gamma {
                let cc = &lin.cell_coef[cell];
                c += cc.alpha * spec.anisotropy.smoothed_hess_scale(&cc.bw, self.eps);
            }
            c
        });

        // |grad e_node|^2 restricted to one adjacent cell.
        let [hx, hy] = grid.spacing();
        let e2 = match grid.dim() {
            1 => 1.0 / (hx * hx),
            _ => 0.25 / (hx * hx) + 0.25 / (hy * hy),
        };
        let wc = grid.cell_weight();

        let mut diag = VectorField::zeros(grid, m);
        {
            let mob = &self.mobility_prev;
            let hess = &lin.hess_pot;
            let [nx, _] = grid.node_counts();
            let [cnx, cny] = grid.cell_counts();
            let dim = grid.dim();
            par::chunked_fill(diag.values_mut(), m, |n0, chunk| {
                for (local, node) in (n0..n0 + chunk.len() / m).enumerate() {
                    let mut lap = 0.0;
                    if dim == 1 {
                        if node > 0 {
                            lap += wc * coef[node - 1] * e2;
                        }
                        if node < cnx {
                            lap += wc * coef[node] * e2;
                        }
                    } else {
                        let (ix, iy) = (node % nx, node / nx);
                        for cx in [ix.wrapping_sub(1), ix] {
                            if cx >= cnx {
                                continue;
                            }
                            for cy in [iy.wrapping_sub(1), iy] {
                                if cy >= cny {
                                    continue;
                                }
                                lap += wc * coef[cy * cnx + cx] * e2;
                            }
                        }
                    }
                    lap /= grid.node_weight(node);
                    for i in 0..m {
                        let d = inv_tau * mob[(node * m + i) * m + i]
                            + hess[(node * m + i) * m + i]
                            + lap;
                        chunk[local * m + i] = d.max(1e-300);
                    }
                }
            });
        }
        diag
    }
}

/// State-dependent data reused across Jacobian applications at one iterate.
pub(crate) struct Linearization {
    grad_v: MatrixField,
    hess_pot: Vec<f64>,
    cell_coef: Vec<CellCoef>,
}

struct CellCoef {
    alpha: f64,
    dalpha: SVec,
    vc: SVec,
    b0: SMat,
    b1: SMat,
    /// Gradient of the trial state at this cell.
    grad: SMat,
    /// `B(v) grad v`.
    bw: SMat,
    /// Smoothed anisotropy gradient at `bw`.
    g: SMat,
}

/// Weighted-inner-product gradient of the regularized energy at `u`; all
/// coefficient arguments are evaluated at `u` itself. Pairing it with any
/// test field reproduces the directional derivative of
/// [`crate::energy::energy`].
pub fn energy_gradient(
    spec: &ModelSpec,
    u: &VectorField,
    nu: f64,
    eps: f64,
) -> Result<VectorField, crate::scheme::SchemeError> {
    spec.check_grid(u.grid(), u.components())?;
    if !(nu >= 0.0) || !(0.0..1.0).contains(&eps) || (spec.weight.sup() > 0.0 && eps == 0.0) {
        return Err(crate::scheme::SchemeError::BadParams(format!(
            "energy gradient needs nu >= 0 and eps in (0,1) when the anisotropy is active; \
             got nu = {nu}, eps = {eps}"
        )));
    }
    let params = StepParams {
        tau: 1.0,
        nu,
        eps,
        mu: 0.0,
        tol_residual: 1.0,
        max_newton: 1,
        max_halvings: 0,
    };
    let ctx = StepContext::new(spec, u, &params, 1.0);
    // The time terms vanish at v = u_prev, leaving exactly the energy
    // gradient with every argument at u.
    Ok(ctx.residual(u))
}
