//! The governing energy and its regularized approximations.
//!
//! `energy(spec, u, nu, eps)` evaluates
//!
//! ```text
//! (kappa/2) int |grad u|^2
//!   + int alpha(u) gamma_eps(B(u) grad u)
//!   + int G(x, u)
//!   + nu int Y_p(grad u)
//! ```
//!
//! with `eps = 0` selecting the exact anisotropy and `nu = 0` dropping the
//! regularizer, so `energy(spec, u, 0, 0)` is the limit energy. Gradients are
//! the same cell-based discrete gradients the time stepper uses, which is
//! what lets the per-step dissipation inequality hold without discretization
//! mismatch.

use thiserror::Error;

use crate::grid::{ops, VectorField};
use crate::model::{upsilon_eval, ModelError, ModelSpec};
use crate::par;
use crate::tensor::{SMat, SVec};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("parameter {name} = {value} outside {range}")]
    BadParameter { name: &'static str, value: f64, range: &'static str },
}

/// Per-term decomposition of the energy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub anisotropy: f64,
    pub potential: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub const CSV_FIELDS: &'static str = "dirichlet,anisotropy,potential,regularizer,total";

    pub fn csv_cells(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.dirichlet, self.anisotropy, self.potential, self.regularizer, self.total
        )
    }

    /// Full row `step,time,<terms>`.
    pub fn csv_row(&self, step: usize, time: f64) -> String {
        format!("{step},{time},{}", self.csv_cells())
    }
}

/// Evaluate the (regularized) energy of a state.
pub fn energy(
    spec: &ModelSpec,
    u: &VectorField,
    nu: f64,
    eps: f64,
) -> Result<EnergyBreakdown, EnergyError> {
    spec.check_grid(u.grid(), u.components())?;
    if !(nu >= 0.0) {
        return Err(EnergyError::BadParameter { name: "nu", value: nu, range: "[0, inf)" });
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(EnergyError::BadParameter { name: "eps", value: eps, range: "[0, 1)" });
    }

    let grid = u.grid().clone();
    let m = u.components();
    let n = grid.dim();
    let grad = ops::gradient(u);
    let cells = ops::cell_average(u);
    let wc = grid.cell_weight();

    let dirichlet = 0.5
        * spec.kappa
        * ops::inner_grad(&grad, &grad).expect("gradient consistent with itself");

    let gvals = grad.values();
    let anisotropy = if spec.weight.sup() == 0.0 {
        0.0
    } else {
        wc * par::chunked_sum(grid.num_cells(), |range| {
            let mut acc = 0.0;
            for cell in range {
                let vc = SVec::from_slice(&cells[cell * m..(cell + 1) * m]);
                let a = spec.weight.eval(&vc);
                if a == 0.0 {
                    continue;
                }
                let w = SMat::from_rows(m, n, &gvals[cell * m * n..(cell + 1) * m * n]);
                let bw = spec.coupling.b0(&vc).matmul(&w).matmul(&spec.coupling.b1(&vc));
                let g = if eps == 0.0 {
                    spec.anisotropy.exact(&bw)
                } else {
                    spec.anisotropy.smoothed(&bw, eps)
                };
                acc += a * g;
            }
            acc
        })
    };

    let regularizer = if nu == 0.0 {
        0.0
    } else {
        nu * wc
            * par::chunked_sum(grid.num_cells(), |range| {
                let mut acc = 0.0;
                for cell in range {
                    let w = SMat::from_rows(m, n, &gvals[cell * m * n..(cell + 1) * m * n]);
                    acc += upsilon_eval(spec.p, &w);
                }
                acc
            })
    };

    let uvals = u.values();
    let potential = par::chunked_sum(grid.num_nodes(), |range| {
        let mut acc = 0.0;
        for node in range {
            let v = SVec::from_slice(&uvals[node * m..(node + 1) * m]);
            acc += grid.node_weight(node) * spec.potential.eval(node, &grid.node_pos(node), &v);
        }
        acc
    });

    let total = dirichlet + anisotropy + potential + regularizer;
    Ok(EnergyBreakdown { dirichlet, anisotropy, potential, regularizer, total })
}

/// Certified bound on `|E_{nu,eps}(u) - E_{nu,0}(u)|`: the declared weight sup
/// times the domain measure times the smoothing gap.
pub fn energy_gap_bound(spec: &ModelSpec, grid: &crate::grid::Grid, eps: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    spec.weight.sup() * grid.measure() * spec.anisotropy.gap_bound(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::builtin::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn norm_flow_spec(m: usize, dim: usize, kappa: f64) -> ModelSpec {
        // alpha = 1, B = I, gamma = Frobenius norm, G = 0.
        ModelSpec::new(
            m,
            dim,
            kappa,
            4.0,
            Arc::new(IdentityMobility::new(m)),
            Arc::new(ConstWeight::new(1.0)),
            Arc::new(IdentityCoupling::new(m, dim)),
            Arc::new(ZeroPotential),
            Arc::new(FrobeniusFamily::new(1.0)),
        )
        .unwrap()
    }

    #[test]
    fn constant_state_has_zero_energy() {
        let spec = norm_flow_spec(2, 2, 1.0);
        let grid = Grid::rect(9, 9, 1.0, 1.0).unwrap();
        let u = VectorField::constant(&grid, &SVec::from_slice(&[0.3, -1.2]));
        let e = energy(&spec, &u, 0.0, 0.0).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn total_variation_of_linear_ramp_is_domain_measure() {
        // kappa only appears in the Dirichlet term; pick the pure-norm model
        // and evaluate the anisotropy term of u(x) = x on a 1D grid: the
        // integrand is |grad u| = 1, so the term equals |domain| = 2.
        let spec = norm_flow_spec(1, 1, 1.0);
        let grid = Grid::line(33, 2.0).unwrap();
        let u = VectorField::from_fn(&grid, 1, |p| SVec::from_slice(&[p[0]]));
        let e = energy(&spec, &u, 0.0, 0.0).unwrap();
        approx::assert_relative_eq!(e.anisotropy, 2.0, max_relative = 1e-13);
        // Dirichlet term: (1/2) int 1 = 1.
        approx::assert_relative_eq!(e.dirichlet, 1.0, max_relative = 1e-13);
        approx::assert_relative_eq!(e.total, e.dirichlet + e.anisotropy, max_relative = 1e-12);
    }

    #[test]
    fn smoothing_gap_respects_certified_bound() {
        let spec = norm_flow_spec(2, 2, 0.7);
        let grid = Grid::rect(8, 8, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let u = VectorField::from_fn(&grid, 2, |p| {
                SVec::from_slice(&[
                    rng.gen_range(-1.0..1.0) + p[0],
                    rng.gen_range(-1.0..1.0) * p[1],
                ])
            });
            for &eps in &[0.1, 0.01] {
                let e0 = energy(&spec, &u, 0.0, 0.0).unwrap().total;
                let ee = energy(&spec, &u, 0.0, eps).unwrap().total;
                let bound = energy_gap_bound(&spec, &grid, eps);
                assert!((ee - e0).abs() <= bound + 1e-12, "gap {} > bound {bound}", ee - e0);
            }
        }
    }

    #[test]
    fn gap_bound_values() {
        let spec = norm_flow_spec(2, 2, 1.0);
        let grid = Grid::rect(5, 5, 1.0, 1.0).unwrap();
        assert_eq!(energy_gap_bound(&spec, &grid, 0.0), 0.0);
        // |alpha|_sup = 1, |domain| = 1, g(eps) = eps for the norm family.
        approx::assert_relative_eq!(energy_gap_bound(&spec, &grid, 0.1), 0.1);
    }

    #[test]
    fn regularizer_is_monotone_in_nu() {
        let spec = norm_flow_spec(1, 2, 1.0);
        let grid = Grid::rect(7, 7, 1.0, 1.0).unwrap();
        let u = VectorField::from_fn(&grid, 1, |p| SVec::from_slice(&[(p[0] * 3.0).sin() * p[1]]));
        let e1 = energy(&spec, &u, 1e-3, 0.1).unwrap();
        let e2 = energy(&spec, &u, 2e-3, 0.1).unwrap();
        assert!(e2.total >= e1.total);
        assert!(e1.regularizer > 0.0);
    }

    #[test]
    fn breakdown_terms_sum_to_total() {
        let grid = Grid::rect(6, 6, 1.0, 1.0).unwrap();
        let spec = ModelSpec::new(
            2,
            2,
            0.5,
            4.0,
            Arc::new(IdentityMobility::new(2)),
            Arc::new(SaturatingWeight::new(2, 0, 0.2, 1.0)),
            Arc::new(RotationCoupling::new(2, 1)),
            Arc::new(HuberFidelity::tether(2, 1.0, 0.5, vec![0], vec![0.5])),
            Arc::new(HuberFamily::uniform(2, 2, 1.0)),
        )
        .unwrap();
        let u = VectorField::from_fn(&grid, 2, |p| {
            SVec::from_slice(&[(2.0 * p[0]).cos(), p[0] - p[1]])
        });
        let e = energy(&spec, &u, 1e-2, 0.05).unwrap();
        for term in [e.dirichlet, e.anisotropy, e.potential, e.regularizer] {
            assert!(term >= 0.0);
        }
        approx::assert_relative_eq!(
            e.total,
            e.dirichlet + e.anisotropy + e.potential + e.regularizer,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = norm_flow_spec(1, 1, 1.0);
        let grid = Grid::line(4, 1.0).unwrap();
        let u = VectorField::zeros(&grid, 1);
        assert!(energy(&spec, &u, -1.0, 0.0).is_err());
        assert!(energy(&spec, &u, 0.0, 1.0).is_err());
    }
}
