//! The pluggable coefficient bundle: mobility `A`, scalar weight `alpha`,
//! gradient coupling `B`, potential `G`, convex anisotropy `gamma` with an
//! admissible smoothing family, and the p-growth regularizer.
//!
//! Every trait carries the declared constants its contract promises
//! (ellipticity, Lipschitz bounds, smoothing gap); [`validate`] samples those
//! promises and reports the worst observed constants instead of trusting the
//! declarations.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::Grid;
use crate::tensor::{SMat, SVec, MAX_COMPONENTS, MAX_DIM};

pub mod builtin;
pub mod fd;
mod validate;

pub use validate::{validate, validate_with_seed, AssumptionCheck, ValidationReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state dimension {0} outside supported range 1..={max}", max = MAX_COMPONENTS)]
    BadStateDim(usize),
    #[error("spatial dimension {0} must be 1 or 2")]
    BadSpatialDim(usize),
    #[error("kappa must be positive, got {0}")]
    NonPositiveKappa(f64),
    #[error("exponent p = {p} violates p > 2 and p >= {dim}")]
    BadExponent { p: f64, dim: usize },
    #[error("declared ellipticity constant must be positive, got {0}")]
    NonPositiveEllipticity(f64),
    #[error("smoothing parameter {0} outside (0, 1)")]
    EpsOutOfRange(f64),
    #[error("point lies outside the domain")]
    OutsideDomain,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("potential is bound to {bound} nodes but the grid has {grid}")]
    PotentialGridMismatch { bound: usize, grid: usize },
}

/// Mobility matrix `A(v)`, uniformly elliptic.
pub trait Mobility: Send + Sync {
    /// `A(v)` as an `M x M` matrix.
    fn eval(&self, v: &SVec) -> SMat;
    /// Declared ellipticity constant `C_A` with `w' A(v) w >= C_A |w|^2`.
    fn ellipticity(&self) -> f64;
}

/// Nonnegative scalar weight `alpha(v)` multiplying the anisotropy.
pub trait Weight: Send + Sync {
    fn eval(&self, v: &SVec) -> f64;
    fn grad(&self, v: &SVec) -> SVec;
    /// Declared sup of the weight.
    fn sup(&self) -> f64;
    /// Declared sup of the gradient norm.
    fn grad_sup(&self) -> f64;
}

/// Gradient coupling `B(v) W = B0(v) W B1(v)` with its differential.
pub trait Coupling: Send + Sync {
    /// `B0(v)`, `M x M`.
    fn b0(&self, v: &SVec) -> SMat;
    /// `B1(v)`, `N x N`.
    fn b1(&self, v: &SVec) -> SMat;
    /// `d B0 / d v_k`.
    fn db0(&self, v: &SVec, k: usize) -> SMat;
    /// `d B1 / d v_k`.
    fn db1(&self, v: &SVec, k: usize) -> SMat;
}

/// Potential `G(x, u)`, nonnegative with bounded gradient and Hessian.
///
/// Positions are passed as both the node index (for data-backed potentials)
/// and the coordinates.
pub trait Potential: Send + Sync {
    fn eval(&self, node: usize, x: &[f64; MAX_DIM], v: &SVec) -> f64;
    fn grad(&self, node: usize, x: &[f64; MAX_DIM], v: &SVec) -> SVec;
    fn hess(&self, node: usize, x: &[f64; MAX_DIM], v: &SVec) -> SMat;
    /// Declared joint Lipschitz constant of the value and the gradient.
    fn lipschitz(&self) -> f64;
    /// Node count of bound per-node data, if any.
    fn bound_nodes(&self) -> Option<usize> {
        None
    }
}

/// Convex anisotropy with an admissible smoothing family: smooth convex
/// `gamma_eps` within a certified uniform gap `g(eps)` of the exact `gamma`,
/// with gradients bounded by the Lipschitz constant of `gamma`.
pub trait Anisotropy: Send + Sync {
    /// Exact integrand `gamma(W) >= 0`.
    fn exact(&self, w: &SMat) -> f64;
    /// A total selection from the subdifferential of `gamma` at `W`.
    fn subgradient(&self, w: &SMat) -> SMat;
    /// Smoothed value `gamma_eps(W)` for `eps` in `(0, 1)`.
    fn smoothed(&self, w: &SMat, eps: f64) -> f64;
    /// Gradient of the smoothed integrand.
    fn smoothed_grad(&self, w: &SMat, eps: f64) -> SMat;
    /// Hessian of the smoothed integrand applied to a direction.
    fn smoothed_hess_apply(&self, w: &SMat, q: &SMat, eps: f64) -> SMat;
    /// Cheap upper estimate of the Hessian operator norm at `W`
    /// (used for preconditioning only).
    fn smoothed_hess_scale(&self, w: &SMat, eps: f64) -> f64;
    /// Certified uniform gap bound `g(eps)`, with `g(eps) -> 0`.
    fn gap_bound(&self, eps: f64) -> f64;
    /// Declared Lipschitz constant of `gamma`, also bounding the smoothed
    /// gradients.
    fn lipschitz(&self) -> f64;
    /// Declared linear-growth constant: `gamma(W) <= growth * (|W| + 1)`.
    fn growth(&self) -> f64;
}

/// Full coefficient bundle for one evolution problem.
#[derive(Clone)]
pub struct ModelSpec {
    pub m: usize,
    pub dim: usize,
    pub kappa: f64,
    pub p: f64,
    pub mobility: Arc<dyn Mobility>,
    pub weight: Arc<dyn Weight>,
    pub coupling: Arc<dyn Coupling>,
    pub potential: Arc<dyn Potential>,
    pub anisotropy: Arc<dyn Anisotropy>,
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        dim: usize,
        kappa: f64,
        p: f64,
        mobility: Arc<dyn Mobility>,
        weight: Arc<dyn Weight>,
        coupling: Arc<dyn Coupling>,
        potential: Arc<dyn Potential>,
        anisotropy: Arc<dyn Anisotropy>,
    ) -> Result<Self, ModelError> {
        if m == 0 || m > MAX_COMPONENTS {
            return Err(ModelError::BadStateDim(m));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(ModelError::BadSpatialDim(dim));
        }
        if !(kappa > 0.0) {
            return Err(ModelError::NonPositiveKappa(kappa));
        }
        if !(p > 2.0) || p < dim as f64 {
            return Err(ModelError::BadExponent { p, dim });
        }
        if !(mobility.ellipticity() > 0.0) {
            return Err(ModelError::NonPositiveEllipticity(mobility.ellipticity()));
        }
        Ok(Self { m, dim, kappa, p, mobility, weight, coupling, potential, anisotropy })
    }

    /// Heat-equation reduction: `A = I`, `alpha = 0`, `G = 0`, identity
    /// coupling, norm anisotropy (inert because `alpha = 0`).
    pub fn heat(m: usize, dim: usize, kappa: f64) -> Result<Self, ModelError> {
        Self::new(
            m,
            dim,
            kappa,
            4.0,
            Arc::new(builtin::IdentityMobility::new(m)),
            Arc::new(builtin::ConstWeight::new(0.0)),
            Arc::new(builtin::IdentityCoupling::new(m, dim)),
            Arc::new(builtin::ZeroPotential),
            Arc::new(builtin::FrobeniusFamily::new(1.0)),
        )
    }

    /// Declared ellipticity constant `C_A`.
    pub fn ellipticity(&self) -> f64 {
        self.mobility.ellipticity()
    }

    /// Check the bundle against a grid and component count.
    pub fn check_grid(&self, grid: &Grid, m: usize) -> Result<(), ModelError> {
        if m != self.m {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} components", self.m),
                got: format!("{m}"),
            });
        }
        if grid.dim() != self.dim {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{}D grid", self.dim),
                got: format!("{}D", grid.dim()),
            });
        }
        if let Some(bound) = self.potential.bound_nodes() {
            if bound != grid.num_nodes() {
                return Err(ModelError::PotentialGridMismatch { bound, grid: grid.num_nodes() });
            }
        }
        Ok(())
    }
}

fn check_state(spec: &ModelSpec, v: &SVec) -> Result<(), ModelError> {
    if v.len() != spec.m {
        return Err(ModelError::ShapeMismatch {
            expected: format!("state of length {}", spec.m),
            got: format!("{}", v.len()),
        });
    }
    Ok(())
}

fn check_matrix(spec: &ModelSpec, w: &SMat) -> Result<(), ModelError> {
    if w.rows() != spec.m || w.cols() != spec.dim {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{}x{} matrix", spec.m, spec.dim),
            got: format!("{}x{}", w.rows(), w.cols()),
        });
    }
    Ok(())
}

/// `B(v) W = B0(v) W B1(v)`.
pub fn apply_b(spec: &ModelSpec, v: &SVec, w: &SMat) -> Result<SMat, ModelError> {
    check_state(spec, v)?;
    check_matrix(spec, w)?;
    Ok(spec.coupling.b0(v).matmul(w).matmul(&spec.coupling.b1(v)))
}

/// Adjoint coupling `B*(v) W = B0(v)' W B1(v)'`, so that
/// `(B(v) W1) : W2 = W1 : (B*(v) W2)`.
pub fn apply_b_star(spec: &ModelSpec, v: &SVec, w: &SMat) -> Result<SMat, ModelError> {
    check_state(spec, v)?;
    check_matrix(spec, w)?;
    Ok(spec.coupling.b0(v).transpose().matmul(w).matmul(&spec.coupling.b1(v).transpose()))
}

/// All `M` components of the differential `[grad B](v) W`; component `k`
/// equals `dB0/dv_k W B1 + B0 W dB1/dv_k`.
pub fn apply_nabla_b(spec: &ModelSpec, v: &SVec, w: &SMat) -> Result<Vec<SMat>, ModelError> {
    check_state(spec, v)?;
    check_matrix(spec, w)?;
    let b0 = spec.coupling.b0(v);
    let b1 = spec.coupling.b1(v);
    Ok((0..spec.m)
        .map(|k| {
            spec.coupling
                .db0(v, k)
                .matmul(w)
                .matmul(&b1)
                .add(&b0.matmul(w).matmul(&spec.coupling.db1(v, k)))
        })
        .collect())
}

/// Frobenius contraction `Z : [grad B](v) W`, an `M`-vector.
pub fn contract_nabla_b(
    spec: &ModelSpec,
    z: &SMat,
    v: &SVec,
    w: &SMat,
) -> Result<SVec, ModelError> {
    check_state(spec, v)?;
    check_matrix(spec, w)?;
    check_matrix(spec, z)?;
    let b0 = spec.coupling.b0(v);
    let b1 = spec.coupling.b1(v);
    let mut out = SVec::zeros(spec.m);
    for k in 0..spec.m {
        let comp = spec
            .coupling
            .db0(v, k)
            .matmul(w)
            .matmul(&b1)
            .add(&b0.matmul(w).matmul(&spec.coupling.db1(v, k)));
        out[k] = z.ddot(&comp);
    }
    Ok(out)
}

fn check_eps(eps: f64) -> Result<(), ModelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::EpsOutOfRange(eps));
    }
    Ok(())
}

/// Smoothed anisotropy value.
pub fn gamma_eval(family: &dyn Anisotropy, w: &SMat, eps: f64) -> Result<f64, ModelError> {
    check_eps(eps)?;
    Ok(family.smoothed(w, eps))
}

/// Smoothed anisotropy gradient.
pub fn gamma_grad(family: &dyn Anisotropy, w: &SMat, eps: f64) -> Result<SMat, ModelError> {
    check_eps(eps)?;
    Ok(family.smoothed_grad(w, eps))
}

/// Total subgradient selection for the exact integrand.
pub fn subgradient_select(family: &dyn Anisotropy, w: &SMat) -> SMat {
    family.subgradient(w)
}

/// Regularizer `Y_p(W) = |W|^p / p`; its gradient `|W|^{p-2} W` realizes the
/// strong-monotonicity constant `2^{2-p}` sharply (equality at `W1 = -W2`).
pub fn upsilon_eval(p: f64, w: &SMat) -> f64 {
    w.norm().powf(p) / p
}

/// Gradient of the regularizer.
pub fn upsilon_grad(p: f64, w: &SMat) -> SMat {
    let norm = w.norm();
    if norm == 0.0 {
        return SMat::zeros(w.rows(), w.cols());
    }
    w.scaled(norm.powf(p - 2.0))
}

/// Hessian of the regularizer applied to a direction.
pub fn upsilon_hess_apply(p: f64, w: &SMat, q: &SMat) -> SMat {
    let norm = w.norm();
    if norm == 0.0 {
        // For p > 2 the Hessian vanishes at the origin.
        return SMat::zeros(w.rows(), w.cols());
    }
    let a = norm.powf(p - 2.0);
    let b = (p - 2.0) * norm.powf(p - 4.0) * w.ddot(q);
    q.scaled(a).add(&w.scaled(b))
}

/// Upper estimate of the regularizer Hessian norm (preconditioning).
pub fn upsilon_hess_scale(p: f64, w: &SMat) -> f64 {
    (p - 1.0) * w.norm().powf(p - 2.0)
}

/// Growth constant for the regularizer bounds
/// `(1/C)(|W|^p - 1) <= Y_p(W) <= C(|W|^p + 1)`.
pub fn upsilon_growth_constant(p: f64) -> f64 {
    p.max((p - 2.0).exp2())
}

/// Strong-monotonicity constant: the sampled ratio
/// `(grad Y_p(W1) - grad Y_p(W2)) : (W1 - W2) / |W1 - W2|^p` is bounded below
/// by this value, with equality at `W1 = -W2`.
pub fn upsilon_monotonicity_constant(p: f64) -> f64 {
    (2.0 - p).exp2()
}

/// Potential value at a point of the domain.
pub fn potential_eval(
    spec: &ModelSpec,
    grid: &Grid,
    x: &[f64],
    v: &SVec,
) -> Result<f64, ModelError> {
    check_state(spec, v)?;
    if !grid.contains(x) {
        return Err(ModelError::OutsideDomain);
    }
    let node = grid.nearest_node(x);
    Ok(spec.potential.eval(node, &grid.node_pos(node), v))
}

/// Potential gradient at a point of the domain.
pub fn potential_grad(
    spec: &ModelSpec,
    grid: &Grid,
    x: &[f64],
    v: &SVec,
) -> Result<SVec, ModelError> {
    check_state(spec, v)?;
    if !grid.contains(x) {
        return Err(ModelError::OutsideDomain);
    }
    let node = grid.nearest_node(x);
    Ok(spec.potential.grad(node, &grid.node_pos(node), v))
}

#[cfg(test)]
mod tests {
    use super::builtin::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation_spec() -> ModelSpec {
        ModelSpec::new(
            2,
            2,
            1.0,
            4.0,
            Arc::new(IdentityMobility::new(2)),
            Arc::new(ConstWeight::new(1.0)),
            Arc::new(RotationCoupling::new(2, 1)),
            Arc::new(ZeroPotential),
            Arc::new(FrobeniusFamily::new(1.0)),
        )
        .unwrap()
    }

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> SMat {
        let mut w = SMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] = rng.gen_range(-2.0..2.0);
            }
        }
        w
    }

    #[test]
    fn identity_coupling_is_identity() {
        let spec = ModelSpec::heat(2, 2, 1.0).unwrap();
        let w = SMat::from_rows(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let v = SVec::zeros(2);
        assert_eq!(apply_b(&spec, &v, &w).unwrap(), w);
        assert_eq!(apply_b_star(&spec, &v, &w).unwrap(), w);
    }

    #[test]
    fn coupling_adjoint_identity_holds() {
        let spec = rotation_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = SVec::from_slice(&[rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)]);
            let w1 = random_mat(&mut rng, 2, 2);
            let w2 = random_mat(&mut rng, 2, 2);
            let lhs = apply_b(&spec, &v, &w1).unwrap().ddot(&w2);
            let rhs = w1.ddot(&apply_b_star(&spec, &v, &w2).unwrap());
            approx::assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
        }
    }

    #[test]
    fn rotation_preserves_frobenius_norm() {
        let spec = rotation_spec();
        let v = SVec::from_slice(&[0.3, 0.9]);
        let w = SMat::from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let rotated = apply_b(&spec, &v, &w).unwrap();
        approx::assert_relative_eq!(rotated.norm(), w.norm(), max_relative = 1e-14);
    }

    #[test]
    fn nabla_b_vanishes_for_constant_coupling() {
        let spec = ModelSpec::heat(2, 2, 1.0).unwrap();
        let v = SVec::from_slice(&[0.4, -0.2]);
        let w = SMat::from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        for comp in apply_nabla_b(&spec, &v, &w).unwrap() {
            assert_eq!(comp.norm(), 0.0);
        }
        let z = SMat::zeros(2, 2);
        let c = contract_nabla_b(&spec, &z, &v, &w).unwrap();
        assert_eq!(c.norm(), 0.0);
    }

    #[test]
    fn nabla_b_matches_finite_differences() {
        let spec = rotation_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = SVec::from_slice(&[rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)]);
            let w = random_mat(&mut rng, 2, 2);
            let comps = apply_nabla_b(&spec, &v, &w).unwrap();
            for k in 0..2 {
                let fd = fd::central_matrix(1e-6, |s| {
                    let mut vs = v;
                    vs[k] += s;
                    apply_b(&spec, &vs, &w).unwrap()
                });
                let err = fd.sub(&comps[k]).norm() / (1.0 + comps[k].norm());
                assert!(err <= 1e-6, "component {k}: fd error {err}");
            }
        }
    }

    #[test]
    fn contraction_pairs_with_components() {
        let spec = rotation_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v = SVec::from_slice(&[0.1, 0.7]);
        let w = random_mat(&mut rng, 2, 2);
        let z = random_mat(&mut rng, 2, 2);
        let comps = apply_nabla_b(&spec, &v, &w).unwrap();
        let contracted = contract_nabla_b(&spec, &z, &v, &w).unwrap();
        for k in 0..2 {
            approx::assert_relative_eq!(contracted[k], z.ddot(&comps[k]), max_relative = 1e-13);
        }
    }

    #[test]
    fn gamma_eval_rejects_bad_eps() {
        let family = FrobeniusFamily::new(1.0);
        let w = SMat::zeros(2, 2);
        assert!(gamma_eval(&family, &w, 0.0).is_err());
        assert!(gamma_eval(&family, &w, 1.0).is_err());
        assert!(gamma_eval(&family, &w, 0.5).is_ok());
    }

    #[test]
    fn upsilon_at_origin() {
        let w = SMat::zeros(2, 2);
        assert_eq!(upsilon_eval(4.0, &w), 0.0);
        assert_eq!(upsilon_grad(4.0, &w).norm(), 0.0);
    }

    #[test]
    fn upsilon_monotonicity_equality_case() {
        // Scalar W1 = 1, W2 = -1 at p = 4: pairing = 4, bound = 2^{2-4} * 2^4 = 4.
        let w1 = SMat::from_rows(1, 1, &[1.0]);
        let w2 = SMat::from_rows(1, 1, &[-1.0]);
        let diff = w1.sub(&w2);
        let pairing = upsilon_grad(4.0, &w1).sub(&upsilon_grad(4.0, &w2)).ddot(&diff);
        approx::assert_relative_eq!(pairing, 4.0, max_relative = 1e-14);
        approx::assert_relative_eq!(
            pairing,
            upsilon_monotonicity_constant(4.0) * diff.norm().powi(4),
            max_relative = 1e-14
        );
    }

    #[test]
    fn upsilon_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let w = random_mat(&mut rng, 2, 2);
            let g = upsilon_grad(4.0, &w);
            let fd_g = fd::grad_matrix(1e-6, &w, |m| upsilon_eval(4.0, m));
            let err = fd_g.sub(&g).norm() / (1.0 + g.norm());
            assert!(err <= 1e-6, "fd error {err}");
        }
    }

    #[test]
    fn potential_eval_checks_domain() {
        let spec = ModelSpec::heat(1, 1, 1.0).unwrap();
        let grid = Grid::line(5, 1.0).unwrap();
        let v = SVec::zeros(1);
        assert!(potential_eval(&spec, &grid, &[0.5], &v).is_ok());
        assert!(matches!(
            potential_eval(&spec, &grid, &[1.5], &v),
            Err(ModelError::OutsideDomain)
        ));
    }

    #[test]
    fn spec_constructor_validates() {
        assert!(ModelSpec::heat(2, 2, 0.0).is_err());
        assert!(ModelSpec::heat(0, 2, 1.0).is_err());
        assert!(ModelSpec::heat(2, 3, 1.0).is_err());
    }
}
