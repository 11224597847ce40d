//! Sampled validation of the coefficient bundle contracts.
//!
//! Each check samples random states/matrices, evaluates the promised
//! inequality, and records the worst observed constant next to the declared
//! one. Failures are reported, never thrown.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fd, upsilon_eval, upsilon_grad, upsilon_growth_constant, ModelSpec};
use crate::tensor::{SMat, SVec};

/// Outcome of one sampled contract check.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    pub name: String,
    pub pass: bool,
    /// Worst observed value of the monitored quantity.
    pub observed: f64,
    /// Declared bound it is compared against.
    pub required: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub samples: usize,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<34} observed {:>13.6e}  bound {:>13.6e}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.observed,
                c.required,
                c.detail
            ));
        }
        out
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    m: usize,
    n: usize,
}

impl Sampler {
    fn state(&mut self, scale: f64) -> SVec {
        let mut v = SVec::zeros(self.m);
        for k in 0..self.m {
            v[k] = self.rng.gen_range(-scale..scale);
        }
        v
    }

    fn matrix(&mut self, scale: f64) -> SMat {
        let mut w = SMat::zeros(self.m, self.n);
        for i in 0..self.m {
            for j in 0..self.n {
                w[(i, j)] = self.rng.gen_range(-scale..scale);
            }
        }
        w
    }
}

/// Run the sampled battery with the default seed.
pub fn validate(spec: &ModelSpec, samples: usize) -> ValidationReport {
    validate_with_seed(spec, samples, 0xA715)
}

pub fn validate_with_seed(spec: &ModelSpec, samples: usize, seed: u64) -> ValidationReport {
    assert!(samples >= 1);
    let mut s = Sampler { rng: ChaCha8Rng::seed_from_u64(seed), m: spec.m, n: spec.dim };
    let mut checks = Vec::new();
    let fd_tol = 1e-6;
    let h = 1e-6;

    // Mobility ellipticity: smallest Rayleigh quotient vs declared constant.
    {
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let v = s.state(3.0);
            let w = s.state(1.0);
            let ww = w.dot(&w);
            if ww > 1e-12 {
                worst = worst.min(spec.mobility.eval(&v).matvec(&w).dot(&w) / ww);
            }
        }
        let required = spec.ellipticity();
        checks.push(AssumptionCheck {
            name: "mobility ellipticity".into(),
            pass: worst >= required - 1e-12 * (1.0 + required),
            observed: worst,
            required,
            detail: "min Rayleigh quotient of A(v)".into(),
        });
    }

    // Weight: nonnegative, below declared sup, gradient matches differences.
    {
        let mut min_val = f64::INFINITY;
        let mut max_val = f64::NEG_INFINITY;
        let mut worst_fd = 0.0f64;
        for _ in 0..samples {
            let v = s.state(4.0);
            let val = spec.weight.eval(&v);
            min_val = min_val.min(val);
            max_val = max_val.max(val);
            let g = spec.weight.grad(&v);
            let fd_g = fd::grad_vec(h, &v, |x| spec.weight.eval(x));
            worst_fd = worst_fd.max(fd_g.sub(&g).norm() / (1.0 + g.norm()));
        }
        checks.push(AssumptionCheck {
            name: "weight nonnegative".into(),
            pass: min_val >= 0.0,
            observed: min_val,
            required: 0.0,
            detail: "min alpha(v)".into(),
        });
        checks.push(AssumptionCheck {
            name: "weight sup bound".into(),
            pass: max_val <= spec.weight.sup() + 1e-12,
            observed: max_val,
            required: spec.weight.sup(),
            detail: "max alpha(v)".into(),
        });
        checks.push(AssumptionCheck {
            name: "weight gradient vs differences".into(),
            pass: worst_fd <= fd_tol,
            observed: worst_fd,
            required: fd_tol,
            detail: "relative central-difference error".into(),
        });
    }

    // Coupling differential vs finite differences of B(v)W.
    {
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let v = s.state(2.0);
            let w = s.matrix(2.0);
            let comps = super::apply_nabla_b(spec, &v, &w).expect("shapes consistent");
            for (k, comp) in comps.iter().enumerate() {
                let fd_m = fd::central_matrix(h, |step| {
                    let mut vs = v;
                    vs[k] += step;
                    super::apply_b(spec, &vs, &w).expect("shapes consistent")
                });
                worst = worst.max(fd_m.sub(comp).norm() / (1.0 + comp.norm()));
            }
        }
        checks.push(AssumptionCheck {
            name: "coupling differential vs differences".into(),
            pass: worst <= fd_tol,
            observed: worst,
            required: fd_tol,
            detail: "relative central-difference error".into(),
        });
    }

    // Coupling adjoint identity.
    {
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let v = s.state(2.0);
            let w1 = s.matrix(2.0);
            let w2 = s.matrix(2.0);
            let lhs = super::apply_b(spec, &v, &w1).unwrap().ddot(&w2);
            let rhs = w1.ddot(&super::apply_b_star(spec, &v, &w2).unwrap());
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        checks.push(AssumptionCheck {
            name: "coupling adjoint identity".into(),
            pass: worst <= 1e-13,
            observed: worst,
            required: 1e-13,
            detail: "relative defect of (B W1):W2 = W1:(B* W2)".into(),
        });
    }

    // Anisotropy: convexity, growth, smoothing gap, gradient bound, gradient
    // vs differences, subgradient inequality.
    {
        let fam = spec.anisotropy.as_ref();
        let mut worst_convex = f64::NEG_INFINITY;
        let mut worst_growth = f64::NEG_INFINITY;
        let mut worst_gap = f64::NEG_INFINITY;
        let mut worst_grad_bound = f64::NEG_INFINITY;
        let mut worst_fd = 0.0f64;
        let mut worst_sub = f64::NEG_INFINITY;
        for _ in 0..samples {
            let w1 = s.matrix(4.0);
            let w2 = s.matrix(4.0);
            let mid = w1.add(&w2).scaled(0.5);
            worst_convex =
                worst_convex.max(fam.exact(&mid) - 0.5 * (fam.exact(&w1) + fam.exact(&w2)));
            worst_growth =
                worst_growth.max(fam.exact(&w1) - fam.growth() * (w1.norm() + 1.0));
            for &eps in &[1e-1, 1e-2, 1e-3] {
                worst_gap =
                    worst_gap.max((fam.smoothed(&w1, eps) - fam.exact(&w1)).abs() - fam.gap_bound(eps));
                worst_grad_bound =
                    worst_grad_bound.max(fam.smoothed_grad(&w1, eps).norm() - fam.lipschitz());
            }
            let g = fam.smoothed_grad(&w1, 0.1);
            let fd_g = fd::grad_matrix(h, &w1, |m| fam.smoothed(m, 0.1));
            worst_fd = worst_fd.max(fd_g.sub(&g).norm() / (1.0 + g.norm()));
            let sub = fam.subgradient(&w1);
            worst_sub = worst_sub
                .max(fam.exact(&w1) + sub.ddot(&w2.sub(&w1)) - fam.exact(&w2));
        }
        checks.push(AssumptionCheck {
            name: "anisotropy convexity (midpoint)".into(),
            pass: worst_convex <= 1e-12,
            observed: worst_convex,
            required: 0.0,
            detail: "max midpoint-inequality defect".into(),
        });
        checks.push(AssumptionCheck {
            name: "anisotropy linear growth".into(),
            pass: worst_growth <= 1e-12,
            observed: worst_growth,
            required: 0.0,
            detail: "max gamma(W) - C(|W|+1)".into(),
        });
        checks.push(AssumptionCheck {
            name: "anisotropy smoothing gap".into(),
            pass: worst_gap <= 1e-12,
            observed: worst_gap,
            required: 0.0,
            detail: "max |gamma_eps - gamma| - g(eps) over eps in {1e-1,1e-2,1e-3}".into(),
        });
        checks.push(AssumptionCheck {
            name: "anisotropy gradient bound".into(),
            pass: worst_grad_bound <= 1e-12,
            observed: worst_grad_bound,
            required: 0.0,
            detail: "max |grad gamma_eps| - Lip(gamma)".into(),
        });
        checks.push(AssumptionCheck {
            name: "anisotropy gradient vs differences".into(),
            pass: worst_fd <= fd_tol,
            observed: worst_fd,
            required: fd_tol,
            detail: "relative central-difference error at eps = 0.1".into(),
        });
        checks.push(AssumptionCheck {
            name: "subgradient inequality".into(),
            pass: worst_sub <= 1e-12,
            observed: worst_sub,
            required: 0.0,
            detail: "max gamma(W) + w*:(X-W) - gamma(X)".into(),
        });
    }

    // Regularizer: gradient vs differences plus growth envelope.
    {
        let mut worst_fd = 0.0f64;
        let mut worst_growth = f64::NEG_INFINITY;
        let c = upsilon_growth_constant(spec.p);
        for _ in 0..samples {
            let w = s.matrix(2.0);
            let g = upsilon_grad(spec.p, &w);
            let fd_g = fd::grad_matrix(h, &w, |m| upsilon_eval(spec.p, m));
            worst_fd = worst_fd.max(fd_g.sub(&g).norm() / (1.0 + g.norm()));
            let val = upsilon_eval(spec.p, &w);
            let np = w.norm().powf(spec.p);
            worst_growth = worst_growth.max((np - 1.0) / c - val).max(val - c * (np + 1.0));
        }
        checks.push(AssumptionCheck {
            name: "regularizer gradient vs differences".into(),
            pass: worst_fd <= fd_tol,
            observed: worst_fd,
            required: fd_tol,
            detail: "relative central-difference error".into(),
        });
        checks.push(AssumptionCheck {
            name: "regularizer growth envelope".into(),
            pass: worst_growth <= 1e-12,
            observed: worst_growth,
            required: 0.0,
            detail: "max violation of the two-sided p-growth bound".into(),
        });
    }

    // Potential: nonnegative, gradient vs differences, value/gradient
    // difference quotients below the declared Lipschitz constant.
    {
        let x = [0.0, 0.0];
        let mut min_val = f64::INFINITY;
        let mut worst_fd = 0.0f64;
        let mut worst_lip = f64::NEG_INFINITY;
        let lg = spec.potential.lipschitz();
        for _ in 0..samples {
            let v = s.state(3.0);
            let u = s.state(3.0);
            min_val = min_val.min(spec.potential.eval(0, &x, &v));
            let g = spec.potential.grad(0, &x, &v);
            let fd_g = fd::grad_vec(h, &v, |y| spec.potential.eval(0, &x, y));
            worst_fd = worst_fd.max(fd_g.sub(&g).norm() / (1.0 + g.norm()));
            let dv = v.sub(&u).norm();
            if dv > 1e-9 {
                let dval = (spec.potential.eval(0, &x, &v) - spec.potential.eval(0, &x, &u)).abs();
                let dgrad = g.sub(&spec.potential.grad(0, &x, &u)).norm();
                worst_lip = worst_lip.max(dval / dv - lg).max(dgrad / dv - lg);
            }
        }
        checks.push(AssumptionCheck {
            name: "potential nonnegative".into(),
            pass: min_val >= 0.0,
            observed: min_val,
            required: 0.0,
            detail: "min G(x, v)".into(),
        });
        checks.push(AssumptionCheck {
            name: "potential gradient vs differences".into(),
            pass: worst_fd <= fd_tol,
            observed: worst_fd,
            required: fd_tol,
            detail: "relative central-difference error".into(),
        });
        checks.push(AssumptionCheck {
            name: "potential difference quotients".into(),
            pass: worst_lip <= 1e-9 || lg == 0.0 && worst_lip <= 0.0,
            observed: worst_lip,
            required: 0.0,
            detail: "max quotient excess over the declared Lipschitz constant".into(),
        });
    }

    ValidationReport { checks, samples }
}

#[cfg(test)]
mod tests {
    use super::super::builtin::*;
    use super::*;
    use std::sync::Arc;

    #[test]
    fn identity_mobility_observes_unit_ellipticity() {
        let spec = ModelSpec::heat(2, 2, 1.0).unwrap();
        let report = validate(&spec, 200);
        assert!(report.all_pass(), "{}", report.summary());
        let ell = report.checks.iter().find(|c| c.name.contains("ellipticity")).unwrap();
        approx::assert_relative_eq!(ell.observed, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn diagonal_mobility_observes_declared_bound() {
        // A = diag(2, 3) with declared C_A = 2: passes with observed >= 2.
        struct Diag23;
        impl super::super::Mobility for Diag23 {
            fn eval(&self, _v: &SVec) -> SMat {
                SMat::from_rows(2, 2, &[2.0, 0.0, 0.0, 3.0])
            }
            fn ellipticity(&self) -> f64 {
                2.0
            }
        }
        let spec = ModelSpec::new(
            2,
            2,
            1.0,
            4.0,
            Arc::new(Diag23),
            Arc::new(ConstWeight::new(1.0)),
            Arc::new(IdentityCoupling::new(2, 2)),
            Arc::new(ZeroPotential),
            Arc::new(FrobeniusFamily::new(1.0)),
        )
        .unwrap();
        let report = validate(&spec, 500);
        let ell = report.checks.iter().find(|c| c.name.contains("ellipticity")).unwrap();
        assert!(ell.pass && ell.observed >= 2.0 - 1e-12);
    }

    #[test]
    fn undersized_growth_constant_is_caught() {
        // Family that lies about its growth constant.
        struct Lying(FrobeniusFamily);
        impl super::super::Anisotropy for Lying {
            fn exact(&self, w: &SMat) -> f64 {
                self.0.exact(w)
            }
            fn subgradient(&self, w: &SMat) -> SMat {
                self.0.subgradient(w)
            }
            fn smoothed(&self, w: &SMat, eps: f64) -> f64 {
                self.0.smoothed(w, eps)
            }
            fn smoothed_grad(&self, w: &SMat, eps: f64) -> SMat {
                self.0.smoothed_grad(w, eps)
            }
            fn smoothed_hess_apply(&self, w: &SMat, q: &SMat, eps: f64) -> SMat {
                self.0.smoothed_hess_apply(w, q, eps)
            }
            fn smoothed_hess_scale(&self, w: &SMat, eps: f64) -> f64 {
                self.0.smoothed_hess_scale(w, eps)
            }
            fn gap_bound(&self, eps: f64) -> f64 {
                self.0.gap_bound(eps)
            }
            fn lipschitz(&self) -> f64 {
                self.0.lipschitz()
            }
            fn growth(&self) -> f64 {
                0.05 // too small for gamma(W) = |W|
            }
        }
        let spec = ModelSpec::new(
            2,
            2,
            1.0,
            4.0,
            Arc::new(IdentityMobility::new(2)),
            Arc::new(ConstWeight::new(1.0)),
            Arc::new(IdentityCoupling::new(2, 2)),
            Arc::new(ZeroPotential),
            Arc::new(Lying(FrobeniusFamily::new(1.0))),
        )
        .unwrap();
        let report = validate(&spec, 300);
        let growth = report.checks.iter().find(|c| c.name.contains("linear growth")).unwrap();
        assert!(!growth.pass, "undersized constant must fail:\n{}", report.summary());
    }

    #[test]
    fn full_rotation_bundle_passes() {
        let spec = ModelSpec::new(
            2,
            2,
            0.5,
            4.0,
            Arc::new(ComponentMobility::new(
                SVec::from_slice(&[1.0, 0.3]),
                SVec::from_slice(&[0.0, 1.0]),
                0,
            )),
            Arc::new(SaturatingWeight::new(2, 0, 0.1, 1.0)),
            Arc::new(RotationCoupling::new(2, 1)),
            Arc::new(HuberFidelity::tether(2, 1.0, 0.5, vec![0], vec![1.0])),
            Arc::new(HuberFamily::uniform(2, 2, 1.0)),
        )
        .unwrap();
        let report = validate(&spec, 300);
        assert!(report.all_pass(), "{}", report.summary());
    }
}
