//! Built-in coefficient instances.
//!
//! Every instance keeps its contract constants explicit so the sampled
//! validation can compare declared against observed values. Saturating shapes
//! (`x^2 / (1 + x^2)`, pseudo-Huber bumps) are used wherever boundedness of
//! the coefficient or of its derivatives over the whole state space is part
//! of the contract.

use super::{Anisotropy, Coupling, Mobility, Potential, Weight};
use crate::tensor::{SMat, SVec, MAX_DIM};

/// Saturating shape `s(x) = x^2 / (1 + x^2)` with bounded derivatives.
#[inline]
fn sat(x: f64) -> f64 {
    x * x / (1.0 + x * x)
}

#[inline]
fn sat_prime(x: f64) -> f64 {
    let d = 1.0 + x * x;
    2.0 * x / (d * d)
}

/// Sup of `|s'|`, attained at `x = 1/sqrt(3)`.
const SAT_PRIME_SUP: f64 = 0.6495190528383290; // 3 sqrt(3) / 8

// ---------------------------------------------------------------------------
// Mobility
// ---------------------------------------------------------------------------

/// `A(v) = I`.
pub struct IdentityMobility {
    m: usize,
}

impl IdentityMobility {
    pub fn new(m: usize) -> Self {
        Self { m }
    }
}

impl Mobility for IdentityMobility {
    fn eval(&self, _v: &SVec) -> SMat {
        SMat::identity(self.m)
    }
    fn ellipticity(&self) -> f64 {
        1.0
    }
}

/// `A(v) = (base + amp * exp(-|v|^2 / width^2)) I`; elliptic with constant
/// `base` since the bump is nonnegative.
pub struct ScaledBumpMobility {
    m: usize,
    base: f64,
    amp: f64,
    width: f64,
}

impl ScaledBumpMobility {
    pub fn new(m: usize, base: f64, amp: f64, width: f64) -> Self {
        assert!(base > 0.0 && amp >= 0.0 && width > 0.0);
        Self { m, base, amp, width }
    }
}

impl Mobility for ScaledBumpMobility {
    fn eval(&self, v: &SVec) -> SMat {
        let r2 = v.dot(v) / (self.width * self.width);
        SMat::identity(self.m).scaled(self.base + self.amp * (-r2).exp())
    }
    fn ellipticity(&self) -> f64 {
        self.base
    }
}

/// Diagonal mobility whose entries saturate in one driving component:
/// `A_kk(v) = floor_k + gain_k * s(v_driver)`.
pub struct ComponentMobility {
    floor: SVec,
    gain: SVec,
    driver: usize,
}

impl ComponentMobility {
    pub fn new(floor: SVec, gain: SVec, driver: usize) -> Self {
        assert_eq!(floor.len(), gain.len());
        assert!(driver < floor.len());
        assert!(floor.as_slice().iter().all(|&f| f > 0.0));
        assert!(gain.as_slice().iter().all(|&g| g >= 0.0));
        Self { floor, gain, driver }
    }
}

impl Mobility for ComponentMobility {
    fn eval(&self, v: &SVec) -> SMat {
        let s = sat(v[self.driver]);
        let mut a = SMat::zeros(self.floor.len(), self.floor.len());
        for k in 0..self.floor.len() {
            a[(k, k)] = self.floor[k] + self.gain[k] * s;
        }
        a
    }
    fn ellipticity(&self) -> f64 {
        self.floor.as_slice().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

// ---------------------------------------------------------------------------
// Weight
// ---------------------------------------------------------------------------

/// Constant weight; `0` switches the anisotropy term off.
pub struct ConstWeight {
    value: f64,
}

impl ConstWeight {
    pub fn new(value: f64) -> Self {
        assert!(value >= 0.0);
        Self { value }
    }
}

impl Weight for ConstWeight {
    fn eval(&self, _v: &SVec) -> f64 {
        self.value
    }
    fn grad(&self, v: &SVec) -> SVec {
        SVec::zeros(v.len())
    }
    fn sup(&self) -> f64 {
        self.value
    }
    fn grad_sup(&self) -> f64 {
        0.0
    }
}

/// `alpha(v) = floor + gain * s(v_k)`, bounded with bounded derivatives.
pub struct SaturatingWeight {
    floor: f64,
    gain: f64,
    component: usize,
    m: usize,
}

impl SaturatingWeight {
    pub fn new(m: usize, component: usize, floor: f64, gain: f64) -> Self {
        assert!(component < m);
        assert!(floor >= 0.0 && gain >= 0.0);
        Self { floor, gain, component, m }
    }
}

impl Weight for SaturatingWeight {
    fn eval(&self, v: &SVec) -> f64 {
        self.floor + self.gain * sat(v[self.component])
    }
    fn grad(&self, v: &SVec) -> SVec {
        let mut g = SVec::zeros(self.m);
        g[self.component] = self.gain * sat_prime(v[self.component]);
        g
    }
    fn sup(&self) -> f64 {
        self.floor + self.gain
    }
    fn grad_sup(&self) -> f64 {
        self.gain * SAT_PRIME_SUP
    }
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

/// `B0 = I`, `B1 = I`.
pub struct IdentityCoupling {
    m: usize,
    n: usize,
}

impl IdentityCoupling {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }
}

impl Coupling for IdentityCoupling {
    fn b0(&self, _v: &SVec) -> SMat {
        SMat::identity(self.m)
    }
    fn b1(&self, _v: &SVec) -> SMat {
        SMat::identity(self.n)
    }
    fn db0(&self, _v: &SVec, _k: usize) -> SMat {
        SMat::zeros(self.m, self.m)
    }
    fn db1(&self, _v: &SVec, _k: usize) -> SMat {
        SMat::zeros(self.n, self.n)
    }
}

/// Planar orientation adaptation: `B0 = I` and `B1 = R(theta)` with the
/// rotation angle read from one state component. Requires `N = 2`.
pub struct RotationCoupling {
    m: usize,
    angle_component: usize,
}

impl RotationCoupling {
    pub fn new(m: usize, angle_component: usize) -> Self {
        assert!(angle_component < m);
        Self { m, angle_component }
    }

    fn rotation(theta: f64) -> SMat {
        let (s, c) = theta.sin_cos();
        SMat::from_rows(2, 2, &[c, -s, s, c])
    }

    fn rotation_deriv(theta: f64) -> SMat {
        let (s, c) = theta.sin_cos();
        SMat::from_rows(2, 2, &[-s, -c, c, -s])
    }
}

impl Coupling for RotationCoupling {
    fn b0(&self, _v: &SVec) -> SMat {
        SMat::identity(self.m)
    }
    fn b1(&self, v: &SVec) -> SMat {
        Self::rotation(v[self.angle_component])
    }
    fn db0(&self, _v: &SVec, _k: usize) -> SMat {
        SMat::zeros(self.m, self.m)
    }
    fn db1(&self, v: &SVec, k: usize) -> SMat {
        if k == self.angle_component {
            Self::rotation_deriv(v[self.angle_component])
        } else {
            SMat::zeros(MAX_DIM, MAX_DIM)
        }
    }
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

/// `G = 0`.
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn eval(&self, _node: usize, _x: &[f64; MAX_DIM], _v: &SVec) -> f64 {
        0.0
    }
    fn grad(&self, _node: usize, _x: &[f64; MAX_DIM], v: &SVec) -> SVec {
        SVec::zeros(v.len())
    }
    fn hess(&self, _node: usize, _x: &[f64; MAX_DIM], v: &SVec) -> SMat {
        SMat::zeros(v.len(), v.len())
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Fidelity targets: either one constant state or a per-node data table
/// (row-major over nodes, one column per tracked channel).
pub enum FidelityData {
    Constant(Vec<f64>),
    PerNode(Vec<f64>),
}

/// Saturating fidelity `G(x, u) = lambda * sum_j psi(u_{c_j} - f_j(x))` with
/// the pseudo-Huber bump `psi(r) = delta^2 (sqrt(1 + (r/delta)^2) - 1)`, so
/// the gradient and Hessian are globally bounded.
pub struct HuberFidelity {
    lambda: f64,
    delta: f64,
    channels: Vec<usize>,
    data: FidelityData,
    m: usize,
}

impl HuberFidelity {
    pub fn new(
        m: usize,
        lambda: f64,
        delta: f64,
        channels: Vec<usize>,
        data: FidelityData,
    ) -> Self {
        assert!(lambda >= 0.0 && delta > 0.0);
        assert!(!channels.is_empty() && channels.iter().all(|&c| c < m));
        match &data {
            FidelityData::Constant(t) => assert_eq!(t.len(), channels.len()),
            FidelityData::PerNode(t) => assert_eq!(t.len() % channels.len(), 0),
        }
        Self { lambda, delta, channels, data, m }
    }

    /// Tether toward a constant target in the given channels.
    pub fn tether(m: usize, lambda: f64, delta: f64, channels: Vec<usize>, targets: Vec<f64>) -> Self {
        Self::new(m, lambda, delta, channels, FidelityData::Constant(targets))
    }

    #[inline]
    fn target(&self, node: usize, j: usize) -> f64 {
        match &self.data {
            FidelityData::Constant(t) => t[j],
            FidelityData::PerNode(t) => t[node * self.channels.len() + j],
        }
    }

    #[inline]
    fn psi(&self, r: f64) -> f64 {
        let d = self.delta;
        d * d * ((1.0 + (r / d) * (r / d)).sqrt() - 1.0)
    }

    #[inline]
    fn psi_prime(&self, r: f64) -> f64 {
        r / (1.0 + (r / self.delta) * (r / self.delta)).sqrt()
    }

    #[inline]
    fn psi_second(&self, r: f64) -> f64 {
        (1.0 + (r / self.delta) * (r / self.delta)).powf(-1.5)
    }
}

impl Potential for HuberFidelity {
    fn eval(&self, node: usize, _x: &[f64; MAX_DIM], v: &SVec) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.channels.iter().enumerate() {
            acc += self.psi(v[c] - self.target(node, j));
        }
        self.lambda * acc
    }

    fn grad(&self, node: usize, _x: &[f64; MAX_DIM], v: &SVec) -> SVec {
        let mut g = SVec::zeros(self.m);
        for (j, &c) in self.channels.iter().enumerate() {
            g[c] = self.lambda * self.psi_prime(v[c] - self.target(node, j));
        }
        g
    }

    fn hess(&self, node: usize, _x: &[f64; MAX_DIM], v: &SVec) -> SMat {
        let mut h = SMat::zeros(self.m, self.m);
        for (j, &c) in self.channels.iter().enumerate() {
            h[(c, c)] = self.lambda * self.psi_second(v[c] - self.target(node, j));
        }
        h
    }

    fn lipschitz(&self) -> f64 {
        // |grad G| <= lambda * delta * sqrt(#channels); grad is lambda-Lipschitz.
        let grad_sup = self.lambda * self.delta * (self.channels.len() as f64).sqrt();
        grad_sup.max(self.lambda)
    }

    fn bound_nodes(&self) -> Option<usize> {
        match &self.data {
            FidelityData::Constant(_) => None,
            FidelityData::PerNode(t) => Some(t.len() / self.channels.len()),
        }
    }
}

// ---------------------------------------------------------------------------
// Anisotropy families
// ---------------------------------------------------------------------------

/// Frobenius-norm anisotropy `gamma(W) = scale * |W|` with the square-root
/// smoothing `gamma_eps(W) = scale * sqrt(|W|^2 + eps^2)`; uniform gap
/// `g(eps) = scale * eps`, attained at `W = 0`.
pub struct FrobeniusFamily {
    scale: f64,
}

impl FrobeniusFamily {
    pub fn new(scale: f64) -> Self {
        assert!(scale > 0.0);
        Self { scale }
    }
}

impl Anisotropy for FrobeniusFamily {
    fn exact(&self, w: &SMat) -> f64 {
        self.scale * w.norm()
    }

    fn subgradient(&self, w: &SMat) -> SMat {
        let norm = w.norm();
        if norm == 0.0 {
            // The subdifferential at the kink is the scaled unit ball; zero is
            // a valid selection.
            SMat::zeros(w.rows(), w.cols())
        } else {
            w.scaled(self.scale / norm)
        }
    }

    fn smoothed(&self, w: &SMat, eps: f64) -> f64 {
        self.scale * (w.ddot(w) + eps * eps).sqrt()
    }

    fn smoothed_grad(&self, w: &SMat, eps: f64) -> SMat {
        w.scaled(self.scale / (w.ddot(w) + eps * eps).sqrt())
    }

    fn smoothed_hess_apply(&self, w: &SMat, q: &SMat, eps: f64) -> SMat {
        let s = (w.ddot(w) + eps * eps).sqrt();
        q.scaled(self.scale / s).sub(&w.scaled(self.scale * w.ddot(q) / (s * s * s)))
    }

    fn smoothed_hess_scale(&self, w: &SMat, eps: f64) -> f64 {
        self.scale / (w.ddot(w) + eps * eps).sqrt()
    }

    fn gap_bound(&self, eps: f64) -> f64 {
        self.scale * eps
    }

    fn lipschitz(&self) -> f64 {
        self.scale
    }

    fn growth(&self) -> f64 {
        self.scale
    }
}

/// Weighted 1-norm anisotropy `gamma(W) = sum_ij c_ij |W_ij|` with
/// componentwise Huber smoothing at threshold `eps`; uniform gap
/// `g(eps) = (sum_ij c_ij) * eps / 2`.
pub struct HuberFamily {
    weights: SMat,
    weight_sum: f64,
    weight_frob: f64,
}

impl HuberFamily {
    pub fn new(weights: SMat) -> Self {
        assert!(weights.as_slice().iter().all(|&c| c >= 0.0));
        let weight_sum = weights.as_slice().iter().sum();
        let weight_frob = weights.norm();
        assert!(weight_frob > 0.0, "at least one weight must be positive");
        Self { weights, weight_sum, weight_frob }
    }

    pub fn uniform(rows: usize, cols: usize, c: f64) -> Self {
        let mut w = SMat::zeros(rows, cols);
        for v in w.as_mut_slice() {
            *v = c;
        }
        Self::new(w)
    }

    #[inline]
    fn huber(x: f64, d: f64) -> f64 {
        if x.abs() <= d {
            x * x / (2.0 * d)
        } else {
            x.abs() - 0.5 * d
        }
    }
}

impl Anisotropy for HuberFamily {
    fn exact(&self, w: &SMat) -> f64 {
        let mut acc = 0.0;
        for (x, c) in w.as_slice().iter().zip(self.weights.as_slice()) {
            acc += c * x.abs();
        }
        acc
    }

    fn subgradient(&self, w: &SMat) -> SMat {
        let mut out = *w;
        for (x, c) in out.as_mut_slice().iter_mut().zip(self.weights.as_slice()) {
            *x = c * if *x > 0.0 {
                1.0
            } else if *x < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        out
    }

    fn smoothed(&self, w: &SMat, eps: f64) -> f64 {
        let mut acc = 0.0;
        for (x, c) in w.as_slice().iter().zip(self.weights.as_slice()) {
            acc += c * Self::huber(*x, eps);
        }
        acc
    }

    fn smoothed_grad(&self, w: &SMat, eps: f64) -> SMat {
        let mut out = *w;
        for (x, c) in out.as_mut_slice().iter_mut().zip(self.weights.as_slice()) {
            *x = c * (*x / eps).clamp(-1.0, 1.0);
        }
        out
    }

    fn smoothed_hess_apply(&self, w: &SMat, q: &SMat, eps: f64) -> SMat {
        let mut out = *q;
        for ((y, x), c) in out.as_mut_slice().iter_mut().zip(w.as_slice()).zip(self.weights.as_slice()) {
            *y = if x.abs() < eps { c / eps * *y } else { 0.0 };
        }
        out
    }

    fn smoothed_hess_scale(&self, w: &SMat, eps: f64) -> f64 {
        let mut scale = 0.0f64;
        for (x, c) in w.as_slice().iter().zip(self.weights.as_slice()) {
            if x.abs() < eps {
                scale = scale.max(c / eps);
            }
        }
        scale
    }

    fn gap_bound(&self, eps: f64) -> f64 {
        0.5 * self.weight_sum * eps
    }

    fn lipschitz(&self) -> f64 {
        self.weight_frob
    }

    fn growth(&self) -> f64 {
        // Cauchy-Schwarz: sum c|W| <= |c|_F |W|_F.
        self.weight_frob
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, scale: f64) -> SMat {
        let mut w = SMat::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                w[(i, j)] = rng.gen_range(-scale..scale);
            }
        }
        w
    }

    #[test]
    fn frobenius_family_at_origin() {
        let fam = FrobeniusFamily::new(1.0);
        let w = SMat::zeros(2, 2);
        assert_eq!(fam.smoothed(&w, 0.1), 0.1);
        assert_eq!(fam.smoothed_grad(&w, 0.1).norm(), 0.0);
        assert_eq!(fam.subgradient(&w).norm(), 0.0);
    }

    #[test]
    fn frobenius_gap_attained_at_origin() {
        let fam = FrobeniusFamily::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &eps in &[0.1, 0.01] {
            let origin_gap = fam.smoothed(&SMat::zeros(2, 2), eps) - 0.0;
            approx::assert_relative_eq!(origin_gap, fam.gap_bound(eps));
            for _ in 0..200 {
                let w = random_mat(&mut rng, 3.0);
                let gap = (fam.smoothed(&w, eps) - fam.exact(&w)).abs();
                assert!(gap <= fam.gap_bound(eps) + 1e-15);
            }
        }
    }

    #[test]
    fn frobenius_subgradient_at_smooth_point() {
        let fam = FrobeniusFamily::new(1.0);
        let w = SMat::from_rows(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        let g = fam.subgradient(&w);
        approx::assert_relative_eq!(g[(0, 0)], 0.6);
        approx::assert_relative_eq!(g[(1, 1)], 0.8);
    }

    #[test]
    fn huber_gap_bounded_by_half_delta_per_component() {
        let fam = HuberFamily::uniform(2, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 0.05;
        for _ in 0..500 {
            let w = random_mat(&mut rng, 2.0);
            let gap = fam.exact(&w) - fam.smoothed(&w, eps);
            assert!((0.0..=fam.gap_bound(eps) + 1e-15).contains(&gap));
        }
        // Attained when all four entries sit at the threshold.
        let mut at = SMat::zeros(2, 2);
        for v in at.as_mut_slice() {
            *v = eps;
        }
        approx::assert_relative_eq!(fam.exact(&at) - fam.smoothed(&at, eps), fam.gap_bound(eps));
    }

    #[test]
    fn smoothed_gradients_match_finite_differences() {
        let frob = FrobeniusFamily::new(0.7);
        let hub = HuberFamily::uniform(2, 2, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = 0.1;
        for _ in 0..100 {
            let w = random_mat(&mut rng, 2.0);
            for fam in [&frob as &dyn Anisotropy, &hub] {
                let g = fam.smoothed_grad(&w, eps);
                let fd_g = fd::grad_matrix(1e-6, &w, |m| fam.smoothed(m, eps));
                let err = fd_g.sub(&g).norm() / (1.0 + g.norm());
                assert!(err <= 1e-6, "fd error {err}");
            }
        }
    }

    #[test]
    fn smoothed_gradients_respect_lipschitz_bound() {
        let frob = FrobeniusFamily::new(2.0);
        let hub = HuberFamily::uniform(2, 2, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let w = random_mat(&mut rng, 5.0);
            for &eps in &[0.1, 0.01, 0.001] {
                assert!(frob.smoothed_grad(&w, eps).norm() <= frob.lipschitz() + 1e-13);
                assert!(hub.smoothed_grad(&w, eps).norm() <= hub.lipschitz() + 1e-13);
            }
        }
    }

    #[test]
    fn fidelity_gradient_saturates() {
        let pot = HuberFidelity::tether(2, 3.0, 1.0, vec![0], vec![0.5]);
        let x = [0.0, 0.0];
        for r in [-100.0, -1.0, 0.0, 1.0, 100.0] {
            let v = SVec::from_slice(&[0.5 + r, 0.0]);
            let g = pot.grad(0, &x, &v);
            assert!(g[0].abs() <= 3.0 * 1.0 + 1e-12, "grad {} at r {}", g[0], r);
            assert!(pot.eval(0, &x, &v) >= 0.0);
        }
    }

    #[test]
    fn fidelity_derivatives_match_finite_differences() {
        let pot = HuberFidelity::tether(2, 2.0, 0.5, vec![0, 1], vec![0.2, -0.1]);
        let x = [0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let v = SVec::from_slice(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let g = pot.grad(0, &x, &v);
            let fd_g = fd::grad_vec(1e-6, &v, |s| pot.eval(0, &x, s));
            assert!(fd_g.sub(&g).norm() / (1.0 + g.norm()) <= 1e-6);
            let h = pot.hess(0, &x, &v);
            for k in 0..2 {
                let col = fd::grad_vec(1e-6, &v, |s| pot.grad(0, &x, s)[k]);
                for l in 0..2 {
                    assert!((h[(k, l)] - col[l]).abs() <= 1e-6 * (1.0 + h[(k, l)].abs()));
                }
            }
        }
    }

    #[test]
    fn saturating_weight_bounds() {
        let w = SaturatingWeight::new(2, 0, 0.1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let v = SVec::from_slice(&[rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0)]);
            let val = w.eval(&v);
            assert!(val >= 0.1 && val <= w.sup() + 1e-15);
            assert!(w.grad(&v).norm() <= w.grad_sup() + 1e-13);
            let fd_g = fd::grad_vec(1e-6, &v, |s| w.eval(s));
            assert!(fd_g.sub(&w.grad(&v)).norm() <= 1e-6 * (1.0 + w.grad(&v).norm()));
        }
    }

    #[test]
    fn component_mobility_ellipticity() {
        let mob = ComponentMobility::new(
            SVec::from_slice(&[1.0, 0.2]),
            SVec::from_slice(&[0.0, 1.0]),
            0,
        );
        assert_eq!(mob.ellipticity(), 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v = SVec::from_slice(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
            let w = SVec::from_slice(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let quad = mob.eval(&v).matvec(&w).dot(&w);
            assert!(quad >= 0.2 * w.dot(&w) - 1e-14);
        }
    }
}
