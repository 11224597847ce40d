//! Convergence laboratory: refinement schedules with the coupled step-size
//! rule, Cauchy diagnostics between runs, residuals of the limit solution
//! properties, and sampled convex-analysis probes.
//!
//! The solution properties belong to the (never computable) limit, so the
//! reports here track residual trends across a refinement schedule rather
//! than pass/fail at a fixed level.

use serde::Serialize;
use thiserror::Error;

use crate::energy::{energy, energy_gap_bound};
use crate::grid::{ops, Grid, VectorField};
use crate::model::{Anisotropy, ModelSpec};
use crate::par;
use crate::scheme::{
    difference_quotient, interpolant, run, InterpKind, RunError, SchemeError, StepParams,
    Trajectory,
};
use crate::tensor::{SMat, SVec};
use std::sync::Arc;

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("invalid refinement schedule: {0}")]
    BadSchedule(String),
    #[error("trajectories live on different grids or horizons")]
    Incompatible,
    #[error("test-function battery is empty")]
    EmptyBattery,
    #[error("sample sequence is empty or not ordered")]
    BadSamples,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// One refinement level: the vanishing parameters and the coupled time step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefinementLevel {
    pub nu: f64,
    pub eps: f64,
    pub mu: f64,
    pub tau: f64,
}

/// A schedule of levels with `nu, eps, mu` strictly decreasing to zero and
/// `tau_n = (1/2) min(tau_base, nu_n, eps_n, mu_n, 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementSchedule {
    levels: Vec<RefinementLevel>,
}

impl RefinementSchedule {
    /// Geometric schedule `nu_n = eps_n = mu_n = start * ratio^n`.
    pub fn geometric(
        n_levels: usize,
        start: f64,
        ratio: f64,
        tau_base: f64,
    ) -> Result<Self, LimitsError> {
        if n_levels == 0 {
            return Err(LimitsError::BadSchedule("need at least one level".into()));
        }
        if !(start > 0.0 && start < 1.0) || !(ratio > 0.0 && ratio < 1.0) {
            return Err(LimitsError::BadSchedule(format!(
                "start {start} and ratio {ratio} must lie in (0, 1)"
            )));
        }
        let seq: Vec<f64> = (0..n_levels).map(|n| start * ratio.powi(n as i32)).collect();
        Self::from_sequences(&seq, &seq, &seq, tau_base)
    }

    /// Build from explicit sequences; all must be strictly decreasing inside
    /// `(0, 1)`.
    pub fn from_sequences(
        nu: &[f64],
        eps: &[f64],
        mu: &[f64],
        tau_base: f64,
    ) -> Result<Self, LimitsError> {
        if nu.is_empty() || nu.len() != eps.len() || nu.len() != mu.len() {
            return Err(LimitsError::BadSchedule(
                "sequences must be nonempty and of equal length".into(),
            ));
        }
        if !(tau_base > 0.0) {
            return Err(LimitsError::BadSchedule("tau_base must be positive".into()));
        }
        for seq in [nu, eps, mu] {
            for w in seq.windows(2) {
                if !(w[1] < w[0]) {
                    return Err(LimitsError::BadSchedule(
                        "sequences must be strictly decreasing".into(),
                    ));
                }
            }
            if seq.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(LimitsError::BadSchedule("entries must lie in (0, 1)".into()));
            }
        }
        let levels = (0..nu.len())
            .map(|n| RefinementLevel {
                nu: nu[n],
                eps: eps[n],
                mu: mu[n],
                tau: 0.5 * tau_base.min(nu[n]).min(eps[n]).min(mu[n]).min(1.0),
            })
            .collect();
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[RefinementLevel] {
        &self.levels
    }

    /// The coupling invariant every level satisfies by construction.
    pub fn coupling_holds(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.tau <= 0.5 * l.nu.min(l.eps).min(l.mu).min(1.0) + 1e-15)
    }
}

/// Run the scheme once per refinement level, all from the same initial state.
/// Solver tolerances are taken from `base`; the per-level `tau, nu, eps, mu`
/// come from the schedule. Levels run concurrently.
pub fn refine(
    spec: &ModelSpec,
    u0: &VectorField,
    t_final: f64,
    schedule: &RefinementSchedule,
    base: &StepParams,
) -> Result<Vec<Trajectory>, Box<RunError>> {
    let results = par::indexed_map(schedule.levels.len(), |i| {
        let l = schedule.levels[i];
        let mut params = *base;
        params.tau = l.tau;
        params.nu = l.nu;
        params.eps = l.eps;
        params.mu = l.mu;
        run(spec, u0, t_final, &params)
    });
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// Sorted union of two time partitions (within a tiny tolerance).
fn union_times(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).expect("times are finite"));
    all.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    all
}

/// Uniform-in-time distance of the affine interpolants of two runs:
/// the sup over the union of their time grids, which is exact because the
/// difference is piecewise affine and the norm is convex on each piece.
pub fn cauchy_metric(a: &Trajectory, b: &Trajectory) -> Result<f64, LimitsError> {
    if a.state(0).grid().as_ref() != b.state(0).grid().as_ref()
        || a.state(0).components() != b.state(0).components()
        || (a.horizon() - b.horizon()).abs() > 1e-9 * (1.0 + a.horizon())
    {
        return Err(LimitsError::Incompatible);
    }
    let horizon = a.horizon().min(b.horizon());
    let mut worst = 0.0f64;
    for &t in &union_times(a.times(), b.times()) {
        let t = t.min(horizon);
        let ua = interpolant(a, t, InterpKind::Linear)?;
        let ub = interpolant(b, t, InterpKind::Linear)?;
        worst = worst.max(ops::norm_h(&ua.sub(&ub)));
    }
    Ok(worst)
}

/// One evaluation of the variational-inequality residual.
#[derive(Debug, Clone, Serialize)]
pub struct ViSample {
    pub time: f64,
    pub test_index: usize,
    /// `LHS - RHS` of the inequality; nonpositive means satisfied.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViReport {
    pub samples: Vec<ViSample>,
    /// Largest positive part of the residual.
    pub worst_violation: f64,
    /// Largest signed residual (may be negative when all hold strictly).
    pub worst_signed: f64,
    pub battery: String,
}

/// Residual of the variational inequality satisfied by the limit: for each
/// sampled time and test function, evaluate `LHS - RHS` with the exact
/// anisotropy, its subgradient selection at the current gradient, and the
/// difference quotient as the time derivative.
pub fn vi_residual(
    spec: &ModelSpec,
    traj: &Trajectory,
    battery: &[VectorField],
    t_samples: &[f64],
) -> Result<ViReport, LimitsError> {
    if battery.is_empty() {
        return Err(LimitsError::EmptyBattery);
    }
    if t_samples.is_empty() {
        return Err(LimitsError::BadSamples);
    }
    let grid = traj.state(0).grid().clone();
    let m = traj.state(0).components();
    let n = grid.dim();
    for phi in battery {
        if phi.grid().as_ref() != grid.as_ref() || phi.components() != m {
            return Err(LimitsError::Incompatible);
        }
    }

    let mut samples = Vec::with_capacity(battery.len() * t_samples.len());
    let mut worst_violation = 0.0f64;
    let mut worst_signed = f64::NEG_INFINITY;
    let wc = grid.cell_weight();

    for &t in t_samples {
        let u = interpolant(traj, t, InterpKind::Linear)?;
        let dudt = difference_quotient(traj, t)?;
        let grad_u = ops::gradient(&u);
        let cells_u = ops::cell_average(&u);
        let uvals = u.values();
        let gvals = grad_u.values();

        for (test_index, phi) in battery.iter().enumerate() {
            let diff = u.sub(phi);
            let cells_diff = ops::cell_average(&diff);
            let grad_phi = ops::gradient(phi);
            let gphi = grad_phi.values();

            // Nodal pairings: mobility term and potential term.
            let dvals = diff.values();
            let qvals = dudt.values();
            let nodal = par::chunked_sum(grid.num_nodes(), |range| {
                let mut acc = 0.0;
                for node in range {
                    let un = SVec::from_slice(&uvals[node * m..(node + 1) * m]);
                    let dn = SVec::from_slice(&dvals[node * m..(node + 1) * m]);
                    let qn = SVec::from_slice(&qvals[node * m..(node + 1) * m]);
                    let a = spec.mobility.eval(&un).matvec(&qn);
                    let g = spec.potential.grad(node, &grid.node_pos(node), &un);
                    acc += grid.node_weight(node) * (a.dot(&dn) + g.dot(&dn));
                }
                acc
            });

            let dirichlet =
                spec.kappa * ops::inner_grad(&grad_u, &ops::gradient(&diff)).expect("same grid");

            // Cell pairings with the exact anisotropy and its subgradient.
            let cells_diff = &cells_diff;
            let cells_u = &cells_u;
            let cellsums = par::chunked_sum(grid.num_cells(), |range| {
                let mut acc = 0.0;
                for cell in range {
                    let vc = SVec::from_slice(&cells_u[cell * m..(cell + 1) * m]);
                    let dc = SVec::from_slice(&cells_diff[cell * m..(cell + 1) * m]);
                    let w = SMat::from_rows(m, n, &gvals[cell * m * n..(cell + 1) * m * n]);
                    let wphi = SMat::from_rows(m, n, &gphi[cell * m * n..(cell + 1) * m * n]);
                    let alpha = spec.weight.eval(&vc);
                    let dalpha = spec.weight.grad(&vc);
                    let b0 = spec.coupling.b0(&vc);
                    let b1 = spec.coupling.b1(&vc);
                    let bw = b0.matmul(&w).matmul(&b1);
                    let gamma_u = spec.anisotropy.exact(&bw);
                    let gamma_phi = spec.anisotropy.exact(&b0.matmul(&wphi).matmul(&b1));
                    let wstar = spec.anisotropy.subgradient(&bw);
                    let mut pairing = dalpha.dot(&dc) * gamma_u;
                    if alpha != 0.0 {
                        for k in 0..m {
                            if dc[k] == 0.0 {
                                continue;
                            }
                            let comp = spec
                                .coupling
                                .db0(&vc, k)
                                .matmul(&w)
                                .matmul(&b1)
                                .add(&b0.matmul(&w).matmul(&spec.coupling.db1(&vc, k)));
                            pairing += alpha * dc[k] * wstar.ddot(&comp);
                        }
                    }
                    acc += pairing + alpha * (gamma_u - gamma_phi);
                }
                wc * acc
            });

            let residual = nodal + dirichlet + cellsums;
            worst_violation = worst_violation.max(residual.max(0.0));
            worst_signed = worst_signed.max(residual);
            samples.push(ViSample { time: t, test_index, residual });
        }
    }
    Ok(ViReport {
        samples,
        worst_violation,
        worst_signed,
        battery: format!("{} fields on {:?} nodes", battery.len(), grid.node_counts()),
    })
}

/// One sampled `(s, t)` pair of the energy inequality.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyIneqSample {
    pub s: f64,
    pub t: f64,
    /// `(C_A/4) int_s^t |du/dt|^2` from the logged difference quotients.
    pub dissipation: f64,
    /// Telescoped form with the run's own regularized energy.
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
    pub violation: f64,
    /// Same inequality with the exact (unregularized) energy.
    pub lhs_exact: f64,
    pub rhs_exact: f64,
    pub cert_slack: f64,
    pub violation_exact_raw: f64,
    pub violation_exact_certified: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyIneqReport {
    pub samples: Vec<EnergyIneqSample>,
    pub worst_violation: f64,
    pub worst_exact_raw: f64,
    pub worst_exact_certified: f64,
}

impl EnergyIneqReport {
    /// True when the telescoped form holds within accumulated step tolerances
    /// and the exact-energy form holds within its certified slack.
    pub fn passes(&self) -> bool {
        self.worst_violation <= 0.0 && self.worst_exact_certified <= 0.0
    }
}

/// Check the energy inequality between sampled times, integrating the logged
/// difference quotients exactly and comparing both the run energy and the
/// exact-anisotropy energy (the latter with a certified smoothing slack).
pub fn energy_inequality_check(
    spec: &ModelSpec,
    traj: &Trajectory,
    s_samples: &[f64],
    t_samples: &[f64],
) -> Result<EnergyIneqReport, LimitsError> {
    if s_samples.is_empty() || t_samples.is_empty() {
        return Err(LimitsError::BadSamples);
    }
    let times = traj.times();
    let grid = traj.state(0).grid().clone();
    let c_a = spec.ellipticity();
    let params = traj.params();

    // Per-step squared quotients, computed once.
    let quot2: Vec<f64> = (0..traj.steps())
        .map(|i| {
            let delta = traj.state(i + 1).sub(traj.state(i));
            let dt = times[i + 1] - times[i];
            ops::inner_h(&delta, &delta).expect("same grid") / (dt * dt)
        })
        .collect();

    // Exact energies per state, computed once.
    let exact: Vec<f64> = (0..traj.len())
        .map(|i| energy(spec, traj.state(i), 0.0, 0.0).expect("validated state").total)
        .collect();
    let gap = energy_gap_bound(spec, &grid, params.eps);

    let backward_index = |t: f64| -> usize {
        if t <= times[0] {
            0
        } else {
            times.partition_point(|&ti| ti < t).min(times.len() - 1)
        }
    };
    let forward_index = |s: f64| -> usize {
        if s <= times[0] {
            0
        } else {
            times.partition_point(|&ti| ti < s).min(times.len() - 1) - 1
        }
    };

    let mut samples = Vec::new();
    let mut worst_violation = 0.0f64;
    let mut worst_exact_raw = 0.0f64;
    let mut worst_exact_certified = 0.0f64;
    for &s in s_samples {
        for &t in t_samples {
            if t < s {
                continue;
            }
            let horizon = traj.horizon();
            if s < -1e-12 || t > horizon * (1.0 + 1e-12) + 1e-12 {
                return Err(LimitsError::Scheme(SchemeError::TimeOutOfRange { t, horizon }));
            }
            let mut dissipation = 0.0;
            for i in 0..traj.steps() {
                let lo = times[i].max(s);
                let hi = times[i + 1].min(t);
                if hi > lo {
                    dissipation += (hi - lo) * quot2[i];
                }
            }
            dissipation *= 0.25 * c_a;

            let mt = backward_index(t);
            let ms = forward_index(s);
            let tol: f64 = (ms..mt).map(|i| traj.diagnostics()[i].dissipation_tol).sum();

            let lhs = dissipation + traj.energy_at(mt).total;
            let rhs = traj.energy_at(ms).total;
            let violation = (lhs - rhs - tol).max(0.0);

            let lhs_exact = dissipation + exact[mt];
            let rhs_exact = exact[ms];
            let reg_s = traj.energy_at(ms).regularizer;
            let cert_slack = 2.0 * gap + reg_s + tol;
            let violation_exact_raw = (lhs_exact - rhs_exact).max(0.0);
            let violation_exact_certified = (lhs_exact - rhs_exact - cert_slack).max(0.0);

            worst_violation = worst_violation.max(violation);
            worst_exact_raw = worst_exact_raw.max(violation_exact_raw);
            worst_exact_certified = worst_exact_certified.max(violation_exact_certified);
            samples.push(EnergyIneqSample {
                s,
                t,
                dissipation,
                lhs,
                rhs,
                tol,
                violation,
                lhs_exact,
                rhs_exact,
                cert_slack,
                violation_exact_raw,
                violation_exact_certified,
            });
        }
    }
    Ok(EnergyIneqReport { samples, worst_violation, worst_exact_raw, worst_exact_certified })
}

/// Violation of the subgradient inequality for one `(W, w*, X)` triple:
/// positive when `gamma(X) < gamma(W) + w* : (X - W)`.
pub fn subgradient_violation(family: &dyn Anisotropy, w: &SMat, wstar: &SMat, x: &SMat) -> f64 {
    family.exact(w) + wstar.ddot(&x.sub(w)) - family.exact(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubdiffReport {
    pub checked: usize,
    pub violations: usize,
    pub worst: f64,
    pub tolerance: f64,
}

/// Check the selected subgradients of a family against the convexity
/// inequality over a grid of probe points.
pub fn subdiff_membership_probe(
    family: &dyn Anisotropy,
    w_samples: &[SMat],
    x_samples: &[SMat],
) -> SubdiffReport {
    let tolerance = 1e-12;
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for w in w_samples {
        let wstar = family.subgradient(w);
        for x in x_samples {
            let v = subgradient_violation(family, w, &wstar, x);
            let scale = 1.0 + family.exact(w).abs() + family.exact(x).abs();
            checked += 1;
            worst = worst.max(v);
            if v > tolerance * scale {
                violations += 1;
            }
        }
    }
    SubdiffReport { checked, violations, worst, tolerance }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaConsistencySample {
    pub eps: f64,
    pub max_gap: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaConsistencyReport {
    pub samples: Vec<GammaConsistencySample>,
    pub gaps_nonincreasing: bool,
    pub within_bound: bool,
}

/// Pointwise smoothing-consistency probe: the sampled gap must stay within
/// the certified bound and be nonincreasing along a decreasing `eps`
/// sequence.
pub fn gamma_consistency_probe(
    family: &dyn Anisotropy,
    w_samples: &[SMat],
    eps_sequence: &[f64],
) -> Result<GammaConsistencyReport, LimitsError> {
    if w_samples.is_empty() || eps_sequence.is_empty() {
        return Err(LimitsError::BadSamples);
    }
    for w in eps_sequence.windows(2) {
        if !(w[1] < w[0]) {
            return Err(LimitsError::BadSamples);
        }
    }
    let mut samples = Vec::new();
    for &eps in eps_sequence {
        let mut max_gap = 0.0f64;
        for w in w_samples {
            max_gap = max_gap.max((family.smoothed(w, eps) - family.exact(w)).abs());
        }
        samples.push(GammaConsistencySample { eps, max_gap, bound: family.gap_bound(eps) });
    }
    let gaps_nonincreasing = samples.windows(2).all(|w| w[1].max_gap <= w[0].max_gap + 1e-15);
    let within_bound = samples.iter().all(|s| s.max_gap <= s.bound + 1e-12);
    Ok(GammaConsistencyReport { samples, gaps_nonincreasing, within_bound })
}

/// Deterministic battery of smooth low-frequency test fields compatible with
/// the Neumann boundary (cosine modes plus constants).
pub fn smooth_battery(grid: &Arc<Grid>, m: usize, count: usize, amplitude: f64) -> Vec<VectorField> {
    let [lx, ly] = grid.extent();
    (0..count)
        .map(|j| {
            let kx = (j % 3) as f64;
            let ky = ((j / 3) % 3) as f64;
            let shift = 0.1 * j as f64;
            VectorField::from_fn(grid, m, |p| {
                let mut v = SVec::zeros(m);
                let mode = (kx * std::f64::consts::PI * p[0] / lx).cos()
                    * if grid.dim() == 2 {
                        (ky * std::f64::consts::PI * p[1] / ly.max(1e-300)).cos()
                    } else {
                        1.0
                    };
                for c in 0..m {
                    v[c] = amplitude * mode / (1.0 + c as f64) + shift;
                }
                v
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin::{FrobeniusFamily, HuberFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn heat_trajectory(n: usize, tau: f64, t_final: f64) -> (ModelSpec, Trajectory) {
        let spec = ModelSpec::heat(1, 1, 1.0).unwrap();
        let grid = Grid::line(n, 1.0).unwrap();
        let u0 = VectorField::from_fn(&grid, 1, |p| {
            SVec::from_slice(&[(std::f64::consts::PI * p[0]).cos()])
        });
        let params = StepParams::new(tau, 0.0, 0.0, 0.0).unwrap().with_tolerance(1e-12);
        let traj = run(&spec, &u0, t_final, &params).unwrap();
        (spec, traj)
    }

    #[test]
    fn schedule_coupling_invariant() {
        let s = RefinementSchedule::geometric(5, 0.5, 0.5, 0.1).unwrap();
        assert!(s.coupling_holds());
        for (n, l) in s.levels().iter().enumerate() {
            approx::assert_relative_eq!(l.nu, 0.5f64.powi(n as i32 + 1));
            assert!(l.tau <= 0.5 * l.nu.min(l.eps).min(l.mu));
        }
        assert!(RefinementSchedule::geometric(0, 0.5, 0.5, 0.1).is_err());
        assert!(
            RefinementSchedule::from_sequences(&[0.5, 0.5], &[0.5, 0.2], &[0.5, 0.2], 0.1).is_err()
        );
    }

    #[test]
    fn refine_single_level_matches_plain_run() {
        let spec = ModelSpec::heat(1, 1, 1.0).unwrap();
        let grid = Grid::line(16, 1.0).unwrap();
        let u0 = VectorField::from_fn(&grid, 1, |p| SVec::from_slice(&[p[0] * (1.0 - p[0])]));
        let schedule = RefinementSchedule::geometric(1, 0.5, 0.5, 0.1).unwrap();
        let base = StepParams::new(1.0, 0.0, 0.0, 0.0).unwrap().with_tolerance(1e-11);
        let runs = refine(&spec, &u0, 0.2, &schedule, &base).unwrap();
        assert_eq!(runs.len(), 1);
        let l = schedule.levels()[0];
        let mut params = base;
        params.tau = l.tau;
        params.nu = l.nu;
        params.eps = l.eps;
        params.mu = l.mu;
        let direct = run(&spec, &u0, 0.2, &params).unwrap();
        assert_eq!(runs[0].times(), direct.times());
        let d = runs[0].state(runs[0].len() - 1).sub(direct.state(direct.len() - 1));
        assert_eq!(ops::norm_h(&d), 0.0);
    }

    #[test]
    fn cauchy_metric_properties() {
        let (_, a) = heat_trajectory(16, 0.02, 0.2);
        let (_, b) = heat_trajectory(16, 0.01, 0.2);
        let (_, c) = heat_trajectory(16, 0.005, 0.2);
        assert_eq!(cauchy_metric(&a, &a).unwrap(), 0.0);
        let dab = cauchy_metric(&a, &b).unwrap();
        let dba = cauchy_metric(&b, &a).unwrap();
        assert_eq!(dab, dba);
        let dbc = cauchy_metric(&b, &c).unwrap();
        let dac = cauchy_metric(&a, &c).unwrap();
        assert!(dac <= dab + dbc + 1e-15);
        assert!(dab > 0.0);
    }

    #[test]
    fn cauchy_metric_first_order_in_tau() {
        // Backward Euler is first order: distances between consecutive
        // tau-halvings shrink by about one half.
        let (_, t1) = heat_trajectory(24, 0.02, 0.2);
        let (_, t2) = heat_trajectory(24, 0.01, 0.2);
        let (_, t3) = heat_trajectory(24, 0.005, 0.2);
        let d12 = cauchy_metric(&t1, &t2).unwrap();
        let d23 = cauchy_metric(&t2, &t3).unwrap();
        let ratio = d23 / d12;
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn vi_residual_vanishes_for_phi_equal_to_state() {
        let (spec, traj) = heat_trajectory(16, 0.02, 0.2);
        let t = 0.1;
        let u = interpolant(&traj, t, InterpKind::Linear).unwrap();
        let report = vi_residual(&spec, &traj, &[u], &[t]).unwrap();
        assert!(report.worst_violation <= 1e-12, "violation {}", report.worst_violation);
        assert!(report.samples[0].residual.abs() <= 1e-12);
    }

    #[test]
    fn vi_residual_first_order_optimality_on_heat() {
        // phi = u(t) + delta w at a grid time: the residual collapses to
        // -delta * (scheme residual, w), so a converged step makes it vanish
        // to first order in delta times the solver tolerance. This is the
        // optimality check against the direct solve behind each step.
        let (spec, traj) = heat_trajectory(24, 0.01, 0.2);
        let grid = traj.state(0).grid().clone();
        let w = VectorField::from_fn(&grid, 1, |p| {
            SVec::from_slice(&[(2.0 * std::f64::consts::PI * p[0]).cos()])
        });
        // Evaluate at a grid time so the interpolant is a scheme iterate.
        let t = traj.times()[traj.len() / 2];
        let u = interpolant(&traj, t, InterpKind::Linear).unwrap();
        for delta in [1e-3, 1e-2, 1e-1] {
            let phi = u.add_scaled(delta, &w);
            let report = vi_residual(&spec, &traj, &[phi], &[t]).unwrap();
            let r = report.samples[0].residual;
            // tol_residual = 1e-12 per step; allow slack for rounding.
            assert!(
                r.abs() <= delta * 1e-9 * ops::norm_h(&w).max(1.0),
                "delta {delta}: residual {r} not first-order small"
            );
        }
    }

    #[test]
    fn energy_inequality_trivial_and_logged() {
        let (spec, traj) = heat_trajectory(16, 0.02, 0.2);
        // s = t: inequality reduces to E(t) <= E(t).
        let r = energy_inequality_check(&spec, &traj, &[0.1], &[0.1]).unwrap();
        assert!(r.passes(), "worst {}", r.worst_violation);
        // Full battery including s = 0.
        let times: Vec<f64> = traj.times().to_vec();
        let r = energy_inequality_check(&spec, &traj, &times, &times).unwrap();
        assert!(r.passes(), "worst {}", r.worst_violation);
        assert!(!r.samples.is_empty());
    }

    #[test]
    fn subdiff_probe_analytic_selections_are_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mats = |n: usize, scale: f64| -> Vec<SMat> {
            (0..n)
                .map(|_| {
                    let mut w = SMat::zeros(2, 2);
                    for i in 0..2 {
                        for j in 0..2 {
                            w[(i, j)] = rng.gen_range(-scale..scale);
                        }
                    }
                    w
                })
                .collect()
        };
        let ws = mats(20, 2.0);
        let xs = mats(50, 4.0);
        for family in
            [&FrobeniusFamily::new(1.0) as &dyn Anisotropy, &HuberFamily::uniform(2, 2, 1.0)]
        {
            let report = subdiff_membership_probe(family, &ws, &xs);
            assert_eq!(report.violations, 0, "worst {}", report.worst);
        }
    }

    #[test]
    fn subdiff_probe_detects_corrupted_selection() {
        let family = FrobeniusFamily::new(1.0);
        let w = SMat::from_rows(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let corrupted = family.subgradient(&w).scaled(1.5);
        let mut detected = false;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut x = SMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    x[(i, j)] = rng.gen_range(-3.0..3.0);
                }
            }
            if subgradient_violation(&family, &w, &corrupted, &x) > 1e-9 {
                detected = true;
            }
        }
        assert!(detected);
    }

    #[test]
    fn smoothed_gradient_near_kink_violations_bounded_by_gap() {
        // Using grad gamma_eps as a surrogate subgradient of the exact gamma
        // can violate the inequality, but never by more than twice the
        // uniform gap (gamma_eps is convex and within g(eps) of gamma).
        let family = FrobeniusFamily::new(1.0);
        let eps = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let mut w = SMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    w[(i, j)] = rng.gen_range(-0.2..0.2);
                }
            }
            let surrogate = family.smoothed_grad(&w, eps);
            let mut x = SMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    x[(i, j)] = rng.gen_range(-2.0..2.0);
                }
            }
            let v = subgradient_violation(&family, &w, &surrogate, &x);
            assert!(v <= 2.0 * family.gap_bound(eps) + 1e-12, "violation {v}");
        }
    }

    #[test]
    fn gamma_probe_reports_exact_gap_for_norm_family() {
        let family = FrobeniusFamily::new(1.0);
        let mut ws = vec![SMat::zeros(2, 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut w = SMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    w[(i, j)] = rng.gen_range(-5.0..5.0);
                }
            }
            ws.push(w);
        }
        let eps_seq = [0.1, 0.01, 0.001];
        let report = gamma_consistency_probe(&family, &ws, &eps_seq).unwrap();
        assert!(report.gaps_nonincreasing && report.within_bound);
        // Zero matrix included: the gap bound is attained exactly.
        for s in &report.samples {
            approx::assert_relative_eq!(s.max_gap, s.eps);
        }
        // A far-out sample: sqrt(100.01) - 10 is about 5e-4 <= 0.1.
        let mut big = SMat::zeros(1, 1);
        big[(0, 0)] = 10.0;
        let gap = family.smoothed(&big, 0.1) - family.exact(&big);
        assert!(gap > 0.0 && gap < 5.1e-4);
    }

    #[test]
    fn gamma_probe_huber_gap_bound() {
        let family = HuberFamily::uniform(2, 2, 1.0);
        let mut ws = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let mut w = SMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    w[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            ws.push(w);
        }
        let report = gamma_consistency_probe(&family, &ws, &[0.1, 0.05, 0.01]).unwrap();
        assert!(report.within_bound);
        // Per-component gap never exceeds eps/2, so four components give the
        // bound 4 * eps / 2.
        for s in &report.samples {
            assert!(s.bound <= 2.0 * s.eps + 1e-15);
        }
    }

    #[test]
    fn battery_is_deterministic_and_sized() {
        let grid = Grid::rect(6, 6, 1.0, 1.0).unwrap();
        let a = smooth_battery(&grid, 2, 8, 0.5);
        let b = smooth_battery(&grid, 2, 8, 0.5);
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn probes_reject_bad_input() {
        let (spec, traj) = heat_trajectory(8, 0.05, 0.1);
        assert!(matches!(vi_residual(&spec, &traj, &[], &[0.05]), Err(LimitsError::EmptyBattery)));
        let family = FrobeniusFamily::new(1.0);
        assert!(gamma_consistency_probe(&family, &[SMat::zeros(1, 1)], &[0.1, 0.2]).is_err());
    }
}
