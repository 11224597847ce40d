//! The semi-implicit time stepper.
//!
//! Each step solves the nonlinear system assembled in [`residual`] and then
//! certifies the discrete dissipation inequality
//!
//! ```text
//! C_A/(4 tau) |u - u_prev|_H^2 + mu/(2 tau) |grad(u - u_prev)|_H^2
//!     + E_{nu,eps}(u)  <=  E_{nu,eps}(u_prev) + tol
//! ```
//!
//! with `tol = 1e-10 (1 + E_{nu,eps}(u_prev))`. A converged solve that fails
//! the inequality is discarded and retried with half the time step; the
//! theory guarantees acceptance once the step is small enough, so halving is
//! the a-posteriori substitute for the non-constructive step-size threshold.
//! Accepted halvings are sticky within a run.

use thiserror::Error;

use crate::energy::{energy, EnergyBreakdown, EnergyError};
use crate::grid::{ops, FieldError, VectorField};
use crate::model::{ModelError, ModelSpec};

mod newton;
mod residual;

pub use residual::energy_gradient;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid step parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("time {t} outside the trajectory range [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("state contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Step(#[from] StepFailure),
}

impl From<EnergyError> for SchemeError {
    fn from(e: EnergyError) -> Self {
        match e {
            EnergyError::Model(m) => SchemeError::Model(m),
            EnergyError::BadParameter { name, value, range } => {
                SchemeError::BadParams(format!("{name} = {value} outside {range}"))
            }
        }
    }
}

/// Terminal failure of one step after exhausting retries.
#[derive(Debug, Clone, Error)]
#[error("step failed at tau = {tau:.3e} after {halvings} halvings: {reason}")]
pub struct StepFailure {
    pub tau: f64,
    pub halvings: u32,
    pub reason: String,
}

/// Parameters of the per-step problem and its solver.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub tau: f64,
    pub nu: f64,
    pub eps: f64,
    pub mu: f64,
    /// Residual tolerance in the weighted nodal norm.
    pub tol_residual: f64,
    pub max_newton: usize,
    /// Retry budget for dissipation-driven time step halving.
    pub max_halvings: usize,
}

impl StepParams {
    pub fn new(tau: f64, nu: f64, eps: f64, mu: f64) -> Result<Self, SchemeError> {
        let params = Self {
            tau,
            nu,
            eps,
            mu,
            tol_residual: 1e-8,
            max_newton: 50,
            max_halvings: 16,
        };
        params.check()?;
        Ok(params)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol_residual = tol;
        self
    }

    pub fn with_max_newton(mut self, n: usize) -> Self {
        self.max_newton = n;
        self
    }

    pub fn with_max_halvings(mut self, n: usize) -> Self {
        self.max_halvings = n;
        self
    }

    fn check(&self) -> Result<(), SchemeError> {
        if !(self.tau > 0.0) {
            return Err(SchemeError::BadParams(format!("tau = {} must be positive", self.tau)));
        }
        for (name, v) in [("nu", self.nu), ("mu", self.mu), ("eps", self.eps)] {
            if !(0.0..1.0).contains(&v) {
                return Err(SchemeError::BadParams(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(self.tol_residual > 0.0) {
            return Err(SchemeError::BadParams("tol_residual must be positive".into()));
        }
        Ok(())
    }

    /// Model-aware validation: an active anisotropy requires a positive
    /// smoothing parameter, since the step solves with the smoothed gradient.
    pub fn check_for(&self, spec: &ModelSpec) -> Result<(), SchemeError> {
        self.check()?;
        if spec.weight.sup() > 0.0 && self.eps == 0.0 {
            return Err(SchemeError::BadParams(
                "eps must lie in (0, 1) when the anisotropy weight is not identically zero".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step record: solver effort, the time step actually used, and the two
/// sides of the dissipation inequality.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepDiagnostics {
    pub tau_used: f64,
    pub halvings: u32,
    pub newton_iters: u32,
    pub picard_iters: u32,
    pub residual_norm: f64,
    pub dissipation_lhs: f64,
    pub dissipation_rhs: f64,
    pub dissipation_tol: f64,
    /// Energy breakdown at the accepted new state.
    pub energy: EnergyBreakdown,
}

/// Discrete trajectory with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<VectorField>,
    diagnostics: Vec<StepDiagnostics>,
    initial_energy: EnergyBreakdown,
    params: StepParams,
}

impl Trajectory {
    fn new(u0: VectorField, initial_energy: EnergyBreakdown, params: StepParams) -> Self {
        Self {
            times: vec![0.0],
            states: vec![u0],
            diagnostics: Vec::new(),
            initial_energy,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[VectorField] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &VectorField {
        &self.states[i]
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial state")
    }

    pub fn params(&self) -> &StepParams {
        &self.params
    }

    pub fn initial_energy(&self) -> &EnergyBreakdown {
        &self.initial_energy
    }

    /// Energy breakdown of state `i` (initial state included).
    pub fn energy_at(&self, i: usize) -> &EnergyBreakdown {
        if i == 0 {
            &self.initial_energy
        } else {
            &self.diagnostics[i - 1].energy
        }
    }

    /// Energy log: one row per state, with the dissipation record of the step
    /// that produced it (zeros for the initial row).
    pub fn energy_csv(&self) -> String {
        let mut out = String::from("step,time,diss_lhs,diss_rhs,");
        out.push_str(EnergyBreakdown::CSV_FIELDS);
        out.push_str(",newton_iters,tau\n");
        out.push_str(&format!(
            "0,{},0,0,{},0,0\n",
            self.times[0],
            self.initial_energy.csv_cells()
        ));
        for (i, d) in self.diagnostics.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                i + 1,
                self.times[i + 1],
                d.dissipation_lhs,
                d.dissipation_rhs,
                d.energy.csv_cells(),
                d.newton_iters,
                d.tau_used
            ));
        }
        out
    }
}

/// Run failure carrying the part of the trajectory computed so far.
#[derive(Debug)]
pub struct RunError {
    pub partial: Trajectory,
    pub source: SchemeError,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run stopped at t = {} after {} steps: {}",
            self.partial.horizon(),
            self.partial.steps(),
            self.source
        )
    }
}

impl std::error::Error for RunError {}

/// The semi-implicit residual at trial state `v`, as a nodal field
/// representing the weak form against the quadrature inner product.
pub fn step_residual(
    spec: &ModelSpec,
    v: &VectorField,
    u_prev: &VectorField,
    params: &StepParams,
) -> Result<VectorField, SchemeError> {
    params.check_for(spec)?;
    spec.check_grid(u_prev.grid(), u_prev.components())?;
    u_prev.same_shape(v)?;
    if !v.is_finite() {
        return Err(SchemeError::NonFinite);
    }
    let ctx = residual::StepContext::new(spec, u_prev, params, params.tau);
    Ok(ctx.residual(v))
}

/// Directional derivative of [`step_residual`] in `v` (the Newton operator).
pub fn step_jacobian_apply(
    spec: &ModelSpec,
    v: &VectorField,
    u_prev: &VectorField,
    params: &StepParams,
    direction: &VectorField,
) -> Result<VectorField, SchemeError> {
    params.check_for(spec)?;
    spec.check_grid(u_prev.grid(), u_prev.components())?;
    u_prev.same_shape(v)?;
    u_prev.same_shape(direction)?;
    let ctx = residual::StepContext::new(spec, u_prev, params, params.tau);
    let lin = ctx.linearize(v);
    Ok(ctx.jacobian_apply(&lin, direction, false))
}

/// Solve one step: Newton solve plus the dissipation certificate, retrying
/// with halved time steps on failure.
pub fn solve_step(
    spec: &ModelSpec,
    u_prev: &VectorField,
    params: &StepParams,
) -> Result<(VectorField, StepDiagnostics), SchemeError> {
    params.check_for(spec)?;
    spec.check_grid(u_prev.grid(), u_prev.components())?;
    if !u_prev.is_finite() {
        return Err(SchemeError::NonFinite);
    }
    let e_prev = energy(spec, u_prev, params.nu, params.eps)?;
    solve_step_inner(spec, u_prev, params, &e_prev).map_err(SchemeError::Step)
}

fn solve_step_inner(
    spec: &ModelSpec,
    u_prev: &VectorField,
    params: &StepParams,
    e_prev: &EnergyBreakdown,
) -> Result<(VectorField, StepDiagnostics), StepFailure> {
    let c_a = spec.ellipticity();
    let tol_e = 1e-10 * (1.0 + e_prev.total);
    let mut tau = params.tau;
    let mut last_reason = String::new();

    for halving in 0..=params.max_halvings as u32 {
        let ctx = residual::StepContext::new(spec, u_prev, params, tau);
        match newton::solve(&ctx, params.tol_residual, params.max_newton) {
            Ok(out) => {
                let delta = out.v.sub(u_prev);
                let grad_delta = ops::gradient(&delta);
                let h2 = ops::inner_h(&delta, &delta).expect("same grid");
                let g2 = ops::inner_grad(&grad_delta, &grad_delta).expect("same grid");
                let e_next = energy(spec, &out.v, params.nu, params.eps)
                    .expect("validated parameters");
                let lhs = c_a / (4.0 * tau) * h2 + params.mu / (2.0 * tau) * g2 + e_next.total;
                let rhs = e_prev.total;
                if lhs <= rhs + tol_e {
                    let diag = StepDiagnostics {
                        tau_used: tau,
                        halvings: halving,
                        newton_iters: out.newton_iters,
                        picard_iters: out.picard_iters,
                        residual_norm: out.residual_norm,
                        dissipation_lhs: lhs,
                        dissipation_rhs: rhs,
                        dissipation_tol: tol_e,
                        energy: e_next,
                    };
                    return Ok((out.v, diag));
                }
                last_reason = format!(
                    "dissipation inequality violated by {:.3e}",
                    lhs - rhs - tol_e
                );
            }
            Err(fail) => {
                last_reason = fail.to_string();
            }
        }
        tau *= 0.5;
    }
    Err(StepFailure {
        tau: tau * 2.0,
        halvings: params.max_halvings as u32,
        reason: last_reason,
    })
}

/// March the scheme over `[0, t_final]`.
pub fn run(
    spec: &ModelSpec,
    u0: &VectorField,
    t_final: f64,
    params: &StepParams,
) -> Result<Trajectory, Box<RunError>> {
    let setup = (|| -> Result<Trajectory, SchemeError> {
        params.check_for(spec)?;
        spec.check_grid(u0.grid(), u0.components())?;
        if !(t_final > 0.0) {
            return Err(SchemeError::BadParams(format!(
                "t_final = {t_final} must be positive"
            )));
        }
        if !u0.is_finite() {
            return Err(SchemeError::NonFinite);
        }
        let e0 = energy(spec, u0, params.nu, params.eps)?;
        Ok(Trajectory::new(u0.clone(), e0, *params))
    })();
    let mut traj = match setup {
        Ok(t) => t,
        Err(source) => {
            // No steps were attempted; hand back a placeholder trajectory so
            // the error type stays uniform.
            let empty = Trajectory::new(
                u0.clone(),
                EnergyBreakdown {
                    dirichlet: 0.0,
                    anisotropy: 0.0,
                    potential: 0.0,
                    regularizer: 0.0,
                    total: 0.0,
                },
                *params,
            );
            return Err(Box::new(RunError { partial: empty, source }));
        }
    };

    const MAX_STEPS: usize = 1_000_000;
    let mut tau_current = params.tau;
    let mut t = 0.0;
    let end_tol = 1e-12 * t_final.max(1.0);

    while t < t_final - end_tol {
        if traj.steps() >= MAX_STEPS {
            return Err(Box::new(RunError {
                partial: traj,
                source: SchemeError::BadParams(format!("step budget {MAX_STEPS} exhausted")),
            }));
        }
        let tau_try = tau_current.min(t_final - t);
        let mut step_params = *params;
        step_params.tau = tau_try;
        let e_prev = traj.energy_at(traj.len() - 1).to_owned();
        match solve_step_inner(spec, traj.state(traj.len() - 1), &step_params, &e_prev) {
            Ok((u_next, diag)) => {
                if diag.tau_used < tau_try {
                    tau_current = diag.tau_used;
                }
                t += diag.tau_used;
                if (t_final - t).abs() <= end_tol {
                    t = t_final;
                }
                traj.times.push(t);
                traj.states.push(u_next);
                traj.diagnostics.push(diag);
            }
            Err(failure) => {
                return Err(Box::new(RunError { partial: traj, source: failure.into() }));
            }
        }
    }
    Ok(traj)
}

/// Piecewise reconstructions of a discrete trajectory in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpKind {
    /// Piecewise affine.
    Linear,
    /// Right-continuous steps: the value on `(t_{i-1}, t_i]` is `u_i`.
    Backward,
    /// Lagged steps: the value on `(t_i, t_{i+1}]` is `u_i`.
    Forward,
}

/// Evaluate a time interpolant of the trajectory.
pub fn interpolant(
    traj: &Trajectory,
    t: f64,
    kind: InterpKind,
) -> Result<VectorField, SchemeError> {
    let horizon = traj.horizon();
    let tol = 1e-12 * horizon.max(1.0);
    if t < -tol || t > horizon + tol {
        return Err(SchemeError::TimeOutOfRange { t, horizon });
    }
    let t = t.clamp(0.0, horizon);
    let times = traj.times();
    if t <= times[0] {
        return Ok(traj.state(0).clone());
    }
    // Smallest i with times[i] >= t; t lies in (times[i-1], times[i]].
    let i = times.partition_point(|&ti| ti < t);
    debug_assert!(i >= 1 && i < times.len());
    match kind {
        InterpKind::Backward => Ok(traj.state(i).clone()),
        InterpKind::Forward => Ok(traj.state(i - 1).clone()),
        InterpKind::Linear => {
            let theta = (t - times[i - 1]) / (times[i] - times[i - 1]);
            let mut out = traj.state(i - 1).clone();
            out.scale(1.0 - theta);
            out.axpy(theta, traj.state(i));
            Ok(out)
        }
    }
}

/// Difference quotient of the step whose interval contains `t` (the a.e.
/// derivative of the piecewise-affine interpolant).
pub fn difference_quotient(traj: &Trajectory, t: f64) -> Result<VectorField, SchemeError> {
    let horizon = traj.horizon();
    let tol = 1e-12 * horizon.max(1.0);
    if t < -tol || t > horizon + tol {
        return Err(SchemeError::TimeOutOfRange { t, horizon });
    }
    let times = traj.times();
    let t = t.clamp(0.0, horizon);
    let i = times.partition_point(|&ti| ti < t).clamp(1, times.len() - 1);
    let dt = times[i] - times[i - 1];
    let mut out = traj.state(i).sub(traj.state(i - 1));
    out.scale(1.0 / dt);
    Ok(out)
}
