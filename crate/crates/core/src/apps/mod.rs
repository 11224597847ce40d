//! The two motivating applications as ready-made configurations:
//! orientation-adaptive anisotropic image denoising and grain-boundary
//! evolution with unknown-dependent mobility.
//!
//! The governing theory fixes only the structure of the energy; the concrete
//! coefficient choices here (structure-tensor initialization, Voronoi
//! polycrystals, Huber-smoothed anisotropy weights, rotation coupling on the
//! orientation channel) are this crate's defaults.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{ops, FieldError, Grid, GridError, VectorField};
use crate::model::builtin::{
    ComponentMobility, ConstWeight, FidelityData, FrobeniusFamily, HuberFamily, HuberFidelity,
    IdentityCoupling, IdentityMobility, RotationCoupling, SaturatingWeight, ZeroPotential,
};
use crate::model::{ModelError, ModelSpec};
use crate::scheme::{run, RunError, StepParams, Trajectory};
use crate::tensor::{SMat, SVec};

pub mod pgm;

use pgm::{GrayImage, PgmError};

#[derive(Debug, Error)]
pub enum AppsError {
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error(transparent)]
    Run(#[from] Box<RunError>),
}

// ---------------------------------------------------------------------------
// Image loading and orientation initialization
// ---------------------------------------------------------------------------

/// Local dominant-gradient angle per pixel from the smoothed structure
/// tensor; zero wherever the image has no structure.
pub fn structure_tensor_orientation(
    gray: &[f64],
    width: usize,
    height: usize,
    smooth_passes: usize,
) -> Vec<f64> {
    assert_eq!(gray.len(), width * height);
    if height == 1 || width == 1 {
        return vec![0.0; gray.len()];
    }
    let at = |x: usize, y: usize| gray[y * width + x];
    let mut jxx = vec![0.0; gray.len()];
    let mut jxy = vec![0.0; gray.len()];
    let mut jyy = vec![0.0; gray.len()];
    for y in 0..height {
        for x in 0..width {
            // Central differences with replicated boundary.
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (yl, yr) = (y.saturating_sub(1), (y + 1).min(height - 1));
            let gx = (at(xr, y) - at(xl, y)) / (xr - xl).max(1) as f64;
            let gy = (at(x, yr) - at(x, yl)) / (yr - yl).max(1) as f64;
            let i = y * width + x;
            jxx[i] = gx * gx;
            jxy[i] = gx * gy;
            jyy[i] = gy * gy;
        }
    }
    // Separable binomial smoothing with replicated boundary.
    let mut smooth = |field: &mut Vec<f64>| {
        for _ in 0..smooth_passes {
            let mut tmp = field.clone();
            for y in 0..height {
                for x in 0..width {
                    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
                    tmp[y * width + x] = 0.25 * field[y * width + xl]
                        + 0.5 * field[y * width + x]
                        + 0.25 * field[y * width + xr];
                }
            }
            for y in 0..height {
                let (yl, yr) = (y.saturating_sub(1), (y + 1).min(height - 1));
                for x in 0..width {
                    field[y * width + x] = 0.25 * tmp[yl * width + x]
                        + 0.5 * tmp[y * width + x]
                        + 0.25 * tmp[yr * width + x];
                }
            }
        }
    };
    smooth(&mut jxx);
    smooth(&mut jxy);
    smooth(&mut jyy);
    (0..gray.len())
        .map(|i| 0.5 * (2.0 * jxy[i]).atan2(jxx[i] - jyy[i]))
        .collect()
}

/// Decode an image into a two-component state (intensity in `[0, 1]`,
/// orientation from the structure tensor) on a unit-spaced pixel grid.
pub fn image_to_field(image: &GrayImage) -> Result<VectorField, AppsError> {
    let (w, h) = (image.width, image.height);
    let gray: Vec<f64> = image.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let theta = structure_tensor_orientation(&gray, w, h, 2);
    let grid = if h == 1 {
        Grid::line(w, (w - 1) as f64)?
    } else if w == 1 {
        Grid::line(h, (h - 1) as f64)?
    } else {
        Grid::rect(w, h, (w - 1) as f64, (h - 1) as f64)?
    };
    let mut values = Vec::with_capacity(2 * gray.len());
    for i in 0..gray.len() {
        values.push(gray[i]);
        values.push(theta[i]);
    }
    Ok(VectorField::from_values(&grid, 2, values)?)
}

/// Load a P5 PGM into the two-component state.
pub fn load_image<R: std::io::Read>(reader: &mut R) -> Result<VectorField, AppsError> {
    let image = pgm::read_pgm(reader)?;
    image_to_field(&image)
}

/// Quantize one channel of a field back to an 8-bit image.
pub fn field_to_image(field: &VectorField, channel: usize) -> GrayImage {
    let grid = field.grid();
    let [nx, ny] = grid.node_counts();
    let m = field.components();
    pgm::quantize(
        (0..grid.num_nodes()).map(|node| field.values()[node * m + channel]),
        nx,
        if grid.dim() == 1 { 1 } else { ny },
    )
}

/// Synthetic striped test image: sinusoidal bands at the given angle plus
/// Gaussian pixel noise, clamped to `[0, 1]`.
pub fn stripe_image(
    n: usize,
    period: f64,
    angle_deg: f64,
    contrast: f64,
    noise: f64,
    seed: u64,
) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = angle_deg.to_radians();
    let (s, c) = phi.sin_cos();
    let mut gauss = move || -> f64 {
        // Box-Muller transform.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let phase = (x as f64 * c + y as f64 * s) * 2.0 * std::f64::consts::PI / period;
            let v = 0.5 + 0.5 * contrast * phase.sin() + noise * gauss();
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    GrayImage::new(n, n, pixels)
}

// ---------------------------------------------------------------------------
// Denoising
// ---------------------------------------------------------------------------

/// Orientation-adaptive denoising problem. The state carries the intensity
/// and a rotation angle; the anisotropy penalizes intensity gradients in the
/// rotated frame, so low `edge_cost` preserves transitions across edges while
/// `smooth_cost` flattens noise along them.
#[derive(Clone)]
pub struct ImageProblem {
    pub initial: VectorField,
    /// Fidelity target (the observed intensity), one value per node.
    pub data: Vec<f64>,
    pub fidelity_weight: f64,
    pub fidelity_delta: f64,
    /// Rotation coupling on (true) or axis-aligned baseline (false).
    pub adapted: bool,
    /// Anisotropy cost of the intensity gradient across edges (rotated
    /// x-direction).
    pub edge_cost: f64,
    /// Anisotropy cost along edges (rotated y-direction).
    pub smooth_cost: f64,
    /// Anisotropy cost on the orientation channel.
    pub theta_cost: f64,
    /// Overall anisotropy weight; zero reduces the flow to fidelity-driven
    /// linear diffusion.
    pub alpha_weight: f64,
    pub kappa: f64,
    pub t_final: f64,
}

impl ImageProblem {
    /// Default configuration for a loaded image state.
    pub fn new(initial: VectorField, t_final: f64) -> Result<Self, AppsError> {
        if initial.components() != 2 {
            return Err(AppsError::BadProblem(format!(
                "image state must have 2 components, got {}",
                initial.components()
            )));
        }
        let m = initial.components();
        let data: Vec<f64> =
            (0..initial.grid().num_nodes()).map(|n| initial.values()[n * m]).collect();
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(AppsError::BadProblem("image values must lie in [0, 1]".into()));
        }
        if !(t_final > 0.0) {
            return Err(AppsError::BadProblem("horizon must be positive".into()));
        }
        Ok(Self {
            initial,
            data,
            fidelity_weight: 0.5,
            fidelity_delta: 0.2,
            adapted: true,
            edge_cost: 0.15,
            smooth_cost: 1.5,
            theta_cost: 0.3,
            alpha_weight: 1.0,
            kappa: 2e-3,
            t_final,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.initial.grid()
    }

    /// Assemble the coefficient bundle.
    pub fn model(&self) -> Result<ModelSpec, AppsError> {
        if !(self.fidelity_weight >= 0.0) {
            return Err(AppsError::BadProblem("fidelity weight must be nonnegative".into()));
        }
        let dim = self.grid().dim();
        let coupling: Arc<dyn crate::model::Coupling> = if self.adapted && dim == 2 {
            Arc::new(RotationCoupling::new(2, 1))
        } else {
            Arc::new(IdentityCoupling::new(2, dim))
        };
        let anisotropy: Arc<dyn crate::model::Anisotropy> = if self.adapted && dim == 2 {
            Arc::new(HuberFamily::new(SMat::from_rows(
                2,
                2,
                &[self.edge_cost, self.smooth_cost, self.theta_cost, self.theta_cost],
            )))
        } else {
            Arc::new(FrobeniusFamily::new(0.5 * (self.edge_cost + self.smooth_cost)))
        };
        let potential: Arc<dyn crate::model::Potential> = if self.fidelity_weight > 0.0 {
            Arc::new(HuberFidelity::new(
                2,
                self.fidelity_weight,
                self.fidelity_delta,
                vec![0],
                FidelityData::PerNode(self.data.clone()),
            ))
        } else {
            Arc::new(ZeroPotential)
        };
        Ok(ModelSpec::new(
            2,
            dim,
            self.kappa,
            4.0,
            Arc::new(IdentityMobility::new(2)),
            Arc::new(ConstWeight::new(self.alpha_weight)),
            coupling,
            potential,
            anisotropy,
        )?)
    }
}

/// Run the denoising flow.
pub fn denoise(problem: &ImageProblem, params: &StepParams) -> Result<Trajectory, AppsError> {
    let spec = problem.model()?;
    Ok(run(&spec, &problem.initial, problem.t_final, params)?)
}

// ---------------------------------------------------------------------------
// Grain boundary motion
// ---------------------------------------------------------------------------

/// Two-field grain problem: order parameter and lattice orientation, with
/// saturating unknown-dependent mobility and orientation-gradient anisotropy.
#[derive(Clone)]
pub struct GrainProblem {
    pub initial: VectorField,
    pub kappa: f64,
    /// Anisotropy weights for the order-parameter and orientation rows.
    pub eta_cost: f64,
    pub theta_cost: f64,
    /// Weight `alpha(eta) = floor + gain * eta^2/(1+eta^2)`.
    pub alpha_floor: f64,
    pub alpha_gain: f64,
    /// Diagonal mobility floors/gains, driven by the order parameter.
    pub mobility_floor: [f64; 2],
    pub mobility_gain: [f64; 2],
    /// Potential pulling the order parameter back to 1 (grain interior).
    pub well_weight: f64,
    pub well_delta: f64,
    pub t_final: f64,
}

impl GrainProblem {
    pub fn new(initial: VectorField, t_final: f64) -> Result<Self, AppsError> {
        if initial.components() != 2 {
            return Err(AppsError::BadProblem(format!(
                "grain state must have 2 components, got {}",
                initial.components()
            )));
        }
        let m = initial.components();
        for node in 0..initial.grid().num_nodes() {
            let eta = initial.values()[node * m];
            if !(0.0..=1.0).contains(&eta) {
                return Err(AppsError::BadProblem(format!(
                    "order parameter must start in [0, 1], found {eta}"
                )));
            }
        }
        if !(t_final > 0.0) {
            return Err(AppsError::BadProblem("horizon must be positive".into()));
        }
        Ok(Self {
            initial,
            kappa: 2e-3,
            eta_cost: 0.05,
            theta_cost: 1.0,
            alpha_floor: 0.05,
            alpha_gain: 1.0,
            mobility_floor: [1.0, 0.2],
            mobility_gain: [0.0, 0.8],
            well_weight: 0.5,
            well_delta: 0.5,
            t_final,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.initial.grid()
    }

    pub fn model(&self) -> Result<ModelSpec, AppsError> {
        let dim = self.grid().dim();
        let potential: Arc<dyn crate::model::Potential> = if self.well_weight > 0.0 {
            Arc::new(HuberFidelity::tether(
                2,
                self.well_weight,
                self.well_delta,
                vec![0],
                vec![1.0],
            ))
        } else {
            Arc::new(ZeroPotential)
        };
        let mut weights = SMat::zeros(2, dim);
        for j in 0..dim {
            weights[(0, j)] = self.eta_cost;
            weights[(1, j)] = self.theta_cost;
        }
        Ok(ModelSpec::new(
            2,
            dim,
            self.kappa,
            4.0,
            Arc::new(ComponentMobility::new(
                SVec::from_slice(&self.mobility_floor),
                SVec::from_slice(&self.mobility_gain),
                0,
            )),
            Arc::new(SaturatingWeight::new(2, 0, self.alpha_floor, self.alpha_gain)),
            Arc::new(IdentityCoupling::new(2, dim)),
            potential,
            Arc::new(HuberFamily::new(weights)),
        )?)
    }
}

/// Voronoi-style polycrystal initial state: per-seed orientations, order
/// parameter dipped along cell boundaries. Deterministic in the seed.
pub fn make_polycrystal(
    grid: &Arc<Grid>,
    seeds: usize,
    rng_seed: u64,
) -> Result<VectorField, AppsError> {
    if seeds == 0 {
        return Err(AppsError::BadProblem("at least one seed is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let [lx, ly] = grid.extent();
    let points: Vec<([f64; 2], f64)> = (0..seeds)
        .map(|_| {
            let x = rng.gen_range(0.0..lx);
            let y = if grid.dim() == 2 { rng.gen_range(0.0..ly) } else { 0.0 };
            let theta = rng.gen_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
            ([x, y], theta)
        })
        .collect();
    let [hx, hy] = grid.spacing();
    let boundary_width = 2.0 * if grid.dim() == 2 { hx.max(hy) } else { hx };
    let dip = 0.8;
    Ok(VectorField::from_fn(grid, 2, |p| {
        let mut d1 = f64::INFINITY;
        let mut d2 = f64::INFINITY;
        let mut theta = 0.0;
        for (q, t) in &points {
            let dx = p[0] - q[0];
            let dy = if grid.dim() == 2 { p[1] - q[1] } else { 0.0 };
            let d = (dx * dx + dy * dy).sqrt();
            if d < d1 {
                d2 = d1;
                d1 = d;
                theta = *t;
            } else if d < d2 {
                d2 = d;
            }
        }
        let edge = if d2.is_finite() {
            (-((d2 - d1) / boundary_width).powi(2)).exp()
        } else {
            0.0
        };
        SVec::from_slice(&[1.0 - dip * edge, theta])
    }))
}

/// Run the grain-boundary flow.
pub fn grain_evolve(problem: &GrainProblem, params: &StepParams) -> Result<Trajectory, AppsError> {
    let spec = problem.model()?;
    Ok(run(&spec, &problem.initial, problem.t_final, params)?)
}

// ---------------------------------------------------------------------------
// Diagnostics shared by the demos
// ---------------------------------------------------------------------------

/// Quadrature variance of one channel around its mean.
pub fn channel_variance(field: &VectorField, channel: usize) -> f64 {
    let grid = field.grid();
    let m = field.components();
    let measure = grid.measure();
    let mean: f64 = (0..grid.num_nodes())
        .map(|n| grid.node_weight(n) * field.values()[n * m + channel])
        .sum::<f64>()
        / measure;
    (0..grid.num_nodes())
        .map(|n| {
            let d = field.values()[n * m + channel] - mean;
            grid.node_weight(n) * d * d
        })
        .sum::<f64>()
        / measure
}

/// Mean squared component of one channel's gradient along a direction.
pub fn directional_gradient_energy(field: &VectorField, channel: usize, dir: [f64; 2]) -> f64 {
    let grid = field.grid();
    let m = field.components();
    let n = grid.dim();
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let grad = ops::gradient(field);
    let mut acc = 0.0;
    for cell in 0..grid.num_cells() {
        let base = (cell * m + channel) * n;
        let mut proj = grad.values()[base] * dir[0] / norm;
        if n == 2 {
            proj += grad.values()[base + 1] * dir[1] / norm;
        }
        acc += grid.cell_weight() * proj * proj;
    }
    acc / grid.measure()
}

/// Width of a monotone 1D transition in one channel: total rise over the
/// steepest cell gradient.
pub fn transition_width(field: &VectorField, channel: usize) -> f64 {
    let grid = field.grid();
    assert_eq!(grid.dim(), 1);
    let m = field.components();
    let vals: Vec<f64> =
        (0..grid.num_nodes()).map(|n| field.values()[n * m + channel]).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grad = ops::gradient(field);
    let steepest = (0..grid.num_cells())
        .map(|c| grad.values()[c * m + channel].abs())
        .fold(0.0f64, f64::max);
    if steepest == 0.0 {
        f64::INFINITY
    } else {
        (max - min) / steepest
    }
}

/// Range of one channel over every state of a trajectory.
pub fn channel_range(traj: &Trajectory, channel: usize) -> (f64, f64) {
    let m = traj.state(0).components();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for state in traj.states() {
        for node in 0..state.grid().num_nodes() {
            let v = state.values()[node * m + channel];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests;
