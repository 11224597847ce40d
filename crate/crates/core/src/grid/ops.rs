//! Mimetic differential operators and quadrature inner products.
//!
//! `gradient` maps nodal values to cell values by forward/averaged
//! differences; `divergence` is its exact negative adjoint with respect to
//! the trapezoid node quadrature and the uniform cell quadrature, so
//! `-(div Z, w)_h = (Z, grad w)_h` holds to rounding error for every pair of
//! fields. All operators annihilate constants, which is the discrete version
//! of the homogeneous Neumann boundary condition.
//!
//! The [`serial`] module holds the reference kernels; the top-level functions
//! dispatch to rayon-chunked versions under the `parallel` feature and are
//! bit-identical to the serial ones.

use std::sync::Arc;

use super::{FieldError, Grid, MatrixField, VectorField};
use crate::par;

/// Weighted L2 inner product of nodal fields.
pub fn inner_h(a: &VectorField, b: &VectorField) -> Result<f64, FieldError> {
    a.same_shape(b)?;
    let grid = a.grid().clone();
    let m = a.components();
    let (av, bv) = (a.values(), b.values());
    Ok(par::chunked_sum(grid.num_nodes(), |range| {
        let mut acc = 0.0;
        for node in range {
            let mut dot = 0.0;
            for k in 0..m {
                dot += av[node * m + k] * bv[node * m + k];
            }
            acc += grid.node_weight(node) * dot;
        }
        acc
    }))
}

/// Weighted L2 inner product of cell (gradient) fields, using the Frobenius
/// product per cell.
pub fn inner_grad(a: &MatrixField, b: &MatrixField) -> Result<f64, FieldError> {
    a.same_shape(b)?;
    let w = a.grid().cell_weight();
    let (av, bv) = (a.values(), b.values());
    let sum = par::chunked_sum(av.len(), |range| {
        let mut acc = 0.0;
        for i in range {
            acc += av[i] * bv[i];
        }
        acc
    });
    Ok(w * sum)
}

/// H-norm of a nodal field.
pub fn norm_h(a: &VectorField) -> f64 {
    inner_h(a, a).expect("field is consistent with itself").sqrt()
}

/// Quadrature norm of a cell field.
pub fn norm_grad(a: &MatrixField) -> f64 {
    inner_grad(a, a).expect("field is consistent with itself").sqrt()
}

/// Cell-wise discrete gradient.
pub fn gradient(u: &VectorField) -> MatrixField {
    let grid = u.grid().clone();
    let mut out = MatrixField::zeros(&grid, u.components());
    let stride = u.components() * grid.dim();
    par::chunked_fill(out.values_mut(), stride, |c0, chunk| {
        serial::gradient_cells(u, c0, chunk);
    });
    out
}

/// Exact negative adjoint of [`gradient`]: `-(div Z, w)_h = (Z, grad w)_h`.
pub fn divergence(z: &MatrixField) -> VectorField {
    let grid = z.grid().clone();
    let mut out = VectorField::zeros(&grid, z.components());
    let stride = z.components();
    par::chunked_fill(out.values_mut(), stride, |n0, chunk| {
        serial::divergence_nodes(z, n0, chunk);
    });
    out
}

/// Discrete Neumann Laplacian `div(grad u)`; constants are in its kernel.
pub fn neumann_laplacian(u: &VectorField) -> VectorField {
    divergence(&gradient(u))
}

/// Average nodal values to cell centers; `m` values per cell.
pub fn cell_average(u: &VectorField) -> Vec<f64> {
    let grid = u.grid().clone();
    let m = u.components();
    let mut out = vec![0.0; m * grid.num_cells()];
    par::chunked_fill(&mut out, m, |c0, chunk| {
        serial::cell_average_cells(u, c0, chunk);
    });
    out
}

/// Adjoint of [`cell_average`] with respect to the two quadratures: pairing
/// cell data against averaged test values equals pairing the scattered field
/// against nodal test values in `( , )_h`.
pub fn scatter_cells(grid: &Arc<Grid>, m: usize, cells: &[f64]) -> VectorField {
    assert_eq!(cells.len(), m * grid.num_cells());
    let mut out = VectorField::zeros(grid, m);
    par::chunked_fill(out.values_mut(), m, |n0, chunk| {
        serial::scatter_cells_nodes(grid, m, cells, n0, chunk);
    });
    out
}

/// Sequential reference kernels. These are the fallback when the `parallel`
/// feature is off and stay available for benchmarking against the parallel
/// dispatch.
pub mod serial {
    use super::*;

    /// Full sequential gradient.
    pub fn gradient(u: &VectorField) -> MatrixField {
        let mut out = MatrixField::zeros(u.grid(), u.components());
        gradient_cells(u, 0, out.values_mut());
        out
    }

    /// Full sequential divergence.
    pub fn divergence(z: &MatrixField) -> VectorField {
        let mut out = VectorField::zeros(z.grid(), z.components());
        divergence_nodes(z, 0, out.values_mut());
        out
    }

    /// Full sequential node-to-cell averaging.
    pub fn cell_average(u: &VectorField) -> Vec<f64> {
        let mut out = vec![0.0; u.components() * u.grid().num_cells()];
        cell_average_cells(u, 0, &mut out);
        out
    }

    pub(super) fn gradient_cells(u: &VectorField, c0: usize, out: &mut [f64]) {
        let grid = u.grid();
        let m = u.components();
        let d = u.values();
        match grid.dim() {
            1 => {
                let hx = grid.spacing()[0];
                for (local, cell) in (c0..c0 + out.len() / m).enumerate() {
                    for k in 0..m {
                        out[local * m + k] = (d[(cell + 1) * m + k] - d[cell * m + k]) / hx;
                    }
                }
            }
            _ => {
                let nx = grid.node_counts()[0];
                let cnx = grid.cell_counts()[0];
                let [hx, hy] = grid.spacing();
                let ncomp = out.len() / (2 * m);
                for (local, cell) in (c0..c0 + ncomp).enumerate() {
                    let (cx, cy) = (cell % cnx, cell / cnx);
                    let n00 = (cy * nx + cx) * m;
                    let n10 = n00 + m;
                    let n01 = n00 + nx * m;
                    let n11 = n01 + m;
                    for k in 0..m {
                        let (u00, u10, u01, u11) = (d[n00 + k], d[n10 + k], d[n01 + k], d[n11 + k]);
                        out[(local * m + k) * 2] = (u10 - u00 + u11 - u01) / (2.0 * hx);
                        out[(local * m + k) * 2 + 1] = (u01 - u00 + u11 - u10) / (2.0 * hy);
                    }
                }
            }
        }
    }

    pub(super) fn divergence_nodes(z: &MatrixField, n0: usize, out: &mut [f64]) {
        let grid = z.grid();
        let m = z.components();
        let d = z.values();
        let wc = grid.cell_weight();
        match grid.dim() {
            1 => {
                let ncells = grid.num_cells();
                let hx = grid.spacing()[0];
                for (local, node) in (n0..n0 + out.len() / m).enumerate() {
                    let wn = grid.node_weight(node);
                    for k in 0..m {
                        // Gather from the left (+) and right (-) cell; missing
                        // cells mean zero boundary flux.
                        let mut acc = 0.0;
                        if node > 0 {
                            acc += wc * d[(node - 1) * m + k] / hx;
                        }
                        if node < ncells {
                            acc -= wc * d[node * m + k] / hx;
                        }
                        out[local * m + k] = -acc / wn;
                    }
                }
            }
            _ => {
                let [nx, _ny] = grid.node_counts();
                let [cnx, cny] = grid.cell_counts();
                let [hx, hy] = grid.spacing();
                for (local, node) in (n0..n0 + out.len() / m).enumerate() {
                    let (ix, iy) = (node % nx, node / nx);
                    let wn = grid.node_weight(node);
                    for k in 0..m {
                        let mut acc = 0.0;
                        for (cx, sx) in [(ix.wrapping_sub(1), 1.0), (ix, -1.0)] {
                            if cx >= cnx {
                                continue;
                            }
                            for (cy, sy) in [(iy.wrapping_sub(1), 1.0), (iy, -1.0)] {
                                if cy >= cny {
                                    continue;
                                }
                                let cell = (cy * cnx + cx) * m + k;
                                acc += wc
                                    * (sx * d[cell * 2] / (2.0 * hx)
                                        + sy * d[cell * 2 + 1] / (2.0 * hy));
                            }
                        }
                        out[local * m + k] = -acc / wn;
                    }
                }
            }
        }
    }

    pub(super) fn cell_average_cells(u: &VectorField, c0: usize, out: &mut [f64]) {
        let grid = u.grid();
        let m = u.components();
        let d = u.values();
        match grid.dim() {
            1 => {
                for (local, cell) in (c0..c0 + out.len() / m).enumerate() {
                    for k in 0..m {
                        out[local * m + k] = 0.5 * (d[cell * m + k] + d[(cell + 1) * m + k]);
                    }
                }
            }
            _ => {
                let nx = grid.node_counts()[0];
                let cnx = grid.cell_counts()[0];
                for (local, cell) in (c0..c0 + out.len() / m).enumerate() {
                    let (cx, cy) = (cell % cnx, cell / cnx);
                    let n00 = (cy * nx + cx) * m;
                    let n10 = n00 + m;
                    let n01 = n00 + nx * m;
                    let n11 = n01 + m;
                    for k in 0..m {
                        out[local * m + k] =
                            0.25 * (d[n00 + k] + d[n10 + k] + d[n01 + k] + d[n11 + k]);
                    }
                }
            }
        }
    }

    pub(super) fn scatter_cells_nodes(
        grid: &Arc<Grid>,
        m: usize,
        cells: &[f64],
        n0: usize,
        out: &mut [f64],
    ) {
        let wc = grid.cell_weight();
        let corner = 1.0 / (1 << grid.dim()) as f64;
        match grid.dim() {
            1 => {
                let ncells = grid.num_cells();
                for (local, node) in (n0..n0 + out.len() / m).enumerate() {
                    let wn = grid.node_weight(node);
                    for k in 0..m {
                        let mut acc = 0.0;
                        if node > 0 {
                            acc += cells[(node - 1) * m + k];
                        }
                        if node < ncells {
                            acc += cells[node * m + k];
                        }
                        out[local * m + k] = wc * corner * acc / wn;
                    }
                }
            }
            _ => {
                let nx = grid.node_counts()[0];
                let [cnx, cny] = grid.cell_counts();
                for (local, node) in (n0..n0 + out.len() / m).enumerate() {
                    let (ix, iy) = (node % nx, node / nx);
                    let wn = grid.node_weight(node);
                    for k in 0..m {
                        let mut acc = 0.0;
                        for cx in [ix.wrapping_sub(1), ix] {
                            if cx >= cnx {
                                continue;
                            }
                            for cy in [iy.wrapping_sub(1), iy] {
                                if cy >= cny {
                                    continue;
                                }
                                acc += cells[(cy * cnx + cx) * m + k];
                            }
                        }
                        out[local * m + k] = wc * corner * acc / wn;
                    }
                }
            }
        }
    }
}
