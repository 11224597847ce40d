//! Rectangular grids with homogeneous Neumann boundary treatment, nodal
//! vector fields, and cell-based gradient fields.
//!
//! Nodes sit on the vertices of a uniform rectangular lattice; scalar data is
//! integrated with the trapezoid rule (full weight inside, halved on the
//! boundary). Gradients live on the cells between nodes and carry the full
//! cell weight. The divergence in [`ops`] is defined as the exact negative
//! adjoint of the gradient with respect to those two quadratures, which makes
//! the discrete Green identity hold to machine precision.

use std::sync::Arc;

use thiserror::Error;

use crate::tensor::{SMat, SVec, MAX_COMPONENTS, MAX_DIM};

pub mod io;
pub mod ops;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unsupported spatial dimension {0} (must be 1 or 2)")]
    UnsupportedDim(usize),
    #[error("axis {axis} has {got} nodes; at least 2 are required")]
    TooFewNodes { axis: usize, got: usize },
    #[error("axis {axis} has non-positive extent")]
    NonPositiveExtent { axis: usize },
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field has {got} components, expected {expected}")]
    ComponentMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("value buffer has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("component count {got} exceeds the supported maximum {max}")]
    TooManyComponents { got: usize, max: usize },
}

/// Uniform rectangular grid over `[0, L_x]` (times `[0, L_y]` in 2D).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    nodes: [usize; MAX_DIM],
    extent: [f64; MAX_DIM],
    spacing: [f64; MAX_DIM],
}

impl Grid {
    /// 1D grid with `n` nodes spanning `[0, length]`.
    pub fn line(n: usize, length: f64) -> Result<Arc<Grid>, GridError> {
        if n < 2 {
            return Err(GridError::TooFewNodes { axis: 0, got: n });
        }
        if !(length > 0.0) {
            return Err(GridError::NonPositiveExtent { axis: 0 });
        }
        Ok(Arc::new(Grid {
            dim: 1,
            nodes: [n, 1],
            extent: [length, 0.0],
            spacing: [length / (n - 1) as f64, 1.0],
        }))
    }

    /// 2D grid with `nx` x `ny` nodes spanning `[0, lx] x [0, ly]`.
    pub fn rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Grid>, GridError> {
        for (axis, &(n, l)) in [(nx, lx), (ny, ly)].iter().enumerate() {
            if n < 2 {
                return Err(GridError::TooFewNodes { axis, got: n });
            }
            if !(l > 0.0) {
                return Err(GridError::NonPositiveExtent { axis });
            }
        }
        Ok(Arc::new(Grid {
            dim: 2,
            nodes: [nx, ny],
            extent: [lx, ly],
            spacing: [lx / (nx - 1) as f64, ly / (ny - 1) as f64],
        }))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn node_counts(&self) -> [usize; MAX_DIM] {
        self.nodes
    }

    #[inline]
    pub fn spacing(&self) -> [f64; MAX_DIM] {
        self.spacing
    }

    #[inline]
    pub fn extent(&self) -> [f64; MAX_DIM] {
        self.extent
    }

    /// Number of nodes `K`.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    /// Cells per axis (one less than nodes along each active axis).
    #[inline]
    pub fn cell_counts(&self) -> [usize; MAX_DIM] {
        match self.dim {
            1 => [self.nodes[0] - 1, 1],
            _ => [self.nodes[0] - 1, self.nodes[1] - 1],
        }
    }

    /// Number of cells `K_c`.
    #[inline]
    pub fn num_cells(&self) -> usize {
        let c = self.cell_counts();
        c[0] * c[1]
    }

    /// Lebesgue measure of the domain.
    #[inline]
    pub fn measure(&self) -> f64 {
        match self.dim {
            1 => self.extent[0],
            _ => self.extent[0] * self.extent[1],
        }
    }

    /// Quadrature weight of every cell.
    #[inline]
    pub fn cell_weight(&self) -> f64 {
        match self.dim {
            1 => self.spacing[0],
            _ => self.spacing[0] * self.spacing[1],
        }
    }

    /// Trapezoid quadrature weight of node `idx`.
    #[inline]
    pub fn node_weight(&self, idx: usize) -> f64 {
        let nx = self.nodes[0];
        let ix = idx % nx;
        let wx = if ix == 0 || ix == nx - 1 { 0.5 } else { 1.0 } * self.spacing[0];
        if self.dim == 1 {
            wx
        } else {
            let ny = self.nodes[1];
            let iy = idx / nx;
            let wy = if iy == 0 || iy == ny - 1 { 0.5 } else { 1.0 } * self.spacing[1];
            wx * wy
        }
    }

    /// Coordinates of node `idx`.
    #[inline]
    pub fn node_pos(&self, idx: usize) -> [f64; MAX_DIM] {
        let nx = self.nodes[0];
        let ix = idx % nx;
        let iy = idx / nx;
        [ix as f64 * self.spacing[0], iy as f64 * self.spacing[1]]
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nodes[0] + ix
    }

    #[inline]
    pub fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.cell_counts()[0] + cx
    }

    /// True if `x` lies inside the closed domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        let mut ok = x[0] >= 0.0 && x[0] <= self.extent[0];
        if self.dim == 2 {
            ok = ok && x.len() > 1 && x[1] >= 0.0 && x[1] <= self.extent[1];
        }
        ok
    }

    /// Index of the node nearest to `x` (which must lie inside the domain).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let ix = ((x[0] / self.spacing[0]).round() as usize).min(self.nodes[0] - 1);
        if self.dim == 1 {
            ix
        } else {
            let iy = ((x[1] / self.spacing[1]).round() as usize).min(self.nodes[1] - 1);
            self.node_index(ix, iy)
        }
    }
}

fn check_components(m: usize) -> usize {
    assert!(
        m >= 1 && m <= MAX_COMPONENTS,
        "component count {m} outside supported range 1..={MAX_COMPONENTS}"
    );
    m
}

/// Nodal field with `m` components per node, stored node-major with
/// components innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Arc<Grid>,
    m: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>, m: usize) -> Self {
        let m = check_components(m);
        Self { grid: grid.clone(), m, data: vec![0.0; m * grid.num_nodes()] }
    }

    pub fn constant(grid: &Arc<Grid>, value: &SVec) -> Self {
        let mut f = Self::zeros(grid, value.len());
        for node in 0..grid.num_nodes() {
            f.data[node * value.len()..(node + 1) * value.len()].copy_from_slice(value.as_slice());
        }
        f
    }

    /// Sample `f(position) -> value` at every node.
    pub fn from_fn<F: FnMut(&[f64; MAX_DIM]) -> SVec>(grid: &Arc<Grid>, m: usize, mut f: F) -> Self {
        let mut out = Self::zeros(grid, m);
        for node in 0..grid.num_nodes() {
            let v = f(&grid.node_pos(node));
            assert_eq!(v.len(), m);
            out.set_node(node, &v);
        }
        out
    }

    pub fn from_values(grid: &Arc<Grid>, m: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        let m = check_components(m);
        let expected = m * grid.num_nodes();
        if data.len() != expected {
            return Err(FieldError::LengthMismatch { expected, got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(Self { grid: grid.clone(), m, data })
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn node(&self, idx: usize) -> SVec {
        SVec::from_slice(&self.data[idx * self.m..(idx + 1) * self.m])
    }

    #[inline]
    pub fn set_node(&mut self, idx: usize, v: &SVec) {
        debug_assert_eq!(v.len(), self.m);
        self.data[idx * self.m..(idx + 1) * self.m].copy_from_slice(v.as_slice());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &VectorField) {
        debug_assert_eq!(self.data.len(), x.data.len());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.data {
            *s *= a;
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add_scaled(&self, a: f64, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(a, other);
        out
    }

    pub(crate) fn same_shape(&self, other: &VectorField) -> Result<(), FieldError> {
        if self.grid.as_ref() != other.grid.as_ref() {
            return Err(FieldError::GridMismatch);
        }
        if self.m != other.m {
            return Err(FieldError::ComponentMismatch { expected: self.m, got: other.m });
        }
        Ok(())
    }
}

/// Cell field of `m x dim` matrices (gradient values), stored cell-major,
/// row-major within each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: Arc<Grid>,
    m: usize,
    data: Vec<f64>,
}

impl MatrixField {
    pub fn zeros(grid: &Arc<Grid>, m: usize) -> Self {
        let m = check_components(m);
        Self { grid: grid.clone(), m, data: vec![0.0; m * grid.dim() * grid.num_cells()] }
    }

    pub fn from_values(grid: &Arc<Grid>, m: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        let m = check_components(m);
        let expected = m * grid.dim() * grid.num_cells();
        if data.len() != expected {
            return Err(FieldError::LengthMismatch { expected, got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        Ok(Self { grid: grid.clone(), m, data })
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn cell(&self, idx: usize) -> SMat {
        let n = self.grid.dim();
        let s = idx * self.m * n;
        SMat::from_rows(self.m, n, &self.data[s..s + self.m * n])
    }

    #[inline]
    pub fn set_cell(&mut self, idx: usize, v: &SMat) {
        let n = self.grid.dim();
        debug_assert_eq!((v.rows(), v.cols()), (self.m, n));
        let s = idx * self.m * n;
        self.data[s..s + self.m * n].copy_from_slice(v.as_slice());
    }

    pub fn axpy(&mut self, a: f64, x: &MatrixField) {
        debug_assert_eq!(self.data.len(), x.data.len());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub(crate) fn same_shape(&self, other: &MatrixField) -> Result<(), FieldError> {
        if self.grid.as_ref() != other.grid.as_ref() {
            return Err(FieldError::GridMismatch);
        }
        if self.m != other.m {
            return Err(FieldError::ComponentMismatch { expected: self.m, got: other.m });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        let g = Grid::rect(5, 7, 2.0, 3.0).unwrap();
        let total: f64 = (0..g.num_nodes()).map(|i| g.node_weight(i)).sum();
        approx::assert_relative_eq!(total, g.measure(), max_relative = 1e-14);

        let g1 = Grid::line(9, 4.0).unwrap();
        let total1: f64 = (0..g1.num_nodes()).map(|i| g1.node_weight(i)).sum();
        approx::assert_relative_eq!(total1, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn cell_weights_sum_to_measure() {
        let g = Grid::rect(5, 7, 2.0, 3.0).unwrap();
        approx::assert_relative_eq!(
            g.cell_weight() * g.num_cells() as f64,
            g.measure(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn grid_construction_rejects_degenerate_input() {
        assert!(Grid::line(1, 1.0).is_err());
        assert!(Grid::line(4, 0.0).is_err());
        assert!(Grid::rect(4, 1, 1.0, 1.0).is_err());
        assert!(Grid::rect(4, 4, 1.0, -2.0).is_err());
    }

    #[test]
    fn field_construction_validates_input() {
        let g = Grid::line(4, 1.0).unwrap();
        assert!(matches!(
            VectorField::from_values(&g, 2, vec![0.0; 7]),
            Err(FieldError::LengthMismatch { .. })
        ));
        let mut vals = vec![0.0; 8];
        vals[3] = f64::NAN;
        assert!(matches!(
            VectorField::from_values(&g, 2, vals),
            Err(FieldError::NonFinite { index: 3 })
        ));
    }

    #[test]
    fn node_indexing_round_trips() {
        let g = Grid::rect(4, 3, 1.0, 1.0).unwrap();
        assert_eq!(g.node_index(3, 2), 11);
        assert_eq!(g.node_pos(5), [1.0 / 3.0, 0.5]);
        assert_eq!(g.nearest_node(&[1.0, 1.0]), 11);
    }
}
