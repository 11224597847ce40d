//! Stack-allocated vectors and matrices for per-node / per-cell values.
//!
//! State dimension `M` and spatial dimension `N` are small runtime values
//! (`M <= 4`, `N <= 2`), so fixed-capacity storage avoids heap traffic in the
//! hot kernels while keeping dimensions dynamic for configuration.

/// Maximum number of state components `M`.
pub const MAX_COMPONENTS: usize = 4;
/// Maximum spatial dimension `N`.
pub const MAX_DIM: usize = 2;

const CAP: usize = MAX_COMPONENTS * MAX_COMPONENTS;

/// Small dense vector with up to [`MAX_COMPONENTS`] entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SVec {
    data: [f64; MAX_COMPONENTS],
    len: usize,
}

impl SVec {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_COMPONENTS, "vector length {len} exceeds capacity");
        Self { data: [0.0; MAX_COMPONENTS], len }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut v = Self::zeros(values.len());
        v.data[..values.len()].copy_from_slice(values);
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.len]
    }

    #[inline]
    pub fn dot(&self, other: &SVec) -> f64 {
        debug_assert_eq!(self.len, other.len);
        let mut acc = 0.0;
        for k in 0..self.len {
            acc += self.data[k] * other.data[k];
        }
        acc
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> SVec {
        let mut out = *self;
        for k in 0..self.len {
            out.data[k] *= s;
        }
        out
    }

    pub fn add(&self, other: &SVec) -> SVec {
        debug_assert_eq!(self.len, other.len);
        let mut out = *self;
        for k in 0..self.len {
            out.data[k] += other.data[k];
        }
        out
    }

    pub fn sub(&self, other: &SVec) -> SVec {
        debug_assert_eq!(self.len, other.len);
        let mut out = *self;
        for k in 0..self.len {
            out.data[k] -= other.data[k];
        }
        out
    }
}

impl std::ops::Index<usize> for SVec {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        debug_assert!(i < self.len);
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for SVec {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        debug_assert!(i < self.len);
        &mut self.data[i]
    }
}

/// Small dense row-major matrix, at most [`MAX_COMPONENTS`]², used for
/// gradient values (`M x N`), coupling operators (`M x M`, `N x N`), and
/// Hessians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SMat {
    data: [f64; CAP],
    rows: usize,
    cols: usize,
}

impl SMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows * cols <= CAP, "matrix {rows}x{cols} exceeds capacity");
        Self { data: [0.0; CAP], rows, cols }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = 1.0;
        }
        m
    }

    /// Row-major construction.
    pub fn from_rows(rows: usize, cols: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let mut m = Self::zeros(rows, cols);
        m.data[..values.len()].copy_from_slice(values);
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.rows * self.cols]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data[..self.rows * self.cols]
    }

    /// Frobenius inner product `A : B`.
    #[inline]
    pub fn ddot(&self, other: &SMat) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut acc = 0.0;
        for k in 0..self.rows * self.cols {
            acc += self.data[k] * other.data[k];
        }
        acc
    }

    /// Frobenius norm.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn transpose(&self) -> SMat {
        let mut out = SMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &SMat) -> SMat {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = SMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Matrix-vector product for square coefficient matrices.
    pub fn matvec(&self, v: &SVec) -> SVec {
        assert_eq!(self.cols, v.len());
        let mut out = SVec::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> SMat {
        let mut out = *self;
        for k in 0..self.rows * self.cols {
            out.data[k] *= s;
        }
        out
    }

    pub fn add(&self, other: &SMat) -> SMat {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = *self;
        for k in 0..self.rows * self.cols {
            out.data[k] += other.data[k];
        }
        out
    }

    pub fn sub(&self, other: &SMat) -> SMat {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = *self;
        for k in 0..self.rows * self.cols {
            out.data[k] -= other.data[k];
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for SMat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}
