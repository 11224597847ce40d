//! Central finite differences, used by the sampled contract checks and as the
//! independent oracle in derivative tests.

use crate::tensor::{SMat, SVec};

/// Central difference of a scalar function of one real parameter.
pub fn central<F: FnMut(f64) -> f64>(h: f64, mut f: F) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Central difference of a matrix-valued function of one real parameter.
pub fn central_matrix<F: FnMut(f64) -> SMat>(h: f64, mut f: F) -> SMat {
    f(h).sub(&f(-h)).scaled(1.0 / (2.0 * h))
}

/// Componentwise gradient of a scalar function of a small vector.
pub fn grad_vec<F: FnMut(&SVec) -> f64>(h: f64, v: &SVec, mut f: F) -> SVec {
    let mut out = SVec::zeros(v.len());
    for k in 0..v.len() {
        let mut plus = *v;
        plus[k] += h;
        let mut minus = *v;
        minus[k] -= h;
        out[k] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    out
}

/// Entrywise gradient of a scalar function of a small matrix.
pub fn grad_matrix<F: FnMut(&SMat) -> f64>(h: f64, w: &SMat, mut f: F) -> SMat {
    let mut out = SMat::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let mut plus = *w;
            plus[(i, j)] += h;
            let mut minus = *w;
            minus[(i, j)] -= h;
            out[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    out
}
