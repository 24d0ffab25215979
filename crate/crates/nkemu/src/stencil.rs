//! Second-order central finite-difference stencils, as both matrix-free
//! applications and dense matrix builders.
//!
//! 1D: `[1,-2,1]/h^2` and `[-1,0,1]/(2h)`; 2D: the 5-point Laplacian and
//! per-axis central gradients. Periodic grids wrap indices; Dirichlet grids
//! store interior nodes only and extend by zero.

use crate::grid::{Grid, Topology};
use crate::matrix::Matrix;

/// Second derivative of a 1D field.
pub fn d2_apply_1d(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let n = grid.sizes[0];
    let h2 = grid.spacing[0] * grid.spacing[0];
    let mut out = vec![0.0; n];
    match grid.topology {
        Topology::Periodic => {
            for j in 0..n {
                let prev = v[(j + n - 1) % n];
                let next = v[(j + 1) % n];
                out[j] = (prev - 2.0 * v[j] + next) / h2;
            }
        }
        Topology::Dirichlet => {
            for j in 0..n {
                let prev = if j > 0 { v[j - 1] } else { 0.0 };
                let next = if j + 1 < n { v[j + 1] } else { 0.0 };
                out[j] = (prev - 2.0 * v[j] + next) / h2;
            }
        }
    }
    out
}

/// Central first derivative of a 1D field.
pub fn d1_apply_1d(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let n = grid.sizes[0];
    let two_h = 2.0 * grid.spacing[0];
    let mut out = vec![0.0; n];
    match grid.topology {
        Topology::Periodic => {
            for j in 0..n {
                out[j] = (v[(j + 1) % n] - v[(j + n - 1) % n]) / two_h;
            }
        }
        Topology::Dirichlet => {
            for j in 0..n {
                let prev = if j > 0 { v[j - 1] } else { 0.0 };
                let next = if j + 1 < n { v[j + 1] } else { 0.0 };
                out[j] = (next - prev) / two_h;
            }
        }
    }
    out
}

pub fn d2_matrix_1d(grid: &Grid) -> Matrix {
    let n = grid.sizes[0];
    let h2 = grid.spacing[0] * grid.spacing[0];
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        m.set(j, j, -2.0 / h2);
        match grid.topology {
            Topology::Periodic => {
                m.set(j, (j + 1) % n, m.get(j, (j + 1) % n) + 1.0 / h2);
                m.set(j, (j + n - 1) % n, m.get(j, (j + n - 1) % n) + 1.0 / h2);
            }
            Topology::Dirichlet => {
                if j + 1 < n {
                    m.set(j, j + 1, 1.0 / h2);
                }
                if j > 0 {
                    m.set(j, j - 1, 1.0 / h2);
                }
            }
        }
    }
    m
}

pub fn d1_matrix_1d(grid: &Grid) -> Matrix {
    let n = grid.sizes[0];
    let two_h = 2.0 * grid.spacing[0];
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        match grid.topology {
            Topology::Periodic => {
                m.set(j, (j + 1) % n, m.get(j, (j + 1) % n) + 1.0 / two_h);
                m.set(j, (j + n - 1) % n, m.get(j, (j + n - 1) % n) - 1.0 / two_h);
            }
            Topology::Dirichlet => {
                if j + 1 < n {
                    m.set(j, j + 1, 1.0 / two_h);
                }
                if j > 0 {
                    m.set(j, j - 1, -1.0 / two_h);
                }
            }
        }
    }
    m
}

/// 5-point Laplacian of a 2D field stored row-major over `(i, j)`.
/// Off-grid neighbors are zero (Dirichlet interior convention).
pub fn laplacian_apply_2d(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let h1sq = grid.spacing[0] * grid.spacing[0];
    let h2sq = grid.spacing[1] * grid.spacing[1];
    let mut out = vec![0.0; n1 * n2];
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= n1 as isize || j >= n2 as isize {
            0.0
        } else {
            v[i as usize * n2 + j as usize]
        }
    };
    for i in 0..n1 {
        for j in 0..n2 {
            let (ii, jj) = (i as isize, j as isize);
            let c = v[i * n2 + j];
            out[i * n2 + j] = (at(ii - 1, jj) - 2.0 * c + at(ii + 1, jj)) / h1sq
                + (at(ii, jj - 1) - 2.0 * c + at(ii, jj + 1)) / h2sq;
        }
    }
    out
}

/// Central gradient along `axis` (0 or 1) of a 2D field, zero extension.
pub fn gradient_apply_2d(grid: &Grid, v: &[f64], axis: usize) -> Vec<f64> {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let two_h = 2.0 * grid.spacing[axis];
    let mut out = vec![0.0; n1 * n2];
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= n1 as isize || j >= n2 as isize {
            0.0
        } else {
            v[i as usize * n2 + j as usize]
        }
    };
    for i in 0..n1 {
        for j in 0..n2 {
            let (ii, jj) = (i as isize, j as isize);
            out[i * n2 + j] = if axis == 0 {
                (at(ii + 1, jj) - at(ii - 1, jj)) / two_h
            } else {
                (at(ii, jj + 1) - at(ii, jj - 1)) / two_h
            };
        }
    }
    out
}

/// Dense 5-point Laplacian on a 2D grid (zero extension off-grid).
pub fn laplacian_matrix_2d(grid: &Grid) -> Matrix {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let h1sq = grid.spacing[0] * grid.spacing[0];
    let h2sq = grid.spacing[1] * grid.spacing[1];
    let n = n1 * n2;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n1 {
        for j in 0..n2 {
            let k = i * n2 + j;
            m.set(k, k, -2.0 / h1sq - 2.0 / h2sq);
            if i > 0 {
                m.set(k, k - n2, 1.0 / h1sq);
            }
            if i + 1 < n1 {
                m.set(k, k + n2, 1.0 / h1sq);
            }
            if j > 0 {
                m.set(k, k - 1, 1.0 / h2sq);
            }
            if j + 1 < n2 {
                m.set(k, k + 1, 1.0 / h2sq);
            }
        }
    }
    m
}

/// Dense central gradient along `axis` on a 2D grid (zero extension).
pub fn gradient_matrix_2d(grid: &Grid, axis: usize) -> Matrix {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let two_h = 2.0 * grid.spacing[axis];
    let n = n1 * n2;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n1 {
        for j in 0..n2 {
            let k = i * n2 + j;
            if axis == 0 {
                if i + 1 < n1 {
                    m.set(k, k + n2, 1.0 / two_h);
                }
                if i > 0 {
                    m.set(k, k - n2, -1.0 / two_h);
                }
            } else {
                if j + 1 < n2 {
                    m.set(k, k + 1, 1.0 / two_h);
                }
                if j > 0 {
                    m.set(k, k - 1, -1.0 / two_h);
                }
            }
        }
    }
    m
}
