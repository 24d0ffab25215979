//! Regular grids and discretized fields.

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Periodic,
    Dirichlet,
}

/// A regular grid on `[0,1]^d`. `sizes` counts the stored nodes per axis
/// (for Dirichlet solution grids these are the interior unknowns), `origin`
/// is the coordinate of the first node per axis, `spacing` the mesh width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: usize,
    pub sizes: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub topology: Topology,
}

impl Grid {
    /// 1D periodic grid with `n` nodes on [0,1): `x_j = j/n`.
    pub fn periodic_1d(n: usize) -> Self {
        let h = 1.0 / n as f64;
        Grid {
            dims: 1,
            sizes: vec![n],
            spacing: vec![h],
            origin: vec![0.0],
            topology: Topology::Periodic,
        }
    }

    /// 1D Dirichlet grid storing `n` interior nodes of [0,1]: `x_j = (j+1)h`,
    /// `h = 1/(n+1)`. Boundary values are implicitly zero.
    pub fn dirichlet_1d(n: usize) -> Self {
        let h = 1.0 / (n + 1) as f64;
        Grid {
            dims: 1,
            sizes: vec![n],
            spacing: vec![h],
            origin: vec![h],
            topology: Topology::Dirichlet,
        }
    }

    /// 2D Dirichlet grid storing the `n1 x n2` interior nodes of the unit
    /// square; boundary values are implicitly zero.
    pub fn dirichlet_2d(n1: usize, n2: usize) -> Self {
        let h1 = 1.0 / (n1 + 1) as f64;
        let h2 = 1.0 / (n2 + 1) as f64;
        Grid {
            dims: 2,
            sizes: vec![n1, n2],
            spacing: vec![h1, h2],
            origin: vec![h1, h2],
            topology: Topology::Dirichlet,
        }
    }

    /// 2D grid covering all `n1 x n2` nodes of the unit square including the
    /// boundary (used by the conductivity problem, whose unknown is a
    /// coefficient field rather than a PDE solution).
    pub fn full_2d(n1: usize, n2: usize) -> Self {
        let h1 = 1.0 / (n1 - 1) as f64;
        let h2 = 1.0 / (n2 - 1) as f64;
        Grid {
            dims: 2,
            sizes: vec![n1, n2],
            spacing: vec![h1, h2],
            origin: vec![0.0, 0.0],
            topology: Topology::Dirichlet,
        }
    }

    pub fn node_count(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Coordinates of every stored node, row-major over axes.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        match self.dims {
            1 => (0..self.sizes[0])
                .map(|j| vec![self.origin[0] + j as f64 * self.spacing[0]])
                .collect(),
            2 => {
                let (n1, n2) = (self.sizes[0], self.sizes[1]);
                let mut out = Vec::with_capacity(n1 * n2);
                for i in 0..n1 {
                    for j in 0..n2 {
                        out.push(vec![
                            self.origin[0] + i as f64 * self.spacing[0],
                            self.origin[1] + j as f64 * self.spacing[1],
                        ]);
                    }
                }
                out
            }
            d => panic!("unsupported grid dimension {d}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims != self.sizes.len() || self.dims != self.spacing.len() {
            return Err(NkError::ShapeMismatch("grid axis counts disagree".into()));
        }
        if self.sizes.iter().any(|&s| s < 3) {
            return Err(NkError::InvalidConfig("grid sizes must be >= 3".into()));
        }
        if self.spacing.iter().any(|&h| h <= 0.0) {
            return Err(NkError::InvalidConfig("grid spacing must be positive".into()));
        }
        Ok(())
    }
}

/// A discretized function: one value per stored grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(NkError::LengthMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(NkError::NonFiniteResidual);
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Subtracts the mean in place.
    pub fn project_zero_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    pub fn norm2(&self) -> f64 {
        crate::matrix::norm2(&self.values)
    }

    /// Relative L2 distance to `other` over grid values.
    pub fn rel_l2_error(&self, other: &Field) -> f64 {
        let denom = other.norm2();
        let mut s = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            s += (a - b) * (a - b);
        }
        if denom > 0.0 {
            s.sqrt() / denom
        } else {
            s.sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_coordinates() {
        let g = Grid::periodic_1d(4);
        let xs = g.coordinates();
        assert_eq!(xs[1][0], 0.25);
        assert_eq!(xs.len(), 4);
    }

    #[test]
    fn dirichlet_interior_offsets() {
        let g = Grid::dirichlet_1d(63);
        assert!((g.spacing[0] - 1.0 / 64.0).abs() < 1e-15);
        assert!((g.coordinates()[0][0] - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn field_length_checked() {
        let g = Grid::periodic_1d(5);
        assert!(Field::new(g.clone(), vec![0.0; 4]).is_err());
        assert!(Field::new(g, vec![0.0; 5]).is_ok());
    }

    #[test]
    fn full_grid_covers_boundary() {
        let g = Grid::full_2d(9, 9);
        assert_eq!(g.node_count(), 81);
        let xs = g.coordinates();
        assert_eq!(xs[0], vec![0.0, 0.0]);
        assert_eq!(xs[80], vec![1.0, 1.0]);
    }
}
