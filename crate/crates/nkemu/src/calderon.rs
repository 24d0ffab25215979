//! Discrete conductivity (EIT-type) inverse problem on the unit square.
//!
//! The forward map solves `div(v grad c) = 0` with Dirichlet data `g` on a
//! full `n1 x n2` grid (conductivity `v` lives on all nodes, the potential
//! `c` on the interior), and reads the boundary current flux with first-order
//! one-sided differences: `v_b (c_b - c_in)/h` at edge nodes, and the
//! diagonal inward difference at corners (corner values touch no interior
//! equation, so this is a convention; it is recorded here, not claimed as
//! second order). Face conductivities are arithmetic means.

use crate::error::{NkError, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{cholesky_lower, SpdMatrix};
use crate::matrix::Matrix;
use crate::problems::{ProblemKind, ProblemSpec};

/// Row-major indices of the boundary nodes of an `n1 x n2` full grid.
pub fn boundary_nodes(grid: &Grid) -> Vec<(usize, usize)> {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let mut out = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            if i == 0 || i == n1 - 1 || j == 0 || j == n2 - 1 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Indicator ("hat") excitation patterns, one per boundary node, in the
/// boundary enumeration order of [`boundary_nodes`].
pub fn hat_excitations(grid: &Grid) -> Vec<Vec<f64>> {
    let nb = boundary_nodes(grid).len();
    (0..nb)
        .map(|k| {
            let mut g = vec![0.0; nb];
            g[k] = 1.0;
            g
        })
        .collect()
}

struct Discretization {
    interior: Vec<(usize, usize)>,
    index_of: Vec<Option<usize>>,
    boundary: Vec<(usize, usize)>,
}

fn discretize(grid: &Grid) -> Discretization {
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let mut interior = Vec::new();
    let mut index_of = vec![None; n1 * n2];
    for i in 1..n1 - 1 {
        for j in 1..n2 - 1 {
            index_of[i * n2 + j] = Some(interior.len());
            interior.push((i, j));
        }
    }
    Discretization {
        interior,
        index_of,
        boundary: boundary_nodes(grid),
    }
}

/// Solves the Dirichlet problem for one or more excitations sharing the same
/// conductivity. Returns `(interior solutions, boundary fluxes)`, one pair
/// per excitation.
fn forward_many(
    spec: &ProblemSpec,
    v: &Field,
    gs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let grid = &spec.grid;
    let (n1, n2) = (grid.sizes[0], grid.sizes[1]);
    let h = grid.spacing[0];
    if grid.dims != 2 {
        return Err(NkError::ShapeMismatch("conductivity problem is 2D".into()));
    }
    if v.values.len() != n1 * n2 {
        return Err(NkError::ShapeMismatch("conductivity length mismatch".into()));
    }
    let vmin = v.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if vmin <= 0.0 {
        return Err(NkError::NonPositiveConductivity(vmin));
    }
    let disc = discretize(grid);
    let m = disc.interior.len();
    let nb = disc.boundary.len();
    for g in gs {
        if g.len() != nb {
            return Err(NkError::ShapeMismatch(format!(
                "excitation length {} != boundary node count {nb}",
                g.len()
            )));
        }
    }

    // assemble the interior system once; one rhs per excitation
    let h2 = h * h;
    let mut a = Matrix::zeros(m, m);
    let mut rhs_face: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m]; // (boundary idx, weight)
    let bpos: std::collections::HashMap<(usize, usize), usize> = disc
        .boundary
        .iter()
        .cloned()
        .enumerate()
        .map(|(k, p)| (p, k))
        .collect();
    for (k, &(i, j)) in disc.interior.iter().enumerate() {
        let vc = v.values[i * n2 + j];
        for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
            let (ii, jj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
            let w = 0.5 * (vc + v.values[ii * n2 + jj]) / h2;
            a.set(k, k, a.get(k, k) + w);
            match disc.index_of[ii * n2 + jj] {
                Some(kk) => a.set(k, kk, a.get(k, kk) - w),
                None => rhs_face[k].push((bpos[&(ii, jj)], w)),
            }
        }
    }
    let spd = SpdMatrix::new(a).map_err(|_| NkError::SingularSystem)?;
    let factor = cholesky_lower(&spd).map_err(|_| NkError::SingularSystem)?;

    let mut sols = Vec::with_capacity(gs.len());
    let mut fluxes = Vec::with_capacity(gs.len());
    for g in gs {
        let mut b = vec![0.0; m];
        for (k, faces) in rhs_face.iter().enumerate() {
            for &(bk, w) in faces {
                b[k] += w * g[bk];
            }
        }
        let c = factor.solve_outer(&b)?;
        // flux via one-sided differences
        let cfull = |i: usize, j: usize| -> f64 {
            match disc.index_of[i * n2 + j] {
                Some(k) => c[k],
                None => g[bpos[&(i, j)]],
            }
        };
        let mut flux = vec![0.0; nb];
        for (k, &(i, j)) in disc.boundary.iter().enumerate() {
            let vb = v.values[i * n2 + j];
            let corner_i = i == 0 || i == n1 - 1;
            let corner_j = j == 0 || j == n2 - 1;
            flux[k] = if corner_i && corner_j {
                let ii = if i == 0 { 1 } else { n1 - 2 };
                let jj = if j == 0 { 1 } else { n2 - 2 };
                vb * (cfull(i, j) - cfull(ii, jj)) / (std::f64::consts::SQRT_2 * h)
            } else if i == 0 {
                vb * (cfull(i, j) - cfull(1, j)) / h
            } else if i == n1 - 1 {
                vb * (cfull(i, j) - cfull(n1 - 2, j)) / h
            } else if j == 0 {
                vb * (cfull(i, j) - cfull(i, 1)) / h
            } else {
                vb * (cfull(i, j) - cfull(i, n2 - 2)) / h
            };
        }
        sols.push(c);
        fluxes.push(flux);
    }
    Ok((sols, fluxes))
}

/// Forward solve for a single excitation: interior potential and boundary
/// flux.
pub fn calderon_forward(
    spec: &ProblemSpec,
    v: &Field,
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut sols, mut fluxes) = forward_many(spec, v, std::slice::from_ref(&g.to_vec()))?;
    Ok((sols.remove(0), fluxes.remove(0)))
}

/// Predicted boundary fluxes for every stored excitation.
pub fn predicted_fluxes(spec: &ProblemSpec, v: &Field) -> Result<Vec<Vec<f64>>> {
    let gs = spec
        .excitations
        .as_ref()
        .ok_or(NkError::MissingFixedData("boundary excitations"))?;
    Ok(forward_many(spec, v, gs)?.1)
}

/// Stacked residual `(flux_i(v) - observed_i)_i` over all excitations.
pub fn calderon_residual(
    spec: &ProblemSpec,
    observations: &[Vec<f64>],
    v: &Field,
) -> Result<Vec<f64>> {
    if !matches!(spec.kind, ProblemKind::Calderon) {
        return Err(NkError::UnsupportedKind("calderon_residual"));
    }
    let gs = spec
        .excitations
        .as_ref()
        .ok_or(NkError::MissingFixedData("boundary excitations"))?;
    if observations.len() != gs.len() {
        return Err(NkError::CountMismatch {
            expected: gs.len(),
            got: observations.len(),
        });
    }
    let fluxes = forward_many(spec, v, gs)?.1;
    let mut out = Vec::with_capacity(fluxes.len() * fluxes[0].len());
    for (flux, obs) in fluxes.iter().zip(observations) {
        if obs.len() != flux.len() {
            return Err(NkError::CountMismatch {
                expected: flux.len(),
                got: obs.len(),
            });
        }
        for (p, o) in flux.iter().zip(obs) {
            out.push(p - o);
        }
    }
    Ok(out)
}
