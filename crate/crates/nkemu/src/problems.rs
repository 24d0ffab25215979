//! Residual maps and Jacobians for the in-scope problems.
//!
//! Kinds: a nonlinear elliptic equation `-lap(v) + kappa v^3 = u`, one
//! implicit-Euler step of Burgers' equation, nonlinear Darcy flow, one
//! leapfrog step of the Klein/Sine-Gordon equations, and the conductivity
//! inverse problem (in [`crate::calderon`]). Jacobians are dense and
//! finite-difference checked; the generic second-order form
//! `a d_xx + b d_x + c` has its own extraction and builder for the
//! coefficient-parameterized pathway.

use serde::{Deserialize, Serialize};

use crate::calderon;
use crate::error::{NkError, Result};
use crate::grid::{Field, Grid};
use crate::matrix::Matrix;
use crate::stencil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GordonNonlinearity {
    /// Klein-Gordon: tau(v) = v^3.
    Cubic,
    /// Sine-Gordon: tau(v) = sin(v).
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Elliptic { kappa: f64 },
    BurgersStep { nu: f64, dt: f64 },
    Darcy { kappa: f64 },
    GordonStep { nonlinearity: GordonNonlinearity, kappa1: f64, kappa2: f64, dt: f64 },
    Calderon,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Elliptic { .. } => "elliptic",
            ProblemKind::BurgersStep { .. } => "burgers_step",
            ProblemKind::Darcy { .. } => "darcy",
            ProblemKind::GordonStep { .. } => "gordon_step",
            ProblemKind::Calderon => "calderon",
        }
    }
}

/// A problem definition: residual map, Jacobian builder, parameters, grid
/// and any fixed data (Darcy forcing, boundary excitation patterns).
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub grid: Grid,
    /// Fixed forcing `f` (Darcy only).
    pub forcing: Option<Field>,
    /// Boundary excitation patterns, one vector of boundary-node values per
    /// excitation (conductivity problem only).
    pub excitations: Option<Vec<Vec<f64>>>,
}

/// The `u` argument of a residual: a single field, the two previous time
/// levels of a second-order march, or a set of observed boundary fluxes.
#[derive(Debug, Clone)]
pub enum ProblemInput {
    Field(Field),
    Pair(Field, Field),
    Observations(Vec<Vec<f64>>),
}

impl ProblemInput {
    pub fn field(&self) -> Result<&Field> {
        match self {
            ProblemInput::Field(f) => Ok(f),
            _ => Err(NkError::ShapeMismatch("expected a single field input".into())),
        }
    }

    pub fn pair(&self) -> Result<(&Field, &Field)> {
        match self {
            ProblemInput::Pair(a, b) => Ok((a, b)),
            _ => Err(NkError::ShapeMismatch("expected a pair input".into())),
        }
    }

    pub fn observations(&self) -> Result<&Vec<Vec<f64>>> {
        match self {
            ProblemInput::Observations(o) => Ok(o),
            _ => Err(NkError::ShapeMismatch("expected observations input".into())),
        }
    }
}

/// Coefficients of the generic second-order operator `a d_xx + b d_x + c`
/// (one `b` per axis in 2D).
#[derive(Debug, Clone)]
pub struct CoefficientTriple {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl CoefficientTriple {
    /// Flattens to `a | b_axis0 | ... | c` for use as a model input.
    pub fn flatten(&self) -> Vec<f64> {
        let mut z = self.a.clone();
        for b in &self.b {
            z.extend_from_slice(b);
        }
        z.extend_from_slice(&self.c);
        z
    }
}

fn check_shapes(spec: &ProblemSpec, fields: &[&Field]) -> Result<()> {
    let n = spec.grid.node_count();
    for f in fields {
        if f.values.len() != n {
            return Err(NkError::ShapeMismatch(format!(
                "field length {} does not match grid ({n})",
                f.values.len()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Nonlinear elliptic: F(u,v) = -lap(v) + kappa v^3 - u
// ---------------------------------------------------------------------------

pub fn elliptic_residual(spec: &ProblemSpec, u: &Field, v: &Field) -> Result<Field> {
    let ProblemKind::Elliptic { kappa } = spec.kind else {
        return Err(NkError::UnsupportedKind("elliptic_residual"));
    };
    check_shapes(spec, &[u, v])?;
    let lap = stencil::d2_apply_1d(&spec.grid, &v.values);
    let vals: Vec<f64> = v
        .values
        .iter()
        .zip(&lap)
        .zip(&u.values)
        .map(|((&vi, &li), &ui)| -li + kappa * vi * vi * vi - ui)
        .collect();
    Field::new(spec.grid.clone(), vals)
}

pub fn elliptic_jacobian(spec: &ProblemSpec, v: &Field) -> Result<Matrix> {
    let ProblemKind::Elliptic { kappa } = spec.kind else {
        return Err(NkError::UnsupportedKind("elliptic_jacobian"));
    };
    check_shapes(spec, &[v])?;
    let mut m = stencil::d2_matrix_1d(&spec.grid);
    m.scale(-1.0);
    let n = v.values.len();
    for i in 0..n {
        let d = m.get(i, i);
        m.set(i, i, d + 3.0 * kappa * v.values[i] * v.values[i]);
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Burgers implicit-Euler step: F(u,v) = v - dt (nu v'' - v v') - u
// ---------------------------------------------------------------------------

pub fn burgers_residual(spec: &ProblemSpec, u: &Field, v: &Field) -> Result<Field> {
    let ProblemKind::BurgersStep { nu, dt } = spec.kind else {
        return Err(NkError::UnsupportedKind("burgers_residual"));
    };
    check_shapes(spec, &[u, v])?;
    let d2 = stencil::d2_apply_1d(&spec.grid, &v.values);
    let d1 = stencil::d1_apply_1d(&spec.grid, &v.values);
    let vals: Vec<f64> = (0..v.values.len())
        .map(|i| v.values[i] - dt * (nu * d2[i] - v.values[i] * d1[i]) - u.values[i])
        .collect();
    Field::new(spec.grid.clone(), vals)
}

pub fn burgers_jacobian(spec: &ProblemSpec, v: &Field) -> Result<Matrix> {
    let ProblemKind::BurgersStep { nu, dt } = spec.kind else {
        return Err(NkError::UnsupportedKind("burgers_jacobian"));
    };
    check_shapes(spec, &[v])?;
    let n = v.values.len();
    let d2 = stencil::d2_matrix_1d(&spec.grid);
    let d1 = stencil::d1_matrix_1d(&spec.grid);
    let dv = stencil::d1_apply_1d(&spec.grid, &v.values);
    // J = I - dt*nu*D2 + dt*diag(v') + dt*diag(v)*D1
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut x = -dt * nu * d2.get(i, j) + dt * v.values[i] * d1.get(i, j);
            if i == j {
                x += 1.0 + dt * dv[i];
            }
            m.set(i, j, x);
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Nonlinear Darcy: F(u,v) = -e^u [grad u . grad v + lap v] + kappa v^3 - f
// (2D Dirichlet for the forward benchmark; the same formulas on a 1D
// periodic grid back the coefficient-parameterized experts)
// ---------------------------------------------------------------------------

pub fn darcy_residual(spec: &ProblemSpec, u: &Field, v: &Field) -> Result<Field> {
    let ProblemKind::Darcy { kappa } = spec.kind else {
        return Err(NkError::UnsupportedKind("darcy_residual"));
    };
    check_shapes(spec, &[u, v])?;
    let f = spec
        .forcing
        .as_ref()
        .ok_or(NkError::MissingFixedData("darcy forcing field"))?;
    check_shapes(spec, &[f])?;
    let n = spec.grid.node_count();
    let (lap_v, grads_u, grads_v): (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) = match spec.grid.dims
    {
        1 => (
            stencil::d2_apply_1d(&spec.grid, &v.values),
            vec![stencil::d1_apply_1d(&spec.grid, &u.values)],
            vec![stencil::d1_apply_1d(&spec.grid, &v.values)],
        ),
        2 => (
            stencil::laplacian_apply_2d(&spec.grid, &v.values),
            vec![
                stencil::gradient_apply_2d(&spec.grid, &u.values, 0),
                stencil::gradient_apply_2d(&spec.grid, &u.values, 1),
            ],
            vec![
                stencil::gradient_apply_2d(&spec.grid, &v.values, 0),
                stencil::gradient_apply_2d(&spec.grid, &v.values, 1),
            ],
        ),
        d => return Err(NkError::ShapeMismatch(format!("darcy on {d}D grid"))),
    };
    let mut vals = vec![0.0; n];
    for i in 0..n {
        let mut adv = 0.0;
        for ax in 0..spec.grid.dims {
            adv += grads_u[ax][i] * grads_v[ax][i];
        }
        let eu = u.values[i].exp();
        vals[i] = -eu * (adv + lap_v[i]) + kappa * v.values[i].powi(3) - f.values[i];
    }
    Field::new(spec.grid.clone(), vals)
}

pub fn darcy_jacobian(spec: &ProblemSpec, u: &Field, v: &Field) -> Result<Matrix> {
    let ProblemKind::Darcy { kappa } = spec.kind else {
        return Err(NkError::UnsupportedKind("darcy_jacobian"));
    };
    check_shapes(spec, &[u, v])?;
    let n = spec.grid.node_count();
    let (lap, grads, grads_u): (Matrix, Vec<Matrix>, Vec<Vec<f64>>) = match spec.grid.dims {
        1 => (
            stencil::d2_matrix_1d(&spec.grid),
            vec![stencil::d1_matrix_1d(&spec.grid)],
            vec![stencil::d1_apply_1d(&spec.grid, &u.values)],
        ),
        2 => (
            stencil::laplacian_matrix_2d(&spec.grid),
            vec![
                stencil::gradient_matrix_2d(&spec.grid, 0),
                stencil::gradient_matrix_2d(&spec.grid, 1),
            ],
            vec![
                stencil::gradient_apply_2d(&spec.grid, &u.values, 0),
                stencil::gradient_apply_2d(&spec.grid, &u.values, 1),
            ],
        ),
        d => return Err(NkError::ShapeMismatch(format!("darcy on {d}D grid"))),
    };
    // J = -diag(e^u) (sum_ax diag(du_ax) G_ax + L) + diag(3 kappa v^2)
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let eu = u.values[i].exp();
        for j in 0..n {
            let mut x = lap.get(i, j);
            for ax in 0..spec.grid.dims {
                x += grads_u[ax][i] * grads[ax].get(i, j);
            }
            let mut x = -eu * x;
            if i == j {
                x += 3.0 * kappa * v.values[i] * v.values[i];
            }
            m.set(i, j, x);
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Klein/Sine-Gordon leapfrog step:
// F((u1,u2), v) = v - 2 u1 + u2 - dt^2 (kappa1 v'' - kappa2 tau(v))
// ---------------------------------------------------------------------------

fn gordon_tau(nl: GordonNonlinearity, v: f64) -> f64 {
    match nl {
        GordonNonlinearity::Cubic => v * v * v,
        GordonNonlinearity::Sine => v.sin(),
    }
}

fn gordon_tau_prime(nl: GordonNonlinearity, v: f64) -> f64 {
    match nl {
        GordonNonlinearity::Cubic => 3.0 * v * v,
        GordonNonlinearity::Sine => v.cos(),
    }
}

pub fn gordon_residual(spec: &ProblemSpec, u: (&Field, &Field), v: &Field) -> Result<Field> {
    let ProblemKind::GordonStep { nonlinearity, kappa1, kappa2, dt } = spec.kind else {
        return Err(NkError::UnsupportedKind("gordon_residual"));
    };
    let (u1, u2) = u;
    check_shapes(spec, &[u1, u2, v])?;
    let d2 = stencil::d2_apply_1d(&spec.grid, &v.values);
    let dt2 = dt * dt;
    let vals: Vec<f64> = (0..v.values.len())
        .map(|i| {
            v.values[i] - 2.0 * u1.values[i] + u2.values[i]
                - dt2 * (kappa1 * d2[i] - kappa2 * gordon_tau(nonlinearity, v.values[i]))
        })
        .collect();
    Field::new(spec.grid.clone(), vals)
}

pub fn gordon_jacobian(spec: &ProblemSpec, v: &Field) -> Result<Matrix> {
    let ProblemKind::GordonStep { nonlinearity, kappa1, kappa2, dt } = spec.kind else {
        return Err(NkError::UnsupportedKind("gordon_jacobian"));
    };
    check_shapes(spec, &[v])?;
    let n = v.values.len();
    let d2 = stencil::d2_matrix_1d(&spec.grid);
    let dt2 = dt * dt;
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut x = -dt2 * kappa1 * d2.get(i, j);
            if i == j {
                x += 1.0 + dt2 * kappa2 * gordon_tau_prime(nonlinearity, v.values[i]);
            }
            m.set(i, j, x);
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Coefficient extraction and the generic Jacobian builder
// ---------------------------------------------------------------------------

/// Extracts the `(a, b, c)` coefficients of the Frechet derivative in the
/// generic second-order form, evaluated pointwise.
pub fn operator_coefficients(
    spec: &ProblemSpec,
    u: &ProblemInput,
    v: &Field,
) -> Result<CoefficientTriple> {
    let n = spec.grid.node_count();
    match spec.kind {
        ProblemKind::Elliptic { kappa } => Ok(CoefficientTriple {
            a: vec![-1.0; n],
            b: vec![vec![0.0; n]],
            c: v.values.iter().map(|&x| 3.0 * kappa * x * x).collect(),
        }),
        ProblemKind::BurgersStep { nu, dt } => {
            let dv = stencil::d1_apply_1d(&spec.grid, &v.values);
            Ok(CoefficientTriple {
                a: vec![-dt * nu; n],
                b: vec![v.values.iter().map(|&x| dt * x).collect()],
                c: dv.iter().map(|&g| 1.0 + dt * g).collect(),
            })
        }
        ProblemKind::Darcy { kappa } => {
            let uf = u.field()?;
            check_shapes(spec, &[uf, v])?;
            let grads_u: Vec<Vec<f64>> = match spec.grid.dims {
                1 => vec![stencil::d1_apply_1d(&spec.grid, &uf.values)],
                2 => vec![
                    stencil::gradient_apply_2d(&spec.grid, &uf.values, 0),
                    stencil::gradient_apply_2d(&spec.grid, &uf.values, 1),
                ],
                d => return Err(NkError::ShapeMismatch(format!("darcy on {d}D grid"))),
            };
            let eu: Vec<f64> = uf.values.iter().map(|&x| x.exp()).collect();
            Ok(CoefficientTriple {
                a: eu.iter().map(|&e| -e).collect(),
                b: grads_u
                    .iter()
                    .map(|g| g.iter().zip(&eu).map(|(&gi, &e)| -e * gi).collect())
                    .collect(),
                c: v.values.iter().map(|&x| 3.0 * kappa * x * x).collect(),
            })
        }
        ProblemKind::GordonStep { nonlinearity, kappa1, kappa2, dt } => {
            let dt2 = dt * dt;
            Ok(CoefficientTriple {
                a: vec![-kappa1 * dt2; n],
                b: vec![vec![0.0; n]],
                c: v
                    .values
                    .iter()
                    .map(|&x| 1.0 + kappa2 * dt2 * gordon_tau_prime(nonlinearity, x))
                    .collect(),
            })
        }
        ProblemKind::Calderon => Err(NkError::UnsupportedKind(
            "calderon has no local second-order coefficient form",
        )),
    }
}

/// `diag(a) D2 + diag(b) D1 + diag(c)` on a 1D grid with central stencils.
pub fn build_jacobian_from_coefficients(triple: &CoefficientTriple, grid: &Grid) -> Result<Matrix> {
    if grid.dims != 1 {
        return Err(NkError::ShapeMismatch(
            "coefficient Jacobian builder is 1D-only".into(),
        ));
    }
    let n = grid.node_count();
    if triple.a.len() != n || triple.c.len() != n || triple.b.len() != 1 || triple.b[0].len() != n
    {
        return Err(NkError::ShapeMismatch("coefficient lengths mismatch grid".into()));
    }
    let d2 = stencil::d2_matrix_1d(grid);
    let d1 = stencil::d1_matrix_1d(grid);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut x = triple.a[i] * d2.get(i, j) + triple.b[0][i] * d1.get(i, j);
            if i == j {
                x += triple.c[i];
            }
            m.set(i, j, x);
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Finite-difference Jacobian
// ---------------------------------------------------------------------------

/// Column-wise forward-difference Jacobian of `residual` at `v`:
/// column j is `(F(v + t e_j) - F(v)) / t`.
pub fn fd_jacobian<F>(residual: F, v: &[f64], t: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if t <= 0.0 {
        return Err(NkError::InvalidConfig("fd step must be positive".into()));
    }
    let base = residual(v)?;
    if !base.iter().all(|x| x.is_finite()) {
        return Err(NkError::NonFiniteResidual);
    }
    let m = base.len();
    let n = v.len();
    let mut jac = Matrix::zeros(m, n);
    let mut vp = v.to_vec();
    for j in 0..n {
        let old = vp[j];
        vp[j] = old + t;
        let r = residual(&vp)?;
        if !r.iter().all(|x| x.is_finite()) {
            return Err(NkError::NonFiniteResidual);
        }
        for i in 0..m {
            jac.set(i, j, (r[i] - base[i]) / t);
        }
        vp[j] = old;
    }
    Ok(jac)
}

// ---------------------------------------------------------------------------
// Unified dispatch
// ---------------------------------------------------------------------------

impl ProblemSpec {
    pub fn residual(&self, u: &ProblemInput, v: &Field) -> Result<Vec<f64>> {
        match self.kind {
            ProblemKind::Elliptic { .. } => Ok(elliptic_residual(self, u.field()?, v)?.values),
            ProblemKind::BurgersStep { .. } => Ok(burgers_residual(self, u.field()?, v)?.values),
            ProblemKind::Darcy { .. } => Ok(darcy_residual(self, u.field()?, v)?.values),
            ProblemKind::GordonStep { .. } => {
                let (u1, u2) = u.pair()?;
                Ok(gordon_residual(self, (u1, u2), v)?.values)
            }
            ProblemKind::Calderon => calderon::calderon_residual(self, u.observations()?, v),
        }
    }

    pub fn jacobian(&self, u: &ProblemInput, v: &Field) -> Result<Matrix> {
        match self.kind {
            ProblemKind::Elliptic { .. } => elliptic_jacobian(self, v),
            ProblemKind::BurgersStep { .. } => burgers_jacobian(self, v),
            ProblemKind::Darcy { .. } => darcy_jacobian(self, u.field()?, v),
            ProblemKind::GordonStep { .. } => gordon_jacobian(self, v),
            ProblemKind::Calderon => {
                let spec = self.clone();
                let grid = self.grid.clone();
                let t = 1e-7 * (1.0 + v.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
                let obs = u.observations()?.clone();
                fd_jacobian(
                    move |vv| {
                        let vf = Field::new(grid.clone(), vv.to_vec())?;
                        calderon::calderon_residual(&spec, &obs, &vf)
                    },
                    &v.values,
                    t,
                )
            }
        }
    }

    /// Whether the Jacobian depends on `u`. For u-independent kinds the
    /// model input `z` stores only `v`.
    pub fn jacobian_is_u_independent(&self) -> bool {
        !matches!(self.kind, ProblemKind::Darcy { .. })
    }

    /// Model input for the state-parameterized ("direct") mode.
    pub fn direct_features(&self, u: &ProblemInput, v: &Field) -> Result<Vec<f64>> {
        if self.jacobian_is_u_independent() {
            Ok(v.values.clone())
        } else {
            let uf = u.field()?;
            let mut z = uf.values.clone();
            z.extend_from_slice(&v.values);
            Ok(z)
        }
    }

    /// Model input for the coefficient-parameterized mode.
    pub fn coefficient_features(&self, u: &ProblemInput, v: &Field) -> Result<Vec<f64>> {
        Ok(operator_coefficients(self, u, v)?.flatten())
    }

    /// Default starting iterate for a solve of this problem.
    pub fn default_initial_guess(&self, u: &ProblemInput) -> Result<Field> {
        match self.kind {
            ProblemKind::Elliptic { .. } | ProblemKind::Darcy { .. } => {
                Ok(Field::zeros(&self.grid))
            }
            // time-step solves start from the previous level
            ProblemKind::BurgersStep { .. } => Ok(u.field()?.clone()),
            ProblemKind::GordonStep { .. } => Ok(u.pair()?.0.clone()),
            ProblemKind::Calderon => Ok(Field::constant(&self.grid, 1.0)),
        }
    }
}
