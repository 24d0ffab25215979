//! Numerical certification of the convergence theory: forcing bounds, the
//! Kantorovich majorant, explicit constants for the nonlinear elliptic
//! model problem, the Tikhonov resolvent identity, and empirical forcing
//! measurements.
//!
//! Measured quantities live in the frame the discrete iteration actually
//! uses (Euclidean singular values, Frobenius bound on the design error);
//! the model-problem constants use the discrete H1 seminorm and its dual,
//! mirroring the analytic setting.

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};
use crate::grid::{Field, Topology};
use crate::inference::FactorEngine;
use crate::linalg::{cholesky_lower, tikhonov_gram, SpdMatrix};
use crate::matrix::{norm2, Matrix};
use crate::problems::{ProblemInput, ProblemSpec};

/// Theory constants and the derived Kantorovich quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceCertificate {
    /// Inverse-Jacobian bound at the base point.
    pub beta: f64,
    /// Lipschitz constant of the Jacobian on the ball.
    pub l_const: f64,
    /// Jacobian norm bound on the ball.
    pub m_const: f64,
    /// Minimal singular value bound.
    pub sigma_star: f64,
    /// Initial Newton-step norm.
    pub eta: f64,
    /// Design/learning error of the factor surrogate.
    pub eps_lambda: f64,
    /// Forcing bound `lambda/(lambda + sigma*^2) + M^2 eps`.
    pub theta_bar: f64,
    /// `L / (1 - theta_bar)`.
    pub l_tilde: f64,
    /// Kantorovich number `beta * l_tilde * eta`.
    pub h_tilde: f64,
    /// Majorant limit `(1 - sqrt(1 - 2 h)) / (beta l_tilde)`, when h <= 1/2.
    pub t_star: Option<f64>,
}

/// `theta = lambda/(lambda + sigma*^2) + M^2 eps`.
pub fn forcing_bound(lambda: f64, sigma_star: f64, m_bound: f64, eps_lambda: f64) -> f64 {
    let tik = if lambda == 0.0 {
        if sigma_star > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        lambda / (lambda + sigma_star * sigma_star)
    };
    tik + m_bound * m_bound * eps_lambda
}

/// Newton iteration on `phi(t) = eta - t + beta*l*t^2/2` from `t0 = 0`:
/// monotone increasing to `t* = (1 - sqrt(1 - 2h))/(beta l)`, `h = beta l eta`.
pub fn majorant_sequence(eta: f64, beta: f64, l_tilde: f64, k_max: usize) -> Result<Vec<f64>> {
    let h = beta * l_tilde * eta;
    if h > 0.5 + 1e-15 {
        return Err(NkError::KantorovichViolated(h));
    }
    let mut t = 0.0;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(t);
    for _ in 0..k_max {
        let phi = eta - t + 0.5 * beta * l_tilde * t * t;
        let dphi = beta * l_tilde * t - 1.0;
        if dphi.abs() < 1e-300 {
            out.push(t);
            continue;
        }
        t -= phi / dphi;
        out.push(t);
    }
    Ok(out)
}

/// Closed-form majorant limit for `h <= 1/2`.
pub fn majorant_limit(eta: f64, beta: f64, l_tilde: f64) -> Option<f64> {
    let h = beta * l_tilde * eta;
    if h > 0.5 + 1e-15 {
        return None;
    }
    if l_tilde == 0.0 {
        return Some(eta);
    }
    Some((1.0 - (1.0 - 2.0 * h).max(0.0).sqrt()) / (beta * l_tilde))
}

/// Discrete H1 seminorm by forward differences (periodic wrap, or the
/// boundary gaps of the zero extension on Dirichlet grids).
pub fn v_seminorm(f: &Field) -> f64 {
    let n = f.grid.sizes[0];
    let h = f.grid.spacing[0];
    let v = &f.values;
    let mut s = 0.0;
    match f.grid.topology {
        Topology::Periodic => {
            for j in 0..n {
                let d = (v[(j + 1) % n] - v[j]) / h;
                s += d * d * h;
            }
        }
        Topology::Dirichlet => {
            s += (v[0] / h) * (v[0] / h) * h;
            for j in 0..n - 1 {
                let d = (v[j + 1] - v[j]) / h;
                s += d * d * h;
            }
            s += (v[n - 1] / h) * (v[n - 1] / h) * h;
        }
    }
    s.sqrt()
}

/// Discrete dual norm `|f|_{H^-1} = |A^{-1} f|_V` with `A` the periodic
/// 1D Laplacian restricted to mean-zero fields. The mean must be negligible
/// (relative 1e-8) before projection.
pub fn h_minus_one_norm(f: &Field) -> Result<f64> {
    if f.grid.dims != 1 || f.grid.topology != Topology::Periodic {
        return Err(NkError::ShapeMismatch("dual norm is defined on periodic 1D grids".into()));
    }
    let n = f.grid.sizes[0];
    let scale = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mean = f.mean();
    if scale > 0.0 && mean.abs() > 1e-8 * scale {
        return Err(NkError::SingularOnConstants(mean));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    // SPD shift on the constants nullspace: B = -lap + (1/n) 1 1^T agrees
    // with -lap on mean-zero vectors
    let mut b = crate::stencil::d2_matrix_1d(&f.grid);
    b.scale(-1.0);
    for i in 0..n {
        for j in 0..n {
            b.set(i, j, b.get(i, j) + 1.0 / n as f64);
        }
    }
    let factor = cholesky_lower(&SpdMatrix::new(b)?)?;
    let rhs: Vec<f64> = f.values.iter().map(|v| v - mean).collect();
    let x = factor.solve_outer(&rhs)?;
    let xf = Field::new(f.grid.clone(), x)?;
    Ok(v_seminorm(&xf))
}

/// Explicit constants for the elliptic model problem (`kappa = 1`,
/// base point 0): `beta = 1`, `sigma* = 1`, `L = 3r/(2 pi^2)`,
/// `M = 1 + 3r^2/(4 pi^2)`, `eta = |f|_{H^-1}`,
/// `theta_bar = lambda/(1+lambda) + M^2 eps`.
pub fn elliptic_constants(
    r: f64,
    lambda: f64,
    eps_lambda: f64,
    f: &Field,
) -> Result<ConvergenceCertificate> {
    if r <= 0.0 {
        return Err(NkError::InvalidConfig("ball radius must be positive".into()));
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let l_const = 3.0 * r / (2.0 * pi2);
    let m_const = 1.0 + 3.0 * r * r / (4.0 * pi2);
    let theta_bar = lambda / (1.0 + lambda) + m_const * m_const * eps_lambda;
    if theta_bar >= 1.0 {
        return Err(NkError::ForcingExceedsOne(theta_bar));
    }
    let eta = h_minus_one_norm(f)?;
    let l_tilde = l_const / (1.0 - theta_bar);
    let h_tilde = l_tilde * eta;
    Ok(ConvergenceCertificate {
        beta: 1.0,
        l_const,
        m_const,
        sigma_star: 1.0,
        eta,
        eps_lambda,
        theta_bar,
        l_tilde,
        h_tilde,
        t_star: majorant_limit(eta, 1.0, l_tilde),
    })
}

fn spd_inverse(a: SpdMatrix) -> Result<Matrix> {
    let n = a.dim();
    let factor = cholesky_lower(&a)?;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for col in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[col] = 1.0;
        let x = factor.solve_outer(&e)?;
        for row in 0..n {
            inv.set(row, col, x[row]);
        }
    }
    Ok(inv)
}

/// Frobenius defect of the identity
/// `I - J R_lambda J^T = lambda (lambda I + J J^T)^{-1}`, computed densely.
pub fn resolvent_identity_check(j: &Matrix, lambda: f64) -> Result<f64> {
    if lambda <= 0.0 {
        return Err(NkError::InvalidConfig("resolvent identity needs lambda > 0".into()));
    }
    let m = j.rows();
    let r_lambda = spd_inverse(tikhonov_gram(j, lambda)?)?;
    let lhs = {
        let jr = j.mul(&r_lambda)?.mul(&j.transpose())?;
        let mut out = Matrix::identity(m);
        for i in 0..m {
            for k in 0..m {
                out.set(i, k, out.get(i, k) - jr.get(i, k));
            }
        }
        out
    };
    let rhs = {
        let jt = j.transpose();
        let mut outer = tikhonov_gram(&jt, lambda)?.into_matrix(); // lambda I + J J^T
        outer = spd_inverse(SpdMatrix::new(outer)?)?;
        outer.scale(lambda);
        outer
    };
    Ok(lhs.sub(&rhs)?.frobenius_norm())
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off = f64::max(off, m.get(i, j).abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| m.get(i, i)).collect()
}

/// Extreme singular values of a (possibly rectangular) Jacobian via the
/// eigenvalues of its Gram matrix.
pub fn extreme_singular_values(j: &Matrix) -> (f64, f64) {
    let eigs = symmetric_eigenvalues(&j.gram());
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for e in eigs {
        let e = e.max(0.0);
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo.sqrt(), hi.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForcingMeasurement {
    /// Measured linearized-residual ratio `|J dv + F| / |F|`.
    pub ratio: f64,
    /// Bound `theta = theta_tik + theta_design` from measured quantities.
    pub theta: f64,
    pub theta_tik: f64,
    pub theta_design: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Frobenius norm of `R_hat R_hat^T - (lambda I + J^T J)^{-1}` (an upper
    /// bound on the operator-norm design error).
    pub eps_lambda: f64,
}

/// Measures the forcing ratio of one surrogate step against the theory
/// bound computed from the same iterate's Jacobian.
pub fn empirical_forcing<E: FactorEngine>(
    spec: &ProblemSpec,
    engine: &E,
    u: &ProblemInput,
    v: &Field,
    lambda: f64,
) -> Result<ForcingMeasurement> {
    let residual = spec.residual(u, v)?;
    let rnorm = norm2(&residual);
    if rnorm == 0.0 {
        return Err(NkError::ZeroResidual);
    }
    let jac = engine.jacobian(spec, u, v)?;
    let factor = engine.factor(spec, u, v, &jac, lambda)?;
    let grad = jac.matvec_transpose(&residual)?;
    let applied = match engine.permutation() {
        Some(p) => {
            let pg: Vec<f64> = p.iter().map(|&i| grad[i]).collect();
            let w = factor.apply_outer(&pg)?;
            let mut out = vec![0.0; w.len()];
            for (k, &pi) in p.iter().enumerate() {
                out[pi] = w[k];
            }
            out
        }
        None => factor.apply_outer(&grad)?,
    };
    let dv: Vec<f64> = applied.iter().map(|x| -x).collect();
    let jdv = jac.matvec(&dv)?;
    let lin: Vec<f64> = jdv.iter().zip(&residual).map(|(a, b)| a + b).collect();
    let ratio = norm2(&lin) / rnorm;

    let (sigma_min, sigma_max) = extreme_singular_values(&jac);
    let exact = spd_inverse(tikhonov_gram(&jac, lambda)?)?;
    // bring a permuted factor back to the natural frame for the comparison
    let emulated = match engine.permutation() {
        Some(p) => {
            let m = factor.outer();
            let n = m.rows();
            let mut out = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out.set(p[i], p[j], m.get(i, j));
                }
            }
            out
        }
        None => factor.outer(),
    };
    let eps = emulated.sub(&exact)?.frobenius_norm();
    let theta_tik = forcing_bound(lambda, sigma_min, 0.0, 0.0);
    let theta_design = sigma_max * sigma_max * eps;
    Ok(ForcingMeasurement {
        ratio,
        theta: theta_tik + theta_design,
        theta_tik,
        theta_design,
        sigma_min,
        sigma_max,
        eps_lambda: eps,
    })
}

/// Least-squares slope of `log e_{k+1}` against `log e_k` over the last
/// (up to) four consecutive pairs inside the fitting window.
pub fn fit_local_order(errors: &[f64]) -> Option<f64> {
    let valid = |e: f64| e.is_finite() && e > 1e-13 && e < 0.5;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for w in errors.windows(2) {
        if valid(w[0]) && valid(w[1]) {
            pairs.push((w[0].ln(), w[1].ln()));
        }
    }
    if pairs.len() < 2 {
        return None;
    }
    let tail: Vec<(f64, f64)> = pairs.iter().rev().take(4).cloned().collect();
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &tail {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

/// Checks `|v_{k+1} - v_k|_V <= t_{k+1} - t_k` for a trace against the
/// certificate's majorant sequence. Returns the worst slack
/// (`majorant increment - measured increment`, negative means violation).
pub fn majorant_domination_slack(
    iterates: &[Field],
    cert: &ConvergenceCertificate,
) -> Result<f64> {
    let k = iterates.len().saturating_sub(1);
    let t = majorant_sequence(cert.eta, cert.beta, cert.l_tilde, k)?;
    let mut worst = f64::INFINITY;
    for i in 0..k {
        let diff = Field::new(
            iterates[i].grid.clone(),
            iterates[i + 1]
                .values
                .iter()
                .zip(&iterates[i].values)
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        let inc = v_seminorm(&diff);
        worst = worst.min((t[i + 1] - t[i]) - inc);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn forcing_bound_values() {
        assert_eq!(forcing_bound(0.0, 1.0, 1.0, 0.0), 0.0);
        assert!((forcing_bound(1.0, 1.0, 1.0, 0.1) - 0.6).abs() < 1e-15);
        // lambda -> infinity limit with eps = 0 approaches 1
        assert!((forcing_bound(1e18, 1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn majorant_linear_case_stationary() {
        let t = majorant_sequence(0.3, 1.0, 0.0, 5).unwrap();
        assert!((t[1] - 0.3).abs() < 1e-15);
        assert!((t[5] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn majorant_newton_limit() {
        // eta=0.1, beta=1, L=1: h=0.1, t* = 1 - sqrt(0.8)
        let t = majorant_sequence(0.1, 1.0, 1.0, 8).unwrap();
        let tstar = 1.0 - 0.8_f64.sqrt();
        assert!((t[8] - tstar).abs() < 1e-12, "{} vs {tstar}", t[8]);
        for w in t.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        // boundary case h = 1/2: t* = 1/(beta L)
        let tb = majorant_sequence(0.125, 2.0, 2.0, 60).unwrap();
        assert!((tb.last().unwrap() - 0.25).abs() < 1e-4);
        assert!(matches!(
            majorant_sequence(0.3, 1.0, 2.0, 3),
            Err(NkError::KantorovichViolated(_))
        ));
    }

    #[test]
    fn elliptic_constants_closed_forms() {
        let grid = Grid::periodic_1d(64);
        let f = Field::new(
            grid.clone(),
            grid.coordinates()
                .iter()
                .map(|x| (2.0 * std::f64::consts::PI * x[0]).sin())
                .collect(),
        )
        .unwrap();
        let c = elliptic_constants(1.0, 0.0, 0.0, &f).unwrap();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert!((c.l_const - 3.0 / (2.0 * pi2)).abs() < 1e-14);
        assert!((c.m_const - (1.0 + 3.0 / (4.0 * pi2))).abs() < 1e-14);
        assert_eq!(c.theta_bar, 0.0);
        assert_eq!(c.l_tilde, c.l_const);
        // boundary: eps pushing theta to 1 must error
        let eps = (1.0 - 0.0) / (c.m_const * c.m_const);
        assert!(matches!(
            elliptic_constants(1.0, 0.0, eps, &f),
            Err(NkError::ForcingExceedsOne(_))
        ));
    }

    #[test]
    fn dual_norm_of_sine_matches_analytic() {
        let grid = Grid::periodic_1d(1024);
        let f = Field::new(
            grid.clone(),
            grid.coordinates()
                .iter()
                .map(|x| (2.0 * std::f64::consts::PI * x[0]).sin())
                .collect(),
        )
        .unwrap();
        let eta = h_minus_one_norm(&f).unwrap();
        let analytic = 1.0 / (2.0 * std::f64::consts::PI * 2.0_f64.sqrt());
        assert!((eta - analytic).abs() < 1e-3, "{eta} vs {analytic}");
        // homogeneity
        let f2 = Field::new(grid.clone(), f.values.iter().map(|v| -2.5 * v).collect()).unwrap();
        let eta2 = h_minus_one_norm(&f2).unwrap();
        assert!((eta2 - 2.5 * eta).abs() < 1e-12);
        // zero field
        let z = Field::zeros(&grid);
        assert_eq!(h_minus_one_norm(&z).unwrap(), 0.0);
        // non-negligible mean is rejected
        let c = Field::constant(&grid, 1.0);
        assert!(matches!(h_minus_one_norm(&c), Err(NkError::SingularOnConstants(_))));
    }

    #[test]
    fn resolvent_identity_small_cases() {
        // J = I, lambda = 1: both sides are I/2
        let d = resolvent_identity_check(&Matrix::identity(4), 1.0).unwrap();
        assert!(d < 1e-14, "defect {d}");
        // deterministic pseudo-random 10x10
        let mut j = Matrix::zeros(10, 10);
        let mut state = 1234567u64;
        for i in 0..10 {
            for k in 0..10 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                j.set(i, k, ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5);
            }
        }
        let d = resolvent_identity_check(&j, 1e-3).unwrap();
        assert!(d < 1e-10, "defect {d}");
    }

    #[test]
    fn jacobi_eigenvalues_diagonal_case() {
        let a = Matrix::from_rows(&[&[3.0, 1.0], &[1.0, 3.0]]);
        let mut e = symmetric_eigenvalues(&a);
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((e[0] - 2.0).abs() < 1e-12);
        assert!((e[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn local_order_of_synthetic_quadratic_sequence() {
        // e_{k+1} = e_k^2
        let errs = [1e-1, 1e-2, 1e-4, 1e-8];
        let order = fit_local_order(&errs).unwrap();
        assert!((order - 2.0).abs() < 1e-9, "order {order}");
    }
}
