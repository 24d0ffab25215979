//! The theory-check suite: one pass/fail row per certified inequality.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    elliptic_constants, empirical_forcing, extreme_singular_values, fit_local_order,
    majorant_domination_slack, majorant_sequence, resolvent_identity_check,
    v_seminorm,
};
use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::inference::{
    emulated_solve, ExactFactorEngine, ModelEngine, ScheduleState, SolveOptions,
};
use crate::linalg::inverse_cholesky_factor;
use crate::matrix::rmse;
use crate::nk::{
    generate_training_data, nk_solve, sample_problem_input, GenerateOptions, InputDistribution,
    ParamMode,
};
use crate::problems::{elliptic_jacobian, ProblemInput, ProblemKind, ProblemSpec};
use crate::sampling::{KernelFamily, KernelSpec};
use crate::surrogate::{fit, LengthscalePolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    /// Measured value (smaller is better unless noted in `detail`).
    pub value: f64,
    /// The bound the value must not exceed (or must reach, see `detail`).
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

fn row_le(name: &str, value: f64, bound: f64, detail: &str) -> CheckRow {
    CheckRow {
        name: name.into(),
        value,
        bound,
        pass: value.is_finite() && value <= bound,
        detail: detail.into(),
    }
}

fn row_ge(name: &str, value: f64, bound: f64, detail: &str) -> CheckRow {
    CheckRow {
        name: name.into(),
        value,
        bound,
        pass: value.is_finite() && value >= bound,
        detail: format!("(value must be >= bound) {detail}"),
    }
}

fn elliptic_spec(kappa: f64, grid: Grid) -> ProblemSpec {
    ProblemSpec { kind: ProblemKind::Elliptic { kappa }, grid, forcing: None, excitations: None }
}

fn periodic_draw(grid: &Grid, scale: f64, seed: u64, stream: u64, zero_mean: bool) -> Result<Field> {
    let kernel = KernelSpec::periodic(10.0, 0.5).with_scale(scale * scale);
    let factor = crate::sampling::sampling_factor(&kernel, grid)?;
    let mut f = crate::sampling::sample_gp_with_factor(&factor, grid, seed, stream)?;
    if zero_mean {
        f.project_zero_mean();
    }
    Ok(f)
}

fn resolvent_rows(rows: &mut Vec<CheckRow>, seed: u64) -> Result<()> {
    let d = resolvent_identity_check(&crate::matrix::Matrix::identity(4), 1.0)?;
    rows.push(row_le("resolvent/identity", d, 1e-14, "J = I, lambda = 1"));

    let mut j = crate::matrix::Matrix::zeros(10, 10);
    let mut rng = crate::rng::CounterRng::new(seed, 0);
    for i in 0..10 {
        for k in 0..10 {
            j.set(i, k, rng.normal());
        }
    }
    let d = resolvent_identity_check(&j, 1e-3)?;
    rows.push(row_le("resolvent/random10", d, 1e-10, "random 10x10, lambda = 1e-3"));

    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(63));
    let v0 = Field::zeros(&spec.grid);
    let j0 = elliptic_jacobian(&spec, &v0)?;
    let d = resolvent_identity_check(&j0, 1e-2)?;
    rows.push(row_le("resolvent/elliptic_v0", d, 1e-9, "63-point elliptic at v = 0, lambda = 1e-2"));

    let v = Field::new(
        spec.grid.clone(),
        spec.grid.coordinates().iter().map(|x| 0.3 * (x[0] * 11.0).sin()).collect(),
    )?;
    let jv = elliptic_jacobian(&spec, &v)?;
    let d = resolvent_identity_check(&jv, 1e-2)?;
    rows.push(row_le("resolvent/elliptic_vne0", d, 1e-9, "63-point elliptic away from 0"));

    let bspec = ProblemSpec {
        kind: ProblemKind::BurgersStep { nu: 0.02, dt: 0.02 },
        grid: Grid::periodic_1d(63),
        forcing: None,
        excitations: None,
    };
    let bv = Field::new(
        bspec.grid.clone(),
        bspec.grid.coordinates().iter().map(|x| (std::f64::consts::PI * x[0]).sin()).collect(),
    )?;
    let bj = crate::problems::burgers_jacobian(&bspec, &bv)?;
    let d = resolvent_identity_check(&bj, 1e-2)?;
    rows.push(row_le("resolvent/burgers", d, 1e-9, "63-point Burgers step Jacobian"));
    Ok(())
}

fn constants_rows(rows: &mut Vec<CheckRow>) -> Result<()> {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let grid = Grid::periodic_1d(1024);
    let f = Field::new(
        grid.clone(),
        grid.coordinates().iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).sin()).collect(),
    )?;
    let cert = elliptic_constants(1.0, 0.0, 0.0, &f)?;
    rows.push(row_le(
        "constants/L",
        (cert.l_const - 3.0 / (2.0 * pi2)).abs(),
        1e-12,
        "L = 3/(2 pi^2) at r = 1",
    ));
    rows.push(row_le(
        "constants/M",
        (cert.m_const - (1.0 + 3.0 / (4.0 * pi2))).abs(),
        1e-12,
        "M = 1 + 3/(4 pi^2) at r = 1",
    ));
    let analytic = 1.0 / (2.0 * std::f64::consts::PI * 2.0_f64.sqrt());
    rows.push(row_le(
        "constants/eta_sin",
        (cert.eta - analytic).abs(),
        1e-3,
        "eta of sin(2 pi x) vs 1/(2 pi sqrt(2)) on 1024 nodes",
    ));
    let t = majorant_sequence(0.1, 1.0, 1.0, 8)?;
    rows.push(row_le(
        "constants/majorant_limit",
        (t[8] - (1.0 - 0.8_f64.sqrt())).abs(),
        1e-12,
        "scalar Newton majorant at eta=0.1, beta=L=1",
    ));
    Ok(())
}

fn forcing_exact_rows(rows: &mut Vec<CheckRow>, seed: u64) -> Result<()> {
    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(63));
    let mut worst_slack = f64::INFINITY; // theta - ratio, must stay >= 0
    let mut worst_zero = 0.0_f64;
    for draw in 0..4 {
        let u = ProblemInput::Field(periodic_draw(&spec.grid, 1.0, seed + 1, draw, false)?);
        let trace = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 1e-2, 8, 1e-13)?;
        for v in trace.iterates.iter().skip(1).take(4) {
            let m = empirical_forcing(&spec, &ExactFactorEngine, &u, v, 1e-2)?;
            worst_slack = worst_slack.min(m.theta - m.ratio);
        }
        // exact Newton direction at lambda = 0
        let trace0 = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 0.0, 6, 1e-13)?;
        for v in trace0.iterates.iter().skip(1).take(3) {
            let m = empirical_forcing(&spec, &ExactFactorEngine, &u, v, 0.0)?;
            worst_zero = worst_zero.max(m.ratio);
        }
    }
    rows.push(row_ge(
        "forcing/exact_slack",
        worst_slack,
        0.0,
        "theta - ratio with exact factors at lambda = 1e-2",
    ));
    rows.push(row_le(
        "forcing/exact_newton",
        worst_zero,
        1e-10,
        "ratio with exact factors at lambda = 0",
    ));
    Ok(())
}

fn forcing_model_rows(rows: &mut Vec<CheckRow>, seed: u64, workers: usize) -> Result<()> {
    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(63));
    let mut opts = GenerateOptions::new(
        ParamMode::Direct,
        InputDistribution::Gp { kernel: KernelSpec::periodic(10.0, 0.5) },
        24,
        5,
    );
    opts.seed = seed + 2;
    opts.workers = workers;
    let ds = generate_training_data(&spec, &opts)?;
    let model = fit(&ds, KernelFamily::Gaussian, 1e-10, &LengthscalePolicy::Median)?;
    let engine = ModelEngine { model: &model };

    // collect iterates from emulated validation solves (k >= 1)
    let mut measurements = Vec::new();
    for draw in 0..4 {
        let (_, u) = sample_problem_input(&spec, &opts.input, seed + 3, 1000 + draw, false)?;
        let v0 = Field::zeros(&spec.grid);
        let report = emulated_solve(
            &spec,
            &model,
            &u,
            &v0,
            ScheduleState::new(0.0),
            &SolveOptions { budget: 10, ..Default::default() },
            None,
        )?;
        for v in report.trace.iterates.iter().skip(1).take(4) {
            if rmse(&spec.residual(&u, v)?) == 0.0 {
                continue;
            }
            measurements.push(empirical_forcing(&spec, &engine, &u, v, 0.0)?);
        }
    }
    let sigma_min = measurements.iter().map(|m| m.sigma_min).fold(f64::INFINITY, f64::min);
    let sigma_max = measurements.iter().map(|m| m.sigma_max).fold(0.0_f64, f64::max);
    let eps = measurements.iter().map(|m| m.eps_lambda).fold(0.0_f64, f64::max);
    let theta = crate::analysis::forcing_bound(0.0, sigma_min, sigma_max, eps);
    let worst_ratio = measurements.iter().map(|m| m.ratio).fold(0.0_f64, f64::max);
    rows.push(row_le(
        "forcing/model_ratio_le_theta",
        worst_ratio,
        theta,
        &format!(
            "{} certified iterates; theta from measured sigma* = {:.3e}, M = {:.3e}, eps = {:.3e}",
            measurements.len(),
            sigma_min,
            sigma_max,
            eps
        ),
    ));
    // the theta bound uses a Frobenius (hence conservative) design error;
    // the operative contraction statement is the measured ratio itself
    rows.push(row_le(
        "forcing/measured_contraction",
        worst_ratio,
        1.0,
        &format!("every certified surrogate step contracts (theta bound itself is {theta:.3e})"),
    ));
    Ok(())
}

fn majorant_rows(rows: &mut Vec<CheckRow>, seed: u64) -> Result<()> {
    // kappa = 1 model problem on the periodic mean-zero frame
    let spec = elliptic_spec(1.0, Grid::periodic_1d(64));
    let mut worst = f64::INFINITY;
    let mut certified = 0;
    for draw in 0..6 {
        let u = periodic_draw(&spec.grid, 4.0, seed + 4, draw, true)?;
        let input = ProblemInput::Field(u.clone());
        for lambda in [0.0, 1e-2] {
            let trace = nk_solve(&spec, &input, &Field::zeros(&spec.grid), lambda, 8, 1e-13)?;
            let r = trace
                .iterates
                .iter()
                .map(v_seminorm)
                .fold(0.0_f64, f64::max)
                .max(1e-12)
                * 1.01;
            let cert = match elliptic_constants(r, lambda, 0.0, &u) {
                Ok(c) => c,
                Err(_) => continue,
            };
            if cert.h_tilde > 0.5 {
                continue;
            }
            certified += 1;
            let slack = majorant_domination_slack(&trace.iterates, &cert)?;
            worst = worst.min(slack);
        }
    }
    // the first Newton increment equals eta by definition; measuring the
    // two through different routes (dual-norm solve vs the NK pipeline)
    // leaves ~1e-11 of rounding, so the slack tolerance sits at 1e-9,
    // far below any O(eta)-scale violation of the bound
    rows.push(row_ge(
        "majorant/domination_slack",
        worst,
        -1e-9,
        &format!("min over {certified} certified runs of (majorant - measured) increments"),
    ));
    rows.push(row_ge(
        "majorant/certified_runs",
        certified as f64,
        4.0,
        "enough runs satisfied h <= 1/2 to make the check meaningful",
    ));
    Ok(())
}

fn rate_rows(rows: &mut Vec<CheckRow>, seed: u64) -> Result<()> {
    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(63));
    // (iv) lambda_k <= c |F(v_k)|: fitted local order approaches quadratic
    let mut orders = Vec::new();
    for draw in 0..6 {
        let u = ProblemInput::Field(periodic_draw(&spec.grid, 1.0, seed + 5, draw, false)?);
        let reference = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 0.0, 30, 1e-15)?;
        let vstar = reference.final_iterate();
        let mut v = Field::zeros(&spec.grid);
        let mut errors = vec![v.rel_l2_error(vstar)];
        for _ in 0..12 {
            let r = rmse(&spec.residual(&u, &v)?);
            let lambda = r.min(1e-4);
            let (next, _) = crate::nk::nk_step(&spec, &u, &v, lambda)?;
            v = next;
            errors.push(v.rel_l2_error(vstar));
            if *errors.last().unwrap() < 1e-15 {
                break;
            }
        }
        if let Some(o) = fit_local_order(&errors) {
            orders.push(o);
        }
    }
    orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = orders[orders.len() / 2];
    rows.push(row_ge(
        "rates/local_order",
        median,
        1.9,
        &format!("median fitted order over {} traces with lambda_k <= |F|", orders.len()),
    ));

    // (i) fixed lambda = 0.3 sigma*^2: tail ratio <= theta/(1-theta) + 0.05
    let mut worst_ratio = 0.0_f64;
    let mut bound = 0.0;
    for draw in 0..3 {
        let u = ProblemInput::Field(periodic_draw(&spec.grid, 1.0, seed + 6, draw, false)?);
        let reference = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 0.0, 30, 1e-15)?;
        let vstar = reference.final_iterate();
        let jstar = spec.jacobian(&u, vstar)?;
        let (smin, _) = extreme_singular_values(&jstar);
        let lambda = 0.3 * smin * smin;
        let theta = lambda / (lambda + smin * smin);
        bound = theta / (1.0 - theta) + 0.05;
        let trace = nk_solve(&spec, &u, &Field::zeros(&spec.grid), lambda, 80, 1e-15)?;
        let errors: Vec<f64> = trace.iterates.iter().map(|v| v.rel_l2_error(vstar)).collect();
        for w in errors.windows(2) {
            if w[0] > 1e-11 && w[0] < 1e-3 && w[1] > 1e-13 {
                worst_ratio = worst_ratio.max(w[1] / w[0]);
            }
        }
    }
    rows.push(row_le(
        "rates/linear_tail_ratio",
        worst_ratio,
        bound,
        "fixed lambda = 0.3 sigma*^2; bound is theta/(1-theta) + 0.05",
    ));
    Ok(())
}

fn design_error_proxy_row(rows: &mut Vec<CheckRow>, seed: u64, workers: usize) -> Result<()> {
    // informational: fit eps(lambda) ~ C lambda^-2 and report the balance
    // point lambda* = (C sigma*^2)^(1/3) only when the fit is stable
    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(31));
    let mut opts = GenerateOptions::new(
        ParamMode::Direct,
        InputDistribution::Gp { kernel: KernelSpec::periodic(10.0, 0.5) },
        12,
        3,
    );
    opts.seed = seed + 7;
    opts.workers = workers;
    opts.lambda_train = vec![1e-3, 1e-2, 1e-1];
    let ds = generate_training_data(&spec, &opts)?;
    let model = fit(&ds, KernelFamily::Gaussian, 1e-10, &LengthscalePolicy::Median)?;
    let engine = ModelEngine { model: &model };
    let (_, u) = sample_problem_input(&spec, &opts.input, seed + 8, 500, false)?;
    let trace = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 1e-2, 4, 1e-12)?;
    let v = &trace.iterates[2];
    let mut pts = Vec::new();
    for &lambda in &[1e-3, 1e-2, 1e-1] {
        let m = empirical_forcing(&spec, &engine, &u, v, lambda)?;
        if m.eps_lambda > 0.0 {
            pts.push((lambda.ln(), m.eps_lambda.ln()));
        }
    }
    let detail = if pts.len() == 3 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let slope = num / den;
        let intercept = my - slope * mx;
        let resid: f64 = pts
            .iter()
            .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
            .sum::<f64>()
            .sqrt();
        if (slope + 2.0).abs() < 1.0 && resid < 0.5 {
            let c = intercept.exp();
            let jac = spec.jacobian(&u, v)?;
            let (smin, _) = extreme_singular_values(&jac);
            let lstar = (c * smin * smin).cbrt();
            format!("eps ~ C lambda^-2 fit stable (slope {slope:.2}); balance lambda* = {lstar:.3e}")
        } else {
            format!("proxy fit unstable (slope {slope:.2}); measured eps used directly, no lambda* reported")
        }
    } else {
        "insufficient eps measurements; measured eps used directly".to_string()
    };
    rows.push(CheckRow {
        name: "schedule/design_error_proxy".into(),
        value: 0.0,
        bound: 0.0,
        pass: true,
        detail,
    });
    Ok(())
}

fn inverse_factor_identity_row(rows: &mut Vec<CheckRow>, seed: u64) -> Result<()> {
    // R^T (lambda I + J^T J) R = I on the certification Jacobians
    let spec = elliptic_spec(50.0, Grid::dirichlet_1d(63));
    let mut worst = 0.0_f64;
    for draw in 0..3 {
        let u = ProblemInput::Field(periodic_draw(&spec.grid, 1.0, seed + 9, draw, false)?);
        let trace = nk_solve(&spec, &u, &Field::zeros(&spec.grid), 0.0, 5, 1e-12)?;
        for (v, lambda) in trace.iterates.iter().zip([0.0, 1e-2, 1.0]) {
            let jac = spec.jacobian(&u, v)?;
            let r = inverse_cholesky_factor(&jac, lambda)?;
            let gram = crate::linalg::tikhonov_gram(&jac, lambda)?;
            let prod = r
                .as_matrix()
                .transpose()
                .mul(gram.as_matrix())?
                .mul(r.as_matrix())?;
            let defect = prod
                .sub(&crate::matrix::Matrix::identity(prod.rows()))?
                .frobenius_norm();
            worst = worst.max(defect);
        }
    }
    rows.push(row_le(
        "linalg/inverse_factor_identity",
        worst,
        1e-9,
        "R^T (lambda I + J^T J) R = I across flow iterates and lambdas",
    ));
    Ok(())
}

/// Runs every certification row. All tolerances are fixed here.
pub fn theory_check(seed: u64, workers: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    resolvent_rows(&mut rows, seed)?;
    constants_rows(&mut rows)?;
    inverse_factor_identity_row(&mut rows, seed)?;
    forcing_exact_rows(&mut rows, seed)?;
    forcing_model_rows(&mut rows, seed, workers)?;
    majorant_rows(&mut rows, seed)?;
    rate_rows(&mut rows, seed)?;
    design_error_proxy_row(&mut rows, seed, workers)?;
    Ok(rows)
}

/// A forced-failure variant: an eps_lambda large enough to push the elliptic
/// forcing bound past one must surface as an error row.
pub fn forced_forcing_failure() -> CheckRow {
    let grid = Grid::periodic_1d(64);
    let f = Field::new(
        grid.clone(),
        grid.coordinates().iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).sin()).collect(),
    )
    .unwrap();
    match elliptic_constants(1.0, 0.0, 10.0, &f) {
        Err(crate::error::NkError::ForcingExceedsOne(t)) => CheckRow {
            name: "constants/forced_failure".into(),
            value: t,
            bound: 1.0,
            pass: false,
            detail: "forcing bound >= 1 correctly rejected".into(),
        },
        other => CheckRow {
            name: "constants/forced_failure".into(),
            value: f64::NAN,
            bound: 1.0,
            pass: false,
            detail: format!("unexpected outcome: {other:?}"),
        },
    }
}
