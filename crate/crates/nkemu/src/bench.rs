//! Evaluation driver: runs the emulated solver on fresh validation draws
//! against exact NK references and summarizes the errors.

use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{NkError, Result};
use crate::inference::{
    emulated_march, solve_with_engine, EnsembleEngine, FactorEngine, ModelEngine, SolveOptions,
    SolveReport,
};
use crate::io::{quantile, BenchReport, SolveReportJson};
use crate::nk::{nk_solve, parallel_map_indexed, reference_march, sample_problem_input, Dataset};
use crate::surrogate::{fit, ExpertEnsemble, SurrogateModel};

/// Fits the model named by the config to a dataset.
pub fn train_model(cfg: &RunConfig, dataset: &Dataset) -> Result<SurrogateModel> {
    fit(dataset, cfg.model.kernel_family, cfg.model.sigma2, &cfg.model.lengthscale)
}

pub enum EvalModel<'a> {
    Single(&'a SurrogateModel),
    Ensemble(&'a ExpertEnsemble),
}

struct DrawOutcome {
    error: f64,
    iterations: usize,
    per_step_errors: Vec<f64>,
    rel_l2_curve: Vec<f64>,
    report: Option<SolveReportJson>,
    note: Option<String>,
}

fn eval_draw<E: FactorEngine>(
    cfg: &RunConfig,
    spec: &crate::problems::ProblemSpec,
    engine: &E,
    draw: usize,
) -> Result<DrawOutcome> {
    let (spec, input) = sample_problem_input(
        spec,
        &cfg.input,
        cfg.eval.validation_seed,
        draw,
        cfg.data.project_zero_mean,
    )?;
    let opts = SolveOptions {
        budget: cfg.eval.budget,
        tol_res: cfg.eval.tol_res,
        tol_step: cfg.eval.tol_step,
    };
    let marching = cfg.eval.march_steps > 0;
    if marching {
        let refs = reference_march(
            &spec,
            &input,
            cfg.eval.march_steps,
            cfg.data.lambda_flow,
            cfg.eval.reference_max_iter,
            cfg.eval.reference_tol,
        )?;
        let schedule = cfg.schedule_state();
        let emu = emulated_march(&spec, engine, &input, cfg.eval.march_steps, &schedule, &opts)?;
        let per_step: Vec<f64> =
            emu.iter().zip(&refs).map(|((v, _), r)| v.rel_l2_error(r)).collect();
        let iterations = emu.iter().map(|(_, rep)| rep.iterations()).sum();
        let error = *per_step.last().expect("march has steps");
        Ok(DrawOutcome {
            error,
            iterations,
            per_step_errors: per_step,
            rel_l2_curve: Vec::new(),
            report: None,
            note: None,
        })
    } else {
        let solve_start = Instant::now();
        let v0 = spec.default_initial_guess(&input)?;
        // reference: the exact NK solution of the same problem instance
        // (for the inverse problem this recovers the truth conductivity)
        let reference = nk_solve(
            &spec,
            &input,
            &v0,
            cfg.data.lambda_flow,
            cfg.eval.reference_max_iter,
            cfg.eval.reference_tol,
        )?
        .final_iterate()
        .clone();
        let report: SolveReport = solve_with_engine(
            &spec,
            engine,
            &input,
            &v0,
            cfg.schedule_state(),
            &opts,
            Some(&reference),
        )?;
        Ok(DrawOutcome {
            error: report.final_rel_l2().unwrap_or(f64::NAN),
            iterations: report.iterations(),
            per_step_errors: Vec::new(),
            rel_l2_curve: report.rel_l2_errors.clone(),
            report: Some(
                SolveReportJson::from_report(&report)
                    .with_seconds(solve_start.elapsed().as_secs_f64()),
            ),
            note: None,
        })
    }
}

/// Evaluates a trained model (or ensemble) per the config. Per-draw
/// failures are recorded in the notes, not fatal.
pub fn evaluate(cfg: &RunConfig, model: &EvalModel, workers: usize) -> Result<BenchReport> {
    let spec = cfg.build_problem()?;
    let start = Instant::now();
    let outcomes = parallel_map_indexed(cfg.eval.validation_draws, workers, |draw| {
        match model {
            EvalModel::Single(m) => eval_draw(cfg, &spec, &ModelEngine { model: m }, draw),
            EvalModel::Ensemble(e) => eval_draw(cfg, &spec, &EnsembleEngine { ensemble: e }, draw),
        }
        .or_else(|e| {
            Ok(DrawOutcome {
                error: f64::NAN,
                iterations: 0,
                per_step_errors: Vec::new(),
                rel_l2_curve: Vec::new(),
                report: None,
                note: Some(format!("draw {draw} failed: {e}")),
            })
        })
    });
    let mut errors = Vec::new();
    let mut iterations = Vec::new();
    let mut per_step = Vec::new();
    let mut curves = Vec::new();
    let mut solves = Vec::new();
    let mut notes = Vec::new();
    for o in outcomes {
        let o = o?;
        errors.push(o.error);
        iterations.push(o.iterations);
        per_step.extend(o.per_step_errors);
        if !o.rel_l2_curve.is_empty() {
            curves.push(o.rel_l2_curve);
        }
        if let Some(r) = o.report {
            solves.push(r);
        }
        if let Some(n) = o.note {
            notes.push(n);
        }
    }
    // median error per iteration index, each curve extended by its last value
    let max_len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut error_curve = Vec::with_capacity(max_len);
    for k in 0..max_len {
        let mut vals: Vec<f64> = curves
            .iter()
            .map(|c| *c.get(k).unwrap_or_else(|| c.last().unwrap()))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        error_curve.push(quantile(&vals, 0.5));
    }
    // the headline quantiles summarize the final per-draw errors; marches
    // additionally report the per-step error population
    let mut population: Vec<f64> = errors.clone();
    population.retain(|e| e.is_finite());
    if population.is_empty() {
        return Err(NkError::InvalidConfig("no successful validation draws".into()));
    }
    population.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut per_step_sorted = per_step.clone();
    per_step_sorted.retain(|e| e.is_finite());
    per_step_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let per_step_median =
        if per_step_sorted.is_empty() { None } else { Some(quantile(&per_step_sorted, 0.5)) };
    let mut its: Vec<f64> = iterations.iter().map(|&i| i as f64).collect();
    its.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BenchReport {
        name: cfg.name.clone(),
        problem: cfg.problem.name().to_string(),
        config_hash: cfg.hash(),
        errors,
        iterations,
        median_error: quantile(&population, 0.5),
        quantile10: quantile(&population, 0.1),
        quantile90: quantile(&population, 0.9),
        median_iterations: quantile(&its, 0.5),
        error_curve,
        per_step_errors: per_step,
        per_step_median,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        solves,
        notes,
    })
}
