//! The online emulated iteration: factor-model-driven quasi-Newton updates
//! with a joint (lambda, alpha) line search.
//!
//! A step costs one Jacobian build, one factor prediction per distinct
//! candidate lambda (a single prediction when the model ignores lambda),
//! two triangular mat-vecs per direction, and one residual evaluation per
//! candidate; the counts are recorded in the report.

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};
use crate::grid::Field;
use crate::linalg::{inverse_cholesky_factor, TriangularFactor};
use crate::matrix::{rmse, Matrix};
use crate::nk::{advance_input, NkTrace};
use crate::problems::{build_jacobian_from_coefficients, operator_coefficients, ProblemInput, ProblemSpec};
use crate::surrogate::{ExpertEnsemble, SurrogateModel};

/// Joint relaxation/learning-rate state with its inflate/deflate factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lambda: f64,
    pub alpha: f64,
    pub beta_lambda: f64,
    pub beta_alpha: f64,
    pub kappa_lambda: f64,
    pub kappa_alpha: f64,
}

impl ScheduleState {
    /// Default constants: halving/doubling factors, alpha = 1, lambda as
    /// trained. A zero training lambda is floored to the smallest positive
    /// double; it only matters to lambda-sensitive models.
    pub fn new(lambda: f64) -> Self {
        ScheduleState {
            lambda: lambda.max(f64::MIN_POSITIVE),
            alpha: 1.0,
            beta_lambda: 2.0,
            beta_alpha: 2.0,
            kappa_lambda: 0.5,
            kappa_alpha: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 || self.alpha <= 0.0 {
            return Err(NkError::InvalidConfig("schedule lambda and alpha must be positive".into()));
        }
        for (k, b) in [(self.kappa_lambda, self.beta_lambda), (self.kappa_alpha, self.beta_alpha)] {
            if !(k > 0.0 && k < 1.0 && b > 1.0) {
                return Err(NkError::InvalidConfig(
                    "deflate factors must lie in (0,1) and inflate factors above 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// The 9 candidate pairs `{kl*l, l, bl*l} x {ka*a, a, ba*a}` in
    /// ascending lexicographic order (duplicates allowed when factors
    /// collapse).
    pub fn propose_candidates(&self) -> Vec<(f64, f64)> {
        let ls = [
            self.kappa_lambda * self.lambda,
            self.lambda,
            self.beta_lambda * self.lambda,
        ];
        let als = [self.kappa_alpha * self.alpha, self.alpha, self.beta_alpha * self.alpha];
        let mut out = Vec::with_capacity(9);
        for l in ls {
            for a in als {
                out.push((l, a));
            }
        }
        out
    }
}

/// Where step directions come from: a factor model, an expert ensemble over
/// operator coefficients, or the exact factors (reference stand-in).
pub trait FactorEngine {
    fn jacobian(&self, spec: &ProblemSpec, u: &ProblemInput, v: &Field) -> Result<Matrix>;
    fn factor(
        &self,
        spec: &ProblemSpec,
        u: &ProblemInput,
        v: &Field,
        jacobian: &Matrix,
        lambda: f64,
    ) -> Result<TriangularFactor>;
    /// Whether predictions change with the candidate lambda.
    fn lambda_sensitive(&self) -> bool;
    /// Unknown-ordering permutation of the factor coordinates, if any.
    fn permutation(&self) -> Option<&[usize]> {
        None
    }
}

/// Engine backed by a trained state-input factor model.
pub struct ModelEngine<'a> {
    pub model: &'a SurrogateModel,
}

impl FactorEngine for ModelEngine<'_> {
    fn jacobian(&self, spec: &ProblemSpec, u: &ProblemInput, v: &Field) -> Result<Matrix> {
        spec.jacobian(u, v)
    }

    fn factor(
        &self,
        spec: &ProblemSpec,
        u: &ProblemInput,
        v: &Field,
        _jacobian: &Matrix,
        lambda: f64,
    ) -> Result<TriangularFactor> {
        let z = spec.direct_features(u, v)?;
        let z = match self.permutation() {
            Some(p) => permute_blocks(p, &z, spec.grid.node_count()),
            None => z,
        };
        self.model.predict(&z, lambda)
    }

    fn lambda_sensitive(&self) -> bool {
        self.model.meta.lambda_feature
    }

    fn permutation(&self) -> Option<&[usize]> {
        self.model.meta.ordering_permutation.as_deref()
    }
}

/// Engine backed by an expert ensemble over operator coefficients: each
/// step recomputes `(a,b,c)`, queries the aggregate, and builds the
/// Jacobian from the coefficients.
pub struct EnsembleEngine<'a> {
    pub ensemble: &'a ExpertEnsemble,
}

impl FactorEngine for EnsembleEngine<'_> {
    fn jacobian(&self, spec: &ProblemSpec, u: &ProblemInput, v: &Field) -> Result<Matrix> {
        let triple = operator_coefficients(spec, u, v)?;
        build_jacobian_from_coefficients(&triple, &spec.grid)
    }

    fn factor(
        &self,
        spec: &ProblemSpec,
        u: &ProblemInput,
        v: &Field,
        _jacobian: &Matrix,
        lambda: f64,
    ) -> Result<TriangularFactor> {
        let z = spec.coefficient_features(u, v)?;
        self.ensemble.aggregate_predict(&z, lambda)
    }

    fn lambda_sensitive(&self) -> bool {
        false
    }
}

/// Exact-factor stand-in: factors computed from the Jacobian directly.
pub struct ExactFactorEngine;

impl FactorEngine for ExactFactorEngine {
    fn jacobian(&self, spec: &ProblemSpec, u: &ProblemInput, v: &Field) -> Result<Matrix> {
        spec.jacobian(u, v)
    }

    fn factor(
        &self,
        _spec: &ProblemSpec,
        _u: &ProblemInput,
        _v: &Field,
        jacobian: &Matrix,
        lambda: f64,
    ) -> Result<TriangularFactor> {
        inverse_cholesky_factor(jacobian, lambda)
    }

    fn lambda_sensitive(&self) -> bool {
        true
    }
}

fn permute_blocks(p: &[usize], z: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for block in z.chunks(n) {
        out.extend(p.iter().map(|&i| block[i]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TolResidual,
    TolStep,
    Budget,
    Diverged,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub jacobian_builds: usize,
    pub factor_predictions: usize,
    pub triangular_matvecs: usize,
    pub residual_evals: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub trace: NkTrace,
    /// Relative L2 error per iterate against the reference, when supplied.
    pub rel_l2_errors: Vec<f64>,
    /// Accepted (lambda, alpha) per iteration.
    pub schedule_history: Vec<(f64, f64)>,
    pub stop_reason: StopReason,
    pub ops: OpCounts,
}

impl SolveReport {
    pub fn final_iterate(&self) -> &Field {
        self.trace.final_iterate()
    }

    pub fn final_rel_l2(&self) -> Option<f64> {
        self.rel_l2_errors.last().copied()
    }

    pub fn iterations(&self) -> usize {
        self.trace.iterations()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub budget: usize,
    /// Residual tolerance relative to the initial residual.
    pub tol_res: f64,
    /// Step tolerance relative to the updated iterate norm.
    pub tol_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { budget: 50, tol_res: 1e-14, tol_step: 1e-14 }
    }
}

struct StepOutcome {
    v: Field,
    residual_rms: f64,
    step_rms: f64,
    schedule: ScheduleState,
    accepted: (f64, f64),
}

/// One line-search step: evaluates the 9 candidate updates, accepts the one
/// with the smallest residual if it strictly decreases, otherwise falls
/// back to a halved pure-gradient step (up to 20 halvings).
fn line_search_step<E: FactorEngine>(
    spec: &ProblemSpec,
    engine: &E,
    u: &ProblemInput,
    v: &Field,
    current_rms: f64,
    schedule: &ScheduleState,
    ops: &mut OpCounts,
) -> Result<StepOutcome> {
    let jac = engine.jacobian(spec, u, v)?;
    ops.jacobian_builds += 1;
    let residual = spec.residual(u, v)?;
    let grad = jac.matvec_transpose(&residual)?;
    let perm = engine.permutation().map(|p| p.to_vec());
    let candidates = schedule.propose_candidates();

    // one direction per distinct candidate lambda (one total when the
    // model ignores lambda)
    let lambda_keys: Vec<f64> = if engine.lambda_sensitive() {
        let mut ks: Vec<f64> = candidates.iter().map(|c| c.0).collect();
        ks.dedup_by(|a, b| a.to_bits() == b.to_bits());
        ks
    } else {
        vec![candidates[0].0]
    };
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(lambda_keys.len());
    for &lambda in &lambda_keys {
        let factor = engine.factor(spec, u, v, &jac, lambda)?;
        ops.factor_predictions += 1;
        let d = match &perm {
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
        ops.triangular_matvecs += 2;
        directions.push(d);
    }
    let dir_index = |lambda: f64| -> usize {
        if !engine.lambda_sensitive() {
            return 0;
        }
        lambda_keys
            .iter()
            .position(|k| k.to_bits() == lambda.to_bits())
            .expect("candidate lambda has a direction")
    };

    let mut best: Option<(f64, (f64, f64), Field)> = None;
    for &(lambda, alpha) in &candidates {
        let d = &directions[dir_index(lambda)];
        let mut vc = v.clone();
        for (x, s) in vc.values.iter_mut().zip(d) {
            *x -= alpha * s;
        }
        if !vc.values.iter().all(|x| x.is_finite()) {
            return Err(NkError::NonFiniteUpdate);
        }
        let rc = rmse(&spec.residual(u, &vc)?);
        ops.residual_evals += 1;
        if best.as_ref().map_or(true, |(b, _, _)| rc < *b) {
            best = Some((rc, (lambda, alpha), vc));
        }
    }
    let (best_rms, (bl, ba), bv) = best.expect("nine candidates evaluated");
    if best_rms < current_rms {
        let step_rms = step_norm(&bv, v);
        let mut sched = schedule.clone();
        sched.lambda = bl.max(f64::MIN_POSITIVE);
        sched.alpha = ba;
        return Ok(StepOutcome {
            v: bv,
            residual_rms: best_rms,
            step_rms,
            schedule: sched,
            accepted: (bl, ba),
        });
    }
    // fallback: pure gradient direction, alpha halved up to 20 times
    let mut alpha = schedule.alpha;
    for _ in 0..20 {
        alpha *= 0.5;
        let mut vc = v.clone();
        for (x, g) in vc.values.iter_mut().zip(&grad) {
            *x -= alpha * g;
        }
        let rc = rmse(&spec.residual(u, &vc)?);
        ops.residual_evals += 1;
        if rc < current_rms {
            let step_rms = step_norm(&vc, v);
            let mut sched = schedule.clone();
            sched.alpha = schedule.alpha * schedule.kappa_alpha;
            let accepted = (sched.lambda, alpha);
            return Ok(StepOutcome { v: vc, residual_rms: rc, step_rms, schedule: sched, accepted });
        }
    }
    Err(NkError::StallDetected)
}

fn step_norm(a: &Field, b: &Field) -> f64 {
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    rmse(&d)
}

/// Runs the emulated iteration with any factor engine until tolerance,
/// stall (reported as a zero-size step), budget, or divergence.
pub fn solve_with_engine<E: FactorEngine>(
    spec: &ProblemSpec,
    engine: &E,
    u: &ProblemInput,
    v0: &Field,
    schedule: ScheduleState,
    opts: &SolveOptions,
    reference: Option<&Field>,
) -> Result<SolveReport> {
    schedule.validate()?;
    let mut ops = OpCounts::default();
    let r0 = rmse(&spec.residual(u, v0)?);
    ops.residual_evals += 1;
    let mut trace = NkTrace {
        iterates: vec![v0.clone()],
        residual_norms: vec![r0],
        increments: Vec::new(),
        lambdas: Vec::new(),
    };
    let mut rel_l2 = Vec::new();
    if let Some(rf) = reference {
        rel_l2.push(v0.rel_l2_error(rf));
    }
    let mut schedule_history = Vec::new();
    let mut sched = schedule;
    let mut stop = StopReason::Budget;
    if r0 == 0.0 {
        return Ok(SolveReport {
            trace,
            rel_l2_errors: rel_l2,
            schedule_history,
            stop_reason: StopReason::TolResidual,
            ops,
        });
    }
    let mut r_cur = r0;
    for _ in 0..opts.budget {
        let prev = trace.iterates.last().unwrap().clone();
        let outcome = match line_search_step(spec, engine, u, &prev, r_cur, &sched, &mut ops) {
            Ok(o) => o,
            Err(NkError::StallDetected) => {
                stop = StopReason::TolStep;
                break;
            }
            Err(e) => return Err(e),
        };
        r_cur = outcome.residual_rms;
        trace.increments.push(outcome.step_rms);
        trace.lambdas.push(outcome.accepted.0);
        trace.residual_norms.push(r_cur);
        trace.iterates.push(outcome.v);
        schedule_history.push(outcome.accepted);
        sched = outcome.schedule;
        if let Some(rf) = reference {
            rel_l2.push(trace.iterates.last().unwrap().rel_l2_error(rf));
        }
        if r_cur > crate::nk::DIVERGENCE_FACTOR * r0 {
            stop = StopReason::Diverged;
            break;
        }
        if r_cur <= opts.tol_res * r0 {
            stop = StopReason::TolResidual;
            break;
        }
        let vn = rmse(&trace.iterates.last().unwrap().values);
        if trace.increments.last().unwrap() <= &(opts.tol_step * vn.max(f64::MIN_POSITIVE)) {
            stop = StopReason::TolStep;
            break;
        }
    }
    Ok(SolveReport {
        trace,
        rel_l2_errors: rel_l2,
        schedule_history,
        stop_reason: stop,
        ops,
    })
}

/// State-input mode with a trained factor model.
pub fn emulated_solve(
    spec: &ProblemSpec,
    model: &SurrogateModel,
    u: &ProblemInput,
    v0: &Field,
    schedule: ScheduleState,
    opts: &SolveOptions,
    reference: Option<&Field>,
) -> Result<SolveReport> {
    solve_with_engine(spec, &ModelEngine { model }, u, v0, schedule, opts, reference)
}

/// Coefficient mode with an expert ensemble.
pub fn ensemble_solve(
    spec: &ProblemSpec,
    ensemble: &ExpertEnsemble,
    u: &ProblemInput,
    v0: &Field,
    schedule: ScheduleState,
    opts: &SolveOptions,
    reference: Option<&Field>,
) -> Result<SolveReport> {
    solve_with_engine(spec, &EnsembleEngine { ensemble }, u, v0, schedule, opts, reference)
}

/// Marches a time-dependent problem with per-step emulated solves.
/// Returns the solution level and report for every step.
pub fn emulated_march<E: FactorEngine>(
    spec: &ProblemSpec,
    engine: &E,
    initial: &ProblemInput,
    steps: usize,
    schedule: &ScheduleState,
    opts: &SolveOptions,
) -> Result<Vec<(Field, SolveReport)>> {
    let mut input = initial.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let v0 = spec.default_initial_guess(&input)?;
        let report = solve_with_engine(spec, engine, &input, &v0, schedule.clone(), opts, None)?;
        let v = report.final_iterate().clone();
        input = advance_input(spec, &input, &v)?;
        out.push((v, report));
    }
    Ok(out)
}
