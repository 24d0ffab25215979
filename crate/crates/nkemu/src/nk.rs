//! The exact Tikhonov-regularized Newton-Kantorovich reference solver and
//! the offline training-data generation loop.

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{inverse_cholesky_factor_detailed, TriangularFactor};
use crate::matrix::rmse;
use crate::ordering::maxmin_ordering;
use crate::problems::{ProblemInput, ProblemKind, ProblemSpec};
use crate::rng::{CounterRng, RNG_ALGORITHM};
use crate::sampling::{sampling_factor, sum_of_sines_from_coefficients, KernelSpec};

/// Residual growth factor treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Streams reserved per draw index, so rejection retries and auxiliary
/// fields never collide across draws and draws can be generated in parallel.
pub const STREAMS_PER_DRAW: u64 = 64;

#[derive(Debug, Clone)]
pub struct NkTrace {
    pub iterates: Vec<Field>,
    /// RMSE of the residual at each iterate (same length as `iterates`).
    pub residual_norms: Vec<f64>,
    /// RMSE of each accepted step (one fewer than `iterates`).
    pub increments: Vec<f64>,
    /// Tikhonov parameter used for each step.
    pub lambdas: Vec<f64>,
}

impl NkTrace {
    pub fn final_iterate(&self) -> &Field {
        self.iterates.last().expect("trace has at least the initial iterate")
    }

    pub fn iterations(&self) -> usize {
        self.increments.len()
    }
}

/// One regularized NK step: `v - (J^T J + lambda I)^{-1} J^T F(u,v)`,
/// returning the updated field and the inverse factor used.
pub fn nk_step(
    spec: &ProblemSpec,
    u: &ProblemInput,
    v: &Field,
    lambda: f64,
) -> Result<(Field, TriangularFactor)> {
    let jac = spec.jacobian(u, v)?;
    let r = inverse_cholesky_factor_detailed(&jac, lambda)?.factor;
    let residual = spec.residual(u, v)?;
    let grad = jac.matvec_transpose(&residual)?;
    let step = r.apply_outer(&grad)?;
    let mut next = v.clone();
    for (x, s) in next.values.iter_mut().zip(&step) {
        *x -= s;
    }
    if !next.values.iter().all(|x| x.is_finite()) {
        return Err(NkError::NonFiniteUpdate);
    }
    Ok((next, r))
}

/// Runs the reference NK iteration until the residual RMSE drops below
/// `tol` relative to the initial residual, or `max_iter` steps.
pub fn nk_solve(
    spec: &ProblemSpec,
    u: &ProblemInput,
    v0: &Field,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<NkTrace> {
    let mut trace = NkTrace {
        iterates: vec![v0.clone()],
        residual_norms: vec![rmse(&spec.residual(u, v0)?)],
        increments: Vec::new(),
        lambdas: Vec::new(),
    };
    let r0 = trace.residual_norms[0];
    if r0 == 0.0 {
        return Ok(trace);
    }
    for _ in 0..max_iter {
        let prev = trace.iterates.last().unwrap().clone();
        let (next, _) = nk_step(spec, u, &prev, lambda)?;
        let rn = rmse(&spec.residual(u, &next)?);
        let inc: Vec<f64> = next
            .values
            .iter()
            .zip(&prev.values)
            .map(|(a, b)| a - b)
            .collect();
        trace.increments.push(rmse(&inc));
        trace.lambdas.push(lambda);
        trace.residual_norms.push(rn);
        trace.iterates.push(next);
        if !rn.is_finite() || rn > DIVERGENCE_FACTOR * r0 {
            return Err(NkError::Diverged(DIVERGENCE_FACTOR));
        }
        if rn <= tol * r0 {
            break;
        }
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

/// Whether the factor model sees the state `(u,v)` (dropping `u` when the
/// Jacobian does not depend on it) or the operator coefficients `(a,b,c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    Direct,
    Coefficients,
}

/// Distribution of the sampled problem inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InputDistribution {
    Gp { kernel: KernelSpec },
    SumOfSines,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub z: Vec<f64>,
    pub lambda: f64,
    /// Row-major packed lower triangle of the inverse factor.
    pub factor: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub problem: ProblemKind,
    pub grid: Grid,
    pub mode: ParamMode,
    pub input_distribution: InputDistribution,
    pub m_draws: usize,
    pub n_warm: usize,
    pub lambda_flow: f64,
    pub lambda_train: Vec<f64>,
    pub seed: u64,
    pub rng: String,
    pub z_layout: String,
    pub z_dim: usize,
    pub factor_dim: usize,
    pub problem_dim: usize,
    pub record_count: usize,
    /// Time steps marched per draw (time-dependent problems only; 0 = one
    /// stationary solve per draw).
    pub march_steps: usize,
    /// Records are collected at every `record_stride`-th time step.
    pub record_stride: usize,
    pub project_zero_mean: bool,
    /// Max-min permutation of the unknown ordering, when enabled.
    pub ordering_permutation: Option<Vec<usize>>,
    /// Indices of records whose Gram factorization needed the diagonal
    /// jitter (singular at the stored lambda).
    pub jittered_records: Vec<usize>,
    /// Darcy fixed forcing values, stored for exact reproducibility.
    pub forcing: Option<Vec<f64>>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<TrainingRecord>,
    pub manifest: DatasetManifest,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub mode: ParamMode,
    pub input: InputDistribution,
    pub m_draws: usize,
    pub n_warm: usize,
    pub lambda_flow: f64,
    pub lambda_train: Vec<f64>,
    pub seed: u64,
    /// Subtract the spatial mean from every drawn field.
    pub project_zero_mean: bool,
    /// Time steps to march per draw (Burgers/Gordon), 0 for stationary.
    pub march_steps: usize,
    pub record_stride: usize,
    /// Reorder unknowns by the max-min ordering before factorizing.
    pub use_maxmin_ordering: bool,
    pub workers: usize,
}

impl GenerateOptions {
    pub fn new(mode: ParamMode, input: InputDistribution, m_draws: usize, n_warm: usize) -> Self {
        GenerateOptions {
            mode,
            input,
            m_draws,
            n_warm,
            lambda_flow: 0.0,
            lambda_train: vec![0.0],
            seed: 0,
            project_zero_mean: false,
            march_steps: 0,
            record_stride: 1,
            use_maxmin_ordering: false,
            workers: 1,
        }
    }
}

/// Packs the lower triangle of a factor row-major.
pub fn pack_lower(factor: &TriangularFactor) -> Vec<f64> {
    crate::surrogate::vectorize_factor(factor)
}

/// Samples the problem input for one draw, possibly specializing the spec
/// (per-draw 1D Darcy forcing). Rejection retries consume successive
/// sub-streams of the draw's reserved block.
pub fn sample_problem_input(
    spec: &ProblemSpec,
    input: &InputDistribution,
    seed: u64,
    draw: usize,
    project_zero_mean: bool,
) -> Result<(ProblemSpec, ProblemInput)> {
    let base = draw as u64 * STREAMS_PER_DRAW;
    let draw_field = |stream: u64| -> Result<Field> {
        let mut f = match input {
            InputDistribution::Gp { kernel } => {
                let factor = sampling_factor(kernel, &spec.grid)?;
                let mut rng = CounterRng::new(seed, stream);
                let xi = rng.normal_vec(factor.dim());
                Field::new(spec.grid.clone(), factor.matvec(&xi)?)
            }
            InputDistribution::SumOfSines => {
                let mut rng = CounterRng::new(seed, stream);
                let a = [rng.normal(), rng.normal(), rng.normal()];
                sum_of_sines_from_coefficients(&spec.grid, &a)
            }
        }?;
        if project_zero_mean {
            f.project_zero_mean();
        }
        Ok(f)
    };
    match spec.kind {
        ProblemKind::Elliptic { .. } => Ok((spec.clone(), ProblemInput::Field(draw_field(base)?))),
        ProblemKind::BurgersStep { .. } => {
            Ok((spec.clone(), ProblemInput::Field(draw_field(base)?)))
        }
        ProblemKind::GordonStep { .. } => {
            // zero initial velocity: both previous levels equal the IC
            let f0 = draw_field(base)?;
            Ok((spec.clone(), ProblemInput::Pair(f0.clone(), f0)))
        }
        ProblemKind::Darcy { .. } => {
            let u = draw_field(base)?;
            let mut spec = spec.clone();
            if spec.grid.dims == 1 {
                // coefficient-mode experts draw a per-realization forcing
                spec.forcing = Some(draw_field(base + 1)?);
            } else if spec.forcing.is_none() {
                return Err(NkError::MissingFixedData("darcy forcing field"));
            }
            Ok((spec, ProblemInput::Field(u)))
        }
        ProblemKind::Calderon => {
            // truth conductivity 1 + draw, rejected while not safely positive
            let mut truth = None;
            for r in 0..STREAMS_PER_DRAW {
                let mut f = draw_field(base + r)?;
                for v in &mut f.values {
                    *v += 1.0;
                }
                if f.values.iter().cloned().fold(f64::INFINITY, f64::min) > 0.1 {
                    truth = Some(f);
                    break;
                }
            }
            let truth = truth.ok_or(NkError::NonPositiveConductivity(0.0))?;
            let obs = crate::calderon::predicted_fluxes(spec, &truth)?;
            Ok((spec.clone(), ProblemInput::Observations(obs)))
        }
    }
}

/// The truth conductivity behind draw `draw` of a Calderon dataset (the
/// observations in `sample_problem_input` are its exact fluxes).
pub fn calderon_truth(
    spec: &ProblemSpec,
    input: &InputDistribution,
    seed: u64,
    draw: usize,
) -> Result<Field> {
    let base = draw as u64 * STREAMS_PER_DRAW;
    let InputDistribution::Gp { kernel } = input else {
        return Err(NkError::InvalidConfig("calderon draws require a GP input".into()));
    };
    let factor = sampling_factor(kernel, &spec.grid)?;
    for r in 0..STREAMS_PER_DRAW {
        let mut rng = CounterRng::new(seed, base + r);
        let xi = rng.normal_vec(factor.dim());
        let mut f = Field::new(spec.grid.clone(), factor.matvec(&xi)?)?;
        for v in &mut f.values {
            *v += 1.0;
        }
        if f.values.iter().cloned().fold(f64::INFINITY, f64::min) > 0.1 {
            return Ok(f);
        }
    }
    Err(NkError::NonPositiveConductivity(0.0))
}

/// Advances a time march: the solved level becomes the newest input level.
pub fn advance_input(spec: &ProblemSpec, input: &ProblemInput, v: &Field) -> Result<ProblemInput> {
    match spec.kind {
        ProblemKind::BurgersStep { .. } => Ok(ProblemInput::Field(v.clone())),
        ProblemKind::GordonStep { .. } => {
            let (u1, _) = input.pair()?;
            Ok(ProblemInput::Pair(v.clone(), u1.clone()))
        }
        _ => Err(NkError::UnsupportedKind("advance_input is for time marches")),
    }
}

fn features(spec: &ProblemSpec, mode: ParamMode, u: &ProblemInput, v: &Field) -> Result<Vec<f64>> {
    match mode {
        ParamMode::Direct => spec.direct_features(u, v),
        ParamMode::Coefficients => spec.coefficient_features(u, v),
    }
}

fn permute_vec(p: &[usize], x: &[f64]) -> Vec<f64> {
    p.iter().map(|&i| x[i]).collect()
}

/// Applies the unknown-ordering permutation to a feature vector laid out as
/// whole-grid blocks.
fn permute_features(p: &[usize], z: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(z.len() % n, 0);
    let mut out = Vec::with_capacity(z.len());
    for block in z.chunks(n) {
        out.extend(permute_vec(p, block));
    }
    out
}

fn permute_gram_rows(p: &[usize], j: &crate::matrix::Matrix) -> crate::matrix::Matrix {
    // permutes the COLUMNS of J (the unknown index); J rows are residual
    // components and stay in place
    let (r, c) = (j.rows(), j.cols());
    let mut out = crate::matrix::Matrix::zeros(r, c);
    for i in 0..r {
        for (k, &pk) in p.iter().enumerate() {
            out.set(i, k, j.get(i, pk));
        }
    }
    out
}

struct DrawOutput {
    records: Vec<TrainingRecord>,
    jittered: Vec<bool>,
}

fn generate_for_draw(
    spec: &ProblemSpec,
    opts: &GenerateOptions,
    permutation: Option<&[usize]>,
    draw: usize,
) -> Result<DrawOutput> {
    let (spec, mut input) =
        sample_problem_input(spec, &opts.input, opts.seed, draw, opts.project_zero_mean)?;
    let mut records = Vec::new();
    let mut jittered = Vec::new();
    let steps = opts.march_steps.max(1);
    let marching = opts.march_steps > 0;
    for step in 0..steps {
        let mut v = spec.default_initial_guess(&input)?;
        let record_this = !marching || step % opts.record_stride == 0;
        for i in 0..=opts.n_warm {
            let jac = spec.jacobian(&input, &v)?;
            let jac_p = permutation.map(|p| permute_gram_rows(p, &jac));
            let jac_used = jac_p.as_ref().unwrap_or(&jac);
            if record_this {
                let z = features(&spec, opts.mode, &input, &v)?;
                let z = match permutation {
                    Some(p) => permute_features(p, &z, spec.grid.node_count()),
                    None => z,
                };
                for &lambda in &opts.lambda_train {
                    let out = inverse_cholesky_factor_detailed(jac_used, lambda)?;
                    records.push(TrainingRecord {
                        z: z.clone(),
                        lambda,
                        factor: pack_lower(&out.factor),
                    });
                    jittered.push(out.jittered);
                }
            }
            if i < opts.n_warm {
                // flow update at lambda_flow (unpermuted frame)
                let rf = inverse_cholesky_factor_detailed(&jac, opts.lambda_flow)?.factor;
                let residual = spec.residual(&input, &v)?;
                let grad = jac.matvec_transpose(&residual)?;
                let stepv = rf.apply_outer(&grad)?;
                for (x, s) in v.values.iter_mut().zip(&stepv) {
                    *x -= s;
                }
                if !v.values.iter().all(|x| x.is_finite()) {
                    return Err(NkError::NonFiniteUpdate);
                }
            }
        }
        if marching && step + 1 < steps {
            input = advance_input(&spec, &input, &v)?;
        }
    }
    Ok(DrawOutput { records, jittered })
}

/// Runs `f` over `0..n` on `workers` threads, returning results in index
/// order regardless of scheduling.
pub fn parallel_map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut out: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<Result<T>>>> =
        out.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                **slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    out.into_iter().map(|o| o.expect("worker filled slot")).collect()
}

/// The offline data-generation loop: for each of `m_draws` sampled inputs,
/// runs `n_warm` flow steps at `lambda_flow` and stores one record per
/// training lambda at each visited iterate (i = 0..n_warm inclusive).
pub fn generate_training_data(spec: &ProblemSpec, opts: &GenerateOptions) -> Result<Dataset> {
    if opts.lambda_train.is_empty() {
        return Err(NkError::InvalidConfig("lambda_train must be non-empty".into()));
    }
    if opts.record_stride == 0 {
        return Err(NkError::InvalidConfig("record_stride must be positive".into()));
    }
    if matches!(opts.mode, ParamMode::Coefficients) && matches!(spec.kind, ProblemKind::Calderon) {
        return Err(NkError::UnsupportedKind(
            "calderon has no local second-order coefficient form",
        ));
    }
    let permutation: Option<Vec<usize>> = if opts.use_maxmin_ordering {
        let coords = spec.grid.coordinates();
        let topo = spec.grid.topology;
        let ord = maxmin_ordering(&coords, move |p| match topo {
            crate::grid::Topology::Periodic => 0.0,
            crate::grid::Topology::Dirichlet => p
                .iter()
                .map(|&x| x.min(1.0 - x))
                .fold(f64::INFINITY, f64::min),
        });
        Some(ord.permutation)
    } else {
        None
    };

    let results = parallel_map_indexed(opts.m_draws, opts.workers, |draw| {
        generate_for_draw(spec, opts, permutation.as_deref(), draw)
    });
    let mut records = Vec::new();
    let mut jittered_records = Vec::new();
    for r in results {
        let out = r?;
        for (rec, jit) in out.records.into_iter().zip(out.jittered) {
            if jit {
                jittered_records.push(records.len());
            }
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(NkError::EmptyDataset);
    }
    let n = spec.grid.node_count();
    let z_layout = match opts.mode {
        ParamMode::Direct => {
            if spec.jacobian_is_u_independent() {
                "v".to_string()
            } else {
                "u,v".to_string()
            }
        }
        ParamMode::Coefficients => match spec.grid.dims {
            1 => "a,b,c".to_string(),
            _ => "a,b1,b2,c".to_string(),
        },
    };
    let manifest = DatasetManifest {
        format_version: 1,
        problem: spec.kind.clone(),
        grid: spec.grid.clone(),
        mode: opts.mode,
        input_distribution: opts.input.clone(),
        m_draws: opts.m_draws,
        n_warm: opts.n_warm,
        lambda_flow: opts.lambda_flow,
        lambda_train: opts.lambda_train.clone(),
        seed: opts.seed,
        rng: RNG_ALGORITHM.to_string(),
        z_layout,
        z_dim: records[0].z.len(),
        factor_dim: records[0].factor.len(),
        problem_dim: n,
        record_count: records.len(),
        march_steps: opts.march_steps,
        record_stride: opts.record_stride,
        project_zero_mean: opts.project_zero_mean,
        ordering_permutation: permutation,
        jittered_records,
        forcing: spec.forcing.as_ref().map(|f| f.values.clone()),
        config_hash: None,
    };
    Ok(Dataset { records, manifest })
}

/// Reference time march: each step solved by the exact NK iteration.
/// Returns the solution level after every step.
pub fn reference_march(
    spec: &ProblemSpec,
    initial: &ProblemInput,
    steps: usize,
    lambda: f64,
    nk_iters: usize,
    tol: f64,
) -> Result<Vec<Field>> {
    let mut input = initial.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let v0 = spec.default_initial_guess(&input)?;
        let trace = nk_solve(spec, &input, &v0, lambda, nk_iters, tol)?;
        let v = trace.final_iterate().clone();
        out.push(v.clone());
        input = advance_input(spec, &input, &v)?;
    }
    Ok(out)
}
