//! Run configuration: a validated, hashable description of one experiment
//! (problem, grid, data generation, model, evaluation, schedule).
//!
//! Unknown keys are rejected so config drift fails loudly. Built-in desk
//! and paper profiles live here; the CLI can emit them as JSON files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NkError, Result};
use crate::grid::{Grid, Topology};
use crate::nk::{GenerateOptions, InputDistribution, ParamMode};
use crate::problems::{GordonNonlinearity, ProblemKind, ProblemSpec};
use crate::sampling::{KernelFamily, KernelSpec};
use crate::surrogate::LengthscalePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub sizes: Vec<usize>,
    pub topology: Topology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub m_draws: usize,
    pub n_warm: usize,
    pub lambda_flow: f64,
    pub lambda_train: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub project_zero_mean: bool,
    /// Time steps per draw for marching problems (0 = stationary).
    #[serde(default)]
    pub march_steps: usize,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub use_maxmin_ordering: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kernel_family: KernelFamily,
    pub sigma2: f64,
    #[serde(default)]
    pub lengthscale: LengthscalePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub validation_draws: usize,
    pub validation_seed: u64,
    pub budget: usize,
    #[serde(default = "default_tol")]
    pub tol_res: f64,
    #[serde(default = "default_tol")]
    pub tol_step: f64,
    /// Reference solver settings.
    #[serde(default = "default_ref_iter")]
    pub reference_max_iter: usize,
    #[serde(default = "default_tol")]
    pub reference_tol: f64,
    /// Time steps to march during evaluation (marching problems).
    #[serde(default)]
    pub march_steps: usize,
    /// Optional acceptance threshold on the median error (exit code 4).
    #[serde(default)]
    pub target_median: Option<f64>,
    /// Expert model directories for coefficient-mode ensemble evaluation.
    #[serde(default)]
    pub expert_models: Option<Vec<String>>,
}

fn default_tol() -> f64 {
    1e-14
}

fn default_ref_iter() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_alpha")]
    pub initial_alpha: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_kappa() -> f64 {
    0.5
}

fn default_beta() -> f64 {
    2.0
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { initial_alpha: 1.0, kappa: 0.5, beta: 2.0 }
    }
}

/// Fixed Darcy forcing: one kernel draw with its own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    pub kernel: KernelSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub problem: ProblemKind,
    pub grid: GridConfig,
    pub mode: ParamMode,
    pub input: InputDistribution,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub forcing: Option<ForcingConfig>,
}

impl RunConfig {
    /// Hash of the exact serialized config, embedded in every output.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| NkError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the grid per problem kind conventions.
    pub fn build_grid(&self) -> Result<Grid> {
        let sizes = &self.grid.sizes;
        let grid = match (&self.problem, self.grid.topology, sizes.len()) {
            (ProblemKind::Calderon, _, 2) => Grid::full_2d(sizes[0], sizes[1]),
            (_, Topology::Periodic, 1) => Grid::periodic_1d(sizes[0]),
            (_, Topology::Dirichlet, 1) => Grid::dirichlet_1d(sizes[0]),
            (_, Topology::Dirichlet, 2) => Grid::dirichlet_2d(sizes[0], sizes[1]),
            _ => {
                return Err(NkError::InvalidConfig(format!(
                    "unsupported grid for problem {}",
                    self.problem.name()
                )))
            }
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Builds the full problem spec, drawing the fixed forcing if needed.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let grid = self.build_grid()?;
        let mut spec = ProblemSpec {
            kind: self.problem.clone(),
            grid: grid.clone(),
            forcing: None,
            excitations: None,
        };
        match self.problem {
            ProblemKind::Darcy { .. } => {
                if grid.dims == 2 {
                    let fc = self.forcing.as_ref().ok_or_else(|| {
                        NkError::InvalidConfig("darcy needs a forcing config".into())
                    })?;
                    let batch = crate::sampling::sample_gp(&fc.kernel, &grid, 1, fc.seed)?;
                    spec.forcing = Some(batch.fields.into_iter().next().unwrap());
                }
                // 1D coefficient-mode experts draw per-realization forcing
            }
            ProblemKind::Calderon => {
                spec.excitations = Some(crate::calderon::hat_excitations(&grid));
            }
            _ => {}
        }
        Ok(spec)
    }

    pub fn generate_options(&self, workers: usize) -> GenerateOptions {
        GenerateOptions {
            mode: self.mode,
            input: self.input.clone(),
            m_draws: self.data.m_draws,
            n_warm: self.data.n_warm,
            lambda_flow: self.data.lambda_flow,
            lambda_train: self.data.lambda_train.clone(),
            seed: self.data.seed,
            project_zero_mean: self.data.project_zero_mean,
            march_steps: self.data.march_steps,
            record_stride: self.data.record_stride,
            use_maxmin_ordering: self.data.use_maxmin_ordering,
            workers,
        }
    }

    pub fn schedule_state(&self) -> crate::inference::ScheduleState {
        let lambda0 = self.data.lambda_train.first().copied().unwrap_or(0.0);
        let mut s = crate::inference::ScheduleState::new(lambda0);
        s.alpha = self.schedule.initial_alpha;
        s.kappa_lambda = self.schedule.kappa;
        s.kappa_alpha = self.schedule.kappa;
        s.beta_lambda = self.schedule.beta;
        s.beta_alpha = self.schedule.beta;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NkError::InvalidConfig(m));
        match &self.problem {
            ProblemKind::Elliptic { kappa } => {
                if self.grid.sizes.len() != 1 {
                    return fail("elliptic is 1D".into());
                }
                if *kappa < 0.0 {
                    return fail("kappa must be non-negative".into());
                }
            }
            ProblemKind::BurgersStep { nu, dt } => {
                if self.grid.sizes.len() != 1 || self.grid.topology != Topology::Periodic {
                    return fail("burgers_step needs a periodic 1D grid".into());
                }
                if *nu <= 0.0 || *dt <= 0.0 {
                    return fail("nu and dt must be positive".into());
                }
            }
            ProblemKind::Darcy { kappa } => {
                if self.grid.sizes.is_empty() || self.grid.sizes.len() > 2 {
                    return fail("darcy is 1D or 2D".into());
                }
                if *kappa < 0.0 {
                    return fail("kappa must be non-negative".into());
                }
                if self.grid.sizes.len() == 2 && self.forcing.is_none() {
                    return fail("2D darcy needs a forcing config".into());
                }
            }
            ProblemKind::GordonStep { kappa1, kappa2, dt, .. } => {
                if self.grid.sizes.len() != 1 || self.grid.topology != Topology::Periodic {
                    return fail("gordon_step needs a periodic 1D grid".into());
                }
                if *kappa1 <= 0.0 || *kappa2 < 0.0 || *dt <= 0.0 {
                    return fail("gordon parameters must be positive".into());
                }
            }
            ProblemKind::Calderon => {
                if self.grid.sizes.len() != 2 {
                    return fail("calderon is 2D".into());
                }
            }
        }
        if self.grid.sizes.iter().any(|&s| s < 3) {
            return fail("grid sizes must be >= 3".into());
        }
        if matches!(self.mode, ParamMode::Coefficients) {
            if self.grid.sizes.len() != 1 {
                return fail("coefficient mode needs a 1D grid".into());
            }
            if matches!(self.problem, ProblemKind::Calderon) {
                return fail("calderon has no coefficient form".into());
            }
        }
        if self.data.lambda_train.is_empty() {
            return fail("lambda_train must be non-empty".into());
        }
        if self.data.lambda_train.iter().any(|&l| l < 0.0) || self.data.lambda_flow < 0.0 {
            return fail("lambdas must be non-negative".into());
        }
        if self.data.m_draws == 0 {
            return fail("m_draws must be positive".into());
        }
        if self.data.record_stride == 0 {
            return fail("record_stride must be positive".into());
        }
        if self.model.sigma2 <= 0.0 {
            return fail("sigma2 must be positive".into());
        }
        if matches!(
            self.model.kernel_family,
            KernelFamily::Periodic | KernelFamily::InvLaplacian
        ) {
            return fail("factor models use matern52 or gaussian kernels".into());
        }
        let marching = matches!(
            self.problem,
            ProblemKind::BurgersStep { .. } | ProblemKind::GordonStep { .. }
        );
        if marching && self.data.march_steps == 0 {
            return fail("marching problems need march_steps >= 1".into());
        }
        if !marching && self.data.march_steps != 0 {
            return fail("stationary problems take march_steps = 0".into());
        }
        if let InputDistribution::Gp { kernel } = &self.input {
            kernel.validate()?;
        }
        if self.schedule.initial_alpha <= 0.0
            || self.schedule.kappa <= 0.0
            || self.schedule.kappa >= 1.0
            || self.schedule.beta <= 1.0
        {
            return fail("schedule constants out of range".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Built-in profiles
// ---------------------------------------------------------------------------

fn periodic_input() -> InputDistribution {
    InputDistribution::Gp { kernel: KernelSpec::periodic(10.0, 0.5) }
}

fn elliptic_profile(name: &str, m: usize, validation: usize) -> RunConfig {
    RunConfig {
        name: name.into(),
        problem: ProblemKind::Elliptic { kappa: 50.0 },
        grid: GridConfig { sizes: vec![63], topology: Topology::Dirichlet },
        mode: ParamMode::Direct,
        input: periodic_input(),
        data: DataConfig {
            m_draws: m,
            n_warm: 5,
            lambda_flow: 0.0,
            lambda_train: vec![0.0],
            seed: 1,
            project_zero_mean: false,
            march_steps: 0,
            record_stride: 1,
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Gaussian,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: validation,
            validation_seed: 1001,
            budget: 20,
            tol_res: 1e-14,
            tol_step: 1e-14,
            reference_max_iter: 25,
            reference_tol: 1e-14,
            march_steps: 0,
            target_median: Some(1e-12),
            expert_models: None,
        },
        schedule: ScheduleConfig::default(),
        forcing: None,
    }
}

fn burgers_profile(name: &str, nx: usize, nt: usize, m: usize, validation: usize, stride: usize) -> RunConfig {
    let dt = 1.0 / (nt - 1) as f64;
    RunConfig {
        name: name.into(),
        problem: ProblemKind::BurgersStep { nu: 1.0 / 50.0, dt },
        grid: GridConfig { sizes: vec![nx], topology: Topology::Periodic },
        mode: ParamMode::Direct,
        input: InputDistribution::SumOfSines,
        data: DataConfig {
            m_draws: m,
            n_warm: 5,
            lambda_flow: 0.0,
            lambda_train: vec![1e-2],
            seed: 2,
            project_zero_mean: false,
            march_steps: nt - 1,
            record_stride: stride,
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Gaussian,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: validation,
            validation_seed: 2002,
            budget: 25,
            tol_res: 1e-14,
            tol_step: 1e-14,
            reference_max_iter: 25,
            reference_tol: 1e-14,
            march_steps: nt - 1,
            target_median: Some(1e-10),
            expert_models: None,
        },
        schedule: ScheduleConfig::default(),
        forcing: None,
    }
}

fn darcy_profile(name: &str, m: usize, validation: usize) -> RunConfig {
    RunConfig {
        name: name.into(),
        problem: ProblemKind::Darcy { kappa: 1.0 },
        grid: GridConfig { sizes: vec![20, 20], topology: Topology::Dirichlet },
        mode: ParamMode::Direct,
        input: InputDistribution::Gp { kernel: KernelSpec::inv_laplacian() },
        data: DataConfig {
            m_draws: m,
            n_warm: 6,
            lambda_flow: 0.0,
            lambda_train: vec![1e-3],
            seed: 3,
            project_zero_mean: false,
            march_steps: 0,
            record_stride: 1,
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Gaussian,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: validation,
            validation_seed: 3003,
            budget: 100,
            tol_res: 1e-14,
            tol_step: 1e-14,
            reference_max_iter: 40,
            reference_tol: 1e-14,
            march_steps: 0,
            target_median: Some(1e-6),
            expert_models: None,
        },
        schedule: ScheduleConfig::default(),
        forcing: Some(ForcingConfig { kernel: KernelSpec::matern52(0.3), seed: 7 }),
    }
}

fn calderon_profile(name: &str, m: usize, validation: usize) -> RunConfig {
    RunConfig {
        name: name.into(),
        problem: ProblemKind::Calderon,
        grid: GridConfig { sizes: vec![9, 9], topology: Topology::Dirichlet },
        mode: ParamMode::Direct,
        input: InputDistribution::Gp { kernel: KernelSpec::inv_laplacian() },
        data: DataConfig {
            m_draws: m,
            n_warm: 0,
            lambda_flow: 1e-10,
            lambda_train: vec![1e-10],
            seed: 4,
            project_zero_mean: false,
            march_steps: 0,
            record_stride: 1,
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Gaussian,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: validation,
            validation_seed: 4004,
            budget: 1000,
            tol_res: 1e-14,
            tol_step: 1e-16,
            reference_max_iter: 50,
            reference_tol: 1e-14,
            march_steps: 0,
            target_median: Some(1e-8),
            expert_models: None,
        },
        schedule: ScheduleConfig::default(),
        forcing: None,
    }
}

fn foundation_expert(
    name: &str,
    problem: ProblemKind,
    m: usize,
    march_steps: usize,
    seed: u64,
) -> RunConfig {
    RunConfig {
        name: name.into(),
        problem,
        grid: GridConfig { sizes: vec![64], topology: Topology::Periodic },
        mode: ParamMode::Coefficients,
        input: periodic_input(),
        data: DataConfig {
            m_draws: m,
            n_warm: 5,
            lambda_flow: 1e-2,
            lambda_train: vec![1e-2],
            seed,
            project_zero_mean: false,
            march_steps,
            record_stride: if march_steps > 1 { 3 } else { 1 },
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Matern52,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: 4,
            validation_seed: 5005,
            budget: 25,
            tol_res: 1e-14,
            tol_step: 1e-14,
            reference_max_iter: 25,
            reference_tol: 1e-14,
            march_steps,
            target_median: None,
            expert_models: None,
        },
        schedule: ScheduleConfig::default(),
        forcing: None,
    }
}

fn gordon_eval(
    name: &str,
    nonlinearity: GordonNonlinearity,
    kappa1: f64,
    kappa2: f64,
    dt: f64,
) -> RunConfig {
    RunConfig {
        name: name.into(),
        problem: ProblemKind::GordonStep { nonlinearity, kappa1, kappa2, dt },
        grid: GridConfig { sizes: vec![64], topology: Topology::Periodic },
        mode: ParamMode::Coefficients,
        input: periodic_input(),
        data: DataConfig {
            m_draws: 1,
            n_warm: 5,
            lambda_flow: 1e-2,
            lambda_train: vec![1e-2],
            seed: 6,
            project_zero_mean: false,
            march_steps: 100,
            record_stride: 1,
            use_maxmin_ordering: false,
        },
        model: ModelConfig {
            kernel_family: KernelFamily::Matern52,
            sigma2: 1e-10,
            lengthscale: LengthscalePolicy::Median,
        },
        eval: EvalConfig {
            validation_draws: 4,
            validation_seed: 6006,
            budget: 40,
            tol_res: 1e-13,
            tol_step: 1e-14,
            reference_max_iter: 25,
            reference_tol: 1e-14,
            march_steps: 100,
            target_median: Some(1e-8),
            expert_models: Some(vec![
                "out/foundation/elliptic/model".into(),
                "out/foundation/burgers/model".into(),
                "out/foundation/darcy1d/model".into(),
            ]),
        },
        schedule: ScheduleConfig::default(),
        forcing: None,
    }
}

/// All built-in profiles (desk scale for the acceptance bar, paper scale
/// mirroring the full experiment sizes).
pub fn builtin_profiles() -> Vec<RunConfig> {
    vec![
        elliptic_profile("elliptic-desk", 64, 32),
        elliptic_profile("elliptic-paper", 896, 128),
        burgers_profile("burgers-desk", 63, 51, 32, 8, 5),
        burgers_profile("burgers-paper", 127, 151, 3, 64, 1),
        darcy_profile("darcy-desk", 32, 8),
        darcy_profile("darcy-paper", 896, 128),
        calderon_profile("calderon-desk", 64, 16),
        calderon_profile("calderon-paper", 7500, 2500),
        foundation_expert(
            "foundation-elliptic-desk",
            ProblemKind::Elliptic { kappa: 50.0 },
            48,
            0,
            50,
        ),
        foundation_expert(
            "foundation-burgers-desk",
            ProblemKind::BurgersStep { nu: 1.0 / 50.0, dt: 0.02 },
            48,
            12,
            51,
        ),
        foundation_expert(
            "foundation-darcy1d-desk",
            ProblemKind::Darcy { kappa: 1.0 },
            48,
            0,
            52,
        ),
        gordon_eval("foundation-sine-gordon-desk", GordonNonlinearity::Sine, 1.0, 1.0, 0.01),
        gordon_eval("foundation-klein-gordon-desk", GordonNonlinearity::Cubic, 0.1, 10.0, 0.05),
    ]
}

pub fn builtin_profile(name: &str) -> Option<RunConfig> {
    builtin_profiles().into_iter().find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_roundtrip() {
        for cfg in builtin_profiles() {
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", cfg.name));
            let json = cfg.to_json();
            let back = RunConfig::from_json(&json).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&builtin_profile("elliptic-desk").unwrap().to_json()).unwrap();
        v.as_object_mut().unwrap().insert("surprise".into(), serde_json::json!(1));
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = builtin_profile("elliptic-desk").unwrap();
        let mut b = a.clone();
        b.data.seed = 999;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn kind_validation() {
        let mut cfg = builtin_profile("burgers-desk").unwrap();
        cfg.grid.topology = Topology::Dirichlet;
        assert!(cfg.validate().is_err());
        let mut cfg = builtin_profile("darcy-desk").unwrap();
        cfg.forcing = None;
        assert!(cfg.validate().is_err());
    }
}
