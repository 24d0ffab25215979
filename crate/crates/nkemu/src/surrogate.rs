//! Kernel-ridge emulation of inverse Cholesky factors, and nested-Kriging
//! aggregation of per-problem experts.
//!
//! One kernel factorization serves all `N(N+1)/2` output coordinates
//! (multi-right-hand-side solve). When a dataset carries more than one
//! training lambda, `log10(lambda)` is appended to the input features;
//! single-lambda models ignore the queried lambda entirely.

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};
use crate::linalg::{cholesky_lower, SpdMatrix, TriangularFactor};
use crate::matrix::Matrix;
use crate::nk::Dataset;
use crate::sampling::{KernelFamily, KernelSpec};

/// Floor applied to predicted diagonal entries.
pub const DIAGONAL_FLOOR: f64 = 1e-8;

/// Row-major packing of the lower triangle.
pub fn vectorize_factor(r: &TriangularFactor) -> Vec<f64> {
    let n = r.dim();
    let m = r.as_matrix();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(m.get(i, j));
        }
    }
    out
}

/// Unpacks a vector into a lower-triangular factor, projecting diagonal
/// entries through `max(d, DIAGONAL_FLOOR)`. Entries above the diagonal are
/// exact zeros by construction.
pub fn devectorize(v: &[f64], n: usize) -> Result<TriangularFactor> {
    if v.len() != n * (n + 1) / 2 {
        return Err(NkError::LengthMismatch { expected: n * (n + 1) / 2, got: v.len() });
    }
    let mut m = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            let x = if i == j { v[k].max(DIAGONAL_FLOOR) } else { v[k] };
            m.set(i, j, x);
            k += 1;
        }
    }
    Ok(TriangularFactor::from_raw(m))
}

/// How the kernel lengthscale is chosen at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum LengthscalePolicy {
    /// Median pairwise distance between training inputs.
    Median,
    /// Median heuristic scaled by a constant.
    ScaledMedian { multiplier: f64 },
    Fixed { value: f64 },
    /// K-fold grid search over multiples of the median heuristic.
    CrossValidate { multipliers: Vec<f64>, folds: usize },
}

impl Default for LengthscalePolicy {
    fn default() -> Self {
        LengthscalePolicy::Median
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kernel: KernelSpec,
    pub sigma2: f64,
    pub lambda_feature: bool,
    pub lambda_values: Vec<f64>,
    pub factor_n: usize,
    pub z_layout: String,
    pub packing: String,
    pub ordering_permutation: Option<Vec<usize>>,
}

/// Kernel-ridge regressor from flattened `(z, lambda)` inputs to packed
/// lower-triangular factors.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    /// Training inputs, one row per record, lambda feature included.
    pub inputs: Matrix,
    /// Packed factors, one row per record.
    pub outputs: Matrix,
    /// Cholesky factor of `K(Z,Z) + sigma2 I`.
    pub factorization: TriangularFactor,
    /// `(K + sigma2 I)^{-1} Y`, precomputed at fit time.
    pub weights: Matrix,
    pub meta: ModelMeta,
}

fn median_positive_distance(rows: &Matrix) -> f64 {
    let n = rows.rows();
    let mut ds = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for (a, b) in rows.row(i).iter().zip(rows.row(j)) {
                s += (a - b) * (a - b);
            }
            if s > 0.0 {
                ds.push(s.sqrt());
            }
        }
    }
    if ds.is_empty() {
        return 1.0;
    }
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ds[ds.len() / 2]
}

fn check_model_kernel(family: KernelFamily) -> Result<()> {
    match family {
        KernelFamily::Matern52 | KernelFamily::Gaussian => Ok(()),
        _ => Err(NkError::InvalidConfig(
            "factor models use matern52 or gaussian kernels".into(),
        )),
    }
}

fn kernel_gram(kernel: &KernelSpec, rows: &Matrix) -> Matrix {
    let n = rows.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(rows.row(i), rows.row(j));
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

fn kernel_cross(kernel: &KernelSpec, rows: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..rows.rows()).map(|i| kernel.eval(rows.row(i), x)).collect()
}

/// Solves `(K + sigma2 I) W = Y` for all columns of `Y`.
fn ridge_weights(factor: &TriangularFactor, y: &Matrix) -> Result<Matrix> {
    let n = y.rows();
    let q = y.cols();
    let mut w = Matrix::zeros(n, q);
    let mut col = vec![0.0; n];
    for j in 0..q {
        for i in 0..n {
            col[i] = y.get(i, j);
        }
        let x = factor.solve_outer(&col)?;
        for i in 0..n {
            w.set(i, j, x[i]);
        }
    }
    Ok(w)
}

fn assemble_inputs(dataset: &Dataset) -> (Matrix, Vec<f64>, bool) {
    let mut lambdas: Vec<f64> = dataset.records.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let lambda_feature = lambdas.len() > 1;
    let d = dataset.records[0].z.len() + usize::from(lambda_feature);
    let mut z = Matrix::zeros(dataset.records.len(), d);
    for (i, rec) in dataset.records.iter().enumerate() {
        for (j, v) in rec.z.iter().enumerate() {
            z.set(i, j, *v);
        }
        if lambda_feature {
            z.set(i, d - 1, rec.lambda.max(f64::MIN_POSITIVE).log10());
        }
    }
    (z, lambdas, lambda_feature)
}

fn fit_with_lengthscale(
    dataset: &Dataset,
    kernel: &KernelSpec,
    sigma2: f64,
) -> Result<SurrogateModel> {
    let (inputs, lambda_values, lambda_feature) = assemble_inputs(dataset);
    let n = dataset.records.len();
    let q = dataset.records[0].factor.len();
    let mut outputs = Matrix::zeros(n, q);
    for (i, rec) in dataset.records.iter().enumerate() {
        if rec.factor.len() != q {
            return Err(NkError::LengthMismatch { expected: q, got: rec.factor.len() });
        }
        for (j, v) in rec.factor.iter().enumerate() {
            outputs.set(i, j, *v);
        }
    }
    let mut gram = kernel_gram(kernel, &inputs);
    gram.add_scaled_identity(sigma2);
    let factorization = cholesky_lower(&SpdMatrix::new(gram)?)?;
    let weights = ridge_weights(&factorization, &outputs)?;
    Ok(SurrogateModel {
        inputs,
        outputs,
        factorization,
        weights,
        meta: ModelMeta {
            kernel: kernel.clone(),
            sigma2,
            lambda_feature,
            lambda_values,
            factor_n: dataset.manifest.problem_dim,
            z_layout: dataset.manifest.z_layout.clone(),
            packing: "lower-row-major".to_string(),
            ordering_permutation: dataset.manifest.ordering_permutation.clone(),
        },
    })
}

/// Exact kernel-ridge fit of the dataset: one factorization of the record
/// Gram matrix shared by every output coordinate.
pub fn fit(
    dataset: &Dataset,
    family: KernelFamily,
    sigma2: f64,
    lengthscale: &LengthscalePolicy,
) -> Result<SurrogateModel> {
    if dataset.records.is_empty() {
        return Err(NkError::EmptyDataset);
    }
    if sigma2 <= 0.0 {
        return Err(NkError::InvalidConfig("sigma2 must be positive".into()));
    }
    check_model_kernel(family)?;
    let (inputs, _, _) = assemble_inputs(dataset);
    let median = median_positive_distance(&inputs);
    let base = |ell: f64| KernelSpec { family, lengthscale: ell, period: 1.0, scale: 1.0 };
    let ell = match lengthscale {
        LengthscalePolicy::Median => median,
        LengthscalePolicy::ScaledMedian { multiplier } => median * multiplier,
        LengthscalePolicy::Fixed { value } => *value,
        LengthscalePolicy::CrossValidate { multipliers, folds } => {
            cross_validate_lengthscale(dataset, family, sigma2, median, multipliers, *folds)?
        }
    };
    if ell <= 0.0 {
        return Err(NkError::InvalidConfig("lengthscale must be positive".into()));
    }
    fit_with_lengthscale(dataset, &base(ell), sigma2)
}

fn cross_validate_lengthscale(
    dataset: &Dataset,
    family: KernelFamily,
    sigma2: f64,
    median: f64,
    multipliers: &[f64],
    folds: usize,
) -> Result<f64> {
    let folds = folds.max(2);
    let n = dataset.records.len();
    if n < folds || multipliers.is_empty() {
        return Ok(median);
    }
    let mut best = (median, f64::INFINITY);
    for &m in multipliers {
        let ell = median * m;
        let mut err = 0.0;
        for fold in 0..folds {
            let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
            let sub = Dataset {
                records: train.iter().map(|&i| dataset.records[i].clone()).collect(),
                manifest: dataset.manifest.clone(),
            };
            let kernel = KernelSpec { family, lengthscale: ell, period: 1.0, scale: 1.0 };
            let model = fit_with_lengthscale(&sub, &kernel, sigma2)?;
            for &i in &test {
                let rec = &dataset.records[i];
                let pred = model.predict_packed(&rec.z, rec.lambda)?;
                for (p, t) in pred.iter().zip(&rec.factor) {
                    err += (p - t) * (p - t);
                }
            }
        }
        if err < best.1 {
            best = (ell, err);
        }
    }
    Ok(best.0)
}

impl SurrogateModel {
    fn query_vector(&self, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let d = self.inputs.cols();
        let expected = d - usize::from(self.meta.lambda_feature);
        if z.len() != expected {
            return Err(NkError::DimensionMismatch { expected, got: z.len() });
        }
        let mut x = z.to_vec();
        if self.meta.lambda_feature {
            x.push(lambda.max(f64::MIN_POSITIVE).log10());
        }
        Ok(x)
    }

    /// Kernel-ridge mean as the packed factor vector (no projection).
    pub fn predict_packed(&self, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let x = self.query_vector(z, lambda)?;
        let k = kernel_cross(&self.meta.kernel, &self.inputs, &x);
        self.weights.matvec_transpose(&k)
    }

    /// Predicted factor with the positive-diagonal projection applied.
    pub fn predict(&self, z: &[f64], lambda: f64) -> Result<TriangularFactor> {
        devectorize(&self.predict_packed(z, lambda)?, self.meta.factor_n)
    }

    /// Mean Frobenius distance between stored factors and re-predicted
    /// factors over the training set.
    pub fn training_error(&self) -> Result<f64> {
        let n = self.inputs.rows();
        let mut total = 0.0;
        for i in 0..n {
            let k = kernel_cross(&self.meta.kernel, &self.inputs, self.inputs.row(i));
            let pred = self.weights.matvec_transpose(&k)?;
            let mut s = 0.0;
            for (p, t) in pred.iter().zip(self.outputs.row(i)) {
                s += (p - t) * (p - t);
            }
            total += s.sqrt();
        }
        Ok(total / n as f64)
    }
}

// ---------------------------------------------------------------------------
// Nested-Kriging aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AggregationWeights {
    pub alpha: Vec<f64>,
    /// Covariances of the target with each expert prediction.
    pub k_m: Vec<f64>,
    /// Expert cross-covariance matrix.
    pub cap_k_m: Matrix,
}

/// Per-problem experts aggregated under one shared kernel whose lengthscale
/// is the arithmetic mean of the expert lengthscales.
#[derive(Debug)]
pub struct ExpertEnsemble {
    pub experts: Vec<SurrogateModel>,
    pub ell_a: f64,
    agg_kernel: KernelSpec,
    /// Cholesky factors of the shared-kernel Gram of each expert's inputs.
    agg_factors: Vec<TriangularFactor>,
    /// Shared-kernel cross blocks `k_A(X_i, X_j)` for i <= j.
    cross_blocks: Vec<Vec<Matrix>>,
}

impl ExpertEnsemble {
    pub fn build(experts: Vec<SurrogateModel>) -> Result<Self> {
        if experts.is_empty() {
            return Err(NkError::EmptyDataset);
        }
        let family = experts[0].meta.kernel.family;
        let out_dim = experts[0].outputs.cols();
        let in_dim = experts[0].inputs.cols();
        for e in &experts {
            if e.meta.kernel.family != family {
                return Err(NkError::InvalidConfig("experts must share a kernel family".into()));
            }
            if e.outputs.cols() != out_dim {
                return Err(NkError::InvalidConfig("experts must share output dimension".into()));
            }
            if e.inputs.cols() != in_dim {
                return Err(NkError::InvalidConfig("experts must share input dimension".into()));
            }
            if e.meta.lambda_feature {
                return Err(NkError::InvalidConfig(
                    "aggregated experts must be single-lambda models".into(),
                ));
            }
        }
        let ell_a =
            experts.iter().map(|e| e.meta.kernel.lengthscale).sum::<f64>() / experts.len() as f64;
        let agg_kernel = KernelSpec { family, lengthscale: ell_a, period: 1.0, scale: 1.0 };
        let mut agg_factors = Vec::with_capacity(experts.len());
        for e in &experts {
            let mut g = kernel_gram(&agg_kernel, &e.inputs);
            g.add_scaled_identity(1e-10);
            agg_factors.push(cholesky_lower(&SpdMatrix::new(g)?)?);
        }
        let p = experts.len();
        let mut cross_blocks: Vec<Vec<Matrix>> = Vec::with_capacity(p);
        for i in 0..p {
            let mut row = Vec::with_capacity(p - i);
            for j in i..p {
                let (xi, xj) = (&experts[i].inputs, &experts[j].inputs);
                let mut b = Matrix::zeros(xi.rows(), xj.rows());
                for r in 0..xi.rows() {
                    for c in 0..xj.rows() {
                        b.set(r, c, agg_kernel.eval(xi.row(r), xj.row(c)));
                    }
                }
                row.push(b);
            }
            cross_blocks.push(row);
        }
        Ok(ExpertEnsemble { experts, ell_a, agg_kernel, agg_factors, cross_blocks })
    }

    fn cross_block(&self, i: usize, j: usize) -> Matrix {
        if i <= j {
            self.cross_blocks[i][j - i].clone()
        } else {
            self.cross_blocks[j][i - j].transpose()
        }
    }

    /// Variance-minimizing weights constrained to sum to one:
    /// `alpha = K_M^{-1} (k_M - 1 (1^T K_M^{-1} k_M - 1) / (1^T K_M^{-1} 1))`.
    pub fn aggregate_weights(&self, x: &[f64]) -> Result<AggregationWeights> {
        let p = self.experts.len();
        let mut vs = Vec::with_capacity(p);
        let mut k_m = vec![0.0; p];
        for (i, e) in self.experts.iter().enumerate() {
            let k = kernel_cross(&self.agg_kernel, &e.inputs, x);
            let v = self.agg_factors[i].solve_outer(&k)?;
            k_m[i] = crate::matrix::dot(&v, &k);
            vs.push(v);
        }
        let mut cap = Matrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let block = self.cross_block(i, j);
                let bv = block.matvec(&vs[j])?;
                let val = crate::matrix::dot(&vs[i], &bv);
                cap.set(i, j, val);
                cap.set(j, i, val);
            }
        }
        let mut reg = cap.clone();
        reg.add_scaled_identity(1e-12);
        let factor = cholesky_lower(&SpdMatrix::new(reg)?).map_err(|_| NkError::SingularKm)?;
        let km_solved = factor.solve_outer(&k_m)?;
        let ones = vec![1.0; p];
        let ones_solved = factor.solve_outer(&ones)?;
        let denom: f64 = ones_solved.iter().sum();
        if denom.abs() < 1e-300 {
            return Err(NkError::SingularKm);
        }
        let shift = (km_solved.iter().sum::<f64>() - 1.0) / denom;
        let mut alpha: Vec<f64> =
            km_solved.iter().zip(&ones_solved).map(|(a, b)| a - shift * b).collect();
        let total: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= total;
        }
        Ok(AggregationWeights { alpha, k_m, cap_k_m: cap })
    }

    /// Weighted sum of expert predictions, then the positive-diagonal
    /// projection.
    pub fn aggregate_predict(&self, z: &[f64], lambda: f64) -> Result<TriangularFactor> {
        let x = self.experts[0].query_vector(z, lambda)?;
        let w = self.aggregate_weights(&x)?;
        let q = self.experts[0].outputs.cols();
        let mut acc = vec![0.0; q];
        for (e, &a) in self.experts.iter().zip(&w.alpha) {
            if a == 0.0 {
                continue;
            }
            let pred = e.predict_packed(z, lambda)?;
            crate::matrix::axpy(&mut acc, a, &pred);
        }
        devectorize(&acc, self.experts[0].meta.factor_n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::nk::{DatasetManifest, InputDistribution, ParamMode, TrainingRecord};
    use crate::problems::ProblemKind;

    fn toy_manifest(n: usize, z_dim: usize, count: usize) -> DatasetManifest {
        DatasetManifest {
            format_version: 1,
            problem: ProblemKind::Elliptic { kappa: 1.0 },
            grid: Grid::dirichlet_1d(n.max(3)),
            mode: ParamMode::Direct,
            input_distribution: InputDistribution::SumOfSines,
            m_draws: count,
            n_warm: 0,
            lambda_flow: 0.0,
            lambda_train: vec![0.0],
            seed: 0,
            rng: "test".into(),
            z_layout: "v".into(),
            z_dim,
            factor_dim: n * (n + 1) / 2,
            problem_dim: n,
            record_count: count,
            march_steps: 0,
            record_stride: 1,
            project_zero_mean: false,
            ordering_permutation: None,
            jittered_records: vec![],
            forcing: None,
            config_hash: None,
        }
    }

    fn dataset_from(records: Vec<TrainingRecord>, n: usize) -> Dataset {
        let z_dim = records[0].z.len();
        let count = records.len();
        Dataset { records, manifest: toy_manifest(n, z_dim, count) }
    }

    #[test]
    fn vectorize_roundtrip() {
        let r = TriangularFactor::new(Matrix::from_rows(&[&[1.0, 0.0], &[0.5, 2.0]])).unwrap();
        let v = vectorize_factor(&r);
        assert_eq!(v, vec![1.0, 0.5, 2.0]);
        let back = devectorize(&v, 2).unwrap();
        assert_eq!(back.as_matrix().data(), r.as_matrix().data());
        // identity 2x2 -> [1, 0, 1] -> identity
        let i = TriangularFactor::new(Matrix::identity(2)).unwrap();
        assert_eq!(vectorize_factor(&i), vec![1.0, 0.0, 1.0]);
        // n = 3 factor has a length-6 vector
        let i3 = TriangularFactor::new(Matrix::identity(3)).unwrap();
        assert_eq!(vectorize_factor(&i3).len(), 6);
    }

    #[test]
    fn devectorize_clamps_diagonal() {
        let v = vec![1.0, 0.3, -1.0];
        let r = devectorize(&v, 2).unwrap();
        assert_eq!(r.as_matrix().get(1, 1), DIAGONAL_FLOOR);
        assert!(devectorize(&v, 3).is_err());
    }

    #[test]
    fn interpolation_at_training_point() {
        let records = vec![
            TrainingRecord { z: vec![0.0, 0.0], lambda: 0.0, factor: vec![2.0, -0.5, 1.5] },
            TrainingRecord { z: vec![1.0, 1.0], lambda: 0.0, factor: vec![1.0, 0.25, 3.0] },
        ];
        let ds = dataset_from(records, 2);
        let model = fit(&ds, KernelFamily::Gaussian, 1e-12, &LengthscalePolicy::Median).unwrap();
        let pred = model.predict_packed(&[0.0, 0.0], 0.0).unwrap();
        for (p, t) in pred.iter().zip(&[2.0, -0.5, 1.5]) {
            assert!((p - t).abs() < 1e-6, "{p} vs {t}");
        }
    }

    #[test]
    fn duplicate_records_match_halved_noise() {
        let rec = TrainingRecord { z: vec![0.5], lambda: 0.0, factor: vec![2.0, -0.5, 1.5] };
        let ds2 = dataset_from(vec![rec.clone(), rec.clone()], 2);
        let ds1 = dataset_from(vec![rec], 2);
        let s2 = 1e-4;
        let m2 = fit(&ds2, KernelFamily::Gaussian, s2, &LengthscalePolicy::Fixed { value: 1.0 }).unwrap();
        let m1 = fit(&ds1, KernelFamily::Gaussian, s2 / 2.0, &LengthscalePolicy::Fixed { value: 1.0 })
            .unwrap();
        let q = [0.7_f64];
        let a = m2.predict_packed(&q, 0.0).unwrap();
        let b = m1.predict_packed(&q, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn far_query_projects_to_floor_diagonal() {
        let records = vec![TrainingRecord { z: vec![0.0], lambda: 0.0, factor: vec![2.0, -0.5, 1.5] }];
        let ds = dataset_from(records, 2);
        let model =
            fit(&ds, KernelFamily::Gaussian, 1e-10, &LengthscalePolicy::Fixed { value: 0.01 }).unwrap();
        let r = model.predict(&[1000.0], 0.0).unwrap();
        assert_eq!(r.as_matrix().get(0, 0), DIAGONAL_FLOOR);
        assert_eq!(r.as_matrix().get(1, 1), DIAGONAL_FLOOR);
        assert!(r.as_matrix().get(1, 0).abs() < 1e-12);
    }

    #[test]
    fn lambda_feature_activates_only_for_multi_lambda() {
        let records = vec![
            TrainingRecord { z: vec![0.0], lambda: 1e-2, factor: vec![1.0, 0.0, 1.0] },
            TrainingRecord { z: vec![1.0], lambda: 1e-4, factor: vec![2.0, 0.0, 2.0] },
        ];
        let ds = dataset_from(records, 2);
        let model = fit(&ds, KernelFamily::Gaussian, 1e-10, &LengthscalePolicy::Median).unwrap();
        assert!(model.meta.lambda_feature);
        assert_eq!(model.inputs.cols(), 2);
        let single = dataset_from(
            vec![
                TrainingRecord { z: vec![0.0], lambda: 1e-2, factor: vec![1.0, 0.0, 1.0] },
                TrainingRecord { z: vec![1.0], lambda: 1e-2, factor: vec![2.0, 0.0, 2.0] },
            ],
            2,
        );
        let m2 = fit(&single, KernelFamily::Gaussian, 1e-10, &LengthscalePolicy::Median).unwrap();
        assert!(!m2.meta.lambda_feature);
        assert_eq!(m2.inputs.cols(), 1);
    }

    #[test]
    fn single_expert_weight_is_one() {
        let records = vec![
            TrainingRecord { z: vec![0.0], lambda: 0.0, factor: vec![1.0, 0.0, 1.0] },
            TrainingRecord { z: vec![1.0], lambda: 0.0, factor: vec![2.0, 0.0, 2.0] },
        ];
        let ds = dataset_from(records, 2);
        let model = fit(&ds, KernelFamily::Gaussian, 1e-8, &LengthscalePolicy::Median).unwrap();
        let ens = ExpertEnsemble::build(vec![model]).unwrap();
        let w = ens.aggregate_weights(&[0.3]).unwrap();
        assert!((w.alpha[0] - 1.0).abs() < 1e-12);
        let pred_e = ens.experts[0].predict(&[0.3], 0.0).unwrap();
        let pred_a = ens.aggregate_predict(&[0.3], 0.0).unwrap();
        assert!(pred_e.as_matrix().sub(pred_a.as_matrix()).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn identical_experts_split_evenly() {
        let records = vec![
            TrainingRecord { z: vec![0.0], lambda: 0.0, factor: vec![1.0, 0.0, 1.0] },
            TrainingRecord { z: vec![1.0], lambda: 0.0, factor: vec![2.0, 0.0, 2.0] },
        ];
        let ds = dataset_from(records, 2);
        let m1 = fit(&ds, KernelFamily::Gaussian, 1e-8, &LengthscalePolicy::Median).unwrap();
        let m2 = fit(&ds, KernelFamily::Gaussian, 1e-8, &LengthscalePolicy::Median).unwrap();
        let ens = ExpertEnsemble::build(vec![m1, m2]).unwrap();
        let w = ens.aggregate_weights(&[0.4]).unwrap();
        assert!((w.alpha[0] - 0.5).abs() < 1e-9, "alpha {:?}", w.alpha);
        assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
