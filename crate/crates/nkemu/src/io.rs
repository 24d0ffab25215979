//! On-disk formats: little-endian f64 blocks with JSON manifests.
//!
//! A dataset is `manifest.json` + `records.f64` (per record: z, lambda,
//! packed factor, concatenated). A model directory holds `manifest.json`
//! plus `inputs.f64`, `outputs.f64`, `factorization.f64` and `weights.f64`.
//! Reports are plain JSON (with optional CSV error curves).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NkError, Result};
use crate::inference::{OpCounts, SolveReport, StopReason};
use crate::linalg::TriangularFactor;
use crate::matrix::Matrix;
use crate::nk::{Dataset, DatasetManifest, TrainingRecord};
use crate::surrogate::{ModelMeta, SurrogateModel};

pub fn write_f64_slice(path: &Path, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_f64_slice(path: &Path) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() % 8 != 0 {
        return Err(NkError::InvalidConfig(format!(
            "{} is not a stream of 64-bit values",
            path.display()
        )));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldManifest {
    pub grid: crate::grid::Grid,
    pub seed: Option<u64>,
    pub problem: Option<String>,
}

/// Writes `<stem>.f64` and `<stem>.json`.
pub fn save_field(stem: &Path, field: &crate::grid::Field, manifest: &FieldManifest) -> Result<()> {
    write_f64_slice(&stem.with_extension("f64"), &field.values)?;
    write_json(&stem.with_extension("json"), manifest)
}

pub fn load_field(stem: &Path) -> Result<(crate::grid::Field, FieldManifest)> {
    let manifest: FieldManifest = read_json(&stem.with_extension("json"))?;
    let values = read_f64_slice(&stem.with_extension("f64"))?;
    let field = crate::grid::Field::new(manifest.grid.clone(), values)?;
    Ok((field, manifest))
}

/// Batches share the field format: one stacked binary block plus a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleBatchManifest {
    pub grid: crate::grid::Grid,
    pub seed: u64,
    pub kernel: crate::sampling::KernelSpec,
    pub count: usize,
    pub rng: String,
}

pub fn save_sample_batch(dir: &Path, batch: &crate::sampling::SampleBatch) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = batch.fields[0].grid.clone();
    let manifest = SampleBatchManifest {
        grid,
        seed: batch.seed,
        kernel: batch.kernel.clone(),
        count: batch.fields.len(),
        rng: crate::rng::RNG_ALGORITHM.to_string(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let mut block = Vec::new();
    for f in &batch.fields {
        block.extend_from_slice(&f.values);
    }
    write_f64_slice(&dir.join("fields.f64"), &block)
}

pub fn load_sample_batch(dir: &Path) -> Result<crate::sampling::SampleBatch> {
    let manifest: SampleBatchManifest = read_json(&dir.join("manifest.json"))?;
    let block = read_f64_slice(&dir.join("fields.f64"))?;
    let n = manifest.grid.node_count();
    if block.len() != n * manifest.count {
        return Err(NkError::LengthMismatch { expected: n * manifest.count, got: block.len() });
    }
    let mut fields = Vec::with_capacity(manifest.count);
    for chunk in block.chunks_exact(n) {
        fields.push(crate::grid::Field::new(manifest.grid.clone(), chunk.to_vec())?);
    }
    Ok(crate::sampling::SampleBatch { fields, seed: manifest.seed, kernel: manifest.kernel })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("manifest.json"), &dataset.manifest)?;
    let m = &dataset.manifest;
    let mut block = Vec::with_capacity(m.record_count * (m.z_dim + 1 + m.factor_dim));
    for rec in &dataset.records {
        block.extend_from_slice(&rec.z);
        block.push(rec.lambda);
        block.extend_from_slice(&rec.factor);
    }
    write_f64_slice(&dir.join("records.f64"), &block)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    let block = read_f64_slice(&dir.join("records.f64"))?;
    let stride = manifest.z_dim + 1 + manifest.factor_dim;
    if block.len() != manifest.record_count * stride {
        return Err(NkError::LengthMismatch {
            expected: manifest.record_count * stride,
            got: block.len(),
        });
    }
    let mut records = Vec::with_capacity(manifest.record_count);
    for chunk in block.chunks_exact(stride) {
        records.push(TrainingRecord {
            z: chunk[..manifest.z_dim].to_vec(),
            lambda: chunk[manifest.z_dim],
            factor: chunk[manifest.z_dim + 1..].to_vec(),
        });
    }
    Ok(Dataset { records, manifest })
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub meta: ModelMeta,
    pub rows: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub config_hash: Option<String>,
}

pub fn save_model(dir: &Path, model: &SurrogateModel, config_hash: Option<String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ModelManifest {
        meta: model.meta.clone(),
        rows: model.inputs.rows(),
        input_dim: model.inputs.cols(),
        output_dim: model.outputs.cols(),
        config_hash,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_f64_slice(&dir.join("inputs.f64"), model.inputs.data())?;
    write_f64_slice(&dir.join("outputs.f64"), model.outputs.data())?;
    write_f64_slice(&dir.join("factorization.f64"), model.factorization.as_matrix().data())?;
    write_f64_slice(&dir.join("weights.f64"), model.weights.data())
}

pub fn load_model(dir: &Path) -> Result<SurrogateModel> {
    let manifest: ModelManifest = read_json(&dir.join("manifest.json"))?;
    let inputs = Matrix::from_vec(
        manifest.rows,
        manifest.input_dim,
        read_f64_slice(&dir.join("inputs.f64"))?,
    )?;
    let outputs = Matrix::from_vec(
        manifest.rows,
        manifest.output_dim,
        read_f64_slice(&dir.join("outputs.f64"))?,
    )?;
    let factorization = TriangularFactor::new(Matrix::from_vec(
        manifest.rows,
        manifest.rows,
        read_f64_slice(&dir.join("factorization.f64"))?,
    )?)?;
    let weights = Matrix::from_vec(
        manifest.rows,
        manifest.output_dim,
        read_f64_slice(&dir.join("weights.f64"))?,
    )?;
    Ok(SurrogateModel { inputs, outputs, factorization, weights, meta: manifest.meta })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// JSON view of one solve: per-iteration residuals, errors, schedule and
/// instrumentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReportJson {
    pub residual_norms: Vec<f64>,
    pub rel_l2_errors: Vec<f64>,
    pub schedule_history: Vec<(f64, f64)>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub ops: OpCounts,
    pub wall_clock_seconds: f64,
}

impl SolveReportJson {
    pub fn from_report(r: &SolveReport) -> Self {
        SolveReportJson {
            residual_norms: r.trace.residual_norms.clone(),
            rel_l2_errors: r.rel_l2_errors.clone(),
            schedule_history: r.schedule_history.clone(),
            stop_reason: r.stop_reason,
            iterations: r.iterations(),
            ops: r.ops,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn with_seconds(mut self, seconds: f64) -> Self {
        self.wall_clock_seconds = seconds;
        self
    }
}

/// Per-problem evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub problem: String,
    pub config_hash: String,
    /// Final relative L2 error per validation draw.
    pub errors: Vec<f64>,
    /// Iterations used per validation draw (summed over time steps for
    /// marches).
    pub iterations: Vec<usize>,
    pub median_error: f64,
    pub quantile10: f64,
    pub quantile90: f64,
    pub median_iterations: f64,
    /// Median relative L2 error per iteration index across draws
    /// (stationary solves only).
    pub error_curve: Vec<f64>,
    /// Per-step relative L2 errors across all marched draws (marching
    /// problems only), with their median.
    pub per_step_errors: Vec<f64>,
    pub per_step_median: Option<f64>,
    pub wall_clock_seconds: f64,
    pub solves: Vec<SolveReportJson>,
    pub notes: Vec<String>,
}

/// Empirical quantile with linear interpolation.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn save_report(path: &Path, report: &BenchReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_json(path, report)
}

pub fn load_report(path: &Path) -> Result<BenchReport> {
    read_json(path)
}

/// Writes the per-iteration median error curve as CSV.
pub fn save_error_curve_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,median_rel_l2\n");
    for (i, e) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{e:e}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Grid};

    #[test]
    fn f64_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        let data = vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300];
        write_f64_slice(&p, &data).unwrap();
        assert_eq!(read_f64_slice(&p).unwrap(), data);
    }

    #[test]
    fn field_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::periodic_1d(8);
        let f = Field::new(grid.clone(), (0..8).map(|i| i as f64 * 0.5).collect()).unwrap();
        let stem = dir.path().join("field");
        save_field(&stem, &f, &FieldManifest { grid, seed: Some(3), problem: None }).unwrap();
        let (g, m) = load_field(&stem).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(m.seed, Some(3));
    }

    #[test]
    fn sample_batch_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::periodic_1d(6);
        let spec = crate::sampling::KernelSpec::periodic(10.0, 0.5);
        let batch = crate::sampling::sample_gp(&spec, &grid, 3, 5).unwrap();
        save_sample_batch(dir.path(), &batch).unwrap();
        let back = load_sample_batch(dir.path()).unwrap();
        assert_eq!(back.fields.len(), 3);
        for (a, b) in back.fields.iter().zip(&batch.fields) {
            assert_eq!(a.values, b.values);
        }
        assert_eq!(back.seed, 5);
    }

    #[test]
    fn quantiles() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&xs, 0.5), 2.5);
    }
}
