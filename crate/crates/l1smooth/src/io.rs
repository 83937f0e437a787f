//! File formats: CSV matrices, the structured model config, the image blob,
//! PGM frames, and the solver history CSV.
//!
//! Matrix CSV: one row per line, comma-separated, no header.
//!
//! Model config (TOML): dimensions, a `stationary` flag, matrices row-major as
//! nested arrays (a single matrix, a per-step list of matrices, or
//! `{ csv = "path" }` referencing a matrix CSV relative to the config file).
//!
//! Image blob: magic `L1SM`, then side and frame count as little-endian u32,
//! then frames as little-endian f64, row-major.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearModel, MatSeq};
use crate::presets::ImageSequence;
use crate::scalar::Scalar;
use crate::splitting::IterationRecord;

/// Read a headerless comma-separated matrix.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<DMatrix<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<T>, _> = line
            .split(',')
            .map(|cell| cell.trim().parse::<f64>().map(T::from_config))
            .collect();
        let row = row.map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), ln + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}:{}: ragged row (expected {} cells, got {})",
                    path.display(),
                    ln + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty matrix", path.display())));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn write_matrix_csv<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let cells: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)].as_f64())).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One matrix in the model config: inline rows, a per-step list, or a CSV path.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
    Csv { csv: String },
}

impl MatrixSource {
    fn resolve<T: Scalar>(&self, base: &Path) -> Result<MatSeq<T>> {
        match self {
            MatrixSource::Inline(rows) => Ok(MatSeq::Stationary(rows_to_matrix(rows)?)),
            MatrixSource::PerStep(list) => {
                let mats: Result<Vec<DMatrix<T>>> = list.iter().map(|r| rows_to_matrix(r)).collect();
                Ok(MatSeq::PerStep(mats?))
            }
            MatrixSource::Csv { csv } => {
                Ok(MatSeq::Stationary(read_matrix_csv(&base.join(csv))?))
            }
        }
    }

    fn from_seq<T: Scalar>(seq: &MatSeq<T>) -> Self {
        match seq {
            MatSeq::Stationary(m) => MatrixSource::Inline(matrix_to_rows(m)),
            MatSeq::PerStep(v) => MatrixSource::PerStep(v.iter().map(matrix_to_rows).collect()),
        }
    }
}

fn rows_to_matrix<T: Scalar>(rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    if rows.is_empty() {
        return Err(Error::Parse("empty inline matrix".to_string()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Parse("ragged inline matrix".to_string()));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| {
        T::from_config(rows[i][j])
    }))
}

fn matrix_to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

/// Structured text description of a linear model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub steps: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub sparsity_dim: usize,
    /// All per-timestep matrices time-invariant.
    pub stationary: bool,
    pub trans: MatrixSource,
    pub meas: MatrixSource,
    pub proc_noise: MatrixSource,
    pub meas_noise: MatrixSource,
    pub sparsity: MatrixSource,
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
}

impl ModelConfig {
    pub fn to_model<T: Scalar>(&self, base: &Path) -> Result<LinearModel<T>> {
        Ok(LinearModel {
            steps: self.steps,
            trans: self.trans.resolve(base)?,
            meas: self.meas.resolve(base)?,
            proc_noise: self.proc_noise.resolve(base)?,
            meas_noise: self.meas_noise.resolve(base)?,
            sparsity: self.sparsity.resolve(base)?,
            prior_mean: DVector::from_iterator(
                self.prior_mean.len(),
                self.prior_mean.iter().map(|&v| T::from_config(v)),
            ),
            prior_cov: rows_to_matrix(&self.prior_cov)?,
        })
    }

    pub fn from_model<T: Scalar>(model: &LinearModel<T>) -> Self {
        Self {
            steps: model.steps,
            state_dim: model.state_dim(),
            meas_dim: model.meas_dim(),
            sparsity_dim: model.sparsity_dim(),
            stationary: model.is_stationary(),
            trans: MatrixSource::from_seq(&model.trans),
            meas: MatrixSource::from_seq(&model.meas),
            proc_noise: MatrixSource::from_seq(&model.proc_noise),
            meas_noise: MatrixSource::from_seq(&model.meas_noise),
            sparsity: MatrixSource::from_seq(&model.sparsity),
            prior_mean: model.prior_mean.iter().map(|v| v.as_f64()).collect(),
            prior_cov: matrix_to_rows(&model.prior_cov),
        }
    }
}

/// Load a linear model from a TOML config; CSV references resolve relative to
/// the config file's directory.
pub fn load_linear_model<T: Scalar>(path: &Path) -> Result<LinearModel<T>> {
    let text = std::fs::read_to_string(path)?;
    let config: ModelConfig = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.to_model(base)
}

pub fn save_linear_model<T: Scalar>(path: &Path, model: &LinearModel<T>) -> Result<()> {
    let config = ModelConfig::from_model(model);
    let text = toml::to_string_pretty(&config).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

const IMAGE_MAGIC: &[u8; 4] = b"L1SM";

impl<T: Scalar> ImageSequence<T> {
    /// Write the binary blob format.
    pub fn write_blob(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(IMAGE_MAGIC)?;
        file.write_all(&(self.side as u32).to_le_bytes())?;
        file.write_all(&(self.frames.len() as u32).to_le_bytes())?;
        for frame in &self.frames {
            for v in frame.iter() {
                file.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_blob(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != IMAGE_MAGIC {
            return Err(Error::Parse(format!(
                "{}: bad magic bytes",
                path.display()
            )));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word)?;
        let side = u32::from_le_bytes(word) as usize;
        file.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        let mut frames = Vec::with_capacity(count);
        let mut cell = [0u8; 8];
        for _ in 0..count {
            let mut frame = DVector::zeros(side * side);
            for i in 0..side * side {
                file.read_exact(&mut cell)?;
                frame[i] = T::from_config(f64::from_le_bytes(cell));
            }
            frames.push(frame);
        }
        Ok(ImageSequence { side, frames })
    }

    /// Write one frame as an 8-bit binary PGM, mapping `[0, 1]` to `0..=255`.
    pub fn write_pgm(&self, frame: usize, path: &Path) -> Result<()> {
        let img = self.frames.get(frame).ok_or_else(|| {
            Error::Config(format!("frame {frame} out of range ({})", self.frames.len()))
        })?;
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "P5")?;
        writeln!(file, "{} {}", self.side, self.side)?;
        writeln!(file, "255")?;
        let bytes: Vec<u8> = img
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        file.write_all(&bytes)?;
        Ok(())
    }
}

/// Solver history CSV with the documented column set.
pub fn write_history_csv<T: Scalar>(path: &Path, history: &[IterationRecord<T>]) -> Result<()> {
    let mut out = String::from("k,objective,aug_lagrangian,primal_residual,dual_residual,wall_time_s\n");
    for rec in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rec.k,
            rec.objective.as_f64(),
            rec.aug_lagrangian.as_f64(),
            rec.primal_residual.as_f64(),
            rec.dual_residual.as_f64(),
            rec.wall_time_s,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
