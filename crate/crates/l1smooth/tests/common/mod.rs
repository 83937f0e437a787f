//! Shared generators for randomized oracle tests.
#![allow(dead_code)] // each test binary uses a subset

use l1smooth::model::{LinearModel, MatSeq};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Well-conditioned random SPD matrix with eigenvalues roughly in `[0.3, 2] * scale`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| randn(rng) / (n as f64).sqrt());
    let sym = &a * a.transpose();
    (sym + DMatrix::identity(n, n) * 0.3) * scale
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| randn(rng) * scale)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| randn(rng) * scale)
}

pub struct InstanceShape {
    pub steps: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub sparsity_dim: usize,
    pub stationary: bool,
}

/// Random well-posed linear model. The transition matrix is scaled toward a
/// spectral radius below one so desk-length trajectories stay bounded.
pub fn random_linear_model(rng: &mut ChaCha8Rng, shape: &InstanceShape) -> LinearModel<f64> {
    let n = shape.state_dim;
    let trans_one = |rng: &mut ChaCha8Rng| random_matrix(rng, n, n, 0.95 / (n as f64).sqrt());
    let meas_one = |rng: &mut ChaCha8Rng| random_matrix(rng, shape.meas_dim, n, 1.0);
    let proc_one = |rng: &mut ChaCha8Rng| random_spd(rng, n, 0.5);
    let measn_one = |rng: &mut ChaCha8Rng| random_spd(rng, shape.meas_dim, 0.4);
    let omega_one = |rng: &mut ChaCha8Rng| random_matrix(rng, shape.sparsity_dim, n, 1.0);

    let (trans, proc_noise): (MatSeq<f64>, MatSeq<f64>) = if shape.stationary {
        (trans_one(rng).into(), proc_one(rng).into())
    } else {
        (
            (1..shape.steps).map(|_| trans_one(rng)).collect::<Vec<_>>().into(),
            (1..shape.steps).map(|_| proc_one(rng)).collect::<Vec<_>>().into(),
        )
    };
    let (meas, meas_noise, sparsity): (MatSeq<f64>, MatSeq<f64>, MatSeq<f64>) = if shape.stationary
    {
        (meas_one(rng).into(), measn_one(rng).into(), omega_one(rng).into())
    } else {
        (
            (0..shape.steps).map(|_| meas_one(rng)).collect::<Vec<_>>().into(),
            (0..shape.steps).map(|_| measn_one(rng)).collect::<Vec<_>>().into(),
            (0..shape.steps).map(|_| omega_one(rng)).collect::<Vec<_>>().into(),
        )
    };

    LinearModel {
        steps: shape.steps,
        trans,
        meas,
        proc_noise,
        meas_noise,
        sparsity,
        prior_mean: random_vector(rng, n, 1.0),
        prior_cov: random_spd(rng, n, 1.0),
    }
}

pub fn random_measurements(
    rng: &mut ChaCha8Rng,
    steps: usize,
    meas_dim: usize,
) -> Vec<DVector<f64>> {
    (0..steps).map(|_| random_vector(rng, meas_dim, 1.0)).collect()
}

pub fn random_trajectory(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..steps).map(|_| random_vector(rng, dim, 1.0)).collect()
}

/// Relative gap between two per-step sequences in stacked Euclidean norm.
pub fn relative_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}
