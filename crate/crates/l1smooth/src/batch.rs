//! Dense batch formulation: stacked system, closed-form x-update, Gauss-Newton,
//! and full dense variable-splitting runs.
//!
//! These routines exist as ground-truth oracles and as the baseline for the
//! scaling comparison; they use dense storage throughout and refuse to stack
//! beyond a configured size limit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearModel, NonlinearModel, StateSpace};
use crate::scalar::Scalar;
use crate::splitting::{
    soft_threshold, IterationRecord, SolveStatus, Solution, SplitState, SplittingConfig, Variant,
};

/// Default cap on the stacked state dimension `T * n_x`.
pub const DEFAULT_DENSE_LIMIT: usize = 20_000;

/// Stacked dense form of a state-space estimation problem.
///
/// For a linear model the dynamics enter through the block lower-bidiagonal
/// `psi` with unit diagonal blocks and `-A_t` sub-diagonal blocks, so that
/// `psi * x - m` stacks the prior and dynamics residuals. For a nonlinear
/// model the residual map and its Jacobians are assembled on demand.
pub struct BatchSystem<T: Scalar> {
    pub steps: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub sparsity_dim: usize,
    pub y: DVector<T>,
    pub m: DVector<T>,
    /// Block-diagonal `blkdiag(P1, Q_2, .., Q_T)`.
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub omega: DMatrix<T>,
    q_inv: DMatrix<T>,
    r_inv: DMatrix<T>,
    kind: BatchKind<T>,
}

enum BatchKind<T: Scalar> {
    Linear { h: DMatrix<T>, psi: DMatrix<T> },
    Nonlinear { model: NonlinearModel<T> },
}

/// Stacked iterate triple used by the dense drivers.
#[derive(Clone, Debug)]
pub struct BatchIterate<T: Scalar> {
    pub x: DVector<T>,
    pub w: DVector<T>,
    pub eta: DVector<T>,
}

/// Stack a per-step trajectory into one vector.
pub fn vectorize<T: Scalar>(traj: &[DVector<T>]) -> DVector<T> {
    let total: usize = traj.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for v in traj {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}

/// Split a stacked vector back into per-step blocks of size `dim`.
pub fn unvectorize<T: Scalar>(v: &DVector<T>, dim: usize) -> Vec<DVector<T>> {
    assert!(dim > 0 && v.len() % dim == 0, "stacked length not a multiple of block size");
    (0..v.len() / dim)
        .map(|t| v.rows(t * dim, dim).into_owned())
        .collect()
}

fn block_diag<T: Scalar>(blocks: impl Iterator<Item = DMatrix<T>>, rows: usize, cols: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(&b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

fn block_diag_inverse<T: Scalar>(blocks: impl Iterator<Item = DMatrix<T>>, n: usize) -> Result<DMatrix<T>> {
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        let inv = b
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("noise covariance block".to_string()))?
            .inverse();
        out.view_mut((at, at), (k, k)).copy_from(&inv);
        at += k;
    }
    Ok(out)
}

impl<T: Scalar> BatchSystem<T> {
    fn common_parts<M: StateSpace<T>>(
        model: &M,
        y: &[DVector<T>],
        limit: usize,
    ) -> Result<(DVector<T>, DVector<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
        let steps = model.steps();
        let n = model.state_dim();
        let size = steps * n;
        if size > limit {
            return Err(Error::BatchLimit { size, limit });
        }
        if y.len() != steps {
            return Err(Error::Dimension(format!(
                "need {steps} measurements, got {}",
                y.len()
            )));
        }
        let n_y = model.meas_dim();
        let p = model.sparsity_dim();

        let y_stacked = vectorize(y);
        let mut m = DVector::zeros(size);
        m.rows_mut(0, n).copy_from(model.prior_mean());

        let q = block_diag(
            std::iter::once(model.prior_cov().clone())
                .chain((1..steps).map(|t| model.proc_noise(t).clone())),
            size,
            size,
        );
        let q_inv = block_diag_inverse(
            std::iter::once(model.prior_cov().clone())
                .chain((1..steps).map(|t| model.proc_noise(t).clone())),
            size,
        )?;
        let r = block_diag(
            (0..steps).map(|t| model.meas_noise(t).clone()),
            steps * n_y,
            steps * n_y,
        );
        let r_inv = block_diag_inverse((0..steps).map(|t| model.meas_noise(t).clone()), steps * n_y)?;
        let omega = block_diag((0..steps).map(|t| model.sparsity(t).clone()), steps * p, size);
        Ok((y_stacked, m, q, q_inv, r, r_inv, omega))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, BatchKind::Linear { .. })
    }

    /// Residual map `a(x) = vec(x_0, x_1 - a_1(x_0), .., x_{T-1} - a_{T-1}(x_{T-2}))`;
    /// for a linear model this equals `psi * x`.
    pub fn dynamics_residual_map(&self, x: &DVector<T>) -> DVector<T> {
        match &self.kind {
            BatchKind::Linear { psi, .. } => psi * x,
            BatchKind::Nonlinear { model } => {
                let n = self.state_dim;
                let mut out = DVector::zeros(self.steps * n);
                out.rows_mut(0, n).copy_from(&x.rows(0, n));
                for t in 1..self.steps {
                    let prev = x.rows((t - 1) * n, n).into_owned();
                    let pred = model.dynamics(t, &prev);
                    let block = x.rows(t * n, n) - pred;
                    out.rows_mut(t * n, n).copy_from(&block);
                }
                out
            }
        }
    }

    /// Stacked measurement map `h(x)`.
    pub fn measurement_map(&self, x: &DVector<T>) -> DVector<T> {
        match &self.kind {
            BatchKind::Linear { h, .. } => h * x,
            BatchKind::Nonlinear { model } => {
                let n = self.state_dim;
                let n_y = self.meas_dim;
                let mut out = DVector::zeros(self.steps * n_y);
                for t in 0..self.steps {
                    let xt = x.rows(t * n, n).into_owned();
                    out.rows_mut(t * n_y, n_y).copy_from(&model.measurement(t, &xt));
                }
                out
            }
        }
    }

    /// Jacobian of [`Self::dynamics_residual_map`] at `x`.
    pub fn dynamics_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        match &self.kind {
            BatchKind::Linear { psi, .. } => psi.clone(),
            BatchKind::Nonlinear { model } => {
                let n = self.state_dim;
                let size = self.steps * n;
                let mut out = DMatrix::identity(size, size);
                for t in 1..self.steps {
                    let prev = x.rows((t - 1) * n, n).into_owned();
                    let ja = model.dynamics_jacobian(t, &prev);
                    out.view_mut((t * n, (t - 1) * n), (n, n)).copy_from(&(-ja));
                }
                out
            }
        }
    }

    /// Jacobian of [`Self::measurement_map`] at `x`.
    pub fn measurement_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        match &self.kind {
            BatchKind::Linear { h, .. } => h.clone(),
            BatchKind::Nonlinear { model } => {
                let n = self.state_dim;
                let n_y = self.meas_dim;
                let mut out = DMatrix::zeros(self.steps * n_y, self.steps * n);
                for t in 0..self.steps {
                    let xt = x.rows(t * n, n).into_owned();
                    let jh = model.measurement_jacobian(t, &xt);
                    out.view_mut((t * n_y, t * n), (n_y, n)).copy_from(&jh);
                }
                out
            }
        }
    }

    /// Smoothing part of the objective:
    /// `1/2 ||y - h(x)||^2_{R^-1} + 1/2 ||m - a(x)||^2_{Q^-1}`.
    pub fn smoothing_objective(&self, x: &DVector<T>) -> T {
        let half = T::from_config(0.5);
        let ry = &self.y - self.measurement_map(x);
        let rq = &self.m - self.dynamics_residual_map(x);
        half * (ry.dot(&(&self.r_inv * &ry)) + rq.dot(&(&self.q_inv * &rq)))
    }

    /// Full regularized objective on the stacked form.
    pub fn objective(&self, x: &DVector<T>, lambda: T) -> T {
        let ox = &self.omega * x;
        self.smoothing_objective(x) + lambda * ox.iter().fold(T::zero(), |a, e| a + e.abs())
    }
}

/// Stack a linear model and its measurements into dense batch form, refusing
/// above [`DEFAULT_DENSE_LIMIT`] stacked states.
pub fn stack_batch<T: Scalar>(model: &LinearModel<T>, y: &[DVector<T>]) -> Result<BatchSystem<T>> {
    stack_batch_with_limit(model, y, DEFAULT_DENSE_LIMIT)
}

pub fn stack_batch_with_limit<T: Scalar>(
    model: &LinearModel<T>,
    y: &[DVector<T>],
    limit: usize,
) -> Result<BatchSystem<T>> {
    let (y_stacked, m, q, q_inv, r, r_inv, omega) = BatchSystem::common_parts(model, y, limit)?;
    let steps = model.steps;
    let n = model.state_dim();
    let h = block_diag(
        (0..steps).map(|t| model.meas_at(t).clone()),
        steps * model.meas_dim(),
        steps * n,
    );
    let mut psi = DMatrix::identity(steps * n, steps * n);
    for t in 1..steps {
        psi.view_mut((t * n, (t - 1) * n), (n, n))
            .copy_from(&(-model.trans_at(t)));
    }
    Ok(BatchSystem {
        steps,
        state_dim: n,
        meas_dim: model.meas_dim(),
        sparsity_dim: model.sparsity_dim(),
        y: y_stacked,
        m,
        q,
        r,
        omega,
        q_inv,
        r_inv,
        kind: BatchKind::Linear { h, psi },
    })
}

/// Stack a nonlinear model; the residual maps and Jacobians stay callable.
pub fn stack_batch_nonlinear<T: Scalar>(
    model: &NonlinearModel<T>,
    y: &[DVector<T>],
) -> Result<BatchSystem<T>> {
    stack_batch_nonlinear_with_limit(model, y, DEFAULT_DENSE_LIMIT)
}

pub fn stack_batch_nonlinear_with_limit<T: Scalar>(
    model: &NonlinearModel<T>,
    y: &[DVector<T>],
    limit: usize,
) -> Result<BatchSystem<T>> {
    let (y_stacked, m, q, q_inv, r, r_inv, omega) = BatchSystem::common_parts(model, y, limit)?;
    Ok(BatchSystem {
        steps: model.steps,
        state_dim: model.state_dim,
        meas_dim: model.meas_dim,
        sparsity_dim: model.sparsity_dim(),
        y: y_stacked,
        m,
        q,
        r,
        omega,
        q_inv,
        r_inv,
        kind: BatchKind::Nonlinear {
            model: model.clone(),
        },
    })
}

/// Closed-form x-update of the dense splitting iteration:
/// `x = [H^T R^-1 H + Psi^T Q^-1 Psi + rho Omega^T Omega]^-1
///      [H^T R^-1 y + Psi^T Q^-1 m + rho Omega^T (w + eta/rho)]`.
///
/// The penalty contribution is assembled as `Omega^T (rho w + eta)` so the
/// unpenalized case `rho = 0` stays well defined.
pub fn batch_x_update<T: Scalar>(
    batch: &BatchSystem<T>,
    w: &DVector<T>,
    eta: &DVector<T>,
    rho: T,
) -> Result<DVector<T>> {
    let BatchKind::Linear { h, psi } = &batch.kind else {
        return Err(Error::Config(
            "closed-form x-update requires a linear batch system".to_string(),
        ));
    };
    let ht_rinv = h.transpose() * &batch.r_inv;
    let psit_qinv = psi.transpose() * &batch.q_inv;
    let normal = &ht_rinv * h
        + &psit_qinv * psi
        + (batch.omega.transpose() * &batch.omega).map(|v| v * rho);
    let pull = w.map(|v| v * rho) + eta;
    let rhs = &ht_rinv * &batch.y + &psit_qinv * &batch.m + batch.omega.transpose() * pull;
    let chol = normal.cholesky().ok_or(Error::SingularNormalMatrix)?;
    Ok(chol.solve(&rhs))
}

/// Solve `min 1/2||y - Hx||^2_{R^-1} + 1/2||Psi x - m||^2_{Q^-1}
///            + rho/2 ||target - theta x||^2` (linear systems only).
pub fn batch_pseudo_solve<T: Scalar>(
    batch: &BatchSystem<T>,
    theta: &DMatrix<T>,
    target: &DVector<T>,
    rho: T,
) -> Result<DVector<T>> {
    let BatchKind::Linear { h, psi } = &batch.kind else {
        return Err(Error::Config(
            "closed-form x-update requires a linear batch system".to_string(),
        ));
    };
    let ht_rinv = h.transpose() * &batch.r_inv;
    let psit_qinv = psi.transpose() * &batch.q_inv;
    let normal = &ht_rinv * h + &psit_qinv * psi + (theta.transpose() * theta).map(|v| v * rho);
    let rhs = &ht_rinv * &batch.y + &psit_qinv * &batch.m + (theta.transpose() * target).map(|v| v * rho);
    let chol = normal.cholesky().ok_or(Error::SingularNormalMatrix)?;
    Ok(chol.solve(&rhs))
}

/// Gradient of the penalized smoothing objective
/// `f(x) = 1/2||y-h(x)||^2_{R^-1} + 1/2||m-a(x)||^2_{Q^-1} + rho/2||w - Omega x + eta/rho||^2`.
pub fn gn_gradient<T: Scalar>(
    batch: &BatchSystem<T>,
    x: &DVector<T>,
    w: &DVector<T>,
    eta: &DVector<T>,
    rho: T,
) -> Result<DVector<T>> {
    let jh = batch.measurement_jacobian(x);
    let ja = batch.dynamics_jacobian(x);
    let ry = batch.measurement_map(x) - &batch.y;
    let rq = batch.dynamics_residual_map(x) - &batch.m;
    let pen = (&batch.omega * x - w).zip_map(eta, |a, e| a - e / rho);
    let grad = jh.transpose() * (&batch.r_inv * ry)
        + ja.transpose() * (&batch.q_inv * rq)
        + (batch.omega.transpose() * pen).map(|v| v * rho);
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".to_string()));
    }
    Ok(grad)
}

/// One Gauss-Newton step: the exact minimizer of the objective linearized at
/// `x`, with the affine re-centering terms included.
pub fn gn_step<T: Scalar>(
    batch: &BatchSystem<T>,
    x: &DVector<T>,
    w: &DVector<T>,
    eta: &DVector<T>,
    rho: T,
) -> Result<DVector<T>> {
    let jh = batch.measurement_jacobian(x);
    let ja = batch.dynamics_jacobian(x);
    let jht_rinv = jh.transpose() * &batch.r_inv;
    let jat_qinv = ja.transpose() * &batch.q_inv;
    let normal = &jht_rinv * &jh
        + &jat_qinv * &ja
        + (batch.omega.transpose() * &batch.omega).map(|v| v * rho);
    let target = w + eta.map(|e| e / rho);
    let rhs = &jht_rinv * (&batch.y - batch.measurement_map(x) + &jh * x)
        + &jat_qinv * (&batch.m - batch.dynamics_residual_map(x) + &ja * x)
        + (batch.omega.transpose() * target).map(|v| v * rho);
    let chol = normal.cholesky().ok_or(Error::RankDeficientGaussNewton)?;
    Ok(chol.solve(&rhs))
}

/// Augmented Lagrangian
/// `theta1(x) + lambda||w||_1 + eta^T (w - Omega x) + rho/2 ||w - Omega x||^2`.
pub fn augmented_lagrangian<T: Scalar>(
    batch: &BatchSystem<T>,
    x: &DVector<T>,
    w: &DVector<T>,
    eta: &DVector<T>,
    rho: T,
    lambda: T,
) -> Result<T> {
    if x.iter().chain(w.iter()).chain(eta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("augmented Lagrangian input".to_string()));
    }
    let half = T::from_config(0.5);
    let gap = w - &self_omega_x(batch, x);
    let l1 = w.iter().fold(T::zero(), |a, e| a + e.abs());
    Ok(batch.smoothing_objective(x) + lambda * l1 + eta.dot(&gap) + half * rho * gap.norm_squared())
}

fn self_omega_x<T: Scalar>(batch: &BatchSystem<T>, x: &DVector<T>) -> DVector<T> {
    &batch.omega * x
}

/// Dense x-update for the nonlinear case: Gauss-Newton inner loop with the
/// same stopping rule and divergence guard as the smoother-based inner loop.
fn gn_solve<T: Scalar>(
    batch: &BatchSystem<T>,
    x0: &DVector<T>,
    w: &DVector<T>,
    eta: &DVector<T>,
    rho: T,
    max_iterations: usize,
    tol: T,
) -> Result<DVector<T>> {
    let half = T::from_config(0.5);
    let penalized = |x: &DVector<T>| -> T {
        let gap = w - &self_omega_x(batch, x) + eta.map(|e| e / rho);
        batch.smoothing_objective(x) + half * rho * gap.norm_squared()
    };
    let mut x = x0.clone();
    let mut best = penalized(&x);
    let mut increases = 0;
    for _ in 0..max_iterations {
        let next = gn_step(batch, &x, w, eta, rho)?;
        let step = (&next - &x).norm();
        x = next;
        let value = penalized(&x);
        if value > best {
            increases += 1;
            if increases >= 3 {
                break;
            }
        } else {
            increases = 0;
            best = value;
        }
        if step <= tol {
            break;
        }
    }
    Ok(x)
}

/// Full dense variable-splitting run; mirrors the smoother-based driver
/// update-for-update but solves every x-subproblem densely.
pub fn batch_run<T: Scalar>(
    batch: &BatchSystem<T>,
    config: &SplittingConfig<T>,
    x0: Option<&[DVector<T>]>,
) -> Result<Solution<T>> {
    config.validate()?;
    let n = batch.state_dim;
    let p = batch.sparsity_dim;
    let steps = batch.steps;
    let rho = config.rho;
    let lambda = config.lambda;

    let zero_w = DVector::zeros(steps * p);
    let zero_eta = DVector::zeros(steps * p);

    // Initial trajectory: caller-provided, else the unregularized smoothing
    // solution (dense lambda=0 solve).
    let x_init = match x0 {
        Some(traj) => vectorize(traj),
        None => match &batch.kind {
            BatchKind::Linear { .. } => batch_x_update(batch, &zero_w, &zero_eta, T::zero())?,
            BatchKind::Nonlinear { .. } => {
                let guess = DVector::zeros(steps * n);
                gn_solve(
                    batch,
                    &guess,
                    &zero_w,
                    &zero_eta,
                    T::from_config(1e-12),
                    config.ieks_max_iterations,
                    config.ieks_tol,
                )?
            }
        },
    };

    let mut it = BatchIterate {
        w: if config.variant == Variant::Fopd {
            DVector::zeros(steps * p)
        } else {
            &batch.omega * &x_init
        },
        eta: DVector::zeros(steps * p),
        x: x_init,
    };
    let mut x_hat = it.x.clone();

    // The linear normal matrix is constant across iterations; factor it once.
    let linear_pre = match &batch.kind {
        BatchKind::Linear { h, psi } => {
            let ht_rinv = h.transpose() * &batch.r_inv;
            let psit_qinv = psi.transpose() * &batch.q_inv;
            let smooth_normal = &ht_rinv * h + &psit_qinv * psi;
            let base_rhs = &ht_rinv * &batch.y + &psit_qinv * &batch.m;
            let normal = match config.variant {
                Variant::Fopd => {
                    let inv_rho = T::one() / rho;
                    smooth_normal + DMatrix::identity(steps * n, steps * n).map(|v: T| v * inv_rho)
                }
                _ => {
                    smooth_normal + (batch.omega.transpose() * &batch.omega).map(|v| v * rho)
                }
            };
            let chol = normal.cholesky().ok_or(Error::SingularNormalMatrix)?;
            Some((chol, base_rhs))
        }
        BatchKind::Nonlinear { .. } => None,
    };
    // Resolve the FOPD dual step from the per-step operator blocks exactly as
    // the smoother-based driver does, so default-config runs stay comparable.
    let gamma = config.resolved_gamma(|| {
        let mut best = T::zero();
        for t in 0..steps {
            let block = batch.omega.view((t * p, t * n), (p, n)).into_owned();
            best = best.max(operator_norm_sq_dense(&block));
        }
        best
    });
    let tau = config.resolved_tau();

    let mut history: Vec<IterationRecord<T>> = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let started = std::time::Instant::now();

    for k in 1..=config.max_iterations {
        let w_prev = it.w.clone();
        let x_prev = it.x.clone();
        let step_result: Result<()> = (|| {
            match config.variant {
                Variant::Admm => {
                    it.x = match &linear_pre {
                        Some((chol, base)) => {
                            let pull = it.w.map(|v| v * rho) + &it.eta;
                            chol.solve(&(base + batch.omega.transpose() * pull))
                        }
                        None => gn_solve(
                            batch, &it.x, &it.w, &it.eta, rho,
                            config.ieks_max_iterations, config.ieks_tol,
                        )?,
                    };
                    let ox = self_omega_x(batch, &it.x);
                    it.w = soft_threshold(&(&ox - &it.eta.map(|e| e / rho)), lambda / rho);
                    it.eta += (&it.w - &ox).map(|v| v * rho);
                }
                Variant::Prs => {
                    it.x = match &linear_pre {
                        Some((chol, base)) => {
                            let pull = it.w.map(|v| v * rho) + &it.eta;
                            chol.solve(&(base + batch.omega.transpose() * pull))
                        }
                        None => gn_solve(
                            batch, &it.x, &it.w, &it.eta, rho,
                            config.ieks_max_iterations, config.ieks_tol,
                        )?,
                    };
                    let ox = self_omega_x(batch, &it.x);
                    let half_eta = &it.eta + (&it.w - &ox).map(|v| v * (config.alpha * rho));
                    it.w = soft_threshold(&(&ox - &half_eta.map(|e| e / rho)), lambda / rho);
                    it.eta = &half_eta + (&it.w - &ox).map(|v| v * (config.alpha * rho));
                }
                Variant::Sbm => {
                    for _ in 0..config.sbm_inner {
                        it.x = match &linear_pre {
                            Some((chol, base)) => {
                                let pull = (&it.w + &it.eta).map(|v| v * rho);
                                chol.solve(&(base + batch.omega.transpose() * pull))
                            }
                            None => gn_solve(
                                batch, &it.x, &it.w, &it.eta.map(|e| e * rho), rho,
                                config.ieks_max_iterations, config.ieks_tol,
                            )?,
                        };
                        let ox = self_omega_x(batch, &it.x);
                        it.w = soft_threshold(&(&ox - &it.eta), lambda / rho);
                    }
                    it.eta += &it.w - &self_omega_x(batch, &it.x);
                }
                Variant::Fopd => {
                    let ox_hat = self_omega_x(batch, &x_hat);
                    let v = &it.w + &ox_hat.map(|e| e * gamma);
                    it.w = v.map(|e| e.min(lambda).max(-lambda));
                    let target = &it.x - &(batch.omega.transpose() * &it.w).map(|e| e * rho);
                    let inv_rho = T::one() / rho;
                    it.x = match &linear_pre {
                        Some((chol, base)) => chol.solve(&(base + target.map(|v| v * inv_rho))),
                        None => gn_solve_prox(
                            batch, &it.x, &target, rho,
                            config.ieks_max_iterations, config.ieks_tol,
                        )?,
                    };
                    x_hat = &it.x + (&it.x - &x_prev).map(|v| v * tau);
                }
            }
            Ok(())
        })();

        if step_result.is_err() || it.x.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::Diverged;
            break;
        }

        let ox = self_omega_x(batch, &it.x);
        let (primal, dual) = match config.variant {
            Variant::Fopd => ((&it.x - &x_prev).norm(), (&it.w - &w_prev).norm()),
            _ => (
                (&it.w - &ox).norm(),
                (batch.omega.transpose() * (&it.w - &w_prev)).norm() * rho,
            ),
        };
        let objective = batch.objective(&it.x, lambda);
        let aug = match config.variant {
            Variant::Fopd => objective,
            Variant::Sbm => {
                augmented_lagrangian(batch, &it.x, &it.w, &it.eta.map(|e| e * rho), rho, lambda)?
            }
            _ => augmented_lagrangian(batch, &it.x, &it.w, &it.eta, rho, lambda)?,
        };
        history.push(IterationRecord {
            k,
            objective,
            aug_lagrangian: aug,
            primal_residual: primal,
            dual_residual: dual,
            wall_time_s: started.elapsed().as_secs_f64(),
            cov_updates: 0,
        });
        if primal <= config.primal_tol && dual <= config.dual_tol {
            status = SolveStatus::Converged;
            break;
        }
    }

    let state = SplitState {
        x: unvectorize(&it.x, n),
        w: unvectorize(&it.w, p),
        eta: unvectorize(&it.eta, p),
        x_hat: None,
        prev_w: None,
        iteration: history.len(),
        primal_residual: history.last().map_or(T::zero(), |r| r.primal_residual),
        dual_residual: history.last().map_or(T::zero(), |r| r.dual_residual),
    };
    Ok(Solution {
        x: state.x.clone(),
        state,
        history,
        status,
        init_cov_updates: 0,
    })
}

/// Proximal-point x-update for dense FOPD on nonlinear models:
/// `argmin theta1(x) + 1/(2 rho) ||x - target||^2` by Gauss-Newton.
fn gn_solve_prox<T: Scalar>(
    batch: &BatchSystem<T>,
    x0: &DVector<T>,
    target: &DVector<T>,
    rho: T,
    max_iterations: usize,
    tol: T,
) -> Result<DVector<T>> {
    let inv_rho = T::one() / rho;
    let half = T::from_config(0.5);
    let objective = |x: &DVector<T>| -> T {
        batch.smoothing_objective(x) + half * inv_rho * (x - target).norm_squared()
    };
    let size = x0.len();
    let mut x = x0.clone();
    let mut best = objective(&x);
    let mut increases = 0;
    for _ in 0..max_iterations {
        let jh = batch.measurement_jacobian(&x);
        let ja = batch.dynamics_jacobian(&x);
        let jht_rinv = jh.transpose() * &batch.r_inv;
        let jat_qinv = ja.transpose() * &batch.q_inv;
        let normal = &jht_rinv * &jh
            + &jat_qinv * &ja
            + DMatrix::identity(size, size).map(|v: T| v * inv_rho);
        let rhs = &jht_rinv * (&batch.y - batch.measurement_map(&x) + &jh * &x)
            + &jat_qinv * (&batch.m - batch.dynamics_residual_map(&x) + &ja * &x)
            + target.map(|v| v * inv_rho);
        let chol = normal.cholesky().ok_or(Error::RankDeficientGaussNewton)?;
        let next = chol.solve(&rhs);
        let step = (&next - &x).norm();
        x = next;
        let value = objective(&x);
        if value > best {
            increases += 1;
            if increases >= 3 {
                break;
            }
        } else {
            increases = 0;
            best = value;
        }
        if step <= tol {
            break;
        }
    }
    Ok(x)
}

/// Largest squared singular value of a dense operator (power iteration).
pub fn operator_norm_sq_dense<T: Scalar>(omega: &DMatrix<T>) -> T {
    let n = omega.ncols();
    if n == 0 {
        return T::zero();
    }
    let gram_vec = |v: &DVector<T>| omega.transpose() * (omega * v);
    let mut v = DVector::from_element(n, T::one() / T::from_config(n as f64).sqrt());
    let mut value = T::zero();
    for _ in 0..100 {
        let next = gram_vec(&v);
        let norm = next.norm();
        if norm == T::zero() {
            return T::zero();
        }
        let next = next.map(|e| e / norm);
        let new_value = next.dot(&gram_vec(&next));
        let done = (new_value - value).abs() <= T::from_config(1e-12) * (T::one() + new_value);
        v = next;
        value = new_value;
        if done {
            break;
        }
    }
    value
}
