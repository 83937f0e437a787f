//! Variable-splitting drivers (ADMM, PRS, SBM, FOPD) whose x-subproblem is a
//! pseudo-measurement-augmented smoother solve.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{evaluate_objective, MatSeq, ModelRef, PseudoMeasurement, StateSpace};
use crate::scalar::Scalar;
use crate::smoother::{ieks_solve, ks_solve, FilterCache, IeksConfig};

/// Splitting scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Admm,
    Prs,
    Sbm,
    Fopd,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "admm" => Ok(Variant::Admm),
            "prs" => Ok(Variant::Prs),
            "sbm" => Ok(Variant::Sbm),
            "fopd" => Ok(Variant::Fopd),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected admm, prs, sbm, or fopd)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Admm => "admm",
            Variant::Prs => "prs",
            Variant::Sbm => "sbm",
            Variant::Fopd => "fopd",
        };
        f.write_str(name)
    }
}

/// Driver settings. Parameters not used by the selected variant are ignored.
#[derive(Clone, Debug)]
pub struct SplittingConfig<T: Scalar> {
    pub variant: Variant,
    /// Regularization weight, `lambda >= 0`.
    pub lambda: T,
    /// Penalty parameter, `rho > 0`.
    pub rho: T,
    /// PRS dual step factor in (0, 1).
    pub alpha: T,
    /// SBM inner alternation count `M >= 1`.
    pub sbm_inner: usize,
    /// FOPD extrapolation factor; defaults to 1.
    pub tau: Option<T>,
    /// FOPD dual step; defaults to `1 / (rho * sigma_max(Omega)^2)`.
    pub gamma: Option<T>,
    pub max_iterations: usize,
    pub primal_tol: T,
    pub dual_tol: T,
    /// Residual-balancing rho heuristic (off by default; the convergence
    /// guarantees assume constant rho).
    pub adaptive_rho: bool,
    /// Inner IEKS budget for nonlinear models.
    pub ieks_max_iterations: usize,
    pub ieks_tol: T,
}

impl<T: Scalar> SplittingConfig<T> {
    pub fn new(variant: Variant, lambda: T, rho: T) -> Self {
        Self {
            variant,
            lambda,
            rho,
            alpha: T::from_config(0.9),
            sbm_inner: 1,
            tau: None,
            gamma: None,
            max_iterations: 20,
            primal_tol: T::from_config(1e-6),
            dual_tol: T::from_config(1e-6),
            adaptive_rho: false,
            ieks_max_iterations: 10,
            ieks_tol: T::from_config(1e-8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < T::zero() {
            return Err(Error::Config("lambda must be nonnegative".to_string()));
        }
        if self.rho <= T::zero() {
            return Err(Error::Config("rho must be positive".to_string()));
        }
        if self.variant == Variant::Prs && !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::Config("alpha must lie in (0, 1)".to_string()));
        }
        if self.variant == Variant::Sbm && self.sbm_inner == 0 {
            return Err(Error::Config("sbm_inner must be at least 1".to_string()));
        }
        if let Some(tau) = self.tau {
            if tau <= T::zero() {
                return Err(Error::Config("tau must be positive".to_string()));
            }
        }
        if let Some(gamma) = self.gamma {
            if gamma <= T::zero() {
                return Err(Error::Config("gamma must be positive".to_string()));
            }
        }
        if self.max_iterations == 0 || self.ieks_max_iterations == 0 {
            return Err(Error::Config("iteration budgets must be positive".to_string()));
        }
        if self.ieks_tol <= T::zero() {
            return Err(Error::Config("ieks_tol must be positive".to_string()));
        }
        Ok(())
    }

    pub fn resolved_tau(&self) -> T {
        self.tau.unwrap_or_else(T::one)
    }

    /// FOPD dual step, with the standard primal-dual coupling as default.
    pub fn resolved_gamma(&self, omega_norm_sq: impl FnOnce() -> T) -> T {
        match self.gamma {
            Some(g) => g,
            None => {
                let s = omega_norm_sq();
                if s > T::zero() {
                    T::one() / (self.rho * s)
                } else {
                    T::one() / self.rho
                }
            }
        }
    }

    fn ieks_config(&self) -> IeksConfig<T> {
        IeksConfig {
            max_iterations: self.ieks_max_iterations,
            tol: self.ieks_tol,
            record_iterates: false,
            trace_path: None,
        }
    }
}

/// Splitting iterate: trajectory, auxiliary/dual sequences, counters, residuals.
#[derive(Clone, Debug)]
pub struct SplitState<T: Scalar> {
    pub x: Vec<DVector<T>>,
    pub w: Vec<DVector<T>>,
    pub eta: Vec<DVector<T>>,
    /// FOPD extrapolated trajectory.
    pub x_hat: Option<Vec<DVector<T>>>,
    /// Previous auxiliary iterate (dual residual bookkeeping).
    pub prev_w: Option<Vec<DVector<T>>>,
    pub iteration: usize,
    pub primal_residual: T,
    pub dual_residual: T,
}

impl<T: Scalar> SplitState<T> {
    /// Fresh state at `x` with `w = Omega x` and zero duals.
    pub fn from_trajectory(model: ModelRef<'_, T>, x: Vec<DVector<T>>) -> Self {
        let steps = model.steps();
        let p = model.sparsity_dim();
        let w: Vec<DVector<T>> = (0..steps).map(|t| model.sparsity_at(t) * &x[t]).collect();
        let eta = vec![DVector::zeros(p); steps];
        Self {
            x,
            w,
            eta,
            x_hat: None,
            prev_w: None,
            iteration: 0,
            primal_residual: T::zero(),
            dual_residual: T::zero(),
        }
    }

    fn finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.w.iter())
            .chain(self.eta.iter())
            .all(|v| v.iter().all(|e| e.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

/// One row of the solver history.
#[derive(Clone, Debug)]
pub struct IterationRecord<T: Scalar> {
    pub k: usize,
    pub objective: T,
    pub aug_lagrangian: T,
    pub primal_residual: T,
    pub dual_residual: T,
    /// Seconds since the solve started.
    pub wall_time_s: f64,
    /// Measurement-covariance updates performed during this iteration; zero
    /// once the gain cache is in place.
    pub cov_updates: usize,
}

/// Final iterate plus per-iteration history.
#[derive(Clone, Debug)]
pub struct Solution<T: Scalar> {
    pub x: Vec<DVector<T>>,
    pub state: SplitState<T>,
    pub history: Vec<IterationRecord<T>>,
    pub status: SolveStatus,
    /// Covariance updates spent producing the initial trajectory.
    pub init_cov_updates: usize,
}

/// Componentwise soft threshold `max(|e_i| - kappa, 0) * sgn(e_i)`: the exact
/// minimizer of `kappa ||w||_1 + 1/2 ||w - e||^2`.
pub fn soft_threshold<T: Scalar>(e: &DVector<T>, kappa: T) -> DVector<T> {
    e.map(|v| soft_threshold_scalar(v, kappa))
}

pub fn soft_threshold_scalar<T: Scalar>(v: T, kappa: T) -> T {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        T::zero()
    }
}

/// Pseudo-measurement channel encoding the selected variant's quadratic term.
///
/// ADMM and PRS use `Theta = Omega`, `Delta = w + eta/rho`, `Sigma = I/rho`;
/// SBM uses the scaled-dual form `Delta = w + eta` with the same `Sigma`
/// (the quadratic term carries weight `rho`); FOPD uses the proximal form
/// `Theta = I`, `Delta = x - rho Omega^T w`, `Sigma = rho I`.
pub fn pseudo_spec_for<T: Scalar>(
    variant: Variant,
    state: &SplitState<T>,
    config: &SplittingConfig<T>,
    model: ModelRef<'_, T>,
) -> Result<PseudoMeasurement<T>> {
    let steps = model.steps();
    if state.x.len() != steps || state.w.len() != steps || state.eta.len() != steps {
        return Err(Error::Dimension(
            "split state length does not match model".to_string(),
        ));
    }
    let rho = config.rho;
    let p = model.sparsity_dim();
    let n = model.state_dim();
    let spec = match variant {
        Variant::Admm | Variant::Prs => PseudoMeasurement {
            theta: model.sparsity_seq().clone(),
            delta: (0..steps)
                .map(|t| &state.w[t] + &state.eta[t].map(|e| e / rho))
                .collect(),
            sigma: MatSeq::Stationary(DMatrix::identity(p, p).map(|v: T| v / rho)),
        },
        Variant::Sbm => PseudoMeasurement {
            theta: model.sparsity_seq().clone(),
            delta: (0..steps).map(|t| &state.w[t] + &state.eta[t]).collect(),
            sigma: MatSeq::Stationary(DMatrix::identity(p, p).map(|v: T| v / rho)),
        },
        Variant::Fopd => PseudoMeasurement {
            theta: MatSeq::Stationary(DMatrix::identity(n, n)),
            delta: (0..steps)
                .map(|t| {
                    &state.x[t] - (model.sparsity_at(t).transpose() * &state.w[t]).map(|v| v * rho)
                })
                .collect(),
            sigma: MatSeq::Stationary(DMatrix::identity(n, n).map(|v: T| v * rho)),
        },
    };
    Ok(spec)
}

/// Primal and dual residuals of a split state:
/// `||w - Omega x||_2` and `rho ||Omega^T (w - w_prev)||_2`.
pub fn residuals<T: Scalar>(state: &SplitState<T>, model: ModelRef<'_, T>, rho: T) -> (T, T) {
    let primal = stacked_norm(
        (0..model.steps()).map(|t| (&state.w[t] - model.sparsity_at(t) * &state.x[t]).norm_squared()),
    );
    let dual = match &state.prev_w {
        Some(prev) => {
            rho * stacked_norm((0..model.steps()).map(|t| {
                (model.sparsity_at(t).transpose() * (&state.w[t] - &prev[t])).norm_squared()
            }))
        }
        None => T::zero(),
    };
    (primal, dual)
}

fn stacked_norm<T: Scalar>(squares: impl Iterator<Item = T>) -> T {
    squares.fold(T::zero(), |acc, v| acc + v).sqrt()
}

fn stacked_diff_norm<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> T {
    stacked_norm(a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()))
}

/// Largest squared singular value across the distinct matrices of a sequence.
pub fn operator_norm_sq_seq<T: Scalar>(seq: &MatSeq<T>) -> T {
    let mats: Vec<&DMatrix<T>> = match seq {
        MatSeq::Stationary(m) => vec![m],
        MatSeq::PerStep(v) => v.iter().collect(),
    };
    let mut best = T::zero();
    for m in mats {
        best = best.max(crate::batch::operator_norm_sq_dense(m));
    }
    best
}

/// Stateful driver: owns the gain caches so repeated solves against the same
/// model (Monte-Carlo seeds, lambda sweeps) pay the covariance pass once.
pub struct Splitter<'a, T: Scalar> {
    model: ModelRef<'a, T>,
    config: SplittingConfig<T>,
    gamma: T,
    pseudo_cache: Option<Arc<FilterCache<T>>>,
    plain_cache: Option<Arc<FilterCache<T>>>,
    /// Covariance updates accumulated since the last drain.
    cov_updates_pending: usize,
    /// Factorizations reused by the per-iteration objective bookkeeping.
    quad: crate::model::QuadFormCache<T>,
}

impl<'a, T: Scalar> Splitter<'a, T> {
    pub fn new(model: ModelRef<'a, T>, config: SplittingConfig<T>) -> Result<Self> {
        config.validate()?;
        // The operator-norm power iteration only matters for FOPD's step size.
        let gamma = if config.variant == Variant::Fopd {
            config.resolved_gamma(|| operator_norm_sq_seq(model.sparsity_seq()))
        } else {
            T::one()
        };
        Ok(Self {
            model,
            config,
            gamma,
            pseudo_cache: None,
            plain_cache: None,
            cov_updates_pending: 0,
            quad: crate::model::QuadFormCache::new(),
        })
    }

    pub fn config(&self) -> &SplittingConfig<T> {
        &self.config
    }

    fn drain_cov_updates(&mut self) -> usize {
        std::mem::take(&mut self.cov_updates_pending)
    }

    /// Unregularized smoothing solution (trajectory initialization).
    pub fn plain_solve(&mut self, y: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
        match self.model {
            ModelRef::Linear(model) => {
                let out = ks_solve(model, None, y, self.plain_cache.as_ref())?;
                self.cov_updates_pending += out.cov_updates;
                self.plain_cache = Some(out.cache);
                Ok(out.means)
            }
            ModelRef::Nonlinear(model) => {
                let x0 = vec![DVector::zeros(model.state_dim); model.steps];
                let out = ieks_solve(
                    model,
                    &model.proc_noise,
                    &model.meas_noise,
                    None,
                    y,
                    &x0,
                    &self.config.ieks_config(),
                )?;
                self.cov_updates_pending += out.cov_updates;
                Ok(out.means)
            }
        }
    }

    /// Solve the x-subproblem for the given pseudo channel, warm-starting the
    /// nonlinear inner loop at `x_warm`.
    fn x_update(
        &mut self,
        pseudo: &PseudoMeasurement<T>,
        x_warm: &[DVector<T>],
        y: &[DVector<T>],
    ) -> Result<Vec<DVector<T>>> {
        match self.model {
            ModelRef::Linear(model) => {
                let out = ks_solve(model, Some(pseudo), y, self.pseudo_cache.as_ref())?;
                self.cov_updates_pending += out.cov_updates;
                self.pseudo_cache = Some(out.cache);
                Ok(out.means)
            }
            ModelRef::Nonlinear(model) => {
                let out = ieks_solve(
                    model,
                    &model.proc_noise,
                    &model.meas_noise,
                    Some(pseudo),
                    y,
                    x_warm,
                    &self.config.ieks_config(),
                )?;
                self.cov_updates_pending += out.cov_updates;
                Ok(out.means)
            }
        }
    }

    /// One ADMM iteration: smoother x-update, soft-threshold w-update, dual
    /// ascent on eta.
    pub fn admm_step(&mut self, state: &SplitState<T>, y: &[DVector<T>]) -> Result<SplitState<T>> {
        let rho = self.config.rho;
        let kappa = self.config.lambda / rho;
        let pseudo = pseudo_spec_for(Variant::Admm, state, &self.config, self.model)?;
        let x = self.x_update(&pseudo, &state.x, y)?;
        let steps = self.model.steps();
        let mut w = Vec::with_capacity(steps);
        let mut eta = Vec::with_capacity(steps);
        for t in 0..steps {
            let ox = self.model.sparsity_at(t) * &x[t];
            let wt = soft_threshold(&(&ox - &state.eta[t].map(|e| e / rho)), kappa);
            let et = &state.eta[t] + (&wt - &ox).map(|v| v * rho);
            w.push(wt);
            eta.push(et);
        }
        Ok(self.assemble(state, x, w, eta, None))
    }

    /// One PRS iteration: the dual moves a half step before and after the
    /// w-update, scaled by `alpha`.
    pub fn prs_step(&mut self, state: &SplitState<T>, y: &[DVector<T>]) -> Result<SplitState<T>> {
        let rho = self.config.rho;
        let alpha_rho = self.config.alpha * rho;
        let kappa = self.config.lambda / rho;
        let pseudo = pseudo_spec_for(Variant::Prs, state, &self.config, self.model)?;
        let x = self.x_update(&pseudo, &state.x, y)?;
        let steps = self.model.steps();
        let mut w = Vec::with_capacity(steps);
        let mut eta = Vec::with_capacity(steps);
        for t in 0..steps {
            let ox = self.model.sparsity_at(t) * &x[t];
            let half = &state.eta[t] + (&state.w[t] - &ox).map(|v| v * alpha_rho);
            let wt = soft_threshold(&(&ox - &half.map(|e| e / rho)), kappa);
            let et = &half + (&wt - &ox).map(|v| v * alpha_rho);
            w.push(wt);
            eta.push(et);
        }
        Ok(self.assemble(state, x, w, eta, None))
    }

    /// One SBM iteration: `M` inner x/w alternations with the scaled dual
    /// held fixed, then a unit dual step.
    pub fn sbm_step(&mut self, state: &SplitState<T>, y: &[DVector<T>]) -> Result<SplitState<T>> {
        let rho = self.config.rho;
        let kappa = self.config.lambda / rho;
        let steps = self.model.steps();
        let mut inner = state.clone();
        for _ in 0..self.config.sbm_inner {
            let pseudo = pseudo_spec_for(Variant::Sbm, &inner, &self.config, self.model)?;
            inner.x = self.x_update(&pseudo, &inner.x, y)?;
            for t in 0..steps {
                let ox = self.model.sparsity_at(t) * &inner.x[t];
                inner.w[t] = soft_threshold(&(&ox - &inner.eta[t]), kappa);
            }
        }
        let mut eta = Vec::with_capacity(steps);
        for t in 0..steps {
            let ox = self.model.sparsity_at(t) * &inner.x[t];
            eta.push(&inner.eta[t] + (&inner.w[t] - &ox));
        }
        Ok(self.assemble(state, inner.x, inner.w, eta, None))
    }

    /// One FOPD iteration: dual clamp step, proximal x-update through the
    /// smoother, extrapolation.
    pub fn fopd_step(&mut self, state: &SplitState<T>, y: &[DVector<T>]) -> Result<SplitState<T>> {
        let lambda = self.config.lambda;
        let gamma = self.gamma;
        let tau = self.config.resolved_tau();
        let steps = self.model.steps();
        let x_hat = state.x_hat.as_ref().unwrap_or(&state.x);
        let mut w = Vec::with_capacity(steps);
        for t in 0..steps {
            let v = &state.w[t] + (self.model.sparsity_at(t) * &x_hat[t]).map(|e| e * gamma);
            w.push(v.map(|e| e.min(lambda).max(-lambda)));
        }
        let mut staged = state.clone();
        staged.w = w;
        let pseudo = pseudo_spec_for(Variant::Fopd, &staged, &self.config, self.model)?;
        let x = self.x_update(&pseudo, &state.x, y)?;
        let new_hat: Vec<DVector<T>> = x
            .iter()
            .zip(&state.x)
            .map(|(new, old)| new + (new - old).map(|v| v * tau))
            .collect();

        // FOPD's w is the regularizer's dual; step norms replace the
        // constraint-gap residuals.
        let primal = stacked_diff_norm(&x, &state.x);
        let dual = stacked_diff_norm(&staged.w, &state.w);
        let mut next = SplitState {
            x,
            w: staged.w,
            eta: state.eta.clone(),
            x_hat: Some(new_hat),
            prev_w: Some(state.w.clone()),
            iteration: state.iteration + 1,
            primal_residual: primal,
            dual_residual: dual,
        };
        next.prev_w = Some(state.w.clone());
        Ok(next)
    }

    fn assemble(
        &self,
        prev: &SplitState<T>,
        x: Vec<DVector<T>>,
        w: Vec<DVector<T>>,
        eta: Vec<DVector<T>>,
        x_hat: Option<Vec<DVector<T>>>,
    ) -> SplitState<T> {
        let mut next = SplitState {
            x,
            w,
            eta,
            x_hat,
            prev_w: Some(prev.w.clone()),
            iteration: prev.iteration + 1,
            primal_residual: T::zero(),
            dual_residual: T::zero(),
        };
        let (primal, dual) = residuals(&next, self.model, self.config.rho);
        next.primal_residual = primal;
        next.dual_residual = dual;
        next
    }

    /// Dispatch one iteration of the configured variant.
    pub fn step(&mut self, state: &SplitState<T>, y: &[DVector<T>]) -> Result<SplitState<T>> {
        match self.config.variant {
            Variant::Admm => self.admm_step(state, y),
            Variant::Prs => self.prs_step(state, y),
            Variant::Sbm => self.sbm_step(state, y),
            Variant::Fopd => self.fopd_step(state, y),
        }
    }

    /// Full solve: initialize (plain smoother solution unless `x0` is given,
    /// zeros if that fails), iterate until both residuals pass their
    /// tolerances or the iteration budget runs out.
    pub fn run(&mut self, y: &[DVector<T>], x0: Option<&[DVector<T>]>) -> Result<Solution<T>> {
        let steps = self.model.steps();
        if y.len() != steps {
            return Err(Error::Dimension(format!(
                "need {steps} measurements, got {}",
                y.len()
            )));
        }
        let started = Instant::now();
        let x_init = match x0 {
            Some(x) => x.to_vec(),
            None => self
                .plain_solve(y)
                .unwrap_or_else(|_| vec![DVector::zeros(self.model.state_dim()); steps]),
        };
        let init_cov_updates = self.drain_cov_updates();

        let mut state = SplitState::from_trajectory(self.model, x_init);
        if self.config.variant == Variant::Fopd {
            // FOPD's w lives in the dual ball |w| <= lambda; start at zero.
            let p = self.model.sparsity_dim();
            state.w = vec![DVector::zeros(p); steps];
            state.x_hat = Some(state.x.clone());
        }

        let mut history = Vec::new();
        let mut status = SolveStatus::MaxIterations;
        for k in 1..=self.config.max_iterations {
            let next = match self.step(&state, y) {
                Ok(next) => next,
                Err(_) => {
                    status = SolveStatus::Diverged;
                    break;
                }
            };
            state = next;
            if !state.finite() {
                status = SolveStatus::Diverged;
                break;
            }
            history.push(self.record(k, &state, y, started)?);
            if state.primal_residual <= self.config.primal_tol
                && state.dual_residual <= self.config.dual_tol
            {
                status = SolveStatus::Converged;
                break;
            }
            if self.config.adaptive_rho {
                self.rebalance_rho(&mut state);
            }
        }
        Ok(Solution {
            x: state.x.clone(),
            state,
            history,
            status,
            init_cov_updates,
        })
    }

    fn record(
        &mut self,
        k: usize,
        state: &SplitState<T>,
        y: &[DVector<T>],
        started: Instant,
    ) -> Result<IterationRecord<T>> {
        let theta1 = self.smoothing_cost(y, &state.x)?;
        let lambda = self.config.lambda;
        let objective = theta1 + lambda * crate::model::sparsity_l1(&self.model, &state.x);
        let aug = self.lagrangian_terms(theta1, state);
        Ok(IterationRecord {
            k,
            objective,
            aug_lagrangian: aug,
            primal_residual: state.primal_residual,
            dual_residual: state.dual_residual,
            wall_time_s: started.elapsed().as_secs_f64(),
            cov_updates: self.drain_cov_updates(),
        })
    }

    /// Unregularized smoothing cost, reusing this run's covariance factors.
    fn smoothing_cost(&mut self, y: &[DVector<T>], x: &[DVector<T>]) -> Result<T> {
        if x.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(Error::NonFiniteTrajectory);
        }
        let half = T::from_config(0.5);
        let mut cost = T::zero();
        for t in 0..self.model.steps() {
            let resid = &y[t] - StateSpace::measurement(&self.model, t, &x[t]);
            cost += half * self.quad.quad_form(StateSpace::meas_noise(&self.model, t), &resid)?;
        }
        for t in 1..self.model.steps() {
            let resid = &x[t] - StateSpace::dynamics(&self.model, t, &x[t - 1]);
            cost += half * self.quad.quad_form(StateSpace::proc_noise(&self.model, t), &resid)?;
        }
        let resid = &x[0] - StateSpace::prior_mean(&self.model);
        cost += half * self.quad.quad_form(StateSpace::prior_cov(&self.model), &resid)?;
        Ok(cost)
    }

    fn lagrangian_terms(&self, theta1: T, state: &SplitState<T>) -> T {
        let rho = self.config.rho;
        let lambda = self.config.lambda;
        if self.config.variant == Variant::Fopd {
            return theta1 + lambda * crate::model::sparsity_l1(&self.model, &state.x);
        }
        let half = T::from_config(0.5);
        let mut value = theta1;
        for t in 0..self.model.steps() {
            let gap = &state.w[t] - self.model.sparsity_at(t) * &state.x[t];
            // SBM carries the scaled dual eta / rho.
            let eta_scale = if self.config.variant == Variant::Sbm {
                rho
            } else {
                T::one()
            };
            value += lambda * state.w[t].iter().fold(T::zero(), |a, e| a + e.abs());
            value += eta_scale * state.eta[t].dot(&gap) + half * rho * gap.norm_squared();
        }
        value
    }

    /// Regularized objective at a trajectory.
    pub fn objective(&self, y: &[DVector<T>], x: &[DVector<T>]) -> Result<T> {
        evaluate_objective(&self.model, y, x, self.config.lambda)
    }

    /// Augmented Lagrangian of the current state (objective itself for FOPD,
    /// whose iteration carries no multiplier estimate).
    pub fn aug_lagrangian(&self, y: &[DVector<T>], state: &SplitState<T>) -> Result<T> {
        let theta1 = evaluate_objective(&self.model, y, &state.x, T::zero())?;
        Ok(self.lagrangian_terms(theta1, state))
    }

    fn rebalance_rho(&mut self, state: &mut SplitState<T>) {
        if self.config.variant == Variant::Fopd {
            return;
        }
        let ten = T::from_config(10.0);
        let two = T::from_config(2.0);
        let (p, d) = (state.primal_residual, state.dual_residual);
        if p > ten * d {
            self.config.rho *= two;
            self.pseudo_cache = None;
        } else if d > ten * p {
            self.config.rho /= two;
            self.pseudo_cache = None;
        }
    }
}

/// One-shot convenience wrapper around [`Splitter::run`].
pub fn run<T: Scalar>(
    model: ModelRef<'_, T>,
    y: &[DVector<T>],
    config: &SplittingConfig<T>,
    x0: Option<&[DVector<T>]>,
) -> Result<Solution<T>> {
    Splitter::new(model, config.clone())?.run(y, x0)
}
