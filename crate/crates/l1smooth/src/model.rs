//! State-space model descriptions and the regularized estimation objective.
//!
//! Time indexing is zero-based throughout: a model with `steps = T` has states
//! `x_0 .. x_{T-1}`. Transition and process-noise matrices describe the move
//! *into* step `t` and are defined for `t in 1..T`; measurement, measurement
//! noise, and sparsity-operator matrices are defined for `t in 0..T`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A per-timestep matrix sequence, stored either as a single stationary matrix
/// or as one matrix per applicable timestep.
#[derive(Clone, Debug)]
pub enum MatSeq<T: Scalar> {
    Stationary(DMatrix<T>),
    PerStep(Vec<DMatrix<T>>),
}

impl<T: Scalar> MatSeq<T> {
    /// Matrix for sequence index `idx` (caller handles the time convention).
    pub fn at(&self, idx: usize) -> &DMatrix<T> {
        match self {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[idx],
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, MatSeq::Stationary(_))
    }

    /// First matrix of the sequence; shape reference for validation.
    pub fn first(&self) -> Option<&DMatrix<T>> {
        match self {
            MatSeq::Stationary(m) => Some(m),
            MatSeq::PerStep(v) => v.first(),
        }
    }

    /// Number of stored matrices a per-step sequence must have.
    fn len_matches(&self, expected: usize) -> bool {
        match self {
            MatSeq::Stationary(_) => true,
            MatSeq::PerStep(v) => v.len() == expected,
        }
    }

    fn iter_distinct(&self) -> impl Iterator<Item = &DMatrix<T>> {
        match self {
            MatSeq::Stationary(m) => std::slice::from_ref(m).iter(),
            MatSeq::PerStep(v) => v.as_slice().iter(),
        }
    }
}

impl<T: Scalar> From<DMatrix<T>> for MatSeq<T> {
    fn from(m: DMatrix<T>) -> Self {
        MatSeq::Stationary(m)
    }
}

impl<T: Scalar> From<Vec<DMatrix<T>>> for MatSeq<T> {
    fn from(v: Vec<DMatrix<T>>) -> Self {
        MatSeq::PerStep(v)
    }
}

/// Linear Gaussian state-space model with a sparsity operator.
///
/// State:       `x_t = A_t x_{t-1} + q_t`,  `q_t ~ N(0, Q_t)`
/// Observation: `y_t = H_t x_t + r_t`,      `r_t ~ N(0, R_t)`
/// Prior:       `x_0 ~ N(m1, P1)`
///
/// The regularizer acts on `Omega_t x_t`.
#[derive(Clone, Debug)]
pub struct LinearModel<T: Scalar> {
    pub steps: usize,
    /// Transition matrices `A_t`; per-step storage holds `steps - 1` entries.
    pub trans: MatSeq<T>,
    /// Measurement matrices `H_t`; per-step storage holds `steps` entries.
    pub meas: MatSeq<T>,
    /// Process noise `Q_t`; indexed like `trans`.
    pub proc_noise: MatSeq<T>,
    /// Measurement noise `R_t`; indexed like `meas`.
    pub meas_noise: MatSeq<T>,
    /// Sparsity operators `Omega_t`; indexed like `meas`.
    pub sparsity: MatSeq<T>,
    pub prior_mean: DVector<T>,
    pub prior_cov: DMatrix<T>,
}

impl<T: Scalar> LinearModel<T> {
    /// Time-invariant model from single matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn stationary(
        steps: usize,
        trans: DMatrix<T>,
        meas: DMatrix<T>,
        proc_noise: DMatrix<T>,
        meas_noise: DMatrix<T>,
        sparsity: DMatrix<T>,
        prior_mean: DVector<T>,
        prior_cov: DMatrix<T>,
    ) -> Self {
        Self {
            steps,
            trans: trans.into(),
            meas: meas.into(),
            proc_noise: proc_noise.into(),
            meas_noise: meas_noise.into(),
            sparsity: sparsity.into(),
            prior_mean,
            prior_cov,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn meas_dim(&self) -> usize {
        self.meas.first().map_or(0, |m| m.nrows())
    }

    pub fn sparsity_dim(&self) -> usize {
        self.sparsity.first().map_or(0, |m| m.nrows())
    }

    /// Transition into step `t` (valid for `t in 1..steps`).
    pub fn trans_at(&self, t: usize) -> &DMatrix<T> {
        debug_assert!(t >= 1);
        match &self.trans {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[t - 1],
        }
    }

    /// Process noise for the transition into step `t` (valid for `t in 1..steps`).
    pub fn proc_at(&self, t: usize) -> &DMatrix<T> {
        debug_assert!(t >= 1);
        match &self.proc_noise {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[t - 1],
        }
    }

    pub fn meas_at(&self, t: usize) -> &DMatrix<T> {
        self.meas.at(t)
    }

    pub fn meas_noise_at(&self, t: usize) -> &DMatrix<T> {
        self.meas_noise.at(t)
    }

    pub fn sparsity_at(&self, t: usize) -> &DMatrix<T> {
        self.sparsity.at(t)
    }

    /// True when every per-timestep matrix is time-invariant.
    pub fn is_stationary(&self) -> bool {
        self.trans.is_stationary()
            && self.meas.is_stationary()
            && self.proc_noise.is_stationary()
            && self.meas_noise.is_stationary()
            && self.sparsity.is_stationary()
    }

    /// Structural and numerical validity report; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        let n = self.state_dim();
        if self.steps == 0 {
            report.push("model must have at least one timestep".to_string());
            return report;
        }
        if n == 0 {
            report.push("state dimension must be positive".to_string());
            return report;
        }

        check_square(&mut report, &self.prior_cov, n, "P1");
        check_spd(&mut report, &self.prior_cov, "P1");

        if !self.trans.len_matches(self.steps.saturating_sub(1)) {
            report.push("A_t sequence must have steps-1 entries".to_string());
        }
        if !self.proc_noise.len_matches(self.steps.saturating_sub(1)) {
            report.push("Q_t sequence must have steps-1 entries".to_string());
        }
        for seq in [&self.meas, &self.meas_noise, &self.sparsity] {
            if !seq.len_matches(self.steps) {
                report.push("per-step sequence must have steps entries".to_string());
            }
        }

        for a in self.trans.iter_distinct() {
            check_square(&mut report, a, n, "A_t");
        }
        for q in self.proc_noise.iter_distinct() {
            check_square(&mut report, q, n, "Q_t");
            check_spd(&mut report, q, "Q_t");
        }
        let n_y = self.meas_dim();
        for h in self.meas.iter_distinct() {
            if h.nrows() != n_y || h.ncols() != n {
                report.push(format!(
                    "H_t must be {}x{}, got {}x{}",
                    n_y,
                    n,
                    h.nrows(),
                    h.ncols()
                ));
            }
        }
        for r in self.meas_noise.iter_distinct() {
            check_square(&mut report, r, n_y, "R_t");
            check_spd(&mut report, r, "R_t");
        }
        let p_rows = self.sparsity_dim();
        for omega in self.sparsity.iter_distinct() {
            if omega.nrows() != p_rows || omega.ncols() != n {
                report.push(format!(
                    "Omega_t must be {}x{} for all t, got {}x{}",
                    p_rows,
                    n,
                    omega.nrows(),
                    omega.ncols()
                ));
            }
        }
        report
    }
}

/// Dynamics or measurement function evaluated at `(t, x)`.
pub type StateFn<T> = Arc<dyn Fn(usize, &DVector<T>) -> DVector<T> + Send + Sync>;
/// Jacobian of a [`StateFn`] evaluated at `(t, x)`.
pub type JacobianFn<T> = Arc<dyn Fn(usize, &DVector<T>) -> DMatrix<T> + Send + Sync>;

/// Nonlinear Gaussian state-space model with user-supplied Jacobians.
///
/// `dynamics(t, x)` maps `x_{t-1}` to the predicted `x_t` (valid `t in 1..steps`);
/// `measurement(t, x)` maps `x_t` to the predicted observation.
#[derive(Clone)]
pub struct NonlinearModel<T: Scalar> {
    pub steps: usize,
    pub state_dim: usize,
    pub meas_dim: usize,
    pub dynamics: StateFn<T>,
    pub dynamics_jacobian: JacobianFn<T>,
    pub measurement: StateFn<T>,
    pub measurement_jacobian: JacobianFn<T>,
    pub proc_noise: MatSeq<T>,
    pub meas_noise: MatSeq<T>,
    pub sparsity: MatSeq<T>,
    pub prior_mean: DVector<T>,
    pub prior_cov: DMatrix<T>,
}

impl<T: Scalar> std::fmt::Debug for NonlinearModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("steps", &self.steps)
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> NonlinearModel<T> {
    pub fn sparsity_dim(&self) -> usize {
        self.sparsity.first().map_or(0, |m| m.nrows())
    }

    pub fn proc_at(&self, t: usize) -> &DMatrix<T> {
        debug_assert!(t >= 1);
        match &self.proc_noise {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[t - 1],
        }
    }

    /// Structural validity report: covariances, dimensions, and the shapes the
    /// callables return when probed at the prior mean.
    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        let n = self.state_dim;
        if self.prior_mean.len() != n {
            report.push("prior mean length must equal state_dim".to_string());
            return report;
        }
        check_square(&mut report, &self.prior_cov, n, "P1");
        check_spd(&mut report, &self.prior_cov, "P1");
        for q in self.proc_noise.iter_distinct() {
            check_square(&mut report, q, n, "Q_t");
            check_spd(&mut report, q, "Q_t");
        }
        for r in self.meas_noise.iter_distinct() {
            check_square(&mut report, r, self.meas_dim, "R_t");
            check_spd(&mut report, r, "R_t");
        }
        for omega in self.sparsity.iter_distinct() {
            if omega.ncols() != n {
                report.push(format!(
                    "Omega_t must have {} columns, got {}",
                    n,
                    omega.ncols()
                ));
            }
        }

        // Probe the callables at the prior mean.
        let x = &self.prior_mean;
        let t_probe = if self.steps > 1 { 1 } else { 0 };
        if t_probe >= 1 {
            let ax = (self.dynamics)(t_probe, x);
            if ax.len() != n {
                report.push(format!("a_t must return length {}, got {}", n, ax.len()));
            }
            let ja = (self.dynamics_jacobian)(t_probe, x);
            if ja.nrows() != n || ja.ncols() != n {
                report.push(format!(
                    "Jacobian dimension mismatch: J_a must be {}x{}, got {}x{}",
                    n,
                    n,
                    ja.nrows(),
                    ja.ncols()
                ));
            }
        }
        let hx = (self.measurement)(0, x);
        if hx.len() != self.meas_dim {
            report.push(format!(
                "h_t must return length {}, got {}",
                self.meas_dim,
                hx.len()
            ));
        }
        let jh = (self.measurement_jacobian)(0, x);
        if jh.nrows() != self.meas_dim || jh.ncols() != n {
            report.push(format!(
                "Jacobian dimension mismatch: J_h must be {}x{}, got {}x{}",
                self.meas_dim,
                n,
                jh.nrows(),
                jh.ncols()
            ));
        }
        report
    }

    /// Validation-mode check: user Jacobians against central finite differences
    /// at the given probe states, relative tolerance `rtol` (per the default
    /// validation mode, 1e-4). Expensive; not run by the solvers.
    pub fn validate_jacobians(&self, probes: &[DVector<T>], rtol: T) -> Vec<String> {
        let mut report = Vec::new();
        for x in probes {
            if self.steps > 1 {
                let ja = (self.dynamics_jacobian)(1, x);
                let fd = finite_difference_jacobian(|v| (self.dynamics)(1, v), x);
                if relative_matrix_gap(&ja, &fd) > rtol {
                    report.push("J_a_t does not match finite differences".to_string());
                }
            }
            let jh = (self.measurement_jacobian)(0, x);
            let fd = finite_difference_jacobian(|v| (self.measurement)(0, v), x);
            if relative_matrix_gap(&jh, &fd) > rtol {
                report.push("J_h_t does not match finite differences".to_string());
            }
        }
        report
    }
}

/// Central finite-difference Jacobian with step `1e-6 * (1 + |x_i|)`.
pub fn finite_difference_jacobian<T: Scalar>(
    f: impl Fn(&DVector<T>) -> DVector<T>,
    x: &DVector<T>,
) -> DMatrix<T> {
    let n = x.len();
    let f0 = f(x);
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    let base = T::from_config(1e-6);
    for i in 0..n {
        let h = base * (T::one() + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        let two_h = h + h;
        for r in 0..m {
            jac[(r, i)] = (fp[r] - fm[r]) / two_h;
        }
    }
    jac
}

fn relative_matrix_gap<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    if a.shape() != b.shape() {
        return T::max_value().unwrap_or_else(T::one);
    }
    let diff = (a - b).norm();
    let scale = T::one() + a.norm().max(b.norm());
    diff / scale
}

fn check_square<T: Scalar>(report: &mut Vec<String>, m: &DMatrix<T>, n: usize, name: &str) {
    if m.nrows() != n || m.ncols() != n {
        report.push(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
    }
}

fn check_spd<T: Scalar>(report: &mut Vec<String>, m: &DMatrix<T>, name: &str) {
    if !is_symmetric(m, T::from_config(1e-10)) {
        report.push(format!("{name} not symmetric"));
    } else if !is_positive_definite(m) {
        report.push(format!("{name} not positive definite"));
    }
}

/// Symmetry check: `max |M - M^T| <= tol * (1 + max |M|)`.
pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>, tol: T) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let mut max_abs = T::zero();
    let mut max_gap = T::zero();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            max_abs = max_abs.max(m[(i, j)].abs());
            max_gap = max_gap.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    max_gap <= tol * (T::one() + max_abs)
}

/// Positive-definiteness via a Cholesky factorization attempt.
pub fn is_positive_definite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.nrows() == m.ncols() && m.clone().cholesky().is_some()
}

/// `(M + M^T) / 2`; applied after covariance updates.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::from_config(0.5);
    (m + m.transpose()).map(|v| v * half)
}

/// Common access to linear and nonlinear state-space models.
pub trait StateSpace<T: Scalar> {
    fn steps(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;
    fn sparsity_dim(&self) -> usize;
    /// `a_t(x)` for `t in 1..steps` (maps `x_{t-1}` to the predicted `x_t`).
    fn dynamics(&self, t: usize, x: &DVector<T>) -> DVector<T>;
    fn dynamics_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T>;
    /// `h_t(x)` for `t in 0..steps`.
    fn measurement(&self, t: usize, x: &DVector<T>) -> DVector<T>;
    fn measurement_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T>;
    fn proc_noise(&self, t: usize) -> &DMatrix<T>;
    fn meas_noise(&self, t: usize) -> &DMatrix<T>;
    fn sparsity(&self, t: usize) -> &DMatrix<T>;
    fn prior_mean(&self) -> &DVector<T>;
    fn prior_cov(&self) -> &DMatrix<T>;
    fn is_linear(&self) -> bool {
        false
    }
}

impl<T: Scalar> StateSpace<T> for LinearModel<T> {
    fn steps(&self) -> usize {
        self.steps
    }
    fn state_dim(&self) -> usize {
        self.state_dim()
    }
    fn meas_dim(&self) -> usize {
        self.meas_dim()
    }
    fn sparsity_dim(&self) -> usize {
        self.sparsity_dim()
    }
    fn dynamics(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        self.trans_at(t) * x
    }
    fn dynamics_jacobian(&self, t: usize, _x: &DVector<T>) -> DMatrix<T> {
        self.trans_at(t).clone()
    }
    fn measurement(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        self.meas_at(t) * x
    }
    fn measurement_jacobian(&self, t: usize, _x: &DVector<T>) -> DMatrix<T> {
        self.meas_at(t).clone()
    }
    fn proc_noise(&self, t: usize) -> &DMatrix<T> {
        self.proc_at(t)
    }
    fn meas_noise(&self, t: usize) -> &DMatrix<T> {
        self.meas_noise_at(t)
    }
    fn sparsity(&self, t: usize) -> &DMatrix<T> {
        self.sparsity_at(t)
    }
    fn prior_mean(&self) -> &DVector<T> {
        &self.prior_mean
    }
    fn prior_cov(&self) -> &DMatrix<T> {
        &self.prior_cov
    }
    fn is_linear(&self) -> bool {
        true
    }
}

impl<T: Scalar> StateSpace<T> for NonlinearModel<T> {
    fn steps(&self) -> usize {
        self.steps
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn meas_dim(&self) -> usize {
        self.meas_dim
    }
    fn sparsity_dim(&self) -> usize {
        self.sparsity_dim()
    }
    fn dynamics(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        (self.dynamics)(t, x)
    }
    fn dynamics_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T> {
        (self.dynamics_jacobian)(t, x)
    }
    fn measurement(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        (self.measurement)(t, x)
    }
    fn measurement_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T> {
        (self.measurement_jacobian)(t, x)
    }
    fn proc_noise(&self, t: usize) -> &DMatrix<T> {
        self.proc_at(t)
    }
    fn meas_noise(&self, t: usize) -> &DMatrix<T> {
        self.meas_noise.at(t)
    }
    fn sparsity(&self, t: usize) -> &DMatrix<T> {
        self.sparsity.at(t)
    }
    fn prior_mean(&self) -> &DVector<T> {
        &self.prior_mean
    }
    fn prior_cov(&self) -> &DMatrix<T> {
        &self.prior_cov
    }
}

/// Either model kind, borrowed; lets the splitting drivers stay monomorphic.
#[derive(Clone, Copy, Debug)]
pub enum ModelRef<'a, T: Scalar> {
    Linear(&'a LinearModel<T>),
    Nonlinear(&'a NonlinearModel<T>),
}

impl<'a, T: Scalar> ModelRef<'a, T> {
    pub fn steps(&self) -> usize {
        match self {
            ModelRef::Linear(m) => m.steps,
            ModelRef::Nonlinear(m) => m.steps,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelRef::Linear(m) => m.state_dim(),
            ModelRef::Nonlinear(m) => m.state_dim,
        }
    }

    pub fn sparsity_dim(&self) -> usize {
        match self {
            ModelRef::Linear(m) => m.sparsity_dim(),
            ModelRef::Nonlinear(m) => m.sparsity_dim(),
        }
    }

    pub fn sparsity_at(&self, t: usize) -> &DMatrix<T> {
        match self {
            ModelRef::Linear(m) => m.sparsity_at(t),
            ModelRef::Nonlinear(m) => m.sparsity.at(t),
        }
    }

    pub fn sparsity_seq(&self) -> &MatSeq<T> {
        match self {
            ModelRef::Linear(m) => &m.sparsity,
            ModelRef::Nonlinear(m) => &m.sparsity,
        }
    }
}

impl<'a, T: Scalar> StateSpace<T> for ModelRef<'a, T> {
    fn steps(&self) -> usize {
        ModelRef::steps(self)
    }
    fn state_dim(&self) -> usize {
        ModelRef::state_dim(self)
    }
    fn meas_dim(&self) -> usize {
        match self {
            ModelRef::Linear(m) => m.meas_dim(),
            ModelRef::Nonlinear(m) => m.meas_dim,
        }
    }
    fn sparsity_dim(&self) -> usize {
        ModelRef::sparsity_dim(self)
    }
    fn dynamics(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        match self {
            ModelRef::Linear(m) => StateSpace::dynamics(*m, t, x),
            ModelRef::Nonlinear(m) => StateSpace::dynamics(*m, t, x),
        }
    }
    fn dynamics_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T> {
        match self {
            ModelRef::Linear(m) => StateSpace::dynamics_jacobian(*m, t, x),
            ModelRef::Nonlinear(m) => StateSpace::dynamics_jacobian(*m, t, x),
        }
    }
    fn measurement(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        match self {
            ModelRef::Linear(m) => StateSpace::measurement(*m, t, x),
            ModelRef::Nonlinear(m) => StateSpace::measurement(*m, t, x),
        }
    }
    fn measurement_jacobian(&self, t: usize, x: &DVector<T>) -> DMatrix<T> {
        match self {
            ModelRef::Linear(m) => StateSpace::measurement_jacobian(*m, t, x),
            ModelRef::Nonlinear(m) => StateSpace::measurement_jacobian(*m, t, x),
        }
    }
    fn proc_noise(&self, t: usize) -> &DMatrix<T> {
        match self {
            ModelRef::Linear(m) => m.proc_at(t),
            ModelRef::Nonlinear(m) => m.proc_at(t),
        }
    }
    fn meas_noise(&self, t: usize) -> &DMatrix<T> {
        match self {
            ModelRef::Linear(m) => m.meas_noise_at(t),
            ModelRef::Nonlinear(m) => m.meas_noise.at(t),
        }
    }
    fn sparsity(&self, t: usize) -> &DMatrix<T> {
        self.sparsity_at(t)
    }
    fn prior_mean(&self) -> &DVector<T> {
        match self {
            ModelRef::Linear(m) => &m.prior_mean,
            ModelRef::Nonlinear(m) => &m.prior_mean,
        }
    }
    fn prior_cov(&self) -> &DMatrix<T> {
        match self {
            ModelRef::Linear(m) => &m.prior_cov,
            ModelRef::Nonlinear(m) => &m.prior_cov,
        }
    }
    fn is_linear(&self) -> bool {
        matches!(self, ModelRef::Linear(_))
    }
}

/// Pseudo-measurement channel: an artificial observation
/// `Delta_t = Theta_t x_t + sigma_t` with covariance `Sigma_t`, processed by
/// the smoother after the real measurement at each step.
#[derive(Clone, Debug)]
pub struct PseudoMeasurement<T: Scalar> {
    pub theta: MatSeq<T>,
    /// Per-step pseudo-observations (length `steps`).
    pub delta: Vec<DVector<T>>,
    pub sigma: MatSeq<T>,
}

impl<T: Scalar> PseudoMeasurement<T> {
    pub fn dim(&self) -> usize {
        self.theta.first().map_or(0, |m| m.nrows())
    }

    /// Channel validity against a model shape: dimensions and `Sigma_t` PD.
    pub fn validate(&self, steps: usize, state_dim: usize) -> Result<()> {
        let rows = self.dim();
        if self.delta.len() != steps {
            return Err(Error::Dimension(format!(
                "pseudo-measurement needs {steps} observations, got {}",
                self.delta.len()
            )));
        }
        for theta in self.theta.iter_distinct() {
            if theta.nrows() != rows || theta.ncols() != state_dim {
                return Err(Error::Dimension(format!(
                    "Theta_t must be {}x{}, got {}x{}",
                    rows,
                    state_dim,
                    theta.nrows(),
                    theta.ncols()
                )));
            }
        }
        for d in &self.delta {
            if d.len() != rows {
                return Err(Error::Dimension(format!(
                    "Delta_t must have length {rows}, got {}",
                    d.len()
                )));
            }
        }
        for sigma in self.sigma.iter_distinct() {
            if sigma.nrows() != rows || sigma.ncols() != rows {
                return Err(Error::Dimension(format!(
                    "Sigma_t must be {rows}x{rows}, got {}x{}",
                    sigma.nrows(),
                    sigma.ncols()
                )));
            }
            if !is_positive_definite(sigma) {
                return Err(Error::NotPositiveDefinite("Sigma_t".to_string()));
            }
        }
        Ok(())
    }
}

/// A linear model together with an optional pseudo-measurement channel; the
/// smoother processes the real and pseudo observations sequentially per step.
#[derive(Clone, Copy)]
pub struct AugmentedModel<'a, T: Scalar> {
    pub base: &'a LinearModel<T>,
    pub pseudo: Option<&'a PseudoMeasurement<T>>,
}

/// Attach a pseudo-measurement channel to a linear model, checking dimensions
/// and that every `Sigma_t` is positive definite.
pub fn augment_pseudo<'a, T: Scalar>(
    model: &'a LinearModel<T>,
    pseudo: &'a PseudoMeasurement<T>,
) -> Result<AugmentedModel<'a, T>> {
    pseudo.validate(model.steps, model.state_dim())?;
    Ok(AugmentedModel {
        base: model,
        pseudo: Some(pseudo),
    })
}

/// The regularized estimation objective
/// `1/2 sum ||y_t - h_t(x_t)||^2_{R^-1} + 1/2 sum ||x_t - a_t(x_{t-1})||^2_{Q^-1}
///  + 1/2 ||x_0 - m1||^2_{P1^-1} + lambda * sum ||Omega_t x_t||_1`.
pub fn evaluate_objective<T: Scalar, M: StateSpace<T>>(
    model: &M,
    y: &[DVector<T>],
    x: &[DVector<T>],
    lambda: T,
) -> Result<T> {
    if x.len() != model.steps() || y.len() != model.steps() {
        return Err(Error::Dimension(format!(
            "trajectory/measurement length must be {}, got {}/{}",
            model.steps(),
            x.len(),
            y.len()
        )));
    }
    if x.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
        return Err(Error::NonFiniteTrajectory);
    }
    let half = T::from_config(0.5);
    let mut cache = QuadFormCache::new();
    let mut cost = T::zero();
    // Data fidelity.
    for t in 0..model.steps() {
        let resid = &y[t] - model.measurement(t, &x[t]);
        cost += half * cache.quad_form(model.meas_noise(t), &resid)?;
    }
    // Dynamics.
    for t in 1..model.steps() {
        let resid = &x[t] - model.dynamics(t, &x[t - 1]);
        cost += half * cache.quad_form(model.proc_noise(t), &resid)?;
    }
    // Prior.
    let resid = &x[0] - model.prior_mean();
    cost += half * cache.quad_form(model.prior_cov(), &resid)?;
    // Regularizer.
    cost += lambda * sparsity_l1(model, x);
    Ok(cost)
}

/// `sum_t ||Omega_t x_t||_1`.
pub fn sparsity_l1<T: Scalar, M: StateSpace<T>>(model: &M, x: &[DVector<T>]) -> T {
    let mut total = T::zero();
    for t in 0..model.steps() {
        let v = model.sparsity(t) * &x[t];
        total += v.iter().fold(T::zero(), |acc, e| acc + e.abs());
    }
    total
}

/// `v^T M^-1 v` via a Cholesky solve.
pub fn weighted_square_norm<T: Scalar>(m: &DMatrix<T>, v: &DVector<T>) -> Result<T> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".to_string()))?;
    let solved = chol.solve(v);
    Ok(v.dot(&solved))
}

/// Memoizing weighted-norm evaluator: Cholesky factors are cached per matrix
/// storage address, so stationary sequences (which hand out the same matrix
/// every step) factor once per evaluation pass instead of once per step.
pub struct QuadFormCache<T: Scalar> {
    factors: std::collections::HashMap<usize, nalgebra::Cholesky<T, nalgebra::Dyn>>,
}

impl<T: Scalar> Default for QuadFormCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> QuadFormCache<T> {
    pub fn new() -> Self {
        Self {
            factors: std::collections::HashMap::new(),
        }
    }

    /// `v^T M^-1 v`, reusing the factorization of `M` within this cache's
    /// lifetime. Callers must not mutate matrices between calls.
    pub fn quad_form(&mut self, m: &DMatrix<T>, v: &DVector<T>) -> Result<T> {
        let key = m.as_ptr() as usize;
        if !self.factors.contains_key(&key) {
            let chol = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".to_string()))?;
            self.factors.insert(key, chol);
        }
        let chol = self.factors.get(&key).expect("just inserted");
        let solved = chol.solve(v);
        Ok(v.dot(&solved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::linear_tracking_model;

    fn scalar_model(omega: f64) -> LinearModel<f64> {
        LinearModel::stationary(
            1,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, omega),
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        )
    }

    #[test]
    fn tracking_model_is_valid() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 20).unwrap();
        assert!(model.validate().is_empty());
    }

    #[test]
    fn zero_measurement_noise_reported() {
        let mut model = scalar_model(1.0);
        model.meas_noise = DMatrix::from_element(1, 1, 0.0).into();
        let report = model.validate();
        assert!(report.iter().any(|v| v.contains("R_t not positive definite")), "{report:?}");
    }

    #[test]
    fn transposed_jacobian_reported() {
        let base = crate::presets::coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 5).unwrap();
        let mut model = base.clone();
        model.measurement_jacobian = Arc::new(move |_t, _x| DMatrix::<f64>::zeros(5, 2));
        let report = model.validate();
        assert!(
            report.iter().any(|v| v.contains("Jacobian dimension mismatch")),
            "{report:?}"
        );
        assert!(base.validate().is_empty());
    }

    #[test]
    fn objective_zero_on_self_consistent_noiseless_data() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 12).unwrap();
        let mut model = model;
        model.sparsity = DMatrix::zeros(2, 4).into();
        let mut x = vec![model.prior_mean.clone()];
        for t in 1..model.steps {
            let next = model.trans_at(t) * &x[t - 1];
            x.push(next);
        }
        let y: Vec<DVector<f64>> = (0..model.steps).map(|t| model.meas_at(t) * &x[t]).collect();
        let cost = evaluate_objective(&model, &y, &x, 3.0).unwrap();
        assert!(cost.abs() < 1e-12, "cost = {cost}");
    }

    #[test]
    fn objective_scalar_example() {
        // T=1, y=1, h=1, R=1, x=m1=0, P1=1, Omega=1, lambda=2: cost = 1/2.
        let model = scalar_model(1.0);
        let y = vec![DVector::from_element(1, 1.0)];
        let x = vec![DVector::from_element(1, 0.0)];
        let cost = evaluate_objective(&model, &y, &x, 2.0).unwrap();
        assert!((cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_non_finite_trajectory() {
        let model = scalar_model(1.0);
        let y = vec![DVector::from_element(1, 1.0)];
        let x = vec![DVector::from_element(1, f64::NAN)];
        assert!(matches!(
            evaluate_objective(&model, &y, &x, 0.0),
            Err(Error::NonFiniteTrajectory)
        ));
    }

    #[test]
    fn objective_additivity_in_lambda() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 8).unwrap();
        let (x, y) = crate::presets::simulate(&model, 7).unwrap();
        for lambda in [0.0, 0.3, 1.0, 4.5] {
            let with = evaluate_objective(&model, &y, &x, lambda).unwrap();
            let base = evaluate_objective(&model, &y, &x, 0.0).unwrap();
            let l1 = sparsity_l1(&model, &x);
            assert!((with - (base + lambda * l1)).abs() <= 1e-10 * (1.0 + with.abs()));
        }
    }

    #[test]
    fn pseudo_measurement_requires_pd_sigma() {
        let model = scalar_model(1.0);
        let pseudo = PseudoMeasurement {
            theta: DMatrix::from_element(1, 1, 1.0).into(),
            delta: vec![DVector::from_element(1, 0.0)],
            sigma: DMatrix::from_element(1, 1, 0.0).into(),
        };
        assert!(matches!(
            augment_pseudo(&model, &pseudo),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn fopd_style_pseudo_channel_is_valid() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 3).unwrap();
        let pseudo = PseudoMeasurement {
            theta: DMatrix::identity(4, 4).into(),
            delta: vec![DVector::zeros(4); 3],
            sigma: DMatrix::identity(4, 4).map(|v: f64| v * 2.0).into(),
        };
        assert!(augment_pseudo(&model, &pseudo).is_ok());
    }

    #[test]
    fn jacobian_validation_flags_wrong_derivative() {
        let mut model = crate::presets::coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 5).unwrap();
        let good = model.validate_jacobians(&[model.prior_mean.clone()], 1e-4);
        assert!(good.is_empty(), "{good:?}");
        model.measurement_jacobian = Arc::new(move |_t, _x| {
            DMatrix::from_row_slice(2, 5, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        });
        let bad = model.validate_jacobians(&[model.prior_mean.clone()], 1e-4);
        assert!(!bad.is_empty());
    }
}
