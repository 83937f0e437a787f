//! Kalman filter and RTS smoother with a two-stage measurement update (real
//! observation, then pseudo-measurement), gain precomputation, and the
//! iterated extended Kalman smoother for nonlinear models.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    symmetrize, AugmentedModel, LinearModel, MatSeq, PseudoMeasurement, StateSpace,
};
use crate::scalar::Scalar;

/// Filtered (and retained predicted) means and covariances per timestep.
///
/// `predicted_*[0]` holds the prior; `predicted_*[t]` for `t >= 1` the
/// one-step-ahead prediction used by the smoother's backward pass.
#[derive(Clone, Debug)]
pub struct GaussianTrajectory<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    pub predicted_means: Vec<DVector<T>>,
    pub predicted_covs: Vec<DMatrix<T>>,
}

/// Prediction step: `m⁻ = A m`, `P⁻ = A P Aᵀ + Q` (symmetrized).
pub fn kf_predict<T: Scalar>(
    m: &DVector<T>,
    p: &DMatrix<T>,
    a: &DMatrix<T>,
    q: &DMatrix<T>,
) -> (DVector<T>, DMatrix<T>) {
    let m_pred = a * m;
    let p_pred = symmetrize(&(a * p * a.transpose() + q));
    (m_pred, p_pred)
}

/// Measurement update with observation matrix `c`, noise `v`, observation `d`.
///
/// `S = C P⁻ Cᵀ + V`, `K = P⁻ Cᵀ S⁻¹`, `m = m⁻ + K (d - C m⁻)`,
/// `P = P⁻ - K S Kᵀ` (symmetrized). The innovation solve uses a Cholesky
/// factorization of `S`; failure reports a singular innovation covariance.
pub fn kf_update<T: Scalar>(
    m_pred: &DVector<T>,
    p_pred: &DMatrix<T>,
    c: &DMatrix<T>,
    v: &DMatrix<T>,
    d: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let (gain, s) = kf_gain(p_pred, c, v, 0)?;
    let m = m_pred + &gain * (d - c * m_pred);
    let p = symmetrize(&(p_pred - &gain * s * gain.transpose()));
    Ok((m, p))
}

/// Gain and innovation covariance for one update channel.
fn kf_gain<T: Scalar>(
    p_pred: &DMatrix<T>,
    c: &DMatrix<T>,
    v: &DMatrix<T>,
    step: usize,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let s = symmetrize(&(c * p_pred * c.transpose() + v));
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { step })?;
    // K = P⁻ Cᵀ S⁻¹, computed as (S⁻¹ C P⁻)ᵀ.
    let gain = chol.solve(&(c * p_pred)).transpose();
    Ok((gain, s))
}

/// RTS backward pass on a filtered trajectory.
///
/// `G_t = P_t A_{t+1}ᵀ (P⁻_{t+1})⁻¹`, `m_t^s = m_t + G_t (m^s_{t+1} - m⁻_{t+1})`,
/// `P_t^s = P_t + G_t (P^s_{t+1} - P⁻_{t+1}) G_tᵀ`, with the last step passed
/// through unchanged. `trans` follows the model convention (transition into
/// step `t`, so the gain at `t` uses `trans` index `t + 1`).
pub fn rts_backward<T: Scalar>(
    filtered: &GaussianTrajectory<T>,
    trans: &MatSeq<T>,
) -> Result<GaussianTrajectory<T>> {
    let steps = filtered.means.len();
    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    for t in (0..steps.saturating_sub(1)).rev() {
        let a_next = match trans {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[t],
        };
        let gain = smoother_gain(&filtered.covs[t], a_next, &filtered.predicted_covs[t + 1])?;
        let dm = &means[t + 1] - &filtered.predicted_means[t + 1];
        means[t] = &filtered.means[t] + &gain * dm;
        let dp = &covs[t + 1] - &filtered.predicted_covs[t + 1];
        covs[t] = symmetrize(&(&filtered.covs[t] + &gain * dp * gain.transpose()));
    }
    Ok(GaussianTrajectory {
        means,
        covs,
        predicted_means: filtered.predicted_means.clone(),
        predicted_covs: filtered.predicted_covs.clone(),
    })
}

fn smoother_gain<T: Scalar>(
    p_filt: &DMatrix<T>,
    a_next: &DMatrix<T>,
    p_pred_next: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let chol = p_pred_next
        .clone()
        .cholesky()
        .ok_or(Error::SingularPrediction { step: 0 })?;
    // G = P Aᵀ (P⁻)⁻¹ = ((P⁻)⁻¹ A Pᵀ)ᵀ with P symmetric.
    Ok(chol.solve(&(a_next * p_filt)).transpose())
}

/// Sequence of per-step matrices that may collapse to a steady value once the
/// underlying covariance recursion has converged (stationary models).
#[derive(Clone, Debug)]
struct SteadySeq<T: Scalar> {
    items: Vec<DMatrix<T>>,
    steady_from: Option<usize>,
}

impl<T: Scalar> SteadySeq<T> {
    fn new() -> Self {
        Self {
            items: Vec::new(),
            steady_from: None,
        }
    }

    fn at(&self, idx: usize) -> &DMatrix<T> {
        match self.steady_from {
            Some(s) if idx >= s => self.items.last().expect("steady sequence non-empty"),
            _ => &self.items[idx],
        }
    }
}

/// Precomputed filter/smoother gains for a fixed `(model, Theta, Sigma)` pair.
///
/// Gains do not depend on the observations or the splitting iterates, so one
/// covariance-only pass serves every subsequent mean solve. The fingerprint
/// records the matrices the gains were computed from; reuse with a different
/// model or pseudo channel is rejected as stale.
#[derive(Clone, Debug)]
pub struct FilterCache<T: Scalar> {
    fingerprint: u64,
    steps: usize,
    gain_y: SteadySeq<T>,
    gain_z: Option<SteadySeq<T>>,
    gain_smooth: SteadySeq<T>,
    /// Number of measurement-covariance updates performed while building.
    pub cov_updates: usize,
}

impl<T: Scalar> FilterCache<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn has_pseudo(&self) -> bool {
        self.gain_z.is_some()
    }
}

/// Internal affine view the filter core runs on: linear models and IEKS
/// linearizations share the recursion.
trait AffineView<T: Scalar> {
    fn steps(&self) -> usize;
    fn trans(&self, t: usize) -> &DMatrix<T>;
    fn trans_offset(&self, t: usize) -> Option<&DVector<T>>;
    fn meas(&self, t: usize) -> &DMatrix<T>;
    fn meas_offset(&self, t: usize) -> Option<&DVector<T>>;
    fn proc_noise(&self, t: usize) -> &DMatrix<T>;
    fn meas_noise(&self, t: usize) -> &DMatrix<T>;
    fn prior_mean(&self) -> &DVector<T>;
    fn prior_cov(&self) -> &DMatrix<T>;
    /// Whether the covariance recursion is time-invariant (allows steady-state
    /// gain collapse for long horizons).
    fn stationary(&self) -> bool;
    fn fingerprint_into(&self, h: &mut DefaultHasher);
}

impl<T: Scalar> AffineView<T> for LinearModel<T> {
    fn steps(&self) -> usize {
        self.steps
    }
    fn trans(&self, t: usize) -> &DMatrix<T> {
        self.trans_at(t)
    }
    fn trans_offset(&self, _t: usize) -> Option<&DVector<T>> {
        None
    }
    fn meas(&self, t: usize) -> &DMatrix<T> {
        self.meas_at(t)
    }
    fn meas_offset(&self, _t: usize) -> Option<&DVector<T>> {
        None
    }
    fn proc_noise(&self, t: usize) -> &DMatrix<T> {
        self.proc_at(t)
    }
    fn meas_noise(&self, t: usize) -> &DMatrix<T> {
        self.meas_noise_at(t)
    }
    fn prior_mean(&self) -> &DVector<T> {
        &self.prior_mean
    }
    fn prior_cov(&self) -> &DMatrix<T> {
        &self.prior_cov
    }
    fn stationary(&self) -> bool {
        self.trans.is_stationary()
            && self.meas.is_stationary()
            && self.proc_noise.is_stationary()
            && self.meas_noise.is_stationary()
    }
    fn fingerprint_into(&self, h: &mut DefaultHasher) {
        hash_matseq(&self.trans, h);
        hash_matseq(&self.meas, h);
        hash_matseq(&self.proc_noise, h);
        hash_matseq(&self.meas_noise, h);
        hash_matrix(&self.prior_cov, h);
    }
}

/// Affine model produced by linearizing a nonlinear model around a reference
/// trajectory: Jacobian matrices plus offsets chosen so the standard filter
/// recursions reproduce the iterated-smoother update equations.
pub struct AffineModel<'a, T: Scalar> {
    pub trans: Vec<DMatrix<T>>,
    pub trans_offsets: Vec<DVector<T>>,
    pub meas: Vec<DMatrix<T>>,
    pub meas_offsets: Vec<DVector<T>>,
    pub proc_noise: &'a MatSeq<T>,
    pub meas_noise: &'a MatSeq<T>,
    pub prior_mean: &'a DVector<T>,
    pub prior_cov: &'a DMatrix<T>,
}

impl<'a, T: Scalar> AffineView<T> for AffineModel<'a, T> {
    fn steps(&self) -> usize {
        self.meas.len()
    }
    fn trans(&self, t: usize) -> &DMatrix<T> {
        &self.trans[t - 1]
    }
    fn trans_offset(&self, t: usize) -> Option<&DVector<T>> {
        Some(&self.trans_offsets[t - 1])
    }
    fn meas(&self, t: usize) -> &DMatrix<T> {
        &self.meas[t]
    }
    fn meas_offset(&self, t: usize) -> Option<&DVector<T>> {
        Some(&self.meas_offsets[t])
    }
    fn proc_noise(&self, t: usize) -> &DMatrix<T> {
        match self.proc_noise {
            MatSeq::Stationary(m) => m,
            MatSeq::PerStep(v) => &v[t - 1],
        }
    }
    fn meas_noise(&self, t: usize) -> &DMatrix<T> {
        self.meas_noise.at(t)
    }
    fn prior_mean(&self) -> &DVector<T> {
        self.prior_mean
    }
    fn prior_cov(&self) -> &DMatrix<T> {
        self.prior_cov
    }
    fn stationary(&self) -> bool {
        false
    }
    fn fingerprint_into(&self, h: &mut DefaultHasher) {
        for m in &self.trans {
            hash_matrix(m, h);
        }
        for m in &self.meas {
            hash_matrix(m, h);
        }
        hash_matseq(self.proc_noise, h);
        hash_matseq(self.meas_noise, h);
        hash_matrix(self.prior_cov, h);
    }
}

fn hash_matrix<T: Scalar>(m: &DMatrix<T>, h: &mut DefaultHasher) {
    m.nrows().hash(h);
    m.ncols().hash(h);
    for v in m.iter() {
        v.as_f64().to_bits().hash(h);
    }
}

fn hash_matseq<T: Scalar>(seq: &MatSeq<T>, h: &mut DefaultHasher) {
    match seq {
        MatSeq::Stationary(m) => {
            0u8.hash(h);
            hash_matrix(m, h);
        }
        MatSeq::PerStep(v) => {
            1u8.hash(h);
            for m in v {
                hash_matrix(m, h);
            }
        }
    }
}

fn fingerprint<T: Scalar, V: AffineView<T>>(
    view: &V,
    pseudo: Option<(&MatSeq<T>, &MatSeq<T>)>,
) -> u64 {
    let mut h = DefaultHasher::new();
    view.steps().hash(&mut h);
    view.fingerprint_into(&mut h);
    match pseudo {
        Some((theta, sigma)) => {
            1u8.hash(&mut h);
            hash_matseq(theta, &mut h);
            hash_matseq(sigma, &mut h);
        }
        None => 0u8.hash(&mut h),
    }
    h.finish()
}

/// Covariance-only forward-backward pass: computes every filter gain and
/// smoother gain for the `(model, Theta, Sigma)` pair.
fn build_cache<T: Scalar, V: AffineView<T>>(
    view: &V,
    pseudo: Option<(&MatSeq<T>, &MatSeq<T>)>,
) -> Result<FilterCache<T>> {
    let steps = view.steps();
    let mut gain_y = SteadySeq::new();
    let mut gain_z = pseudo.map(|_| SteadySeq::new());
    let mut cov_updates = 0usize;

    // Steady-state collapse applies only to fully time-invariant recursions.
    let stationary = view.stationary()
        && pseudo.map_or(true, |(theta, sigma)| {
            theta.is_stationary() && sigma.is_stationary()
        });
    let steady_tol = T::from_config(1e-13);
    let mut steady_hits = 0usize;
    let mut steady_at: Option<usize> = None;

    // Stored prefix of covariances, needed for the backward gains.
    let mut filtered_covs: Vec<DMatrix<T>> = Vec::new();
    let mut predicted_covs: Vec<DMatrix<T>> = Vec::new();

    let mut p = view.prior_cov().clone();
    for t in 0..steps {
        let p_pred = if t == 0 {
            p.clone()
        } else {
            let a = view.trans(t);
            symmetrize(&(a * &p * a.transpose() + view.proc_noise(t)))
        };

        if steady_at.is_none() {
            if let Some(last) = predicted_covs.last() {
                let gap = (&p_pred - last).norm();
                if stationary && gap <= steady_tol * (T::one() + last.norm()) {
                    steady_hits += 1;
                    if steady_hits >= 2 {
                        steady_at = Some(t);
                    }
                } else {
                    steady_hits = 0;
                }
            }
        }

        if let Some(s) = steady_at {
            if t > s {
                // Gains frozen; nothing new to store.
                continue;
            }
        }

        let (k_y, s_y) = kf_gain(&p_pred, view.meas(t), view.meas_noise(t), t)?;
        cov_updates += 1;
        let mut p_filt = symmetrize(&(&p_pred - &k_y * s_y * k_y.transpose()));
        gain_y.items.push(k_y);

        if let (Some((theta, sigma)), Some(gz)) = (pseudo, gain_z.as_mut()) {
            let (k_z, s_z) = kf_gain(&p_filt, theta.at(t), sigma.at(t), t)?;
            cov_updates += 1;
            p_filt = symmetrize(&(&p_filt - &k_z * s_z * k_z.transpose()));
            gz.items.push(k_z);
        }

        predicted_covs.push(p_pred);
        filtered_covs.push(p_filt.clone());
        p = p_filt;
    }

    // Backward gains over the stored prefix; the steady tail reuses the last.
    let stored = filtered_covs.len();
    let mut gain_smooth = SteadySeq::new();
    let smooth_count = if steady_at.is_some() {
        stored.min(steps.saturating_sub(1))
    } else {
        steps.saturating_sub(1)
    };
    for t in 0..smooth_count {
        let a_next = view.trans(t + 1);
        let p_pred_next = if t + 1 < stored {
            &predicted_covs[t + 1]
        } else {
            // Steady region: the prediction covariance no longer changes.
            &predicted_covs[stored - 1]
        };
        let g = smoother_gain(&filtered_covs[t.min(stored - 1)], a_next, p_pred_next)
            .map_err(|_| Error::SingularPrediction { step: t + 1 })?;
        gain_smooth.items.push(g);
    }

    gain_y.steady_from = steady_at;
    if let Some(gz) = gain_z.as_mut() {
        gz.steady_from = steady_at;
    }
    gain_smooth.steady_from = steady_at.map(|s| s.min(smooth_count.saturating_sub(1)));

    Ok(FilterCache {
        fingerprint: fingerprint(view, pseudo),
        steps,
        gain_y,
        gain_z,
        gain_smooth,
        cov_updates,
    })
}

/// Mean-only forward-backward replay with precomputed gains; produces the
/// smoothed means without touching any covariance.
fn replay_means<T: Scalar, V: AffineView<T>>(
    view: &V,
    pseudo: Option<&PseudoMeasurement<T>>,
    y: &[DVector<T>],
    cache: &FilterCache<T>,
) -> Result<Vec<DVector<T>>> {
    let steps = view.steps();
    let mut predicted = Vec::with_capacity(steps);
    let mut filtered = Vec::with_capacity(steps);

    for t in 0..steps {
        let m_pred = if t == 0 {
            view.prior_mean().clone()
        } else {
            let mut m = view.trans(t) * &filtered[t - 1];
            if let Some(c) = view.trans_offset(t) {
                m += c;
            }
            m
        };

        let mut d = y[t].clone();
        if let Some(o) = view.meas_offset(t) {
            d -= o;
        }
        let k_y = cache.gain_y.at(t);
        let mut m = &m_pred + k_y * (d - view.meas(t) * &m_pred);

        if let Some(ps) = pseudo {
            let k_z = cache
                .gain_z
                .as_ref()
                .expect("cache built without pseudo channel")
                .at(t);
            m += k_z * (&ps.delta[t] - ps.theta.at(t) * &m);
        }

        predicted.push(m_pred);
        filtered.push(m);
    }

    let mut smoothed = filtered;
    for t in (0..steps.saturating_sub(1)).rev() {
        let g = cache.gain_smooth.at(t);
        let dm = &smoothed[t + 1] - &predicted[t + 1];
        let corrected = &smoothed[t] + g * dm;
        smoothed[t] = corrected;
    }
    Ok(smoothed)
}

/// Smoothed means plus the gain cache that produced them.
pub struct KsOutput<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub cache: Arc<FilterCache<T>>,
    /// Covariance updates performed by this call (zero when a cache was reused).
    pub cov_updates: usize,
}

fn solve_view<T: Scalar, V: AffineView<T>>(
    view: &V,
    pseudo: Option<&PseudoMeasurement<T>>,
    y: &[DVector<T>],
    cache: Option<&Arc<FilterCache<T>>>,
) -> Result<KsOutput<T>> {
    if y.len() != view.steps() {
        return Err(Error::Dimension(format!(
            "need {} measurements, got {}",
            view.steps(),
            y.len()
        )));
    }
    if let Some(p) = pseudo {
        if p.delta.len() != view.steps() {
            return Err(Error::Dimension(format!(
                "pseudo-measurement needs {} observations, got {}",
                view.steps(),
                p.delta.len()
            )));
        }
    }
    let pseudo_mats = pseudo.map(|p| (&p.theta, &p.sigma));
    let (cache, fresh_updates) = match cache {
        Some(c) => {
            if c.fingerprint != fingerprint(view, pseudo_mats) {
                return Err(Error::StaleCache);
            }
            (Arc::clone(c), 0)
        }
        None => {
            let built = build_cache(view, pseudo_mats)?;
            let n = built.cov_updates;
            (Arc::new(built), n)
        }
    };
    let means = replay_means(view, pseudo, y, &cache)?;
    Ok(KsOutput {
        means,
        cache,
        cov_updates: fresh_updates,
    })
}

/// Kalman-smoother solve of the (optionally pseudo-measurement-augmented)
/// linear estimation problem: returns the smoothed means, which minimize the
/// quadratic objective exactly.
///
/// Passing a [`FilterCache`] skips all covariance work and produces
/// bit-identical means; a cache built for different matrices is rejected.
pub fn ks_solve<T: Scalar>(
    model: &LinearModel<T>,
    pseudo: Option<&PseudoMeasurement<T>>,
    y: &[DVector<T>],
    cache: Option<&Arc<FilterCache<T>>>,
) -> Result<KsOutput<T>> {
    solve_view(model, pseudo, y, cache)
}

/// [`ks_solve`] on an augmented model bundle.
pub fn ks_solve_augmented<T: Scalar>(
    aug: &AugmentedModel<'_, T>,
    y: &[DVector<T>],
    cache: Option<&Arc<FilterCache<T>>>,
) -> Result<KsOutput<T>> {
    solve_view(aug.base, aug.pseudo, y, cache)
}

/// Plain RTS smoothing (no pseudo channel) returning the full Gaussian
/// trajectory: filtered, predicted, and smoothed moments.
pub fn rts_smooth<T: Scalar>(
    model: &LinearModel<T>,
    y: &[DVector<T>],
) -> Result<GaussianTrajectory<T>> {
    let steps = model.steps;
    if y.len() != steps {
        return Err(Error::Dimension(format!(
            "need {steps} measurements, got {}",
            y.len()
        )));
    }
    let mut traj = GaussianTrajectory {
        means: Vec::with_capacity(steps),
        covs: Vec::with_capacity(steps),
        predicted_means: Vec::with_capacity(steps),
        predicted_covs: Vec::with_capacity(steps),
    };
    let mut m = model.prior_mean.clone();
    let mut p = model.prior_cov.clone();
    for t in 0..steps {
        let (m_pred, p_pred) = if t == 0 {
            (m.clone(), p.clone())
        } else {
            kf_predict(&m, &p, model.trans_at(t), model.proc_at(t))
        };
        let (m_f, p_f) = kf_update(&m_pred, &p_pred, model.meas_at(t), model.meas_noise_at(t), &y[t])?;
        traj.predicted_means.push(m_pred);
        traj.predicted_covs.push(p_pred);
        traj.means.push(m_f.clone());
        traj.covs.push(p_f.clone());
        m = m_f;
        p = p_f;
    }
    rts_backward(&traj, &model.trans)
}

/// Covariance-only pass: precompute every gain for later mean-only solves.
pub fn precompute_gains<T: Scalar>(
    model: &LinearModel<T>,
    pseudo: Option<(&MatSeq<T>, &MatSeq<T>)>,
) -> Result<FilterCache<T>> {
    build_cache(model, pseudo)
}

/// Linearize a nonlinear model around a reference trajectory.
///
/// The affine model's matrices are the Jacobians at the reference and the
/// offsets are `a_t(xr_{t-1}) - J_a xr_{t-1}` and `h_t(xr_t) - J_h xr_t`, so
/// running the standard predict/update recursions on it reproduces the
/// iterated-smoother update equations.
pub fn ieks_linearize<'a, T: Scalar, M: StateSpace<T>>(
    model: &'a M,
    x_ref: &[DVector<T>],
    proc_noise: &'a MatSeq<T>,
    meas_noise: &'a MatSeq<T>,
    prior_mean: &'a DVector<T>,
    prior_cov: &'a DMatrix<T>,
) -> Result<AffineModel<'a, T>> {
    let steps = model.steps();
    if x_ref.len() != steps {
        return Err(Error::Dimension(format!(
            "reference trajectory must have {steps} steps, got {}",
            x_ref.len()
        )));
    }
    let mut trans = Vec::with_capacity(steps.saturating_sub(1));
    let mut trans_offsets = Vec::with_capacity(steps.saturating_sub(1));
    for t in 1..steps {
        let ja = model.dynamics_jacobian(t, &x_ref[t - 1]);
        if ja.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dynamics Jacobian".to_string()));
        }
        let offset = model.dynamics(t, &x_ref[t - 1]) - &ja * &x_ref[t - 1];
        trans.push(ja);
        trans_offsets.push(offset);
    }
    let mut meas = Vec::with_capacity(steps);
    let mut meas_offsets = Vec::with_capacity(steps);
    for t in 0..steps {
        let jh = model.measurement_jacobian(t, &x_ref[t]);
        if jh.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement Jacobian".to_string()));
        }
        let offset = model.measurement(t, &x_ref[t]) - &jh * &x_ref[t];
        meas.push(jh);
        meas_offsets.push(offset);
    }
    Ok(AffineModel {
        trans,
        trans_offsets,
        meas,
        meas_offsets,
        proc_noise,
        meas_noise,
        prior_mean,
        prior_cov,
    })
}

/// Convenience wrapper for [`ieks_linearize`] on a nonlinear model.
pub fn linearize_model<'a, T: Scalar>(
    model: &'a crate::model::NonlinearModel<T>,
    x_ref: &[DVector<T>],
) -> Result<AffineModel<'a, T>> {
    ieks_linearize(
        model,
        x_ref,
        &model.proc_noise,
        &model.meas_noise,
        &model.prior_mean,
        &model.prior_cov,
    )
}

/// Inner-loop settings for the iterated extended Kalman smoother.
#[derive(Clone, Debug)]
pub struct IeksConfig<T: Scalar> {
    pub max_iterations: usize,
    pub tol: T,
    /// Keep every inner iterate in the result (oracle comparisons).
    pub record_iterates: bool,
    /// Optional per-iteration trace CSV: `iteration,objective,step_norm`.
    pub trace_path: Option<PathBuf>,
}

impl<T: Scalar> Default for IeksConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            tol: T::from_config(1e-8),
            record_iterates: false,
            trace_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IeksStatus {
    Converged,
    MaxIterations,
    /// Objective increased for three consecutive inner iterations.
    NonDecreasingInnerLoop,
}

#[derive(Clone, Debug)]
pub struct IeksResult<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub iterations: usize,
    pub status: IeksStatus,
    /// `||x^{i+1} - x^i||` per inner iteration (empirical contraction data).
    pub step_norms: Vec<T>,
    pub objectives: Vec<T>,
    pub iterates: Option<Vec<Vec<DVector<T>>>>,
    pub cov_updates: usize,
}

/// Iterated extended Kalman smoother: repeated linearization around the
/// current iterate, each linearized subproblem solved exactly by the
/// pseudo-measurement-augmented smoother.
///
/// Stops when `||x^{i+1} - x^i|| <= tol`, at `max_iterations`, or when the
/// penalized objective increases three inner iterations in a row.
pub fn ieks_solve<T: Scalar, M: StateSpace<T>>(
    model: &M,
    proc_noise: &MatSeq<T>,
    meas_noise: &MatSeq<T>,
    pseudo: Option<&PseudoMeasurement<T>>,
    y: &[DVector<T>],
    x0: &[DVector<T>],
    config: &IeksConfig<T>,
) -> Result<IeksResult<T>> {
    if config.max_iterations == 0 {
        return Err(Error::Config("IEKS needs at least one iteration".to_string()));
    }
    if x0.iter().any(|v| v.iter().any(|e| !e.is_finite())) {
        return Err(Error::NonFiniteTrajectory);
    }

    let prior_mean = model.prior_mean().clone();
    let prior_cov = model.prior_cov().clone();

    let penalized = |x: &[DVector<T>]| -> Result<T> {
        let mut value = crate::model::evaluate_objective(model, y, x, T::zero())?;
        if let Some(ps) = pseudo {
            let half = T::from_config(0.5);
            let mut quad = crate::model::QuadFormCache::new();
            for t in 0..model.steps() {
                let resid = &ps.delta[t] - ps.theta.at(t) * &x[t];
                value += half * quad.quad_form(ps.sigma.at(t), &resid)?;
            }
        }
        Ok(value)
    };

    let mut x = x0.to_vec();
    let mut best = penalized(&x)?;
    let mut status = IeksStatus::MaxIterations;
    let mut step_norms = Vec::new();
    let mut objectives = Vec::new();
    let mut iterates = config.record_iterates.then(Vec::new);
    let mut increases = 0usize;
    let mut iterations = 0usize;
    let mut cov_updates = 0usize;

    for _ in 0..config.max_iterations {
        let affine = ieks_linearize(model, &x, proc_noise, meas_noise, &prior_mean, &prior_cov)?;
        let out = solve_view(&affine, pseudo, y, None)?;
        cov_updates += out.cov_updates;
        iterations += 1;
        let step: T = out
            .means
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).norm_squared())
            .fold(T::zero(), |acc, v| acc + v)
            .sqrt();
        x = out.means;
        let value = penalized(&x)?;
        step_norms.push(step);
        objectives.push(value);
        if let Some(list) = iterates.as_mut() {
            list.push(x.clone());
        }
        if value > best {
            increases += 1;
            if increases >= 3 {
                status = IeksStatus::NonDecreasingInnerLoop;
                break;
            }
        } else {
            increases = 0;
            best = value;
        }
        if step <= config.tol {
            status = IeksStatus::Converged;
            break;
        }
    }

    if let Some(path) = &config.trace_path {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "iteration,objective,step_norm")?;
        for (i, (obj, step)) in objectives.iter().zip(&step_norms).enumerate() {
            writeln!(file, "{},{},{}", i + 1, obj.as_f64(), step.as_f64())?;
        }
    }

    Ok(IeksResult {
        means: x,
        iterations,
        status,
        step_norms,
        objectives,
        iterates,
        cov_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;
    use crate::presets::linear_tracking_model;

    #[test]
    fn predict_identity_dynamics_is_noop() {
        let m = DVector::from_vec(vec![1.0, -2.0]);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (mp, pp) = kf_predict(&m, &p, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2));
        assert_eq!(mp, m);
        assert!((pp - p).norm() < 1e-15);
    }

    #[test]
    fn predict_scalar_example() {
        let (m, p) = kf_predict(
            &DVector::from_element(1, 1.0f64),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 0.5),
        );
        assert!((m[0] - 2.0).abs() < 1e-15);
        assert!((p[(0, 0)] - 4.5).abs() < 1e-15);
    }

    #[test]
    fn predict_tracking_transition() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 2).unwrap();
        let m = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let (mp, _) = kf_predict(&m, &DMatrix::identity(4, 4), model.trans_at(1), model.proc_at(1));
        let expected = DVector::from_vec(vec![0.1, 0.1, 1.0, 1.0]);
        assert!((mp - expected).norm() < 1e-15);
    }

    #[test]
    fn update_scalar_example() {
        let (m, p) = kf_update(
            &DVector::from_element(1, 0.0f64),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn update_with_uninformative_measurement_is_noop() {
        let m0 = DVector::from_vec(vec![0.3, -0.7]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.9]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let v = DMatrix::from_element(1, 1, 1e12);
        let d = DVector::from_element(1, 5.0);
        let (m, p) = kf_update(&m0, &p0, &c, &v, &d).unwrap();
        assert!((&m - &m0).norm() / m0.norm() < 1e-5);
        assert!((&p - &p0).norm() / p0.norm() < 1e-5);
    }

    #[test]
    fn update_rejects_singular_innovation() {
        let err = kf_update(
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 0.0),
            &DVector::from_element(1, 1.0),
        );
        assert!(matches!(err, Err(Error::SingularInnovation { .. })));
    }

    #[test]
    fn smoothing_single_step_is_identity() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 1).unwrap();
        let y = vec![DVector::from_vec(vec![0.4, -0.2])];
        let traj = rts_smooth(&model, &y).unwrap();
        assert_eq!(traj.means.len(), 1);
        // No backward pass: smoothed == filtered by construction.
        let again = rts_backward(&traj, &model.trans).unwrap();
        assert_eq!(again.means[0], traj.means[0]);
    }

    #[test]
    fn zero_dynamics_decouple_smoother() {
        // A = 0 makes the smoother gain vanish: smoothed == filtered.
        let model = LinearModel::stationary(
            4,
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        let y: Vec<DVector<f64>> = (0..4)
            .map(|t| DVector::from_vec(vec![t as f64, -(t as f64)]))
            .collect();
        let steps = model.steps;
        let mut filtered = GaussianTrajectory {
            means: Vec::new(),
            covs: Vec::new(),
            predicted_means: Vec::new(),
            predicted_covs: Vec::new(),
        };
        let mut m = model.prior_mean.clone();
        let mut p = model.prior_cov.clone();
        for t in 0..steps {
            let (mp, pp) = if t == 0 {
                (m.clone(), p.clone())
            } else {
                kf_predict(&m, &p, model.trans_at(t), model.proc_at(t))
            };
            let (mf, pf) =
                kf_update(&mp, &pp, model.meas_at(t), model.meas_noise_at(t), &y[t]).unwrap();
            filtered.predicted_means.push(mp);
            filtered.predicted_covs.push(pp);
            filtered.means.push(mf.clone());
            filtered.covs.push(pf.clone());
            m = mf;
            p = pf;
        }
        let smoothed = rts_backward(&filtered, &model.trans).unwrap();
        for t in 0..steps {
            assert!((&smoothed.means[t] - &filtered.means[t]).norm() < 1e-14);
        }
    }

    #[test]
    fn single_step_posterior_averages_prior_and_measurement() {
        // T=1, H=I, R=I, P1=I: posterior mean (m1 + y) / 2.
        let model = LinearModel::stationary(
            1,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 3.0]),
            DMatrix::identity(2, 2),
        );
        let y = vec![DVector::from_vec(vec![3.0, 1.0])];
        let out = ks_solve(&model, None, &y, None).unwrap();
        let expected = DVector::from_vec(vec![2.0, 2.0]);
        assert!((&out.means[0] - expected).norm() < 1e-12);
    }

    #[test]
    fn cached_solve_is_bit_identical_and_rejects_stale_reuse() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 25).unwrap();
        let (_, y) = crate::presets::simulate(&model, 3).unwrap();
        let p = model.sparsity_dim();
        let pseudo = PseudoMeasurement {
            theta: model.sparsity.clone(),
            delta: (0..model.steps)
                .map(|t| DVector::from_fn(p, |i, _| ((t + i) as f64 * 0.37).sin()))
                .collect(),
            sigma: MatSeq::Stationary(DMatrix::identity(p, p).map(|v: f64| v * 0.5)),
        };

        let fresh = ks_solve(&model, Some(&pseudo), &y, None).unwrap();
        assert!(fresh.cov_updates > 0);
        let cached = ks_solve(&model, Some(&pseudo), &y, Some(&fresh.cache)).unwrap();
        assert_eq!(cached.cov_updates, 0);
        for (a, b) in fresh.means.iter().zip(&cached.means) {
            assert_eq!(a, b);
        }

        // Changing the pseudo observations is fine; gains do not depend on them.
        let mut shifted = pseudo.clone();
        for d in &mut shifted.delta {
            *d = d.map(|v| v + 1.0);
        }
        assert!(ks_solve(&model, Some(&shifted), &y, Some(&fresh.cache)).is_ok());

        // Changing Sigma (e.g. a new rho) must be rejected as stale.
        let mut scaled = pseudo.clone();
        scaled.sigma = MatSeq::Stationary(DMatrix::identity(p, p).map(|v: f64| v * 0.25));
        assert!(matches!(
            ks_solve(&model, Some(&scaled), &y, Some(&fresh.cache)),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn cache_reused_across_many_delta_updates() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 10).unwrap();
        let (_, y) = crate::presets::simulate(&model, 11).unwrap();
        let p = model.sparsity_dim();
        let sigma = MatSeq::Stationary(DMatrix::identity(p, p).map(|v: f64| v * 2.0));
        let cache = Arc::new(precompute_gains(&model, Some((&model.sparsity, &sigma))).unwrap());
        for k in 0..20 {
            let pseudo = PseudoMeasurement {
                theta: model.sparsity.clone(),
                delta: (0..model.steps)
                    .map(|t| DVector::from_fn(p, |i, _| ((k * t + i) as f64).cos()))
                    .collect(),
                sigma: sigma.clone(),
            };
            let out = ks_solve(&model, Some(&pseudo), &y, Some(&cache)).unwrap();
            assert_eq!(out.cov_updates, 0);
        }
    }

    #[test]
    fn ieks_stops_immediately_at_fixed_point() {
        let model = crate::presets::coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 8).unwrap();
        let (_, y) = crate::presets::simulate(&model, 5).unwrap();
        let config = IeksConfig::<f64> {
            max_iterations: 20,
            ..IeksConfig::default()
        };
        let x0 = vec![model.prior_mean.clone(); model.steps];
        let first = ieks_solve(
            &model,
            &model.proc_noise,
            &model.meas_noise,
            None,
            &y,
            &x0,
            &config,
        )
        .unwrap();
        assert_eq!(first.status, IeksStatus::Converged);
        // Restarting at the fixed point returns after a single inner solve.
        let again = ieks_solve(
            &model,
            &model.proc_noise,
            &model.meas_noise,
            None,
            &y,
            &first.means,
            &config,
        )
        .unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.step_norms[0] <= config.tol);
    }
}
