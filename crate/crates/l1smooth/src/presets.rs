//! Experiment models and operators: linear tracking, coordinated turn, total
//! variation, synthetic Radon geometry, phantom sequences, and forward
//! simulation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{LinearModel, NonlinearModel, StateSpace};
use crate::scalar::Scalar;

/// Four-dimensional constant-velocity tracking model: planar position and
/// velocity, position measurements, discretized white-acceleration process
/// noise, and a sparsity operator selecting the velocity components.
pub fn linear_tracking_model<T: Scalar>(
    dt: f64,
    q_c: f64,
    sigma: f64,
    steps: usize,
) -> Result<LinearModel<T>> {
    if dt <= 0.0 || q_c <= 0.0 || sigma <= 0.0 || steps == 0 {
        return Err(Error::Config(
            "tracking model needs positive dt, q_c, sigma and at least one step".to_string(),
        ));
    }
    let c = T::from_config;
    let trans = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
    .map(c);
    let meas = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).map(c);
    let sparsity =
        DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).map(c);
    let (d3, d2) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0);
    let proc = DMatrix::from_row_slice(
        4,
        4,
        &[
            q_c * d3, 0.0, q_c * d2, 0.0, //
            0.0, q_c * d3, 0.0, q_c * d2, //
            q_c * d2, 0.0, q_c * dt, 0.0, //
            0.0, q_c * d2, 0.0, q_c * dt,
        ],
    )
    .map(c);
    let meas_noise = DMatrix::identity(2, 2).map(|v: f64| v * sigma * sigma).map(c);
    Ok(LinearModel::stationary(
        steps,
        trans,
        meas,
        proc,
        meas_noise,
        sparsity,
        DVector::zeros(4),
        DMatrix::identity(4, 4).map(c),
    ))
}

/// Coordinated-turn transition factors `sin(w dt)/w` and `(1-cos(w dt))/w`
/// and their w-derivatives, with series expansions near `w = 0`.
fn turn_factors(omega: f64, dt: f64) -> (f64, f64, f64, f64) {
    let u = omega * dt;
    if u.abs() < 1e-3 {
        let u2 = u * u;
        let a = dt * (1.0 - u2 / 6.0 + u2 * u2 / 120.0);
        let b = dt * u * 0.5 * (1.0 - u2 / 12.0 + u2 * u2 / 360.0);
        let da = dt * dt * (-u / 3.0 + u * u2 / 30.0);
        let db = dt * dt * (0.5 - u2 / 8.0 + u2 * u2 / 144.0);
        (a, b, da, db)
    } else {
        let (su, cu) = u.sin_cos();
        let a = su / omega;
        let b = (1.0 - cu) / omega;
        let da = (u * cu - su) / (omega * omega);
        let db = (u * su - (1.0 - cu)) / (omega * omega);
        (a, b, da, db)
    }
}

/// Five-dimensional coordinated-turn model: planar position and velocity plus
/// a turn rate that follows a random walk. Position is measured; the
/// sparsity operator selects the turn rate, so the regularizer favors
/// straight-line motion. Analytic Jacobians handle the `w -> 0` limit by
/// series expansion. The turn-rate noise intensity defaults to `q_c`.
pub fn coordinated_turn_model<T: Scalar>(
    dt: f64,
    q_c: f64,
    sigma: f64,
    steps: usize,
) -> Result<NonlinearModel<T>> {
    if dt <= 0.0 || q_c <= 0.0 || sigma <= 0.0 || steps == 0 {
        return Err(Error::Config(
            "coordinated-turn model needs positive dt, q_c, sigma and at least one step"
                .to_string(),
        ));
    }
    let c = T::from_config;
    let q_omega = q_c;

    let dynamics = {
        move |_t: usize, x: &DVector<T>| -> DVector<T> {
            let (px, py, vx, vy, om) = (
                x[0].as_f64(),
                x[1].as_f64(),
                x[2].as_f64(),
                x[3].as_f64(),
                x[4].as_f64(),
            );
            let (a, b, _, _) = turn_factors(om, dt);
            let u = om * dt;
            let (su, cu) = u.sin_cos();
            DVector::from_vec(vec![
                c(px + a * vx - b * vy),
                c(py + b * vx + a * vy),
                c(cu * vx - su * vy),
                c(su * vx + cu * vy),
                c(om),
            ])
        }
    };
    let dynamics_jacobian = {
        move |_t: usize, x: &DVector<T>| -> DMatrix<T> {
            let (vx, vy, om) = (x[2].as_f64(), x[3].as_f64(), x[4].as_f64());
            let (a, b, da, db) = turn_factors(om, dt);
            let u = om * dt;
            let (su, cu) = u.sin_cos();
            DMatrix::from_row_slice(
                5,
                5,
                &[
                    1.0, 0.0, a, -b, da * vx - db * vy, //
                    0.0, 1.0, b, a, db * vx + da * vy, //
                    0.0, 0.0, cu, -su, -dt * su * vx - dt * cu * vy, //
                    0.0, 0.0, su, cu, dt * cu * vx - dt * su * vy, //
                    0.0, 0.0, 0.0, 0.0, 1.0,
                ],
            )
            .map(c)
        }
    };
    let measurement = move |_t: usize, x: &DVector<T>| DVector::from_vec(vec![x[0], x[1]]);
    let measurement_jacobian = move |_t: usize, _x: &DVector<T>| {
        DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).map(c)
    };

    let (d3, d2) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0);
    let mut proc = DMatrix::zeros(5, 5);
    for axis in 0..2 {
        let (ip, iv) = (axis, axis + 2);
        proc[(ip, ip)] = q_c * d3;
        proc[(ip, iv)] = q_c * d2;
        proc[(iv, ip)] = q_c * d2;
        proc[(iv, iv)] = q_c * dt;
    }
    proc[(4, 4)] = q_omega * dt;

    Ok(NonlinearModel {
        steps,
        state_dim: 5,
        meas_dim: 2,
        dynamics: Arc::new(dynamics),
        dynamics_jacobian: Arc::new(dynamics_jacobian),
        measurement: Arc::new(measurement),
        measurement_jacobian: Arc::new(measurement_jacobian),
        proc_noise: proc.map(c).into(),
        meas_noise: DMatrix::identity(2, 2)
            .map(|v: f64| v * sigma * sigma)
            .map(c)
            .into(),
        sparsity: DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 0.0, 1.0])
            .map(c)
            .into(),
        prior_mean: DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.05]).map(c),
        prior_cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 0.01]))
            .map(c),
    })
}

/// Total-variation operator for `s x s` row-major images: all horizontal
/// one-step differences (`s * (s-1)` rows) followed by all vertical ones
/// (`(s-1) * s` rows); each row holds one `+1` (later pixel) and one `-1`.
pub fn tv_operator<T: Scalar>(s: usize) -> Result<DMatrix<T>> {
    if s < 2 {
        return Err(Error::Config("tv_operator needs s >= 2".to_string()));
    }
    let n = s * s;
    let rows = 2 * s * (s - 1);
    let mut omega = DMatrix::zeros(rows, n);
    let one = T::one();
    let mut r = 0;
    for i in 0..s {
        for j in 0..s - 1 {
            omega[(r, i * s + j + 1)] = one;
            omega[(r, i * s + j)] = -one;
            r += 1;
        }
    }
    for i in 0..s - 1 {
        for j in 0..s {
            omega[(r, (i + 1) * s + j)] = one;
            omega[(r, i * s + j)] = -one;
            r += 1;
        }
    }
    Ok(omega)
}

/// Synthetic Radon measurement geometry: one row per (angle, detector) ray.
pub struct RadonMatrix<T: Scalar> {
    pub matrix: DMatrix<T>,
    /// Row indices of rays that miss the image square entirely.
    pub empty_rays: Vec<usize>,
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Intersection lengths of one ray with the cells of an `s x s` pixel grid
/// covering `[0, s]^2` (unit pixels). The ray is the line through
/// `center + offset * (cos angle, sin angle)` with direction
/// `(-sin angle, cos angle)`.
pub fn radon_ray_row<T: Scalar>(s: usize, angle: f64, offset: f64) -> DVector<T> {
    let side = s as f64;
    let (mut sin_a, mut cos_a) = angle.sin_cos();
    // Snap nearly axis-aligned rays exactly onto the axis; otherwise a ray on
    // a gridline splits cells by the sign of a ~1e-16 direction component.
    if sin_a.abs() < 1e-12 {
        sin_a = 0.0;
        cos_a = cos_a.signum();
    }
    if cos_a.abs() < 1e-12 {
        cos_a = 0.0;
        sin_a = sin_a.signum();
    }
    let p0 = (side / 2.0 + offset * cos_a, side / 2.0 + offset * sin_a);
    let dir = (-sin_a, cos_a);

    // Clip the parameter range to the square.
    let mut u_min = f64::NEG_INFINITY;
    let mut u_max = f64::INFINITY;
    for (p, d) in [(p0.0, dir.0), (p0.1, dir.1)] {
        if d.abs() < 1e-14 {
            if !(0.0..=side).contains(&p) {
                return DVector::zeros(s * s);
            }
        } else {
            let (a, b) = ((0.0 - p) / d, (side - p) / d);
            u_min = u_min.max(a.min(b));
            u_max = u_max.min(a.max(b));
        }
    }
    let mut row = DVector::zeros(s * s);
    if u_min >= u_max {
        return row;
    }

    // Cell-boundary crossings along the ray.
    let mut cuts = vec![u_min, u_max];
    for (p, d) in [(p0.0, dir.0), (p0.1, dir.1)] {
        if d.abs() < 1e-14 {
            continue;
        }
        for k in 0..=s {
            let u = (k as f64 - p) / d;
            if u > u_min && u < u_max {
                cuts.push(u);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite parameters"));

    for pair in cuts.windows(2) {
        let du = pair[1] - pair[0];
        if du <= 1e-14 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let x = p0.0 + mid * dir.0;
        let y = p0.1 + mid * dir.1;
        let j = (x.floor() as isize).clamp(0, s as isize - 1) as usize;
        let i = (y.floor() as isize).clamp(0, s as isize - 1) as usize;
        row[i * s + j] += T::from_config(du);
    }
    row
}

/// Dense Radon measurement matrix: `n_angles` angles uniform in `[0, pi)`,
/// `n_detectors` offsets uniform across the image diagonal. Rays that miss
/// the square produce all-zero rows, reported in `empty_rays`.
pub fn radon_matrix<T: Scalar>(s: usize, n_angles: usize, n_detectors: usize) -> Result<RadonMatrix<T>> {
    if s == 0 || n_angles == 0 || n_detectors == 0 {
        return Err(Error::Config(
            "radon_matrix needs positive s, n_angles, n_detectors".to_string(),
        ));
    }
    let diag = (s as f64) * std::f64::consts::SQRT_2;
    let angles: Vec<f64> = (0..n_angles)
        .map(|k| k as f64 * std::f64::consts::PI / n_angles as f64)
        .collect();
    let offsets: Vec<f64> = (0..n_detectors)
        .map(|j| ((j as f64 + 0.5) / n_detectors as f64 - 0.5) * diag)
        .collect();
    let mut matrix = DMatrix::zeros(n_angles * n_detectors, s * s);
    let mut empty_rays = Vec::new();
    for (ai, &angle) in angles.iter().enumerate() {
        for (di, &offset) in offsets.iter().enumerate() {
            let r = ai * n_detectors + di;
            let row = radon_ray_row::<T>(s, angle, offset);
            if row.iter().all(|v| *v == T::zero()) {
                empty_rays.push(r);
            }
            matrix.row_mut(r).copy_from(&row.transpose());
        }
    }
    Ok(RadonMatrix {
        matrix,
        empty_rays,
        angles,
        offsets,
    })
}

/// A sequence of `side x side` images, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence<T: Scalar> {
    pub side: usize,
    pub frames: Vec<DVector<T>>,
}

impl<T: Scalar> ImageSequence<T> {
    pub fn steps(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Disk { cx: f64, cy: f64, radius: f64 },
    Rect { cx: f64, cy: f64, half_w: f64, half_h: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, radius } => {
                (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius
            }
            Shape::Rect { cx, cy, half_w, half_h } => {
                (x - cx).abs() <= half_w && (y - cy).abs() <= half_h
            }
        }
    }
}

/// Deterministic-for-seed sequence of piecewise-constant images whose shapes
/// drift and grow smoothly over the frames; a desk-scale stand-in for real
/// dynamic imaging data. Values are clipped to `[0, 1]`.
pub fn phantom_sequence<T: Scalar>(s: usize, steps: usize, seed: u64) -> Result<ImageSequence<T>> {
    if s < 8 {
        return Err(Error::Config("phantom_sequence needs s >= 8".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = s as f64;
    let count = rng.gen_range(2..=4usize);

    struct Moving {
        base: Shape,
        vel: (f64, f64),
        growth: f64,
        intensity: f64,
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let cx = rng.gen_range(0.25 * side..0.75 * side);
        let cy = rng.gen_range(0.25 * side..0.75 * side);
        let size = rng.gen_range(0.08 * side..0.2 * side);
        let base = if rng.gen_bool(0.5) {
            Shape::Disk { cx, cy, radius: size }
        } else {
            Shape::Rect {
                cx,
                cy,
                half_w: size,
                half_h: rng.gen_range(0.08 * side..0.2 * side),
            }
        };
        shapes.push(Moving {
            base,
            vel: (
                rng.gen_range(-0.015 * side..0.015 * side),
                rng.gen_range(-0.015 * side..0.015 * side),
            ),
            growth: rng.gen_range(-0.004 * side..0.004 * side),
            intensity: rng.gen_range(0.4..1.0),
        });
    }

    let mut frames = Vec::with_capacity(steps);
    for t in 0..steps {
        let tf = t as f64;
        let mut frame = DVector::zeros(s * s);
        for i in 0..s {
            for j in 0..s {
                let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                let mut value: f64 = 0.0;
                for m in &shapes {
                    let moved = match m.base {
                        Shape::Disk { cx, cy, radius } => Shape::Disk {
                            cx: cx + m.vel.0 * tf,
                            cy: cy + m.vel.1 * tf,
                            radius: (radius + m.growth * tf).max(1.0),
                        },
                        Shape::Rect { cx, cy, half_w, half_h } => Shape::Rect {
                            cx: cx + m.vel.0 * tf,
                            cy: cy + m.vel.1 * tf,
                            half_w: (half_w + m.growth * tf).max(1.0),
                            half_h: (half_h + m.growth * tf).max(1.0),
                        },
                    };
                    if moved.contains(x, y) {
                        value = value.max(m.intensity);
                    }
                }
                frame[i * s + j] = T::from_config(value.clamp(0.0, 1.0));
            }
        }
        frames.push(frame);
    }
    Ok(ImageSequence { side: s, frames })
}

/// Forward-sample a trajectory and measurements from the model with seeded
/// Gaussian noise: `x_0 ~ N(m1, P1)`, `x_t = a_t(x_{t-1}) + q_t`,
/// `y_t = h_t(x_t) + r_t`.
pub fn simulate<T: Scalar, M: StateSpace<T>>(
    model: &M,
    seed: u64,
) -> Result<(Vec<DVector<T>>, Vec<DVector<T>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = model.steps();
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);

    let mut x = model.prior_mean() + gaussian_draw(model.prior_cov(), &mut rng)?;
    for t in 0..steps {
        if t > 0 {
            x = model.dynamics(t, &x) + gaussian_draw(model.proc_noise(t), &mut rng)?;
        }
        let y = model.measurement(t, &x) + gaussian_draw(model.meas_noise(t), &mut rng)?;
        states.push(x.clone());
        measurements.push(y);
    }
    Ok((states, measurements))
}

fn gaussian_draw<T: Scalar>(cov: &DMatrix<T>, rng: &mut ChaCha8Rng) -> Result<DVector<T>> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("sampling covariance".to_string()))?;
    let z = DVector::from_fn(cov.nrows(), |_, _| {
        T::from_config(rng.sample::<f64, _>(StandardNormal))
    });
    Ok(chol.l() * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::finite_difference_jacobian;

    #[test]
    fn tracking_matrix_entries() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 5).unwrap();
        let a = model.trans_at(1);
        assert_eq!(a[(0, 2)], 0.1);
        assert_eq!(a[(1, 3)], 0.1);
        for i in 0..4 {
            assert_eq!(a[(i, i)], 1.0);
        }
        let q = model.proc_at(1);
        assert!((q[(2, 2)] - 0.05).abs() < 1e-15, "q_c * dt = 0.05");
        let omega = model.sparsity_at(0);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(omega * x, DVector::from_vec(vec![3.0, 4.0]));
        assert!(matches!(
            linear_tracking_model::<f64>(-0.1, 0.5, 0.2, 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn coordinated_turn_reduces_to_constant_velocity_at_zero_rate() {
        let model = coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 5).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, -1.0, 0.0]);
        let next = (model.dynamics)(1, &x);
        let expected = DVector::from_vec(vec![1.0 + 0.2 * 3.0, 2.0 - 0.2, 3.0, -1.0, 0.0]);
        assert!((next - expected).norm() < 1e-12);
    }

    #[test]
    fn coordinated_turn_jacobian_matches_finite_differences() {
        let model = coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let x = DVector::from_fn(5, |i, _| {
                let scale = if i == 4 { 0.5 } else { 3.0 };
                rng.sample::<f64, _>(StandardNormal) * scale
            });
            let ja = (model.dynamics_jacobian)(1, &x);
            let fd = finite_difference_jacobian(|v| (model.dynamics)(1, v), &x);
            let gap = (&ja - &fd).norm() / (1.0 + ja.norm());
            assert!(gap < 1e-4, "gap = {gap} at x = {x:?}");
        }
    }

    #[test]
    fn coordinated_turn_accepts_paper_configuration() {
        let model = coordinated_turn_model::<f64>(0.2, 0.01, 0.3, 100).unwrap();
        assert!(model.validate().is_empty());
        assert!((model.meas_noise.at(0)[(0, 0)] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn tv_operator_small_cases() {
        assert!(tv_operator::<f64>(1).is_err());
        let omega = tv_operator::<f64>(2).unwrap();
        assert_eq!(omega.nrows(), 4);
        let img = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0]); // (a, b, c, d)
        let diffs = &omega * img;
        // (b-a, d-c, c-a, d-b)
        assert_eq!(diffs, DVector::from_vec(vec![1.0, 2.0, 2.0, 3.0]));

        let constant = DVector::from_element(4, 3.7);
        assert!((&omega * constant).norm() < 1e-15);
    }

    #[test]
    fn tv_operator_on_ramp() {
        let s = 4;
        let omega = tv_operator::<f64>(s).unwrap();
        let ramp = DVector::from_fn(s * s, |idx, _| (idx % s) as f64 * 0.5);
        let out = &omega * ramp;
        let horizontal = s * (s - 1);
        for r in 0..horizontal {
            assert!((out[r] - 0.5).abs() < 1e-15);
        }
        for r in horizontal..out.len() {
            assert!(out[r].abs() < 1e-15);
        }
    }

    #[test]
    fn tv_operator_rank_deficiency_is_one() {
        for s in [2usize, 4, 8, 16] {
            let omega = tv_operator::<f64>(s).unwrap();
            let rank = omega.rank(1e-10);
            assert_eq!(rank, s * s - 1, "s = {s}");
        }
    }

    #[test]
    fn axis_aligned_ray_crosses_full_row() {
        // angle pi/2: normal (0,1), ray direction (-1,0), horizontal line.
        let s = 4;
        let offset = -0.5; // line y = 2 - 0.5 = 1.5, through row 1
        let row = radon_ray_row::<f64>(s, std::f64::consts::FRAC_PI_2, offset);
        let mut expected = DVector::zeros(16);
        for j in 0..4 {
            expected[4 + j] = 1.0;
        }
        assert!((row - expected).norm() < 1e-12);
    }

    #[test]
    fn ray_row_sums_match_chord_lengths() {
        // Independent chord oracle: clip the ray against the square.
        let s = 8;
        let radon = radon_matrix::<f64>(s, 6, 10).unwrap();
        for (ai, &angle) in radon.angles.iter().enumerate() {
            for (di, &offset) in radon.offsets.iter().enumerate() {
                let row = radon.matrix.row(ai * radon.offsets.len() + di);
                let total: f64 = row.iter().sum();
                let chord = chord_length(s as f64, angle, offset);
                assert!(
                    (total - chord).abs() < 1e-8,
                    "angle {angle}, offset {offset}: {total} vs {chord}"
                );
            }
        }
    }

    fn chord_length(side: f64, angle: f64, offset: f64) -> f64 {
        let (sin_a, cos_a) = angle.sin_cos();
        let p0 = (side / 2.0 + offset * cos_a, side / 2.0 + offset * sin_a);
        let dir = (-sin_a, cos_a);
        let mut u_min = f64::NEG_INFINITY;
        let mut u_max = f64::INFINITY;
        for (p, d) in [(p0.0, dir.0), (p0.1, dir.1)] {
            if d.abs() < 1e-14 {
                if !(0.0..=side).contains(&p) {
                    return 0.0;
                }
            } else {
                let (a, b) = ((0.0 - p) / d, (side - p) / d);
                u_min = u_min.max(a.min(b));
                u_max = u_max.min(a.max(b));
            }
        }
        (u_max - u_min).max(0.0)
    }

    #[test]
    fn rotated_ray_set_matches_up_to_reindexing() {
        let s = 6;
        let n_det = 9;
        let base = radon_matrix::<f64>(s, 4, n_det).unwrap();
        for (ai, &angle) in base.angles.iter().enumerate() {
            for (di, &offset) in base.offsets.iter().enumerate() {
                let rotated = radon_ray_row::<f64>(s, angle + std::f64::consts::PI, -offset);
                let original = base.matrix.row(ai * n_det + di).transpose();
                assert!(
                    (&rotated - &original).norm() < 1e-10,
                    "angle {angle} offset {offset}"
                );
            }
        }
    }

    #[test]
    fn phantom_sequences_are_deterministic_and_bounded() {
        let a = phantom_sequence::<f64>(16, 6, 99).unwrap();
        let b = phantom_sequence::<f64>(16, 6, 99).unwrap();
        assert_eq!(a, b);
        let single = phantom_sequence::<f64>(16, 1, 7).unwrap();
        assert_eq!(single.steps(), 1);
        let omega = tv_operator::<f64>(16).unwrap();
        for frame in &a.frames {
            assert!(frame.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let tv: f64 = (&omega * frame).iter().map(|v| v.abs()).sum();
            assert!(tv > 0.0, "every frame has structure");
        }
        assert!(phantom_sequence::<f64>(4, 3, 0).is_err());
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 30).unwrap();
        let (xa, ya) = simulate(&model, 5).unwrap();
        let (xb, yb) = simulate(&model, 5).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(ya, yb);
        let (xc, _) = simulate(&model, 6).unwrap();
        assert_ne!(xa, xc);
    }

    #[test]
    fn vanishing_noise_recovers_deterministic_rollout() {
        let mut model = linear_tracking_model::<f64>(0.1, 0.5, 0.2, 15).unwrap();
        let tiny = 1e-18;
        model.proc_noise = match &model.proc_noise {
            crate::model::MatSeq::Stationary(q) => q.map(|v| v * tiny).into(),
            _ => unreachable!(),
        };
        model.meas_noise = DMatrix::identity(2, 2).map(|v: f64| v * tiny).into();
        model.prior_cov = DMatrix::identity(4, 4).map(|v: f64| v * tiny);
        model.prior_mean = DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0]);
        let (x, _) = simulate(&model, 123).unwrap();
        let mut expected = model.prior_mean.clone();
        for t in 0..model.steps {
            if t > 0 {
                expected = model.trans_at(t) * expected;
            }
            assert!((&x[t] - &expected).norm() < 1e-6);
        }
    }

    #[test]
    fn process_noise_sample_covariance_matches_q() {
        // A = 0 makes every state a fresh process-noise draw.
        let draws = 100_000;
        let base = linear_tracking_model::<f64>(0.1, 0.5, 0.2, draws).unwrap();
        let mut model = base;
        model.trans = DMatrix::zeros(4, 4).into();
        let (x, _) = simulate(&model, 17).unwrap();
        let mut cov = DMatrix::<f64>::zeros(4, 4);
        for xt in x.iter().skip(1) {
            cov += xt * xt.transpose();
        }
        cov /= (draws - 1) as f64;
        let q = model.proc_at(1);
        let gap = (&cov - q).norm() / q.norm();
        assert!(gap < 0.05, "relative Frobenius gap {gap}");
    }
}
