//! Pitch and yaw tracking from the vanishing direction of lane boundaries.
//!
//! State `[theta, phi, omega_theta, omega_phi]` under a constant angular
//! velocity model. Each inlier segment contributes the scalar measurement
//! `h = d_z^T R(theta, phi)^T n`, the cosine between the predicted
//! vanishing direction and the segment's great-circle normal, which is zero
//! when the segment passes through the vanishing point.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::ekf::{self, FilterStep, GaussianState, SkipReason, StepOutcome};
use crate::error::{Error, Result};
use crate::geometry::{ngc_of_segment, pitch_yaw_from_vd, CameraIntrinsics, LineSegment, UnitVector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchYawState {
    pub theta: f64,
    pub phi: f64,
    pub omega_theta: f64,
    pub omega_phi: f64,
}

impl PitchYawState {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.theta, self.phi, self.omega_theta, self.omega_phi])
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self { theta: x[0], phi: x[1], omega_theta: x[2], omega_phi: x[3] }
    }
}

/// Noise and gating parameters of the pitch-yaw filter. Angles in radians,
/// rates per frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchYawFilterConfig {
    /// Process noise variances of the two angular rates.
    pub w_rate: [f64; 2],
    /// Variance of each orthogonality residual.
    pub q: f64,
    /// Diagonal of the initial covariance.
    pub p0: [f64; 4],
    /// Innovation gate in standard deviations.
    pub gate_sigma: f64,
}

impl Default for PitchYawFilterConfig {
    fn default() -> Self {
        let rate = 0.05f64.to_radians().powi(2);
        Self {
            w_rate: [rate, rate],
            q: 0.2f64.to_radians().sin().powi(2),
            p0: [
                1f64.to_radians().powi(2),
                1f64.to_radians().powi(2),
                0.1f64.to_radians().powi(2),
                0.1f64.to_radians().powi(2),
            ],
            gate_sigma: 5.0,
        }
    }
}

impl PitchYawFilterConfig {
    pub fn process_noise(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 0.0, self.w_rate[0], self.w_rate[1]]))
    }

    pub fn initial_state(&self, s: &PitchYawState) -> GaussianState {
        GaussianState {
            x: s.to_vector(),
            p: DMatrix::from_diagonal(&DVector::from_row_slice(&self.p0)),
        }
    }
}

/// Angles from a vanishing direction, zero rates.
pub fn init_from_vd(v: &UnitVector3) -> Result<PitchYawState> {
    let (theta, phi) = pitch_yaw_from_vd(v)?;
    Ok(PitchYawState { theta, phi, omega_theta: 0.0, omega_phi: 0.0 })
}

pub fn system_step(s: &PitchYawState, dt: f64) -> PitchYawState {
    PitchYawState {
        theta: s.theta + s.omega_theta * dt,
        phi: s.phi + s.omega_phi * dt,
        ..*s
    }
}

/// Jacobian of [`system_step`]; constant in the state.
pub fn system_jacobian(dt: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(4, 4);
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Vanishing direction `R(theta, phi) e_z` in closed form.
pub fn predicted_vd(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(sp, -st * cp, ct * cp)
}

/// Orthogonality measurement for one great-circle normal and its
/// Jacobian with respect to `[theta, phi, omega_theta, omega_phi]`.
pub fn measurement(s: &PitchYawState, n: &UnitVector3) -> (f64, Vector4<f64>) {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    let n = n.as_vector();
    let h = predicted_vd(s.theta, s.phi).dot(n);
    let d_theta = Vector3::new(0.0, -ct * cp, -st * cp).dot(n);
    let d_phi = Vector3::new(cp, st * sp, -ct * sp).dot(n);
    (h, Vector4::new(d_theta, d_phi, 0.0, 0.0))
}

/// One predict/update cycle over the inlier segments of a frame.
pub fn step_frame(
    s: &GaussianState,
    inliers: &[LineSegment],
    k: &CameraIntrinsics,
    dt: f64,
    cfg: &PitchYawFilterConfig,
) -> Result<FilterStep> {
    if s.dim() != 4 {
        return Err(Error::DimensionMismatch(format!("pitch-yaw state has dim {}", s.dim())));
    }
    let f = system_jacobian(dt);
    let predicted = ekf::predict(
        s,
        |x| system_step(&PitchYawState::from_vector(x), dt).to_vector(),
        |_| f.clone(),
        &cfg.process_noise(),
    )?;
    if inliers.is_empty() {
        return Ok(FilterStep {
            state: predicted,
            outcome: StepOutcome::PredictionOnly(SkipReason::NoMeasurements),
        });
    }
    let prior = PitchYawState::from_vector(&predicted.x);
    let rows: Vec<(f64, DVector<f64>)> = inliers
        .iter()
        .filter_map(|seg| ngc_of_segment(k, seg).ok())
        .map(|n| {
            let (h, jac) = measurement(&prior, &n);
            (-h, DVector::from_column_slice(jac.as_slice()))
        })
        .collect();
    let (batch, gated) = ekf::gated_batch(&predicted, &rows, cfg.q, cfg.gate_sigma)?;
    if batch.is_empty() {
        let reason = if rows.is_empty() { SkipReason::NoMeasurements } else { SkipReason::AllGated };
        return Ok(FilterStep { state: predicted, outcome: StepOutcome::PredictionOnly(reason) });
    }
    let mut state = ekf::update(&predicted, &batch)?;
    let limit = FRAC_PI_2 - 1e-6;
    for i in 0..2 {
        state.x[i] = state.x[i].clamp(-limit, limit);
    }
    Ok(FilterStep { state, outcome: StepOutcome::Updated { used: batch.len(), gated } })
}

/// Least-squares pitch and yaw for a single frame: the orthogonality cost
/// `sum h^2` minimized by Gauss-Newton from the SVD vanishing direction.
pub fn batch_estimate(ngcs: &[UnitVector3]) -> Result<(f64, f64)> {
    let v0 = crate::vp::solve_vp_svd(ngcs)?;
    let start = init_from_vd(&v0)?;
    let (mut theta, mut phi) = (start.theta, start.phi);
    for _ in 0..50 {
        let s = PitchYawState { theta, phi, omega_theta: 0.0, omega_phi: 0.0 };
        let mut jtj = nalgebra::Matrix2::<f64>::zeros();
        let mut jtr = nalgebra::Vector2::<f64>::zeros();
        for n in ngcs {
            let (h, j) = measurement(&s, n);
            let j2 = nalgebra::Vector2::new(j[0], j[1]);
            jtj += j2 * j2.transpose();
            jtr += j2 * h;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jtr)) else {
            return Err(Error::RankDeficient);
        };
        theta += step[0];
        phi += step[1];
        if step.norm() < 1e-12 {
            break;
        }
    }
    Ok((theta, phi))
}
