//! Roll and height from the consistency of lane widths.
//!
//! After pitch and yaw are removed, a ground line at lateral offset `u` to
//! the left of the camera appears in the normalized image plane at angle
//! `alpha` from the downward axis with `u = h tan(alpha - psi)`. Adjacent
//! boundaries then give the lane width `h (tan(alpha_L - psi) - tan(alpha_R - psi))`,
//! which is compared against a width prior.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::ekf::{self, FilterStep, GaussianState, SkipReason, StepOutcome};
use crate::error::{Error, Result};
use crate::geometry::{rotation_pitch_yaw, CameraIntrinsics, LineSegment};

/// A boundary line after pitch/yaw rectification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedLine {
    /// Angle from the downward image axis, positive toward `-x` (radians).
    pub alpha: f64,
    /// `tan(alpha)`, the leftward offset per unit height at zero roll.
    pub lateral_key: f64,
    pub boundary_id: Option<i64>,
    /// Averaging weight, the squared segment length in pixels.
    pub weight: f64,
}

impl RectifiedLine {
    pub fn from_alpha(alpha: f64, boundary_id: Option<i64>) -> Self {
        Self { alpha, lateral_key: alpha.tan(), boundary_id, weight: 1.0 }
    }
}

/// Adjacent boundaries of one lane; `left.lateral_key > right.lateral_key`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePair {
    pub left: RectifiedLine,
    pub right: RectifiedLine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollHeightState {
    pub psi: f64,
    pub h: f64,
    pub omega_psi: f64,
    pub v_h: f64,
}

impl RollHeightState {
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.psi, self.h, self.omega_psi, self.v_h])
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self { psi: x[0], h: x[1], omega_psi: x[2], v_h: x[3] }
    }
}

/// Rectifies a segment with the given pitch and yaw and returns its angle.
///
/// Both endpoints must lie in front of the camera and below the rectified
/// horizon, where ground points project.
pub fn rectify_line(
    seg: &LineSegment,
    k: &CameraIntrinsics,
    theta: f64,
    phi: f64,
) -> Result<RectifiedLine> {
    let rt = rotation_pitch_yaw(theta, phi).inverse();
    let mut q = [Vector2::zeros(); 2];
    for (out, p) in q.iter_mut().zip([seg.p1, seg.p2]) {
        let r = rt * k.back_project(&p);
        if r.z <= 1e-9 || r.y <= 1e-9 * r.z {
            return Err(Error::HorizonLine);
        }
        *out = Vector2::new(r.x / r.z, r.y / r.z);
    }
    let mut d = q[1] - q[0];
    if d.y < 0.0 {
        d = -d;
    }
    let norm = d.norm();
    if norm == 0.0 || d.y <= 1e-12 * norm {
        return Err(Error::DegenerateSegment);
    }
    let alpha = (-d.x).atan2(d.y);
    Ok(RectifiedLine {
        alpha,
        lateral_key: alpha.tan(),
        boundary_id: seg.boundary_id,
        weight: seg.length().powi(2),
    })
}

fn shifted_tan(alpha: f64, psi: f64) -> Result<(f64, f64)> {
    let a = alpha - psi;
    if a.abs() >= FRAC_PI_2 - 1e-6 {
        return Err(Error::TangentSingularity);
    }
    let c = a.cos();
    Ok((a.tan(), 1.0 / (c * c)))
}

/// Width between two boundaries seen at roll `psi` from height `h`.
pub fn lane_width(psi: f64, h: f64, alpha_l: f64, alpha_r: f64) -> Result<f64> {
    let (tl, _) = shifted_tan(alpha_l, psi)?;
    let (tr, _) = shifted_tan(alpha_r, psi)?;
    Ok(h * (tl - tr))
}

/// Width-prior residual `w_p - w` and its gradient with respect to
/// `[psi, h, omega_psi, v_h]`.
pub fn residual(pair: &LanePair, psi: f64, h: f64, w_p: f64) -> Result<(f64, Vector4<f64>)> {
    let (tl, sl) = shifted_tan(pair.left.alpha, psi)?;
    let (tr, sr) = shifted_tan(pair.right.alpha, psi)?;
    let c = w_p - h * (tl - tr);
    Ok((c, Vector4::new(h * (sl - sr), -(tl - tr), 0.0, 0.0)))
}

/// Sum of squared width residuals.
pub fn energy(pairs: &[LanePair], psi: f64, h: f64, w_p: f64) -> Result<f64> {
    pairs.iter().try_fold(0.0, |acc, p| Ok(acc + residual(p, psi, h, w_p)?.0.powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    /// Accepted width range as multiples of the prior.
    pub min_width_ratio: f64,
    pub max_width_ratio: f64,
    /// Angle gap (radians) separating clusters of unlabeled lines.
    pub cluster_gap: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self { min_width_ratio: 0.5, max_width_ratio: 2.0, cluster_gap: 2f64.to_radians() }
    }
}

fn merge(group: &[RectifiedLine]) -> RectifiedLine {
    let total: f64 = group.iter().map(|l| l.weight).sum();
    let alpha = if total > 0.0 {
        group.iter().map(|l| l.weight * l.alpha).sum::<f64>() / total
    } else {
        group.iter().map(|l| l.alpha).sum::<f64>() / group.len() as f64
    };
    RectifiedLine { alpha, lateral_key: alpha.tan(), boundary_id: group[0].boundary_id, weight: total }
}

/// Collapses lines into one per boundary, sorted by `lateral_key`
/// descending. Labeled lines are grouped by id, unlabeled ones by gaps in
/// angle.
pub fn merge_boundaries(lines: &[RectifiedLine], cfg: &PairingConfig) -> Vec<RectifiedLine> {
    let mut labeled: Vec<RectifiedLine> = lines.iter().filter(|l| l.boundary_id.is_some()).copied().collect();
    labeled.sort_by_key(|l| l.boundary_id);
    let mut merged: Vec<RectifiedLine> = labeled
        .chunk_by(|a, b| a.boundary_id == b.boundary_id)
        .map(merge)
        .collect();

    let mut unlabeled: Vec<RectifiedLine> = lines.iter().filter(|l| l.boundary_id.is_none()).copied().collect();
    unlabeled.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    merged.extend(unlabeled.chunk_by(|a, b| b.alpha - a.alpha <= cfg.cluster_gap).map(merge));

    merged.sort_by(|a, b| b.lateral_key.total_cmp(&a.lateral_key));
    merged
}

/// Adjacent boundary pairs with a plausible width.
///
/// With a state `(psi, h)` the width itself is gated against `w_p`. Without
/// one, each pair's `tan(alpha_L) - tan(alpha_R)` is compared with the
/// median over all adjacent pairs, which estimates `w_p / h`.
pub fn pair_lanes(
    lines: &[RectifiedLine],
    w_p: f64,
    state: Option<(f64, f64)>,
    cfg: &PairingConfig,
) -> Result<Vec<LanePair>> {
    let bounds = merge_boundaries(lines, cfg);
    if bounds.len() < 3 {
        return Err(Error::TooFewBoundaries(bounds.len()));
    }
    let candidates: Vec<LanePair> = bounds
        .windows(2)
        .map(|w| LanePair { left: w[0], right: w[1] })
        .collect();
    let in_range = |ratio: f64| ratio >= cfg.min_width_ratio && ratio <= cfg.max_width_ratio;
    let pairs = match state {
        Some((psi, h)) => candidates
            .into_iter()
            .filter(|p| {
                lane_width(psi, h, p.left.alpha, p.right.alpha).is_ok_and(|w| in_range(w / w_p))
            })
            .collect(),
        None => {
            let spread = |p: &LanePair| p.left.lateral_key - p.right.lateral_key;
            let mut spreads: Vec<f64> = candidates.iter().map(spread).collect();
            spreads.sort_by(f64::total_cmp);
            let n = spreads.len();
            let median = if n % 2 == 1 {
                spreads[n / 2]
            } else {
                0.5 * (spreads[n / 2 - 1] + spreads[n / 2])
            };
            candidates
                .into_iter()
                .filter(|p| median > 0.0 && in_range(spread(p) / median))
                .collect()
        }
    };
    Ok(pairs)
}

/// Exhaustive-search box for the roll/height initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearch {
    /// Roll range and step (radians).
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_step: f64,
    /// Height range and step (meters).
    pub h_min: f64,
    pub h_max: f64,
    pub h_step: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for GridSearch {
    fn default() -> Self {
        Self {
            psi_min: (-5f64).to_radians(),
            psi_max: 5f64.to_radians(),
            psi_step: 0.25f64.to_radians(),
            h_min: 0.5,
            h_max: 3.0,
            h_step: 0.05,
            max_iterations: 50,
            step_tolerance: 1e-10,
        }
    }
}

impl GridSearch {
    pub fn validate(&self) -> Result<()> {
        let ok = self.psi_step > 0.0
            && self.h_step > 0.0
            && self.psi_max >= self.psi_min
            && self.h_max >= self.h_min
            && self.h_min > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid grid search: {self:?}")))
        }
    }

    fn axis(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(move |i| lo + i as f64 * step)
    }

    fn inside_margin(&self, psi: f64, h: f64) -> bool {
        let within = |v: f64, lo: f64, hi: f64| {
            let (c, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            (v - c).abs() <= 2.0 * half
        };
        within(psi, self.psi_min, self.psi_max) && within(h, self.h_min, self.h_max)
    }
}

/// Minimizes the width energy by a grid scan followed by Gauss-Newton.
pub fn init_grid_gn(pairs: &[LanePair], w_p: f64, search: &GridSearch) -> Result<(f64, f64)> {
    search.validate()?;
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for psi in GridSearch::axis(search.psi_min, search.psi_max, search.psi_step) {
        for h in GridSearch::axis(search.h_min, search.h_max, search.h_step) {
            if let Ok(e) = energy(pairs, psi, h, w_p) {
                if best.is_none_or(|b| e < b.2) {
                    best = Some((psi, h, e));
                }
            }
        }
    }
    let (mut psi, mut h, _) = best.ok_or(Error::TangentSingularity)?;

    for _ in 0..search.max_iterations {
        let mut jtj = Matrix2::<f64>::zeros();
        let mut jtr = Vector2::<f64>::zeros();
        for p in pairs {
            let (c, j) = residual(p, psi, h, w_p)
                .map_err(|e| Error::NonConvergence(format!("Gauss-Newton left the domain: {e}")))?;
            let j2 = Vector2::new(j[0], j[1]);
            jtj += j2 * j2.transpose();
            jtr += j2 * c;
        }
        let step = -jtj
            .pseudo_inverse(1e-12 * jtj.amax().max(f64::MIN_POSITIVE))
            .map_err(|e| Error::NonConvergence(e.to_string()))?
            * jtr;
        psi += step[0];
        h += step[1];
        if !psi.is_finite() || !h.is_finite() || h <= 0.0 || !search.inside_margin(psi, h) {
            return Err(Error::NonConvergence(format!("Gauss-Newton diverged to psi={psi}, h={h}")));
        }
        if step.norm() < search.step_tolerance {
            break;
        }
    }
    Ok((psi, h))
}

/// Noise and gating parameters of the roll-height filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollHeightFilterConfig {
    /// Process noise variances of the roll rate and height rate.
    pub w_rate: [f64; 2],
    /// Variance of each width residual (m^2).
    pub q: f64,
    /// Diagonal of the initial covariance.
    pub p0: [f64; 4],
    /// Innovation gate in standard deviations.
    pub gate_sigma: f64,
}

impl Default for RollHeightFilterConfig {
    fn default() -> Self {
        Self {
            w_rate: [0.05f64.to_radians().powi(2), 0.01f64.powi(2)],
            q: 0.05f64.powi(2),
            p0: [0.5f64.to_radians().powi(2), 0.05f64.powi(2), 0.05f64.to_radians().powi(2), 0.01f64.powi(2)],
            gate_sigma: 5.0,
        }
    }
}

impl RollHeightFilterConfig {
    pub fn process_noise(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 0.0, self.w_rate[0], self.w_rate[1]]))
    }

    pub fn initial_state(&self, s: &RollHeightState) -> GaussianState {
        GaussianState {
            x: s.to_vector(),
            p: DMatrix::from_diagonal(&DVector::from_row_slice(&self.p0)),
        }
    }
}

pub fn system_step(s: &RollHeightState, dt: f64) -> RollHeightState {
    RollHeightState { psi: s.psi + s.omega_psi * dt, h: s.h + s.v_h * dt, ..*s }
}

/// Jacobian of [`system_step`]; constant in the state.
pub fn system_jacobian(dt: f64) -> DMatrix<f64> {
    let mut f = DMatrix::identity(4, 4);
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// One predict/update cycle over the lane pairs of a frame.
pub fn step_frame(
    s: &GaussianState,
    pairs: &[LanePair],
    w_p: f64,
    dt: f64,
    cfg: &RollHeightFilterConfig,
) -> Result<FilterStep> {
    if s.dim() != 4 {
        return Err(Error::DimensionMismatch(format!("roll-height state has dim {}", s.dim())));
    }
    let f = system_jacobian(dt);
    let predicted = ekf::predict(
        s,
        |x| system_step(&RollHeightState::from_vector(x), dt).to_vector(),
        |_| f.clone(),
        &cfg.process_noise(),
    )?;
    let prior = RollHeightState::from_vector(&predicted.x);
    let rows: Vec<(f64, DVector<f64>)> = pairs
        .iter()
        .filter_map(|p| residual(p, prior.psi, prior.h, w_p).ok())
        .map(|(c, j)| (-c, DVector::from_column_slice(j.as_slice())))
        .collect();
    if rows.is_empty() {
        return Ok(FilterStep {
            state: predicted,
            outcome: StepOutcome::PredictionOnly(SkipReason::NoMeasurements),
        });
    }
    let (batch, gated) = ekf::gated_batch(&predicted, &rows, cfg.q, cfg.gate_sigma)?;
    if batch.is_empty() {
        return Ok(FilterStep { state: predicted, outcome: StepOutcome::PredictionOnly(SkipReason::AllGated) });
    }
    let mut state = ekf::update(&predicted, &batch)?;
    let limit = FRAC_PI_4 - 1e-6;
    state.x[0] = state.x[0].clamp(-limit, limit);
    state.x[1] = state.x[1].max(1e-3);
    Ok(FilterStep { state, outcome: StepOutcome::Updated { used: batch.len(), gated } })
}
