//! Per-frame orchestration of the two estimation stages.
//!
//! Each frame runs vanishing-point RANSAC, the pitch-yaw filter, line
//! rectification with the updated pitch and yaw, lane pairing, and the
//! roll-height filter. The first usable frame of each stage initializes it
//! from a single-frame solution instead of filtering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ekf::{FilterStep, GaussianState};
use crate::error::{Error, Result};
use crate::geometry::{ngc_of_segment, CameraIntrinsics, LineSegment, UnitVector3};
use crate::ipm::{bev_homography, BevConfig, Homography};
use crate::observation::{ExtrinsicEstimate, FrameObservation, PoseDeg};
use crate::par::Execution;
use crate::pitch_yaw::{self, PitchYawFilterConfig, PitchYawState};
use crate::roll_height::{
    self, init_grid_gn, pair_lanes, rectify_line, GridSearch, LanePair, PairingConfig,
    RollHeightFilterConfig, RollHeightState,
};
use crate::vp::{ransac_vp_with, RansacConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    /// Lane width prior (m).
    pub lane_width: f64,
    pub ransac: RansacConfig,
    pub pitch_yaw: PitchYawFilterConfig,
    pub roll_height: RollHeightFilterConfig,
    pub pairing: PairingConfig,
    pub grid: GridSearch,
    pub bev: BevConfig,
    /// Frames excluded from error statistics.
    pub burn_in: usize,
    /// Frame interval of the motion models.
    pub dt: f64,
    /// Reported before a stage has been initialized.
    pub prior: PoseDeg,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics { fx: 1000.0, fy: 1000.0, cx: 960.0, cy: 510.0 },
            lane_width: 3.7,
            ransac: RansacConfig::default(),
            pitch_yaw: PitchYawFilterConfig::default(),
            roll_height: RollHeightFilterConfig::default(),
            pairing: PairingConfig::default(),
            grid: GridSearch::default(),
            bev: BevConfig::default(),
            burn_in: 20,
            dt: 1.0,
            prior: PoseDeg { pitch_deg: 0.0, yaw_deg: 0.0, roll_deg: 0.0, height_m: 1.5 },
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.ransac.validate()?;
        self.grid.validate()?;
        self.bev.validate()?;
        self.prior.to_estimate()?;
        let non_negative = |v: &[f64]| v.iter().all(|x| *x >= 0.0);
        let py = &self.pitch_yaw;
        let rh = &self.roll_height;
        let ok = self.lane_width > 0.0
            && self.dt > 0.0
            && non_negative(&py.w_rate)
            && non_negative(&py.p0)
            && non_negative(&rh.w_rate)
            && non_negative(&rh.p0)
            && py.q > 0.0
            && rh.q > 0.0
            && py.gate_sigma > 0.0
            && rh.gate_sigma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("lane width, dt, noise variances and gates must be positive".into()))
        }
    }
}

/// What happened to each stage in a frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameFlags {
    pub init_pitch_yaw: bool,
    pub init_roll_height: bool,
    /// The pitch-yaw stage had no usable measurement this frame.
    pub predicted_pitch_yaw: bool,
    /// The roll-height stage had no usable measurement this frame.
    pub predicted_roll_height: bool,
}

impl FrameFlags {
    const TOKENS: [&'static str; 4] = ["init_py", "init_rh", "predict_py", "predict_rh"];

    fn bits(&self) -> [bool; 4] {
        [self.init_pitch_yaw, self.init_roll_height, self.predicted_pitch_yaw, self.predicted_roll_height]
    }

    pub fn is_prediction_only(&self) -> bool {
        self.predicted_pitch_yaw || self.predicted_roll_height
    }

    pub fn is_init(&self) -> bool {
        self.init_pitch_yaw || self.init_roll_height
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut bits = [false; 4];
        for token in s.split('|').filter(|t| !t.is_empty()) {
            let i = Self::TOKENS
                .iter()
                .position(|t| *t == token)
                .ok_or_else(|| Error::Format(format!("unknown flag {token:?}")))?;
            bits[i] = true;
        }
        let [init_pitch_yaw, init_roll_height, predicted_pitch_yaw, predicted_roll_height] = bits;
        Ok(Self { init_pitch_yaw, init_roll_height, predicted_pitch_yaw, predicted_roll_height })
    }
}

impl fmt::Display for FrameFlags {
    /// `|`-separated tokens, empty when no flag is set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set: Vec<&str> = Self::TOKENS
            .iter()
            .zip(self.bits())
            .filter_map(|(t, b)| b.then_some(*t))
            .collect();
        f.write_str(&set.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub estimate: ExtrinsicEstimate,
    /// Size of the vanishing-point consensus set.
    pub inliers: usize,
    /// RMS of the orthogonality residuals over the inliers at the posterior.
    pub residual_pitch_yaw: f64,
    /// RMS of the lane-width residuals (m) at the posterior.
    pub residual_roll_height: f64,
    pub pairs: usize,
    pub flags: FrameFlags,
    pub homography: Option<Homography>,
}

/// Sequential two-stage estimator.
#[derive(Debug, Clone)]
pub struct Calibrator {
    cfg: PipelineConfig,
    pitch_yaw: Option<GaussianState>,
    roll_height: Option<GaussianState>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

impl Calibrator {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, pitch_yaw: None, roll_height: None })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn pitch_yaw_state(&self) -> Option<&GaussianState> {
        self.pitch_yaw.as_ref()
    }

    pub fn roll_height_state(&self) -> Option<&GaussianState> {
        self.roll_height.as_ref()
    }

    /// Current estimate, falling back to the prior for stages that have
    /// not been initialized.
    pub fn estimate(&self) -> ExtrinsicEstimate {
        let prior = self.cfg.prior.to_estimate().expect("validated prior");
        let mut est = prior;
        let mut std = [0.0; 4];
        if let Some(s) = &self.pitch_yaw {
            est.theta = s.x[0];
            est.phi = s.x[1];
            std[0] = s.p[(0, 0)].max(0.0).sqrt();
            std[1] = s.p[(1, 1)].max(0.0).sqrt();
        }
        if let Some(s) = &self.roll_height {
            est.psi = s.x[0];
            est.h = s.x[1];
            std[2] = s.p[(0, 0)].max(0.0).sqrt();
            std[3] = s.p[(1, 1)].max(0.0).sqrt();
        }
        if self.pitch_yaw.is_some() && self.roll_height.is_some() {
            est.std = Some(std);
        }
        est
    }

    /// Runs both stages on one frame. Failures inside a stage degrade it to
    /// prediction only; errors are returned only for inconsistent filter
    /// state.
    pub fn process_frame(&mut self, obs: &FrameObservation) -> Result<FrameResult> {
        let cfg = &self.cfg;
        let k = &cfg.intrinsics;
        let mut flags = FrameFlags::default();

        let vp = if obs.segments.len() >= 2 {
            let ransac = RansacConfig {
                rng_seed: cfg.ransac.rng_seed.wrapping_add(obs.frame_index as u64),
                ..cfg.ransac
            };
            ransac_vp_with(&obs.segments, k, &ransac, cfg.execution).ok()
        } else {
            None
        };
        let inliers: &[LineSegment] = vp.as_ref().map_or(&[], |r| r.inliers.as_slice());

        match (&self.pitch_yaw, &vp) {
            (Some(s), _) => {
                let step = pitch_yaw::step_frame(s, inliers, k, cfg.dt, &cfg.pitch_yaw)?;
                flags.predicted_pitch_yaw = step.is_prediction_only();
                self.pitch_yaw = Some(step.state);
            }
            (None, Some(r)) => match pitch_yaw::init_from_vd(&r.vd) {
                Ok(s) => {
                    self.pitch_yaw = Some(cfg.pitch_yaw.initial_state(&s));
                    flags.init_pitch_yaw = true;
                }
                Err(_) => flags.predicted_pitch_yaw = true,
            },
            (None, None) => flags.predicted_pitch_yaw = true,
        }

        let mut pairs: Vec<LanePair> = Vec::new();
        if let Some(py) = &self.pitch_yaw {
            let (theta, phi) = (py.x[0], py.x[1]);
            let lines: Vec<_> = inliers
                .iter()
                .filter_map(|seg| rectify_line(seg, k, theta, phi).ok())
                .collect();
            let gate_state = self
                .roll_height
                .as_ref()
                .map(|s| (s.x[0] + s.x[2] * cfg.dt, s.x[1] + s.x[3] * cfg.dt));
            pairs = pair_lanes(&lines, cfg.lane_width, gate_state, &cfg.pairing).unwrap_or_default();
        }

        match &self.roll_height {
            Some(s) => {
                let step: FilterStep =
                    roll_height::step_frame(s, &pairs, cfg.lane_width, cfg.dt, &cfg.roll_height)?;
                flags.predicted_roll_height = step.is_prediction_only();
                self.roll_height = Some(step.state);
            }
            None => match init_grid_gn(&pairs, cfg.lane_width, &cfg.grid) {
                Ok((psi, h)) => {
                    let s = RollHeightState { psi, h, omega_psi: 0.0, v_h: 0.0 };
                    self.roll_height = Some(cfg.roll_height.initial_state(&s));
                    flags.init_roll_height = true;
                }
                Err(_) => flags.predicted_roll_height = true,
            },
        }

        let estimate = self.estimate();
        let residual_pitch_yaw = self.pitch_yaw.as_ref().map_or(0.0, |s| {
            let post = PitchYawState::from_vector(&s.x);
            rms(inliers
                .iter()
                .filter_map(|seg| ngc_of_segment(k, seg).ok())
                .map(|n| pitch_yaw::measurement(&post, &n).0))
        });
        let residual_roll_height = rms(pairs
            .iter()
            .filter_map(|p| roll_height::residual(p, estimate.psi, estimate.h, cfg.lane_width).ok())
            .map(|(c, _)| c));
        let homography = bev_homography(k, estimate.theta, estimate.phi, estimate.psi, estimate.h, &cfg.bev).ok();

        Ok(FrameResult {
            frame_index: obs.frame_index,
            estimate,
            inliers: inliers.len(),
            residual_pitch_yaw,
            residual_roll_height,
            pairs: pairs.len(),
            flags,
            homography,
        })
    }
}

/// Runs a fresh calibrator over a whole sequence, one result per frame.
pub fn run_sequence(cfg: &PipelineConfig, frames: &[FrameObservation]) -> Result<Vec<FrameResult>> {
    let mut cal = Calibrator::new(cfg.clone())?;
    frames.iter().map(|f| cal.process_frame(f)).collect()
}

/// Single-frame least-squares solution without temporal filtering: pitch
/// and yaw minimize the squared orthogonality residuals of the consensus
/// set, roll and height minimize the lane-width energy.
///
/// Labeled frames with fewer than three distinct boundaries are rejected
/// up front.
pub fn batch_oracle(obs: &FrameObservation, cfg: &PipelineConfig) -> Result<ExtrinsicEstimate> {
    cfg.validate()?;
    if obs.segments.iter().all(|s| s.boundary_id.is_some()) {
        let mut ids: Vec<i64> = obs.segments.iter().filter_map(|s| s.boundary_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 3 {
            return Err(Error::TooFewBoundaries(ids.len()));
        }
    }
    let k = &cfg.intrinsics;
    let ransac = RansacConfig { rng_seed: cfg.ransac.rng_seed.wrapping_add(obs.frame_index as u64), ..cfg.ransac };
    let vp = ransac_vp_with(&obs.segments, k, &ransac, cfg.execution)?;
    let ngcs: Vec<UnitVector3> = vp.inliers.iter().filter_map(|s| ngc_of_segment(k, s).ok()).collect();
    let (theta, phi) = pitch_yaw::batch_estimate(&ngcs)?;
    let lines: Vec<_> = vp
        .inliers
        .iter()
        .filter_map(|seg| rectify_line(seg, k, theta, phi).ok())
        .collect();
    let pairs = pair_lanes(&lines, cfg.lane_width, None, &cfg.pairing)?;
    let (psi, h) = init_grid_gn(&pairs, cfg.lane_width, &cfg.grid)?;
    ExtrinsicEstimate::new(theta, phi, psi, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_frame, SceneConfig};

    #[test]
    fn flags_round_trip() {
        let all = FrameFlags { init_pitch_yaw: true, init_roll_height: true, predicted_pitch_yaw: true, predicted_roll_height: true };
        assert_eq!(all.to_string(), "init_py|init_rh|predict_py|predict_rh");
        for f in [FrameFlags::default(), all, FrameFlags { predicted_roll_height: true, ..Default::default() }] {
            assert_eq!(FrameFlags::parse(&f.to_string()).unwrap(), f);
        }
        assert!(FrameFlags::parse("bogus").is_err());
    }

    #[test]
    fn first_noiseless_frame_initializes_both_stages() {
        let scene = SceneConfig::default();
        let obs = generate_frame(&scene, 0).unwrap();
        let mut cal = Calibrator::new(PipelineConfig::default()).unwrap();
        let r = cal.process_frame(&obs).unwrap();
        assert!(r.flags.init_pitch_yaw && r.flags.init_roll_height && !r.flags.is_prediction_only());
        let gt = obs.gt.unwrap();
        assert!((r.estimate.theta - gt.theta).abs() < 1e-4 && (r.estimate.phi - gt.phi).abs() < 1e-4);
        assert!((r.estimate.psi - gt.psi).abs() < 1e-4 && (r.estimate.h - gt.h).abs() < 1e-3);
        assert!(r.homography.is_some());
    }

    #[test]
    fn sparse_frame_is_prediction_only() {
        let scene = SceneConfig::default();
        let mut cal = Calibrator::new(PipelineConfig::default()).unwrap();
        cal.process_frame(&generate_frame(&scene, 0).unwrap()).unwrap();
        let mut obs = generate_frame(&scene, 1).unwrap();
        obs.segments.truncate(1);
        let r = cal.process_frame(&obs).unwrap();
        assert!(r.flags.predicted_pitch_yaw && r.flags.predicted_roll_height);
        assert_eq!(r.inliers, 0);
    }

    #[test]
    fn oracle_is_exact_on_noiseless_frames() {
        let scene = SceneConfig::default();
        for t in [0, 17, 42] {
            let obs = generate_frame(&scene, t).unwrap();
            let est = batch_oracle(&obs, &PipelineConfig::default()).unwrap();
            let gt = obs.gt.unwrap();
            for (a, b) in [(est.theta, gt.theta), (est.phi, gt.phi), (est.psi, gt.psi), (est.h, gt.h)] {
                assert!((a - b).abs() < 1e-8, "frame {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn oracle_needs_several_boundaries() {
        let scene = SceneConfig { n_lanes: 2, ..SceneConfig::default() };
        let mut obs = generate_frame(&scene, 0).unwrap();
        obs.segments.retain(|s| s.boundary_id == Some(1));
        assert!(matches!(batch_oracle(&obs, &PipelineConfig::default()), Err(Error::TooFewBoundaries(_))));
    }
}
