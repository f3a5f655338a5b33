//! Synthetic straight-road scenes: lane-boundary segment observations under
//! smoothly varying extrinsics, plus a simple renderer for warping tests.

use std::f64::consts::{FRAC_PI_2, TAU};

use image::GrayImage;
use nalgebra::{Rotation3, Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_pitch_yaw, rotation_roll, CameraIntrinsics, LineSegment, UnitVector3};
use crate::observation::{ExtrinsicEstimate, FrameObservation, PoseDeg};
use crate::par::{for_each_row, map_range, Execution};
use crate::vp::line_point_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub width: u32,
    pub height: u32,
    pub n_lanes: usize,
    pub lane_width_m: f64,
    pub point_spacing_px: f64,
    pub max_pairs_per_boundary: usize,
    /// Variance of the Gaussian noise on each endpoint coordinate (px^2).
    pub noise_var_px2: f64,
    pub rng_seed: u64,
    pub nominal: PoseDeg,
    pub amplitude: PoseDeg,
    /// Sinusoid periods in frames for pitch, yaw, roll and height.
    pub period_frames: [f64; 4],
    /// Visible depth range along the road (m).
    pub min_depth_m: f64,
    pub max_depth_m: f64,
    /// Painted marking width used by [`render_frame`] (m).
    pub marking_width_m: f64,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 300,
            width: 1920,
            height: 1020,
            n_lanes: 5,
            lane_width_m: 3.7,
            point_spacing_px: 30.0,
            max_pairs_per_boundary: 70,
            noise_var_px2: 0.0,
            rng_seed: 0,
            nominal: PoseDeg { pitch_deg: 1.0, yaw_deg: 0.5, roll_deg: 0.3, height_m: 1.5 },
            amplitude: PoseDeg { pitch_deg: 0.5, yaw_deg: 0.5, roll_deg: 0.5, height_m: 0.05 },
            period_frames: [100.0; 4],
            min_depth_m: 0.5,
            max_depth_m: 100.0,
            marking_width_m: 0.15,
            intrinsics: CameraIntrinsics { fx: 1000.0, fy: 1000.0, cx: 960.0, cy: 510.0 },
        }
    }
}

impl SceneConfig {
    /// Same scene with all motion amplitudes set to zero.
    pub fn constant(mut self) -> Self {
        self.amplitude = PoseDeg { pitch_deg: 0.0, yaw_deg: 0.0, roll_deg: 0.0, height_m: 0.0 };
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_frames < 1 {
            return fail("n_frames must be at least 1");
        }
        if self.n_lanes < 2 {
            return fail("n_lanes must be at least 2");
        }
        if !(self.noise_var_px2 >= 0.0) {
            return fail("noise variance must be non-negative");
        }
        if !(self.point_spacing_px > 0.0) {
            return fail("point spacing must be positive");
        }
        if self.width < 2 || self.height < 2 {
            return fail("image must be at least 2x2");
        }
        if !(self.lane_width_m > 0.0) || !(self.marking_width_m >= 0.0) {
            return fail("lane and marking widths must be positive");
        }
        if !(self.min_depth_m > 0.0 && self.max_depth_m > self.min_depth_m) {
            return fail("depth range must satisfy 0 < min < max");
        }
        if self.period_frames.iter().any(|p| !(*p > 0.0)) {
            return fail("periods must be positive");
        }
        if self.nominal.height_m - self.amplitude.height_m.abs() <= 0.0 {
            return fail("camera would go below the ground plane");
        }
        let max_angle = [
            (self.nominal.pitch_deg, self.amplitude.pitch_deg),
            (self.nominal.yaw_deg, self.amplitude.yaw_deg),
            (self.nominal.roll_deg, self.amplitude.roll_deg),
        ]
        .iter()
        .map(|(n, a)| n.abs() + a.abs())
        .fold(0.0, f64::max);
        if max_angle >= 45.0 {
            return fail("camera angles must stay below 45 degrees");
        }
        Ok(())
    }

    /// Lateral offsets of the boundaries, left to right, centered on the camera.
    pub fn boundary_offsets(&self) -> Vec<f64> {
        (0..=self.n_lanes)
            .map(|i| (i as f64 - self.n_lanes as f64 / 2.0) * self.lane_width_m)
            .collect()
    }

    /// Ground-truth pose of frame `t`.
    pub fn pose_at(&self, t: usize) -> ExtrinsicEstimate {
        let wave = |nominal: f64, amp: f64, period: f64| nominal + amp * (TAU * t as f64 / period).sin();
        let (n, a, p) = (&self.nominal, &self.amplitude, &self.period_frames);
        ExtrinsicEstimate {
            theta: wave(n.pitch_deg, a.pitch_deg, p[0]).to_radians(),
            phi: wave(n.yaw_deg, a.yaw_deg, p[1]).to_radians(),
            psi: wave(n.roll_deg, a.roll_deg, p[2]).to_radians(),
            h: wave(n.height_m, a.height_m, p[3]),
            std: None,
        }
    }
}

/// Rotation taking road coordinates (`x` right, `y` down to the ground at
/// `y = h`, `z` forward) into camera coordinates.
pub fn camera_from_road(pose: &ExtrinsicEstimate) -> Rotation3<f64> {
    rotation_pitch_yaw(pose.theta, pose.phi) * rotation_roll(pose.psi).inverse()
}

/// Clips the segment `a -> b` to `[0, w] x [0, h]` and returns the parameter range.
fn clip_to_box(a: Vector2<f64>, b: Vector2<f64>, w: f64, h: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, w - a.x), (-d.y, a.y), (d.y, h - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Equally spaced image points along the visible part of one boundary,
/// starting at the near end.
pub fn boundary_points(cfg: &SceneConfig, pose: &ExtrinsicEstimate, x: f64) -> Result<Vec<Vector2<f64>>> {
    let rot = camera_from_road(pose);
    let near = rot * Vector3::new(x, pose.h, cfg.min_depth_m);
    let far = rot * Vector3::new(x, pose.h, cfg.max_depth_m);
    if near.z <= 0.0 || far.z <= 0.0 {
        return Err(Error::Config("road extends behind the camera".into()));
    }
    let (pa, pb) = (cfg.intrinsics.project(&near), cfg.intrinsics.project(&far));
    let Some((t0, t1)) = clip_to_box(pa, pb, (cfg.width - 1) as f64, (cfg.height - 1) as f64) else {
        return Ok(Vec::new());
    };
    let start = pa + (pb - pa) * t0;
    let end = pa + (pb - pa) * t1;
    let len = (end - start).norm();
    if len == 0.0 {
        return Ok(vec![start]);
    }
    let dir = (end - start) / len;
    let n = (len / cfg.point_spacing_px).floor() as usize + 1;
    Ok((0..n).map(|i| start + dir * (i as f64 * cfg.point_spacing_px)).collect())
}

/// `k`-th pair `(i, j)`, `i < j`, in row-major order over `n` items.
fn decode_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Generates one frame. The random stream depends only on the seed and
/// the frame index.
pub fn generate_frame(cfg: &SceneConfig, frame: usize) -> Result<FrameObservation> {
    let pose = cfg.pose_at(frame);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(frame as u64);

    let mut clean: Vec<(Vector2<f64>, Vector2<f64>, i64)> = Vec::new();
    for (id, x) in cfg.boundary_offsets().into_iter().enumerate() {
        let pts = boundary_points(cfg, &pose, x)?;
        let n = pts.len();
        if n < 2 {
            continue;
        }
        let total = n * (n - 1) / 2;
        let picks = index::sample(&mut rng, total, cfg.max_pairs_per_boundary.min(total));
        for k in picks.iter() {
            let (i, j) = decode_pair(k, n);
            clean.push((pts[i], pts[j], id as i64));
        }
    }

    let noise = Normal::new(0.0, cfg.noise_var_px2.sqrt())
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut segments = Vec::with_capacity(clean.len());
    for (a, b, id) in clean {
        let mut jitter = || Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        let (pa, pb) = (a + jitter(), b + jitter());
        if let Ok(seg) = LineSegment::new(pa, pb, Some(id)) {
            segments.push(seg);
        }
    }
    Ok(FrameObservation { frame_index: frame, segments, gt: Some(pose) })
}

pub fn generate_sequence(cfg: &SceneConfig) -> Result<Vec<FrameObservation>> {
    generate_sequence_with(cfg, Execution::default())
}

/// Generates every frame of a sequence; frames are independent, so `exec`
/// does not change the output.
pub fn generate_sequence_with(cfg: &SceneConfig, exec: Execution) -> Result<Vec<FrameObservation>> {
    cfg.validate()?;
    map_range(exec, cfg.n_frames, |t| generate_frame(cfg, t)).into_iter().collect()
}

/// Appends clutter segments whose angle to the true vanishing point is at
/// least `min_angle`, so that they make up `fraction` of the result.
///
/// Returns the segments and a per-segment outlier flag.
pub fn inject_outliers<R: Rng>(
    obs: &FrameObservation,
    cfg: &SceneConfig,
    fraction: f64,
    min_angle: f64,
    rng: &mut R,
) -> Result<(Vec<LineSegment>, Vec<bool>)> {
    if !(0.0..1.0).contains(&fraction) || !(min_angle < FRAC_PI_2) {
        return Err(Error::Config(format!("invalid outlier fraction {fraction} or angle {min_angle}")));
    }
    let gt = obs.gt.ok_or_else(|| Error::Config("outlier injection needs ground truth".into()))?;
    let k = &cfg.intrinsics;
    let vd = UnitVector3::new_normalize(camera_from_road(&gt) * Vector3::z());
    let vp = k.project_homogeneous(vd.as_vector());
    let n_out = (fraction * obs.segments.len() as f64 / (1.0 - fraction)).round() as usize;

    let mut segments = obs.segments.clone();
    let mut flags = vec![false; segments.len()];
    while flags.len() < obs.segments.len() + n_out {
        let mid = Vector2::new(
            rng.random_range(0.0..cfg.width as f64),
            rng.random_range(0.0..cfg.height as f64),
        );
        let to_vp = Vector2::new(vp.x - vp.z * mid.x, vp.y - vp.z * mid.y);
        let base = to_vp.y.atan2(to_vp.x);
        let offset = rng.random_range(min_angle..FRAC_PI_2) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let half = 0.5 * rng.random_range(40.0..300.0);
        let d = Vector2::new((base + offset).cos(), (base + offset).sin()) * half;
        let Ok(seg) = LineSegment::new(mid - d, mid + d, None) else { continue };
        if line_point_angle(&vd, &seg, k).is_ok_and(|a| a >= min_angle) {
            segments.push(seg);
            flags.push(true);
        }
    }
    Ok((segments, flags))
}

/// Renders the painted boundaries as white strips on black, with exact
/// horizontal coverage per pixel.
pub fn render_frame(cfg: &SceneConfig, pose: &ExtrinsicEstimate, exec: Execution) -> GrayImage {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let road_from_cam = camera_from_road(pose).inverse();
    let k_inv = cfg.intrinsics.inverse();
    let offsets = cfg.boundary_offsets();
    let half = 0.5 * cfg.marking_width_m;
    let ground = |u: f64, v: f64| -> Option<(f64, f64)> {
        let r = road_from_cam * (k_inv * Vector3::new(u, v, 1.0));
        (r.y > 0.0).then(|| (pose.h * r.x / r.y, pose.h * r.z / r.y))
    };
    let mut data = vec![0u8; w * h];
    for_each_row(exec, &mut data, w, |v, row| {
        let edges: Vec<Option<(f64, f64)>> = (0..=w).map(|u| ground(u as f64 - 0.5, v as f64)).collect();
        for (u, px) in row.iter_mut().enumerate() {
            let (Some((xa, za)), Some((xb, zb))) = (edges[u], edges[u + 1]) else { continue };
            let z = 0.5 * (za + zb);
            if z < cfg.min_depth_m || z > cfg.max_depth_m {
                continue;
            }
            let (lo, hi) = (xa.min(xb), xa.max(xb));
            if hi <= lo {
                continue;
            }
            let covered: f64 = offsets
                .iter()
                .map(|x| (hi.min(x + half) - lo.max(x - half)).max(0.0))
                .sum();
            *px = (255.0 * (covered / (hi - lo)).min(1.0)).round() as u8;
        }
    });
    GrayImage::from_raw(cfg.width, cfg.height, data).expect("buffer matches image size")
}
