//! Per-frame inputs and pose estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LineSegment;

/// Camera pose relative to the road: angles in radians, height in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicEstimate {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
    pub h: f64,
    /// Standard deviations of `[theta, phi, psi, h]`.
    pub std: Option<[f64; 4]>,
}

impl ExtrinsicEstimate {
    pub fn new(theta: f64, phi: f64, psi: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || ![theta, phi, psi].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("invalid extrinsics ({theta}, {phi}, {psi}, {h})")));
        }
        Ok(Self { theta, phi, psi, h, std: None })
    }

    /// Pitch, yaw and roll in degrees followed by height in meters.
    pub fn to_degrees(&self) -> [f64; 4] {
        [self.theta.to_degrees(), self.phi.to_degrees(), self.psi.to_degrees(), self.h]
    }

    pub fn to_pose_deg(&self) -> PoseDeg {
        let [pitch_deg, yaw_deg, roll_deg, height_m] = self.to_degrees();
        PoseDeg { pitch_deg, yaw_deg, roll_deg, height_m }
    }
}

/// Pose in file units: degrees and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDeg {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub height_m: f64,
}

impl PoseDeg {
    pub fn to_estimate(&self) -> Result<ExtrinsicEstimate> {
        ExtrinsicEstimate::new(
            self.pitch_deg.to_radians(),
            self.yaw_deg.to_radians(),
            self.roll_deg.to_radians(),
            self.height_m,
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.pitch_deg, self.yaw_deg, self.roll_deg, self.height_m]
    }
}

/// All segments observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub segments: Vec<LineSegment>,
    pub gt: Option<ExtrinsicEstimate>,
}
