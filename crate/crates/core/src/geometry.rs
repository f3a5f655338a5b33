//! Pinhole camera and Gaussian-sphere primitives.
//!
//! Camera frame: x right, y down, z along the optical axis. A line in the
//! image maps to a great circle on the unit sphere centred at the optical
//! centre; the great circle is represented by its unit normal (NGC).

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-plane point in pixels.
pub type Pixel = Vector2<f64>;

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        Self { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "fx={}, fy={}, cx={}, cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Ray `K^-1 (p, 1)` through pixel `p`; not normalized.
    pub fn back_project(&self, p: &Pixel) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    /// Homogeneous pixel `K d` of a camera-frame direction.
    pub fn project_homogeneous(&self, d: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.fx * d.x + self.cx * d.z,
            self.fy * d.y + self.cy * d.z,
            d.z,
        )
    }

    /// Pixel of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Pixel {
        Pixel::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// An observed piece of a lane boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub p1: Pixel,
    pub p2: Pixel,
    pub boundary_id: Option<i64>,
}

impl LineSegment {
    pub fn new(p1: Pixel, p2: Pixel, boundary_id: Option<i64>) -> Result<Self> {
        if !(p1.iter().chain(p2.iter()).all(|v| v.is_finite())) || (p2 - p1).norm() <= 1e-9 {
            return Err(Error::DegenerateSegment);
        }
        Ok(Self { p1, p2, boundary_id })
    }

    pub fn length(&self) -> f64 {
        (self.p2 - self.p1).norm()
    }

    pub fn midpoint(&self) -> Pixel {
        (self.p1 + self.p2) * 0.5
    }

    pub fn direction(&self) -> Vector2<f64> {
        self.p2 - self.p1
    }

    pub fn swapped(&self) -> Self {
        Self { p1: self.p2, p2: self.p1, boundary_id: self.boundary_id }
    }
}

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3(Vector3<f64>);

impl UnitVector3 {
    /// Normalizes `v`; `None` when its norm is below `min_norm`.
    pub fn try_normalize(v: Vector3<f64>, min_norm: f64) -> Option<Self> {
        let n = v.norm();
        (n.is_finite() && n >= min_norm).then(|| Self(v / n))
    }

    pub fn new_normalize(v: Vector3<f64>) -> Self {
        Self(v.normalize())
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    /// Flips the vector into the `z >= 0` hemisphere.
    pub fn canonical(self) -> Self {
        if self.0.z < 0.0 {
            Self(-self.0)
        } else {
            self
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    /// Angle between the two directions, ignoring sign.
    pub fn axis_angle(&self, other: &Self) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0).abs())
    }
}

/// Normal of the great circle spanned by a segment.
pub fn ngc_of_segment(k: &CameraIntrinsics, seg: &LineSegment) -> Result<UnitVector3> {
    let a = k.back_project(&seg.p1);
    let b = k.back_project(&seg.p2);
    UnitVector3::try_normalize(a.cross(&b), 1e-12).ok_or(Error::DegenerateSegment)
}

/// Pitch-yaw rotation `R(theta) R(phi)`: pitch about x, yaw about y.
pub fn rotation_pitch_yaw(theta: f64, phi: f64) -> Rotation3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let pitch = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, -st, 0.0, st, ct);
    let yaw = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    Rotation3::from_matrix_unchecked(pitch * yaw)
}

/// Roll about the optical axis, in the orientation used by the BEV mapping.
pub fn rotation_roll(psi: f64) -> Rotation3<f64> {
    let (s, c) = psi.sin_cos();
    Rotation3::from_matrix_unchecked(Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Pitch and yaw that rotate the optical axis onto `v`.
///
/// Pitch is `atan2(-v_y, v_z)`. Yaw is taken against the full `(v_y, v_z)`
/// magnitude so that the result is the exact inverse of
/// `rotation_pitch_yaw(theta, phi) * e_z`; the two agree when pitch is zero.
pub fn pitch_yaw_from_vd(v: &UnitVector3) -> Result<(f64, f64)> {
    if v.z().abs() < 1e-9 {
        return Err(Error::DegenerateVd(v.z()));
    }
    let theta = (-v.y()).atan2(v.z());
    let phi = v.x().atan2(v.y().hypot(v.z()));
    Ok((theta, phi))
}

/// Vanishing direction of an image vanishing point, in the `z >= 0` hemisphere.
pub fn vd_from_vp(k: &CameraIntrinsics, vp: &Pixel) -> UnitVector3 {
    UnitVector3::new_normalize(k.back_project(vp)).canonical()
}
