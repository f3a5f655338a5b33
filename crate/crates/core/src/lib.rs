//! Online estimation of a forward camera's pitch, yaw, roll and height
//! above the road from lane-boundary line segments, with bird's-eye-view
//! homographies and a synthetic evaluation harness.

pub mod ekf;
pub mod error;
pub mod geometry;
pub mod io;
pub mod ipm;
pub mod montecarlo;
pub mod observation;
pub mod par;
pub mod pipeline;
pub mod pitch_yaw;
pub mod roll_height;
pub mod synth;
pub mod vp;

pub use error::{Error, Result};
pub use par::Execution;
