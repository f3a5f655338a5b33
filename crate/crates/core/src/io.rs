//! File formats: JSON Lines observations, intrinsics and homography JSON,
//! CSV traces and RMSE reports. Angles are stored in degrees.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, LineSegment};
use crate::ipm::Homography;
use crate::observation::{ExtrinsicEstimate, FrameObservation, PoseDeg};
use crate::pipeline::{FrameFlags, FrameResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub boundary_id: Option<i64>,
}

/// One line of an observation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub frame: usize,
    pub segments: Vec<SegmentRecord>,
    pub gt: Option<PoseDeg>,
}

impl ObservationRecord {
    pub fn from_observation(obs: &FrameObservation) -> Self {
        Self {
            frame: obs.frame_index,
            segments: obs
                .segments
                .iter()
                .map(|s| SegmentRecord { p1: [s.p1.x, s.p1.y], p2: [s.p2.x, s.p2.y], boundary_id: s.boundary_id })
                .collect(),
            gt: obs.gt.map(|g| g.to_pose_deg()),
        }
    }

    pub fn to_observation(&self) -> Result<FrameObservation> {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                LineSegment::new(Vector2::new(s.p1[0], s.p1[1]), Vector2::new(s.p2[0], s.p2[1]), s.boundary_id)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("frame {}: {e}", self.frame)))?;
        let gt = self.gt.as_ref().map(PoseDeg::to_estimate).transpose()?;
        Ok(FrameObservation { frame_index: self.frame, segments, gt })
    }
}

pub fn write_observations<W: Write>(mut w: W, records: &[ObservationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON Lines, skipping blank lines.
pub fn read_observations<R: BufRead>(r: R) -> Result<Vec<ObservationRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_observations(path: &Path, records: &[ObservationRecord]) -> Result<()> {
    write_observations(BufWriter::new(File::create(path)?), records)
}

pub fn load_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    read_observations(BufReader::new(File::open(path)?))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = load_json(path)?;
    k.validate()?;
    Ok(k)
}

pub fn save_homography(path: &Path, hom: &Homography) -> Result<()> {
    save_json(path, &hom.to_rows())
}

pub fn load_homography(path: &Path) -> Result<Homography> {
    Homography::from_rows(load_json(path)?)
}

/// One row of a calibration trace. Values hold exactly what the file
/// shows: degrees rounded to 6 decimals, meters to 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame: usize,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub height_m: f64,
    pub inliers: usize,
    pub flags: String,
}

fn quantize(v: f64, decimals: usize) -> f64 {
    format!("{v:.decimals$}").parse().expect("formatted float parses")
}

impl TraceRow {
    pub fn from_result(r: &FrameResult) -> Self {
        Self::from_estimate(r.frame_index, &r.estimate, r.inliers, &r.flags)
    }

    pub fn from_estimate(frame: usize, est: &ExtrinsicEstimate, inliers: usize, flags: &FrameFlags) -> Self {
        let [pitch, yaw, roll, h] = est.to_degrees();
        Self {
            frame,
            pitch_deg: quantize(pitch, 6),
            yaw_deg: quantize(yaw, 6),
            roll_deg: quantize(roll, 6),
            height_m: quantize(h, 5),
            inliers,
            flags: flags.to_string(),
        }
    }

    pub fn pose(&self) -> PoseDeg {
        PoseDeg { pitch_deg: self.pitch_deg, yaw_deg: self.yaw_deg, roll_deg: self.roll_deg, height_m: self.height_m }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.pitch_deg, self.yaw_deg, self.roll_deg, self.height_m]
    }

    pub fn parsed_flags(&self) -> Result<FrameFlags> {
        FrameFlags::parse(&self.flags)
    }
}

pub const TRACE_HEADER: [&str; 7] = ["frame", "pitch_deg", "yaw_deg", "roll_deg", "height_m", "inliers", "flags"];

pub fn write_trace<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in rows {
        out.write_record([
            r.frame.to_string(),
            format!("{:.6}", r.pitch_deg),
            format!("{:.6}", r.yaw_deg),
            format!("{:.6}", r.roll_deg),
            format!("{:.5}", r.height_m),
            r.inliers.to_string(),
            r.flags.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Format(format!("unexpected trace header {header:?}")));
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
    for r in &rows {
        r.parsed_flags()?;
    }
    Ok(rows)
}

pub fn save_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), rows)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace(BufReader::new(File::open(path)?))
}
