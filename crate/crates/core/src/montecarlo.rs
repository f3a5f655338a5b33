//! Repeated synthetic runs and RMSE against ground truth.
//!
//! Errors are computed from trace values as they would be written to disk,
//! so an RMSE recomputed from trace and observation files matches the one
//! computed in memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TraceRow;
use crate::par::{map_range, Execution};
use crate::pipeline::{run_sequence, PipelineConfig};
use crate::synth::{generate_sequence_with, SceneConfig};

/// RMSE of each parameter; angles in degrees, height in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub height_cm: f64,
    pub runs: usize,
    pub burn_in: usize,
}

impl RmseReport {
    pub fn values(&self) -> [f64; 4] {
        [self.pitch_deg, self.yaw_deg, self.roll_deg, self.height_cm]
    }
}

/// Sums of squared errors in degrees and meters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub sq: [f64; 4],
    pub count: usize,
}

impl ErrorSums {
    /// Adds one frame: `estimate` and `truth` are `[pitch, yaw, roll]` in
    /// degrees followed by height in meters.
    pub fn add(&mut self, estimate: [f64; 4], truth: [f64; 4]) {
        for i in 0..4 {
            self.sq[i] += (estimate[i] - truth[i]).powi(2);
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        for i in 0..4 {
            self.sq[i] += other.sq[i];
        }
        self.count += other.count;
    }

    pub fn report(&self, runs: usize, burn_in: usize) -> Result<RmseReport> {
        if self.count == 0 {
            return Err(Error::EmptyInput);
        }
        let rmse = |i: usize| (self.sq[i] / self.count as f64).sqrt();
        Ok(RmseReport {
            pitch_deg: rmse(0),
            yaw_deg: rmse(1),
            roll_deg: rmse(2),
            height_cm: 100.0 * rmse(3),
            runs,
            burn_in,
        })
    }
}

/// Error sums of one trace against per-frame ground truth, skipping frames
/// before `burn_in` and frames without truth.
pub fn trace_errors<'a>(
    rows: &[TraceRow],
    truth: impl Fn(usize) -> Option<&'a [f64; 4]>,
    burn_in: usize,
) -> ErrorSums {
    let mut sums = ErrorSums::default();
    for row in rows.iter().filter(|r| r.frame >= burn_in) {
        if let Some(gt) = truth(row.frame) {
            sums.add(row.values(), *gt);
        }
    }
    sums
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// Aggregate over the successful runs.
    pub rmse: Option<RmseReport>,
    pub failures: Vec<RunFailure>,
}

/// Seed of run `run`: consecutive seeds, which ChaCha expands into
/// unrelated streams.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

fn single_run(scene: &SceneConfig, pipeline: &PipelineConfig, seed: u64) -> Result<ErrorSums> {
    let scene = SceneConfig { rng_seed: seed, ..scene.clone() };
    let frames = generate_sequence_with(&scene, Execution::Sequential)?;
    let results = run_sequence(pipeline, &frames)?;
    let rows: Vec<TraceRow> = results.iter().map(TraceRow::from_result).collect();
    let truth: Vec<Option<[f64; 4]>> = frames.iter().map(|f| f.gt.map(|g| g.to_degrees())).collect();
    Ok(trace_errors(&rows, |t| truth.get(t).and_then(Option::as_ref), pipeline.burn_in))
}

/// Runs `runs` independently seeded sequences through the pipeline. Runs
/// are distributed according to `exec`; aggregation is in run order, so the
/// report does not depend on it.
pub fn run_monte_carlo(
    scene: &SceneConfig,
    runs: usize,
    pipeline: &PipelineConfig,
    exec: Execution,
) -> Result<MonteCarloReport> {
    if runs < 1 {
        return Err(Error::Config("at least one run is required".into()));
    }
    scene.validate()?;
    pipeline.validate()?;
    let per_run = map_range(exec, runs, |r| single_run(scene, pipeline, run_seed(scene.rng_seed, r)));
    let mut total = ErrorSums::default();
    let mut failures = Vec::new();
    let mut ok = 0;
    for (run, res) in per_run.into_iter().enumerate() {
        match res {
            Ok(sums) => {
                total.merge(&sums);
                ok += 1;
            }
            Err(e) => failures.push(RunFailure { run, seed: run_seed(scene.rng_seed, run), error: e.to_string() }),
        }
    }
    let rmse = if ok > 0 { Some(total.report(ok, pipeline.burn_in)?) } else { None };
    Ok(MonteCarloReport { rmse, failures })
}
