//! `lanecal`: synthetic data, calibration, evaluation and BEV warping.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lanecal::io::{self, ObservationRecord, TraceRow};
use lanecal::ipm::{self, BevConfig};
use lanecal::montecarlo::{run_monte_carlo, trace_errors, RmseReport};
use lanecal::observation::PoseDeg;
use lanecal::pipeline::{batch_oracle, run_sequence, FrameFlags, PipelineConfig};
use lanecal::synth::{generate_sequence_with, SceneConfig};
use lanecal::Execution;

#[derive(Parser)]
#[command(name = "lanecal", version, about = "Camera pitch, yaw, roll and height from lane markings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic observation sequence.
    Synth(SynthArgs),
    /// Run the filter over an observation file and write a trace.
    Calibrate(CalibrateArgs),
    /// RMSE of a trace against the ground truth in an observation file.
    Eval(EvalArgs),
    /// Repeated synthetic runs, aggregated into one RMSE report.
    Montecarlo(MonteCarloArgs),
    /// Emit a BEV homography and optionally warp an image with it.
    Ipm(IpmArgs),
    /// Per-frame batch estimates without temporal filtering.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Scene configuration JSON; flags below override it.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    /// Endpoint noise variance in px^2.
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hold the pose fixed at its nominal value.
    #[arg(long)]
    constant: bool,
}

impl SceneArgs {
    fn load(&self) -> Result<SceneConfig> {
        let mut cfg = match &self.scene {
            Some(p) => read_json::<SceneConfig>(p)?,
            None => SceneConfig::default(),
        };
        if let Some(n) = self.frames {
            cfg.n_frames = n;
        }
        if let Some(v) = self.noise_var {
            cfg.noise_var_px2 = v;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if self.constant {
            cfg = cfg.constant();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the scene's intrinsics JSON here.
    #[arg(long)]
    intrinsics_out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lane_width: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    sequential: bool,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json::<PipelineConfig>(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = self.lane_width {
            cfg.lane_width = w;
        }
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    burn_in: usize,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IpmArgs {
    #[arg(long)]
    intrinsics: PathBuf,
    /// Pose as pitch,yaw,roll in degrees and height in meters.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["trace", "frame"])]
    pose: Option<Vec<f64>>,
    /// Take the pose from this trace at `--frame`.
    #[arg(long, requires = "frame")]
    trace: Option<PathBuf>,
    #[arg(long, requires = "trace")]
    frame: Option<usize>,
    /// Homography JSON output.
    #[arg(long)]
    out: PathBuf,
    /// PGM or PPM image to warp.
    #[arg(long, requires = "warp")]
    image: Option<PathBuf>,
    /// Warped image output, same format as `--image`.
    #[arg(long, requires = "image")]
    warp: Option<PathBuf>,
    /// Pixels per meter across the road.
    #[arg(long)]
    a_x: Option<f64>,
    /// Pixels per meter along the road.
    #[arg(long)]
    a_z: Option<f64>,
    /// Lateral extent in meters.
    #[arg(long)]
    b_x: Option<f64>,
    /// Farthest distance in meters.
    #[arg(long)]
    b_z: Option<f64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Trace-format CSV of per-frame estimates; frames that fail are left out.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    io::load_json(path).with_context(|| format!("reading {}", path.display()))
}

fn load_frames(path: &Path) -> Result<Vec<lanecal::observation::FrameObservation>> {
    let records = io::load_observations(path).with_context(|| format!("reading {}", path.display()))?;
    records
        .iter()
        .map(|r| r.to_observation().map_err(Into::into))
        .collect()
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = args.scene.load()?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
    let frames = generate_sequence_with(&cfg, exec)?;
    let records: Vec<_> = frames.iter().map(ObservationRecord::from_observation).collect();
    io::save_observations(&args.out, &records)?;
    if let Some(p) = &args.intrinsics_out {
        io::save_json(p, &cfg.intrinsics)?;
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg = args.pipeline.load()?;
    cfg.intrinsics = io::load_intrinsics(&args.intrinsics)?;
    let frames = load_frames(&args.obs)?;
    let results = run_sequence(&cfg, &frames)?;
    let rows: Vec<_> = results.iter().map(TraceRow::from_result).collect();
    io::save_trace(&args.trace, &rows)?;
    Ok(())
}

fn write_report(report: &RmseReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => io::save_json(p, report)?,
        None => println!("{}", serde_json::to_string(report)?),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let rows = io::load_trace(&args.trace)?;
    let records = io::load_observations(&args.obs)?;
    let truth: HashMap<usize, [f64; 4]> = records
        .iter()
        .filter_map(|r| r.gt.map(|g| (r.frame, g.as_array())))
        .collect();
    let sums = trace_errors(&rows, |t| truth.get(&t), args.burn_in);
    let report = sums
        .report(1, args.burn_in)
        .map_err(|_| anyhow!("no frames with ground truth after burn-in {}", args.burn_in))?;
    write_report(&report, args.out.as_deref())
}

fn montecarlo(args: MonteCarloArgs) -> Result<()> {
    let scene = args.scene.load()?;
    let mut pipeline = args.pipeline.load()?;
    pipeline.intrinsics = scene.intrinsics;
    let report = run_monte_carlo(&scene, args.runs, &pipeline, pipeline.execution)?;
    for f in &report.failures {
        eprintln!("run {} (seed {}) failed: {}", f.run, f.seed, f.error);
    }
    let rmse = report.rmse.ok_or_else(|| anyhow!("all {} runs failed", args.runs))?;
    write_report(&rmse, args.out.as_deref())
}

fn ipm(args: IpmArgs) -> Result<()> {
    let k = io::load_intrinsics(&args.intrinsics)?;
    let pose = match (&args.pose, &args.trace, args.frame) {
        (Some(p), _, _) if p.len() != 4 => bail!("--pose takes 4 values, got {}", p.len()),
        (Some(p), _, _) => PoseDeg { pitch_deg: p[0], yaw_deg: p[1], roll_deg: p[2], height_m: p[3] },
        (None, Some(trace), Some(frame)) => io::load_trace(trace)?
            .iter()
            .find(|r| r.frame == frame)
            .map(TraceRow::pose)
            .ok_or_else(|| anyhow!("frame {frame} not in {}", trace.display()))?,
        _ => bail!("give either --pose or --trace with --frame"),
    };
    let mut bev = BevConfig::default();
    bev.a_x = args.a_x.unwrap_or(bev.a_x);
    bev.a_z = args.a_z.unwrap_or(bev.a_z);
    bev.b_x = args.b_x.unwrap_or(bev.b_x);
    bev.b_z = args.b_z.unwrap_or(bev.b_z);
    bev.validate()?;
    let est = pose.to_estimate()?;
    let hom = ipm::bev_homography(&k, est.theta, est.phi, est.psi, est.h, &bev)?;
    io::save_homography(&args.out, &hom)?;

    if let (Some(src), Some(dst)) = (&args.image, &args.warp) {
        let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
        let (w, h) = bev.image_size();
        let is_ppm = src.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if is_ppm {
            let img = ipm::read_ppm(src)?;
            ipm::write_ppm(dst, &ipm::warp_image(&img, &hom, w, h, exec)?)?;
        } else {
            let img = ipm::read_pgm(src)?;
            ipm::write_pgm(dst, &ipm::warp_image(&img, &hom, w, h, exec)?)?;
        }
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let mut cfg = args.pipeline.load()?;
    cfg.intrinsics = io::load_intrinsics(&args.intrinsics)?;
    cfg.validate()?;
    let frames = load_frames(&args.obs)?;
    let mut rows = Vec::new();
    for obs in &frames {
        match batch_oracle(obs, &cfg) {
            Ok(est) => rows.push(TraceRow::from_estimate(obs.frame_index, &est, obs.segments.len(), &FrameFlags::default())),
            Err(e) => eprintln!("frame {}: {e}", obs.frame_index),
        }
    }
    if rows.is_empty() && !frames.is_empty() {
        bail!("no frame could be estimated");
    }
    io::save_trace(&args.out, &rows)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Eval(a) => eval(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Ipm(a) => ipm(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lanecal: {e:#}");
            ExitCode::FAILURE
        }
    }
}
