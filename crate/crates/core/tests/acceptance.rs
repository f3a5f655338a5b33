//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::Instant;

use image::GrayImage;
use lanecal::ekf::{central_difference_jacobian, jacobian_relative_error};
use lanecal::geometry::{CameraIntrinsics, UnitVector3};
use lanecal::io::{self, ObservationRecord, TraceRow};
use lanecal::ipm::{bev_homography, warp_image, BevConfig};
use lanecal::montecarlo::{run_monte_carlo, trace_errors, RmseReport};
use lanecal::observation::FrameObservation;
use lanecal::pipeline::{batch_oracle, run_sequence, PipelineConfig};
use lanecal::pitch_yaw::{self, PitchYawState};
use lanecal::roll_height::{self, LanePair, RectifiedLine, RollHeightState};
use lanecal::synth::{camera_from_road, generate_sequence, inject_outliers, render_frame, SceneConfig};
use lanecal::vp::{line_point_angle, ransac_vp};
use lanecal::Execution;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Suite {
    failed: usize,
}

impl Suite {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {id}. {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn rmse_of(frames: &[FrameObservation], cfg: &PipelineConfig) -> RmseReport {
    let results = run_sequence(cfg, frames).expect("pipeline runs");
    let rows: Vec<TraceRow> = results.iter().map(TraceRow::from_result).collect();
    let truth: Vec<[f64; 4]> = frames.iter().map(|f| f.gt.unwrap().to_degrees()).collect();
    trace_errors(&rows, |t| truth.get(t), cfg.burn_in).report(1, cfg.burn_in).unwrap()
}

fn noiseless_recovery(suite: &mut Suite) {
    let start = Instant::now();
    let frames = generate_sequence(&SceneConfig::default()).unwrap();
    let r = rmse_of(&frames, &PipelineConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let pass = r.pitch_deg < 0.01 && r.yaw_deg < 0.01 && r.roll_deg < 0.01 && r.height_cm < 0.1 && secs < 10.0;
    suite.report(
        1,
        "noiseless recovery",
        pass,
        format!(
            "rmse pitch {:.2e} yaw {:.2e} roll {:.2e} deg (< 0.01), height {:.2e} cm (< 0.1), {secs:.1} s (< 10)",
            r.pitch_deg, r.yaw_deg, r.roll_deg, r.height_cm
        ),
    );
}

fn table_trend(suite: &mut Suite) {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let noise = [0.5, 1.0, 2.0, 4.0, 9.0];
    let mut table = Vec::new();
    for &var in &noise {
        let scene = SceneConfig { noise_var_px2: var, rng_seed: 1000, ..SceneConfig::default() };
        let report = run_monte_carlo(&scene, 20, &cfg, Execution::default()).unwrap();
        assert!(report.failures.is_empty(), "failed runs: {:?}", report.failures);
        let r = report.rmse.unwrap();
        println!(
            "       var {var:>3}: pitch {:.4} yaw {:.4} roll {:.4} deg, height {:.3} cm",
            r.pitch_deg, r.yaw_deg, r.roll_deg, r.height_cm
        );
        table.push(r.values());
    }
    let secs = start.elapsed().as_secs_f64();
    let at1 = table[1];
    let a = at1[0] <= 0.1 && at1[1] <= 0.25 && at1[2] <= 0.2 && at1[3] <= 2.0;
    let b = table.windows(2).all(|w| (0..4).all(|i| w[1][i] >= 0.8 * w[0][i]));
    let at9 = table[4];
    let c = at9[0] < 0.4 && at9[1] < 0.4 && at9[2] < 0.4 && at9[3] < 4.0;
    suite.report(
        2,
        "noise trend",
        a && b && c && secs < 300.0,
        format!("(a) var 1 bounds {a}, (b) monotone within 20% {b}, (c) var 9 bounds {c}, {secs:.0} s (< 300)"),
    );
}

fn jacobians(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = [0.0f64; 4];
    for _ in 0..1000 {
        let x = DVector::from_fn(4, |i, _| if i < 2 { rng.random_range(-0.5..0.5) } else { rng.random_range(-0.02..0.02) });
        let fd = central_difference_jacobian(|x| pitch_yaw::system_step(&PitchYawState::from_vector(x), 1.0).to_vector(), &x);
        worst[0] = worst[0].max(jacobian_relative_error(&pitch_yaw::system_jacobian(1.0), &fd));

        let n = UnitVector3::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let analytic = DMatrix::from_row_slice(1, 4, pitch_yaw::measurement(&PitchYawState::from_vector(&x), &n).1.as_slice());
        let fd = central_difference_jacobian(
            |x| DVector::from_element(1, pitch_yaw::measurement(&PitchYawState::from_vector(x), &n).0),
            &x,
        );
        worst[1] = worst[1].max(jacobian_relative_error(&analytic, &fd));

        let s = DVector::from_row_slice(&[
            rng.random_range(-0.1..0.1),
            rng.random_range(0.5..3.0),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.05..0.05),
        ]);
        let fd = central_difference_jacobian(|x| roll_height::system_step(&RollHeightState::from_vector(x), 1.0).to_vector(), &s);
        worst[2] = worst[2].max(jacobian_relative_error(&roll_height::system_jacobian(1.0), &fd));

        let pair = LanePair {
            left: RectifiedLine::from_alpha(rng.random_range(0.1..1.35), None),
            right: RectifiedLine::from_alpha(rng.random_range(-1.35..0.0), None),
        };
        let analytic = DMatrix::from_row_slice(1, 4, roll_height::residual(&pair, s[0], s[1], 3.7).unwrap().1.as_slice());
        let fd = central_difference_jacobian(
            |x| DVector::from_element(1, roll_height::residual(&pair, x[0], x[1], 3.7).unwrap().0),
            &s,
        );
        worst[3] = worst[3].max(jacobian_relative_error(&analytic, &fd));
    }
    suite.report(
        3,
        "Jacobians vs central differences",
        worst.iter().all(|w| *w < 1e-6),
        format!(
            "max rel err: pitch-yaw system {:.1e}, orthogonality {:.1e}, roll-height system {:.1e}, width residual {:.1e} (< 1e-6)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

fn ransac_robustness(suite: &mut Suite) {
    let scene = SceneConfig { noise_var_px2: 1.0, n_frames: 100, rng_seed: 4, ..SceneConfig::default() };
    let cfg = PipelineConfig::default();
    let k = &scene.intrinsics;
    let frames = generate_sequence(&scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut oracle, mut oracle_hit, mut genuine, mut genuine_hit, mut outliers, mut leaked) = (0, 0, 0, 0, 0, 0);
    let mut worst_vp = 0.0f64;
    for f in &frames {
        let (segs, is_out) = inject_outliers(f, &scene, 0.2, 5.0 * cfg.ransac.theta_th, &mut rng).unwrap();
        let vd = UnitVector3::new_normalize(camera_from_road(&f.gt.unwrap()) * Vector3::z());
        let res = ransac_vp(&segs, k, &cfg.ransac).unwrap();
        let mut accepted = vec![false; segs.len()];
        for &i in &res.inlier_indices {
            accepted[i] = true;
        }
        for (i, seg) in segs.iter().enumerate() {
            if is_out[i] {
                outliers += 1;
                leaked += accepted[i] as usize;
                continue;
            }
            genuine += 1;
            genuine_hit += accepted[i] as usize;
            if line_point_angle(&vd, seg, k).is_ok_and(|a| a < cfg.ransac.theta_th) {
                oracle += 1;
                oracle_hit += accepted[i] as usize;
            }
        }
        worst_vp = worst_vp.max(res.vd.axis_angle(&vd).to_degrees());
    }
    let recall = oracle_hit as f64 / oracle as f64;
    let leakage = leaked as f64 / outliers as f64;
    suite.report(
        4,
        "RANSAC robustness",
        recall >= 0.95 && leakage <= 0.02 && worst_vp < 0.05,
        format!(
            "recall {:.2}% of true-VP inliers (>= 95), all genuine segments {:.2}%, leakage {:.2}% (<= 2), worst VP error {worst_vp:.4} deg (< 0.05)",
            100.0 * recall,
            100.0 * genuine_hit as f64 / genuine as f64,
            100.0 * leakage
        ),
    );
}

/// Column of each boundary in a BEV image: intensity-weighted centroids in
/// a window around the expected column, fitted by a line over rows.
/// Returns `(column at mid_row, slope in degrees)`.
fn measure_boundary(bev: &GrayImage, expected: f64, rows: std::ops::Range<u32>, mid_row: f64) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for v in rows {
        let lo = (expected - 12.0).max(0.0) as u32;
        let hi = ((expected + 12.0) as u32).min(bev.width() - 1);
        let (mut w, mut wu) = (0.0, 0.0);
        for u in lo..=hi {
            let i = bev.get_pixel(u, v).0[0] as f64;
            w += i;
            wu += i * u as f64;
        }
        if w < 255.0 {
            continue;
        }
        let c = wu / w;
        let r = v as f64;
        sx += r;
        sy += c;
        sxx += r * r;
        sxy += r * c;
        n += 1.0;
    }
    if n < 10.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    Some((intercept + slope * mid_row, slope.atan().to_degrees()))
}

fn ipm_geometry(suite: &mut Suite) {
    let scene = SceneConfig::default();
    let cfg = PipelineConfig::default();
    let bev = BevConfig::default();
    let (w, h) = bev.image_size();
    let frames = generate_sequence(&scene).unwrap();
    let results = run_sequence(&cfg, &frames).unwrap();
    let expected: Vec<f64> = scene.boundary_offsets().iter().map(|x| bev.ground_to_pixel(*x, 0.0).x).collect();
    // Rows between 12 m and 45 m ahead, where every boundary is in view.
    let rows = bev.ground_to_pixel(0.0, 45.0).y as u32..bev.ground_to_pixel(0.0, 12.0).y as u32;
    let mid_row = bev.ground_to_pixel(0.0, 25.0).y;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); expected.len()];
    let (mut worst_tilt, mut worst_spacing) = (0.0f64, 0.0f64);
    let mut missing = 0;
    for (f, r) in frames.iter().zip(&results).skip(cfg.burn_in) {
        let img = render_frame(&scene, &f.gt.unwrap(), Execution::default());
        let e = &r.estimate;
        let hom = bev_homography(&scene.intrinsics, e.theta, e.phi, e.psi, e.h, &bev).unwrap();
        let out = warp_image(&img, &hom, w, h, Execution::default()).unwrap();
        let measured: Vec<Option<(f64, f64)>> =
            expected.iter().map(|c| measure_boundary(&out, *c, rows.clone(), mid_row)).collect();
        if measured.iter().any(Option::is_none) {
            missing += 1;
            continue;
        }
        let measured: Vec<(f64, f64)> = measured.into_iter().flatten().collect();
        for (i, (col, tilt)) in measured.iter().enumerate() {
            columns[i].push(*col);
            worst_tilt = worst_tilt.max(tilt.abs());
        }
        for pair in measured.windows(2) {
            let spacing = pair[1].0 - pair[0].0;
            worst_spacing = worst_spacing.max((spacing / (3.7 * bev.a_x) - 1.0).abs());
        }
    }
    let drift = columns
        .iter()
        .map(|c| c.iter().cloned().fold(f64::MIN, f64::max) - c.iter().cloned().fold(f64::MAX, f64::min))
        .fold(0.0, f64::max);
    suite.report(
        5,
        "IPM geometry",
        missing == 0 && worst_tilt < 0.2 && worst_spacing < 0.01 && drift < 1.0,
        format!(
            "{} frames, worst tilt {worst_tilt:.4} deg (< 0.2), worst spacing error {:.3}% (< 1), column drift {drift:.3} px (< 1), missing {missing}",
            results.len() - cfg.burn_in,
            100.0 * worst_spacing
        ),
    );
}

fn oracle_equivalence(suite: &mut Suite) {
    let scene = SceneConfig::default().constant();
    let cfg = PipelineConfig::default();
    let frames = generate_sequence(&scene).unwrap();
    let results = run_sequence(&cfg, &frames).unwrap();
    let last = frames.last().unwrap();
    let ekf = results.last().unwrap().estimate;
    let oracle = batch_oracle(last, &cfg).unwrap();
    let rot = [ekf.theta - oracle.theta, ekf.phi - oracle.phi, ekf.psi - oracle.psi]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    let dh = (ekf.h - oracle.h).abs();
    suite.report(
        6,
        "EKF steady state vs batch oracle",
        rot < 1e-6 && dh < 1e-5,
        format!("frame {}: max angle diff {rot:.2e} rad (< 1e-6), height diff {dh:.2e} m (< 1e-5)", last.frame_index),
    );
}

fn identity_homography(suite: &mut Suite) {
    let cfg = BevConfig { a_x: 1.0, a_z: 1.0, b_x: 0.0, b_z: 0.0 };
    let h = bev_homography(&CameraIntrinsics::identity(), 0.0, 0.0, 0.0, 1.0, &cfg).unwrap();
    let expected = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
    suite.report(7, "identity homography", h.to_rows() == expected, format!("{:?}", h.to_rows()));
}

fn format_round_trips(suite: &mut Suite) {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let scene = SceneConfig { n_frames: 60, noise_var_px2: 1.0, rng_seed: 42, ..SceneConfig::default() };
    let cfg = PipelineConfig { intrinsics: scene.intrinsics, ..PipelineConfig::default() };

    let calibrate = |obs_path: &std::path::Path, trace_path: &std::path::Path| {
        let recs = io::load_observations(obs_path).unwrap();
        let frames: Vec<FrameObservation> = recs.iter().map(|r| r.to_observation().unwrap()).collect();
        let rows: Vec<TraceRow> = run_sequence(&cfg, &frames).unwrap().iter().map(TraceRow::from_result).collect();
        io::save_trace(trace_path, &rows).unwrap();
    };
    let synth = |path: &std::path::Path| {
        let recs: Vec<ObservationRecord> =
            generate_sequence(&scene).unwrap().iter().map(ObservationRecord::from_observation).collect();
        io::save_observations(path, &recs).unwrap();
    };
    synth(&p("a.jsonl"));
    synth(&p("b.jsonl"));
    calibrate(&p("a.jsonl"), &p("a.csv"));
    calibrate(&p("b.jsonl"), &p("b.csv"));
    let read = |name: &str| std::fs::read(p(name)).unwrap();
    let deterministic = read("a.jsonl") == read("b.jsonl") && read("a.csv") == read("b.csv");

    let recs = io::load_observations(&p("a.jsonl")).unwrap();
    let truth: Vec<[f64; 4]> = recs.iter().map(|r| r.gt.unwrap().as_array()).collect();
    let rows = io::load_trace(&p("a.csv")).unwrap();
    let eval = trace_errors(&rows, |t| truth.get(t), cfg.burn_in).report(1, cfg.burn_in).unwrap();
    io::save_json(&p("rmse.json"), &eval).unwrap();
    let mc = run_monte_carlo(&scene, 1, &cfg, Execution::Sequential).unwrap().rmse.unwrap();
    let agree = eval.values().iter().zip(mc.values()).all(|(a, b)| (a - b).abs() <= 1e-12);

    io::save_json(&p("k.json"), &scene.intrinsics).unwrap();
    let est = run_sequence(&cfg, &[recs[0].to_observation().unwrap()]).unwrap()[0].homography.unwrap();
    io::save_homography(&p("h.json"), &est).unwrap();
    io::save_observations(&p("c.jsonl"), &recs).unwrap();
    io::save_trace(&p("c.csv"), &rows).unwrap();
    let rmse_back: RmseReport = io::load_json(&p("rmse.json")).unwrap();
    let lossless = read("c.jsonl") == read("a.jsonl")
        && read("c.csv") == read("a.csv")
        && rmse_back == eval
        && io::load_homography(&p("h.json")).unwrap() == est
        && io::load_intrinsics(&p("k.json")).unwrap() == scene.intrinsics;
    suite.report(
        8,
        "format round trips",
        deterministic && agree && lossless,
        format!("deterministic {deterministic}, eval matches Monte Carlo to 1e-12 {agree}, lossless re-parse {lossless}"),
    );
}

/// Numeric arguments select criteria; anything else is ignored so the
/// target also runs under the standard test runner flags.
fn main() {
    let criteria: [fn(&mut Suite); 8] = [
        noiseless_recovery,
        table_trend,
        jacobians,
        ransac_robustness,
        ipm_geometry,
        oracle_equivalence,
        identity_homography,
        format_round_trips,
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut suite = Suite { failed: 0 };
    let mut ran = 0;
    for (i, run) in criteria.iter().enumerate() {
        if selected.is_empty() || selected.contains(&(i + 1)) {
            run(&mut suite);
            ran += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
