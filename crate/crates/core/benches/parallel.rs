use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lanecal::ipm::{bev_homography, warp_image};
use lanecal::montecarlo::run_monte_carlo;
use lanecal::pipeline::PipelineConfig;
use lanecal::synth::{generate_frame, generate_sequence_with, render_frame, SceneConfig};
use lanecal::vp::{ransac_vp_with, RansacConfig};
use lanecal::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ransac(c: &mut Criterion) {
    let scene = SceneConfig { noise_var_px2: 1.0, ..SceneConfig::default() };
    let obs = generate_frame(&scene, 0).unwrap();
    let cfg = RansacConfig::default();
    let mut g = c.benchmark_group("ransac_vp");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ransac_vp_with(&obs.segments, &scene.intrinsics, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn generation(c: &mut Criterion) {
    let scene = SceneConfig { n_frames: 100, noise_var_px2: 1.0, ..SceneConfig::default() };
    let mut g = c.benchmark_group("generate_sequence");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_sequence_with(&scene, exec).unwrap())
        });
    }
    g.finish();
}

fn warp(c: &mut Criterion) {
    let scene = SceneConfig::default();
    let pose = scene.pose_at(0);
    let img = render_frame(&scene, &pose, Execution::Parallel);
    let bev = PipelineConfig::default().bev;
    let hom = bev_homography(&scene.intrinsics, pose.theta, pose.phi, pose.psi, pose.h, &bev).unwrap();
    let (w, h) = bev.image_size();
    let mut g = c.benchmark_group("warp_image");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| warp_image(&img, &hom, w, h, exec).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let scene = SceneConfig { n_frames: 40, noise_var_px2: 1.0, ..SceneConfig::default() };
    let pipeline = PipelineConfig { execution: Execution::Sequential, ..PipelineConfig::default() };
    let mut g = c.benchmark_group("monte_carlo_4_runs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_monte_carlo(&scene, 4, &pipeline, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, ransac, generation, warp, monte_carlo);
criterion_main!(benches);
