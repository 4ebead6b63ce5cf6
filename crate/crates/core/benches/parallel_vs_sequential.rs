use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpt::camera::{back_project_view, PointCloud};
use splatpt::encoder::{mask_points, Model};
use splatpt::imgbuf::RgbImage;
use splatpt::losses::PerceptualNet;
use splatpt::par::Execution;
use splatpt::render::{rasterize_backward, rasterize_forward, RenderOptions};
use splatpt::synthetic::{random_scene, room_dataset, room_scene};
use splatpt::trainer::{train_step, TrainConfig, TrainState};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn render(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (set, cam) = random_scene(&mut rng, 2000, 160, 120, 1);
    let d_image = RgbImage {
        width: 160,
        height: 120,
        pixels: (0..160 * 120).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
    };
    let mut g = c.benchmark_group("render_2000_gaussians_160x120");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = RenderOptions::default().with_exec(exec);
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| rasterize_forward(black_box(&set), &cam, &opts).unwrap())
        });
        let out = rasterize_forward(&set, &cam, &opts).unwrap();
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| rasterize_backward(black_box(&out), &d_image, None, &set, &opts).unwrap())
        });
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let scene = room_scene(3, 8, 64, 48);
    let clouds: Vec<PointCloud> = [0, 5].iter().enumerate().map(|(v, &f)| back_project_view(&scene.frames[f], v as u32)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = mask_points(&PointCloud::merge(&clouds), 0.5, &mut rng).unwrap();
    let model = Model::new(TrainConfig::default().model_config(), 3).unwrap();
    let mut g = c.benchmark_group("encoder_forward");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(format!("{}_points", cloud.visible_count()), name), |b| {
            b.iter(|| model.forward(black_box(&cloud), exec).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let scenes = room_dataset(100, 2, 16, 64, 48);
    let batch: Vec<_> = scenes.iter().collect();
    let cfg = TrainConfig {
        width: 64,
        height: 48,
        batch_size: 2,
        ..Default::default()
    };
    let net = PerceptualNet::default_net();
    let mut g = c.benchmark_group("train_step_batch_2_64x48");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut state = TrainState::new(&cfg).unwrap();
        g.bench_function(name, |b| b.iter(|| train_step(&mut state, &batch, &cfg, 1000, &net, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, render, encoder, training);
criterion_main!(benches);
