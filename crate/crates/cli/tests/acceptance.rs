//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpt::camera::{back_project, project_point, Camera, CameraIntrinsics, CameraPose, PointCloud};
use splatpt::encoder::{mask_points, Model};
use splatpt::gaussian::{build_covariance, gaussian_density, Gaussian, GaussianSet};
use splatpt::gradcheck::{check_all, TOLERANCE};
use splatpt::imgbuf::RgbImage;
use splatpt::linalg::{Quaternion, Vec3};
use splatpt::losses::{color_loss, total_loss, PerceptualNet, DEFAULT_LAMBDA};
use splatpt::par::Execution;
use splatpt::render::{ewa_jacobian, rasterize_forward, render_reference, RenderOptions};
use splatpt::synthetic::{random_scene, room_dataset, room_scene};
use splatpt::trainer::{evaluate, init_from_frames, overfit_scene, pretrain, OverfitConfig, RunOutputs, TrainConfig, TrainState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let opts = RenderOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=64);
        let (set, cam) = random_scene(&mut rng, n, 32, 32, 1);
        let tiled = rasterize_forward(&set, &cam, &opts).expect("render");
        let (reference, _) = render_reference(&set, &cam, &opts).expect("reference");
        worst = worst.max(tiled.image.max_abs_diff(&reference));
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-5 && t < Duration::from_secs(60),
        format!("50 scenes, max |tiled - reference| = {worst:.3e} (<= 1e-5), {:.2}s (< 60s)", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let report = check_all(1, 20, 400).expect("gradcheck");
    let t = start.elapsed();
    let min_configs = report.classes.iter().map(|c| c.configs).min().unwrap_or(0);
    outcome(
        report.passed(TOLERANCE, 20) && t < Duration::from_secs(300),
        format!(
            "{} classes, min configs {min_configs} (>= 20), max rel error {:.3e} (<= 1e-3), {:.1}s (< 300s)",
            report.classes.len(),
            report.max_rel_error(),
            t.as_secs_f64()
        ),
    )
}

fn round_trip_error() -> f64 {
    let scene = room_scene(11, 4, 40, 30);
    let mut worst = 0.0f64;
    for frame in &scene.frames {
        let cloud = back_project(frame);
        for (k, p) in cloud.positions.iter().enumerate() {
            let [i, j] = cloud.source_pixel[k];
            let (u, v, _) = project_point(p, &frame.intrinsics, &frame.pose).expect("in front");
            worst = worst.max((u - (i as f64 + 0.5)).abs()).max((v - (j as f64 + 0.5)).abs());
        }
    }
    worst
}

fn density_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = Quaternion::new(rng.gen_range(-1.0..1.0), rng.gen(), rng.gen(), rng.gen());
        let s = Vec3::new(rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0));
        let sigma = build_covariance(&q, &s).expect("covariance");
        let mu = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let x = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0));
        let d = x - mu;
        // Cramer's rule for Sigma y = d
        let det = sigma.det();
        let mut quad = 0.0;
        for k in 0..3 {
            let mut m = sigma;
            for r in 0..3 {
                m.0[r][k] = d[r];
            }
            quad += d[k] * m.det() / det;
        }
        let direct = (-0.5 * quad).exp();
        worst = worst.max((gaussian_density(&mu, &sigma, &x).expect("density") - direct).abs());
    }
    worst
}

fn splat(mean: Vec3, opacity: f64, sh0: [f64; 3]) -> Gaussian {
    let mut sh = [[0.0; 3]; 4];
    sh[0] = sh0;
    Gaussian {
        mean,
        rotation: Quaternion::IDENTITY,
        scale: Vec3::new(0.05, 0.05, 0.05),
        opacity,
        sh,
        anchor: 0,
    }
}

/// Front red with alpha 1/2 over back gray with alpha 1/4, both centered on pixel (8, 8).
fn two_gaussian_composite() -> bool {
    let cam = Camera {
        intrinsics: CameraIntrinsics {
            fx: 40.0,
            fy: 40.0,
            cx: 8.5,
            cy: 8.5,
            width: 17,
            height: 17,
        },
        pose: CameraPose::IDENTITY,
    };
    let set = GaussianSet {
        sh_degree: 0,
        gaussians: vec![
            splat(Vec3::new(0.0, 0.0, 3.0), 0.25, [0.0; 3]),
            splat(Vec3::new(0.0, 0.0, 2.0), 0.5, [100.0, -100.0, -100.0]),
        ],
    };
    let opts = RenderOptions::default();
    let out = rasterize_forward(&set, &cam, &opts).expect("render");
    let (reference, ref_depth) = render_reference(&set, &cam, &opts).expect("reference");
    let expect = [0.5 + 0.5 * 0.25 * 0.5, 0.5 * 0.25 * 0.5, 0.5 * 0.25 * 0.5];
    out.image.get(8, 8) == expect
        && reference.get(8, 8) == expect
        && out.depth.get(8, 8) == 2.0 * 0.5 + 3.0 * 0.25 * 0.5
        && ref_depth.get(8, 8) == out.depth.get(8, 8)
        && out.accumulated_weight(8, 8) == 1.0 - 0.5 * 0.75
}

fn jacobian_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (fx, fy, cx, cy) = (250.0, 240.0, 160.0, 120.0);
    let proj = |t: &Vec3| [fx * t.x() / t.z() + cx, fy * t.y() / t.z() + cy];
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let t = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..6.0));
        let j = ewa_jacobian(&t, fx, fy);
        for c in 0..3 {
            let (mut tp, mut tm) = (t, t);
            tp[c] += h;
            tm[c] -= h;
            let (pp, pm) = (proj(&tp), proj(&tm));
            for r in 0..2 {
                let fd = (pp[r] - pm[r]) / (2.0 * h);
                if fd == 0.0 && j[r][c] == 0.0 {
                    continue;
                }
                worst = worst.max((fd - j[r][c]).abs() / fd.abs().max(j[r][c].abs()));
            }
        }
    }
    worst
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
    RgbImage {
        width: w,
        height: h,
        pixels: (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
    }
}

/// Feature maps `[channel][y][x]` of every layer, computed pixel by pixel.
fn direct_features(net: &PerceptualNet, img: &RgbImage) -> Vec<Vec<Vec<Vec<f64>>>> {
    let mut x: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| (0..img.height).map(|y| (0..img.width).map(|i| 2.0 * img.get(i, y)[c] - 1.0).collect()).collect())
        .collect();
    let mut maps = Vec::new();
    for l in &net.layers {
        let (h, w) = (x[0].len(), x[0][0].len());
        let (oh, ow) = ((h - l.k) / l.stride + 1, (w - l.k) / l.stride + 1);
        let mut y = vec![vec![vec![0.0; ow]; oh]; l.out_c];
        for o in 0..l.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for i in 0..l.in_c {
                        for ky in 0..l.k {
                            for kx in 0..l.k {
                                s += l.kernel[((o * l.in_c + i) * l.k + ky) * l.k + kx] * x[i][oy * l.stride + ky][ox * l.stride + kx];
                            }
                        }
                    }
                    y[o][oy][ox] = if l.relu { s.max(0.0) } else { s };
                }
            }
        }
        maps.push(y.clone());
        x = y;
    }
    maps
}

fn direct_lpips(net: &PerceptualNet, a: &RgbImage, b: &RgbImage) -> f64 {
    let (fa, fb) = (direct_features(net, a), direct_features(net, b));
    let mut total = 0.0;
    for (l, layer) in net.layers.iter().enumerate() {
        let (h, w) = (fa[l][0].len(), fa[l][0][0].len());
        let mut sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                let na = (0..layer.out_c).map(|c| fa[l][c][y][x].powi(2)).sum::<f64>().sqrt() + 1e-10;
                let nb = (0..layer.out_c).map(|c| fb[l][c][y][x].powi(2)).sum::<f64>().sqrt() + 1e-10;
                for c in 0..layer.out_c {
                    let d = layer.channel_weight[c] * (fa[l][c][y][x] / na - fb[l][c][y][x] / nb);
                    sum += d * d;
                }
            }
        }
        total += sum / (h * w) as f64;
    }
    total
}

fn loss_errors() -> (f64, f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let net = PerceptualNet::default_net();
    let (mut color_err, mut lpips_err, mut exact) = (0.0f64, 0.0f64, DEFAULT_LAMBDA == 0.05);
    for _ in 0..5 {
        let a = random_image(&mut rng, 32, 24);
        let b = random_image(&mut rng, 32, 24);
        let direct_color = a
            .pixels
            .iter()
            .zip(&b.pixels)
            .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).powi(2)))
            .sum::<f64>()
            / (32 * 24 * 3) as f64;
        color_err = color_err.max((color_loss(&a, &b).expect("color").0 - direct_color).abs());
        let lpips = net.loss(&a, &b, Execution::Sequential).expect("lpips").0;
        lpips_err = lpips_err.max((lpips - direct_lpips(&net, &a, &b)).abs());
        let out = total_loss(&a, &b, &net, DEFAULT_LAMBDA, Execution::Parallel).expect("total");
        exact &= out.total == out.color + 0.05 * out.lpips;
    }
    (color_err, lpips_err, exact)
}

fn criterion_3() -> Outcome {
    let rt = round_trip_error();
    let dens = density_error();
    let comp = two_gaussian_composite();
    let jac = jacobian_error();
    let (ce, le, exact) = loss_errors();
    outcome(
        rt <= 1e-6 && dens <= 1e-12 && comp && jac <= 1e-6 && ce <= 1e-10 && le <= 1e-10 && exact,
        format!(
            "round-trip {rt:.2e}px, density {dens:.2e}, two-Gaussian exact {comp}, Jacobian {jac:.2e}, \
             color {ce:.2e}, lpips {le:.2e}, total bit-exact {exact}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let scene = room_scene(7, 8, 64, 48);
    let frames = [scene.frames[0].clone(), scene.frames[5].clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = init_from_frames(&frames, 512, &mut rng);
    let cameras: Vec<Camera> = frames.iter().map(|f| f.camera()).collect();
    let targets: Vec<RgbImage> = frames.iter().map(|f| f.color.clone()).collect();
    let cfg = OverfitConfig::default();
    let r = overfit_scene(&init, 0, &cameras, &targets, &cfg, &PerceptualNet::default_net(), Execution::Parallel)
        .expect("overfit");
    let t = start.elapsed();
    let last = *r.psnr.last().expect("psnr");
    let first_hit = r.psnr.iter().position(|p| *p >= 30.0);
    outcome(
        init.len() == 512 && cfg.steps == 2000 && last >= 30.0 && t < Duration::from_secs(300),
        format!(
            "512 Gaussians, PSNR {:.2} -> {last:.2} dB after {} steps (>= 30, first reached at step {}), {:.1}s (< 300s)",
            r.psnr[0],
            cfg.steps,
            first_hit.map_or("never".to_string(), |s| s.to_string()),
            t.as_secs_f64()
        ),
    )
}

/// Criterion 5, plus the per-step Gaussian counts used by criterion 6.
fn criterion_5() -> (Outcome, Vec<(usize, usize)>) {
    let start = Instant::now();
    let steps = 500;
    let scenes = room_dataset(100, 8, 16, 64, 48);
    let cfg = TrainConfig {
        width: 64,
        height: 48,
        mask_ratio: 0.5,
        k: 1,
        batch_size: 1,
        lr0: 1e-3,
        epochs: 1000,
        max_steps: Some(steps),
        seed: 1,
        ..Default::default()
    };
    let net = PerceptualNet::default_net();
    let before = evaluate(&TrainState::new(&cfg).expect("init").model, &scenes, &cfg, &net, 99, Execution::Parallel)
        .expect("evaluate");
    let (state, history) = pretrain(&scenes, &cfg, &net, &RunOutputs::default(), Execution::Parallel).expect("pretrain");
    let after = evaluate(&state.model, &scenes, &cfg, &net, 99, Execution::Parallel).expect("evaluate");
    let mean = |s: &[_]| s.iter().map(|m: &splatpt::trainer::StepMetrics| m.total).sum::<f64>() / s.len() as f64;
    let initial = mean(&history[..50]);
    let last = mean(&history[history.len() - 50..]);
    let drop = 1.0 - last / initial;
    let gain = after.psnr - before.psnr;
    let counts = history.iter().flat_map(|m| m.counts.iter().copied()).collect();
    (
        outcome(
            history.len() == steps && drop >= 0.30 && gain >= 3.0,
            format!(
                "{steps} steps, 50-step average loss {initial:.4} -> {last:.4} ({:.1}% drop, >= 30%), \
                 PSNR {:.2} -> {:.2} dB ({gain:+.2}, >= +3), {:.1}s",
                100.0 * drop,
                before.psnr,
                after.psnr,
                start.elapsed().as_secs_f64()
            ),
        ),
        counts,
    )
}

fn criterion_6(train_counts: &[(usize, usize)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut cloud = PointCloud::default();
    for i in 0..10_000u32 {
        cloud.push(Vec3::new(rng.gen(), rng.gen(), rng.gen()), [0.5; 3], i % 2, [i, 0]);
    }
    let masked = mask_points(&cloud, 0.5, &mut rng).expect("mask");
    let hidden = masked.visible_mask.iter().filter(|v| !**v).count() as f64 / 10_000.0;
    let hidden_even = masked.visible_mask.iter().step_by(2).filter(|v| !**v).count() as f64 / 5_000.0;

    let mut counts_ok = !train_counts.is_empty() && train_counts.iter().all(|(g, v)| *g == *v && *v > 0);
    for k in [1, 2, 3] {
        let cfg = TrainConfig { k, ..Default::default() };
        let model = Model::new(cfg.model_config(), 5).expect("model");
        let sub = masked.select(&(0..600).collect::<Vec<_>>());
        let (set, _) = model.forward(&sub, Execution::Parallel).expect("forward");
        counts_ok &= set.len() == k * sub.visible_count();
    }
    outcome(
        (hidden - 0.5).abs() <= 0.02 && (hidden_even - 0.5).abs() <= 0.02 && counts_ok,
        format!(
            "mask fraction {hidden:.4} (subset {hidden_even:.4}), 0.5 +- 0.02; count = k * visible on {} training steps and k = 1, 2, 3: {counts_ok}",
            train_counts.len()
        ),
    )
}

fn splatpt_cmd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_splatpt")).args(args).output().expect("binary runs")
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let p = |name: &str| tmp.path().join(name).to_str().expect("utf-8").to_string();
    let synth = splatpt_cmd(&["synth", "--out", &p("data"), "--scenes", "3", "--frames", "8", "--resolution", "32x24"]);
    if !synth.status.success() {
        return outcome(false, "synth failed".into());
    }
    let runs = [("1", "a"), ("1", "b"), ("4", "c")];
    for (threads, name) in runs {
        let o = splatpt_cmd(&[
            "--threads", threads, "pretrain", "--data", &p("data"), "--out", &p(name), "--epochs", "2",
            "--batch-size", "2", "--resolution", "32x24", "--seed", "3",
        ]);
        if !o.status.success() {
            return outcome(false, format!("pretrain failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let read = |run: &str, file: &str| fs::read(Path::new(&p(run)).join(file)).unwrap_or_default();
    let mut same = true;
    for file in ["metrics.csv", "checkpoint_final.bin"] {
        same &= !read("a", file).is_empty() && read("a", file) == read("b", file) && read("a", file) == read("c", file);
    }
    outcome(same, format!("metrics.csv and checkpoint_final.bin identical across 2 runs at --threads 1 and --threads 4: {same}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let opts = RenderOptions::default();
    let (mut pixels, mut ok, mut walked) = (0, true, 0usize);
    while pixels < 1000 {
        let n = rng.gen_range(1..=96);
        let (mut set, cam) = random_scene(&mut rng, n, 24, 24, 1);
        for g in set.gaussians.iter_mut() {
            if rng.gen_bool(0.3) {
                g.opacity = rng.gen_range(0.95..1.0);
            }
        }
        let out = rasterize_forward(&set, &cam, &opts).expect("render");
        for _ in 0..50 {
            let (x, y) = (rng.gen_range(0..24), rng.gen_range(0..24));
            let mut t_prev = 1.0;
            let mut weight = 0.0;
            for c in out.pixel_contributors(x, y) {
                ok &= c.transmittance <= t_prev && c.transmittance >= 0.0;
                ok &= (0.0..=1.0).contains(&c.alpha);
                weight += c.alpha * c.transmittance;
                t_prev = c.transmittance * (1.0 - c.alpha);
                walked += 1;
            }
            let acc = out.accumulated_weight(x, y);
            ok &= out.final_transmittance[y * 24 + x] <= t_prev + 1e-15;
            ok &= (0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&weight) && (acc - weight).abs() <= 1e-12;
            pixels += 1;
        }
    }
    outcome(ok, format!("{pixels} pixels, {walked} contributors, weight in [0, 1] and transmittance non-increasing: {ok}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let (c5, counts) = criterion_5();
    report(5, c5);
    report(6, criterion_6(&counts));
    report(7, criterion_7());
    report(8, criterion_8());
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
