//! `splatpt` command-line entry point.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use splatpt::camera::Camera;
use splatpt::gradcheck::{check_all, TOLERANCE};
use splatpt::imgbuf::RgbImage;
use splatpt::losses::PerceptualNet;
use splatpt::par::Execution;
use splatpt::render::{rasterize_forward, render_reference, RenderOptions};
use splatpt::scene_io::{
    list_scenes, load_checkpoint, load_scene, write_color_png, write_depth_png, write_scene,
};
use splatpt::synthetic::{activate_free_set, room_dataset, room_scene};
use splatpt::trainer::{
    init_from_frames, overfit_scene, predict_gaussians, pretrain, OverfitConfig, RunOutputs, TrainConfig,
    TrainState,
};
use splatpt::Error;

#[derive(Parser, Debug)]
#[command(name = "splatpt", version, about = "Point encoder pre-training by Gaussian splatting of RGB-D views")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train the encoder on a directory of scenes.
    Pretrain(PretrainArgs),
    /// Render a checkpoint's predicted Gaussians for frames of a scene.
    Render(RenderArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Optimize Gaussians directly against two synthetic views.
    Overfit(OverfitArgs),
    /// Write a synthetic RGB-D dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out/pretrain")]
    out: PathBuf,
    /// Start from this JSON config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    interval: Option<u32>,
    /// Image size as WxH.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    depth_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 0)]
    render_every: usize,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene directory.
    #[arg(long)]
    data: PathBuf,
    /// Frame ids to back-project and render.
    #[arg(long, value_delimiter = ',', required = true)]
    frames: Vec<u32>,
    #[arg(long, default_value = "out/render")]
    out: PathBuf,
    /// Defaults to the checkpoint's training resolution.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    /// Also write 16-bit depth PNGs.
    #[arg(long)]
    depth: bool,
    /// Use the brute-force reference renderer.
    #[arg(long)]
    reference: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Informative configs required per parameter class.
    #[arg(long, default_value_t = 20)]
    configs: usize,
    #[arg(long, default_value_t = 400)]
    max_configs: usize,
    #[arg(long, default_value_t = TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value = "out/gradcheck")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OverfitArgs {
    #[arg(long, default_value_t = 512)]
    gaussians: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_parser = parse_resolution, default_value = "64x48")]
    resolution: (usize, usize),
    /// PSNR the final step must reach (ignored with --steps 0).
    #[arg(long, default_value_t = 30.0)]
    min_psnr: f64,
    /// Use renders of the initial Gaussians as targets.
    #[arg(long)]
    self_target: bool,
    #[arg(long, default_value_t = 100)]
    print_every: usize,
    #[arg(long, default_value = "out/overfit")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 16)]
    frames: u32,
    #[arg(long, value_parser = parse_resolution, default_value = "64x48")]
    resolution: (usize, usize),
    #[arg(long, default_value_t = 100)]
    seed: u64,
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

/// Command failure with its exit code.
#[derive(Debug)]
enum Failure {
    Verification(String),
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) | Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingFile(_)
            | Error::Parse { .. }
            | Error::Frame { .. }
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Mismatch(_)
            | Error::InvalidConfig(_)
            | Error::MaskRatio(_)
            | Error::NoViewPair { .. }
            | Error::ImageTooSmall { .. }
            | Error::InvalidCamera(_)
            | Error::Io(_)
            | Error::Image(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn write_config(out: &Path, value: &serde_json::Value) -> CmdResult {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(value).expect("json"))?;
    Ok(())
}

fn resolve_train_config(a: &PretrainArgs) -> Result<TrainConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                c.$field = v;
            }
        };
    }
    set!(epochs, a.epochs);
    set!(batch_size, a.batch_size);
    set!(mask_ratio, a.mask_ratio);
    set!(views, a.views);
    set!(frame_interval, a.interval);
    set!(k, a.k);
    set!(lambda, a.lambda);
    set!(lr0, a.lr);
    set!(depth_weight, a.depth_weight);
    set!(seed, a.seed);
    if let Some((w, h)) = a.resolution {
        c.width = w;
        c.height = h;
    }
    if a.max_steps.is_some() {
        c.max_steps = a.max_steps;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_pretrain(a: &PretrainArgs, exec: Execution) -> CmdResult {
    let config = resolve_train_config(a)?;
    let dirs = list_scenes(&a.data)?;
    let scenes = dirs
        .iter()
        .map(|d| load_scene(d, Some((config.width, config.height))))
        .collect::<splatpt::Result<Vec<_>>>()?;
    log::info!("{} scenes, {} steps", scenes.len(), config.total_steps(scenes.len()));
    let outputs = RunOutputs {
        dir: Some(a.out.clone()),
        checkpoint_every: a.checkpoint_every,
        render_every: a.render_every,
    };
    let (state, history) = pretrain(&scenes, &config, &PerceptualNet::default_net(), &outputs, exec)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "steps {} loss {:.5} -> {:.5} psnr {:.2} -> {:.2}",
            state.step, first.total, last.total, first.psnr, last.psnr
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_render(a: &RenderArgs, exec: Execution) -> CmdResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let state = TrainState::from_checkpoint(&ckpt)?;
    let train: Option<TrainConfig> = ckpt.meta("train_config").and_then(|j| serde_json::from_str(j).ok());
    let resolution = a
        .resolution
        .or(train.as_ref().map(|t| (t.width, t.height)))
        .ok_or_else(|| Failure::Input("checkpoint has no training resolution; pass --resolution".into()))?;
    write_config(
        &a.out,
        &json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "frames": a.frames,
            "resolution": [resolution.0, resolution.1],
            "depth": a.depth,
            "reference": a.reference,
            "step": ckpt.step,
        }),
    )?;
    let scene = load_scene(&a.data, Some(resolution))?;
    let frames = a
        .frames
        .iter()
        .map(|id| {
            scene
                .frame_by_id(*id)
                .ok_or_else(|| Failure::Input(format!("scene {} has no frame {id}", scene.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let set = predict_gaussians(&state.model, &frames, exec)?;
    let opts = RenderOptions::default().with_exec(exec);
    for f in &frames {
        let camera: Camera = f.camera();
        let (image, depth) = if a.reference {
            render_reference(&set, &camera, &opts)?
        } else {
            let out = rasterize_forward(&set, &camera, &opts)?;
            (out.image, out.depth)
        };
        write_color_png(&a.out.join(format!("render_{:06}.png", f.frame_id)), &image)?;
        if a.depth {
            write_depth_png(&a.out.join(format!("depth_{:06}.png", f.frame_id)), &depth)?;
        }
    }
    println!("rendered {} Gaussians into {} views at {}", set.len(), frames.len(), a.out.display());
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult {
    write_config(
        &a.out,
        &json!({"seed": a.seed, "configs": a.configs, "max_configs": a.max_configs, "tolerance": a.tolerance}),
    )?;
    let report = check_all(a.seed, a.configs, a.max_configs)?;
    for c in &report.classes {
        println!(
            "{:<24} max_rel_error {:.3e}  samples {:>5}  skipped {:>4}  configs {:>3}  {}",
            c.name,
            c.max_rel_error,
            c.samples,
            c.skipped,
            c.configs,
            if c.passed(a.tolerance, a.configs) { "ok" } else { "FAIL" }
        );
    }
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report).expect("json"))?;
    println!("max relative error {:.3e} (tolerance {:.1e})", report.max_rel_error(), a.tolerance);
    if report.passed(a.tolerance, a.configs) {
        Ok(())
    } else {
        Err(Failure::Verification("gradient check failed".into()))
    }
}

fn cmd_overfit(a: &OverfitArgs, exec: Execution) -> CmdResult {
    let config = OverfitConfig {
        steps: a.steps,
        ..Default::default()
    };
    write_config(
        &a.out,
        &json!({
            "gaussians": a.gaussians,
            "seed": a.seed,
            "resolution": [a.resolution.0, a.resolution.1],
            "min_psnr": a.min_psnr,
            "self_target": a.self_target,
            "optimizer": config,
        }),
    )?;
    let scene = room_scene(a.seed, 8, a.resolution.0, a.resolution.1);
    let frames = [scene.frames[0].clone(), scene.frames[5].clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let init = init_from_frames(&frames, a.gaussians, &mut rng);
    let cameras: Vec<Camera> = frames.iter().map(|f| f.camera()).collect();
    let opts = RenderOptions::default().with_exec(exec);
    let targets: Vec<RgbImage> = if a.self_target {
        let set = activate_free_set(&init, 0)?;
        cameras
            .iter()
            .map(|c| rasterize_forward(&set, c, &opts).map(|o| o.image))
            .collect::<splatpt::Result<_>>()?
    } else {
        frames.iter().map(|f| f.color.clone()).collect()
    };
    let result = overfit_scene(&init, 0, &cameras, &targets, &config, &PerceptualNet::default_net(), exec)?;
    let mut csv = String::from("step,loss,psnr\n");
    for (s, (l, p)) in result.loss.iter().zip(&result.psnr).enumerate() {
        csv.push_str(&format!("{s},{l},{p}\n"));
        if s % a.print_every.max(1) == 0 || s == a.steps {
            println!("step {s:>5}  loss {l:.6}  psnr {p:.2} dB");
        }
    }
    fs::write(a.out.join("psnr.csv"), csv)?;
    let set = activate_free_set(&result.raw, 0)?;
    for (i, c) in cameras.iter().enumerate() {
        write_color_png(&a.out.join(format!("view{i}.png")), &rasterize_forward(&set, c, &opts)?.image)?;
    }
    let last = *result.psnr.last().expect("at least the initial PSNR");
    if a.steps > 0 && last < a.min_psnr {
        return Err(Failure::Verification(format!("final PSNR {last:.2} dB below {:.2} dB", a.min_psnr)));
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let scenes = room_dataset(a.seed, a.scenes, a.frames, a.resolution.0, a.resolution.1);
    for s in &scenes {
        write_scene(&a.out.join(&s.id), s)?;
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let exec = Execution::Parallel;
    let result = match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a, exec),
        Command::Render(a) => cmd_render(a, exec),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Overfit(a) => cmd_overfit(a, exec),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Verification(m) | Failure::Input(m) | Failure::Runtime(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
