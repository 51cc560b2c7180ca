//! `foldsplat` command-line tool: fit, render, interpolate, edit, evaluate
//! and inspect video models.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use foldsplat::config::TrainConfig;
use foldsplat::editor::{apply_script, EditScript};
use foldsplat::model::{Field, Model};
use foldsplat::trainer::{fit, initialize_model, write_metrics_csv};
use foldsplat::video_io::{
    abs_diff, load_checkpoint, load_frames, psnr, quantize_rgb8, save_checkpoint, save_png, ssim, SsimMode,
};

#[derive(Parser)]
#[command(name = "foldsplat", version, about = "Video fitting with time-conditioned Gaussian splats")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FOLDSPLAT_THREADS")]
    threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a directory of frames.
    Fit(FitArgs),
    /// Render key frames or arbitrary times to PNG.
    Render(RenderArgs),
    /// Render `rate` evenly spaced frames per gap between key frames.
    Interp(InterpArgs),
    /// Apply a JSON edit script.
    Edit(EditArgs),
    /// Per-frame PSNR/SSIM against reference frames.
    Eval(EvalArgs),
    /// Summarize a checkpoint, or print the default config.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Directory of numbered PNG/PPM frames.
    frames: PathBuf,
    /// Output checkpoint.
    #[arg(short, long)]
    out: PathBuf,
    /// Config file (`[section]` / `key = value`).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `train.steps`.
    #[arg(long)]
    steps: Option<u64>,
    /// Shorthand for `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV (default: next to the checkpoint).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    checkpoint: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Key frame index (repeatable; default: all key frames).
    #[arg(long = "frame")]
    frames: Vec<usize>,
    /// Time in [0, 1] (repeatable).
    #[arg(long = "time")]
    times: Vec<f64>,
    /// Reference frames; writes `|render − reference|` images for key frames.
    #[arg(long)]
    diff: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    checkpoint: PathBuf,
    #[arg(short, long, value_parser = clap::value_parser!(u32).range(1..))]
    rate: u32,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    checkpoint: PathBuf,
    script: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    frames: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(required_unless_present = "defaults")]
    checkpoint: Option<PathBuf>,
    /// Print the default training config.
    #[arg(long)]
    defaults: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads.filter(|n| *n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(foldsplat::Error::NonFinite { .. })));
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a, cli.threads),
        Command::Render(a) => cmd_render(a),
        Command::Interp(a) => cmd_interp(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn require_exists(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("input not found: {}", path.display());
    }
    Ok(())
}

fn open_checkpoint(path: &Path) -> anyhow::Result<Model> {
    require_exists(path)?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_fit(a: FitArgs, threads: Option<usize>) -> anyhow::Result<()> {
    require_exists(&a.frames)?;
    let mut cfg = match &a.config {
        Some(p) => {
            require_exists(p)?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(t) = threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;

    let seq = load_frames(&a.frames)?;
    seq.require_fit()?;
    log::info!(
        "{} frames of {}x{}",
        seq.len(),
        seq.frames[0].width,
        seq.frames[0].height
    );
    let model = initialize_model(&seq.frames, &cfg)?;
    let (mut model, log) = fit(model, &seq.frames, &cfg)?;
    model.meta.config = cfg.to_toml_string();
    save_checkpoint(&model, &a.out)?;
    let metrics = a.metrics.unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    write_metrics_csv(&log, &metrics)?;
    if let Some(last) = log.last() {
        println!(
            "step {} loss {:.6e} probe PSNR {:.2} dB, {} components",
            last.step, last.loss, last.psnr_probe, last.n_gaussians
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<()> {
    let model = open_checkpoint(&a.checkpoint)?;
    if let Some(t) = a.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        bail!("time {t} outside [0, 1]");
    }
    let n = model.n_frames();
    if let Some(k) = a.frames.iter().find(|k| **k >= n) {
        bail!("frame {k} out of range (model has {n} frames)");
    }
    let frames: Vec<usize> = if a.frames.is_empty() && a.times.is_empty() {
        (0..n).collect()
    } else {
        a.frames.clone()
    };
    let targets = match &a.diff {
        Some(dir) => {
            require_exists(dir)?;
            let seq = load_frames(dir)?;
            if seq.len() != n {
                bail!("{} has {} frames, model has {n}", dir.display(), seq.len());
            }
            Some(seq.frames)
        }
        None => None,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for &k in &frames {
        let img = model.render_frame(k)?;
        save_png(&img, a.out.join(format!("frame_{k:05}.png")))?;
        if let Some(t) = &targets {
            save_png(&abs_diff(&img, &t[k])?, a.out.join(format!("diff_{k:05}.png")))?;
        }
    }
    for &t in &a.times {
        let img = model.render_at(t);
        save_png(&img, a.out.join(format!("time_{t:.6}.png")))?;
    }
    println!("rendered {} images to {}", frames.len() + a.times.len(), a.out.display());
    Ok(())
}

fn cmd_interp(a: InterpArgs) -> anyhow::Result<()> {
    let model = open_checkpoint(&a.checkpoint)?;
    let r = a.rate as usize;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut index = 0;
    for k in 0..model.n_frames() - 1 {
        let times = model.timeline.interp_times(k, r)?;
        // Each gap's last time is the next gap's first.
        let skip_last = k + 2 < model.n_frames();
        let take = if skip_last { times.len() - 1 } else { times.len() };
        for &t in &times[..take] {
            save_png(&model.render_at(t), a.out.join(format!("{index:05}.png")))?;
            index += 1;
        }
    }
    println!("wrote {index} frames to {}", a.out.display());
    Ok(())
}

fn cmd_edit(a: EditArgs) -> anyhow::Result<()> {
    let model = open_checkpoint(&a.checkpoint)?;
    require_exists(&a.script)?;
    let text = std::fs::read_to_string(&a.script).with_context(|| format!("reading {}", a.script.display()))?;
    let script = EditScript::from_json(&text)?;
    let edited = apply_script(&model, &script)?;
    save_checkpoint(&edited, &a.out)?;
    println!(
        "{} ops applied; {} -> {} components",
        script.ops.len(),
        model.len(),
        edited.len()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = open_checkpoint(&a.checkpoint)?;
    require_exists(&a.frames)?;
    let seq = load_frames(&a.frames)?;
    if seq.len() != model.n_frames() {
        bail!("{} has {} frames, model has {}", a.frames.display(), seq.len(), model.n_frames());
    }
    println!("{:>6} {:>10} {:>8}", "frame", "PSNR", "SSIM");
    let (mut sum_p, mut sum_s) = (0.0, 0.0);
    let with_ssim = model.width >= 11 && model.height >= 11;
    for (k, target) in seq.frames.iter().enumerate() {
        // Score the image `render` would write, not the unquantized buffer.
        let img = quantize_rgb8(&model.render_frame(k)?);
        let p = psnr(&img, target)?;
        sum_p += p;
        if with_ssim {
            let s = ssim(&img, target, SsimMode::Luma)?;
            sum_s += s;
            println!("{k:>6} {p:>10.4} {s:>8.4}");
        } else {
            println!("{k:>6} {p:>10.4} {:>8}", "-");
        }
    }
    let n = seq.len() as f64;
    if with_ssim {
        println!("{:>6} {:>10.4} {:>8.4}", "mean", sum_p / n, sum_s / n);
    } else {
        println!("{:>6} {:>10.4} {:>8}", "mean", sum_p / n, "-");
    }
    Ok(())
}

fn histogram(values: &[f64], bins: usize) -> String {
    if values.is_empty() {
        return "(empty)".into();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let cells: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    format!("[{lo:.4}, {hi:.4}] {}", cells.join(" "))
}

fn cmd_inspect(a: InspectArgs) -> anyhow::Result<()> {
    if a.defaults {
        print!("{}", TrainConfig::default().to_toml_string());
        return Ok(());
    }
    let path = a.checkpoint.expect("clap enforces a checkpoint");
    let model = open_checkpoint(&path)?;
    println!("size          {}x{}", model.width, model.height);
    println!("frames        {}", model.n_frames());
    println!("n_gaussians   {}", model.len());
    println!("poly_degree   {}", model.poly_degree());
    println!("steps         {}", model.meta.steps);
    println!("seed          {}", model.meta.seed);
    println!("background    {:?}", model.background);
    let overlays: Vec<usize> = model.overlays.iter().map(|o| o.frame).collect();
    println!("overlays      {overlays:?}");
    let times: Vec<String> = model
        .timeline
        .frame_times()
        .iter()
        .map(|t| format!("{t:.4}"))
        .collect();
    println!("frame times   {}", times.join(" "));
    let n = model.len();
    let comps: Vec<_> = (0..n).map(|i| model.component(i)).collect();
    let hist = |name: &str, v: Vec<f64>| println!("{name:<13} {}", histogram(&v, 10));
    hist("opacity", comps.iter().map(|c| c.opacity).collect());
    hist("m_t", comps.iter().map(|c| c.m_t).collect());
    hist("sigma_t", comps.iter().map(|c| c.sigma_t).collect());
    hist("max scale", comps.iter().map(|c| c.cov_s.s1.max(c.cov_s.s2)).collect());
    let norms: Vec<f64> = (0..n)
        .map(|i| model.params.row(Field::Poly, i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    hist("|poly|", norms);
    Ok(())
}
