//! Fitting a [`Model`] to a frame sequence with Adam.
//!
//! Each step renders a batch of frames at their timeline times, compares
//! them with the targets (direct and mirrored view), and backpropagates
//! through the rasterizer, the temporal conditioning, the parameter
//! activations and the timeline softmax.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LearningRates, TrainConfig};
use crate::error::{Error, Result};
use crate::foldgauss::horner_deriv;
use crate::model::{
    condition_all, densify_and_prune, init_params, reset_opacity, sigmoid, Field, GradStats, Model, ParamTable,
    RowSource,
};
use crate::splat2d::{mirror, render, render_backward, Frame};
use crate::video_io::metrics::{psnr, ssim_with_grad, SsimMode};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Mean squared error and its gradient `2 (rendered − target) / N`.
pub fn loss_mse(rendered: &Frame, target: &Frame) -> Result<(f64, Frame)> {
    if !rendered.same_shape(target) {
        return Err(Error::Shape(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let n = rendered.data.len() as f64;
    let mut sum = 0.0;
    let grad = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| {
            let d = r - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, Frame::from_data(rendered.width, rendered.height, grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mirror: bool,
    /// Weight of `1 − SSIM` (per-channel) against MSE.
    pub ssim_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mirror: true,
            ssim_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            mirror: cfg.train.mirror,
            ssim_weight: cfg.train.ssim_weight,
        }
    }
}

fn view_loss(rendered: &Frame, target: &Frame, cfg: &LossConfig) -> Result<(f64, Frame)> {
    let (mse, mut grad) = loss_mse(rendered, target)?;
    if cfg.ssim_weight == 0.0 {
        return Ok((mse, grad));
    }
    let w = cfg.ssim_weight;
    let (s, ds) = ssim_with_grad(rendered, target, SsimMode::PerChannel)?;
    for (g, d) in grad.data.iter_mut().zip(&ds.data) {
        *g = (1.0 - w) * *g - w * d;
    }
    Ok(((1.0 - w) * mse + w * (1.0 - s), grad))
}

/// Loss of one rendered frame: `0.5 · direct + 0.5 · mirrored` when
/// mirroring is on, otherwise the direct view alone.
pub fn frame_loss(rendered: &Frame, target: &Frame, cfg: &LossConfig) -> Result<(f64, Frame)> {
    let (direct, mut grad) = view_loss(rendered, target, cfg)?;
    if !cfg.mirror {
        return Ok((direct, grad));
    }
    let (mirrored, grad_m) = view_loss(&mirror(rendered), &mirror(target), cfg)?;
    let grad_m = mirror(&grad_m);
    for (g, m) in grad.data.iter_mut().zip(&grad_m.data) {
        *g = 0.5 * *g + 0.5 * m;
    }
    Ok((0.5 * direct + 0.5 * mirrored, grad))
}

/// Gradients w.r.t. raw parameters and timeline weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: ParamTable,
    pub timeline: Vec<f64>,
}

/// Result of one forward/backward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub loss: f64,
    pub frame_losses: Vec<(usize, f64)>,
    pub grads: Gradients,
    /// `(component, |∂L_frame/∂mean|)` for every component that touched a
    /// rendered frame, unscaled by the batch size.
    pub mean_grad_norms: Vec<(usize, f64)>,
}

/// Batch-mean loss and full-chain gradients. Overlays are ignored.
pub fn loss_and_gradients(model: &Model, frames: &[Frame], batch: &[usize], cfg: &LossConfig) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let params = &model.params;
    let deg = params.poly_degree();
    let times = model.timeline.frame_times();
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut d_times = vec![0.0; times.len()];
    let mut loss = 0.0;
    let mut frame_losses = Vec::with_capacity(batch.len());
    let mut mean_grad_norms = Vec::new();

    for &k in batch {
        let target = frames.get(k).ok_or(Error::Index {
            index: k,
            len: frames.len(),
        })?;
        if target.width != model.width || target.height != model.height {
            return Err(Error::Shape(format!(
                "frame {k} is {}x{}, model is {}x{}",
                target.width, target.height, model.width, model.height
            )));
        }
        let t = times[k];
        let (scene, ids) = condition_all(params, t);
        let rendered = render(&scene, model.width, model.height, model.background);
        let (l, mut g_frame) = frame_loss(&rendered, target, cfg)?;
        frame_losses.push((k, l));
        loss += inv_b * l;
        g_frame.data.iter_mut().for_each(|g| *g *= inv_b);
        let gb = render_backward(&scene, model.width, model.height, model.background, &g_frame)?;

        for (j, &i) in ids.iter().enumerate() {
            if !gb.touched[j] {
                continue;
            }
            let g = &gb.grads[j];
            mean_grad_norms.push((i, g.mean[0].hypot(g.mean[1]) / inv_b));

            let m_t = sigmoid(params.field(Field::TimeMean)[i]);
            let sigma_t = params.field(Field::LogSigmaT)[i].exp();
            let u = m_t - t;
            let a = scene.gaussians[j].scale;
            let poly = params.row(Field::Poly, i);
            let dpoly = [horner_deriv(&poly[..deg], u), horner_deriv(&poly[deg..], u)];

            let gm = grads.row_mut(Field::Mean, i);
            gm[0] += g.mean[0];
            gm[1] += g.mean[1];

            let gp = grads.row_mut(Field::Poly, i);
            let mut up = 1.0;
            for p in 0..deg {
                up *= u;
                gp[p] += g.mean[0] * up;
                gp[deg + p] += g.mean[1] * up;
            }

            let var_t = sigma_t * sigma_t;
            let d_u = g.mean[0] * dpoly[0] + g.mean[1] * dpoly[1] - g.scale * a * u / var_t;
            grads.field_mut(Field::TimeMean)[i] += d_u * m_t * (1.0 - m_t);
            d_times[k] -= d_u;
            grads.field_mut(Field::LogSigmaT)[i] += g.scale * a * u * u / var_t;

            let cov = &scene.gaussians[j].cov;
            let gs = grads.row_mut(Field::LogScale, i);
            gs[0] += g.s1 * cov.s1;
            gs[1] += g.s2 * cov.s2;

            let th = sigmoid(params.field(Field::Theta)[i]);
            grads.field_mut(Field::Theta)[i] += g.theta * std::f64::consts::TAU * th * (1.0 - th);

            let rho = scene.gaussians[j].opacity;
            grads.field_mut(Field::Opacity)[i] += g.opacity * rho * (1.0 - rho);

            let raw_color = params.row(Field::Color, i).to_vec();
            let gc = grads.row_mut(Field::Color, i);
            for c in 0..3 {
                if (0.0..=1.0).contains(&raw_color[c]) {
                    gc[c] += g.color[c];
                }
            }
        }
    }

    Ok(BatchResult {
        loss,
        frame_losses,
        grads: Gradients {
            params: grads,
            timeline: model.timeline.backward(&d_times),
        },
        mean_grad_norms,
    })
}

/// Adam moments for every raw parameter and the timeline weights.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ParamTable,
    pub v: ParamTable,
    pub timeline_m: Vec<f64>,
    pub timeline_v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        let nw = model.timeline.weights.len();
        Self {
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            timeline_m: vec![0.0; nw],
            timeline_v: vec![0.0; nw],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Follow a densify/prune plan: kept rows keep their moments, new rows
    /// start at zero.
    pub fn rebuild(&mut self, sources: &[RowSource]) {
        self.m = self.m.rebuild(sources, true);
        self.v = self.v.rebuild(sources, true);
    }

    /// Zero the moments of one field.
    pub fn reset_field(&mut self, field: Field) {
        self.m.field_mut(field).iter_mut().for_each(|x| *x = 0.0);
        self.v.field_mut(field).iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn aligned_with(&self, params: &ParamTable) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && Field::ALL
                .iter()
                .all(|f| self.m.field(*f).len() == params.field(*f).len())
    }
}

/// Learning rate of the spatial means: log-linear from `mean` to `mean_final`.
pub fn mean_lr(lr: &LearningRates, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr.mean;
    }
    let r = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
    (lr.mean.ln() * (1.0 - r) + lr.mean_final.ln() * r).exp()
}

fn field_lr(lr: &LearningRates, f: Field, mean_rate: f64) -> f64 {
    match f {
        Field::Mean => mean_rate,
        Field::TimeMean => lr.time_mean,
        Field::LogScale => lr.scale,
        Field::Theta => lr.rotation,
        Field::LogSigmaT => lr.sigma_t,
        Field::Poly => lr.poly,
        Field::Opacity => lr.opacity,
        Field::Color => lr.color,
    }
}

fn adam(x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for i in 0..x.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        x[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// One Adam update of `model` from `grads`.
pub fn apply_adam(
    model: &mut Model,
    opt: &mut OptimizerState,
    grads: &Gradients,
    lr: &LearningRates,
    total_steps: u64,
) -> Result<()> {
    if !opt.aligned_with(&model.params) {
        return Err(Error::Shape(format!(
            "optimizer tracks {} rows, model has {}",
            opt.len(),
            model.len()
        )));
    }
    let mean_rate = mean_lr(lr, opt.step, total_steps);
    opt.step += 1;
    let bc1 = 1.0 - BETA1.powi(opt.step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - BETA2.powi(opt.step.min(i32::MAX as u64) as i32);
    for f in Field::ALL {
        let rate = field_lr(lr, f, mean_rate);
        adam(
            model.params.field_mut(f),
            grads.params.field(f),
            opt.m.field_mut(f),
            opt.v.field_mut(f),
            rate,
            bc1,
            bc2,
        );
    }
    adam(
        &mut model.timeline.weights,
        &grads.timeline,
        &mut opt.timeline_m,
        &mut opt.timeline_v,
        lr.timeline,
        bc1,
        bc2,
    );
    model.snap_to_f32();
    Ok(())
}

fn diagnostics(model: &Model) -> String {
    let mut parts: Vec<String> = model
        .params
        .field_norms()
        .into_iter()
        .map(|(name, n)| format!("{name}={n:.3e}"))
        .collect();
    let tl: f64 = model.timeline.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    parts.push(format!("timeline={tl:.3e}"));
    format!("parameter norms: {}", parts.join(", "))
}

/// Loss, gradients and Adam update on a fixed batch.
pub fn train_step_on_batch(
    model: &mut Model,
    opt: &mut OptimizerState,
    frames: &[Frame],
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<BatchResult> {
    let result = loss_and_gradients(model, frames, batch, &LossConfig::from_config(cfg))?;
    if !result.loss.is_finite() || !result.grads.params.is_finite() {
        let frame = result
            .frame_losses
            .iter()
            .find(|(_, l)| !l.is_finite())
            .map(|(k, _)| *k)
            .unwrap_or(batch[0]);
        return Err(Error::NonFinite {
            step: opt.step + 1,
            frame,
            diagnostics: diagnostics(model),
        });
    }
    apply_adam(model, opt, &result.grads, &cfg.lr, cfg.train.steps)?;
    Ok(result)
}

/// Sample a batch of distinct frame indices (all frames if the batch is
/// larger than the sequence) and take one step.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    opt: &mut OptimizerState,
    frames: &[Frame],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BatchResult> {
    let n = frames.len();
    let b = cfg.train.batch_size.min(n);
    let batch = sample(rng, n, b).into_vec();
    train_step_on_batch(model, opt, frames, &batch, cfg)
}

/// Build the initial model for `frames`: random components over the frame,
/// colors sampled from the frame nearest to each component's temporal mode.
pub fn initialize_model(frames: &[Frame], cfg: &TrainConfig) -> Result<Model> {
    if frames.len() < 2 {
        return Err(Error::Config(format!("need ≥ 2 frames, got {}", frames.len())));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if let Some(k) = frames.iter().position(|f| f.width != w || f.height != h) {
        return Err(Error::Shape(format!("frame {k} differs in size from frame 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = Model::new(ParamTable::new(cfg.model.poly_degree), frames.len(), w, h)?;
    model.params = init_params(&cfg.model.init_config(), model.bbox(), &mut rng)?;
    model.background = cfg.model.background;
    let n_frames = frames.len();
    for i in 0..model.params.len() {
        let m_t = sigmoid(model.params.field(Field::TimeMean)[i]);
        let k = ((m_t * (n_frames - 1) as f64).round() as usize).min(n_frames - 1);
        let mean = model.params.row(Field::Mean, i);
        let px = (((mean[0] * h as f64 + w as f64) / 2.0).floor().max(0.0) as usize).min(w - 1);
        let py = (((mean[1] * h as f64 + h as f64) / 2.0).floor().max(0.0) as usize).min(h - 1);
        let rgb = frames[k].pixel(px, py);
        model.params.row_mut(Field::Color, i).copy_from_slice(&rgb);
    }
    model.meta.seed = cfg.train.seed;
    model.snap_to_f32();
    Ok(model)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub loss: f64,
    pub psnr_probe: f64,
    pub n_gaussians: usize,
    pub wall_ms: u128,
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("step,loss,psnr_probe,n_gaussians,wall_ms\n");
    for r in rows {
        text.push_str(&format!(
            "{},{:.9e},{:.6},{},{}\n",
            r.step, r.loss, r.psnr_probe, r.n_gaussians, r.wall_ms
        ));
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Run the full schedule: steps, densify/prune rounds and opacity resets.
///
/// Deterministic for a fixed seed and thread count. `train.threads > 0`
/// runs inside a dedicated pool of that size.
pub fn fit(model: Model, frames: &[Frame], cfg: &TrainConfig) -> Result<(Model, Vec<MetricRow>)> {
    cfg.validate()?;
    if cfg.train.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.train.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| fit_inner(model, frames, cfg))
    } else {
        fit_inner(model, frames, cfg)
    }
}

fn fit_inner(mut model: Model, frames: &[Frame], cfg: &TrainConfig) -> Result<(Model, Vec<MetricRow>)> {
    if frames.len() != model.n_frames() {
        return Err(Error::Shape(format!(
            "model has {} frames, sequence has {}",
            model.n_frames(),
            frames.len()
        )));
    }
    if cfg.train.steps == 0 {
        return Ok((model, Vec::new()));
    }
    let probe = cfg.train.probe_frame.unwrap_or(frames.len() / 2);
    if probe >= frames.len() {
        return Err(Error::Index {
            index: probe,
            len: frames.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(&model);
    let mut stats = GradStats::new(model.len());
    let d = &cfg.densify;
    let start = Instant::now();
    let mut log = Vec::new();

    for step in 1..=cfg.train.steps {
        let result = train_step(&mut model, &mut opt, frames, cfg, &mut rng)?;
        for &(i, norm) in &result.mean_grad_norms {
            stats.record(i, norm);
        }

        if step >= d.from_step && step < d.until_step && step % d.interval == 0 {
            let extent = model.extent();
            let plan = densify_and_prune(&model.params, &stats, d, extent, &mut rng);
            model.params = model.params.rebuild(&plan.sources, false);
            model.snap_to_f32();
            opt.rebuild(&plan.sources);
            stats = GradStats::new(model.len());
            log::debug!(
                "step {step}: cloned {}, split {}, pruned {}, now {}",
                plan.cloned,
                plan.split,
                plan.pruned,
                model.len()
            );
        }
        if d.reset_interval > 0 && step % d.reset_interval == 0 && step <= d.reset_until && step < cfg.train.steps {
            reset_opacity(&mut model.params, d.reset_opacity);
            model.snap_to_f32();
            opt.reset_field(Field::Opacity);
        }

        if step % cfg.train.log_interval == 0 || step == cfg.train.steps {
            let rendered = model.render_frame(probe)?;
            let row = MetricRow {
                step,
                loss: result.loss,
                psnr_probe: psnr(&rendered, &frames[probe])?,
                n_gaussians: model.len(),
                wall_ms: start.elapsed().as_millis(),
            };
            log::info!(
                "step {} loss {:.6e} psnr {:.2} n {}",
                row.step,
                row.loss,
                row.psnr_probe,
                row.n_gaussians
            );
            log.push(row);
        }
    }
    model.meta.steps += cfg.train.steps;
    model.meta.seed = cfg.train.seed;
    model.meta.config = cfg.to_toml_string();
    Ok((model, log))
}
