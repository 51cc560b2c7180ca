//! Acceptance runner. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p foldsplat --release --test acceptance [-- 3 5 ...]` runs a
//! subset by number. Exits non-zero if any selected criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use foldsplat::config::TrainConfig;
use foldsplat::editor::{delete, duplicate, select, transform_affine, Region, SelectCriteria, Selection};
use foldsplat::foldgauss::{
    conditional_consistency, normalization_estimate, quadrature_integral, PolyShift, QUADRATURE_NODES,
};
use foldsplat::model::{condition_all, from_triangle, to_triangle, FlatGaussian, FrameTimeline, Model};
use foldsplat::splat2d::{render, render_bruteforce, Frame};
use foldsplat::synthetic::{moving_disk, static_video};
use foldsplat::trainer::{fit, initialize_model};
use foldsplat::video_io::{decode_checkpoint, encode_checkpoint, psnr, ssim, SsimMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() <= limit_s, || {
        format!("{what} took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_z: f64 = 0.0;
    for i in 0..20 {
        let fg = common::random_component(&mut rng, 7);
        let est = normalization_estimate(&fg, 1_000_000, &mut rng).map_err(|e| e.to_string())?;
        let z = (est.value - 1.0).abs() / est.std_error;
        ensure(z <= 3.0, || format!("component {i}: {:.6} ± {:.2e} ({z:.2} SE)", est.value, est.std_error))?;
        worst_z = worst_z.max(z);
    }
    let mut worst_quad: f64 = 0.0;
    for _ in 0..20 {
        let mut fg = common::random_component(&mut rng, 0);
        fg.poly = PolyShift::zero(7);
        let q = quadrature_integral(&fg, QUADRATURE_NODES);
        worst_quad = worst_quad.max((q - 1.0).abs());
    }
    ensure(worst_quad <= 1e-6, || format!("separable quadrature error {worst_quad:.2e}"))?;
    within(start.elapsed(), 30.0, "normalization")?;
    Ok(format!(
        "worst MC deviation {worst_z:.2} SE, quadrature error {worst_quad:.1e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn conditional_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let comps: Vec<_> = (0..20).map(|_| common::random_component(&mut rng, 7)).collect();
    let mut worst: f64 = 0.0;
    for j in 0..1000 {
        let fg = &comps[j % comps.len()];
        let t = fg.m_t + rng.random_range(-2.0..2.0) * fg.sigma_t;
        let c = foldsplat::foldgauss::condition_at(fg, t);
        let k = 2.0 * (c.cov.s1.max(c.cov.s2) * c.scale.sqrt());
        let s = [c.mean[0] + rng.random_range(-k..k), c.mean[1] + rng.random_range(-k..k)];
        let r = conditional_consistency(fg, s, t);
        ensure(r <= 1e-8, || format!("residual {r:.2e} at s={s:?}, t={t}"))?;
        worst = worst.max(r);
    }
    Ok(format!("worst residual {worst:.1e} over 1000 points"))
}

fn rasterizer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(1..200);
        let scene = common::random_scene(&mut rng, n, 32, 32);
        let bg = [rng.random(), rng.random(), rng.random()];
        let a = render(&scene, 32, 32, bg);
        let b = render_bruteforce(&scene, 32, 32, bg);
        let d = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure(d <= 1e-6, || format!("scene {i}: max difference {d:.2e}"))?;
        worst = worst.max(d);
    }
    within(start.elapsed(), 10.0, "rasterizer oracle")?;
    Ok(format!("max difference {worst:.1e}, {:.2}s", start.elapsed().as_secs_f64()))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (model, frames) = common::gradient_problem(&mut rng);
        let checks = common::check_gradients(&model, &frames, &common::ParamClass::ALL, 1e-6);
        for class in common::ParamClass::ALL {
            ensure(checks.iter().any(|c| c.class == class), || format!("class {class:?} not covered"))?;
        }
        for c in &checks {
            ensure(c.ok(1e-3, 1e-6), || format!("seed {seed}: {c:?}"))?;
        }
        checked += checks.len();
    }
    within(start.elapsed(), 60.0, "gradient suite")?;
    Ok(format!("{checked} derivatives, {:.1}s", start.elapsed().as_secs_f64()))
}

fn triangle_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let g = FlatGaussian {
            mean: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            theta: rng.random_range(0.0..std::f64::consts::TAU),
            s1: rng.random_range(1e-3..1.0),
            s2: rng.random_range(1e-3..1.0),
        };
        let back = from_triangle(&to_triangle(&g), i).map_err(|e| e.to_string())?;
        // Compare covariance matrices so the θ ↔ θ + 2π ambiguity is moot.
        let cov = |g: &FlatGaussian| foldsplat::foldgauss::SpatialCov2::new(g.theta, g.s1, g.s2).matrix();
        let (a, b) = (cov(&g), cov(&back));
        let d = [
            (g.mean[0] - back.mean[0]).abs(),
            (g.mean[1] - back.mean[1]).abs(),
            (g.s1 - back.s1).abs(),
            (g.s2 - back.s2).abs(),
            (a[0][0] - b[0][0]).abs(),
            (a[0][1] - b[0][1]).abs(),
            (a[1][1] - b[1][1]).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        ensure(d <= 1e-6, || format!("{g:?} came back as {back:?}"))?;
        worst = worst.max(d);
    }
    Ok(format!("worst error {worst:.1e} over 1000 Gaussians"))
}

fn timeline() -> Outcome {
    for n in 2..=64 {
        let t = FrameTimeline::uniform(n).map_err(|e| e.to_string())?.frame_times();
        for (k, tk) in t.iter().enumerate() {
            let expected = k as f64 / (n - 1) as f64;
            ensure((tk - expected).abs() <= 1e-15, || format!("n={n}: t_{k} = {tk}, expected {expected}"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let w: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t = FrameTimeline::new(w.clone()).map_err(|e| e.to_string())?.frame_times();
        ensure(t[0] == 0.0 && t[n - 1] == 1.0, || format!("endpoints {:?} for {w:?}", (t[0], t[n - 1])))?;
        ensure(t.windows(2).all(|p| p[0] < p[1]), || format!("not increasing for {w:?}"))?;
    }
    let hand = FrameTimeline::new(vec![1f64.ln(), 3f64.ln()]).map_err(|e| e.to_string())?.frame_times();
    let expected = [0.0, 0.25, 1.0];
    ensure(hand.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-15), || {
        format!("hand case gave {hand:?}")
    })?;
    Ok(format!("hand case {hand:?}"))
}

fn mean_psnr(model: &Model, frames: &[Frame]) -> Result<f64, String> {
    let mut sum = 0.0;
    for (k, f) in frames.iter().enumerate() {
        sum += psnr(&model.render_frame(k).map_err(|e| e.to_string())?, f).map_err(|e| e.to_string())?;
    }
    Ok(sum / frames.len() as f64)
}

/// Configuration for the moving-disk fit.
fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.n_init = 2000;
    cfg.model.poly_degree = 3;
    cfg.train.steps = 5000;
    cfg.train.batch_size = 3;
    cfg.train.log_interval = 1000;
    cfg
}

fn desk_fit() -> Outcome {
    let start = Instant::now();
    let frames = moving_disk(96, 96, 32);
    let cfg = desk_config();
    let model = initialize_model(&frames, &cfg).map_err(|e| e.to_string())?;
    let (model, _) = fit(model, &frames, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let p = mean_psnr(&model, &frames)?;
    let summary = format!("mean PSNR {p:.2} dB, {} Gaussians, {:.0}s", model.len(), elapsed.as_secs_f64());
    ensure(p >= 30.0, || summary.clone())?;
    within(elapsed, 900.0, "fit")?;
    Ok(summary)
}

fn interpolation() -> Outcome {
    let frames = static_video(48, 48, 8);
    let mut cfg = desk_config();
    cfg.model.n_init = 500;
    cfg.train.steps = 1500;
    let model = initialize_model(&frames, &cfg).map_err(|e| e.to_string())?;
    let (model, _) = fit(model, &frames, &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for k in 0..frames.len() - 1 {
        let times = model.timeline.interp_times(k, 2).map_err(|e| e.to_string())?;
        let mid = model.render_at(times[1]);
        for key in [times[0], times[2]] {
            let r = model.render_at(key);
            for c in 0..3 {
                let mae = mid.data.iter().skip(c).step_by(3).zip(r.data.iter().skip(c).step_by(3))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / (48 * 48) as f64;
                ensure(mae <= 0.02, || format!("gap {k}, channel {c}: MAE {mae:.4}"))?;
                worst = worst.max(mae);
            }
        }
    }
    Ok(format!("worst midpoint MAE {worst:.4}, fit PSNR {:.2} dB", mean_psnr(&model, &frames)?))
}

fn renders(m: &Model) -> Result<Vec<Frame>, String> {
    (0..m.n_frames()).map(|k| m.render_frame(k).map_err(|e| e.to_string())).collect()
}

/// Two clusters of components far apart on a random timeline.
fn two_cluster_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut model, _) = common::gradient_problem(&mut rng);
    let mut params = model.params.clone();
    for _ in 0..3 {
        let mut raw = model.params.get(rng.random_range(0..model.len()));
        raw.m_s = [raw.m_s[0] * 0.2 - 0.6, raw.m_s[1] * 0.2];
        raw.log_scale = [(0.08f64).ln(), (0.06f64).ln()];
        raw.poly_x.iter_mut().chain(raw.poly_y.iter_mut()).for_each(|c| *c *= 0.1);
        params.push(&raw).unwrap();
    }
    for i in 0..3 {
        let mut raw = params.get(i);
        raw.m_s = [raw.m_s[0] * 0.2 + 0.6, raw.m_s[1] * 0.2];
        raw.log_scale = [(0.08f64).ln(), (0.06f64).ln()];
        raw.poly_x.iter_mut().chain(raw.poly_y.iter_mut()).for_each(|c| *c *= 0.1);
        params.set(i, &raw);
    }
    model.params = params;
    model.width = 32;
    model.height = 16;
    model.snap_to_f32();
    model
}

fn edit_semantics() -> Outcome {
    for seed in 0..10 {
        let model = two_cluster_model(seed);

        let right = SelectCriteria {
            region: Region::Polygon(vec![[0.0, -2.0], [3.0, -2.0], [3.0, 2.0], [0.0, 2.0]]),
            time_window: None,
            reference_time: 0.5,
        };
        let sel = select(&model, &right);
        ensure(sel.len() == 3, || format!("seed {seed}: right cluster selected {} components", sel.len()))?;

        let mut deleted = model.clone();
        delete(&mut deleted, &sel);
        let keep: Vec<bool> = (0..model.len()).map(|i| !sel.ids.contains(&i)).collect();
        let mut complement = model.params.clone();
        complement.retain(&keep);
        for (k, t) in model.timeline.frame_times().into_iter().enumerate() {
            let (scene, _) = condition_all(&complement, t);
            let expect = render(&scene, model.width, model.height, model.background);
            ensure(deleted.render_frame(k).map_err(|e| e.to_string())? == expect, || {
                format!("seed {seed}: delete differs from complement at frame {k}")
            })?;
        }

        let before = renders(&model)?;
        for sel in [sel.clone(), select(&model, &SelectCriteria::all())] {
            let mut e = model.clone();
            duplicate(&mut e, &sel, [0.0, 0.0], 1).map_err(|e| e.to_string())?;
            delete(&mut e, &sel);
            ensure(renders(&e)? == before, || format!("seed {seed}: duplicate+delete changed the render"))?;
        }

        let k = 1.5;
        let mut scaled = model.clone();
        let all = Selection { ids: (0..model.len()).collect() };
        transform_affine(&mut scaled, &all, &[[k, 0.0, 0.0], [0.0, k, 0.0]]).map_err(|e| e.to_string())?;
        for i in 0..model.len() {
            let (a, b) = (model.component(i).cov_s, scaled.component(i).cov_s);
            for (s, t) in [(a.s1, b.s1), (a.s2, b.s2)] {
                ensure((t - k * s).abs() <= 1e-6 * (k * s).max(1.0), || {
                    format!("seed {seed}, component {i}: scale {s} became {t}")
                })?;
            }
        }
    }
    Ok("delete, duplicate+delete and uniform scale hold on 10 scenes".into())
}

fn metrics() -> Outcome {
    let a = Frame::filled(32, 32, [0.3, 0.5, 0.7]);
    let b = Frame::filled(32, 32, [0.4, 0.6, 0.8]);
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    ensure((p - 20.0).abs() <= 1e-6, || format!("PSNR {p}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = common::random_frame(&mut rng, 24, 24);
    for mode in [SsimMode::Luma, SsimMode::PerChannel] {
        let s = ssim(&f, &f, mode).map_err(|e| e.to_string())?;
        ensure(s == 1.0, || format!("SSIM of identical frames {s} ({mode:?})"))?;
    }
    let model = two_cluster_model(10);
    let bytes = encode_checkpoint(&model);
    let back = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    ensure(back == model, || "decoded model differs".into())?;
    ensure(encode_checkpoint(&back) == bytes, || "re-encoded bytes differ".into())?;
    ensure(renders(&back)? == renders(&model)?, || "renders differ after round trip".into())?;
    Ok(format!("PSNR {p:.6} dB, SSIM 1, {} checkpoint bytes", bytes.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("folded Gaussian normalization", normalization),
        ("conditional consistency", conditional_identity),
        ("rasterizer oracle equivalence", rasterizer_oracle),
        ("gradient suite", gradient_suite),
        ("triangle round trip", triangle_round_trip),
        ("frame timeline", timeline),
        ("desk-scale fit", desk_fit),
        ("interpolation sanity", interpolation),
        ("edit semantics", edit_semantics),
        ("metrics and checkpoint", metrics),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
