//! End-to-end runs of the `foldsplat` binary on tiny inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use foldsplat::synthetic::moving_disk;
use foldsplat::video_io::{decode_frame, load_checkpoint, save_frames};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foldsplat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Frames on disk plus a quick fit of them.
struct Fixture {
    dir: TempDir,
    frames: PathBuf,
    ckpt: PathBuf,
}

fn fitted(steps: u32) -> Fixture {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    save_frames(&moving_disk(24, 20, 4), &frames).unwrap();
    let ckpt = dir.path().join("model.vgsf");
    let o = run(&[
        "fit",
        s(&frames),
        "-o",
        s(&ckpt),
        "--steps",
        &steps.to_string(),
        "--set",
        "model.n_init=60",
        "--set",
        "model.poly_degree=2",
    ]);
    assert!(o.status.success(), "fit failed: {}", String::from_utf8_lossy(&o.stderr));
    Fixture { dir, frames, ckpt }
}

fn read_png(p: &Path) -> foldsplat::splat2d::Frame {
    decode_frame(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn missing_input_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let o = run(&["fit", s(&dir.path().join("nope")), "-o", s(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("input not found"));
    let o = run(&["inspect", s(&dir.path().join("missing.vgsf"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_step_fit_writes_checkpoint_and_metrics() {
    let fx = fitted(0);
    let model = load_checkpoint(&fx.ckpt).unwrap();
    assert_eq!(model.n_frames(), 4);
    assert_eq!((model.width, model.height), (24, 20));
    assert_eq!(model.meta.steps, 0);
    let csv = std::fs::read_to_string(fx.ckpt.with_extension("metrics.csv")).unwrap();
    assert!(csv.starts_with("step,loss,psnr_probe,n_gaussians,wall_ms"));
}

#[test]
fn render_by_time_matches_render_by_frame_and_self_diff_is_black() {
    let fx = fitted(5);
    let out = fx.dir.path().join("r");
    let o = run(&["render", s(&fx.ckpt), "-o", s(&out), "--frame", "0", "--time", "0.0"]);
    assert!(o.status.success());
    assert_eq!(read_png(&out.join("frame_00000.png")), read_png(&out.join("time_0.000000.png")));

    // Diff against the model's own renders.
    let all = fx.dir.path().join("all");
    assert!(run(&["render", s(&fx.ckpt), "-o", s(&all)]).status.success());
    let renders = fx.dir.path().join("renders");
    std::fs::create_dir_all(&renders).unwrap();
    for k in 0..4 {
        std::fs::copy(all.join(format!("frame_{k:05}.png")), renders.join(format!("{k:05}.png"))).unwrap();
    }
    let diff = fx.dir.path().join("diff");
    let o = run(&["render", s(&fx.ckpt), "-o", s(&diff), "--diff", s(&renders)]);
    assert!(o.status.success());
    for k in 0..4 {
        let d = read_png(&diff.join(format!("diff_{k:05}.png")));
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    let o = run(&["render", s(&fx.ckpt), "-o", s(&out), "--time", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn interp_writes_expected_number_of_frames() {
    let fx = fitted(3);
    for rate in [1u32, 3] {
        let out = fx.dir.path().join(format!("interp{rate}"));
        assert!(run(&["interp", s(&fx.ckpt), "--rate", &rate.to_string(), "-o", s(&out)]).status.success());
        let count = std::fs::read_dir(&out).unwrap().count();
        assert_eq!(count, 3 * rate as usize + 1);
    }
    let o = run(&["interp", s(&fx.ckpt), "--rate", "0", "-o", s(&fx.dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_against_own_renders_hits_the_cap() {
    let fx = fitted(3);
    let all = fx.dir.path().join("all");
    assert!(run(&["render", s(&fx.ckpt), "-o", s(&all)]).status.success());
    let o = run(&["eval", s(&fx.ckpt), s(&all)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mean = text.lines().find(|l| l.trim_start().starts_with("mean")).unwrap();
    let psnr: f64 = mean.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(psnr, 100.0);

    // Evaluating against the original frames gives a finite score.
    let o = run(&["eval", s(&fx.ckpt), s(&fx.frames)]);
    assert!(o.status.success());
}

#[test]
fn inspect_reports_counts_and_defaults() {
    let fx = fitted(0);
    let o = run(&["inspect", s(&fx.ckpt)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let n = load_checkpoint(&fx.ckpt).unwrap().len();
    assert!(text.contains(&format!("n_gaussians   {n}")), "{text}");
    assert!(text.contains("frames        4"));

    let o = run(&["inspect", "--defaults"]);
    assert!(o.status.success());
    let cfg = foldsplat::config::TrainConfig::from_toml_str(&stdout(&o)).unwrap();
    assert_eq!(cfg, foldsplat::config::TrainConfig::default());
}

#[test]
fn empty_edit_script_keeps_payload() {
    let fx = fitted(0);
    let script = fx.dir.path().join("edit.json");
    std::fs::write(&script, r#"{"ops": []}"#).unwrap();
    let out = fx.dir.path().join("edited.vgsf");
    let o = run(&["edit", s(&fx.ckpt), s(&script), "-o", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&fx.ckpt).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn bad_edit_script_reports_op_index() {
    let fx = fitted(0);
    let script = fx.dir.path().join("edit.json");
    std::fs::write(&script, r#"{"ops": [{"op": "select", "region": "all"}, {"op": "spin"}]}"#).unwrap();
    let o = run(&["edit", s(&fx.ckpt), s(&script), "-o", s(&fx.dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains('1'));
}
