//! The checked-in fuzz seeds must stay valid inputs for their parsers.

use std::path::PathBuf;

use foldsplat::config::TrainConfig;
use foldsplat::editor::EditScript;
use foldsplat::video_io::{decode_checkpoint, decode_frame, encode_checkpoint};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn checkpoint_seeds_decode_and_reencode() {
    for (p, bytes) in seeds("checkpoint_decode") {
        let m = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(encode_checkpoint(&m), bytes, "{}", p.display());
    }
}

#[test]
fn frame_seeds_decode() {
    for (p, bytes) in seeds("frame_decode") {
        let f = decode_frame(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(f.width > 0 && f.height > 0);
    }
}

#[test]
fn config_seeds_parse() {
    for (p, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        let ok = if p.extension().is_some_and(|e| e == "toml") {
            TrainConfig::from_toml_str(&text).is_ok()
        } else {
            TrainConfig::default().apply_override(&text).is_ok()
        };
        assert!(ok, "{}", p.display());
    }
}

#[test]
fn edit_script_seeds_parse() {
    for (p, bytes) in seeds("edit_script_parse") {
        let text = String::from_utf8(bytes).unwrap();
        EditScript::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
