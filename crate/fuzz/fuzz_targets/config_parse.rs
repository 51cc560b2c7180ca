#![no_main]
use foldsplat::config::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_toml_str(text) {
        let again = TrainConfig::from_toml_str(&cfg.to_toml_string()).expect("echo parses");
        assert_eq!(again.to_toml_string(), cfg.to_toml_string());
    }
    let mut cfg = TrainConfig::default();
    let _ = cfg.apply_override(text);
});
