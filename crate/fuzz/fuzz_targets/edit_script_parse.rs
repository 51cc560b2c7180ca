#![no_main]
use foldsplat::editor::EditScript;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = EditScript::from_json(text);
    }
});
