#![no_main]
use foldsplat::video_io::decode_frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = decode_frame(data) {
        assert_eq!(frame.data.len(), frame.width * frame.height * 3);
        assert!(frame.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
