#![no_main]

use libfuzzer_sys::fuzz_target;
use pmu_core::pipeline::frame::parse_frames_jsonl;

fuzz_target!(|data: &[u8]| {
    let _ = parse_frames_jsonl(data);
});
