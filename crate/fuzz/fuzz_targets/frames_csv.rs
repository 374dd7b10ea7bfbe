#![no_main]

use libfuzzer_sys::fuzz_target;
use pmu_core::pipeline::frame::parse_frames_csv;

fuzz_target!(|data: &[u8]| {
    let _ = parse_frames_csv(data);
});
