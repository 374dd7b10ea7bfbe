#![no_main]

use libfuzzer_sys::fuzz_target;
use pmu_core::pipeline::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = PipelineConfig::from_json(text);
});
