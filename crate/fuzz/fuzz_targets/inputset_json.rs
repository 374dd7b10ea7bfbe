//! Input-set documents come from user files; whatever deserializes must
//! also survive sampler construction (covariance factorization).

#![no_main]

use libfuzzer_sys::fuzz_target;
use pmu_core::distributions::InputSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(set) = InputSet::from_json(text) {
        let _ = set.sample_joint(4, 0);
    }
});
