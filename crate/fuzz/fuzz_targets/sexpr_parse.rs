//! Expression parser must reject garbage gracefully, and anything it
//! accepts must evaluate and differentiate without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pmu_core::MeasurementModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let names = ["a", "b", "c", "d"];
    if let Ok(model) = MeasurementModel::parse(text, &names) {
        let at = vec![0.5; model.arity()];
        let _ = model.evaluate(&at);
        let _ = model.gradient(&at);
    }
});
