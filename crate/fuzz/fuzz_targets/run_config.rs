#![no_main]

use acsg_explore::harness::{Intervention, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate();
    }
    for line in text.lines() {
        let _ = line.parse::<Intervention>();
    }
});
