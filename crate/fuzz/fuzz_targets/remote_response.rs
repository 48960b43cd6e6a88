#![no_main]

use acsg_explore::policy::{parse_decision, parse_remote_response};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = parse_remote_response(data) {
        let _ = parse_decision(&r.text);
    }
});
