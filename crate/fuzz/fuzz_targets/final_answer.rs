#![no_main]

use acsg_explore::policy::{final_answer, parse_decision, parse_verdict};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = final_answer(&text);
    let _ = parse_decision(&text);
    let _ = parse_verdict(&text, &[1, 2, 7, 42]);
});
