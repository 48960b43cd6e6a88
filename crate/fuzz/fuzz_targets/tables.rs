#![no_main]

use acsg_explore::percept::ConfusionTable;
use acsg_explore::policy::RuleTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = RuleTable::from_json(text);
    let _ = ConfusionTable::from_json(text);
});
