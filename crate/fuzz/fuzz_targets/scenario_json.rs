#![no_main]

use acsg_explore::worldsim::{derive_gt_graph, load_scenario};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = load_scenario(data) {
        let _ = derive_gt_graph(&spec);
    }
});
