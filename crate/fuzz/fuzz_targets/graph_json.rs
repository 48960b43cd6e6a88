#![no_main]

use acsg_explore::acsg::SceneGraph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = SceneGraph::from_json(text) {
        let again = SceneGraph::from_json(&g.to_json()).expect("serialized graph parses");
        assert_eq!(again, g);
        let _ = g.to_dot();
    }
});
