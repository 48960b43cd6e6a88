//! Runs the checked-in fuzz seeds through the parser entry points.

use acsg_explore::acsg::SceneGraph;
use acsg_explore::explorer::parse_trace;
use acsg_explore::harness::{Intervention, RunConfig};
use acsg_explore::percept::ConfusionTable;
use acsg_explore::policy::{self, Decision, RuleTable, Verdict};
use acsg_explore::worldsim::{derive_gt_graph, load_scenario};
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds for {target}");
    v
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn scenario_seeds() {
    for (name, b) in seeds("scenario_json") {
        let spec = load_scenario(&b).unwrap_or_else(|e| panic!("{name}: {e}"));
        derive_gt_graph(&spec).unwrap();
    }
}

#[test]
fn graph_seeds_round_trip() {
    for (name, b) in seeds("graph_json") {
        let g = SceneGraph::from_json(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(SceneGraph::from_json(&g.to_json()).unwrap(), g);
    }
}

#[test]
fn trace_seeds() {
    for (name, b) in seeds("trace_jsonl") {
        let (h, recs) = parse_trace(text(&b)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(h.schema, "acsg-trace/1");
        assert_eq!(recs.len(), text(&b).lines().count() - 1);
    }
}

#[test]
fn answer_seeds() {
    let s: std::collections::BTreeMap<String, String> =
        seeds("final_answer").into_iter().map(|(n, b)| (n, String::from_utf8(b).unwrap())).collect();
    assert_eq!(policy::parse_decision(&s["open"]).unwrap(), Decision::OpenDoorsOrDrawers);
    assert_eq!(policy::parse_decision(&s["pick"]).unwrap(), Decision::PickUpToReveal);
    assert_eq!(policy::parse_decision(&s["none"]).unwrap(), Decision::NoAction);
    assert!(matches!(policy::parse_verdict(&s["blocked"], &[7]).unwrap(), Verdict::BlockedBy { object: 7, .. }));
    assert!(policy::parse_verdict(&s["blocked"], &[8]).is_err());
    assert_eq!(policy::parse_verdict(&s["feasible"], &[]).unwrap(), Verdict::Feasible);
}

#[test]
fn remote_response_seeds() {
    for (name, b) in seeds("remote_response") {
        let r = policy::parse_remote_response(&b).unwrap_or_else(|e| panic!("{name}: {e}"));
        if name == "empty.json" {
            assert!(policy::final_answer(&r.text).is_none());
        } else {
            assert!(policy::final_answer(&r.text).is_some());
        }
    }
}

#[test]
fn table_seeds() {
    let s = seeds("tables");
    for (name, b) in &s {
        let rules = RuleTable::from_json(text(b));
        let confusion = ConfusionTable::from_json(text(b));
        match name.as_str() {
            "rules.json" => assert!(rules.is_ok()),
            "confusion.json" => assert!(confusion.is_ok()),
            other => panic!("unexpected seed {other}"),
        }
    }
}

#[test]
fn config_seeds() {
    for (name, b) in seeds("run_config") {
        if name.ends_with(".txt") {
            for line in text(&b).lines() {
                line.parse::<Intervention>().unwrap();
            }
        } else {
            RunConfig::from_json(text(&b)).unwrap().validate().unwrap();
        }
    }
}
