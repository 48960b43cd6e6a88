use acsg_explore::explorer::{self, ExplorerConfig};
use acsg_explore::harness::{self, NamedScenario, RunConfig};
use acsg_explore::metrics::{self, EvalRecord};
use acsg_explore::percept::NoiseConfig;
use acsg_explore::policy::PolicyKind;
use acsg_explore::worldsim::{generate_scenario, gt_index, Family, World};
use std::fs;
use std::path::Path;

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for f in harness::FAMILIES {
        let a = dir.path().join("a").join(f.as_str());
        let b = dir.path().join("b").join(f.as_str());
        let m = harness::generate_suite(f, 4, 7, &a).unwrap();
        harness::generate_suite(f, 4, 7, &b).unwrap();
        assert_eq!(m.scenarios.len(), 4);
        assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
        assert_eq!(harness::load_scenarios(&a).unwrap().len(), 4);
    }
    let c = dir.path().join("c");
    harness::generate_suite(Family::DrawerOnly, 4, 8, &c).unwrap();
    assert_ne!(read_dir_bytes(&c), read_dir_bytes(&dir.path().join("a/drawer_only")));
}

#[test]
fn nested_family_needs_three_action_levels() {
    for i in 0..10 {
        let s = generate_scenario(Family::Recursive, 7, i);
        let gt = gt_index(&s).unwrap();
        let deepest = gt.node_of.values().map(|&n| gt.graph.retrieval_plan(n).unwrap().len()).max().unwrap();
        assert!(deepest >= 3, "variant {i}: deepest plan {deepest}");
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let v: Vec<f64> = xs.collect();
    (v.iter().sum::<f64>() / v.len() as f64, v.len())
}

#[test]
fn aggregates_match_hand_computation() {
    let scenarios: Vec<NamedScenario> = [Family::DrawerOnly, Family::Occlusion]
        .into_iter()
        .flat_map(|f| (0..5).map(move |i| generate_scenario(f, 3, i)))
        .map(|s| NamedScenario { name: s.name.clone(), spec: s })
        .collect();
    let cfg = RunConfig {
        policies: vec!["random".into(), "heuristic-full".into()],
        seed: 5,
        noise: NoiseConfig { label_flip_prob: 0.1, ..NoiseConfig::default() },
        ..RunConfig::default()
    };
    let recs = harness::run_suite(&scenarios, &cfg).unwrap().records();
    assert_eq!(recs.len(), 20);
    let agg = metrics::aggregate(&recs);
    assert_eq!(agg.len(), 4);
    for g in &agg {
        let mine: Vec<&EvalRecord> =
            recs.iter().filter(|r| r.family == g.family && r.policy == g.policy).collect();
        assert_eq!(g.runs, mine.len());
        let (m, n) = mean(mine.iter().map(|r| r.ged as f64));
        assert!((g.ged.mean - m).abs() < 1e-12);
        let var = mine.iter().map(|r| (r.ged as f64 - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((g.ged.sem - (var / n as f64).sqrt()).abs() < 1e-12);
        let (p, _) = mean(mine.iter().map(|r| r.success as f64));
        assert!((g.success.mean - p).abs() < 1e-12);
        let (o, _) = mean(mine.iter().map(|r| r.object_recovery));
        assert!((g.object_recovery.mean - o).abs() < 1e-12);
    }
    let dir = tempfile::tempdir().unwrap();
    let suite = harness::run_suite(&scenarios, &cfg).unwrap();
    harness::write_outputs(dir.path(), &suite).unwrap();
    let back = harness::read_report(&fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(back.len(), recs.len());
    for (a, b) in back.iter().zip(&recs) {
        assert_eq!((a.ged, a.success, &a.policy, a.error_class), (b.ged, b.success, &b.policy, b.error_class));
        assert!((a.object_recovery - b.object_recovery).abs() < 1e-4);
    }
}

fn noisy_trace() -> (String, acsg_explore::worldsim::ScenarioSpec) {
    let s = generate_scenario(Family::DrawerDoor, 7, 2);
    let cfg = ExplorerConfig {
        noise: NoiseConfig { label_flip_prob: 0.2, feature_sigma: 0.2, rng_seed: 4, ..NoiseConfig::default() },
        ..ExplorerConfig::default()
    };
    let mut p = PolicyKind::parse("rule", 0).unwrap().build();
    let r = explorer::run(World::new(s.clone()), p.as_mut(), &cfg).unwrap();
    (r.trace_jsonl(), s)
}

#[test]
fn replay_of_an_untouched_trace_is_clean() {
    let (trace, s) = noisy_trace();
    let rep = harness::replay(&trace, &s, None).unwrap();
    assert!(rep.clean(), "{rep:?}");
    assert_eq!(rep.steps_checked, trace.lines().count() - 1);
}

#[test]
fn replay_pinpoints_an_edited_outcome() {
    let (trace, s) = noisy_trace();
    let mut lines: Vec<String> = trace.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.contains("\"status\":\"success\"")).unwrap();
    let step: u32 = serde_json::from_str::<serde_json::Value>(&lines[idx]).unwrap()["step"].as_u64().unwrap() as u32;
    lines[idx] = lines[idx].replacen("\"status\":\"success\"", "\"status\":\"no_effect\"", 1);
    let rep = harness::replay(&(lines.join("\n") + "\n"), &s, None).unwrap();
    assert_eq!(rep.world_divergence, Some(step));
}

#[test]
fn replay_with_another_noise_seed_only_changes_perception() {
    let (trace, s) = noisy_trace();
    let (h, _) = explorer::parse_trace(&trace).unwrap();
    let noise = NoiseConfig { rng_seed: 99, ..h.config.noise };
    let rep = harness::replay(&trace, &s, Some(&noise)).unwrap();
    assert!(rep.perception_divergence.is_some());
    assert_eq!(rep.world_divergence, None);
    assert_eq!(rep.ledger_divergence, None);
}

#[test]
fn replay_rejects_other_versions() {
    let (trace, s) = noisy_trace();
    let edited = trace.replacen("\"version\":\"", "\"version\":\"9.", 1);
    assert!(matches!(harness::replay(&edited, &s, None), Err(harness::HarnessError::VersionMismatch { .. })));
}

#[test]
fn config_file_round_trips_and_is_validated() {
    let cfg = RunConfig { policies: vec!["oracle".into()], seed: 3, ..RunConfig::default() };
    let text = serde_json::to_string(&cfg).unwrap();
    let back = RunConfig::from_json(&text).unwrap();
    assert_eq!(back.seed, 3);
    let bad = RunConfig { policies: vec!["nonsense".into()], ..RunConfig::default() };
    assert!(harness::run_suite(&[], &bad).is_err());
}
