//! Suite generation, run orchestration, output layout and trace replay.

use crate::explorer::{self, Branch, ExplorationResult, ExploreError, ExplorerConfig, TRACE_SCHEMA};
use crate::metrics::{self, EvalRecord};
use crate::percept::{self, NoiseConfig};
use crate::policy::{PolicyError, PolicyKind};
use crate::worldsim::{
    cabinet_event, generate_scenario, load_scenario, Destination, EventEffectSpec, Family, InterventionEvent,
    OutcomeStatus, ScenarioSpec, World, WorldError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario {name}: {source}")]
    Scenario { name: String, source: WorldError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Graph(#[from] crate::acsg::GraphError),
    #[error("trace was written by {found}, this is {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Policy(PolicyError::RemoteUnavailable(_) | PolicyError::RemoteUnparseable(_))
            | HarnessError::Explore(ExploreError::Policy(
                PolicyError::RemoteUnavailable(_) | PolicyError::RemoteUnparseable(_),
            )) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub const FAMILIES: [Family; 5] =
    [Family::DrawerOnly, Family::DoorOnly, Family::DrawerDoor, Family::Recursive, Family::Occlusion];

/// Accepts `drawer-only` as well as `drawer_only`.
pub fn parse_family(s: &str) -> Result<Family, HarnessError> {
    let norm = s.trim().to_ascii_lowercase().replace('-', "_");
    FAMILIES
        .into_iter()
        .find(|f| f.as_str() == norm)
        .ok_or_else(|| HarnessError::Config(format!("unknown family {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub family: Family,
    pub generator_seed: u64,
    pub scenarios: Vec<String>,
}

/// Writes `count` variants of `family` and a manifest into `out`.
pub fn generate_suite(family: Family, count: u32, seed: u64, out: &Path) -> Result<SuiteManifest, HarnessError> {
    let mut names = Vec::new();
    for i in 0..count {
        let spec = generate_scenario(family, seed, i);
        let file = format!("{}_{i:02}.json", family.as_str());
        write_file(&out.join(&file), spec.to_json().as_bytes())?;
        names.push(file);
    }
    let m = SuiteManifest { family, generator_seed: seed, scenarios: names };
    let body = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&out.join(MANIFEST_FILE), body.as_bytes())?;
    Ok(m)
}

/// A loaded scenario and the name its outputs are filed under.
#[derive(Debug, Clone)]
pub struct NamedScenario {
    pub name: String,
    pub spec: ScenarioSpec,
}

pub fn load_scenario_file(path: &Path) -> Result<NamedScenario, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let spec = load_scenario(&bytes).map_err(|source| HarnessError::Scenario { name: name.clone(), source })?;
    Ok(NamedScenario { name, spec })
}

/// A scenario file, a suite directory with a manifest, or a directory of
/// suites. Directories without a manifest contribute every `.json` file.
pub fn load_scenarios(path: &Path) -> Result<Vec<NamedScenario>, HarnessError> {
    if path.is_file() {
        return Ok(vec![load_scenario_file(path)?]);
    }
    let manifest = path.join(MANIFEST_FILE);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        let m: SuiteManifest =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", manifest.display())))?;
        return m.scenarios.iter().map(|f| load_scenario_file(&path.join(f))).collect();
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() {
            out.extend(load_scenarios(&p)?);
        } else if p.extension().is_some_and(|e| e == "json") {
            out.push(load_scenario_file(&p)?);
        }
    }
    Ok(out)
}

/// A scripted change to the scene, written `add-cabinet:STEP[:doors]`,
/// `remove:ID:STEP` or `move-idle:ID:STEP`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Intervention {
    AddCabinet { step: u32, doors: bool },
    Remove { id: u32, step: u32 },
    MoveIdle { id: u32, step: u32 },
}

impl std::str::FromStr for Intervention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<u32>().map_err(|_| format!("bad number {x:?} in {s:?}"));
        match parts.as_slice() {
            ["add-cabinet", step] => Ok(Intervention::AddCabinet { step: num(step)?, doors: false }),
            ["add-cabinet", step, "doors"] => Ok(Intervention::AddCabinet { step: num(step)?, doors: true }),
            ["remove", id, step] => Ok(Intervention::Remove { id: num(id)?, step: num(step)? }),
            ["move-idle", id, step] => Ok(Intervention::MoveIdle { id: num(id)?, step: num(step)? }),
            _ => Err(format!("unrecognized intervention {s:?}")),
        }
    }
}

impl Intervention {
    pub fn events(&self, spec: &ScenarioSpec, seed: u64) -> Vec<InterventionEvent> {
        match *self {
            Intervention::AddCabinet { step, doors } => cabinet_event(spec, seed, step, doors),
            Intervention::Remove { id, step } => {
                vec![InterventionEvent { trigger_step: step, effect: EventEffectSpec::RemoveObject { id } }]
            }
            Intervention::MoveIdle { id, step } => vec![InterventionEvent {
                trigger_step: step,
                effect: EventEffectSpec::MoveObject { id, destination: Destination::IdleSpace },
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub policies: Vec<String>,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub explorer: ExplorerConfig,
    pub interventions: Vec<Intervention>,
    /// Rerun failed noisy runs without noise to attribute the failure.
    pub classify_errors: bool,
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: PathBuf::from("scenarios"),
            policies: vec!["oracle".into()],
            seed: 0,
            noise: NoiseConfig::default(),
            explorer: ExplorerConfig::default(),
            interventions: Vec::new(),
            classify_errors: true,
            out: PathBuf::from("out"),
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<RunConfig, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.policies.is_empty() {
            return Err(HarnessError::Config("no policies given".into()));
        }
        self.explorer_config().validate()?;
        Ok(())
    }

    /// Explorer settings with every seed derived from the run seed.
    pub fn explorer_config(&self) -> ExplorerConfig {
        let mut c = self.explorer.clone();
        c.noise = NoiseConfig { rng_seed: self.seed, ..self.noise.clone() };
        c.failure_seed = self.seed;
        c
    }
}

/// Everything one (scenario, policy) run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub policy: String,
    pub result: ExplorationResult,
    pub record: EvalRecord,
}

fn prepare(s: &NamedScenario, cfg: &RunConfig) -> ScenarioSpec {
    let mut spec = s.spec.clone();
    for iv in &cfg.interventions {
        let evs = iv.events(&spec, cfg.seed);
        spec.events.extend(evs);
    }
    if spec.name.is_empty() {
        spec.name = s.name.clone();
    }
    spec
}

/// One exploration plus scoring.
pub fn run_one(s: &NamedScenario, policy: &PolicyKind, cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let spec = prepare(s, cfg);
    let ecfg = cfg.explorer_config();
    let mut p = policy.build();
    let result = explorer::run(World::new(spec.clone()), p.as_mut(), &ecfg)?;
    let mut record = metrics::evaluate(&result, cfg.seed, None)?;
    if record.success == 0 && cfg.classify_errors && !ecfg.noise.is_noiseless() && result.injected_failures == 0 {
        let clean = ExplorerConfig { noise: ecfg.noise.noiseless(), ..ecfg.clone() };
        let mut p = policy.build();
        let rerun = explorer::run(World::new(spec), p.as_mut(), &clean)?;
        let ok = metrics::evaluate(&rerun, cfg.seed, None)?.success == 1;
        record.error_class = metrics::classify_error(false, 0, Some(ok));
    }
    record.scenario = s.name.clone();
    Ok(RunOutput { scenario: s.name.clone(), policy: policy.name().to_string(), result, record })
}

#[derive(Debug, Default)]
pub struct SuiteOutput {
    /// Successful runs in (policy, scenario) order.
    pub runs: Vec<RunOutput>,
    /// Policies dropped after a remote failure, with the error.
    pub failed_policies: Vec<(String, String)>,
}

impl SuiteOutput {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn step_limit_hit(&self) -> bool {
        self.runs.iter().any(|r| r.result.step_limit_hit)
    }
}

/// Runs every policy on every scenario, in parallel across runs. A remote
/// failure drops that policy's runs; other errors abort.
pub fn run_suite(scenarios: &[NamedScenario], cfg: &RunConfig) -> Result<SuiteOutput, HarnessError> {
    cfg.validate()?;
    let mut out = SuiteOutput::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    for name in &cfg.policies {
        let kind = match PolicyKind::parse(name, cfg.seed) {
            Ok(k) => k,
            Err(e @ PolicyError::RemoteUnavailable(_)) => {
                out.failed_policies.push((name.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let results: Vec<Result<RunOutput, HarnessError>> =
            pool.install(|| scenarios.par_iter().map(|s| run_one(s, &kind, cfg)).collect());
        let mut runs = Vec::new();
        let mut remote_failure = None;
        for r in results {
            match r {
                Ok(r) => runs.push(r),
                Err(e) if e.exit_code() == 3 => {
                    remote_failure.get_or_insert(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        match remote_failure {
            Some(msg) => out.failed_policies.push((name.clone(), msg)),
            None => out.runs.extend(runs),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCountRow {
    pub family: Family,
    pub policy: String,
    pub mean_actions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFile {
    pub groups: Vec<metrics::Aggregate>,
    /// Mean action counts over scenarios every policy solved.
    pub action_counts: Vec<ActionCountRow>,
    pub failed_policies: Vec<(String, String)>,
}

pub fn aggregate_file(records: &[EvalRecord], failed: &[(String, String)]) -> AggregateFile {
    AggregateFile {
        groups: metrics::aggregate(records),
        action_counts: metrics::action_count_table(records)
            .into_iter()
            .map(|((family, policy), mean_actions)| ActionCountRow { family, policy, mean_actions })
            .collect(),
        failed_policies: failed.to_vec(),
    }
}

fn run_stem(r: &RunOutput) -> String {
    format!("{}__{}", r.scenario, r.policy)
}

/// Writes `traces/`, `graphs/`, `report.csv` and `aggregate.json` under `out`.
pub fn write_outputs(out: &Path, suite: &SuiteOutput) -> Result<(), HarnessError> {
    for r in &suite.runs {
        let stem = run_stem(r);
        write_file(&out.join("traces").join(format!("{stem}.jsonl")), r.result.trace_jsonl().as_bytes())?;
        write_file(&out.join("graphs").join(format!("{stem}.json")), r.result.graph.to_json_pretty().as_bytes())?;
    }
    let records = suite.records();
    write_file(&out.join("report.csv"), metrics::report_csv(&records)?.as_bytes())?;
    let agg = aggregate_file(&records, &suite.failed_policies);
    let body = serde_json::to_string_pretty(&agg).expect("aggregate serializes");
    write_file(&out.join("aggregate.json"), body.as_bytes())?;
    Ok(())
}

/// Reads a report written by [`write_outputs`].
pub fn read_report(text: &str) -> Result<Vec<EvalRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let bad = |what: &str| HarnessError::Config(format!("report row {:?}: bad {what}", row.position()));
        let num = |i: usize, what: &str| get(i).parse::<f64>().map_err(|_| bad(what));
        out.push(EvalRecord {
            scenario: get(0).to_string(),
            family: parse_family(get(1)).unwrap_or(Family::Custom),
            policy: get(2).to_string(),
            seed: get(3).parse().map_err(|_| bad("seed"))?,
            success: get(4).parse().map_err(|_| bad("success"))?,
            object_recovery: num(5, "object_recovery")?,
            state_recovery: get(6).parse().map_err(|_| bad("state_recovery"))?,
            unexplored_space: if get(7).is_empty() { None } else { Some(num(7, "unexplored_space")?) },
            ged: get(8).parse().map_err(|_| bad("ged"))?,
            action_count: get(9).parse().map_err(|_| bad("action_count"))?,
            error_class: serde_json::from_value(serde_json::Value::String(get(10).to_string()))
                .map_err(|_| bad("error_class"))?,
            step_limit: get(11).parse().map_err(|_| bad("step_limit"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps_checked: usize,
    /// First step whose outcome or world digest differs.
    pub world_divergence: Option<u32>,
    /// First step whose detections differ.
    pub perception_divergence: Option<u32>,
    /// First step whose rewards break the ledger rules.
    pub ledger_divergence: Option<u32>,
}

impl ReplayReport {
    pub fn clean(&self) -> bool {
        self.world_divergence.is_none() && self.perception_divergence.is_none() && self.ledger_divergence.is_none()
    }
}

/// Re-executes a trace on a fresh world. `noise` replaces the recorded
/// perception settings when given.
pub fn replay(trace: &str, spec: &ScenarioSpec, noise: Option<&NoiseConfig>) -> Result<ReplayReport, HarnessError> {
    let (header, recs) = explorer::parse_trace(trace).map_err(HarnessError::Config)?;
    let version = env!("CARGO_PKG_VERSION");
    if header.schema != TRACE_SCHEMA || header.version != version {
        return Err(HarnessError::VersionMismatch { expected: version.into(), found: header.version });
    }
    let noise = noise.cloned().unwrap_or_else(|| header.config.noise.clone());
    let mut world = World::new(spec.clone());
    let mut rep = ReplayReport::default();
    let lambda = header.config.lambda;
    for r in &recs {
        rep.steps_checked += 1;
        world.set_step(r.step);
        if r.branch == Branch::Intervention {
            world.fire_events(&r.events).map_err(|source| HarnessError::Scenario { name: spec.name.clone(), source })?;
        }
        if let Some(cmd) = r.command {
            let got = if r.injected_failure {
                crate::worldsim::ActionOutcome { status: OutcomeStatus::NoEffect, displacement: None }
            } else {
                match world.object_at(cmd.grasp) {
                    Some(t) => world.apply_action(cmd.action, t, &Default::default()),
                    None => crate::worldsim::ActionOutcome { status: OutcomeStatus::InvalidTarget, displacement: None },
                }
            };
            if Some(got) != r.outcome && rep.world_divergence.is_none() {
                rep.world_divergence = Some(r.step);
            }
        }
        if world.digest() != r.world && rep.world_divergence.is_none() {
            rep.world_divergence = Some(r.step);
        }
        for (view, digest) in &r.views {
            let obs = world.render_observation(view).map_err(|source| HarnessError::Scenario {
                name: spec.name.clone(),
                source,
            })?;
            if percept::digest(&percept::detect(&obs, &noise)) != *digest && rep.perception_divergence.is_none() {
                rep.perception_divergence = Some(r.step);
            }
        }
        let ledger_ok = match (r.branch, r.rewards) {
            (Branch::Init | Branch::Recovery, None) => true,
            (Branch::Init | Branch::Recovery, Some(_)) | (_, None) => false,
            (_, Some(rw)) => (rw.time + lambda).abs() < 1e-12,
        };
        if !ledger_ok && rep.ledger_divergence.is_none() {
            rep.ledger_divergence = Some(r.step);
        }
    }
    Ok(rep)
}
