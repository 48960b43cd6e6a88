use acsg_explore::acsg::SceneGraph;
use acsg_explore::harness::{self, HarnessError, Intervention, RunConfig};
use acsg_explore::metrics;
use acsg_explore::worldsim::derive_gt_graph;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "acsg", version, about = "Interactive scene exploration benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenario suites.
    Gen {
        /// Family name, or `all`.
        #[arg(long, default_value = "all")]
        family: String,
        #[arg(long, default_value_t = 10)]
        count: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explore scenarios with one or more policies and score the runs.
    Run {
        /// JSON run config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario file, suite directory or directory of suites.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Comma-separated: random, heuristic-open, heuristic-full, rule, oracle, remote.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label_flip: Option<f64>,
        #[arg(long)]
        miss_prob: Option<f64>,
        #[arg(long)]
        feature_sigma: Option<f64>,
        #[arg(long)]
        action_failure: Option<f64>,
        #[arg(long)]
        max_steps: Option<u32>,
        #[arg(long)]
        no_recover: bool,
        /// `add-cabinet:STEP[:doors]`, `remove:ID:STEP` or `move-idle:ID:STEP`.
        #[arg(long)]
        intervene: Vec<Intervention>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score a graph against a scenario, or aggregate a report.
    Eval {
        #[arg(long, required_unless_present = "report")]
        scenario: Option<PathBuf>,
        #[arg(long, requires = "scenario")]
        graph: Option<PathBuf>,
        #[arg(long, conflicts_with = "scenario")]
        report: Option<PathBuf>,
    },
    /// Write a graph, or a scenario's ground-truth graph, as DOT.
    ExportDot {
        #[arg(long, required_unless_present = "scenario")]
        graph: Option<PathBuf>,
        #[arg(long, conflicts_with = "graph")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a trace and report the first divergences.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Detect with this noise seed instead of the recorded one.
        #[arg(long)]
        noise_seed: Option<u64>,
    },
}

fn read(path: &PathBuf) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })
}

fn load_graph(path: &PathBuf) -> Result<SceneGraph, HarnessError> {
    Ok(SceneGraph::from_json(&read(path)?)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.cmd {
        Cmd::Gen { family, count, seed, out } => {
            let families = if family == "all" {
                harness::FAMILIES.to_vec()
            } else {
                vec![harness::parse_family(&family)?]
            };
            for f in families {
                let dir = out.join(f.as_str());
                let m = harness::generate_suite(f, count, seed, &dir)?;
                println!("{}: {} scenarios in {}", f.as_str(), m.scenarios.len(), dir.display());
            }
            Ok(0)
        }
        Cmd::Run {
            config,
            scenario,
            policy,
            seed,
            out,
            label_flip,
            miss_prob,
            feature_sigma,
            action_failure,
            max_steps,
            no_recover,
            intervene,
            jobs,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::from_json(&read(p)?)?,
                None => RunConfig::default(),
            };
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if !policy.is_empty() {
                cfg.policies = policy;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(x) = label_flip {
                cfg.noise.label_flip_prob = x;
            }
            if let Some(x) = miss_prob {
                cfg.noise.miss_prob = x;
            }
            if let Some(x) = feature_sigma {
                cfg.noise.feature_sigma = x;
            }
            if let Some(x) = action_failure {
                cfg.explorer.action_failure_prob = x;
            }
            if let Some(x) = max_steps {
                cfg.explorer.max_steps = x;
            }
            if no_recover {
                cfg.explorer.recover_state = false;
            }
            cfg.interventions.extend(intervene);
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let scenarios = harness::load_scenarios(&cfg.scenario)?;
            let suite = harness::run_suite(&scenarios, &cfg)?;
            harness::write_outputs(&cfg.out, &suite)?;
            let agg = harness::aggregate_file(&suite.records(), &suite.failed_policies);
            for g in &agg.groups {
                println!(
                    "{:<12} {:<15} success {:5.1}±{:4.1}  objects {:5.1}±{:4.1}  state {:5.1}±{:4.1}  ged {:5.2}±{:4.2}",
                    g.family.as_str(),
                    g.policy,
                    100.0 * g.success.mean,
                    100.0 * g.success.sem,
                    100.0 * g.object_recovery.mean,
                    100.0 * g.object_recovery.sem,
                    100.0 * g.state_recovery.mean,
                    100.0 * g.state_recovery.sem,
                    g.ged.mean,
                    g.ged.sem,
                );
            }
            for (p, e) in &suite.failed_policies {
                eprintln!("policy {p} aborted: {e}");
            }
            println!("outputs in {}", cfg.out.display());
            Ok(if !suite.failed_policies.is_empty() {
                3
            } else if suite.step_limit_hit() {
                4
            } else {
                0
            })
        }
        Cmd::Eval { scenario, graph, report } => {
            if let Some(r) = report {
                let recs = harness::read_report(&read(&r)?)?;
                let agg = harness::aggregate_file(&recs, &[]);
                println!("{}", serde_json::to_string_pretty(&agg).expect("aggregate serializes"));
                return Ok(0);
            }
            let s = harness::load_scenario_file(scenario.as_ref().expect("clap enforces scenario"))?;
            let gt = derive_gt_graph(&s.spec)?;
            match graph {
                Some(g) => {
                    let out = load_graph(&g)?;
                    let ged = metrics::scene_ged(&out, &gt);
                    println!("success {} ged {ged}", u8::from(ged == 0));
                }
                None => println!("{}", gt.to_json_pretty()),
            }
            Ok(0)
        }
        Cmd::ExportDot { graph, scenario, out } => {
            let g = match (graph, scenario) {
                (Some(p), _) => load_graph(&p)?,
                (None, Some(s)) => derive_gt_graph(&harness::load_scenario_file(&s)?.spec)?,
                (None, None) => unreachable!("clap enforces one input"),
            };
            match out {
                Some(p) => std::fs::write(&p, g.to_dot()).map_err(|source| HarnessError::Io { path: p, source })?,
                None => print!("{}", g.to_dot()),
            }
            Ok(0)
        }
        Cmd::Replay { trace, scenario, noise_seed } => {
            let text = read(&trace)?;
            let s = harness::load_scenario_file(&scenario)?;
            let noise = match noise_seed {
                Some(seed) => {
                    let (h, _) = acsg_explore::explorer::parse_trace(&text).map_err(HarnessError::Config)?;
                    Some(acsg_explore::percept::NoiseConfig { rng_seed: seed, ..h.config.noise })
                }
                None => None,
            };
            let rep = harness::replay(&text, &s.spec, noise.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
            Ok(if rep.world_divergence.is_some() || rep.ledger_divergence.is_some() { 2 } else { 0 })
        }
    }
}
