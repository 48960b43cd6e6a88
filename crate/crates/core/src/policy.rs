//! Decision making for exploration: which skill to apply to an object and
//! whether a chosen action is obstructed.

use crate::acsg::ActionType;
use crate::grid::Aabb;
use crate::worldsim::{Parent, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("remote policy unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote answer has no usable final answer: {0:?}")]
    RemoteUnparseable(String),
    #[error("prompt template missing: {0}")]
    TemplateMissing(String),
    #[error("bad rule table: {0}")]
    RuleTable(String),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    OpenDoorsOrDrawers,
    PickUpToReveal,
    NoAction,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::OpenDoorsOrDrawers, Decision::PickUpToReveal, Decision::NoAction];

    pub fn phrase(self) -> &'static str {
        match self {
            Decision::OpenDoorsOrDrawers => "Open the doors or drawers.",
            Decision::PickUpToReveal => "Pick up to reveal.",
            Decision::NoAction => "No action.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub node: u32,
    pub label: String,
    /// `(relation, other label)` pairs from the graph.
    pub relations: Vec<(String, String)>,
    pub physical_state: String,
    pub has_handle: bool,
    pub movable: bool,
    /// Bounding box extents in cells.
    pub footprint: [i32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerQuery {
    pub object: ObjectSummary,
    pub explored: usize,
    pub unexplored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: u32,
    pub label: String,
    /// Box the object occupies, or occupied before the robot parked it.
    pub footprint: Aabb,
    pub parked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierQuery {
    pub action: ActionType,
    pub target: ObjectSummary,
    pub sweep: Option<Aabb>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    BlockedBy { object: u32, prerequisite: ActionType },
}

/// Ground truth made available to the oracle policy only.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecisionContext<'a> {
    pub world: Option<&'a World>,
    /// Scene object under the queried node.
    pub ground: Option<u32>,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;
    fn propose(&mut self, q: &ProposerQuery, ctx: &DecisionContext) -> Result<Decision, PolicyError>;
    fn verify(&mut self, q: &VerifierQuery, ctx: &DecisionContext) -> Result<Verdict, PolicyError>;
}

#[derive(Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("url", &self.url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("timeout_secs", &self.timeout_secs)
            .field("retries", &self.retries)
            .finish()
    }
}

impl RemoteConfig {
    pub const URL_VAR: &'static str = "ACSG_REMOTE_URL";
    pub const TOKEN_VAR: &'static str = "ACSG_REMOTE_TOKEN";

    /// Endpoint and credential from the environment.
    pub fn from_env() -> Result<RemoteConfig, PolicyError> {
        let url = std::env::var(Self::URL_VAR)
            .map_err(|_| PolicyError::RemoteUnavailable(format!("{} is not set", Self::URL_VAR)))?;
        Ok(RemoteConfig { url, token: std::env::var(Self::TOKEN_VAR).ok(), timeout_secs: 30, retries: 2 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    Random { seed: u64 },
    HeuristicOpen,
    HeuristicFull,
    Rule,
    Oracle,
    Remote(RemoteConfig),
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random { .. } => "random",
            PolicyKind::HeuristicOpen => "heuristic-open",
            PolicyKind::HeuristicFull => "heuristic-full",
            PolicyKind::Rule => "rule",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Remote(_) => "remote",
        }
    }

    /// Parses a CLI name. `remote` reads its endpoint from the environment.
    pub fn parse(name: &str, seed: u64) -> Result<PolicyKind, PolicyError> {
        Ok(match name {
            "random" => PolicyKind::Random { seed },
            "heuristic-open" => PolicyKind::HeuristicOpen,
            "heuristic-full" => PolicyKind::HeuristicFull,
            "rule" => PolicyKind::Rule,
            "oracle" => PolicyKind::Oracle,
            "remote" => PolicyKind::Remote(RemoteConfig::from_env()?),
            other => return Err(PolicyError::UnknownPolicy(other.to_string())),
        })
    }

    pub fn build(&self) -> Box<dyn Policy> {
        match self {
            PolicyKind::Random { seed } => Box::new(RandomPolicy::new(*seed)),
            PolicyKind::HeuristicOpen => Box::new(HeuristicPolicy { full: false }),
            PolicyKind::HeuristicFull => Box::new(HeuristicPolicy { full: true }),
            PolicyKind::Rule => Box::new(RulePolicy::new(RuleTable::builtin().clone())),
            PolicyKind::Oracle => Box::new(OraclePolicy),
            PolicyKind::Remote(cfg) => Box::new(RemotePolicy::new(cfg.clone())),
        }
    }
}

/// First candidate, by node id, whose box meets the sweep.
pub fn geometric_verdict(q: &VerifierQuery) -> Verdict {
    let Some(sweep) = q.sweep else { return Verdict::Feasible };
    q.candidates
        .iter()
        .filter(|c| c.footprint.intersects(&sweep))
        .map(|c| (c.parked, c.node))
        .min()
        .map(|(_, n)| n)
        .map_or(Verdict::Feasible, |object| Verdict::BlockedBy { object, prerequisite: ActionType::PickToIdle })
}

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(&mut self, _q: &ProposerQuery, _ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        Ok(Decision::ALL[self.rng.random_range(0..3)])
    }

    fn verify(&mut self, _q: &VerifierQuery, _ctx: &DecisionContext) -> Result<Verdict, PolicyError> {
        Ok(Verdict::Feasible)
    }
}

/// Opens everything with a handle; the full variant also picks up every
/// movable object. Never checks for obstructions.
pub struct HeuristicPolicy {
    pub full: bool,
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> &'static str {
        if self.full {
            "heuristic-full"
        } else {
            "heuristic-open"
        }
    }

    fn propose(&mut self, q: &ProposerQuery, _ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        let o = &q.object;
        Ok(if o.has_handle {
            Decision::OpenDoorsOrDrawers
        } else if self.full && o.movable && o.label != "handle" {
            Decision::PickUpToReveal
        } else {
            Decision::NoAction
        })
    }

    fn verify(&mut self, _q: &VerifierQuery, _ctx: &DecisionContext) -> Result<Verdict, PolicyError> {
        Ok(Verdict::Feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub labels: Vec<String>,
    pub decision: RuleDecision,
    /// Smallest bounding-box volume the rule applies to.
    #[serde(default)]
    pub min_volume: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDecision {
    Open,
    Pick,
    NoAction,
}

impl From<RuleDecision> for Decision {
    fn from(d: RuleDecision) -> Self {
        match d {
            RuleDecision::Open => Decision::OpenDoorsOrDrawers,
            RuleDecision::Pick => Decision::PickUpToReveal,
            RuleDecision::NoAction => Decision::NoAction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub version: u32,
    pub default: RuleDecision,
    pub rules: Vec<Rule>,
}

const DEFAULT_RULES: &str = include_str!("../assets/rule_policy.json");

impl RuleTable {
    pub fn from_json(s: &str) -> Result<RuleTable, PolicyError> {
        let t: RuleTable = serde_json::from_str(s).map_err(|e| PolicyError::RuleTable(e.to_string()))?;
        if t.rules.iter().any(|r| r.labels.is_empty()) {
            return Err(PolicyError::RuleTable("rule without labels".into()));
        }
        Ok(t)
    }

    pub fn builtin() -> &'static RuleTable {
        static T: OnceLock<RuleTable> = OnceLock::new();
        T.get_or_init(|| RuleTable::from_json(DEFAULT_RULES).expect("bundled rule table is valid"))
    }

    pub fn decide(&self, o: &ObjectSummary) -> Decision {
        let volume = o.footprint.iter().map(|x| *x as i64).product::<i64>();
        self.rules
            .iter()
            .find(|r| r.labels.contains(&o.label) && r.min_volume.is_none_or(|m| volume >= m))
            .map_or(self.default, |r| r.decision)
            .into()
    }
}

pub struct RulePolicy {
    table: RuleTable,
}

impl RulePolicy {
    pub fn new(table: RuleTable) -> Self {
        RulePolicy { table }
    }
}

impl Policy for RulePolicy {
    fn name(&self) -> &'static str {
        "rule"
    }

    fn propose(&mut self, q: &ProposerQuery, _ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        Ok(self.table.decide(&q.object))
    }

    fn verify(&mut self, q: &VerifierQuery, _ctx: &DecisionContext) -> Result<Verdict, PolicyError> {
        Ok(geometric_verdict(q))
    }
}

/// Decides from the scene's declared structure.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn propose(&mut self, _q: &ProposerQuery, ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        let (Some(world), Some(id)) = (ctx.world, ctx.ground) else { return Ok(Decision::NoAction) };
        let spec = world.spec();
        let Some(o) = spec.object(id) else { return Ok(Decision::NoAction) };
        if !o.compartments.is_empty() || o.handle_of.is_some() {
            return Ok(Decision::OpenDoorsOrDrawers);
        }
        let conceals = spec
            .objects
            .iter()
            .any(|c| matches!(c.parent, Some(Parent::CoveredBy { id: x } | Parent::NestedIn { id: x }) if x == id));
        Ok(if conceals { Decision::PickUpToReveal } else { Decision::NoAction })
    }

    fn verify(&mut self, q: &VerifierQuery, _ctx: &DecisionContext) -> Result<Verdict, PolicyError> {
        Ok(geometric_verdict(q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Proposer,
    Verifier,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Proposer => "proposer",
            Role::Verifier => "verifier",
        }
    }
}

fn templates() -> &'static BTreeMap<&'static str, &'static str> {
    static T: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    T.get_or_init(|| {
        BTreeMap::from([
            ("proposer", include_str!("../assets/prompts/proposer.txt")),
            ("verifier", include_str!("../assets/prompts/verifier.txt")),
        ])
    })
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

fn describe(o: &ObjectSummary) -> String {
    format!("{} (node {})", o.label, o.node)
}

pub fn render_proposer(q: &ProposerQuery) -> Result<String, PolicyError> {
    let t = templates().get("proposer").ok_or_else(|| PolicyError::TemplateMissing("proposer".into()))?;
    let o = &q.object;
    let relations = if o.relations.is_empty() {
        "none".to_string()
    } else {
        o.relations.iter().map(|(r, l)| format!("{r} {l}")).collect::<Vec<_>>().join(", ")
    };
    Ok(fill(
        t,
        &[
            ("label", o.label.clone()),
            ("state", o.physical_state.clone()),
            ("has_handle", if o.has_handle { "yes" } else { "no" }.into()),
            ("movable", if o.movable { "yes" } else { "no" }.into()),
            ("footprint", format!("{} x {} x {}", o.footprint[0], o.footprint[1], o.footprint[2])),
            ("relations", relations),
            ("explored", q.explored.to_string()),
            ("unexplored", q.unexplored.to_string()),
        ],
    ))
}

pub fn render_verifier(q: &VerifierQuery) -> Result<String, PolicyError> {
    let t = templates().get("verifier").ok_or_else(|| PolicyError::TemplateMissing("verifier".into()))?;
    let sweep = q.sweep.map_or("unknown".to_string(), |b| format!("{:?}..{:?}", b.min, b.max));
    let candidates = if q.candidates.is_empty() {
        "  none".to_string()
    } else {
        q.candidates
            .iter()
            .map(|c| format!("  - object {}: {} occupying {:?}..{:?}", c.node, c.label, c.footprint.min, c.footprint.max))
            .collect::<Vec<_>>()
            .join("\n")
    };
    Ok(fill(
        t,
        &[
            ("action", q.action.as_str().to_string()),
            ("target", describe(&q.target)),
            ("sweep", sweep),
            ("candidates", candidates),
        ],
    ))
}

/// Text after the last `[Final Answer]` marker, lowercased with trailing
/// punctuation removed.
pub fn final_answer(text: &str) -> Option<String> {
    let marker = "[final answer]";
    let line = text.lines().rev().find(|l| l.to_lowercase().contains(marker))?;
    let lower = line.to_lowercase();
    let start = lower.find(marker)? + marker.len();
    let rest = lower[start..].trim_start_matches(|c: char| c == ':' || c.is_whitespace());
    let ans = rest.trim().trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if ans.is_empty() {
        None
    } else {
        Some(ans.to_string())
    }
}

pub fn parse_decision(text: &str) -> Result<Decision, PolicyError> {
    let a = final_answer(text).ok_or_else(|| PolicyError::RemoteUnparseable(text.to_string()))?;
    if a.starts_with("open") {
        Ok(Decision::OpenDoorsOrDrawers)
    } else if a.starts_with("pick") {
        Ok(Decision::PickUpToReveal)
    } else if a.starts_with("no action") || a == "none" {
        Ok(Decision::NoAction)
    } else {
        Err(PolicyError::RemoteUnparseable(a))
    }
}

/// Parses a verifier reply. A blocker must name one of `candidates`.
pub fn parse_verdict(text: &str, candidates: &[u32]) -> Result<Verdict, PolicyError> {
    let a = final_answer(text).ok_or_else(|| PolicyError::RemoteUnparseable(text.to_string()))?;
    if a.starts_with("feasible") {
        return Ok(Verdict::Feasible);
    }
    if a.starts_with("blocked") {
        let digits: String = a
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        if let Ok(object) = digits.parse::<u32>() {
            if candidates.contains(&object) {
                return Ok(Verdict::BlockedBy { object, prerequisite: ActionType::PickToIdle });
            }
        }
    }
    Err(PolicyError::RemoteUnparseable(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub role: String,
    pub prompt: String,
    pub query_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub text: String,
}

pub fn parse_remote_response(body: &[u8]) -> Result<RemoteResponse, PolicyError> {
    serde_json::from_slice(body).map_err(|e| PolicyError::RemoteUnparseable(e.to_string()))
}

pub struct RemotePolicy {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemotePolicy { cfg, agent }
    }

    fn ask(&self, role: Role, prompt: String) -> Result<String, PolicyError> {
        let req = RemoteRequest {
            role: role.as_str().into(),
            query_digest: crate::worldsim::hex_digest(prompt.as_bytes()),
            prompt,
        };
        let mut last = String::new();
        for _ in 0..=self.cfg.retries {
            let mut call = self.agent.post(&self.cfg.url).header("content-type", "application/json");
            if let Some(t) = &self.cfg.token {
                call = call.header("authorization", &format!("Bearer {t}"));
            }
            match call.send_json(&req) {
                Ok(mut resp) if resp.status().is_success() => {
                    let body = resp
                        .body_mut()
                        .read_to_vec()
                        .map_err(|e| PolicyError::RemoteUnavailable(e.to_string()))?;
                    return parse_remote_response(&body).map(|r| r.text);
                }
                Ok(resp) => last = format!("status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(PolicyError::RemoteUnavailable(last))
    }
}

impl Policy for RemotePolicy {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn propose(&mut self, q: &ProposerQuery, _ctx: &DecisionContext) -> Result<Decision, PolicyError> {
        let text = self.ask(Role::Proposer, render_proposer(q)?)?;
        parse_decision(&text)
    }

    fn verify(&mut self, q: &VerifierQuery, _ctx: &DecisionContext) -> Result<Verdict, PolicyError> {
        let text = self.ask(Role::Verifier, render_verifier(q)?)?;
        let ids: Vec<u32> = q.candidates.iter().map(|c| c.node).collect();
        parse_verdict(&text, &ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obj(label: &str, has_handle: bool, movable: bool, footprint: [i32; 3]) -> ObjectSummary {
        ObjectSummary {
            node: 3,
            label: label.into(),
            relations: vec![],
            physical_state: "at_origin".into(),
            has_handle,
            movable,
            footprint,
        }
    }

    fn pq(o: ObjectSummary) -> ProposerQuery {
        ProposerQuery { object: o, explored: 2, unexplored: 5 }
    }

    fn vq(cands: Vec<Candidate>) -> VerifierQuery {
        VerifierQuery {
            action: ActionType::OpenDoor,
            target: obj("handle", true, false, [1, 1, 4]),
            sweep: Some(Aabb::new([0, 0, 0], [5, 5, 5])),
            candidates: cands,
        }
    }

    fn cand(node: u32, min: [i32; 3], max: [i32; 3]) -> Candidate {
        Candidate { node, label: "ketchup".into(), footprint: Aabb::new(min, max), parked: false }
    }

    #[test]
    fn heuristics_follow_their_definitions() {
        let ctx = DecisionContext::default();
        let mut open = HeuristicPolicy { full: false };
        let mut full = HeuristicPolicy { full: true };
        assert_eq!(open.propose(&pq(obj("chair", false, false, [3, 3, 5])), &ctx).unwrap(), Decision::NoAction);
        assert_eq!(full.propose(&pq(obj("mug", false, true, [2, 2, 3])), &ctx).unwrap(), Decision::PickUpToReveal);
        assert_eq!(open.propose(&pq(obj("mug", false, true, [2, 2, 3])), &ctx).unwrap(), Decision::NoAction);
        assert_eq!(open.propose(&pq(obj("cabinet", true, false, [9, 9, 9])), &ctx).unwrap(), Decision::OpenDoorsOrDrawers);
    }

    #[test]
    fn rule_table_defaults() {
        let t = RuleTable::builtin();
        assert_eq!(t.decide(&obj("cabinet", true, false, [9, 8, 12])), Decision::OpenDoorsOrDrawers);
        assert_eq!(t.decide(&obj("cloth", false, true, [10, 10, 1])), Decision::PickUpToReveal);
        assert_eq!(t.decide(&obj("doll", false, true, [4, 4, 4])), Decision::PickUpToReveal);
        assert_eq!(t.decide(&obj("doll", false, true, [2, 2, 3])), Decision::NoAction);
        assert_eq!(t.decide(&obj("plate", false, true, [3, 3, 1])), Decision::NoAction);
        assert!(RuleTable::from_json(r#"{"version":1,"default":"no_action","rules":[{"labels":[],"decision":"open"}]}"#).is_err());
    }

    #[test]
    fn geometric_verification() {
        let ctx = DecisionContext::default();
        let mut r = RulePolicy::new(RuleTable::builtin().clone());
        let blocked = vq(vec![cand(9, [4, 4, 0], [5, 5, 3]), cand(7, [3, 3, 0], [4, 4, 3])]);
        assert_eq!(
            r.verify(&blocked, &ctx).unwrap(),
            Verdict::BlockedBy { object: 7, prerequisite: ActionType::PickToIdle }
        );
        assert_eq!(r.verify(&vq(vec![cand(9, [8, 8, 0], [9, 9, 3])]), &ctx).unwrap(), Verdict::Feasible);
        assert_eq!(RandomPolicy::new(1).verify(&blocked, &ctx).unwrap(), Verdict::Feasible);
    }

    #[test]
    fn random_is_seeded() {
        let q = pq(obj("mug", false, true, [2, 2, 3]));
        let ctx = DecisionContext::default();
        let run = |s| {
            let mut p = RandomPolicy::new(s);
            (0..50).map(|_| p.propose(&q, &ctx).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        let all = run(4);
        assert!(Decision::ALL.iter().all(|d| all.contains(d)));
    }

    #[test]
    fn oracle_picks_outer_doll() {
        use crate::worldsim::{generate_scenario, Family};
        let s = generate_scenario(Family::Recursive, 1, 0);
        let w = World::new(s.clone());
        let outer = s
            .objects
            .iter()
            .find(|o| o.parent.is_none() && (o.label == "doll" || o.label == "cloth"))
            .unwrap()
            .id;
        let ctx = DecisionContext { world: Some(&w), ground: Some(outer) };
        let q = pq(obj("doll", false, true, [8, 8, 6]));
        assert_eq!(OraclePolicy.propose(&q, &ctx).unwrap(), Decision::PickUpToReveal);
    }

    #[test]
    fn prompts_have_markers_and_none_section() {
        let p = render_proposer(&pq(obj("fridge", true, false, [6, 6, 16]))).unwrap();
        assert!(p.contains("[Analysis]") && p.contains("[Final Answer]") && p.contains("fridge"));
        assert!(!p.contains("{{"));
        let v = render_verifier(&vq(vec![])).unwrap();
        assert!(v.contains("  none"));
        let v = render_verifier(&vq(vec![cand(12, [1, 1, 0], [2, 2, 3])])).unwrap();
        assert!(v.contains("object 12: ketchup"));
        assert_eq!(p, render_proposer(&pq(obj("fridge", true, false, [6, 6, 16]))).unwrap());
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_decision("[Analysis]: x\n[Final Answer]: Open the doors or drawers.").unwrap(), Decision::OpenDoorsOrDrawers);
        assert_eq!(parse_decision("[final answer]:   PICK UP TO REVEAL!!").unwrap(), Decision::PickUpToReveal);
        assert_eq!(parse_decision("[Final Answer]: No action").unwrap(), Decision::NoAction);
        assert!(parse_decision("I think open").is_err());
        assert!(parse_decision("[Final Answer]: dance").is_err());
        assert_eq!(parse_verdict("[Final Answer]: Feasible.", &[]).unwrap(), Verdict::Feasible);
        assert_eq!(
            parse_verdict("[Final Answer]: Blocked by object 12.", &[12]).unwrap(),
            Verdict::BlockedBy { object: 12, prerequisite: ActionType::PickToIdle }
        );
        assert!(parse_verdict("[Final Answer]: Blocked by object 13.", &[12]).is_err());
    }

    fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/decide", listener.local_addr().unwrap());
        let h = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (mut s, _) = listener.accept().unwrap();
                let mut r = BufReader::new(s.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    let l = line.to_lowercase();
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if l.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                r.read_exact(&mut buf).unwrap();
                bodies.push(format!("{auth}|{}", String::from_utf8(buf).unwrap()));
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                s.write_all(resp.as_bytes()).unwrap();
            }
            bodies
        });
        (url, h)
    }

    #[test]
    fn remote_round_trip_with_retry() {
        let ok = serde_json::json!({"text": "[Analysis]: has handles\n[Final Answer]: Open the doors or drawers."}).to_string();
        let (url, h) = mock_server(vec![(500, "{}".into()), (200, ok)]);
        let mut p = RemotePolicy::new(RemoteConfig { url, token: Some("t0k".into()), timeout_secs: 5, retries: 2 });
        let d = p.propose(&pq(obj("cabinet", true, false, [9, 9, 9])), &DecisionContext::default()).unwrap();
        assert_eq!(d, Decision::OpenDoorsOrDrawers);
        let bodies = h.join().unwrap();
        assert_eq!(bodies.len(), 2);
        assert!(bodies[1].starts_with("authorization: Bearer t0k|"));
        let req: RemoteRequest = serde_json::from_str(bodies[1].split_once('|').unwrap().1).unwrap();
        assert_eq!(req.role, "proposer");
        assert!(req.prompt.contains("cabinet"));
    }

    #[test]
    fn token_never_shows_in_debug_output() {
        let c = RemoteConfig { url: "http://x".into(), token: Some("s3cret".into()), timeout_secs: 5, retries: 0 };
        let shown = format!("{:?}", PolicyKind::Remote(c));
        assert!(!shown.contains("s3cret") && shown.contains("redacted"));
    }

    #[test]
    fn remote_gives_up_after_retries() {
        let (url, h) = mock_server(vec![(503, "{}".into()), (503, "{}".into())]);
        let mut p = RemotePolicy::new(RemoteConfig { url, token: None, timeout_secs: 5, retries: 1 });
        let r = p.verify(&vq(vec![]), &DecisionContext::default());
        assert!(matches!(r, Err(PolicyError::RemoteUnavailable(_))));
        h.join().unwrap();
    }

    proptest! {
        #[test]
        fn heuristic_open_never_picks(label in "[a-z]{1,8}", h: bool, m: bool, x in 1i32..20, y in 1i32..20, z in 1i32..20) {
            let mut p = HeuristicPolicy { full: false };
            let d = p.propose(&pq(obj(&label, h, m, [x, y, z])), &DecisionContext::default()).unwrap();
            prop_assert_ne!(d, Decision::PickUpToReveal);
        }
    }
}
