//! The interactive exploration loop: propose, verify, act, observe and grow
//! the scene graph, then put the scene back the way it was found.

use crate::acsg::{
    ActionType, EdgeKind, GraphError, NodeId, PhysicalState, PrimitiveParams, Relation, SceneGraph,
};
use crate::catalog::{Catalog, ObjectKind};
use crate::geometry::{self, JointKind, JointParams};
use crate::grid::{self, Aabb, Cell, Vec3};
use crate::memory::{MemoryStore, MergeConfig};
use crate::percept::{self, NoiseConfig};
use crate::policy::{
    Candidate, Decision, DecisionContext, ObjectSummary, Policy, PolicyError, ProposerQuery, Verdict, VerifierQuery,
};
use crate::worldsim::{
    ActionOutcome, OutcomeStatus, Region, ViewKind, World, WorldError, WorldState, INTERIOR_STANDOFF,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "acsg-trace/1";

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid explorer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorerConfig {
    pub lambda: f64,
    pub max_steps: u32,
    pub recover_state: bool,
    /// Viewpoints observed before the first step.
    pub sweep: Vec<String>,
    pub noise: NoiseConfig,
    pub merge: MergeConfig,
    /// Chance that an executed action silently has no effect.
    pub action_failure_prob: f64,
    pub failure_seed: u64,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            lambda: 0.1,
            max_steps: 200,
            recover_state: true,
            sweep: ["overhead", "exterior_front", "exterior_right", "exterior_back", "exterior_left"]
                .map(String::from)
                .to_vec(),
            noise: NoiseConfig::default(),
            merge: MergeConfig::default(),
            action_failure_prob: 0.0,
            failure_seed: 0,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ExploreError::Config("lambda must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.action_failure_prob) {
            return Err(ExploreError::Config("action_failure_prob must lie in [0, 1]".into()));
        }
        self.noise.validate().map_err(ExploreError::Config)?;
        self.merge.validate().map_err(|e| ExploreError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub graph: i64,
    pub explore: u64,
    pub time: f64,
}

impl Rewards {
    pub fn total(&self) -> f64 {
        self.graph as f64 + self.explore as f64 + self.time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub lambda: f64,
    pub entries: Vec<Rewards>,
}

impl RewardLedger {
    pub fn sum_graph(&self) -> i64 {
        self.entries.iter().map(|r| r.graph).sum()
    }

    pub fn sum_time(&self) -> f64 {
        self.entries.iter().map(|r| r.time).sum()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(Rewards::total).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Init,
    Object,
    Action,
    Intervention,
    Recovery,
}

/// A primitive sent to the world: what, and the cell it grasps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub action: ActionType,
    pub grasp: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub branch: Branch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ActionOutcome>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub injected_failure: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<usize>,
    /// Viewpoints observed in this step, with the digest of each detection set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<(String, String)>,
    pub world: String,
    pub rewards: Option<Rewards>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub policy: String,
    pub config: ExplorerConfig,
}

#[derive(Debug, Clone)]
pub struct ExplorationResult {
    pub graph: SceneGraph,
    pub header: TraceHeader,
    pub trace: Vec<TraceRecord>,
    pub ledger: RewardLedger,
    pub initial_state: WorldState,
    pub final_state: WorldState,
    /// Scene objects visible before any action.
    pub initial_visible: BTreeSet<u32>,
    pub observed_regions: BTreeSet<Region>,
    pub exploration_actions: usize,
    pub recovery_actions: usize,
    pub step_limit_hit: bool,
    pub injected_failures: usize,
    /// Actions put back into the unexplored set by interventions.
    pub requeued: Vec<NodeId>,
    /// After each successful pick: stored cells of the picked object left
    /// at its former place.
    pub stale_after_pick: Vec<usize>,
    pub initial_nodes: usize,
    /// The scenario as it stands after any interventions.
    pub final_scenario: crate::worldsim::ScenarioSpec,
}

impl ExplorationResult {
    pub fn action_count(&self) -> usize {
        self.exploration_actions + self.recovery_actions
    }

    /// Header line followed by one JSON line per record.
    pub fn trace_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.trace_jsonl().as_bytes())
    }
}

/// Parses a JSON-lines trace into its header and records.
pub fn parse_trace(text: &str) -> Result<(TraceHeader, Vec<TraceRecord>), String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or("empty trace")?;
    let header: TraceHeader = serde_json::from_str(head).map_err(|e| format!("header: {e}"))?;
    if header.schema != TRACE_SCHEMA {
        return Err(format!("unsupported trace schema {:?}", header.schema));
    }
    let mut recs = Vec::new();
    for (i, l) in lines.enumerate() {
        recs.push(serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 2))?);
    }
    Ok((header, recs))
}

struct Executed {
    action: ActionType,
    node: NodeId,
    grasp: Cell,
    displacement: Option<Cell>,
}

/// Mutable state of one exploration run.
pub struct Explorer<'p> {
    pub world: World,
    pub graph: SceneGraph,
    pub store: MemoryStore,
    policy: &'p mut dyn Policy,
    cfg: ExplorerConfig,
    node_of: BTreeMap<u32, NodeId>,
    stack: Vec<NodeId>,
    step: u32,
    ledger: RewardLedger,
    trace: Vec<TraceRecord>,
    executed: Vec<Executed>,
    /// Objects the robot parked, with the box they came from.
    parked: BTreeMap<NodeId, Aabb>,
    blocked: BTreeSet<(NodeId, NodeId)>,
    observed: BTreeSet<Region>,
    exploration_actions: usize,
    recovery_actions: usize,
    injected_failures: usize,
    fail_rng: ChaCha8Rng,
    requeued: Vec<NodeId>,
    stale_after_pick: Vec<usize>,
}

fn scene_digest(w: &World) -> String {
    crate::worldsim::hex_digest(w.spec().to_json().as_bytes())
}

impl<'p> Explorer<'p> {
    pub fn new(world: World, policy: &'p mut dyn Policy, cfg: ExplorerConfig) -> Result<Self, ExploreError> {
        cfg.validate()?;
        Ok(Explorer {
            world,
            graph: SceneGraph::new(cfg.noise.feature_dim),
            store: MemoryStore::new(cfg.merge.clone()),
            policy,
            ledger: RewardLedger { lambda: cfg.lambda, entries: Vec::new() },
            fail_rng: ChaCha8Rng::seed_from_u64(cfg.failure_seed),
            cfg,
            node_of: BTreeMap::new(),
            stack: Vec::new(),
            step: 0,
            trace: Vec::new(),
            executed: Vec::new(),
            parked: BTreeMap::new(),
            blocked: BTreeSet::new(),
            observed: BTreeSet::new(),
            exploration_actions: 0,
            recovery_actions: 0,
            injected_failures: 0,
            requeued: Vec::new(),
            stale_after_pick: Vec::new(),
        })
    }

    /// Runs the whole loop and recovery.
    pub fn run(mut self) -> Result<ExplorationResult, ExploreError> {
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: self.world.spec().name.clone(),
            scenario_digest: scene_digest(&self.world),
            policy: self.policy.name().into(),
            config: self.cfg.clone(),
        };
        let initial_state = self.world.state().clone();
        let initial_visible = self.world.accessible_objects();
        self.world.set_step(0);
        let views = self.cfg.sweep.clone();
        let seen = self.observe(&views)?;
        self.sync_nodes(None)?;
        let initial_nodes = self.graph.len();
        self.record(TraceRecord {
            step: 0,
            branch: Branch::Init,
            node: None,
            decision: None,
            verdict: None,
            command: None,
            outcome: None,
            injected_failure: false,
            events: vec![],
            views: seen,
            world: self.world.digest(),
            rewards: None,
        });
        let mut step_limit_hit = false;
        loop {
            let pending_u = self.unexplored_count();
            let due = self.world.due_events(self.step + 1, pending_u == 0);
            if pending_u == 0 && due.is_empty() {
                break;
            }
            if self.step >= self.cfg.max_steps {
                step_limit_hit = true;
                break;
            }
            self.step += 1;
            self.world.set_step(self.step);
            if !due.is_empty() {
                self.intervention_step(&due)?;
            } else {
                self.step_once()?;
            }
        }
        if self.cfg.recover_state {
            self.recover()?;
        }
        Ok(ExplorationResult {
            graph: self.graph,
            header,
            trace: self.trace,
            ledger: self.ledger,
            initial_state,
            final_state: self.world.state().clone(),
            initial_visible,
            observed_regions: self.observed,
            exploration_actions: self.exploration_actions,
            recovery_actions: self.recovery_actions,
            step_limit_hit,
            injected_failures: self.injected_failures,
            requeued: self.requeued,
            stale_after_pick: self.stale_after_pick,
            initial_nodes,
            final_scenario: self.world.spec().clone(),
        })
    }

    fn unexplored_count(&self) -> usize {
        self.graph.unexplored_set().len()
    }

    fn record(&mut self, r: TraceRecord) {
        self.trace.push(r);
    }

    fn blank(&self, branch: Branch, node: Option<NodeId>) -> TraceRecord {
        TraceRecord {
            step: self.step,
            branch,
            node: node.map(|n| n.0),
            decision: None,
            verdict: None,
            command: None,
            outcome: None,
            injected_failure: false,
            events: vec![],
            views: vec![],
            world: String::new(),
            rewards: None,
        }
    }

    /// Wraps one loop iteration with ledger accounting.
    fn account(&mut self, v0: usize, u0: usize, mut rec: TraceRecord) {
        let v1 = self.graph.len();
        let u1 = self.unexplored_count();
        let r = Rewards {
            graph: v1 as i64 - v0 as i64,
            explore: u0.saturating_sub(u1) as u64,
            time: -self.cfg.lambda,
        };
        self.ledger.entries.push(r);
        rec.rewards = Some(r);
        rec.world = self.world.digest();
        self.record(rec);
    }

    /// Top of the stack that is still unexplored.
    fn pop_next(&mut self) -> Option<NodeId> {
        while let Some(n) = self.stack.pop() {
            if self.graph.node(n).is_some_and(|x| x.is_unexplored()) {
                return Some(n);
            }
        }
        // anything left unexplored but not on the stack, newest first
        self.graph
            .unexplored_set()
            .into_iter()
            .max_by_key(|n| (self.graph.node(*n).map(|x| x.discovered_at()), *n))
    }

    /// Executes exactly one branch on the most recent unexplored node.
    pub fn step_once(&mut self) -> Result<(), ExploreError> {
        let v0 = self.graph.len();
        let u0 = self.unexplored_count();
        let Some(n) = self.pop_next() else { return Ok(()) };
        let rec = if self.graph.object(n).is_some() {
            self.object_branch(n)?
        } else {
            self.action_branch(n)?
        };
        self.account(v0, u0, rec);
        Ok(())
    }

    fn record_of(&self, n: NodeId) -> Option<u32> {
        self.graph.object(n).and_then(|o| o.geometry)
    }

    fn voxels_of(&self, n: NodeId) -> Vec<Cell> {
        self.record_of(n)
            .and_then(|r| self.store.get(r))
            .map(|r| r.voxels.iter().copied().collect())
            .unwrap_or_default()
    }

    fn ground_of(&self, n: NodeId) -> Option<u32> {
        let cells = self.voxels_of(n);
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for c in cells {
            if let Some(g) = self.world.object_at(c) {
                *votes.entry(g).or_default() += 1;
            }
        }
        votes.into_iter().max_by_key(|(g, k)| (*k, std::cmp::Reverse(*g))).map(|(g, _)| g)
    }

    fn label(&self, n: NodeId) -> String {
        self.graph.object(n).map(|o| o.label.clone()).unwrap_or_default()
    }

    fn summary(&self, n: NodeId) -> ObjectSummary {
        let o = self.graph.object(n).expect("summary of an object node");
        let cat = Catalog::builtin();
        let mut relations = Vec::new();
        for e in self.graph.in_edges(n) {
            if let EdgeKind::ObjObj(r) = e.kind {
                if e.src != self.graph.root() {
                    relations.push((r.as_str().to_string(), self.label(e.src)));
                }
            }
        }
        relations.sort();
        let footprint = Aabb::of(&self.voxels_of(n)).map(|b| [b.extent(0), b.extent(1), b.extent(2)]).unwrap_or([0; 3]);
        ObjectSummary {
            node: n.0,
            label: o.label.clone(),
            relations,
            physical_state: serde_json::to_value(o.physical_state)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            has_handle: !self.handles_of(n).is_empty(),
            movable: cat.movable(&o.label),
            footprint,
        }
    }

    /// Handle nodes operated when opening `n`: itself if it is a handle,
    /// else its handles.
    fn handles_of(&self, n: NodeId) -> Vec<NodeId> {
        let cat = Catalog::builtin();
        if cat.kind(&self.label(n)) == ObjectKind::Handle {
            return vec![n];
        }
        self.graph
            .out_edges(n)
            .filter(|e| e.kind == EdgeKind::ObjObj(Relation::BelongsTo))
            .map(|e| e.dst)
            .filter(|h| cat.kind(&self.label(*h)) == ObjectKind::Handle)
            .collect()
    }

    fn container_of(&self, handle: NodeId) -> Option<NodeId> {
        self.graph
            .in_edges(handle)
            .find(|e| e.kind == EdgeKind::ObjObj(Relation::BelongsTo))
            .map(|e| e.src)
    }

    fn find_action(&self, ty: ActionType, target: NodeId) -> Option<NodeId> {
        self.graph.actions().find(|a| a.target == target && a.action_type == ty).map(|a| a.id)
    }

    /// Open action and parameters for a handle, from stored geometry.
    fn open_params(&self, handle: NodeId) -> Option<(ActionType, PrimitiveParams)> {
        let hv = self.voxels_of(handle);
        let grasp = geometry::pickup_point(&hv)?;
        let hc = grid::centroid(&hv)?;
        let container = self.container_of(handle).map(|c| self.voxels_of(c)).unwrap_or_default();
        let panel = Aabb::of(&container);
        let dir = geometry::opening_direction(&hv, &container).ok();
        let axis = geometry::handle_principal_axis(&hv).ok();
        let joint = match (axis, dir) {
            (Some(a), Some(d)) => geometry::classify_joint(a, grid::to_vec3(d), hc, panel.as_ref()).ok(),
            _ => None,
        };
        let approach = dir.map(grid::to_vec3).unwrap_or([0.0, -1.0, 0.0]);
        let joint = joint.unwrap_or(JointParams { joint: JointKind::Prismatic, axis: approach, origin: None });
        let ty = match joint.joint {
            JointKind::Prismatic => ActionType::OpenDrawer,
            JointKind::Revolute => ActionType::OpenDoor,
        };
        Some((ty, PrimitiveParams { grasp, approach, joint: Some(joint) }))
    }

    fn pick_params(&self, n: NodeId) -> PrimitiveParams {
        PrimitiveParams {
            grasp: geometry::pickup_point(&self.voxels_of(n)).unwrap_or([0; 3]),
            approach: [0.0, 0.0, -1.0],
            joint: None,
        }
    }

    fn ensure_action(&mut self, ty: ActionType, target: NodeId, params: PrimitiveParams) -> Result<(NodeId, bool), ExploreError> {
        if let Some(a) = self.find_action(ty, target) {
            return Ok((a, false));
        }
        let a = self.graph.add_action_node(ty, target, params, self.step)?;
        self.graph.add_edge(target, a, EdgeKind::ObjAct)?;
        Ok((a, true))
    }

    fn object_branch(&mut self, n: NodeId) -> Result<TraceRecord, ExploreError> {
        self.insert_relations(n)?;
        let q = ProposerQuery {
            object: self.summary(n),
            explored: self.graph.len() - self.unexplored_count(),
            unexplored: self.unexplored_count(),
        };
        let ground = self.ground_of(n);
        let ctx = DecisionContext { world: Some(&self.world), ground };
        let d = self.policy.propose(&q, &ctx)?;
        let mut new = Vec::new();
        match d {
            Decision::NoAction => {}
            Decision::OpenDoorsOrDrawers => {
                for h in self.handles_of(n) {
                    if let Some((ty, params)) = self.open_params(h) {
                        let (a, created) = self.ensure_action(ty, h, params)?;
                        if created {
                            new.push(a);
                        }
                    }
                }
            }
            Decision::PickUpToReveal => {
                let params = self.pick_params(n);
                let (a, created) = self.ensure_action(ActionType::PickToIdle, n, params)?;
                if created {
                    new.push(a);
                }
            }
        }
        self.graph.mark_explored(n);
        for a in new.into_iter().rev() {
            self.stack.push(a);
        }
        let mut rec = self.blank(Branch::Object, Some(n));
        rec.decision = Some(d);
        Ok(rec)
    }

    /// Swept volume of an open action, from stored geometry.
    fn sweep_of(&self, a: NodeId) -> Option<Aabb> {
        let act = self.graph.action(a)?;
        let joint = act.primitive_params.joint.as_ref()?;
        let hc = grid::centroid(&self.voxels_of(act.target))?;
        let container = self.container_of(act.target)?;
        let panel = Aabb::of(&self.voxels_of(container))?;
        geometry::sweep_box(joint, &panel, hc)
    }

    fn candidates(&self, a: NodeId, sweep: Option<Aabb>) -> Vec<Candidate> {
        let Some(sweep) = sweep else { return Vec::new() };
        let cat = Catalog::builtin();
        let act = self.graph.action(a).expect("candidates for an action");
        let near = sweep.dilate(3);
        let mut out = Vec::new();
        for o in self.graph.objects() {
            if o.id == self.graph.root() || o.id == act.target || !cat.movable(&o.label) {
                continue;
            }
            let (footprint, parked) = match self.parked.get(&o.id) {
                Some(home) => (*home, true),
                None => match Aabb::of(&self.voxels_of(o.id)) {
                    Some(b) => (b, false),
                    None => continue,
                },
            };
            if footprint.intersects(&near) {
                out.push(Candidate { node: o.id.0, label: o.label.clone(), footprint, parked });
            }
        }
        out
    }

    fn action_branch(&mut self, a: NodeId) -> Result<TraceRecord, ExploreError> {
        let act = self.graph.action(a).expect("action node").clone();
        let sweep = if act.action_type.is_open() { self.sweep_of(a) } else { None };
        let cands = self.candidates(a, sweep);
        let q = VerifierQuery { action: act.action_type, target: self.summary(act.target), sweep, candidates: cands.clone() };
        let ground = self.ground_of(act.target);
        let ctx = DecisionContext { world: Some(&self.world), ground };
        let verdict = self.policy.verify(&q, &ctx)?;
        let mut rec = self.blank(Branch::Action, Some(a));
        rec.verdict = Some(verdict);
        if let Verdict::BlockedBy { object, prerequisite } = verdict {
            let b = NodeId(object);
            if !cands.iter().any(|c| c.node == object) {
                self.graph.mark_explored(a);
                return Ok(rec);
            }
            let params = self.pick_params(b);
            let (p, _) = self.ensure_action(prerequisite, b, params)?;
            self.graph.add_edge(p, a, EdgeKind::ActAct)?;
            let satisfied = self.parked.contains_key(&b) && self.graph.action(p).is_some_and(|x| x.executed);
            if satisfied {
                if let Some(sw) = sweep {
                    for c in cands.iter().filter(|c| c.parked && c.footprint.intersects(&sw)) {
                        if let Some(q) = self.find_action(ActionType::PickToIdle, NodeId(c.node)) {
                            self.graph.add_edge(q, a, EdgeKind::ActAct)?;
                        }
                    }
                }
            } else {
                if !self.blocked.insert((a, b)) {
                    // the same blocker again after its pick was tried
                    self.graph.mark_explored(a);
                    return Ok(rec);
                }
                self.stack.push(a);
                self.stack.push(p);
                return Ok(rec);
            }
        }
        self.execute(a, &mut rec)?;
        Ok(rec)
    }

    fn execute(&mut self, a: NodeId, rec: &mut TraceRecord) -> Result<(), ExploreError> {
        let act = self.graph.action(a).expect("action node").clone();
        let grasp = act.primitive_params.grasp;
        let cmd = Command { action: act.action_type, grasp };
        self.exploration_actions += 1;
        let inject = self.cfg.action_failure_prob > 0.0 && self.fail_rng.random_bool(self.cfg.action_failure_prob);
        let outcome = if inject {
            self.injected_failures += 1;
            ActionOutcome { status: OutcomeStatus::NoEffect, displacement: None }
        } else {
            self.send(cmd)
        };
        rec.command = Some(cmd);
        rec.outcome = Some(outcome);
        rec.injected_failure = inject;
        self.graph.mark_explored(a);
        if outcome.status != OutcomeStatus::Success {
            // a requeued open on a compartment left open still gets a look
            if outcome.status == OutcomeStatus::NoEffect && act.action_type.is_open() && !inject {
                let views = self.views_after(&act);
                rec.views = self.observe(&views)?;
                self.sync_nodes(Some(a))?;
            }
            return Ok(());
        }
        self.executed.push(Executed { action: act.action_type, node: act.target, grasp, displacement: outcome.displacement });
        match act.action_type {
            ActionType::PickToIdle => {
                let home: Vec<Cell> = self.voxels_of(act.target);
                if let Some(b) = Aabb::of(&home) {
                    self.parked.insert(act.target, b);
                }
                if let (Some(r), Some(d)) = (self.record_of(act.target), outcome.displacement) {
                    self.store.translate(r, d).ok();
                }
                self.set_state(act.target, PhysicalState::AtIdle);
                let views = self.views_after(&act);
                rec.views = self.observe(&views)?;
                self.sync_nodes(Some(a))?;
                let left = self
                    .record_of(act.target)
                    .and_then(|r| self.store.get(r))
                    .map(|r| home.iter().filter(|c| r.voxels.contains(*c)).count())
                    .unwrap_or(0);
                self.stale_after_pick.push(left);
            }
            _ => {
                if let Some(c) = self.container_of(act.target) {
                    self.set_state(c, PhysicalState::Open);
                }
                let views = self.views_after(&act);
                rec.views = self.observe(&views)?;
                self.sync_nodes(Some(a))?;
            }
        }
        Ok(())
    }

    fn set_state(&mut self, n: NodeId, s: PhysicalState) {
        if let Some(o) = self.graph.object_mut(n) {
            o.physical_state = s;
        }
    }

    /// Resolves the grasp cell to a scene object and applies the action.
    fn send(&mut self, cmd: Command) -> ActionOutcome {
        match self.world.object_at(cmd.grasp) {
            Some(t) => self.world.apply_action(cmd.action, t, &PrimitiveParams::default()),
            None => ActionOutcome { status: OutcomeStatus::InvalidTarget, displacement: None },
        }
    }

    /// Overhead, plus the interior view nearest the opened part.
    fn views_after(&self, act: &crate::acsg::ActionNode) -> Vec<String> {
        let mut v = vec!["overhead".to_string()];
        if act.action_type.is_open() {
            let p = &act.primitive_params;
            let want: Vec3 = grid::vadd(grid::to_vec3(p.grasp), grid::scale(p.approach, INTERIOR_STANDOFF));
            let best = self
                .world
                .spec()
                .viewpoints
                .iter()
                .filter(|vp| matches!(vp.kind, ViewKind::Interior { .. }))
                .min_by(|a, b| {
                    let da = grid::norm(grid::vsub(a.position, want));
                    let db = grid::norm(grid::vsub(b.position, want));
                    da.total_cmp(&db).then_with(|| a.name.cmp(&b.name))
                });
            if let Some(b) = best {
                v.push(b.name.clone());
            }
        }
        v
    }

    /// Renders, detects, merges and invalidates for each view. Returns the
    /// detection digest per view.
    fn observe(&mut self, views: &[String]) -> Result<Vec<(String, String)>, ExploreError> {
        let mut out = Vec::new();
        for v in views {
            let obs = self.world.render_observation(v)?;
            let dets = percept::detect(&obs, &self.cfg.noise);
            out.push((v.clone(), percept::digest(&dets)));
            self.store.integrate(&dets, obs.step);
            self.store.invalidate_stale(&obs);
            self.observed.extend(obs.observed_regions.iter().copied());
        }
        Ok(out)
    }

    /// Brings graph object nodes in line with the store: new records become
    /// nodes (revealed by `by`, if given), vanished records lose theirs.
    fn sync_nodes(&mut self, by: Option<NodeId>) -> Result<Vec<NodeId>, ExploreError> {
        let cat = Catalog::builtin();
        let gone: Vec<(u32, NodeId)> =
            self.node_of.iter().filter(|(r, _)| self.store.get(**r).is_none()).map(|(r, n)| (*r, *n)).collect();
        for (r, n) in gone {
            self.node_of.remove(&r);
            self.remove_object(n);
        }
        let mut fresh = Vec::new();
        let recs: Vec<(u32, String, Vec<f64>)> = self
            .store
            .records()
            .map(|r| (r.id, r.label().to_string(), r.fused_feature.clone()))
            .collect();
        for (rid, label, feature) in recs {
            match self.node_of.get(&rid) {
                Some(n) => {
                    let dim = self.graph.feature_dim();
                    if let Some(o) = self.graph.object_mut(*n) {
                        o.label = label;
                        o.feature = fit(feature, dim);
                    }
                }
                None => {
                    let state = if cat.kind(&label) == ObjectKind::Container {
                        PhysicalState::Closed
                    } else {
                        PhysicalState::AtOrigin
                    };
                    let f = fit(feature, self.graph.feature_dim());
                    let n = self.graph.add_object_node(&label, f, Some(rid), state, self.step);
                    self.node_of.insert(rid, n);
                    fresh.push(n);
                }
            }
        }
        if let Some(a) = by.filter(|a| self.graph.contains(*a)) {
            for n in &fresh {
                self.graph.add_edge(a, *n, EdgeKind::ActObj)?;
            }
        }
        for n in &fresh {
            self.insert_relations(*n)?;
        }
        let all: Vec<NodeId> = self.node_of.values().copied().collect();
        for n in all {
            if !fresh.contains(&n) {
                self.insert_relations(n)?;
            }
        }
        for n in &fresh {
            self.ensure_reachable(*n)?;
        }
        self.repair_reachability()?;
        for n in fresh.iter() {
            self.stack.push(*n);
        }
        Ok(fresh)
    }

    fn remove_object(&mut self, n: NodeId) {
        let acts: Vec<NodeId> = self.graph.actions().filter(|a| a.target == n).map(|a| a.id).collect();
        for a in acts {
            self.graph.remove_node(a);
        }
        self.parked.remove(&n);
        self.graph.remove_node(n);
    }

    /// Adds relation edges between `n` and other stored instances. A found
    /// parent replaces a provisional edge from the root.
    fn insert_relations(&mut self, n: NodeId) -> Result<(), ExploreError> {
        let Some(rid) = self.record_of(n) else { return Ok(()) };
        let Ok(rels) = self.store.infer_spatial_relations(rid) else { return Ok(()) };
        let root = self.graph.root();
        for (rel, other) in rels {
            let Some(&m) = self.node_of.get(&other) else { continue };
            let (src, dst) = match rel {
                Relation::Covers => (n, m),
                _ => (m, n),
            };
            match self.graph.add_edge(src, dst, EdgeKind::ObjObj(rel)) {
                Ok(_) | Err(GraphError::WouldCreateCycle { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            if dst != root && self.has_parent(dst) {
                self.graph.remove_edge(&crate::acsg::Edge::new(root, dst, EdgeKind::ObjObj(Relation::On)));
            }
        }
        Ok(())
    }

    fn has_parent(&self, n: NodeId) -> bool {
        let root = self.graph.root();
        self.graph
            .in_edges(n)
            .any(|e| e.src != root && matches!(e.kind, EdgeKind::ObjObj(_) | EdgeKind::ActObj))
    }

    fn ensure_reachable(&mut self, n: NodeId) -> Result<(), ExploreError> {
        if self.graph.contains(n) && !self.has_parent(n) {
            let root = self.graph.root();
            self.graph.add_edge(root, n, EdgeKind::ObjObj(Relation::On))?;
        }
        Ok(())
    }

    /// Hooks orphaned objects to the root and drops orphaned actions.
    fn repair_reachability(&mut self) -> Result<(), ExploreError> {
        loop {
            let reach = self.graph.reachable_from_root();
            let orphans: Vec<NodeId> =
                self.graph.nodes().map(|x| x.id()).filter(|x| !reach.contains(x)).collect();
            if orphans.is_empty() {
                return Ok(());
            }
            // fix the earliest orphan without an orphaned ancestor first
            let o = orphans
                .iter()
                .copied()
                .find(|x| !self.graph.in_edges(*x).any(|e| orphans.contains(&e.src)))
                .unwrap_or(orphans[0]);
            if self.graph.object(o).is_some() {
                let root = self.graph.root();
                let edges: Vec<_> = self.graph.in_edges(o).copied().collect();
                for e in edges {
                    self.graph.remove_edge(&e);
                }
                self.graph.add_edge(root, o, EdgeKind::ObjObj(Relation::On))?;
            } else {
                self.graph.remove_node(o);
            }
        }
    }

    fn intervention_step(&mut self, due: &[usize]) -> Result<(), ExploreError> {
        let v0 = self.graph.len();
        let u0 = self.unexplored_count();
        let effect = self.world.fire_events(due)?;
        let mut rec = self.blank(Branch::Intervention, None);
        rec.events = due.to_vec();
        let disturbed: BTreeSet<Cell> = effect.disturbed.iter().copied().collect();
        let touched: BTreeSet<u32> =
            self.store.records().filter(|r| r.voxels.iter().any(|c| disturbed.contains(c))).map(|r| r.id).collect();
        let mut reopen = Vec::new();
        for r in touched {
            let Some(&n) = self.node_of.get(&r) else { continue };
            for e in self.graph.in_edges(n) {
                if e.kind == EdgeKind::ActObj && !reopen.contains(&e.src) {
                    reopen.push(e.src);
                }
            }
        }
        rec.views = self.observe(&["overhead".to_string()])?;
        self.sync_nodes(None)?;
        for a in reopen {
            if self.graph.contains(a) && self.graph.mark_unexplored(a) {
                self.requeued.push(a);
                self.stack.push(a);
            }
        }
        self.account(v0, u0, rec);
        Ok(())
    }

    /// Undoes every successful state change, newest first.
    fn recover(&mut self) -> Result<(), ExploreError> {
        let done = std::mem::take(&mut self.executed);
        for e in done.iter().rev() {
            let Some(inv) = e.action.inverse() else { continue };
            let grasp = match e.displacement {
                Some(d) => grid::add(e.grasp, d),
                None => e.grasp,
            };
            let cmd = Command { action: inv, grasp };
            self.step += 1;
            self.world.set_step(self.step);
            let outcome = self.send(cmd);
            self.recovery_actions += 1;
            if outcome.status == OutcomeStatus::Success {
                match inv {
                    ActionType::PickBack => {
                        if let (Some(r), Some(d)) = (self.record_of(e.node), outcome.displacement) {
                            self.store.translate(r, d).ok();
                        }
                        self.parked.remove(&e.node);
                        self.set_state(e.node, PhysicalState::AtOrigin);
                    }
                    _ => {
                        if let Some(c) = self.container_of(e.node) {
                            self.set_state(c, PhysicalState::Closed);
                        }
                    }
                }
            }
            let mut rec = self.blank(Branch::Recovery, Some(e.node));
            rec.command = Some(cmd);
            rec.outcome = Some(outcome);
            rec.world = self.world.digest();
            self.record(rec);
        }
        Ok(())
    }
}

fn fit(mut v: Vec<f64>, dim: usize) -> Vec<f64> {
    v.resize(dim, 0.0);
    v
}

/// Runs one exploration of `world` with `policy`.
pub fn run(world: World, policy: &mut dyn Policy, cfg: &ExplorerConfig) -> Result<ExplorationResult, ExploreError> {
    Explorer::new(world, policy, cfg.clone())?.run()
}
