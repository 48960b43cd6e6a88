//! Evaluation: graph keys, exact edit distance, per-run scores and suite
//! aggregation.

use crate::acsg::{ActionType, EdgeKind, GraphError, NodeId, SceneGraph};
use crate::explorer::ExplorationResult;
use crate::worldsim::{derive_need_to_explore, gt_index, Region, ScenarioFamily, WorldState};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scenario has no regions annotated for exploration")]
    NoAnnotations,
}

/// Structural name of a node, computable from the graph alone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalKey {
    Root,
    Object { label: String, path: Vec<String>, depth: u32 },
    Action { action: ActionType, target: Box<CanonicalKey> },
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalKey::Root => write!(f, "root"),
            CanonicalKey::Object { label, path, depth } => {
                for p in path {
                    write!(f, "{p}/")?;
                }
                write!(f, "{label}@{depth}")
            }
            CanonicalKey::Action { action, target } => write!(f, "{}({target})", action.as_str()),
        }
    }
}

/// Keys for every node of `g`. Objects are named by label, the labels of
/// their object-relation ancestors (root side first), and how many actions
/// deep they were revealed.
pub fn canonical_keys(g: &SceneGraph) -> BTreeMap<NodeId, CanonicalKey> {
    let root = g.root();
    let mut out = BTreeMap::new();
    let mut depth_memo = BTreeMap::new();
    for o in g.objects() {
        let key = if o.id == root {
            CanonicalKey::Root
        } else {
            CanonicalKey::Object {
                label: o.label.clone(),
                path: ancestor_path(g, o.id),
                depth: reveal_depth(g, o.id, &mut depth_memo),
            }
        };
        out.insert(o.id, key);
    }
    for a in g.actions() {
        let target = out.get(&a.target).cloned().unwrap_or(CanonicalKey::Root);
        out.insert(a.id, CanonicalKey::Action { action: a.action_type, target: Box::new(target) });
    }
    out
}

fn obj_parent(g: &SceneGraph, n: NodeId) -> Option<NodeId> {
    let root = g.root();
    g.in_edges(n)
        .filter(|e| matches!(e.kind, EdgeKind::ObjObj(_)) && e.src != root)
        .map(|e| e.src)
        .min_by_key(|p| (g.object(*p).map(|o| o.label.clone()), *p))
}

fn ancestor_path(g: &SceneGraph, n: NodeId) -> Vec<String> {
    let mut path = Vec::new();
    let mut seen = BTreeSet::from([n]);
    let mut cur = n;
    while let Some(p) = obj_parent(g, cur) {
        if !seen.insert(p) {
            break;
        }
        path.push(g.object(p).map(|o| o.label.clone()).unwrap_or_default());
        cur = p;
    }
    path.reverse();
    path
}

fn reveal_depth(g: &SceneGraph, n: NodeId, memo: &mut BTreeMap<NodeId, u32>) -> u32 {
    if let Some(d) = memo.get(&n) {
        return *d;
    }
    memo.insert(n, 0);
    let revealer = g
        .in_edges(n)
        .filter(|e| e.kind == EdgeKind::ActObj)
        .filter_map(|e| g.action(e.src).map(|a| a.target))
        .min();
    let d = match revealer {
        Some(t) => 1 + reveal_depth(g, t, memo),
        None => 0,
    };
    memo.insert(n, d);
    d
}

/// A graph reduced to node labels and typed directed edges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledGraph<L> {
    pub labels: Vec<L>,
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

impl LabeledGraph<CanonicalKey> {
    pub fn from_scene(g: &SceneGraph) -> Self {
        let keys = canonical_keys(g);
        let index: BTreeMap<NodeId, usize> = keys.keys().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut edges: Vec<_> = g.edges().map(|e| (index[&e.src], index[&e.dst], e.kind)).collect();
        edges.sort();
        LabeledGraph { labels: keys.into_values().collect(), edges }
    }
}

/// Exact unit-cost graph edit distance: node insert/delete/relabel and edge
/// insert/delete/retype each cost one.
pub fn ged<L: Ord + Clone>(a: &LabeledGraph<L>, b: &LabeledGraph<L>) -> usize {
    GedSearch::new(a, b).solve()
}

/// Edit distance between two scene graphs under canonical keys.
pub fn scene_ged(a: &SceneGraph, b: &SceneGraph) -> usize {
    ged(&LabeledGraph::from_scene(a), &LabeledGraph::from_scene(b))
}

/// 1 when the graphs are identical under canonical keys.
pub fn success(output: &SceneGraph, gt: &SceneGraph) -> bool {
    let (a, b) = (LabeledGraph::from_scene(output), LabeledGraph::from_scene(gt));
    if a.labels.len() != b.labels.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    let multiset = |g: &LabeledGraph<CanonicalKey>| {
        let mut v = g.labels.clone();
        v.sort();
        v
    };
    if multiset(&a) != multiset(&b) {
        return false;
    }
    ged(&a, &b) == 0
}

struct GedSearch {
    lab1: Vec<u32>,
    lab2: Vec<u32>,
    /// Edge kinds per ordered pair.
    e1: BTreeMap<(usize, usize), Vec<EdgeKind>>,
    e2: BTreeMap<(usize, usize), Vec<EdgeKind>>,
    adj1: Vec<Vec<usize>>,
    adj2: Vec<Vec<usize>>,
    edges1: Vec<(usize, usize, EdgeKind)>,
    edges2: Vec<(usize, usize, EdgeKind)>,
    order: Vec<usize>,
    map: Vec<usize>,
    inv: Vec<usize>,
    best: usize,
}

const FREE: usize = usize::MAX;
const DELETED: usize = usize::MAX - 1;

/// Cost of turning one multiset of edge kinds into another.
fn kinds_cost(a: &[EdgeKind], b: &[EdgeKind]) -> usize {
    a.len().max(b.len()) - multiset_common(a, b)
}

fn multiset_common<T: Ord + Clone>(a: &[T], b: &[T]) -> usize {
    let mut ca: BTreeMap<T, usize> = BTreeMap::new();
    for x in a {
        *ca.entry(x.clone()).or_default() += 1;
    }
    let mut common = 0;
    for x in b {
        if let Some(c) = ca.get_mut(x) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    common
}

fn pair_index(n: usize, edges: &[(usize, usize, EdgeKind)]) -> (BTreeMap<(usize, usize), Vec<EdgeKind>>, Vec<Vec<usize>>) {
    let mut m: BTreeMap<(usize, usize), Vec<EdgeKind>> = BTreeMap::new();
    let mut adj = vec![Vec::new(); n];
    for &(s, d, k) in edges {
        m.entry((s, d)).or_default().push(k);
        adj[s].push(d);
        adj[d].push(s);
    }
    for v in &mut adj {
        v.sort_unstable();
        v.dedup();
    }
    (m, adj)
}

impl GedSearch {
    fn new<L: Ord + Clone>(a: &LabeledGraph<L>, b: &LabeledGraph<L>) -> Self {
        let mut intern: BTreeMap<L, u32> = BTreeMap::new();
        let mut id = |l: &L| {
            let n = intern.len() as u32;
            *intern.entry(l.clone()).or_insert(n)
        };
        let lab1: Vec<u32> = a.labels.iter().map(&mut id).collect();
        let lab2: Vec<u32> = b.labels.iter().map(&mut id).collect();
        let (e1, adj1) = pair_index(lab1.len(), &a.edges);
        let (e2, adj2) = pair_index(lab2.len(), &b.edges);
        // breadth-first so edge costs are charged early
        let mut order = Vec::new();
        let mut placed = vec![false; lab1.len()];
        for start in 0..lab1.len() {
            if placed[start] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            placed[start] = true;
            while let Some(u) = queue.pop_front() {
                order.push(u);
                for &w in &adj1[u] {
                    if !placed[w] {
                        placed[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        GedSearch {
            map: vec![FREE; lab1.len()],
            inv: vec![FREE; lab2.len()],
            lab1,
            lab2,
            e1,
            e2,
            adj1,
            adj2,
            edges1: a.edges.clone(),
            edges2: b.edges.clone(),
            order,
            best: usize::MAX,
        }
    }

    fn kinds1(&self, s: usize, d: usize) -> &[EdgeKind] {
        self.e1.get(&(s, d)).map_or(&[], |v| v.as_slice())
    }

    fn kinds2(&self, s: usize, d: usize) -> &[EdgeKind] {
        self.e2.get(&(s, d)).map_or(&[], |v| v.as_slice())
    }

    /// Cost added by sending `u` to `v` (a node of the second graph or
    /// `DELETED`), charging every edge towards already decided nodes.
    fn step_cost(&self, u: usize, v: usize) -> usize {
        let mut c = if v == DELETED {
            1 + self.kinds1(u, u).len()
        } else {
            usize::from(self.lab1[u] != self.lab2[v]) + kinds_cost(self.kinds1(u, u), self.kinds2(v, v))
        };
        let mut partners: Vec<usize> = Vec::new();
        for &w in &self.adj1[u] {
            if w == u || self.map[w] == FREE {
                continue;
            }
            if v == DELETED || self.map[w] == DELETED {
                c += self.kinds1(u, w).len() + self.kinds1(w, u).len();
            } else {
                partners.push(w);
            }
        }
        if v != DELETED {
            for &x in &self.adj2[v] {
                if x != v && self.inv[x] != FREE {
                    partners.push(self.inv[x]);
                }
            }
            partners.sort_unstable();
            partners.dedup();
            for w in partners {
                let x = self.map[w];
                c += kinds_cost(self.kinds1(u, w), self.kinds2(v, x)) + kinds_cost(self.kinds1(w, u), self.kinds2(x, v));
            }
        }
        c
    }

    /// Cost of inserting whatever of the second graph is still unmatched.
    fn leaf_cost(&self) -> usize {
        let nodes = self.inv.iter().filter(|&&u| u == FREE).count();
        let edges = self.edges2.iter().filter(|(s, d, _)| self.inv[*s] == FREE || self.inv[*d] == FREE).count();
        nodes + edges
    }

    fn lower_bound(&self, depth: usize) -> usize {
        let mut l1: Vec<u32> = self.order[depth..].iter().map(|&u| self.lab1[u]).collect();
        let mut l2: Vec<u32> = (0..self.lab2.len()).filter(|&v| self.inv[v] == FREE).map(|v| self.lab2[v]).collect();
        l1.sort_unstable();
        l2.sort_unstable();
        let nodes = l1.len().max(l2.len()) - multiset_common(&l1, &l2);
        let k1: Vec<EdgeKind> =
            self.edges1.iter().filter(|(s, d, _)| self.map[*s] == FREE || self.map[*d] == FREE).map(|e| e.2).collect();
        let k2: Vec<EdgeKind> =
            self.edges2.iter().filter(|(s, d, _)| self.inv[*s] == FREE || self.inv[*d] == FREE).map(|e| e.2).collect();
        nodes + k1.len().max(k2.len()) - multiset_common(&k1, &k2)
    }

    fn assign(&mut self, u: usize, v: usize) {
        self.map[u] = v;
        if v != DELETED {
            self.inv[v] = u;
        }
    }

    fn unassign(&mut self, u: usize) {
        let v = self.map[u];
        if v != DELETED {
            self.inv[v] = FREE;
        }
        self.map[u] = FREE;
    }

    fn options(&self, u: usize) -> Vec<(usize, bool, usize)> {
        let mut opts: Vec<(usize, bool, usize)> = (0..self.lab2.len())
            .filter(|&v| self.inv[v] == FREE)
            .map(|v| (self.step_cost(u, v), self.lab1[u] != self.lab2[v], v))
            .collect();
        opts.push((self.step_cost(u, DELETED), true, DELETED));
        opts.sort_unstable();
        opts
    }

    fn greedy(&mut self) -> usize {
        let mut cost = 0;
        for depth in 0..self.order.len() {
            let u = self.order[depth];
            let (c, _, v) = self.options(u)[0];
            cost += c;
            self.assign(u, v);
        }
        let total = cost + self.leaf_cost();
        for depth in (0..self.order.len()).rev() {
            self.unassign(self.order[depth]);
        }
        total
    }

    fn dfs(&mut self, depth: usize, cost: usize) {
        if cost + self.lower_bound(depth) >= self.best {
            return;
        }
        if depth == self.order.len() {
            self.best = self.best.min(cost + self.leaf_cost());
            return;
        }
        let u = self.order[depth];
        for (c, _, v) in self.options(u) {
            if cost + c >= self.best {
                continue;
            }
            self.assign(u, v);
            self.dfs(depth + 1, cost + c);
            self.unassign(u);
            if self.best == 0 {
                return;
            }
        }
    }

    fn solve(mut self) -> usize {
        self.best = self.greedy();
        if self.best > 0 {
            self.dfs(0, 0);
        }
        self.best
    }
}

/// Share of hidden ground-truth objects present in the output graph. An
/// output object counts towards a hidden key only beyond the number of
/// visible objects sharing that key.
pub fn object_recovery(output: &SceneGraph, gt: &SceneGraph, gt_hidden: &BTreeSet<NodeId>) -> f64 {
    if gt_hidden.is_empty() {
        return 1.0;
    }
    let mut hidden: BTreeMap<CanonicalKey, usize> = BTreeMap::new();
    let mut visible: BTreeMap<CanonicalKey, usize> = BTreeMap::new();
    for (n, k) in canonical_keys(gt) {
        if gt.object(n).is_none() || n == gt.root() {
            continue;
        }
        let bucket = if gt_hidden.contains(&n) { &mut hidden } else { &mut visible };
        *bucket.entry(k).or_default() += 1;
    }
    let mut out: BTreeMap<CanonicalKey, usize> = BTreeMap::new();
    for (n, k) in canonical_keys(output) {
        if output.object(n).is_some() && n != output.root() {
            *out.entry(k).or_default() += 1;
        }
    }
    let found: usize = hidden
        .iter()
        .map(|(k, &h)| {
            let o = out.get(k).copied().unwrap_or(0);
            let v = visible.get(k).copied().unwrap_or(0);
            h.min(o.saturating_sub(v))
        })
        .sum();
    found as f64 / gt_hidden.len() as f64
}

/// Articulation and placement match the starting state.
pub fn state_recovery(final_state: &WorldState, initial: &WorldState) -> bool {
    final_state.same_configuration(initial)
}

/// Share of annotated regions never observed during the run.
pub fn unexplored_space(observed: &BTreeSet<Region>, need: &[Region]) -> Result<f64, MetricsError> {
    if need.is_empty() {
        return Err(MetricsError::NoAnnotations);
    }
    let missed = need.iter().filter(|r| !observed.contains(r)).count();
    Ok(missed as f64 / need.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    None,
    Perception,
    Decision,
    Action,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::None => "none",
            ErrorClass::Perception => "perception",
            ErrorClass::Decision => "decision",
            ErrorClass::Action => "action",
        }
    }
}

/// Attributes a failed run. `clean_rerun_success` is the outcome of the
/// same run with perception noise disabled, when noise was on.
pub fn classify_error(success: bool, injected_failures: usize, clean_rerun_success: Option<bool>) -> ErrorClass {
    if success {
        ErrorClass::None
    } else if injected_failures > 0 {
        ErrorClass::Action
    } else if clean_rerun_success == Some(true) {
        ErrorClass::Perception
    } else {
        ErrorClass::Decision
    }
}

/// One row of the per-run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scenario: String,
    pub family: ScenarioFamily,
    pub policy: String,
    pub seed: u64,
    pub success: u8,
    pub object_recovery: f64,
    pub state_recovery: u8,
    pub unexplored_space: Option<f64>,
    pub ged: usize,
    pub action_count: usize,
    pub error_class: ErrorClass,
    pub step_limit: bool,
}

/// Scores one finished run against the ground truth of its final
/// scenario. `clean_rerun_success` feeds [`classify_error`].
pub fn evaluate(result: &ExplorationResult, seed: u64, clean_rerun_success: Option<bool>) -> Result<EvalRecord, GraphError> {
    let spec = &result.final_scenario;
    let gt = gt_index(spec)?;
    let hidden: BTreeSet<NodeId> = gt
        .node_of
        .iter()
        .filter(|(g, _)| !result.initial_visible.contains(g))
        .map(|(_, n)| *n)
        .collect();
    let need = if spec.need_to_explore.is_empty() { derive_need_to_explore(spec) } else { spec.need_to_explore.clone() };
    let ok = success(&result.graph, &gt.graph);
    Ok(EvalRecord {
        scenario: result.header.scenario.clone(),
        family: spec.family,
        policy: result.header.policy.clone(),
        seed,
        success: u8::from(ok),
        object_recovery: object_recovery(&result.graph, &gt.graph, &hidden),
        state_recovery: u8::from(state_recovery(&result.final_state, &result.initial_state)),
        unexplored_space: unexplored_space(&result.observed_regions, &need).ok(),
        ged: if ok { 0 } else { scene_ged(&result.graph, &gt.graph) },
        action_count: result.action_count(),
        error_class: classify_error(ok, result.injected_failures, clean_rerun_success),
        step_limit: result.step_limit_hit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Mean with binomial standard error.
pub fn proportion_stat(xs: &[f64]) -> Stat {
    let n = xs.len();
    if n == 0 {
        return Stat { mean: 0.0, sem: 0.0, n };
    }
    let p = xs.iter().sum::<f64>() / n as f64;
    Stat { mean: p, sem: (p * (1.0 - p) / n as f64).sqrt(), n }
}

/// Mean with the sample standard error.
pub fn sample_stat(xs: &[f64]) -> Stat {
    let n = xs.len();
    if n == 0 {
        return Stat { mean: 0.0, sem: 0.0, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sem = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Stat { mean, sem, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub family: ScenarioFamily,
    pub policy: String,
    pub runs: usize,
    pub success: Stat,
    pub object_recovery: Stat,
    pub state_recovery: Stat,
    pub unexplored_space: Option<Stat>,
    pub ged: Stat,
    pub action_count: Stat,
    pub errors: BTreeMap<ErrorClass, usize>,
}

/// Groups records by (family, policy), in first-seen order of policies.
pub fn aggregate(records: &[EvalRecord]) -> Vec<Aggregate> {
    let mut policy_rank: Vec<&str> = Vec::new();
    for r in records {
        if !policy_rank.contains(&r.policy.as_str()) {
            policy_rank.push(&r.policy);
        }
    }
    let mut groups: BTreeMap<(ScenarioFamily, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let rank = policy_rank.iter().position(|p| *p == r.policy).expect("policy ranked");
        groups.entry((r.family, rank)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((family, rank), rs)| {
            let col = |f: &dyn Fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let unexplored: Vec<f64> = rs.iter().filter_map(|r| r.unexplored_space).collect();
            let mut errors = BTreeMap::new();
            for r in &rs {
                *errors.entry(r.error_class).or_default() += 1;
            }
            Aggregate {
                family,
                policy: policy_rank[rank].to_string(),
                runs: rs.len(),
                success: proportion_stat(&col(&|r| r.success as f64)),
                object_recovery: sample_stat(&col(&|r| r.object_recovery)),
                state_recovery: proportion_stat(&col(&|r| r.state_recovery as f64)),
                unexplored_space: (!unexplored.is_empty()).then(|| sample_stat(&unexplored)),
                ged: sample_stat(&col(&|r| r.ged as f64)),
                action_count: sample_stat(&col(&|r| r.action_count as f64)),
                errors,
            }
        })
        .collect()
}

/// CSV with one row per run.
pub fn report_csv(records: &[EvalRecord]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "family",
        "policy",
        "seed",
        "success",
        "object_recovery",
        "state_recovery",
        "unexplored_space",
        "ged",
        "action_count",
        "error_class",
        "step_limit",
    ])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.family.as_str().to_string(),
            r.policy.clone(),
            r.seed.to_string(),
            r.success.to_string(),
            format!("{:.4}", r.object_recovery),
            r.state_recovery.to_string(),
            r.unexplored_space.map(|u| format!("{u:.4}")).unwrap_or_default(),
            r.ged.to_string(),
            r.action_count.to_string(),
            r.error_class.as_str().to_string(),
            r.step_limit.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Mean action count per (family, policy) over the scenarios where every
/// listed policy succeeded.
pub fn action_count_table(records: &[EvalRecord]) -> BTreeMap<(ScenarioFamily, String), f64> {
    let mut by_scene: BTreeMap<(ScenarioFamily, &str, u64), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_scene.entry((r.family, &r.scenario, r.seed)).or_default().push(r);
    }
    let mut sums: BTreeMap<(ScenarioFamily, String), (f64, usize)> = BTreeMap::new();
    for ((family, _, _), rs) in by_scene {
        if rs.iter().all(|r| r.success == 1) {
            for r in rs {
                let e = sums.entry((family, r.policy.clone())).or_default();
                e.0 += r.action_count as f64;
                e.1 += 1;
            }
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acsg::{PhysicalState, PrimitiveParams, Relation};
    use proptest::prelude::*;

    const KINDS: [EdgeKind; 3] = [EdgeKind::ObjObj(Relation::On), EdgeKind::ObjAct, EdgeKind::ActObj];

    fn lg(labels: &[u8], edges: &[(usize, usize, usize)]) -> LabeledGraph<u8> {
        LabeledGraph { labels: labels.to_vec(), edges: edges.iter().map(|&(s, d, k)| (s, d, KINDS[k])).collect() }
    }

    fn kinds(g: &LabeledGraph<u8>, s: usize, d: usize) -> Vec<EdgeKind> {
        g.edges.iter().filter(|e| e.0 == s && e.1 == d).map(|e| e.2).collect()
    }

    /// Cost of one partial injective mapping, from the definitions.
    fn mapping_cost(a: &LabeledGraph<u8>, b: &LabeledGraph<u8>, f: &[Option<usize>]) -> usize {
        let mut c = 0;
        for (u, m) in f.iter().enumerate() {
            c += match m {
                Some(v) => usize::from(a.labels[u] != b.labels[*v]),
                None => 1,
            };
        }
        let image: Vec<usize> = f.iter().flatten().copied().collect();
        c += (0..b.labels.len()).filter(|v| !image.contains(v)).count();
        for u in 0..a.labels.len() {
            for w in 0..a.labels.len() {
                c += match (f[u], f[w]) {
                    (Some(v), Some(x)) => kinds_cost(&kinds(a, u, w), &kinds(b, v, x)),
                    _ => kinds(a, u, w).len(),
                };
            }
        }
        for v in 0..b.labels.len() {
            for x in 0..b.labels.len() {
                if !(image.contains(&v) && image.contains(&x)) {
                    c += kinds(b, v, x).len();
                }
            }
        }
        c
    }

    fn brute_ged(a: &LabeledGraph<u8>, b: &LabeledGraph<u8>) -> usize {
        fn rec(a: &LabeledGraph<u8>, b: &LabeledGraph<u8>, f: &mut Vec<Option<usize>>, best: &mut usize) {
            if f.len() == a.labels.len() {
                *best = (*best).min(mapping_cost(a, b, f));
                return;
            }
            f.push(None);
            rec(a, b, f, best);
            f.pop();
            for v in 0..b.labels.len() {
                if !f.contains(&Some(v)) {
                    f.push(Some(v));
                    rec(a, b, f, best);
                    f.pop();
                }
            }
        }
        let mut best = usize::MAX;
        rec(a, b, &mut Vec::new(), &mut best);
        best
    }

    fn arb_graph(max_nodes: usize) -> impl Strategy<Value = LabeledGraph<u8>> {
        (0..=max_nodes).prop_flat_map(|n| {
            let edges = if n == 0 {
                Just(Vec::new()).boxed()
            } else {
                proptest::collection::vec((0..n, 0..n, 0..KINDS.len()), 0..=n * 2).boxed()
            };
            (proptest::collection::vec(0u8..3, n), edges).prop_map(|(l, e)| lg(&l, &e))
        })
    }

    #[test]
    fn ged_examples() {
        let g = lg(&[0, 1, 2], &[(0, 1, 0), (1, 2, 1)]);
        assert_eq!(ged(&g, &g), 0);
        assert_eq!(ged(&lg(&[], &[]), &lg(&[0, 1], &[(0, 1, 0)])), 3);
        assert_eq!(ged(&g, &lg(&[0, 1, 0], &[(0, 1, 0), (1, 2, 1)])), 1);
        assert_eq!(ged(&g, &lg(&[0, 1, 2], &[(0, 1, 0), (1, 2, 2)])), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn ged_matches_brute_force(a in arb_graph(4), b in arb_graph(4)) {
            prop_assert_eq!(ged(&a, &b), brute_ged(&a, &b));
        }

        #[test]
        fn ged_is_symmetric(a in arb_graph(5), b in arb_graph(5)) {
            prop_assert_eq!(ged(&a, &b), ged(&b, &a));
        }
    }

    fn scene() -> (SceneGraph, NodeId, NodeId) {
        let mut g = SceneGraph::new(4);
        let root = g.root();
        let cab = g.add_object_node("cabinet", vec![0.0; 4], None, PhysicalState::Closed, 0);
        let h = g.add_object_node("handle", vec![0.0; 4], None, PhysicalState::AtOrigin, 0);
        g.add_edge(root, cab, EdgeKind::ObjObj(Relation::On)).unwrap();
        g.add_edge(cab, h, EdgeKind::ObjObj(Relation::BelongsTo)).unwrap();
        let a = g.add_action_node(ActionType::OpenDrawer, h, PrimitiveParams::default(), 0).unwrap();
        g.add_edge(h, a, EdgeKind::ObjAct).unwrap();
        (g, cab, a)
    }

    fn add_inside(g: &mut SceneGraph, cab: NodeId, open: NodeId, label: &str) -> NodeId {
        let n = g.add_object_node(label, vec![0.0; 4], None, PhysicalState::AtOrigin, 1);
        g.add_edge(cab, n, EdgeKind::ObjObj(Relation::Inside)).unwrap();
        g.add_edge(open, n, EdgeKind::ActObj).unwrap();
        n
    }

    #[test]
    fn keys_encode_path_and_depth() {
        let (mut g, cab, open) = scene();
        let apple = add_inside(&mut g, cab, open, "apple");
        let keys = canonical_keys(&g);
        assert_eq!(
            keys[&apple],
            CanonicalKey::Object { label: "apple".into(), path: vec!["cabinet".into()], depth: 1 }
        );
        assert_eq!(keys[&apple].to_string(), "cabinet/apple@1");
        assert_eq!(keys[&open].to_string(), "open_drawer(cabinet/handle@0)");
    }

    #[test]
    fn success_and_recovery() {
        let (mut gt, cab, open) = scene();
        let hidden: BTreeSet<NodeId> =
            ["apple", "lime", "fork"].iter().map(|l| add_inside(&mut gt, cab, open, l)).collect();
        assert!(success(&gt, &gt));
        assert_eq!(object_recovery(&gt, &gt, &hidden), 1.0);

        let (mut out, c2, o2) = scene();
        add_inside(&mut out, c2, o2, "apple");
        add_inside(&mut out, c2, o2, "lime");
        assert!(!success(&out, &gt));
        assert!((object_recovery(&out, &gt, &hidden) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(scene_ged(&out, &gt), 3);

        let mut extra = gt.clone();
        let p = extra.add_action_node(ActionType::PickToIdle, c2, PrimitiveParams::default(), 2).unwrap();
        extra.add_edge(c2, p, EdgeKind::ObjAct).unwrap();
        assert!(!success(&extra, &gt));
        assert_eq!(scene_ged(&extra, &gt), 2);
        assert_eq!(object_recovery(&gt, &gt, &BTreeSet::new()), 1.0);
    }

    #[test]
    fn unexplored_fraction() {
        let need: Vec<Region> = (0..4).map(|k| Region::Compartment { container: 1, compartment: k }).collect();
        let seen: BTreeSet<Region> = need[..3].iter().copied().collect();
        assert_eq!(unexplored_space(&seen, &need), Ok(0.25));
        assert_eq!(unexplored_space(&need.iter().copied().collect(), &need), Ok(0.0));
        assert_eq!(unexplored_space(&seen, &[]), Err(MetricsError::NoAnnotations));
    }

    #[test]
    fn error_classes() {
        assert_eq!(classify_error(true, 3, None), ErrorClass::None);
        assert_eq!(classify_error(false, 1, Some(true)), ErrorClass::Action);
        assert_eq!(classify_error(false, 0, Some(true)), ErrorClass::Perception);
        assert_eq!(classify_error(false, 0, Some(false)), ErrorClass::Decision);
        assert_eq!(classify_error(false, 0, None), ErrorClass::Decision);
    }

    #[test]
    fn standard_errors() {
        let xs: Vec<f64> = (0..10).map(|i| if i < 9 { 1.0 } else { 0.0 }).collect();
        let s = proportion_stat(&xs);
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.sem - (0.9f64 * 0.1 / 10.0).sqrt()).abs() < 1e-12);
        let t = sample_stat(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((t.mean - 5.0).abs() < 1e-12);
        assert!((t.sem - (32.0f64 / 7.0 / 8.0).sqrt()).abs() < 1e-12);
        assert_eq!(sample_stat(&[3.0]).sem, 0.0);
    }
}
