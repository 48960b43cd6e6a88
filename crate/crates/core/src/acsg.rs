//! The action-conditioned scene graph.
//!
//! A [`SceneGraph`] is a DAG over object and action nodes. Object-object
//! edges point from the anchoring object to the dependent one (`cabinet ->
//! handle` labelled `belongs_to` reads "handle belongs to cabinet"); the
//! exceptions are `covers` and `obstructs`, which point from the actor. Node
//! 0 is always the synthetic `scene` root. Deleted ids are tombstoned and
//! never handed out again.

use crate::geometry::JointParams;
use crate::grid::{Cell, Vec3};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::{self, Write as _};
use thiserror::Error;

/// Label of the synthetic root object.
pub const ROOT_LABEL: &str = "scene";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicalState {
    Closed,
    Open,
    AtOrigin,
    AtIdle,
    Covered,
    Uncovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    OpenDoor,
    OpenDrawer,
    CloseDoor,
    CloseDrawer,
    PickToIdle,
    PickBack,
    MoveCamera,
}

impl ActionType {
    pub const ALL: [ActionType; 7] = [
        ActionType::OpenDoor,
        ActionType::OpenDrawer,
        ActionType::CloseDoor,
        ActionType::CloseDrawer,
        ActionType::PickToIdle,
        ActionType::PickBack,
        ActionType::MoveCamera,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::OpenDoor => "open_door",
            ActionType::OpenDrawer => "open_drawer",
            ActionType::CloseDoor => "close_door",
            ActionType::CloseDrawer => "close_drawer",
            ActionType::PickToIdle => "pick_to_idle",
            ActionType::PickBack => "pick_back",
            ActionType::MoveCamera => "move_camera",
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, ActionType::OpenDoor | ActionType::OpenDrawer)
    }

    /// The action that undoes this one, if any.
    pub fn inverse(self) -> Option<ActionType> {
        match self {
            ActionType::OpenDoor => Some(ActionType::CloseDoor),
            ActionType::OpenDrawer => Some(ActionType::CloseDrawer),
            ActionType::CloseDoor => Some(ActionType::OpenDoor),
            ActionType::CloseDrawer => Some(ActionType::OpenDrawer),
            ActionType::PickToIdle => Some(ActionType::PickBack),
            ActionType::PickBack => Some(ActionType::PickToIdle),
            ActionType::MoveCamera => None,
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Low-level parameters of an action primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PrimitiveParams {
    pub grasp: Cell,
    pub approach: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: NodeId,
    pub label: String,
    pub feature: Vec<f64>,
    /// Memory instance backing this node.
    pub geometry: Option<u32>,
    pub physical_state: PhysicalState,
    pub explored: bool,
    pub discovered_at: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNode {
    pub id: NodeId,
    pub action_type: ActionType,
    pub target: NodeId,
    pub primitive_params: PrimitiveParams,
    pub executed: bool,
    pub discovered_at: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Object(ObjectNode),
    Action(ActionNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Object(o) => o.id,
            Node::Action(a) => a.id,
        }
    }

    pub fn discovered_at(&self) -> u32 {
        match self {
            Node::Object(o) => o.discovered_at,
            Node::Action(a) => a.discovered_at,
        }
    }

    pub fn is_object(&self) -> bool {
        matches!(self, Node::Object(_))
    }

    pub fn is_unexplored(&self) -> bool {
        match self {
            Node::Object(o) => !o.explored,
            Node::Action(a) => !a.executed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    Inside,
    BelongsTo,
    Covers,
    Obstructs,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Inside => "inside",
            Relation::BelongsTo => "belongs_to",
            Relation::Covers => "covers",
            Relation::Obstructs => "obstructs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    ObjObj(Relation),
    ObjAct,
    ActObj,
    ActAct,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::ObjObj(_) => "obj_obj",
            EdgeKind::ObjAct => "obj_act",
            EdgeKind::ActObj => "act_obj",
            EdgeKind::ActAct => "act_act",
        }
    }

    /// (src is object, dst is object)
    fn endpoint_classes(self) -> (bool, bool) {
        match self {
            EdgeKind::ObjObj(_) => (true, true),
            EdgeKind::ObjAct => (true, false),
            EdgeKind::ActObj => (false, true),
            EdgeKind::ActAct => (false, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, kind: EdgeKind) -> Self {
        Edge { src, dst, kind }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("action target {0} is not an object node")]
    UnknownTarget(NodeId),
    #[error("edge {src} -> {dst} would create a cycle")]
    WouldCreateCycle { src: NodeId, dst: NodeId },
    #[error("edge kind {kind} does not match endpoint classes of {src} -> {dst}")]
    KindMismatch { src: NodeId, dst: NodeId, kind: &'static str },
    #[error("self edge on {0}")]
    SelfEdge(NodeId),
    #[error("node {0} is not reachable from the root")]
    Unreachable(NodeId),
    #[error("malformed graph json: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeSet<Edge>,
    root: NodeId,
    next_id: u32,
    feature_dim: usize,
}

impl SceneGraph {
    /// A graph holding only the `scene` root (node 0, explored).
    pub fn new(feature_dim: usize) -> Self {
        let root = NodeId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            Node::Object(ObjectNode {
                id: root,
                label: ROOT_LABEL.to_string(),
                feature: vec![0.0; feature_dim],
                geometry: None,
                physical_state: PhysicalState::AtOrigin,
                explored: true,
                discovered_at: 0,
            }),
        );
        SceneGraph { nodes, edges: BTreeSet::new(), root, next_id: 1, feature_dim }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn object(&self, id: NodeId) -> Option<&ObjectNode> {
        match self.nodes.get(&id) {
            Some(Node::Object(o)) => Some(o),
            _ => None,
        }
    }

    pub fn object_mut(&mut self, id: NodeId) -> Option<&mut ObjectNode> {
        match self.nodes.get_mut(&id) {
            Some(Node::Object(o)) => Some(o),
            _ => None,
        }
    }

    pub fn action(&self, id: NodeId) -> Option<&ActionNode> {
        match self.nodes.get(&id) {
            Some(Node::Action(a)) => Some(a),
            _ => None,
        }
    }

    pub fn action_mut(&mut self, id: NodeId) -> Option<&mut ActionNode> {
        match self.nodes.get_mut(&id) {
            Some(Node::Action(a)) => Some(a),
            _ => None,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectNode> {
        self.nodes.values().filter_map(|n| match n {
            Node::Object(o) => Some(o),
            _ => None,
        })
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionNode> {
        self.nodes.values().filter_map(|n| match n {
            Node::Action(a) => Some(a),
            _ => None,
        })
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    pub fn in_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.dst == id)
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.src == id)
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Adds an unexplored object node.
    pub fn add_object_node(
        &mut self,
        label: &str,
        feature: Vec<f64>,
        geometry: Option<u32>,
        state: PhysicalState,
        step: u32,
    ) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            Node::Object(ObjectNode {
                id,
                label: label.to_string(),
                feature,
                geometry,
                physical_state: state,
                explored: false,
                discovered_at: step,
            }),
        );
        id
    }

    /// Adds an unexecuted action node. Edges are added separately.
    pub fn add_action_node(
        &mut self,
        action_type: ActionType,
        target: NodeId,
        params: PrimitiveParams,
        step: u32,
    ) -> Result<NodeId, GraphError> {
        if self.object(target).is_none() {
            return Err(GraphError::UnknownTarget(target));
        }
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            Node::Action(ActionNode {
                id,
                action_type,
                target,
                primitive_params: params,
                executed: false,
                discovered_at: step,
            }),
        );
        Ok(id)
    }

    /// Inserts an edge. Returns `Ok(false)` when the identical edge already
    /// exists. On error the graph is left untouched.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind) -> Result<bool, GraphError> {
        let s = self.nodes.get(&src).ok_or(GraphError::UnknownNode(src))?;
        let d = self.nodes.get(&dst).ok_or(GraphError::UnknownNode(dst))?;
        if src == dst {
            return Err(GraphError::SelfEdge(src));
        }
        let (so, dobj) = kind.endpoint_classes();
        if s.is_object() != so || d.is_object() != dobj {
            return Err(GraphError::KindMismatch { src, dst, kind: kind.as_str() });
        }
        let edge = Edge::new(src, dst, kind);
        if self.edges.contains(&edge) {
            return Ok(false);
        }
        if self.reaches(dst, src) {
            return Err(GraphError::WouldCreateCycle { src, dst });
        }
        self.edges.insert(edge);
        Ok(true)
    }

    pub fn remove_edge(&mut self, e: &Edge) -> bool {
        self.edges.remove(e)
    }

    /// Removes a node and its incident edges. The root cannot be removed.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        if id == self.root {
            return None;
        }
        let n = self.nodes.remove(&id)?;
        self.edges.retain(|e| e.src != id && e.dst != id);
        Some(n)
    }

    /// Marks an object explored / an action executed. Returns whether the
    /// node changed state.
    pub fn mark_explored(&mut self, id: NodeId) -> bool {
        match self.nodes.get_mut(&id) {
            Some(Node::Object(o)) if !o.explored => {
                o.explored = true;
                true
            }
            Some(Node::Action(a)) if !a.executed => {
                a.executed = true;
                true
            }
            _ => false,
        }
    }

    pub fn mark_unexplored(&mut self, id: NodeId) -> bool {
        if id == self.root {
            return false;
        }
        match self.nodes.get_mut(&id) {
            Some(Node::Object(o)) if o.explored => {
                o.explored = false;
                true
            }
            Some(Node::Action(a)) if a.executed => {
                a.executed = false;
                true
            }
            _ => false,
        }
    }

    /// Objects not yet explored and actions not yet executed.
    pub fn unexplored_set(&self) -> BTreeSet<NodeId> {
        self.nodes.values().filter(|n| n.is_unexplored()).map(|n| n.id()).collect()
    }

    /// Whether `to` is reachable from `from` along directed edges.
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            for e in self.out_edges(n) {
                if e.dst == to {
                    return true;
                }
                stack.push(e.dst);
            }
        }
        false
    }

    pub fn reachable_from_root(&self) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.out_edges(n).map(|e| e.dst));
            }
        }
        seen
    }

    fn ancestors(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for e in self.in_edges(n) {
                if seen.insert(e.src) {
                    stack.push(e.src);
                }
            }
        }
        seen
    }

    /// Every ancestor action of `target` in a dependency-respecting order,
    /// ties broken by `(discovered_at, id)`.
    pub fn retrieval_plan(&self, target: NodeId) -> Result<Vec<NodeId>, GraphError> {
        if self.object(target).is_none() {
            return Err(GraphError::UnknownTarget(target));
        }
        if !self.reachable_from_root().contains(&target) {
            return Err(GraphError::Unreachable(target));
        }
        let mut sub = self.ancestors(target);
        sub.insert(target);
        let mut indeg: BTreeMap<NodeId, usize> = sub.iter().map(|n| (*n, 0)).collect();
        for e in &self.edges {
            if sub.contains(&e.src) && sub.contains(&e.dst) {
                *indeg.get_mut(&e.dst).unwrap() += 1;
            }
        }
        let key = |n: NodeId| Reverse((self.nodes[&n].discovered_at(), n));
        let mut ready: BinaryHeap<Reverse<(u32, NodeId)>> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| key(*n)).collect();
        let mut plan = Vec::new();
        while let Some(Reverse((_, n))) = ready.pop() {
            if self.action(n).is_some() {
                plan.push(n);
            }
            for e in self.out_edges(n) {
                if let Some(d) = indeg.get_mut(&e.dst) {
                    *d -= 1;
                    if *d == 0 {
                        ready.push(key(e.dst));
                    }
                }
            }
        }
        Ok(plan)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Invalid(m));
        match self.nodes.get(&self.root) {
            Some(Node::Object(_)) => {}
            _ => return bad("root is not an object node".into()),
        }
        for n in self.nodes.values() {
            if n.id().0 >= self.next_id {
                return bad(format!("{} is not below next_id {}", n.id(), self.next_id));
            }
            match n {
                Node::Object(o) if o.feature.len() != self.feature_dim => {
                    return bad(format!("{} has feature dim {}", o.id, o.feature.len()))
                }
                Node::Action(a) if self.object(a.target).is_none() => {
                    return bad(format!("{} targets missing object {}", a.id, a.target))
                }
                _ => {}
            }
        }
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.nodes.get(&e.src), self.nodes.get(&e.dst)) else {
                return bad(format!("dangling edge {} -> {}", e.src, e.dst));
            };
            if e.src == e.dst {
                return bad(format!("self edge on {}", e.src));
            }
            let (so, dobj) = e.kind.endpoint_classes();
            if s.is_object() != so || d.is_object() != dobj {
                return bad(format!("kind mismatch on {} -> {}", e.src, e.dst));
            }
        }
        if !self.is_acyclic() {
            return bad("graph has a cycle".into());
        }
        let reach = self.reachable_from_root();
        if let Some(n) = self.nodes.keys().find(|n| !reach.contains(n)) {
            return Err(GraphError::Unreachable(*n));
        }
        Ok(())
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|n| (*n, 0)).collect();
        for e in &self.edges {
            if let Some(d) = indeg.get_mut(&e.dst) {
                *d += 1;
            }
        }
        let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for e in self.out_edges(n) {
                let d = indeg.get_mut(&e.dst).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(e.dst);
                }
            }
        }
        visited == self.nodes.len()
    }

    /// Canonical JSON: nodes by id, edges sorted, fixed key order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("graph serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("graph serialization cannot fail")
    }

    fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.iter().map(EdgeDoc::from).collect(),
            root: self.root,
            next_id: self.next_id,
            feature_dim: self.feature_dim,
        }
    }

    pub fn from_json(s: &str) -> Result<SceneGraph, GraphError> {
        let doc: GraphDoc = serde_json::from_str(s).map_err(|e| GraphError::Parse(e.to_string()))?;
        SceneGraph::from_doc(doc)
    }

    fn from_doc(doc: GraphDoc) -> Result<SceneGraph, GraphError> {
        let mut nodes = BTreeMap::new();
        for n in doc.nodes {
            if nodes.insert(n.id(), n).is_some() {
                return Err(GraphError::Parse("duplicate node id".into()));
            }
        }
        let mut edges = BTreeSet::new();
        for e in doc.edges {
            edges.insert(e.to_edge()?);
        }
        let g = SceneGraph { nodes, edges, root: doc.root, next_id: doc.next_id, feature_dim: doc.feature_dim };
        g.validate()?;
        Ok(g)
    }

    /// Graphviz rendering: objects as boxes, actions as ellipses, `act_act`
    /// edges dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph acsg {\n  rankdir=TB;\n");
        for n in self.nodes.values() {
            let (shape, label) = match n {
                Node::Object(o) => ("box", o.label.clone()),
                Node::Action(a) => ("ellipse", a.action_type.as_str().to_string()),
            };
            let _ = writeln!(out, "  n{} [shape={}, label=\"{}\"];", n.id().0, shape, escape_dot(&label));
        }
        for e in &self.edges {
            let label = match e.kind {
                EdgeKind::ObjObj(r) => r.as_str(),
                k => k.as_str(),
            };
            let style = if e.kind == EdgeKind::ActAct { ", style=dashed" } else { "" };
            let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"{}];", e.src.0, e.dst.0, label, style);
        }
        out.push_str("}\n");
        out
    }
}

impl Serialize for SceneGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(d)?;
        SceneGraph::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<Node>,
    edges: Vec<EdgeDoc>,
    root: NodeId,
    next_id: u32,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    src: NodeId,
    dst: NodeId,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<Relation>,
}

impl From<&Edge> for EdgeDoc {
    fn from(e: &Edge) -> Self {
        let relation = match e.kind {
            EdgeKind::ObjObj(r) => Some(r),
            _ => None,
        };
        EdgeDoc { src: e.src, dst: e.dst, kind: e.kind.as_str().to_string(), relation }
    }
}

impl EdgeDoc {
    fn to_edge(&self) -> Result<Edge, GraphError> {
        let kind = match (self.kind.as_str(), self.relation) {
            ("obj_obj", Some(r)) => EdgeKind::ObjObj(r),
            ("obj_act", None) => EdgeKind::ObjAct,
            ("act_obj", None) => EdgeKind::ActObj,
            ("act_act", None) => EdgeKind::ActAct,
            (k, r) => return Err(GraphError::Parse(format!("bad edge kind {k:?} with relation {r:?}"))),
        };
        Ok(Edge::new(self.src, self.dst, kind))
    }
}
