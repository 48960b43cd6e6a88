//! Exhaustive search for the shortest action sequence that observes every
//! annotated region and leaves the scene as it was found.

use super::{open_close_actions, OutcomeStatus, Region, ScenarioSpec, World, WorldState};
use crate::acsg::{ActionType, PrimitiveParams};
use std::collections::{BTreeSet, HashSet, VecDeque};

#[derive(Debug, Clone, Copy)]
pub struct SearchLimits {
    pub max_depth: usize,
    pub max_states: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { max_depth: 10, max_states: 2_000_000 }
    }
}

fn candidate_actions(spec: &ScenarioSpec) -> Vec<(ActionType, u32)> {
    let mut out = Vec::new();
    for o in &spec.objects {
        if let Some(h) = o.handle_of {
            if let Some(c) = spec.compartment(h.container, h.compartment) {
                let (open, close) = open_close_actions(c.articulation.joint);
                out.push((open, o.id));
                out.push((close, o.id));
            }
        }
        if o.movable() {
            out.push((ActionType::PickToIdle, o.id));
            out.push((ActionType::PickBack, o.id));
        }
    }
    out
}

/// Breadth-first search over world states, observing from every viewpoint
/// after each action. Returns `None` when no plan within the limits exists.
pub fn min_action_count(spec: &ScenarioSpec, limits: SearchLimits) -> Option<usize> {
    let regions: Vec<Region> = spec.need_to_explore.clone();
    let full: u64 = if regions.len() >= 64 { u64::MAX } else { (1u64 << regions.len()) - 1 };
    let mut world = World::new(spec.clone());
    let initial = world.state().clone();
    let mask_of = |w: &World| -> u64 {
        let seen: BTreeSet<Region> = w.observable_regions();
        regions.iter().enumerate().filter(|(_, r)| seen.contains(r)).fold(0, |m, (i, _)| m | (1 << i))
    };
    let start = mask_of(&world);
    if start == full {
        return Some(0);
    }
    let actions = candidate_actions(spec);
    let params = PrimitiveParams::default();
    let mut seen: HashSet<(WorldState, u64)> = HashSet::new();
    seen.insert((initial.clone(), start));
    let mut queue = VecDeque::from([(initial.clone(), start, 0usize)]);
    while let Some((state, mask, depth)) = queue.pop_front() {
        if depth >= limits.max_depth {
            continue;
        }
        for &(a, target) in &actions {
            world.set_state(state.clone());
            if world.apply_action(a, target, &params).status != OutcomeStatus::Success {
                continue;
            }
            let next = world.state().clone();
            let m = mask | mask_of(&world);
            if m == full && next.same_configuration(&initial) {
                return Some(depth + 1);
            }
            if seen.len() >= limits.max_states {
                return None;
            }
            if seen.insert((next.clone(), m)) {
                queue.push_back((next, m, depth + 1));
            }
        }
    }
    None
}
