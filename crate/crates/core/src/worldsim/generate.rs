//! Seeded scenario generator for the five benchmark families.

use super::world::IDLE_DEPTH;
use super::{
    Articulation, Compartment, EventEffectSpec, GroundObject, HandleOf, InterventionEvent, Parent, ScenarioFamily,
    ScenarioSpec, DEFAULT_GRID, SCENARIO_SCHEMA,
};
use crate::catalog::ObjectKind;
use crate::geometry;
use crate::grid::{self, Aabb, Cell};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

pub type Family = ScenarioFamily;

pub const ITEMS: &[&str] =
    &["apple", "lime", "banana", "mug", "cup", "tape", "spoon", "fork", "bowl", "plate", "sponge", "can"];
pub const CONDIMENTS: &[&str] = &["ketchup", "mustard", "soy_sauce", "vinegar"];

/// Cells kept free on the right of the table for scripted cabinet additions.
const RESERVED: Aabb = Aabb { min: [43, 0, 0], max: [63, 31, 31] };

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateConfig {
    pub family: Family,
    pub seed: u64,
    pub index: u32,
}

/// Extent of an item of the given class.
pub fn item_dims(label: &str) -> Cell {
    match label {
        "apple" | "lime" => [2, 2, 2],
        "banana" | "spoon" | "fork" => [4, 1, 1],
        "mug" | "cup" | "can" => [2, 2, 3],
        "tape" => [2, 2, 1],
        "bowl" | "plate" => [3, 3, 1],
        "sponge" => [3, 2, 1],
        "ketchup" | "mustard" | "soy_sauce" | "vinegar" => [2, 2, 4],
        _ => [2, 2, 2],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Drawers,
    Doors { handle_right: bool },
}

struct Builder {
    rng: ChaCha8Rng,
    objects: Vec<GroundObject>,
    next_id: u32,
    /// Boxes already taken by objects, with their ids.
    taken: Vec<(u32, Aabb)>,
    /// Boxes nothing else may enter (swept volumes, reserved space).
    forbidden: Vec<Aabb>,
    grid: [i32; 3],
}

impl Builder {
    fn new(seed: u64, grid: [i32; 3], first_id: u32) -> Builder {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            objects: Vec::new(),
            next_id: first_id,
            taken: Vec::new(),
            forbidden: Vec::new(),
            grid,
        }
    }

    fn id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn push(&mut self, o: GroundObject) -> u32 {
        if let Some(b) = Aabb::of(&o.voxels) {
            self.taken.push((o.id, b));
        }
        let id = o.id;
        self.objects.push(o);
        id
    }

    fn simple(&mut self, label: &str, kind: ObjectKind, b: Aabb, parent: Option<Parent>) -> u32 {
        let id = self.id();
        self.push(GroundObject {
            id,
            label: label.to_string(),
            kind,
            voxels: b.cells().collect(),
            compartments: Vec::new(),
            parent,
            handle_of: None,
        })
    }

    fn fits(&self, b: &Aabb) -> bool {
        let g = Aabb::new([0; 3], [self.grid[0] - 1, self.grid[1] - IDLE_DEPTH - 3, self.grid[2] - 1]);
        (0..3).all(|k| g.min[k] <= b.min[k] && b.max[k] <= g.max[k])
            && !self.taken.iter().any(|(_, t)| t.dilate(1).intersects(b))
            && !self.forbidden.iter().any(|f| f.intersects(b))
    }

    /// Random free spot for a box of `dims` whose base lies in `area`.
    /// With `inside`, the box must fit in that room and may touch `host`.
    fn place(&mut self, area: Aabb, dims: Cell, base_z: i32, inside: Option<(Aabb, u32)>) -> Option<Aabb> {
        for _ in 0..400 {
            if area.max[0] - dims[0] + 1 < area.min[0] || area.max[1] - dims[1] + 1 < area.min[1] {
                return None;
            }
            let x = self.rng.random_range(area.min[0]..=area.max[0] - dims[0] + 1);
            let y = self.rng.random_range(area.min[1]..=area.max[1] - dims[1] + 1);
            let b = Aabb::new([x, y, base_z], [x + dims[0] - 1, y + dims[1] - 1, base_z + dims[2] - 1]);
            let ok = match inside {
                Some((room, host)) => {
                    (0..3).all(|k| room.min[k] <= b.min[k] && b.max[k] <= room.max[k])
                        && !self.taken.iter().any(|(id, t)| *id != host && t.dilate(1).intersects(&b))
                }
                None => self.fits(&b),
            };
            if ok {
                return Some(b);
            }
        }
        None
    }

    /// A cabinet of two stacked compartments with its handles. Returns the
    /// cabinet id.
    fn cabinet(&mut self, x0: i32, y0: i32, style: Style) -> u32 {
        let w = self.rng.random_range(9..=13);
        let d = self.rng.random_range(7..=10);
        let hi = self.rng.random_range(4..=6);
        let n = 2;
        let h = n * hi + (n - 1) + 2;
        let outer = Aabb::new([x0, y0, 0], [x0 + w - 1, y0 + d - 1, h - 1]);
        let mut cells: BTreeSet<Cell> = grid::shell_box(outer.min, outer.max);
        let mut interiors = Vec::new();
        for k in 0..n {
            let zlo = 1 + k * (hi + 1);
            interiors.push(Aabb::new([x0 + 1, y0 + 1, zlo], [x0 + w - 2, y0 + d - 2, zlo + hi - 1]));
            if k + 1 < n {
                let zd = zlo + hi;
                cells.extend(grid::solid_box([x0, y0, zd], [x0 + w - 1, y0 + d - 1, zd]));
            }
        }
        let cab_id = self.id();
        let mut handles = Vec::new();
        let mut compartments = Vec::new();
        for (k, interior) in interiors.iter().enumerate() {
            let zmid = interior.min[2] + hi / 2;
            let hv: Vec<Cell> = match style {
                Style::Drawers => {
                    let cx = x0 + w / 2;
                    (cx - 2..cx + 2).map(|x| [x, y0 - 1, zmid]).collect()
                }
                Style::Doors { handle_right } => {
                    let x = if handle_right { x0 + w - 2 } else { x0 + 1 };
                    (zmid - 2..zmid + 2).map(|z| [x, y0 - 1, z]).collect()
                }
            };
            let hc = grid::centroid(&hv).expect("handle is nonempty");
            let axis = geometry::handle_principal_axis(&hv).expect("handle is a bar");
            let params = geometry::classify_joint(axis, [0.0, -1.0, 0.0], hc, Some(&outer))
                .expect("axis-aligned handles classify");
            let sweep = geometry::sweep_box(&params, &outer, hc).expect("front-facing sweep");
            compartments.push(Compartment {
                articulation: Articulation {
                    joint: params.joint,
                    axis: params.axis,
                    origin: params.origin,
                    open_dir: [0, -1, 0],
                },
                interior: *interior,
                blocking_region: sweep,
            });
            let hid = self.id();
            handles.push(GroundObject {
                id: hid,
                label: "handle".into(),
                kind: ObjectKind::Handle,
                voxels: hv,
                compartments: Vec::new(),
                parent: None,
                handle_of: Some(HandleOf { container: cab_id, compartment: k as u32 }),
            });
        }
        let sweeps: Vec<Aabb> = compartments.iter().map(|c| c.blocking_region).collect();
        self.push(GroundObject {
            id: cab_id,
            label: "cabinet".into(),
            kind: ObjectKind::Container,
            voxels: cells.into_iter().collect(),
            compartments,
            parent: None,
            handle_of: None,
        });
        for hnd in handles {
            self.push(hnd);
        }
        self.forbidden.extend(sweeps);
        cab_id
    }

    fn pick_item(&mut self) -> &'static str {
        ITEMS.choose(&mut self.rng).copied().expect("item pool is nonempty")
    }

    /// Fills each compartment of `cab` with `lo..=hi` items.
    fn fill(&mut self, cab: u32, lo: u32, hi: u32) {
        let comps: Vec<Aabb> = self.objects.iter().find(|o| o.id == cab).unwrap().compartments.iter().map(|c| c.interior).collect();
        for (k, interior) in comps.into_iter().enumerate() {
            let count = self.rng.random_range(lo..=hi);
            for _ in 0..count {
                let label = self.pick_item();
                let dims = item_dims(label);
                if let Some(b) = self.place(interior, dims, interior.min[2], Some((interior, cab))) {
                    self.simple(label, ObjectKind::Rigid, b, Some(Parent::Inside { container: cab, compartment: k as u32 }));
                }
            }
        }
    }

    fn table_area(&self) -> Aabb {
        Aabb::new([1, 1, 0], [self.grid[0] - 2, self.grid[1] - IDLE_DEPTH - 3, 0])
    }

    fn distractors(&mut self, lo: u32, hi: u32) {
        let count = self.rng.random_range(lo..=hi);
        for _ in 0..count {
            let label = self.pick_item();
            let dims = item_dims(label);
            let area = self.table_area();
            if let Some(b) = self.place(area, dims, 0, None) {
                self.simple(label, ObjectKind::Rigid, b, None);
            }
        }
    }

    /// Possibly places one item on top of `cab`.
    fn maybe_on_top(&mut self, cab: u32, p: f64) {
        if !self.rng.random_bool(p) {
            return;
        }
        let b = self.objects.iter().find(|o| o.id == cab).unwrap().bounds();
        let label = self.pick_item();
        let dims = item_dims(label);
        let top = Aabb::new([b.min[0], b.min[1], b.max[2] + 1], [b.max[0], b.max[1], b.max[2] + 1 + dims[2]]);
        let room = Aabb::new(top.min, [top.max[0], top.max[1], self.grid[2] - 1]);
        if let Some(bx) = self.place(top, dims, top.min[2], Some((room, cab))) {
            self.simple(label, ObjectKind::Rigid, bx, Some(Parent::On { id: cab }));
        }
    }

    /// Cloth-covered or bare chain of nested dolls. `levels` counts the
    /// concealing objects.
    fn doll_chain(&mut self, levels: u32, cloth: bool) -> bool {
        let dolls = if cloth { levels } else { levels + 1 };
        let shells = dolls - 1 + u32::from(cloth);
        let half = 1 + shells as i32;
        let dims = [2 + 2 * half, 2 + 2 * half, 3 + shells as i32];
        let area = self.table_area();
        let Some(outer) = self.place(area, dims, 0, None) else { return false };
        let c = [outer.min[0] + half, outer.min[1] + half, 0];
        let bbox = |i: i32| Aabb::new([c[0] - i, c[1] - i, 0], [c[0] + 1 + i, c[1] + 1 + i, 2 + i]);
        // innermost first, then shells outwards
        let mut ids = Vec::new();
        for i in 0..(dolls + u32::from(cloth)) as i32 {
            let b = bbox(i);
            let cells: Vec<Cell> = if i == 0 {
                b.cells().collect()
            } else {
                let inner = bbox(i - 1);
                b.cells().filter(|x| !inner.contains(*x)).collect()
            };
            let is_cloth = cloth && i as u32 == dolls;
            let id = self.id();
            self.objects.push(GroundObject {
                id,
                label: if is_cloth { "cloth".into() } else { "doll".into() },
                kind: if is_cloth { ObjectKind::Cover } else { ObjectKind::Rigid },
                voxels: cells,
                compartments: Vec::new(),
                parent: None,
                handle_of: None,
            });
            ids.push((id, is_cloth));
        }
        for w in 0..ids.len() - 1 {
            let (outer_id, outer_is_cloth) = ids[w + 1];
            let p = if outer_is_cloth { Parent::CoveredBy { id: outer_id } } else { Parent::NestedIn { id: outer_id } };
            let inner = ids[w].0;
            self.objects.iter_mut().find(|o| o.id == inner).unwrap().parent = Some(p);
        }
        self.taken.push((0, outer));
        true
    }

    /// One or more condiments standing inside the swept volume of `cab`.
    fn blockers(&mut self, cab: u32, count: u32) -> u32 {
        let cabinet = self.objects.iter().find(|o| o.id == cab).unwrap().clone();
        let y0 = cabinet.bounds().min[1];
        let mut placed = 0;
        for k in 0..count {
            let comp = &cabinet.compartments[(k as usize) % cabinet.compartments.len()];
            let s = comp.blocking_region;
            // keep clear of the handle row
            let area = Aabb::new([s.min[0], s.min[1], 0], [s.max[0], y0 - 3, 0]);
            let label = *CONDIMENTS.choose(&mut self.rng).unwrap();
            let dims = item_dims(label);
            let room = Aabb::new([area.min[0], area.min[1], 0], [area.max[0], area.max[1], self.grid[2] - 1]);
            if let Some(b) = self.place(area, dims, 0, Some((room, cab))) {
                if !RESERVED.intersects(&b) {
                    self.simple(label, ObjectKind::Rigid, b, None);
                    placed += 1;
                }
            }
        }
        placed
    }

    fn finish(self, family: Family, name: String) -> ScenarioSpec {
        let mut spec = ScenarioSpec {
            schema: SCENARIO_SCHEMA.into(),
            name,
            family,
            grid_dims: self.grid,
            cell_size_cm: 1.0,
            objects: self.objects,
            viewpoints: Vec::new(),
            need_to_explore: Vec::new(),
            events: Vec::new(),
            gt_graph: None,
        };
        spec.objects.sort_by_key(|o| o.id);
        spec.complete();
        spec
    }
}

fn mix(seed: u64, family: Family, index: u32) -> u64 {
    let f = family as u64 + 1;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (f << 48) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Deterministic scenario number `index` of `family` for `seed`.
pub fn generate_scenario(family: Family, seed: u64, index: u32) -> ScenarioSpec {
    let name = format!("{}_{:03}", family.as_str(), index);
    let mut attempt = 0u64;
    loop {
        let spec = try_generate(family, mix(seed, family, index) ^ attempt, name.clone());
        if let Some(spec) = spec {
            return spec;
        }
        attempt += 1;
    }
}

fn try_generate(family: Family, seed: u64, name: String) -> Option<ScenarioSpec> {
    let mut b = Builder::new(seed, DEFAULT_GRID, 1);
    b.forbidden.push(RESERVED);
    let slot_a = |b: &mut Builder| (b.rng.random_range(2..=6), b.rng.random_range(14..=18));
    let slot_b = |b: &mut Builder| (b.rng.random_range(24..=28), b.rng.random_range(14..=18));
    match family {
        Family::DrawerOnly | Family::DoorOnly | Family::Custom => {
            let style = if family == Family::DoorOnly {
                Style::Doors { handle_right: b.rng.random_bool(0.5) }
            } else {
                Style::Drawers
            };
            let (x, y) = if b.rng.random_bool(0.5) { slot_a(&mut b) } else { slot_b(&mut b) };
            let cab = b.cabinet(x, y, style);
            b.fill(cab, 1, 2);
            b.maybe_on_top(cab, 0.4);
            b.distractors(1, 3);
        }
        Family::DrawerDoor => {
            let (x, y) = slot_a(&mut b);
            let c1 = b.cabinet(x, y, Style::Drawers);
            let (x, y) = slot_b(&mut b);
            let hr = b.rng.random_bool(0.5);
            let c2 = b.cabinet(x, y, Style::Doors { handle_right: hr });
            b.fill(c1, 1, 2);
            b.fill(c2, 1, 2);
            b.maybe_on_top(c1, 0.3);
            b.distractors(0, 2);
        }
        Family::Recursive => {
            let levels = b.rng.random_range(3..=5);
            let cloth = b.rng.random_bool(0.5);
            if !b.doll_chain(levels, cloth) {
                return None;
            }
            b.distractors(1, 3);
        }
        Family::Occlusion => {
            let (x, y) = if b.rng.random_bool(0.5) { slot_a(&mut b) } else { slot_b(&mut b) };
            let hr = b.rng.random_bool(0.5);
            let cab = b.cabinet(x, y, Style::Doors { handle_right: hr });
            b.fill(cab, 1, 2);
            let want = if b.rng.random_bool(0.25) { 2 } else { 1 };
            if b.blockers(cab, want) == 0 {
                return None;
            }
            b.distractors(0, 2);
        }
    }
    let spec = b.finish(family, name);
    spec.validate().ok()?;
    spec.gt_graph.as_ref()?;
    Some(spec)
}

/// Events adding a filled cabinet to the reserved free area at `trigger_step`.
pub fn cabinet_event(spec: &ScenarioSpec, seed: u64, trigger_step: u32, doors: bool) -> Vec<InterventionEvent> {
    let first = spec.objects.iter().map(|o| o.id).max().unwrap_or(0) + 1;
    let mut b = Builder::new(seed, spec.grid_dims, first);
    for o in &spec.objects {
        if let Some(bx) = Aabb::of(&o.voxels) {
            b.taken.push((o.id, bx));
        }
    }
    let style = if doors { Style::Doors { handle_right: true } } else { Style::Drawers };
    let x = b.rng.random_range(46..=49);
    let cab = b.cabinet(x, 16, style);
    let before = b.objects.len();
    b.fill(cab, 1, 1);
    debug_assert!(b.objects.len() >= before);
    b.objects
        .into_iter()
        .map(|object| InterventionEvent { trigger_step, effect: EventEffectSpec::AddObject { object } })
        .collect()
}
