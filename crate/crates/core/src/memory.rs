//! Voxel instance store: merges detections across views and time, purges
//! stale cells and infers spatial relations between instances.

use crate::acsg::Relation;
use crate::catalog::{Catalog, ObjectKind};
use crate::grid::{self, Aabb, Cell, NEIGHBOURS6};
use crate::percept::{normalized, Detection};
use crate::worldsim::RawObservation;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("unknown instance {0}")]
    UnknownInstance(u32),
    #[error("invalid merge config: {0}")]
    Config(String),
    #[error("bad snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub w_iou: f64,
    pub w_feat: f64,
    pub w_label: f64,
    pub match_threshold: f64,
    pub min_voxels: usize,
    /// Fraction of the smaller footprint that must overlap for `on`.
    pub overlap_min: f64,
    /// Fraction of voxels that must lie in a container for `inside`.
    pub inside_frac: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            w_iou: 0.5,
            w_feat: 0.3,
            w_label: 0.2,
            match_threshold: 0.6,
            min_voxels: 4,
            overlap_min: 0.5,
            inside_frac: 0.8,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let w = [self.w_iou, self.w_feat, self.w_label];
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MemoryError::Config("weights must be non-negative and sum to 1".into()));
        }
        if !(self.match_threshold > 0.0 && self.match_threshold < 1.0) {
            return Err(MemoryError::Config("match_threshold must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_min) || !(0.0..=1.0).contains(&self.inside_frac) {
            return Err(MemoryError::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    pub voxels: BTreeSet<Cell>,
    pub label_hist: BTreeMap<String, f64>,
    pub fused_feature: Vec<f64>,
    feature_sum: Vec<f64>,
    pub confidence: f64,
    pub last_seen: u32,
}

impl InstanceRecord {
    /// Label with the most accumulated confidence, ties to the smaller label.
    pub fn label(&self) -> &str {
        let mut best: Option<(&String, f64)> = None;
        for (l, w) in &self.label_hist {
            if best.is_none_or(|(_, bw)| *w > bw) {
                best = Some((l, *w));
            }
        }
        best.map(|(l, _)| l.as_str()).unwrap_or("")
    }

    /// Share of the histogram mass held by the dominant label.
    fn label_share(&self) -> f64 {
        let total: f64 = self.label_hist.values().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.label_hist.get(self.label()).copied().unwrap_or(0.0) / total
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::of(&self.voxels)
    }

    fn absorb(&mut self, d: &Detection, step: u32) {
        self.voxels.extend(d.voxels.iter().copied());
        *self.label_hist.entry(d.label.clone()).or_insert(0.0) += d.confidence;
        if self.feature_sum.len() != d.feature.len() {
            self.feature_sum = vec![0.0; d.feature.len()];
        }
        for (s, f) in self.feature_sum.iter_mut().zip(&d.feature) {
            *s += d.confidence * f;
        }
        self.fused_feature = normalized(self.feature_sum.clone());
        self.confidence = self.confidence.max(d.confidence);
        self.last_seen = self.last_seen.max(step);
    }
}

/// Outcome of integrating one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integration {
    pub detection: usize,
    pub instance: u32,
    pub created: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    cfg: MergeConfig,
    records: BTreeMap<u32, InstanceRecord>,
    owner: HashMap<Cell, u32>,
    next_id: u32,
    integrated: BTreeSet<(u32, Vec<u8>)>,
}

fn iou(a: &[Cell], b: &BTreeSet<Cell>) -> f64 {
    let inter = a.iter().filter(|c| b.contains(*c)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn signature(d: &Detection) -> Vec<u8> {
    serde_json::to_vec(d).expect("detections serialize")
}

impl MemoryStore {
    pub fn new(cfg: MergeConfig) -> MemoryStore {
        MemoryStore { cfg, next_id: 1, ..Default::default() }
    }

    pub fn config(&self) -> &MergeConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&InstanceRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.records.values()
    }

    /// Instance owning `cell`, if any.
    pub fn record_at(&self, cell: Cell) -> Option<u32> {
        self.owner.get(&cell).copied()
    }

    /// Merge score of a detection against a record.
    pub fn score(&self, d: &Detection, r: &InstanceRecord) -> f64 {
        let label = if r.label() == d.label { r.label_share() } else { 0.0 };
        self.cfg.w_iou * iou(&d.voxels, &r.voxels)
            + self.cfg.w_feat * cosine(&d.feature, &r.fused_feature).max(0.0)
            + self.cfg.w_label * label
    }

    /// Merges each detection into its best-scoring record or starts a new
    /// one. Detections under `min_voxels` are skipped and absent from the
    /// result. A detection already integrated at `step` is a no-op.
    pub fn integrate(&mut self, detections: &[Detection], step: u32) -> Vec<Integration> {
        let mut out = Vec::new();
        let mut touched = BTreeSet::new();
        for (i, d) in detections.iter().enumerate() {
            if d.voxels.len() < self.cfg.min_voxels {
                continue;
            }
            let sig = (step, signature(d));
            if self.integrated.contains(&sig) {
                if let Some(id) = self.best_match(d) {
                    out.push(Integration { detection: i, instance: id, created: false });
                }
                continue;
            }
            self.integrated.insert(sig);
            let (id, created) = match self.best_match(d) {
                Some(id) => (id, false),
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.records.insert(
                        id,
                        InstanceRecord {
                            id,
                            voxels: BTreeSet::new(),
                            label_hist: BTreeMap::new(),
                            fused_feature: Vec::new(),
                            feature_sum: Vec::new(),
                            confidence: 0.0,
                            last_seen: step,
                        },
                    );
                    (id, true)
                }
            };
            self.records.get_mut(&id).expect("record exists").absorb(d, step);
            touched.insert(id);
            out.push(Integration { detection: i, instance: id, created });
        }
        for id in touched {
            self.claim(id);
        }
        out
    }

    fn best_match(&self, d: &Detection) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for r in self.records.values() {
            let s = self.score(d, r);
            if s >= self.cfg.match_threshold && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((r.id, s));
            }
        }
        best.map(|(id, _)| id)
    }

    fn beats(&self, a: u32, b: u32) -> bool {
        let (ra, rb) = (&self.records[&a], &self.records[&b]);
        ra.confidence > rb.confidence || (ra.confidence == rb.confidence && a < b)
    }

    /// Resolves cell conflicts between `id` and other records.
    fn claim(&mut self, id: u32) {
        let Some(r) = self.records.get(&id) else { return };
        let cells: Vec<Cell> = r.voxels.iter().copied().collect();
        let mut lost = Vec::new();
        for c in cells {
            match self.owner.get(&c).copied() {
                None => {
                    self.owner.insert(c, id);
                }
                Some(o) if o == id => {}
                Some(o) => {
                    if self.beats(id, o) {
                        self.owner.insert(c, id);
                        self.records.get_mut(&o).expect("owner exists").voxels.remove(&c);
                        lost.push(o);
                    } else {
                        lost.push(id);
                        self.records.get_mut(&id).expect("record exists").voxels.remove(&c);
                    }
                }
            }
        }
        for o in lost {
            if self.records.get(&o).is_some_and(|r| r.voxels.is_empty()) {
                self.records.remove(&o);
            }
        }
    }

    /// Deletes stored cells that `obs` sees as free. Support comes from the
    /// raw occupancy of the view. Returns the ids trimmed or removed.
    pub fn invalidate_stale(&mut self, obs: &RawObservation) -> Vec<u32> {
        let support: BTreeSet<Cell> = obs.visible.iter().flat_map(|v| v.voxels.iter().copied()).collect();
        let mut touched = Vec::new();
        let mut gone = Vec::new();
        for r in self.records.values_mut() {
            let stale: Vec<Cell> =
                r.voxels.iter().copied().filter(|c| obs.observes(*c) && !support.contains(c)).collect();
            if stale.is_empty() {
                continue;
            }
            for c in &stale {
                r.voxels.remove(c);
                self.owner.remove(c);
            }
            touched.push(r.id);
            if r.voxels.len() < self.cfg.min_voxels {
                gone.push(r.id);
            }
        }
        for id in gone {
            self.remove(id);
        }
        touched
    }

    pub fn remove(&mut self, id: u32) -> Option<InstanceRecord> {
        let r = self.records.remove(&id)?;
        for c in &r.voxels {
            if self.owner.get(c) == Some(&id) {
                self.owner.remove(c);
            }
        }
        Some(r)
    }

    /// Shifts a record by `offset`, as when the robot carries the object.
    pub fn translate(&mut self, id: u32, offset: Cell) -> Result<(), MemoryError> {
        let r = self.records.get_mut(&id).ok_or(MemoryError::UnknownInstance(id))?;
        for c in &r.voxels {
            if self.owner.get(c) == Some(&id) {
                self.owner.remove(c);
            }
        }
        r.voxels = r.voxels.iter().map(|c| grid::add(*c, offset)).collect();
        self.claim(id);
        Ok(())
    }

    /// Relations of `id` to other instances, each as seen from `id`:
    /// `(On, x)` means `id` rests on `x`, `(Inside, x)` that it lies in `x`,
    /// `(BelongsTo, x)` that it is a handle of `x` and `(Covers, x)` that it
    /// covers `x`.
    pub fn infer_spatial_relations(&self, id: u32) -> Result<Vec<(Relation, u32)>, MemoryError> {
        let r = self.records.get(&id).ok_or(MemoryError::UnknownInstance(id))?;
        let cat = Catalog::builtin();
        let kind = cat.kind(r.label());
        let mut out = Vec::new();
        let Some(rb) = r.bounds() else { return Ok(out) };
        let footprint = |s: &BTreeSet<Cell>, z: Option<i32>| -> BTreeSet<(i32, i32)> {
            s.iter().filter(|c| z.is_none_or(|z| c[2] == z)).map(|c| (c[0], c[1])).collect()
        };
        let bottom = footprint(&r.voxels, Some(rb.min[2]));
        for o in self.records.values() {
            if o.id == id {
                continue;
            }
            let Some(ob) = o.bounds() else { continue };
            let okind = cat.kind(o.label());
            if ob.max[2] + 1 == rb.min[2] {
                let top = footprint(&o.voxels, Some(ob.max[2]));
                let overlap = bottom.intersection(&top).count() as f64;
                let smaller = bottom.len().min(top.len()) as f64;
                if smaller > 0.0 && overlap >= self.cfg.overlap_min * smaller {
                    out.push((Relation::On, o.id));
                }
            }
            if okind == ObjectKind::Container && kind != ObjectKind::Container {
                let within = r.voxels.iter().filter(|c| ob.contains(**c)).count() as f64;
                if within >= self.cfg.inside_frac * r.voxels.len() as f64 {
                    out.push((Relation::Inside, o.id));
                }
            }
            if kind == ObjectKind::Handle
                && okind == ObjectKind::Container
                && r.voxels.iter().any(|c| NEIGHBOURS6.iter().any(|d| o.voxels.contains(&grid::add(*c, *d))))
            {
                out.push((Relation::BelongsTo, o.id));
            }
            if kind == ObjectKind::Cover {
                let mine = footprint(&r.voxels, None);
                let theirs = footprint(&o.voxels, None);
                if theirs.is_subset(&mine) && theirs.len() < mine.len() {
                    out.push((Relation::Covers, o.id));
                }
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            next_id: self.next_id,
            records: self
                .records
                .values()
                .map(|r| RecordSnapshot {
                    id: r.id,
                    label: r.label().to_string(),
                    label_hist: r.label_hist.clone(),
                    confidence: r.confidence,
                    last_seen: r.last_seen,
                    fused_feature: r.fused_feature.clone(),
                    voxels_rle: rle_encode(&r.voxels),
                })
                .collect(),
        }
    }
}

/// Runs of cells along z: `[x, y, z_start, length]`.
pub fn rle_encode(cells: &BTreeSet<Cell>) -> Vec<[i32; 4]> {
    let mut out: Vec<[i32; 4]> = Vec::new();
    for c in cells {
        if let Some(last) = out.last_mut() {
            if last[0] == c[0] && last[1] == c[1] && last[2] + last[3] == c[2] {
                last[3] += 1;
                continue;
            }
        }
        out.push([c[0], c[1], c[2], 1]);
    }
    out
}

pub fn rle_decode(runs: &[[i32; 4]]) -> Result<BTreeSet<Cell>, MemoryError> {
    let mut out = BTreeSet::new();
    for r in runs {
        if r[3] <= 0 || r[3] > 1 << 16 {
            return Err(MemoryError::Snapshot(format!("bad run length {}", r[3])));
        }
        for dz in 0..r[3] {
            out.insert([r[0], r[1], r[2].checked_add(dz).ok_or_else(|| MemoryError::Snapshot("overflow".into()))?]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSnapshot {
    pub id: u32,
    pub label: String,
    pub label_hist: BTreeMap<String, f64>,
    pub confidence: f64,
    pub last_seen: u32,
    pub fused_feature: Vec<f64>,
    pub voxels_rle: Vec<[i32; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub next_id: u32,
    pub records: Vec<RecordSnapshot>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::{detect, prototype, NoiseConfig};
    use crate::worldsim::{generate_scenario, Family, World};

    fn det(label: &str, voxels: Vec<Cell>, conf: f64) -> Detection {
        Detection { label: label.into(), confidence: conf, voxels, feature: prototype(label, 32), source: 0 }
    }

    fn cube(x: i32, y: i32, n: i32) -> Vec<Cell> {
        grid::solid_box([x, y, 0], [x + n - 1, y + n - 1, n - 1]).into_iter().collect()
    }

    #[test]
    fn score_of_two_views_of_one_apple() {
        let mut m = MemoryStore::new(MergeConfig::default());
        let a: Vec<Cell> = (0..10).map(|i| [i, 0, 0]).collect();
        let b: Vec<Cell> = (1..10).map(|i| [i, 0, 0]).collect();
        m.integrate(&[det("apple", a, 0.9)], 0);
        let r = m.records().next().unwrap().clone();
        let d = det("apple", b, 0.9);
        // IoU 9/10 here; the formula is checked directly
        let expect = 0.5 * 0.9 + 0.3 * 1.0 + 0.2 * 1.0;
        assert!((m.score(&d, &r) - expect).abs() < 1e-12);
        let res = m.integrate(&[d], 1);
        assert!(!res[0].created);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn iou_point_eight_merges_at_point_nine() {
        let m = MemoryStore::new(MergeConfig::default());
        let a: BTreeSet<Cell> = (0..10).map(|i| [i, 0, 0]).collect();
        let b: Vec<Cell> = (1..9).map(|i| [i, 0, 0]).collect();
        let r = InstanceRecord {
            id: 1,
            voxels: a,
            label_hist: [("apple".to_string(), 0.9)].into(),
            fused_feature: prototype("apple", 32),
            feature_sum: prototype("apple", 32),
            confidence: 0.9,
            last_seen: 0,
        };
        assert!((m.score(&det("apple", b, 0.9), &r) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn disjoint_different_labels_stay_apart() {
        let mut m = MemoryStore::new(MergeConfig::default());
        let res = m.integrate(&[det("apple", cube(0, 0, 2), 0.9), det("mug", cube(10, 10, 2), 0.9)], 0);
        assert!(res.iter().all(|r| r.created));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn tiny_detections_are_filtered() {
        let mut m = MemoryStore::new(MergeConfig::default());
        assert!(m.integrate(&[det("apple", vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]], 0.9)], 0).is_empty());
        assert!(m.is_empty());
    }

    #[test]
    fn integrate_twice_is_idempotent() {
        let mut m = MemoryStore::new(MergeConfig::default());
        let ds = vec![det("apple", cube(0, 0, 2), 0.9), det("lime", cube(5, 5, 2), 0.7)];
        m.integrate(&ds, 3);
        let before = m.snapshot();
        m.integrate(&ds, 3);
        assert_eq!(m.snapshot(), before);
    }

    #[test]
    fn overlapping_records_resolve_to_higher_confidence() {
        let mut m = MemoryStore::new(MergeConfig::default());
        m.integrate(&[det("apple", cube(0, 0, 3), 0.5)], 0);
        let shifted: Vec<Cell> = cube(0, 0, 3).into_iter().map(|c| grid::add(c, [2, 0, 0])).collect();
        m.integrate(&[det("bowl", shifted, 0.9)], 1);
        assert_eq!(m.len(), 2);
        let mut seen = BTreeSet::new();
        for r in m.records() {
            for c in &r.voxels {
                assert!(seen.insert(*c), "cell {c:?} owned twice");
            }
        }
        let bowl = m.records().find(|r| r.label() == "bowl").unwrap();
        assert_eq!(bowl.voxels.len(), 27);
    }

    fn sweep(w: &World, m: &mut MemoryStore, cfg: &NoiseConfig) {
        for vp in w.spec().viewpoints.clone() {
            let obs = w.render_observation(&vp.name).unwrap();
            m.integrate(&detect(&obs, cfg), obs.step);
            m.invalidate_stale(&obs);
        }
    }

    #[test]
    fn noiseless_sweep_counts_visible_objects() {
        for f in [Family::DrawerOnly, Family::DoorOnly, Family::DrawerDoor, Family::Recursive, Family::Occlusion] {
            for i in 0..5 {
                let w = World::new(generate_scenario(f, 1, i));
                let mut m = MemoryStore::new(MergeConfig::default());
                sweep(&w, &mut m, &NoiseConfig::default());
                assert_eq!(m.len(), w.accessible_objects().len(), "{f:?} {i}");
            }
        }
    }

    #[test]
    fn relations_match_ground_truth_parents() {
        use crate::worldsim::Parent;
        for f in [Family::DrawerOnly, Family::DrawerDoor, Family::Occlusion] {
            for i in 0..5 {
                let s = generate_scenario(f, 2, i);
                let w = World::new(s.clone());
                let mut m = MemoryStore::new(MergeConfig::default());
                sweep(&w, &mut m, &NoiseConfig::default());
                let rec_of = |gid: u32| {
                    let v = &s.object(gid).unwrap().voxels[0];
                    m.record_at(*v)
                };
                for o in &s.objects {
                    let Some(rid) = rec_of(o.id) else { continue };
                    let rels = m.infer_spatial_relations(rid).unwrap();
                    let expect: Vec<(Relation, u32)> = match (o.parent, o.handle_of) {
                        (_, Some(h)) => vec![(Relation::BelongsTo, rec_of(h.container).unwrap())],
                        (Some(Parent::On { id }), _) => vec![(Relation::On, rec_of(id).unwrap())],
                        _ => vec![],
                    };
                    assert_eq!(rels, expect, "{f:?} {i} object {}", o.id);
                }
            }
        }
    }

    #[test]
    fn inside_needs_most_voxels_in_container() {
        let mut m = MemoryStore::new(MergeConfig::default());
        let shell: Vec<Cell> = grid::shell_box([0, 0, 0], [6, 6, 6]).into_iter().collect();
        m.integrate(&[det("cabinet", shell, 0.9), det("apple", cube(2, 2, 2).iter().map(|c| grid::add(*c, [0, 0, 1])).collect(), 0.9)], 0);
        let apple = m.records().find(|r| r.label() == "apple").unwrap().id;
        let cab = m.records().find(|r| r.label() == "cabinet").unwrap().id;
        assert_eq!(m.infer_spatial_relations(apple).unwrap(), vec![(Relation::Inside, cab)]);
        assert_eq!(m.infer_spatial_relations(99), Err(MemoryError::UnknownInstance(99)));
    }

    #[test]
    fn unchanged_scene_invalidates_nothing() {
        let w = World::new(generate_scenario(Family::Occlusion, 4, 0));
        let mut m = MemoryStore::new(MergeConfig::default());
        sweep(&w, &mut m, &NoiseConfig::default());
        for vp in &w.spec().viewpoints {
            assert!(m.invalidate_stale(&w.render_observation(&vp.name).unwrap()).is_empty());
        }
    }

    #[test]
    fn moved_object_cells_are_purged() {
        use crate::acsg::{ActionType, PrimitiveParams};
        let s = generate_scenario(Family::Occlusion, 4, 1);
        let mut w = World::new(s.clone());
        let mut m = MemoryStore::new(MergeConfig::default());
        sweep(&w, &mut m, &NoiseConfig::default());
        let blocker = s.objects.iter().find(|o| o.parent.is_none() && o.movable() && o.label != "doll").unwrap();
        assert_eq!(w.apply_action(ActionType::PickToIdle, blocker.id, &PrimitiveParams::default()).status, crate::worldsim::OutcomeStatus::Success);
        sweep(&w, &mut m, &NoiseConfig::default());
        assert!(blocker.voxels.iter().all(|c| m.record_at(*c).is_none()));
    }

    #[test]
    fn rle_roundtrip_and_snapshot_json() {
        let cells: BTreeSet<Cell> = grid::shell_box([0, 0, 0], [3, 3, 3]);
        assert_eq!(rle_decode(&rle_encode(&cells)).unwrap(), cells);
        assert!(rle_decode(&[[0, 0, 0, 0]]).is_err());
        let mut m = MemoryStore::new(MergeConfig::default());
        m.integrate(&[det("apple", cube(0, 0, 2), 0.9)], 0);
        let js = serde_json::to_string(&m.snapshot()).unwrap();
        let back: StoreSnapshot = serde_json::from_str(&js).unwrap();
        assert_eq!(back, m.snapshot());
    }

    #[test]
    fn config_validation() {
        assert!(MergeConfig::default().validate().is_ok());
        assert!(MergeConfig { w_iou: 0.9, ..Default::default() }.validate().is_err());
        assert!(MergeConfig { match_threshold: 1.0, ..Default::default() }.validate().is_err());
    }
}
