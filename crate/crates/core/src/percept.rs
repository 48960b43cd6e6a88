//! Synthetic detector: turns raw observations into noisy labelled masks
//! with semantic feature vectors.

use crate::grid::{Cell, NEIGHBOURS6};
use crate::worldsim::RawObservation;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

pub const FEATURE_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub label_flip_prob: f64,
    pub miss_prob: f64,
    pub mask_erosion_frac: f64,
    pub feature_sigma: f64,
    pub confidence_base: f64,
    pub confidence_jitter: f64,
    pub rng_seed: u64,
    pub feature_dim: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            label_flip_prob: 0.0,
            miss_prob: 0.0,
            mask_erosion_frac: 0.0,
            feature_sigma: 0.0,
            confidence_base: 0.9,
            confidence_jitter: 0.0,
            rng_seed: 0,
            feature_dim: FEATURE_DIM,
        }
    }
}

impl NoiseConfig {
    /// Noise-free detection with the same seed and dimension.
    pub fn noiseless(&self) -> NoiseConfig {
        NoiseConfig {
            label_flip_prob: 0.0,
            miss_prob: 0.0,
            mask_erosion_frac: 0.0,
            feature_sigma: 0.0,
            confidence_jitter: 0.0,
            ..self.clone()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.label_flip_prob == 0.0
            && self.miss_prob == 0.0
            && self.mask_erosion_frac == 0.0
            && self.feature_sigma == 0.0
            && self.confidence_jitter == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.label_flip_prob) || !unit(self.miss_prob) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=0.5).contains(&self.mask_erosion_frac) {
            return Err("mask_erosion_frac must lie in [0, 0.5]".into());
        }
        if self.feature_sigma < 0.0 || !self.feature_sigma.is_finite() {
            return Err("feature_sigma must be non-negative".into());
        }
        if !(self.confidence_base > 0.0 && self.confidence_base <= 1.0) || self.confidence_jitter < 0.0 {
            return Err("confidence_base must lie in (0, 1] and jitter be non-negative".into());
        }
        if self.feature_dim == 0 {
            return Err("feature_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub voxels: Vec<Cell>,
    pub feature: Vec<f64>,
    /// Scene object that produced the detection. Diagnostics only.
    pub source: u32,
}

/// Groups of labels a detector may confuse with each other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub version: u32,
    pub groups: Vec<Vec<String>>,
}

const DEFAULT_CONFUSION: &str = include_str!("../assets/confusion.json");

impl ConfusionTable {
    pub fn from_json(s: &str) -> Result<ConfusionTable, String> {
        let t: ConfusionTable = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for g in &t.groups {
            for l in g {
                if !seen.insert(l.as_str()) {
                    return Err(format!("label {l:?} appears in more than one group"));
                }
            }
        }
        Ok(t)
    }

    pub fn builtin() -> &'static ConfusionTable {
        static T: OnceLock<ConfusionTable> = OnceLock::new();
        T.get_or_init(|| ConfusionTable::from_json(DEFAULT_CONFUSION).expect("bundled confusion table is valid"))
    }

    /// Labels `label` can be mistaken for.
    pub fn alternatives(&self, label: &str) -> Vec<&str> {
        self.groups
            .iter()
            .find(|g| g.iter().any(|l| l == label))
            .map(|g| g.iter().map(String::as_str).filter(|l| *l != label).collect())
            .unwrap_or_default()
    }
}

fn hashed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Unit class prototype derived from a hash of the label.
pub fn prototype(label: &str, dim: usize) -> Vec<f64> {
    static CACHE: OnceLock<std::sync::Mutex<BTreeMap<(String, usize), Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().expect("prototype cache").get(&(label.to_string(), dim)) {
        return v.clone();
    }
    let mut rng = hashed_rng(&[b"prototype", label.as_bytes()]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let v = normalized((0..dim).map(|_| normal.sample(&mut rng)).collect());
    cache.lock().expect("prototype cache").insert((label.to_string(), dim), v.clone());
    v
}

pub fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn detect(obs: &RawObservation, cfg: &NoiseConfig) -> Vec<Detection> {
    detect_with(obs, cfg, ConfusionTable::builtin())
}

/// Noisy detections for every visible object. Each object's noise is drawn
/// from its own stream keyed by seed, step, viewpoint and object id.
pub fn detect_with(obs: &RawObservation, cfg: &NoiseConfig, table: &ConfusionTable) -> Vec<Detection> {
    let mut out = Vec::new();
    for v in &obs.visible {
        let mut rng = hashed_rng(&[
            &cfg.rng_seed.to_le_bytes(),
            &obs.step.to_le_bytes(),
            obs.viewpoint.as_bytes(),
            &v.id.to_le_bytes(),
        ]);
        if rng.random_bool(cfg.miss_prob) {
            continue;
        }
        let mut label = v.label.clone();
        if rng.random_bool(cfg.label_flip_prob) {
            if let Some(alt) = table.alternatives(&v.label).choose(&mut rng) {
                label = alt.to_string();
            }
        }
        let voxels = erode(&v.voxels, cfg.mask_erosion_frac, &mut rng);
        let mut feature = prototype(&v.label, cfg.feature_dim);
        if cfg.feature_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.feature_sigma).expect("sigma validated");
            feature.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
            feature = normalized(feature);
        }
        let jitter = if cfg.confidence_jitter > 0.0 {
            cfg.confidence_jitter * rng.random_range(-1.0..=1.0)
        } else {
            0.0
        };
        let confidence = (cfg.confidence_base + jitter).clamp(1e-3, 1.0);
        out.push(Detection { label, confidence, voxels, feature, source: v.id });
    }
    out
}

/// Drops `frac` of the boundary cells, never emptying the mask.
fn erode(voxels: &[Cell], frac: f64, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    if frac <= 0.0 {
        return voxels.to_vec();
    }
    let set: BTreeSet<Cell> = voxels.iter().copied().collect();
    let mut boundary: Vec<Cell> = set
        .iter()
        .copied()
        .filter(|c| NEIGHBOURS6.iter().any(|d| !set.contains(&crate::grid::add(*c, *d))))
        .collect();
    boundary.shuffle(rng);
    let mut drop = (frac * boundary.len() as f64).floor() as usize;
    if drop >= set.len() {
        drop = set.len() - 1;
    }
    let gone: BTreeSet<Cell> = boundary.into_iter().take(drop).collect();
    set.into_iter().filter(|c| !gone.contains(c)).collect()
}

/// Hex digest of a detection list, for traces.
pub fn digest(dets: &[Detection]) -> String {
    let s = serde_json::to_string(dets).expect("detections serialize");
    crate::worldsim::hex_digest(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::VisibleObject;

    fn obs(n: u32, label: &str) -> RawObservation {
        RawObservation {
            viewpoint: "overhead".into(),
            step: 3,
            visible: (1..=n)
                .map(|id| VisibleObject {
                    id,
                    label: label.into(),
                    voxels: crate::grid::solid_box([id as i32 * 4, 0, 0], [id as i32 * 4 + 2, 2, 2]).into_iter().collect(),
                })
                .collect(),
            hidden: vec![],
            grid_dims: [64, 64, 32],
            observed_regions: vec![],
        }
    }

    #[test]
    fn noiseless_is_identity_on_visibility() {
        let o = obs(3, "apple");
        let d = detect(&o, &NoiseConfig::default());
        assert_eq!(d.len(), 3);
        for (det, v) in d.iter().zip(&o.visible) {
            assert_eq!(det.voxels, v.voxels);
            assert_eq!(det.label, "apple");
            assert_eq!(det.confidence, 0.9);
        }
    }

    #[test]
    fn full_miss_gives_nothing() {
        let cfg = NoiseConfig { miss_prob: 1.0, ..Default::default() };
        assert!(detect(&obs(5, "apple"), &cfg).is_empty());
    }

    #[test]
    fn flip_frequency_matches_probability() {
        let cfg = NoiseConfig { label_flip_prob: 0.1, rng_seed: 11, ..Default::default() };
        let d = detect(&obs(1000, "apple"), &cfg);
        let flips = d.iter().filter(|x| x.label != "apple").count() as f64 / 1000.0;
        assert!((flips - 0.1).abs() <= 0.02, "flip rate {flips}");
        assert!(d.iter().all(|x| x.label == "apple" || x.label == "lime"));
    }

    #[test]
    fn ungrouped_labels_never_flip() {
        let cfg = NoiseConfig { label_flip_prob: 1.0, ..Default::default() };
        assert!(detect(&obs(20, "handle"), &cfg).iter().all(|x| x.label == "handle"));
    }

    #[test]
    fn erosion_is_a_nonempty_subset_and_deterministic() {
        let cfg = NoiseConfig { mask_erosion_frac: 0.5, feature_sigma: 0.2, rng_seed: 5, ..Default::default() };
        let o = obs(10, "mug");
        let a = detect(&o, &cfg);
        assert_eq!(a, detect(&o, &cfg));
        for (det, v) in a.iter().zip(&o.visible) {
            assert!(!det.voxels.is_empty() && det.voxels.len() < v.voxels.len());
            assert!(det.voxels.iter().all(|c| v.voxels.contains(c)));
            let n: f64 = det.feature.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn prototypes_are_unit_and_distinct() {
        let a = prototype("apple", 32);
        let b = prototype("lime", 32);
        assert_ne!(a, b);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, prototype("apple", 32));
    }
}
