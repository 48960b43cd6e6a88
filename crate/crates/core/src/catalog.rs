//! Object class table: what kind of thing a label names and whether a robot
//! can pick it up.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Rigid,
    Container,
    Cover,
    Handle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub kind: ObjectKind,
    pub movable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub classes: BTreeMap<String, ClassInfo>,
}

const DEFAULT_CLASSES: &str = include_str!("../assets/classes.json");

/// Unknown labels are treated as movable rigid objects.
const UNKNOWN: ClassInfo = ClassInfo { kind: ObjectKind::Rigid, movable: true };

impl Catalog {
    pub fn from_json(s: &str) -> Result<Catalog, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn builtin() -> &'static Catalog {
        static CAT: OnceLock<Catalog> = OnceLock::new();
        CAT.get_or_init(|| Catalog::from_json(DEFAULT_CLASSES).expect("bundled class table is valid"))
    }

    pub fn info(&self, label: &str) -> ClassInfo {
        self.classes.get(label).copied().unwrap_or(UNKNOWN)
    }

    pub fn kind(&self, label: &str) -> ObjectKind {
        self.info(label).kind
    }

    pub fn movable(&self, label: &str) -> bool {
        self.info(label).movable
    }
}
