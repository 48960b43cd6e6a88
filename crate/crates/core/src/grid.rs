//! Integer voxel lattice primitives shared by every module.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A voxel cell on the integer lattice.
pub type Cell = [i32; 3];

/// A real-valued 3-vector.
pub type Vec3 = [f64; 3];

/// The six face-neighbour offsets in lexicographic order.
pub const NEIGHBOURS6: [Cell; 6] = [
    [-1, 0, 0],
    [0, -1, 0],
    [0, 0, -1],
    [0, 0, 1],
    [0, 1, 0],
    [1, 0, 0],
];

pub fn add(a: Cell, b: Cell) -> Cell {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Cell, b: Cell) -> Cell {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn to_vec3(c: Cell) -> Vec3 {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Returns `None` for the zero vector.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n <= 1e-12 || !n.is_finite() {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

/// Mean of the cell centres.
pub fn centroid<'a, I: IntoIterator<Item = &'a Cell>>(cells: I) -> Option<Vec3> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for c in cells {
        acc = vadd(acc, to_vec3(*c));
        n += 1;
    }
    (n > 0).then(|| scale(acc, 1.0 / n as f64))
}

/// Inclusive axis-aligned box of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Cell,
    pub max: Cell,
}

impl Aabb {
    pub fn new(min: Cell, max: Cell) -> Self {
        Aabb { min, max }
    }

    pub fn of<'a, I: IntoIterator<Item = &'a Cell>>(cells: I) -> Option<Aabb> {
        let mut it = cells.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for c in it {
            for k in 0..3 {
                b.min[k] = b.min[k].min(c[k]);
                b.max[k] = b.max[k].max(c[k]);
            }
        }
        Some(b)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k] <= self.max[k])
    }

    pub fn contains(&self, c: Cell) -> bool {
        (0..3).all(|k| self.min[k] <= c[k] && c[k] <= self.max[k])
    }

    /// Cells strictly inside the box (the box shrunk by one on every side).
    pub fn contains_strict(&self, c: Cell) -> bool {
        (0..3).all(|k| self.min[k] < c[k] && c[k] < self.max[k])
    }

    pub fn extent(&self, axis: usize) -> i32 {
        self.max[axis] - self.min[axis] + 1
    }

    pub fn volume(&self) -> i64 {
        (0..3).map(|k| self.extent(k).max(0) as i64).product()
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn dilate(&self, r: i32) -> Aabb {
        Aabb {
            min: [self.min[0] - r, self.min[1] - r, self.min[2] - r],
            max: [self.max[0] + r, self.max[1] + r, self.max[2] + r],
        }
    }

    pub fn translate(&self, d: Cell) -> Aabb {
        Aabb { min: add(self.min, d), max: add(self.max, d) }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let b = *self;
        (b.min[0]..=b.max[0]).flat_map(move |x| {
            (b.min[1]..=b.max[1]).flat_map(move |y| (b.min[2]..=b.max[2]).map(move |z| [x, y, z]))
        })
    }
}

/// Solid box of cells.
pub fn solid_box(min: Cell, max: Cell) -> BTreeSet<Cell> {
    Aabb::new(min, max).cells().collect()
}

/// Hollow box: the one-cell-thick boundary of the inclusive box.
pub fn shell_box(min: Cell, max: Cell) -> BTreeSet<Cell> {
    let b = Aabb::new(min, max);
    b.cells().filter(|c| !b.contains_strict(*c)).collect()
}

/// Cells of `set` with at least one 6-neighbour outside `set`.
pub fn boundary_cells(set: &BTreeSet<Cell>) -> Vec<Cell> {
    set.iter()
        .copied()
        .filter(|c| NEIGHBOURS6.iter().any(|d| !set.contains(&add(*c, *d))))
        .collect()
}
