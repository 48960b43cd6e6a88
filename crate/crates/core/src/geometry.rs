//! Geometric heuristics that parameterize action primitives from voxels.

use crate::grid::{self, Aabb, Cell, Vec3, NEIGHBOURS6};
use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// |z| of a handle axis at or above this is a vertical handle.
pub const VERTICAL_THRESHOLD: f64 = 0.7;
/// |z| of a handle axis at or below this is a horizontal handle.
pub const HORIZONTAL_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub joint: JointKind,
    pub axis: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec3>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("voxels are degenerate (fewer than two distinct cells)")]
    Degenerate,
    #[error("no outward surface found")]
    NoSurface,
    #[error("handle orientation is ambiguous")]
    Ambiguous,
    #[error("operation requires a revolute joint")]
    WrongJointType,
    #[error("n_steps must be at least 1")]
    InvalidSteps,
}

/// Flips `v` so its first non-negligible component is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    for k in 0..3 {
        if v[k].abs() > 1e-9 {
            return if v[k] < 0.0 { grid::scale(v, -1.0) } else { v };
        }
    }
    v
}

/// Dominant direction of a voxel set via PCA of the cell centres.
pub fn handle_principal_axis(voxels: &[Cell]) -> Result<Vec3, GeometryError> {
    let uniq: BTreeSet<Cell> = voxels.iter().copied().collect();
    if uniq.len() < 2 {
        return Err(GeometryError::Degenerate);
    }
    let c = grid::centroid(&uniq).ok_or(GeometryError::Degenerate)?;
    let mut cov = Matrix3::<f64>::zeros();
    for cell in &uniq {
        let d = grid::vsub(grid::to_vec3(*cell), c);
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    cov /= uniq.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            best = k;
        }
    }
    let v = eig.eigenvectors.column(best);
    let axis = grid::normalize([v[0], v[1], v[2]]).ok_or(GeometryError::Degenerate)?;
    Ok(canonical_sign(axis))
}

/// Modal outward normal of the parent surface next to a handle.
///
/// Each surface cell votes for every face direction whose neighbour is empty
/// (neither surface nor handle) and which points towards the handle side.
/// Ties go to the lexicographically lowest direction.
pub fn opening_direction(handle: &[Cell], surface: &[Cell]) -> Result<Cell, GeometryError> {
    if surface.is_empty() {
        return Err(GeometryError::NoSurface);
    }
    let hc = grid::centroid(handle).ok_or(GeometryError::NoSurface)?;
    let surf: BTreeSet<Cell> = surface.iter().copied().collect();
    let hset: BTreeSet<Cell> = handle.iter().copied().collect();
    let mut votes: BTreeMap<Cell, usize> = BTreeMap::new();
    for s in &surf {
        let towards = grid::vsub(hc, grid::to_vec3(*s));
        for d in NEIGHBOURS6 {
            let n = grid::add(*s, d);
            if surf.contains(&n) || hset.contains(&n) {
                continue;
            }
            if grid::dot(grid::to_vec3(d), towards) > 0.0 {
                *votes.entry(d).or_default() += 1;
            }
        }
    }
    // BTreeMap iterates lexicographically; keep the first maximum.
    let mut best: Option<(Cell, usize)> = None;
    for (d, n) in votes {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((d, n));
        }
    }
    best.map(|(d, _)| d).ok_or(GeometryError::NoSurface)
}

/// Joint type and motion parameters from handle orientation.
///
/// Horizontal handles open prismatically along the opening direction.
/// Vertical handles are doors hinged about a vertical axis at the panel edge
/// farthest from the handle.
pub fn classify_joint(
    handle_axis: Vec3,
    opening_dir: Vec3,
    handle_center: Vec3,
    panel: Option<&Aabb>,
) -> Result<JointParams, GeometryError> {
    let vz = handle_axis[2].abs();
    let n = grid::normalize(opening_dir).ok_or(GeometryError::Ambiguous)?;
    if vz <= HORIZONTAL_THRESHOLD {
        return Ok(JointParams { joint: JointKind::Prismatic, axis: n, origin: None });
    }
    if vz < VERTICAL_THRESHOLD {
        return Err(GeometryError::Ambiguous);
    }
    let panel = panel.ok_or(GeometryError::Ambiguous)?;
    if n[2].abs() > 1e-9 {
        return Err(GeometryError::Ambiguous);
    }
    let up = [0.0, 0.0, 1.0];
    let u = grid::cross(up, n);
    let (umin, umax) = project_range(panel, u);
    let hu = grid::dot(handle_center, u);
    let hinge_u = if (hu - umin).abs() >= (umax - hu).abs() { umin } else { umax };
    let (_, face_n) = project_range(panel, n);
    let origin = grid::vadd(
        grid::vadd(grid::scale(u, hinge_u), grid::scale(n, face_n)),
        [0.0, 0.0, panel.min[2] as f64],
    );
    let r = grid::vsub(handle_center, origin);
    let axis = if grid::dot(grid::cross(up, r), n) >= 0.0 { up } else { [0.0, 0.0, -1.0] };
    Ok(JointParams { joint: JointKind::Revolute, axis, origin: Some(origin) })
}

fn project_range(b: &Aabb, dir: Vec3) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in &[b.min[0], b.max[0]] {
        for &y in &[b.min[1], b.max[1]] {
            for &z in &[b.min[2], b.max[2]] {
                let p = grid::dot([x as f64, y as f64, z as f64], dir);
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
    }
    (lo, hi)
}

/// Top-down grasp cell: the cell of the highest layer nearest to that
/// layer's mean (ties to the lexicographically lowest cell).
pub fn pickup_point(voxels: &[Cell]) -> Option<Cell> {
    let top = voxels.iter().map(|c| c[2]).max()?;
    let layer: BTreeSet<Cell> = voxels.iter().copied().filter(|c| c[2] == top).collect();
    let mean = grid::centroid(&layer)?;
    let mut best: Option<(f64, Cell)> = None;
    for c in layer {
        let d = grid::norm(grid::vsub(grid::to_vec3(c), mean));
        if best.is_none_or(|(bd, _)| d < bd - 1e-12) {
            best = Some((d, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Rotates `v` about unit axis `k` by `theta` (Rodrigues).
pub fn rotate(v: Vec3, k: Vec3, theta: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    let kxv = grid::cross(k, v);
    let kdv = grid::dot(k, v);
    [
        v[0] * c + kxv[0] * s + k[0] * kdv * (1.0 - c),
        v[1] * c + kxv[1] * s + k[1] * kdv * (1.0 - c),
        v[2] * c + kxv[2] * s + k[2] * kdv * (1.0 - c),
    ]
}

/// Handle positions along a door's opening arc, excluding the start pose and
/// ending at `max_angle` (radians).
pub fn revolute_waypoints(
    params: &JointParams,
    start: Vec3,
    n_steps: usize,
    max_angle: f64,
) -> Result<Vec<Vec3>, GeometryError> {
    if params.joint != JointKind::Revolute {
        return Err(GeometryError::WrongJointType);
    }
    if n_steps == 0 {
        return Err(GeometryError::InvalidSteps);
    }
    let origin = params.origin.ok_or(GeometryError::WrongJointType)?;
    let k = grid::normalize(params.axis).ok_or(GeometryError::WrongJointType)?;
    let rel = grid::vsub(start, origin);
    Ok((1..=n_steps)
        .map(|i| {
            let theta = max_angle * i as f64 / n_steps as f64;
            grid::vadd(origin, rotate(rel, k, theta))
        })
        .collect())
}

/// Volume swept by a compartment's moving part when it opens.
///
/// Doors sweep a box from the hinge edge to the handle, as deep as that
/// width and as tall as the panel. Drawers sweep a slab in front of the
/// whole face, as deep as the panel, within one cell of the handle height.
/// Both the scenario generator and the explorer use this rule.
pub fn sweep_box(params: &JointParams, panel: &Aabb, handle_center: Vec3) -> Option<Aabb> {
    let (n_k, n_sign) = dominant_axis(opening_normal(params, handle_center)?)?;
    if n_k == 2 {
        return None;
    }
    let face = if n_sign > 0 { panel.max[n_k] } else { panel.min[n_k] };
    let u_k = 1 - n_k;
    let mut min = panel.min;
    let mut max = panel.max;
    let depth = match params.joint {
        JointKind::Revolute => {
            let origin = params.origin?;
            let hinge = origin[u_k].round() as i32;
            let hu = handle_center[u_k].round() as i32;
            min[u_k] = hinge.min(hu);
            max[u_k] = hinge.max(hu);
            (hinge - hu).abs() + 1
        }
        JointKind::Prismatic => {
            let hz = handle_center[2].round() as i32;
            min[2] = (hz - 1).max(panel.min[2]);
            max[2] = (hz + 1).min(panel.max[2]);
            panel.extent(n_k)
        }
    };
    if n_sign > 0 {
        min[n_k] = face + 1;
        max[n_k] = face + depth;
    } else {
        min[n_k] = face - depth;
        max[n_k] = face - 1;
    }
    let b = Aabb::new(min, max);
    b.is_valid().then_some(b)
}

/// Outward direction the moving part starts to travel in.
pub fn opening_normal(params: &JointParams, handle_center: Vec3) -> Option<Vec3> {
    match params.joint {
        JointKind::Prismatic => Some(params.axis),
        JointKind::Revolute => {
            // the handle's initial tangent of motion
            let r = grid::vsub(handle_center, params.origin?);
            let t = grid::cross(params.axis, r);
            grid::normalize([t[0], t[1], 0.0])
        }
    }
}

fn dominant_axis(v: Vec3) -> Option<(usize, i32)> {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    (v[k].abs() > 1e-9).then(|| (k, if v[k] > 0.0 { 1 } else { -1 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::solid_box;

    fn angle_deg(a: Vec3, b: Vec3) -> f64 {
        let c = grid::dot(a, b).abs() / (grid::norm(a) * grid::norm(b));
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn bar_along_x() {
        let bar: Vec<Cell> = (0..6).map(|x| [x, 3, 2]).collect();
        let a = handle_principal_axis(&bar).unwrap();
        assert!(angle_deg(a, [1.0, 0.0, 0.0]) < 1e-6);
        assert!(a[0] > 0.0);
    }

    #[test]
    fn rotated_bar_30_degrees() {
        let t = 30f64.to_radians();
        let bar: Vec<Cell> = (0..24)
            .map(|i| [(i as f64 * t.cos()).round() as i32, (i as f64 * t.sin()).round() as i32, 0])
            .collect();
        let a = handle_principal_axis(&bar).unwrap();
        assert!(angle_deg(a, [t.cos(), t.sin(), 0.0]) < 5.0);
    }

    #[test]
    fn cube_axis_is_deterministic_and_single_cell_degenerate() {
        let cube: Vec<Cell> = solid_box([0, 0, 0], [1, 1, 1]).into_iter().collect();
        assert_eq!(handle_principal_axis(&cube), handle_principal_axis(&cube));
        assert_eq!(handle_principal_axis(&[[1, 1, 1], [1, 1, 1]]), Err(GeometryError::Degenerate));
    }

    #[test]
    fn drawer_front_facing_minus_y() {
        // front face at y=5, handle protrudes at y=4
        let face: Vec<Cell> = solid_box([0, 5, 0], [6, 5, 4]).into_iter().collect();
        let handle: Vec<Cell> = (2..5).map(|x| [x, 4, 2]).collect();
        assert_eq!(opening_direction(&handle, &face).unwrap(), [0, -1, 0]);
    }

    #[test]
    fn door_panel_facing_plus_x() {
        let panel: Vec<Cell> = solid_box([3, 0, 0], [3, 6, 6]).into_iter().collect();
        let handle: Vec<Cell> = (2..5).map(|z| [4, 5, z]).collect();
        assert_eq!(opening_direction(&handle, &panel).unwrap(), [1, 0, 0]);
    }

    #[test]
    fn l_panel_votes_by_count() {
        // Brute force: 6 cells face +x, 4 face +y; handle sits diagonally
        // out so both directions point towards it.
        let mut panel: Vec<Cell> = (0..6).map(|y| [0, y, 0]).collect();
        panel.extend((1..5).map(|x| [x, 6, 0]));
        let handle = vec![[6, 9, 0]];
        let mut plus_x = 0;
        let mut plus_y = 0;
        let set: BTreeSet<Cell> = panel.iter().copied().collect();
        for c in &panel {
            if !set.contains(&[c[0] + 1, c[1], c[2]]) && 6 > c[0] {
                plus_x += 1;
            }
            if !set.contains(&[c[0], c[1] + 1, c[2]]) && 9 > c[1] {
                plus_y += 1;
            }
        }
        assert!(plus_x > plus_y, "{plus_x} vs {plus_y}");
        assert_eq!(opening_direction(&handle, &panel).unwrap(), [1, 0, 0]);
        assert_eq!(opening_direction(&handle, &[]), Err(GeometryError::NoSurface));
    }

    #[test]
    fn joint_classification() {
        let p = classify_joint([1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [3.0, 4.0, 2.0], None).unwrap();
        assert_eq!(p.joint, JointKind::Prismatic);
        assert_eq!(p.axis, [0.0, -1.0, 0.0]);

        // door on a +x panel spanning y in [0, 6]; handle near y=5
        let panel = Aabb::new([0, 0, 0], [3, 6, 6]);
        let d = classify_joint([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [4.0, 5.0, 3.0], Some(&panel)).unwrap();
        assert_eq!(d.joint, JointKind::Revolute);
        assert_eq!(d.axis[2].abs(), 1.0);
        let o = d.origin.unwrap();
        assert_eq!(o, [3.0, 0.0, 0.0]);

        let s = 30f64.to_radians();
        assert_eq!(
            classify_joint([s.cos(), 0.0, s.sin()], [0.0, -1.0, 0.0], [0.0; 3], Some(&panel)),
            Err(GeometryError::Ambiguous)
        );
    }

    #[test]
    fn pickup_points() {
        assert_eq!(pickup_point(&[[4, 4, 4]]), Some([4, 4, 4]));
        let slab: Vec<Cell> = solid_box([0, 0, 2], [2, 2, 2]).into_iter().collect();
        assert_eq!(pickup_point(&slab), Some([1, 1, 2]));
        let doll = vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 0, 1]];
        assert_eq!(pickup_point(&doll), Some([1, 0, 1]));
        assert_eq!(pickup_point(&[]), None);
    }

    #[test]
    fn waypoints() {
        let p = JointParams { joint: JointKind::Revolute, axis: [0.0, 0.0, 1.0], origin: Some([0.0; 3]) };
        assert_eq!(revolute_waypoints(&p, [1.0, 0.0, 0.0], 1, 0.0).unwrap(), vec![[1.0, 0.0, 0.0]]);
        let w = revolute_waypoints(&p, [1.0, 0.0, 0.0], 3, std::f64::consts::FRAC_PI_2).unwrap();
        let end = w.last().unwrap();
        assert!((end[0]).abs() < 1e-12 && (end[1] - 1.0).abs() < 1e-12);
        for q in &w {
            assert!((grid::norm(*q) - 1.0).abs() < 1e-9);
        }
        let pr = JointParams { joint: JointKind::Prismatic, axis: [1.0, 0.0, 0.0], origin: None };
        assert_eq!(revolute_waypoints(&pr, [0.0; 3], 2, 1.0), Err(GeometryError::WrongJointType));
        assert_eq!(revolute_waypoints(&p, [0.0; 3], 0, 1.0), Err(GeometryError::InvalidSteps));
    }

    #[test]
    fn door_sweep_box_in_front_of_panel() {
        // cabinet front face at y=10 facing -y, spans x 0..=8
        let panel = Aabb::new([0, 10, 0], [8, 16, 6]);
        let hc = [6.0, 9.0, 3.0];
        let p = classify_joint([0.0, 0.0, 1.0], [0.0, -1.0, 0.0], hc, Some(&panel)).unwrap();
        assert_eq!(p.origin.unwrap()[0], 0.0);
        let b = sweep_box(&p, &panel, hc).unwrap();
        assert_eq!(b, Aabb::new([0, 3, 0], [6, 9, 6]));
    }
}
