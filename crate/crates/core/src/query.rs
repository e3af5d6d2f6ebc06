//! Read-only queries: point classification, interpolation, raycasting and
//! collision checks for spheres and corridors.
//!
//! Collision checks descend from the root and stop at the first node whose
//! summary proves it observed and free, so large empty volumes cost a single
//! visit. Only cells that overlap the primitive are ever inspected.

use crate::error::Result;
use crate::geometry::{capsule_overlaps_box, sphere_overlaps_box, Aabb, Vec3};
use crate::map::{cell_index, CellInfo, NodeId, OccupancyOctree, OccupancyState, VoxelBlock, BLOCK_SCALES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Occupancy {
    Free,
    Occupied,
    Unknown,
}

impl Occupancy {
    /// Free when observed with negative accumulated log-odds; any other
    /// observed value counts as occupied.
    pub fn of_state(s: &OccupancyState) -> Self {
        if !s.observed() {
            Occupancy::Unknown
        } else if s.accumulated() < 0.0 {
            Occupancy::Free
        } else {
            Occupancy::Occupied
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub class: Occupancy,
    /// Accumulated log-odds of the cell (0 when unknown).
    pub log_odds: f64,
    /// Edge length of the answering cell in meters.
    pub cell_size: f64,
}

pub fn classify_point(map: &OccupancyOctree, p: &Vec3) -> Result<Classification> {
    let cell = map.lowest_cell_at(p)?;
    Ok(classification_of(&cell))
}

fn classification_of(cell: &CellInfo) -> Classification {
    Classification {
        class: Occupancy::of_state(&cell.state),
        log_odds: cell.state.accumulated(),
        cell_size: cell.size,
    }
}

/// Edge length, in finest voxels, of the data cell covering `coord`.
fn data_scale(map: &OccupancyOctree, coord: [u32; 3]) -> u32 {
    let c = map.cell_at_voxel(coord);
    (c.size / map.v_res()).round() as u32
}

/// Accumulated log-odds of the cell of edge `edge` voxels around `coord`,
/// read from block mip levels where needed.
fn value_at_scale(map: &OccupancyOctree, coord: [u32; 3], edge: u32) -> Option<f64> {
    let c = map.cell_at_voxel(coord);
    let state = match c.scale {
        Some(_) => {
            let id = map.voxel_block(coord)?;
            let b = map.block(id);
            let s = (edge.trailing_zeros() as u8).min(crate::map::BLOCK_SCALES - 1);
            let local = [0, 1, 2].map(|i| coord[i] - b.coord()[i]);
            b.cell_at_voxel(s, local)
        }
        None => c.state,
    };
    state.observed().then(|| state.accumulated())
}

/// Trilinear interpolation of accumulated log-odds between the eight
/// surrounding cell centres, sampled at the finest scale every neighbour
/// has data for. `None` if any neighbour is unknown or off the map.
pub fn interpolate_occupancy(map: &OccupancyOctree, p: &Vec3) -> Option<f64> {
    let v = map.v_res();
    let n = map.voxels_per_edge() as i64;
    let rel = (p - map.origin()) / v;
    let mut edge = 1u32;
    loop {
        let e = edge as f64;
        // Lower neighbour index and fractional offset on each axis.
        let base = rel.map(|x| (x / e - 0.5).floor());
        let frac = Vec3::from_fn(|i, _| rel[i] / e - 0.5 - base[i]);
        let weights: [f64; 8] = std::array::from_fn(|k| {
            (0..3)
                .map(|i| if (k >> i) & 1 == 1 { frac[i] } else { 1.0 - frac[i] })
                .product()
        });
        // Neighbours with zero weight do not take part, so a cell centre
        // returns its own value even beside unknown space.
        let mut coords = [[0u32; 3]; 8];
        for (k, c) in coords.iter_mut().enumerate() {
            if weights[k] == 0.0 {
                continue;
            }
            for i in 0..3 {
                let cell = base[i] as i64 + ((k >> i) & 1) as i64;
                let vox = cell * edge as i64;
                if vox < 0 || vox >= n {
                    return None;
                }
                c[i] = vox as u32;
            }
        }
        let used = || (0..8).filter(|&k| weights[k] != 0.0);
        let needed = used().map(|k| data_scale(map, coords[k])).max().unwrap_or(edge);
        if needed > edge {
            edge = needed;
            continue;
        }
        let mut acc = 0.0;
        for k in used() {
            acc += weights[k] * value_at_scale(map, coords[k], edge)?;
        }
        return Some(acc);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitKind {
    Occupied,
    /// The ray entered never-observed space.
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance along the ray to the first half-voxel sample inside the
    /// hit cell.
    pub t: f64,
    pub point: Vec3,
    pub kind: HitKind,
    /// Tree level of the hit cell.
    pub level: u8,
    /// Block scale of the hit cell, `None` for node-level data.
    pub scale: Option<u8>,
    pub cell_size: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOutcome {
    pub hit: Option<RayHit>,
    /// Free nodes or cells stepped over.
    pub steps: usize,
}

/// Casts a ray and returns the first non-free cell it samples within
/// `max_range`. Samples are spaced half a voxel apart; observed-free nodes
/// and cells are crossed in one step regardless of size. Unknown space stops the ray: it is reported as a hit of kind
/// [`HitKind::Unknown`] when `report_unknown` is set and as a miss
/// otherwise.
pub fn raycast(
    map: &OccupancyOctree,
    origin: &Vec3,
    dir: &Vec3,
    max_range: f64,
    report_unknown: bool,
) -> RayOutcome {
    let mut out = RayOutcome { hit: None, steps: 0 };
    let norm = dir.norm();
    if !(norm > 0.0) || !(max_range >= 0.0) {
        return out;
    }
    let dir = dir / norm;
    let Some((enter, exit)) = map.bounds().ray_interval(origin, &dir) else {
        return out;
    };
    // Samples sit on the lattice start + k * step, so a free node is
    // crossed by jumping to the last lattice point before its exit.
    let start = enter.max(0.0);
    let t_end = exit.min(max_range);
    let step = 0.5 * map.v_res();
    let mut k = 0u64;
    loop {
        let t = start + k as f64 * step;
        if t > t_end {
            break;
        }
        let p = origin + dir * t;
        let Some(coord) = map.voxel_of(&p) else {
            k += 1;
            continue;
        };
        out.steps += 1;
        let (bx, cell) = free_extent_or_cell(map, coord);
        if let Some(c) = cell {
            let class = Occupancy::of_state(&c.state);
            if class != Occupancy::Free {
                if class == Occupancy::Unknown && !report_unknown {
                    return out;
                }
                out.hit = Some(RayHit {
                    t,
                    point: p,
                    kind: if class == Occupancy::Occupied {
                        HitKind::Occupied
                    } else {
                        HitKind::Unknown
                    },
                    level: c.level,
                    scale: c.scale,
                    cell_size: c.size,
                });
                return out;
            }
        }
        let t1 = bx.ray_interval(origin, &dir).map_or(t, |(_, t1)| t1);
        k = (((t1 - start) / step).floor() as u64).max(k + 1);
    }
    out
}

/// Largest free node containing `coord` (with no cell), or the data cell
/// itself when no enclosing node is entirely free.
fn free_extent_or_cell(map: &OccupancyOctree, coord: [u32; 3]) -> (Aabb, Option<CellInfo>) {
    let mut id = map.root();
    loop {
        if map.node_meta(id).is_free() {
            return (map.node_aabb(id), None);
        }
        match map.children(id) {
            Some(_) => id = map.child_towards(id, coord),
            None => {
                let c = map.cell_at_voxel(coord);
                return (c.aabb, Some(c));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Safe,
    Unsafe,
    Unobserved,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Safe => "safe",
            Verdict::Unsafe => "unsafe",
            Verdict::Unobserved => "unobserved",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckResult {
    pub verdict: Verdict,
    /// Nodes and cells whose bounds were tested against the primitive.
    pub visits: usize,
}

/// Capsule between two points; a sphere when both coincide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorridorSegment {
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
}

impl CorridorSegment {
    pub fn overlaps(&self, bx: &Aabb) -> bool {
        if self.start == self.end {
            sphere_overlaps_box(&self.start, self.radius, bx)
        } else {
            capsule_overlaps_box(&self.start, &self.end, self.radius, bx)
        }
    }

    /// Axis-aligned bounds of the swept volume.
    pub fn bounds(&self) -> Aabb {
        let r = Vec3::repeat(self.radius);
        Aabb::new(self.start.inf(&self.end) - r, self.start.sup(&self.end) + r)
    }
}

pub fn check_sphere(
    map: &OccupancyOctree,
    center: &Vec3,
    radius: f64,
    unknown_is_unsafe: bool,
) -> CheckResult {
    check_segment(
        map,
        &CorridorSegment {
            start: *center,
            end: *center,
            radius,
        },
        unknown_is_unsafe,
    )
}

pub fn check_corridor(
    map: &OccupancyOctree,
    segments: &[CorridorSegment],
    unknown_is_unsafe: bool,
) -> Vec<CheckResult> {
    segments
        .iter()
        .map(|s| check_segment(map, s, unknown_is_unsafe))
        .collect()
}

/// Coarse-to-fine check of one primitive. Parts outside the map count as
/// unobserved.
pub fn check_segment(
    map: &OccupancyOctree,
    seg: &CorridorSegment,
    unknown_is_unsafe: bool,
) -> CheckResult {
    let mut st = CheckState {
        seg,
        visits: 0,
        unknown: false,
    };
    let bounds = map.bounds();
    let leaves_map = (0..3).any(|i| {
        seg.bounds().min[i] < bounds.min[i] || seg.bounds().max[i] > bounds.max[i]
    });
    let verdict = if st.visit(map, map.root()) {
        Verdict::Unsafe
    } else if st.unknown || leaves_map {
        if unknown_is_unsafe {
            Verdict::Unsafe
        } else {
            Verdict::Unobserved
        }
    } else {
        Verdict::Safe
    };
    CheckResult {
        verdict,
        visits: st.visits,
    }
}

struct CheckState<'a> {
    seg: &'a CorridorSegment,
    visits: usize,
    unknown: bool,
}

impl CheckState<'_> {
    /// True as soon as an occupied overlapping cell is found.
    fn visit(&mut self, map: &OccupancyOctree, id: NodeId) -> bool {
        self.visits += 1;
        if !self.seg.overlaps(&map.node_aabb(id)) || map.node_meta(id).is_free() {
            return false;
        }
        if let Some(kids) = map.children(id) {
            return kids.iter().any(|k| self.visit(map, *k));
        }
        if let Some(s) = map.node_state(id) {
            return self.record(&s);
        }
        let b = map.node_block(id).expect("data node is leaf or block");
        self.visit_cells(map, map.block(b), BLOCK_SCALES - 1, [0; 3])
    }

    /// Coarse-to-fine descent inside a block. Sub-cubes outside the
    /// primitive's bounding box are skipped without a visit, and free
    /// sub-cubes are not opened.
    fn visit_cells(&mut self, map: &OccupancyOctree, block: &VoxelBlock, scale: u8, cell: [u32; 3]) -> bool {
        let s_c = block.current_scale();
        let edge = 1u32 << scale;
        let local = cell.map(|k| k * edge);
        if scale < BLOCK_SCALES - 1 {
            let c = [0, 1, 2].map(|k| block.coord()[k] + local[k]);
            let bx = map.voxel_box(c, edge);
            if !self.seg.bounds().intersects(&bx) {
                return false;
            }
            self.visits += 1;
            if !self.seg.overlaps(&bx) {
                return false;
            }
            if scale == s_c {
                return self.record(&block.cell_at_voxel(s_c, local));
            }
            let [x, y, z] = cell.map(|k| k as usize);
            if block.cell_free(scale, cell_index(scale, x, y, z)) {
                return false;
            }
        } else if scale == s_c {
            return self.record(&block.cell_at_voxel(s_c, local));
        }
        (0..8u32).any(|o| {
            let child = [0, 1, 2].map(|k| 2 * cell[k] + (o >> k & 1));
            self.visit_cells(map, block, scale - 1, child)
        })
    }

    fn record(&mut self, s: &OccupancyState) -> bool {
        match Occupancy::of_state(s) {
            Occupancy::Free => false,
            Occupancy::Occupied => true,
            Occupancy::Unknown => {
                self.unknown = true;
                false
            }
        }
    }
}
