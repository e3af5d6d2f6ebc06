//! Dense brute-force reference: a uniform grid integrated voxel by voxel and
//! exhaustive query checkers over it. Used to validate the adaptive map.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::integrator::FrameInput;
use crate::map::{FusionParams, OccupancyOctree, OccupancyState};
use crate::query::{CheckResult, CorridorSegment, Occupancy, Verdict};
use crate::sensor::SensorSpec;

/// Largest grid the oracle will allocate.
pub const MAX_DENSE_VOXELS: usize = 256 * 256 * 256;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    pub origin: Vec3,
    pub v_res: f64,
    pub dims: [usize; 3],
    pub cells: Vec<OccupancyState>,
}

impl DenseGrid {
    pub fn new(origin: Vec3, v_res: f64, dims: [usize; 3]) -> Result<Self> {
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match n {
            Some(n) if n <= MAX_DENSE_VOXELS => Ok(DenseGrid {
                origin,
                v_res,
                dims,
                cells: vec![OccupancyState::UNKNOWN; n],
            }),
            _ => Err(Error::GridTooLarge(n.unwrap_or(usize::MAX))),
        }
    }

    /// Grid covering the whole map with every voxel set from the data cell
    /// that contains it.
    pub fn from_map(map: &OccupancyOctree) -> Result<Self> {
        let n = map.voxels_per_edge() as usize;
        let mut g = DenseGrid::new(map.origin(), map.v_res(), [n; 3])?;
        map.for_each_data_cell(|c| {
            let lo = g.index_of(&(c.aabb.min + Vec3::repeat(0.5 * g.v_res))).unwrap();
            let e = (c.size / g.v_res).round() as usize;
            for z in lo[2]..lo[2] + e {
                for y in lo[1]..lo[1] + e {
                    let row = g.linear([lo[0], y, z]);
                    g.cells[row..row + e].fill(c.state);
                }
            }
        });
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn linear(&self, i: [usize; 3]) -> usize {
        i[0] + self.dims[0] * (i[1] + self.dims[1] * i[2])
    }

    pub fn index_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for k in 0..3 {
            let c = ((p[k] - self.origin[k]) / self.v_res).floor();
            if !(c >= 0.0 && (c as usize) < self.dims[k]) {
                return None;
            }
            out[k] = c as usize;
        }
        Some(out)
    }

    pub fn voxel_center(&self, i: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(i[0] as f64 + 0.5, i[1] as f64 + 0.5, i[2] as f64 + 0.5) * self.v_res
    }

    pub fn voxel_box(&self, i: [usize; 3]) -> Aabb {
        Aabb::cube(
            self.origin + Vec3::new(i[0] as f64, i[1] as f64, i[2] as f64) * self.v_res,
            self.v_res,
        )
    }

    pub fn get(&self, i: [usize; 3]) -> OccupancyState {
        self.cells[self.linear(i)]
    }

    pub fn state_at(&self, p: &Vec3) -> Option<OccupancyState> {
        self.index_of(p).map(|i| self.get(i))
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(
            self.origin,
            self.origin
                + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.v_res,
        )
    }
}

/// Log-odds one frame contributes at point `p`: nearest pixel of its
/// projection, no update for invalid depth or points outside the image.
pub fn frame_log_odds(p: &Vec3, frame: &FrameInput, spec: &SensorSpec) -> Option<f64> {
    let proj = spec.project(&frame.pose, p)?;
    let (u, v) = proj.pixel();
    let z = frame.depth.get(u, v);
    if !spec.is_valid_depth(z) {
        return None;
    }
    spec.inverse_model(proj.depth - z, z)
}

/// Integrates every frame into every voxel of a uniform grid.
pub fn dense_integrate(
    frames: &[FrameInput],
    spec: &SensorSpec,
    w_max: u32,
    origin: Vec3,
    v_res: f64,
    dims: [usize; 3],
) -> Result<DenseGrid> {
    let mut g = DenseGrid::new(origin, v_res, dims)?;
    let fusion = FusionParams {
        w_max,
        l_min_total: spec.l_min_total,
    };
    let [nx, ny, _] = dims;
    let grid = g.clone();
    g.cells
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let c = grid.voxel_center([x, y, z]);
                    let cell = &mut slab[x + nx * y];
                    for f in frames {
                        if let Some(l) = frame_log_odds(&c, f, spec) {
                            *cell = cell.fuse(l, &fusion);
                        }
                    }
                }
            }
        });
    Ok(g)
}

/// Exhaustive check over every voxel the primitive overlaps. Parts outside
/// the grid count as unobserved.
pub fn dense_check_segment(grid: &DenseGrid, seg: &CorridorSegment, unknown_is_unsafe: bool) -> CheckResult {
    let sb = seg.bounds();
    let gb = grid.bounds();
    let mut unknown = (0..3).any(|i| sb.min[i] < gb.min[i] || sb.max[i] > gb.max[i]);
    let lo: [usize; 3] = std::array::from_fn(|i| {
        (((sb.min[i] - grid.origin[i]) / grid.v_res).floor().max(0.0) as usize).min(grid.dims[i])
    });
    let hi: [usize; 3] = std::array::from_fn(|i| {
        (((sb.max[i] - grid.origin[i]) / grid.v_res).floor() as i64 + 1).clamp(0, grid.dims[i] as i64) as usize
    });
    let mut visits = 0;
    let mut occupied = false;
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                visits += 1;
                let i = [x, y, z];
                if !seg.overlaps(&grid.voxel_box(i)) {
                    continue;
                }
                match Occupancy::of_state(&grid.get(i)) {
                    Occupancy::Free => {}
                    Occupancy::Occupied => occupied = true,
                    Occupancy::Unknown => unknown = true,
                }
            }
        }
    }
    let verdict = if occupied || (unknown && unknown_is_unsafe) {
        Verdict::Unsafe
    } else if unknown {
        Verdict::Unobserved
    } else {
        Verdict::Safe
    };
    CheckResult { verdict, visits }
}

pub fn dense_check_sphere(grid: &DenseGrid, center: &Vec3, radius: f64, unknown_is_unsafe: bool) -> CheckResult {
    dense_check_segment(
        grid,
        &CorridorSegment {
            start: *center,
            end: *center,
            radius,
        },
        unknown_is_unsafe,
    )
}

/// Fixed-step ray marcher: distance of the first sample inside an occupied
/// voxel, `None` on leaving the grid, exceeding `max_range` or reaching an
/// unknown voxel first.
pub fn march_ray(grid: &DenseGrid, origin: &Vec3, dir: &Vec3, max_range: f64, step: f64) -> Option<f64> {
    let dir = dir.normalize();
    let (enter, exit) = grid.bounds().ray_interval(origin, &dir)?;
    let start = enter.max(0.0);
    let end = exit.min(max_range);
    for k in 0.. {
        let t = start + k as f64 * step;
        if t > end {
            break;
        }
        if let Some(s) = grid.state_at(&(origin + dir * t)) {
            match Occupancy::of_state(&s) {
                Occupancy::Free => {}
                Occupancy::Occupied => return Some(t),
                Occupancy::Unknown => return None,
            }
        }
    }
    None
}
