use super::{view_corners, FrameContext, IntegrationConfig};
use crate::geometry::{Aabb, Vec3};
use crate::map::{
    cell_coords, cells_at, cells_per_edge, OccupancyState, TransitionBuffer, VoxelBlock, BLOCK_EDGE,
};
use crate::sensor::SensorSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlockTask {
    /// Project and fuse every cell individually.
    PerCell,
    /// The enclosing node was updated as a whole with this value.
    Uniform(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleEventKind {
    /// A buffer at the pending scale was allocated.
    BufferStarted,
    /// The pending scale became the integration scale.
    Switched,
    /// The pending scale was abandoned.
    BufferDropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleEvent {
    pub block_coord: [u32; 3],
    pub from: u8,
    pub to: u8,
    pub kind: ScaleEventKind,
}

#[derive(Debug, Default)]
pub struct BlockOutcome {
    pub cells_fused: usize,
    pub events: Vec<ScaleEvent>,
}

/// Integration scale wanted for a block whose centre is at `center`.
///
/// The distance-driven scale is `floor(log2(dist / (focal * v_res)))`
/// clamped to `[0, 3]`, so a cell roughly matches one back-projected pixel.
/// Relative to the `current` scale, a change only counts once the camera is
/// `hysteresis * focal * v_res` past the boundary distance. Frontier blocks
/// never go finer than `s_f`.
pub fn select_block_scale(
    center: &Vec3,
    camera: &Vec3,
    current: Option<u8>,
    frontier: bool,
    spec: &SensorSpec,
    config: &IntegrationConfig,
    v_res: f64,
) -> u8 {
    let dist = (center - camera).norm();
    let unit = spec.focal() * v_res;
    let raw = if dist < unit {
        0
    } else {
        ((dist / unit).log2().floor() as i64).clamp(0, 3) as u8
    };
    let by_distance = match current {
        None => raw,
        Some(s_c) => {
            let margin = config.hysteresis * unit;
            if raw > s_c && dist >= unit * f64::from(1u32 << (s_c + 1)) + margin {
                raw
            } else if raw < s_c && dist <= unit * f64::from(1u32 << s_c) - margin {
                raw
            } else {
                s_c
            }
        }
    };
    if frontier {
        by_distance.max(config.s_f)
    } else {
        by_distance
    }
}

fn is_frontier(block: &VoxelBlock) -> bool {
    let m = block.meta();
    m.max_log_odds.is_finite() && m.max_log_odds < 0.0 && m.contains_unknown
}

/// Camera-frame corner lattice of a block at `scale`: `(n + 1)^3` points for
/// `n` cells per edge, x fastest.
fn corner_lattice(ctx: &FrameContext, block_coord: [u32; 3], scale: u8) -> Vec<Vec3> {
    let m = cells_per_edge(scale) + 1;
    let rt = ctx.pose.rotation.transpose();
    let min = ctx.map_origin
        + Vec3::new(block_coord[0] as f64, block_coord[1] as f64, block_coord[2] as f64) * ctx.v_res;
    let base = ctx.pose.inverse_transform_point(&min);
    let step = ctx.v_res * f64::from(1u32 << scale);
    let axes = [rt.column(0) * step, rt.column(1) * step, rt.column(2) * step];
    let mut out = Vec::with_capacity(m * m * m);
    for z in 0..m {
        for y in 0..m {
            for x in 0..m {
                out.push(base + axes[0] * x as f64 + axes[1] * y as f64 + axes[2] * z as f64);
            }
        }
    }
    out
}

/// Per-frame log-odds for a coarse cell, or `None` for no update.
///
/// The cell is first tested as a whole against the pooling pyramid. A cell
/// that is fully in view over valid depth takes its centre sample when the
/// model is free everywhere inside it; otherwise only occupied evidence at
/// the centre is kept, so a coarse cell is never marked free on behalf of a
/// region that is partly occluded, invalid or off-image.
fn coarse_cell_log_odds(ctx: &FrameContext, corners: &[Vec3; 8]) -> Option<f64> {
    let center_value = || {
        let p = ctx.spec.project_camera(&((corners[0] + corners[7]) * 0.5))?;
        let (u, v) = p.pixel();
        let z = ctx.depth.get(u, v);
        if !ctx.spec.is_valid_depth(z) {
            return None;
        }
        ctx.spec.inverse_model(p.depth - z, z)
    };
    let view = view_corners(corners, ctx.spec, ctx.pyramid)?;
    if view.uniform(ctx.config.epsilon) {
        Some(view.l_center)
    } else if view.clean && !view.span.any_no_update && view.span.l_high < 0.0 {
        center_value()
    } else {
        center_value().filter(|l| *l >= 0.0)
    }
}

/// Finest-scale fusion. Cell centres are stepped in the camera frame rather
/// than transformed one by one; the result is the nearest-pixel rule of
/// `cell_log_odds`.
fn fuse_finest(cells: &mut [OccupancyState], ctx: &FrameContext, block_coord: [u32; 3]) -> usize {
    let rt = ctx.pose.rotation.transpose();
    let first = ctx.map_origin
        + (Vec3::new(block_coord[0] as f64, block_coord[1] as f64, block_coord[2] as f64)
            + Vec3::repeat(0.5))
            * ctx.v_res;
    let base = ctx.pose.inverse_transform_point(&first);
    let steps = [rt.column(0) * ctx.v_res, rt.column(1) * ctx.v_res, rt.column(2) * ctx.v_res];
    let spec = ctx.spec;
    let w = ctx.depth.width;
    let (wf, hf) = (w as f64, ctx.depth.height as f64);
    let edge = BLOCK_EDGE as usize;
    let mut n = 0;
    let mut slab = base;
    for z in 0..edge {
        let mut row = slab;
        for y in 0..edge {
            let mut pc = row;
            for x in 0..edge {
                if x > 0 {
                    pc += steps[0];
                }
                if pc.z < spec.z_np || pc.z > spec.z_fp {
                    continue;
                }
                let inv_z = 1.0 / pc.z;
                let u = spec.cx + spec.fx * pc.x * inv_z + 0.5;
                let v = spec.cy + spec.fy * pc.y * inv_z + 0.5;
                if !(u >= 0.0 && v >= 0.0 && u < wf && v < hf) {
                    continue;
                }
                // SAFETY: both coordinates were just checked to lie in
                // [0, w) and [0, h), so truncation is in range.
                let (pu, pv): (i32, i32) = unsafe { (u.to_int_unchecked(), v.to_int_unchecked()) };
                let m = &ctx.pixels[pv as usize * w + pu as usize];
                if let Some(l) = m.log_odds(pc.z - m.z, spec.l_min_iter) {
                    let c = &mut cells[x + edge * (y + edge * z)];
                    *c = c.fuse(l, &ctx.fusion);
                    n += 1;
                }
            }
            row += steps[1];
        }
        slab += steps[2];
    }
    n
}

fn fuse_cells(
    cells: &mut [OccupancyState],
    ctx: &FrameContext,
    block_coord: [u32; 3],
    scale: u8,
) -> usize {
    if scale == 0 {
        return fuse_finest(cells, ctx, block_coord);
    }
    let lattice = corner_lattice(ctx, block_coord, scale);
    let m = cells_per_edge(scale) + 1;
    let mut n = 0;
    let corner = |x: usize, y: usize, z: usize| lattice[x + m * (y + m * z)];
    let k = m - 1;
    let block_corners: [Vec3; 8] = std::array::from_fn(|i| corner(k * (i & 1), k * (i >> 1 & 1), k * (i >> 2)));
    if let Some(v) = view_corners(&block_corners, ctx.spec, ctx.pyramid) {
        if v.valid_pixels && !v.span.any_no_update && v.span.l_high <= ctx.spec.l_min_iter {
            // The whole block is deep free space over valid pixels, so every
            // cell bounds to l_min_iter and only needs to lie in the view.
            let spec = ctx.spec;
            let inside: Vec<bool> = lattice
                .iter()
                .map(|c| {
                    c.z >= spec.z_np
                        && c.z <= spec.z_fp
                        && spec.in_image(spec.cx + spec.fx * c.x / c.z, spec.cy + spec.fy * c.y / c.z)
                })
                .collect();
            for (i, c) in cells.iter_mut().enumerate() {
                let [x, y, z] = cell_coords(scale, i);
                if (0..8).all(|o| inside[(x + (o & 1)) + m * ((y + (o >> 1 & 1)) + m * (z + (o >> 2)))]) {
                    *c = c.fuse(spec.l_min_iter, &ctx.fusion);
                    n += 1;
                }
            }
            return n;
        }
    }
    for (i, c) in cells.iter_mut().enumerate() {
        let [x, y, z] = cell_coords(scale, i);
        let corners: [Vec3; 8] = std::array::from_fn(|k| {
            lattice[(x + (k & 1)) + m * ((y + ((k >> 1) & 1)) + m * (z + ((k >> 2) & 1)))]
        });
        if let Some(l) = coarse_cell_log_odds(ctx, &corners) {
            *c = c.fuse(l, &ctx.fusion);
            n += 1;
        }
    }
    n
}

fn fully_in_image(ctx: &FrameContext, block_coord: [u32; 3]) -> bool {
    let min = ctx.map_origin
        + Vec3::new(block_coord[0] as f64, block_coord[1] as f64, block_coord[2] as f64) * ctx.v_res;
    Aabb::cube(min, BLOCK_EDGE as f64 * ctx.v_res)
        .corners()
        .iter()
        .all(|c| ctx.spec.project(ctx.pose, c).is_some())
}

/// Fuses one frame into a block and advances its pending scale change.
pub fn integrate_block(
    block: &mut VoxelBlock,
    task: &BlockTask,
    ctx: &FrameContext,
) -> BlockOutcome {
    let mut out = BlockOutcome::default();
    let coord = block.coord;
    match *task {
        BlockTask::Uniform(l) => {
            for c in block.current_cells_mut().iter_mut() {
                *c = c.fuse(l, &ctx.fusion);
            }
            out.cells_fused += cells_at(block.current_scale);
            if let Some(buf) = block.buffer.as_mut() {
                for c in buf.cells.iter_mut() {
                    *c = c.fuse(l, &ctx.fusion);
                }
                out.cells_fused += buf.cells.len();
            }
        }
        BlockTask::PerCell => {
            let s_c = block.current_scale;
            let center = ctx.map_origin
                + (Vec3::new(coord[0] as f64, coord[1] as f64, coord[2] as f64)
                    + Vec3::repeat(BLOCK_EDGE as f64 * 0.5))
                    * ctx.v_res;
            let s_d = select_block_scale(
                &center,
                &ctx.pose.position(),
                Some(s_c),
                is_frontier(block),
                ctx.spec,
                ctx.config,
                ctx.v_res,
            );

            out.cells_fused += fuse_cells(block.current_cells_mut(), ctx, coord, s_c);

            if s_d == s_c {
                if let Some(buf) = block.buffer.take() {
                    out.events.push(ScaleEvent {
                        block_coord: coord,
                        from: s_c,
                        to: buf.scale,
                        kind: ScaleEventKind::BufferDropped,
                    });
                }
                return out;
            }

            match block.buffer.as_mut() {
                Some(buf) if buf.scale == s_d => {
                    out.cells_fused += fuse_cells(&mut buf.cells, ctx, coord, s_d);
                    if fully_in_image(ctx, coord) {
                        buf.observations += 1;
                    }
                    if buf.observations >= ctx.config.n_stable {
                        block.switch_to_buffer();
                        out.events.push(ScaleEvent {
                            block_coord: coord,
                            from: s_c,
                            to: s_d,
                            kind: ScaleEventKind::Switched,
                        });
                    }
                }
                _ => {
                    if let Some(old) = block.buffer.take() {
                        out.events.push(ScaleEvent {
                            block_coord: coord,
                            from: s_c,
                            to: old.scale,
                            kind: ScaleEventKind::BufferDropped,
                        });
                    }
                    // Seeded from the data as fused this frame: parent copies
                    // when going finer, means of observed children when
                    // going coarser.
                    block.buffer = Some(TransitionBuffer {
                        scale: s_d,
                        observations: u32::from(fully_in_image(ctx, coord)),
                        cells: block.derive_scale(s_d),
                    });
                    out.events.push(ScaleEvent {
                        block_coord: coord,
                        from: s_c,
                        to: s_d,
                        kind: ScaleEventKind::BufferStarted,
                    });
                    if block.buffer.as_ref().map_or(0, |b| b.observations) >= ctx.config.n_stable {
                        block.switch_to_buffer();
                        out.events.push(ScaleEvent {
                            block_coord: coord,
                            from: s_c,
                            to: s_d,
                            kind: ScaleEventKind::Switched,
                        });
                    }
                }
            }
        }
    }
    out
}
