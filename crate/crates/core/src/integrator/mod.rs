//! Map-to-camera integration of depth frames.
//!
//! Each frame runs in phases: the pooling pyramid is built, the tree is
//! walked from the root deciding per node whether the inverse sensor model
//! varies by less than `epsilon` inside it (update the node as a whole),
//! needs finer resolution (split), or receives no measurement (skip). Nodes
//! that still need detail at the block level become voxel blocks, fused cell
//! by cell in parallel. Finally summaries are propagated up and deep-free
//! regions are pruned.

mod block;
mod stats;

pub use block::{
    integrate_block, select_block_scale, BlockOutcome, BlockTask, ScaleEvent, ScaleEventKind,
};
pub use stats::{IntegrationStats, NodeUpdate};

use std::time::Instant;

use rayon::prelude::*;

use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Pose, Vec3};
use crate::map::{FusionParams, NodeId, OccupancyOctree, OccupancyState};
use crate::pooling::PoolingPyramid;
use crate::sensor::{ModelSpan, PixelModel, SensorSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct IntegrationConfig {
    /// Largest tolerated log-odds variation inside a node updated as one.
    pub epsilon: f64,
    /// Finest integration scale for blocks holding only free and unknown.
    pub s_f: u8,
    pub w_max: u32,
    /// Fraction of the camera footprint `focal * v_res` the camera must move
    /// past a scale boundary before a block changes scale.
    pub hysteresis: f64,
    /// Full in-image observations required before a scale switch.
    pub n_stable: u32,
    pub f_max: u32,
    /// Pruning threshold as a fraction of `l_min_total`.
    pub prune_fraction: f64,
    /// Halve input images (2x2 nearest-depth reduction) before integration.
    pub downsample: bool,
    /// Keep a record of every node-level update in the frame stats.
    pub record_updates: bool,
}

impl IntegrationConfig {
    /// Defaults for a sensor and map resolution: `f_max` 5 up to QVGA width
    /// and 6 above, `s_f = 1` at 2 cm or finer and 0 otherwise,
    /// `w_max = round(l_min_total / l_min_iter)`, `epsilon = -0.1 l_min_iter`.
    pub fn defaults_for(spec: &SensorSpec, v_res: f64) -> Self {
        IntegrationConfig {
            epsilon: -0.1 * spec.l_min_iter,
            s_f: if v_res <= 0.02 + 1e-9 { 1 } else { 0 },
            w_max: FusionParams::from_bounds(spec.l_min_iter, spec.l_min_total).w_max,
            hysteresis: 0.25,
            n_stable: 3,
            f_max: if spec.width <= 320 { 5 } else { 6 },
            prune_fraction: 0.95,
            downsample: false,
            record_updates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.s_f > 3 {
            return Err(Error::Config("s_f must be in [0, 3]".into()));
        }
        if self.w_max == 0 || self.f_max == 0 || self.n_stable == 0 {
            return Err(Error::Config("w_max, f_max and n_stable must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub depth: DepthImage,
    pub pose: Pose,
    pub timestamp: f64,
}

/// Outcome of the split test for one node volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    /// Fuse this log-odds value into the whole volume.
    Update(f64),
    Split,
    Skip,
}

/// Everything a frame needs that does not change while integrating it.
pub struct FrameContext<'a> {
    pub spec: &'a SensorSpec,
    pub config: &'a IntegrationConfig,
    pub pose: &'a Pose,
    pub depth: &'a DepthImage,
    pub pyramid: &'a PoolingPyramid,
    /// Row-major per-pixel sensor models of `depth`.
    pub pixels: &'a [PixelModel],
    pub fusion: FusionParams,
    pub map_origin: Vec3,
    pub v_res: f64,
}

/// Splits `a..b` edges of the box at the near plane; returns the camera-
/// frame vertices of the part with `z >= z_np`.
fn clip_near(corners: &[Vec3; 8], z_np: f64) -> ([Vec3; 20], usize) {
    let mut out = [Vec3::zeros(); 20];
    let mut n = 0;
    for c in corners.iter().filter(|c| c.z >= z_np) {
        out[n] = *c;
        n += 1;
    }
    if n == 8 || n == 0 {
        return (out, n);
    }
    for a in 0..8usize {
        for axis in 0..3 {
            let b = a | (1 << axis);
            if b == a {
                continue;
            }
            let (pa, pb) = (corners[a], corners[b]);
            if (pa.z < z_np) != (pb.z < z_np) {
                let t = (z_np - pa.z) / (pb.z - pa.z);
                let mut p = pa + (pb - pa) * t;
                p.z = z_np;
                out[n] = p;
                n += 1;
            }
        }
    }
    (out, n)
}

/// What one frame says about a box that is at least partly in view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BoxView {
    pub span: ModelSpan,
    /// Entirely in front of the near plane, inside the image and over
    /// valid depth only.
    pub clean: bool,
    /// No invalid depth among the pooled pixels.
    pub valid_pixels: bool,
    /// Model value at the centre depth, clamped into the span.
    pub l_center: f64,
}

/// Projects a box and bounds the inverse sensor model over it; `None` when
/// the frame says nothing about the box.
pub(crate) fn view_box(aabb: &Aabb, pose: &Pose, spec: &SensorSpec, pyramid: &PoolingPyramid) -> Option<BoxView> {
    let rt = pose.rotation.transpose();
    let origin = pose.inverse_transform_point(&aabb.min);
    let size = aabb.max - aabb.min;
    let axes = [rt.column(0) * size.x, rt.column(1) * size.y, rt.column(2) * size.z];
    let corners: [Vec3; 8] = std::array::from_fn(|k| {
        let mut c = origin;
        for (bit, a) in axes.iter().enumerate() {
            if k & (1 << bit) != 0 {
                c += a;
            }
        }
        c
    });
    view_corners(&corners, spec, pyramid)
}

/// `view_box` for a box given by its camera-frame corners, indexed as in
/// `Aabb::corners`.
pub(crate) fn view_corners(corners: &[Vec3; 8], spec: &SensorSpec, pyramid: &PoolingPyramid) -> Option<BoxView> {
    // Whole box on the far side of one frustum plane.
    let (w, h) = (spec.width as f64, spec.height as f64);
    let outside = |f: &dyn Fn(&Vec3) -> bool| corners.iter().all(f);
    if outside(&|c| c.z < spec.z_np)
        || outside(&|c| c.z > spec.z_fp)
        || outside(&|c| spec.fx * c.x + (spec.cx + 0.5) * c.z < 0.0)
        || outside(&|c| spec.fx * c.x + (spec.cx - w + 0.5) * c.z >= 0.0)
        || outside(&|c| spec.fy * c.y + (spec.cy + 0.5) * c.z < 0.0)
        || outside(&|c| spec.fy * c.y + (spec.cy - h + 0.5) * c.z >= 0.0)
    {
        return None;
    }

    let in_front = corners.iter().all(|c| c.z >= spec.z_np);
    let clipped;
    let visible: &[Vec3] = if in_front {
        corners
    } else {
        clipped = clip_near(corners, spec.z_np);
        &clipped.0[..clipped.1]
    };
    if visible.is_empty() {
        return None;
    }
    let mut crosses = !in_front;
    let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let (mut r_min, mut r_max) = (f64::MAX, f64::MIN);
    for c in visible {
        let u = spec.cx + spec.fx * c.x / c.z;
        let v = spec.cy + spec.fy * c.y / c.z;
        crosses |= c.z > spec.z_fp || !spec.in_image(u, v);
        u0 = u0.min(u);
        u1 = u1.max(u);
        v0 = v0.min(v);
        v1 = v1.max(v);
        r_min = r_min.min(c.z);
        r_max = r_max.max(c.z);
    }
    let r_max = r_max.min(spec.z_fp);
    if r_min > r_max {
        return None;
    }
    let pix = |x: f64| {
        let t = (x + 0.5).clamp(-1e9, 1e9);
        let i = t as i64;
        i - i64::from((i as f64) > t)
    };
    let q = pyramid.query_box(pix(u0), pix(v0), pix(u1), pix(v1))?;
    let rec = q.record;
    if !rec.has_valid() {
        return None;
    }
    let span = spec.model_span(r_min, r_max, rec.z_min, rec.z_max);
    if span.fully_behind {
        return None;
    }
    let r_c = (0.5 * (corners[0].z + corners[7].z)).clamp(r_min, r_max);
    let z_mid = 0.5 * (rec.z_min + rec.z_max);
    let l = spec
        .inverse_model(r_c - z_mid, z_mid)
        .unwrap_or(span.l_low)
        .clamp(span.l_low, span.l_high);
    Some(BoxView {
        span,
        clean: !(crosses || rec.contains_invalid || rec.touches_boundary),
        valid_pixels: !rec.contains_invalid,
        l_center: l,
    })
}

impl BoxView {
    /// The whole box can take one value without exceeding `epsilon`.
    pub fn uniform(&self, epsilon: f64) -> bool {
        self.clean && !self.span.any_no_update && self.span.l_high - self.span.l_low < epsilon
    }
}

/// Decides how a node volume is treated for the current frame.
pub fn classify_node(
    aabb: &Aabb,
    pose: &Pose,
    spec: &SensorSpec,
    pyramid: &PoolingPyramid,
    epsilon: f64,
) -> Decision {
    match view_box(aabb, pose, spec, pyramid) {
        None => Decision::Skip,
        Some(v) if v.uniform(epsilon) => Decision::Update(v.l_center),
        Some(_) => Decision::Split,
    }
}

/// Fuses one frame into the map.
pub fn integrate_frame(
    map: &mut OccupancyOctree,
    frame: &FrameInput,
    spec: &SensorSpec,
    config: &IntegrationConfig,
) -> Result<IntegrationStats> {
    config.validate()?;
    if frame.depth.width != spec.width || frame.depth.height != spec.height {
        return Err(Error::DimensionMismatch {
            expected_w: spec.width,
            expected_h: spec.height,
            got_w: frame.depth.width,
            got_h: frame.depth.height,
        });
    }
    frame.pose.validate()?;

    let (depth, spec) = if config.downsample {
        (frame.depth.downsample_min(), spec.halved())
    } else {
        (frame.depth.clone(), spec.clone())
    };

    let mut stats = IntegrationStats::default();
    let t0 = Instant::now();
    let pyramid = PoolingPyramid::build(&depth, config.f_max, spec.z_np, spec.z_fp)?;
    let pixels: Vec<PixelModel> = depth.data.iter().map(|&z| spec.pixel_model(z)).collect();
    stats.ms_pooling = t0.elapsed().as_secs_f64() * 1e3;

    let ctx = FrameContext {
        spec: &spec,
        config,
        pose: &frame.pose,
        depth: &depth,
        pyramid: &pyramid,
        pixels: &pixels,
        fusion: FusionParams {
            w_max: config.w_max,
            l_min_total: spec.l_min_total,
        },
        map_origin: map.origin(),
        v_res: map.v_res(),
    };

    let t1 = Instant::now();
    let mut walk = Walk {
        ctx: &ctx,
        stats: &mut stats,
        tasks: Vec::new(),
    };
    walk.visit(map, map.root())?;
    let mut tasks = std::mem::take(&mut walk.tasks);
    stats.ms_allocation = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    tasks.sort_by_key(|(b, _)| *b);
    let mut per_block: Vec<Option<BlockTask>> = vec![None; map.blocks.len()];
    for (b, t) in &tasks {
        per_block[b.0 as usize] = Some(*t);
    }
    let outcomes: Vec<BlockOutcome> = map
        .blocks
        .par_iter_mut()
        .zip(per_block.par_iter())
        .filter_map(|(slot, task)| {
            let task = task.as_ref()?;
            let b = slot.as_mut()?;
            Some(integrate_block(b, task, &ctx))
        })
        .collect();
    stats.blocks_touched = outcomes.len();
    for o in outcomes {
        stats.cells_fused += o.cells_fused;
        stats.scale_events.extend(o.events);
    }
    stats
        .scale_events
        .sort_by_key(|e| [e.block_coord[2], e.block_coord[1], e.block_coord[0]]);
    stats.ms_fusion = t2.elapsed().as_secs_f64() * 1e3;

    let t3 = Instant::now();
    map.up_propagate_frame();
    stats.nodes_pruned = map.prune(config.prune_fraction * spec.l_min_total, config.epsilon);
    let ms = map.stats();
    stats.bytes = ms.bytes;
    stats.blocks = ms.blocks;
    stats.ms_propagation = t3.elapsed().as_secs_f64() * 1e3;
    Ok(stats)
}

/// Convenience wrapper numbering frames and carrying parameters.
#[derive(Clone, Debug)]
pub struct Integrator {
    pub spec: SensorSpec,
    pub config: IntegrationConfig,
    frames: usize,
}

impl Integrator {
    pub fn new(spec: SensorSpec, config: IntegrationConfig) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        Ok(Integrator {
            spec,
            config,
            frames: 0,
        })
    }

    pub fn integrate(&mut self, map: &mut OccupancyOctree, frame: &FrameInput) -> Result<IntegrationStats> {
        let mut s = integrate_frame(map, frame, &self.spec, &self.config)?;
        s.frame = self.frames;
        self.frames += 1;
        Ok(s)
    }
}

struct Walk<'a, 'b> {
    ctx: &'a FrameContext<'a>,
    stats: &'b mut IntegrationStats,
    tasks: Vec<(crate::map::BlockId, BlockTask)>,
}

impl Walk<'_, '_> {
    fn visit(&mut self, map: &mut OccupancyOctree, id: NodeId) -> Result<bool> {
        let aabb = map.node_aabb(id);
        let level = map.node_level(id);
        let ctx = self.ctx;
        match classify_node(&aabb, ctx.pose, ctx.spec, ctx.pyramid, ctx.config.epsilon) {
            Decision::Skip => {
                self.stats.nodes_skipped += 1;
                Ok(false)
            }
            Decision::Update(l) => {
                self.stats.nodes_updated += 1;
                if ctx.config.record_updates {
                    self.stats.node_updates.push(NodeUpdate {
                        level,
                        coord: map.node_coord(id),
                        aabb,
                        log_odds: l,
                    });
                }
                self.apply_uniform(map, id, l);
                Ok(true)
            }
            Decision::Split if level < map.block_level() => {
                if map.is_leaf_data(id) {
                    map.split_node(id)?;
                    self.stats.nodes_split += 1;
                }
                let kids = map.children(id).expect("split node has children");
                let mut modified = false;
                for k in kids {
                    modified |= self.visit(map, k)?;
                }
                if modified {
                    map.mark(id);
                }
                Ok(modified)
            }
            Decision::Split => {
                let b = match map.node_block(id) {
                    Some(b) => b,
                    None => {
                        let center = aabb.center();
                        // Split although the frame sees only free space in
                        // it: the block straddles the frustum or invalid
                        // pixels and will hold free and unknown cells.
                        let frontier = view_box(&aabb, ctx.pose, ctx.spec, ctx.pyramid)
                            .is_some_and(|v| !v.span.any_no_update && v.span.l_high <= ctx.spec.l_min_iter);
                        let scale = select_block_scale(
                            &center,
                            &ctx.pose.position(),
                            None,
                            frontier,
                            ctx.spec,
                            ctx.config,
                            ctx.v_res,
                        );
                        self.stats.blocks_allocated += 1;
                        map.make_block(id, scale)?
                    }
                };
                map.mark(id);
                self.tasks.push((b, BlockTask::PerCell));
                Ok(true)
            }
        }
    }

    fn apply_uniform(&mut self, map: &mut OccupancyOctree, id: NodeId, l: f64) {
        map.mark(id);
        if let Some(kids) = map.children(id) {
            for k in kids {
                self.apply_uniform(map, k, l);
            }
        } else if let Some(b) = map.node_block(id) {
            self.tasks.push((b, BlockTask::Uniform(l)));
        } else if let Some(s) = map.node_state(id) {
            map.set_node_state(id, s.fuse(l, &self.ctx.fusion));
            self.stats.cells_fused += 1;
        }
    }
}

impl OccupancyOctree {
    pub(crate) fn set_node_state(&mut self, id: NodeId, s: OccupancyState) {
        if let crate::map::NodeData::Leaf(st) = &mut self.nodes[id.0 as usize].data {
            *st = s;
        }
    }
}
