//! Two-tier occupancy octree.
//!
//! Upper levels are octree nodes that either hold a single
//! [`OccupancyState`] for their whole volume or have eight children. The
//! lowest tier (nodes of 8^3 finest voxels) may instead hold a
//! [`VoxelBlock`]. Every interior node has all eight children, so each point
//! of the map is answered by exactly one data-bearing cell: a leaf node or a
//! block cell at the block's current integration scale.
//!
//! Interior nodes keep the maximum accumulated log-odds over their data
//! cells and whether any of them is unobserved. Both are refreshed by
//! [`OccupancyOctree::up_propagate_frame`].

mod block;
mod io;
mod state;

pub use block::{
    cell_coords, cell_index, cells_at, cells_per_edge, TransitionBuffer, VoxelBlock, BLOCK_EDGE,
    BLOCK_SCALES,
};
pub use state::{FusionParams, OccupancyState};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

/// Levels of the block tier below the block level (8 = 2^3).
pub const BLOCK_LOG2: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub(crate) u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Handle {
    Node(NodeId),
    Block(BlockId),
}

/// Summary of a subtree used for conservative hierarchical queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeMeta {
    /// Largest accumulated log-odds of any observed data cell below;
    /// `-inf` when nothing below is observed.
    pub max_log_odds: f64,
    pub contains_unknown: bool,
}

impl NodeMeta {
    pub const UNKNOWN: NodeMeta = NodeMeta {
        max_log_odds: f64::NEG_INFINITY,
        contains_unknown: true,
    };

    pub fn of_state(s: &OccupancyState) -> Self {
        if s.observed() {
            NodeMeta {
                max_log_odds: s.accumulated(),
                contains_unknown: false,
            }
        } else {
            NodeMeta::UNKNOWN
        }
    }

    /// Entirely observed and free: safe to skip in queries.
    pub fn is_free(&self) -> bool {
        !self.contains_unknown && self.max_log_odds < 0.0
    }

    fn merge(&mut self, o: &NodeMeta) {
        self.max_log_odds = self.max_log_odds.max(o.max_log_odds);
        self.contains_unknown |= o.contains_unknown;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum NodeData {
    Leaf(OccupancyState),
    /// Index of the first of eight contiguous children.
    Interior(u32),
    Block(u32),
}

const FLAG_DIRTY: u8 = 1;
const FLAG_TOUCHED: u8 = 2;

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) coord: [u32; 3],
    pub(crate) level: u8,
    pub(crate) data: NodeData,
    pub(crate) meta: NodeMeta,
    flags: u8,
}

/// The data-bearing cell answering a point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellInfo {
    pub state: OccupancyState,
    /// Tree level of the node (block level for block cells).
    pub level: u8,
    /// Block mip scale, `None` for node-level data.
    pub scale: Option<u8>,
    /// Cell edge length in meters.
    pub size: f64,
    pub aabb: Aabb,
}

/// Allocation summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapStats {
    pub depth: u8,
    pub nodes: usize,
    /// Node count per level (root first).
    pub nodes_per_level: Vec<usize>,
    /// Leaf-data nodes per level.
    pub leaves_per_level: Vec<usize>,
    /// Blocks per current integration scale.
    pub blocks_per_scale: [usize; BLOCK_SCALES as usize],
    pub blocks: usize,
    /// Leaf states plus every allocated block cell (all scales, buffers).
    pub allocated_cells: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug)]
pub struct OccupancyOctree {
    v_res: f64,
    depth: u8,
    origin: Vec3,
    pub(crate) nodes: Vec<Node>,
    free_groups: Vec<u32>,
    pub(crate) blocks: Vec<Option<VoxelBlock>>,
    free_blocks: Vec<u32>,
}

impl OccupancyOctree {
    /// Map of edge `v_res * 2^depth` with its minimum corner at `origin`.
    pub fn new(v_res: f64, depth: u8, origin: Vec3) -> Result<Self> {
        if !(v_res > 0.0 && v_res.is_finite()) {
            return Err(Error::InvalidInput("v_res must be positive".into()));
        }
        if !(BLOCK_LOG2..=20).contains(&depth) {
            return Err(Error::InvalidInput(format!(
                "depth {depth} outside [{BLOCK_LOG2}, 20]"
            )));
        }
        Ok(OccupancyOctree {
            v_res,
            depth,
            origin,
            nodes: vec![Node {
                coord: [0; 3],
                level: 0,
                data: NodeData::Leaf(OccupancyState::UNKNOWN),
                meta: NodeMeta::UNKNOWN,
                flags: 0,
            }],
            free_groups: Vec::new(),
            blocks: Vec::new(),
            free_blocks: Vec::new(),
        })
    }

    /// Smallest map with edge at least `min_edge` meters.
    pub fn with_extent(v_res: f64, min_edge: f64, origin: Vec3) -> Result<Self> {
        let voxels = (min_edge / v_res).ceil().max(8.0);
        let depth = voxels.log2().ceil() as u8;
        OccupancyOctree::new(v_res, depth.max(BLOCK_LOG2), origin)
    }

    pub fn v_res(&self) -> f64 {
        self.v_res
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn block_level(&self) -> u8 {
        self.depth - BLOCK_LOG2
    }

    /// Voxels per edge of the whole map.
    pub fn voxels_per_edge(&self) -> u32 {
        1 << self.depth
    }

    pub fn edge_length(&self) -> f64 {
        self.v_res * self.voxels_per_edge() as f64
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::cube(self.origin, self.edge_length())
    }

    /// Voxels per edge of a node at `level`.
    pub fn level_voxels(&self, level: u8) -> u32 {
        1 << (self.depth - level)
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// World box of `edge_voxels` voxels starting at voxel `coord`.
    pub fn voxel_box(&self, coord: [u32; 3], edge_voxels: u32) -> Aabb {
        let min = self.origin + Vec3::new(coord[0] as f64, coord[1] as f64, coord[2] as f64) * self.v_res;
        Aabb::cube(min, edge_voxels as f64 * self.v_res)
    }

    pub fn node_aabb(&self, id: NodeId) -> Aabb {
        let n = &self.nodes[id.0 as usize];
        self.voxel_box(n.coord, self.level_voxels(n.level))
    }

    pub fn node_level(&self, id: NodeId) -> u8 {
        self.nodes[id.0 as usize].level
    }

    pub fn node_coord(&self, id: NodeId) -> [u32; 3] {
        self.nodes[id.0 as usize].coord
    }

    pub fn node_meta(&self, id: NodeId) -> NodeMeta {
        self.nodes[id.0 as usize].meta
    }

    /// Node-level state for leaf-data nodes.
    pub fn node_state(&self, id: NodeId) -> Option<OccupancyState> {
        match self.nodes[id.0 as usize].data {
            NodeData::Leaf(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_leaf_data(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0 as usize].data, NodeData::Leaf(_))
    }

    pub fn children(&self, id: NodeId) -> Option<[NodeId; 8]> {
        match self.nodes[id.0 as usize].data {
            NodeData::Interior(first) => Some(std::array::from_fn(|k| NodeId(first + k as u32))),
            _ => None,
        }
    }

    pub fn node_block(&self, id: NodeId) -> Option<BlockId> {
        match self.nodes[id.0 as usize].data {
            NodeData::Block(b) => Some(BlockId(b)),
            _ => None,
        }
    }

    pub fn block(&self, id: BlockId) -> &VoxelBlock {
        self.blocks[id.0 as usize].as_ref().expect("live block")
    }

    #[cfg(test)]
    pub(crate) fn block_mut(&mut self, id: BlockId) -> &mut VoxelBlock {
        self.blocks[id.0 as usize].as_mut().expect("live block")
    }

    /// Ids of all live blocks in ascending block-coordinate order.
    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids: Vec<(BlockId, [u32; 3])> = self
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|b| (BlockId(i as u32), b.coord)))
            .collect();
        ids.sort_by_key(|&(_, c)| [c[2], c[1], c[0]]);
        ids.into_iter().map(|(id, _)| id).collect()
    }

    pub fn block_aabb(&self, id: BlockId) -> Aabb {
        self.voxel_box(self.block(id).coord, BLOCK_EDGE)
    }

    /// Finest-voxel coordinate containing `p`, if inside the map.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[u32; 3]> {
        let n = self.voxels_per_edge() as i64;
        let mut out = [0u32; 3];
        for i in 0..3 {
            let c = ((p[i] - self.origin[i]) / self.v_res).floor();
            if !c.is_finite() || c < 0.0 || c as i64 >= n {
                return None;
            }
            out[i] = c as u32;
        }
        Some(out)
    }

    pub(crate) fn mark(&mut self, id: NodeId) {
        self.nodes[id.0 as usize].flags |= FLAG_DIRTY | FLAG_TOUCHED;
    }

    fn alloc_children(&mut self, parent: &Node, state: OccupancyState) -> u32 {
        let half = self.level_voxels(parent.level) / 2;
        let kids: [Node; 8] = std::array::from_fn(|k| Node {
            coord: [
                parent.coord[0] + if k & 1 != 0 { half } else { 0 },
                parent.coord[1] + if k & 2 != 0 { half } else { 0 },
                parent.coord[2] + if k & 4 != 0 { half } else { 0 },
            ],
            level: parent.level + 1,
            data: NodeData::Leaf(state),
            meta: NodeMeta::of_state(&state),
            flags: FLAG_DIRTY | FLAG_TOUCHED,
        });
        match self.free_groups.pop() {
            Some(first) => {
                for (k, n) in kids.into_iter().enumerate() {
                    self.nodes[first as usize + k] = n;
                }
                first
            }
            None => {
                let first = self.nodes.len() as u32;
                self.nodes.extend(kids);
                first
            }
        }
    }

    pub(crate) fn alloc_block(&mut self, block: VoxelBlock) -> u32 {
        match self.free_blocks.pop() {
            Some(i) => {
                self.blocks[i as usize] = Some(block);
                i
            }
            None => {
                self.blocks.push(Some(block));
                self.blocks.len() as u32 - 1
            }
        }
    }

    /// Splits a leaf-data node above the block level into eight children
    /// that each inherit the parent's state.
    pub fn split_node(&mut self, id: NodeId) -> Result<[NodeId; 8]> {
        let node = self.nodes[id.0 as usize].clone();
        if node.level >= self.block_level() {
            return Err(Error::InvalidOperation(format!(
                "cannot split a node at level {} (block level {})",
                node.level,
                self.block_level()
            )));
        }
        let state = match node.data {
            NodeData::Leaf(s) => s,
            NodeData::Interior(_) => {
                return Err(Error::InvalidOperation("node already has children".into()))
            }
            NodeData::Block(_) => unreachable!("blocks live at block level"),
        };
        let first = self.alloc_children(&node, state);
        let n = &mut self.nodes[id.0 as usize];
        n.data = NodeData::Interior(first);
        n.flags |= FLAG_DIRTY | FLAG_TOUCHED;
        Ok(std::array::from_fn(|k| NodeId(first + k as u32)))
    }

    /// Turns a block-level leaf node into a voxel block integrating at
    /// `scale`; an observed leaf state is copied into every cell. Returns
    /// the existing block when there already is one.
    pub(crate) fn make_block(&mut self, id: NodeId, scale: u8) -> Result<BlockId> {
        let node = &self.nodes[id.0 as usize];
        if node.level != self.block_level() {
            return Err(Error::InvalidOperation(format!(
                "blocks live at level {}, not {}",
                self.block_level(),
                node.level
            )));
        }
        let state = match node.data {
            NodeData::Block(b) => return Ok(BlockId(b)),
            NodeData::Leaf(s) => s,
            NodeData::Interior(_) => unreachable!("block-level nodes have no children"),
        };
        let block = VoxelBlock::filled(node.coord, scale, state);
        let b = self.alloc_block(block);
        let n = &mut self.nodes[id.0 as usize];
        n.data = NodeData::Block(b);
        n.flags |= FLAG_DIRTY | FLAG_TOUCHED;
        Ok(BlockId(b))
    }

    /// Descends toward voxel `coord`, creating nodes on the way, and returns
    /// the node at `level` (or its voxel block at the block level).
    pub fn allocate_path(&mut self, coord: [u32; 3], level: u8) -> Result<Handle> {
        let n = self.voxels_per_edge();
        if coord.iter().any(|&c| c >= n) {
            return Err(Error::OutOfBounds(format!("voxel {coord:?} outside map of {n}^3")));
        }
        if level > self.block_level() {
            return Err(Error::InvalidOperation(format!(
                "level {level} below block level {}",
                self.block_level()
            )));
        }
        let mut id = self.root();
        while self.node_level(id) < level {
            self.mark(id);
            if self.is_leaf_data(id) {
                self.split_node(id)?;
            }
            id = self.child_towards(id, coord);
        }
        self.mark(id);
        if level == self.block_level() {
            return Ok(Handle::Block(self.make_block(id, 0)?));
        }
        Ok(Handle::Node(id))
    }

    /// Child of an interior node containing voxel `coord`.
    pub(crate) fn child_towards(&self, id: NodeId, coord: [u32; 3]) -> NodeId {
        let n = &self.nodes[id.0 as usize];
        let NodeData::Interior(first) = n.data else {
            panic!("child_towards on non-interior node");
        };
        let half = self.level_voxels(n.level) / 2;
        let k = (0..3).fold(0u32, |k, i| {
            k | (((coord[i] - n.coord[i] >= half) as u32) << i)
        });
        NodeId(first + k)
    }

    /// Data-bearing cell containing `p`.
    pub fn lowest_cell_at(&self, p: &Vec3) -> Result<CellInfo> {
        let coord = self
            .voxel_of(p)
            .ok_or_else(|| Error::OutOfBounds(format!("point {:?} outside map", p.as_slice())))?;
        Ok(self.cell_at_voxel(coord))
    }

    /// Data-bearing cell containing finest voxel `coord` (must be in bounds).
    pub fn cell_at_voxel(&self, coord: [u32; 3]) -> CellInfo {
        let mut id = self.root();
        loop {
            let n = &self.nodes[id.0 as usize];
            match n.data {
                NodeData::Interior(_) => id = self.child_towards(id, coord),
                NodeData::Leaf(state) => {
                    let edge = self.level_voxels(n.level);
                    return CellInfo {
                        state,
                        level: n.level,
                        scale: None,
                        size: edge as f64 * self.v_res,
                        aabb: self.voxel_box(n.coord, edge),
                    };
                }
                NodeData::Block(b) => {
                    let block = self.block(BlockId(b));
                    let s = block.current_scale;
                    let local = [0, 1, 2].map(|i| coord[i] - block.coord[i]);
                    let cell_edge = 1u32 << s;
                    let cell_coord = [0, 1, 2].map(|i| block.coord[i] + (local[i] >> s << s));
                    return CellInfo {
                        state: block.cell_at_voxel(s, local),
                        level: n.level,
                        scale: Some(s),
                        size: cell_edge as f64 * self.v_res,
                        aabb: self.voxel_box(cell_coord, cell_edge),
                    };
                }
            }
        }
    }

    /// Refreshes mip levels of modified blocks and the max/unknown summary
    /// of every modified node up to the root.
    pub fn up_propagate_frame(&mut self) {
        self.up_propagate(self.root());
    }

    fn up_propagate(&mut self, id: NodeId) {
        let idx = id.0 as usize;
        if self.nodes[idx].flags & FLAG_DIRTY == 0 {
            return;
        }
        self.nodes[idx].flags &= !FLAG_DIRTY;
        let meta = match self.nodes[idx].data {
            NodeData::Leaf(s) => NodeMeta::of_state(&s),
            NodeData::Block(b) => {
                let block = self.blocks[b as usize].as_mut().expect("live block");
                block.propagate_mips();
                block.meta()
            }
            NodeData::Interior(first) => {
                let mut m = NodeMeta {
                    max_log_odds: f64::NEG_INFINITY,
                    contains_unknown: false,
                };
                for k in 0..8 {
                    self.up_propagate(NodeId(first + k));
                    m.merge(&self.nodes[(first + k) as usize].meta);
                }
                m
            }
        };
        self.nodes[idx].meta = meta;
    }

    /// Collapses deep-free regions touched since the last call: a block
    /// whose cells, or a node whose eight leaf children, are all observed
    /// with accumulated log-odds at most `l_threshold` and means within
    /// `epsilon` of each other becomes one leaf holding their mean state.
    /// Returns the number of collapses.
    pub fn prune(&mut self, l_threshold: f64, epsilon: f64) -> usize {
        self.prune_rec(self.root(), l_threshold, epsilon)
    }

    fn prune_rec(&mut self, id: NodeId, l_threshold: f64, epsilon: f64) -> usize {
        let idx = id.0 as usize;
        if self.nodes[idx].flags & FLAG_TOUCHED == 0 {
            return 0;
        }
        self.nodes[idx].flags &= !FLAG_TOUCHED;
        let mut merged = 0;
        match self.nodes[idx].data.clone() {
            NodeData::Leaf(_) => {}
            NodeData::Block(b) => {
                let block = self.blocks[b as usize].as_ref().expect("live block");
                if let Some(cells) = block.cells(block.current_scale) {
                    if let Some(state) = mergeable(cells, l_threshold, epsilon) {
                        self.blocks[b as usize] = None;
                        self.free_blocks.push(b);
                        self.nodes[idx].data = NodeData::Leaf(state);
                        self.nodes[idx].meta = NodeMeta::of_state(&state);
                        merged += 1;
                    }
                }
            }
            NodeData::Interior(first) => {
                for k in 0..8 {
                    merged += self.prune_rec(NodeId(first + k), l_threshold, epsilon);
                }
                let kids: Option<Vec<OccupancyState>> = (0..8)
                    .map(|k| match self.nodes[(first + k) as usize].data {
                        NodeData::Leaf(s) => Some(s),
                        _ => None,
                    })
                    .collect();
                if let Some(state) = kids.and_then(|k| mergeable(&k, l_threshold, epsilon)) {
                    self.free_groups.push(first);
                    self.nodes[idx].data = NodeData::Leaf(state);
                    self.nodes[idx].meta = NodeMeta::of_state(&state);
                    merged += 1;
                } else {
                    let mut m = NodeMeta {
                        max_log_odds: f64::NEG_INFINITY,
                        contains_unknown: false,
                    };
                    for k in 0..8 {
                        m.merge(&self.nodes[(first + k) as usize].meta);
                    }
                    self.nodes[idx].meta = m;
                }
            }
        }
        merged
    }

    /// Visits every data-bearing cell in pre-order.
    pub fn for_each_data_cell(&self, mut f: impl FnMut(&CellInfo)) {
        self.visit_cells(self.root(), &mut f);
    }

    fn visit_cells(&self, id: NodeId, f: &mut impl FnMut(&CellInfo)) {
        let n = &self.nodes[id.0 as usize];
        match n.data {
            NodeData::Interior(first) => {
                for k in 0..8 {
                    self.visit_cells(NodeId(first + k), f);
                }
            }
            NodeData::Leaf(state) => {
                let edge = self.level_voxels(n.level);
                f(&CellInfo {
                    state,
                    level: n.level,
                    scale: None,
                    size: edge as f64 * self.v_res,
                    aabb: self.voxel_box(n.coord, edge),
                })
            }
            NodeData::Block(b) => self.for_each_block_cell(BlockId(b), f),
        }
    }

    /// Visits the cells of a block at its current scale.
    pub fn for_each_block_cell(&self, id: BlockId, mut f: impl FnMut(&CellInfo)) {
        let block = self.block(id);
        let s = block.current_scale;
        let edge = 1u32 << s;
        for i in 0..cells_at(s) {
            let [x, y, z] = cell_coords(s, i);
            let c = [x, y, z].map(|v| v as u32 * edge);
            f(&CellInfo {
                state: block.cell_at_voxel(s, c),
                level: self.block_level(),
                scale: Some(s),
                size: edge as f64 * self.v_res,
                aabb: self.voxel_box([0, 1, 2].map(|k| block.coord[k] + c[k]), edge),
            });
        }
    }

    /// Block holding finest voxel `coord`, if that region is a block.
    pub fn voxel_block(&self, coord: [u32; 3]) -> Option<BlockId> {
        let mut id = self.root();
        loop {
            match self.nodes[id.0 as usize].data {
                NodeData::Interior(_) => id = self.child_towards(id, coord),
                NodeData::Leaf(_) => return None,
                NodeData::Block(b) => return Some(BlockId(b)),
            }
        }
    }

    /// Live node ids in pre-order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some(kids) = self.children(id) {
                stack.extend(kids.iter().rev());
            }
        }
        out
    }

    pub fn stats(&self) -> MapStats {
        let levels = self.depth as usize - BLOCK_LOG2 as usize + 1;
        let mut st = MapStats {
            depth: self.depth,
            nodes_per_level: vec![0; levels],
            leaves_per_level: vec![0; levels],
            ..Default::default()
        };
        for id in self.node_ids() {
            let n = &self.nodes[id.0 as usize];
            st.nodes += 1;
            st.nodes_per_level[n.level as usize] += 1;
            match n.data {
                NodeData::Leaf(_) => {
                    st.leaves_per_level[n.level as usize] += 1;
                    st.allocated_cells += 1;
                }
                NodeData::Block(b) => {
                    let block = self.block(BlockId(b));
                    st.blocks += 1;
                    st.blocks_per_scale[block.current_scale as usize] += 1;
                    st.allocated_cells += block.allocated_cells();
                }
                NodeData::Interior(_) => {}
            }
        }
        st.bytes = st.nodes * std::mem::size_of::<Node>()
            + st.blocks * std::mem::size_of::<VoxelBlock>()
            + (st.allocated_cells - st.leaves_per_level.iter().sum::<usize>())
                * std::mem::size_of::<OccupancyState>();
        st
    }
}

/// Merged state when `cells` are all deep free and mutually close.
fn mergeable(cells: &[OccupancyState], l_threshold: f64, epsilon: f64) -> Option<OccupancyState> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut w_min = u32::MAX;
    let mut sum = 0.0;
    for c in cells {
        if !c.observed() || c.accumulated() > l_threshold {
            return None;
        }
        lo = lo.min(c.mean_log_odds);
        hi = hi.max(c.mean_log_odds);
        w_min = w_min.min(c.weight);
        sum += c.mean_log_odds;
    }
    (hi - lo <= epsilon).then(|| OccupancyState::new(sum / cells.len() as f64, w_min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> OccupancyOctree {
        OccupancyOctree::new(0.01, 6, Vec3::zeros()).unwrap()
    }

    #[test]
    fn allocate_is_unknown_and_idempotent() {
        let mut m = map();
        let h = m.allocate_path([0, 0, 0], 1).unwrap();
        let Handle::Node(id) = h else { panic!() };
        assert_eq!(m.node_state(id), Some(OccupancyState::UNKNOWN));
        m.up_propagate_frame();
        assert!(m.node_meta(id).contains_unknown);
        let before = m.nodes.len();
        assert_eq!(m.allocate_path([1, 1, 1], 1).unwrap(), h);
        assert_eq!(m.nodes.len(), before);
    }

    #[test]
    fn allocate_block_has_no_arrays() {
        let mut m = map();
        let Handle::Block(b) = m.allocate_path([9, 9, 9], m.block_level()).unwrap() else {
            panic!()
        };
        assert_eq!(m.block(b).allocated_cells(), 0);
        assert_eq!(m.block(b).coord(), [8, 8, 8]);
        assert_eq!(m.stats().allocated_cells, m.stats().leaves_per_level.iter().sum::<usize>());
    }

    #[test]
    fn out_of_bounds_allocation() {
        let mut m = map();
        assert!(matches!(m.allocate_path([64, 0, 0], 1), Err(Error::OutOfBounds(_))));
        assert!(matches!(
            m.lowest_cell_at(&Vec3::new(-0.1, 0.0, 0.0)),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn split_copies_state() {
        let mut m = map();
        m.nodes[0].data = NodeData::Leaf(OccupancyState::new(-5.015, 1));
        let kids = m.split_node(m.root()).unwrap();
        for k in kids {
            assert_eq!(m.node_state(k), Some(OccupancyState::new(-5.015, 1)));
        }
        m.up_propagate_frame();
        assert_eq!(m.node_meta(m.root()).max_log_odds, -5.015);
        assert!(!m.node_meta(m.root()).contains_unknown);
    }

    #[test]
    fn split_below_block_level_fails() {
        let mut m = map();
        let Handle::Block(_) = m.allocate_path([0; 3], m.block_level()).unwrap() else {
            panic!()
        };
        let mut id = m.root();
        while let Some(k) = m.children(id) {
            id = k[0];
        }
        assert!(matches!(m.split_node(id), Err(Error::InvalidOperation(_))));
    }

    #[test]
    fn up_propagation_flags_unknown_cell() {
        let mut m = map();
        let Handle::Block(b) = m.allocate_path([0; 3], m.block_level()).unwrap() else {
            panic!()
        };
        {
            let cells = m.block_mut(b).current_cells_mut();
            for c in cells.iter_mut() {
                *c = OccupancyState::new(-5.0, 20);
            }
        }
        m.up_propagate_frame();
        assert_eq!(m.node_meta(m.root()).max_log_odds, -100.0);
        // Siblings are unknown leaves.
        assert!(m.node_meta(m.root()).contains_unknown);

        let mut m = map();
        m.nodes[0].data = NodeData::Leaf(OccupancyState::new(-5.0, 20));
        m.mark(m.root());
        let Handle::Block(b) = m.allocate_path([0; 3], m.block_level()).unwrap() else {
            panic!()
        };
        m.block_mut(b).current_cells_mut()[3] = OccupancyState::UNKNOWN;
        m.up_propagate_frame();
        let mut id = m.root();
        loop {
            assert!(m.node_meta(id).contains_unknown);
            match m.children(id) {
                Some(k) => id = k[0],
                None => break,
            }
        }
    }

    #[test]
    fn prune_deep_free_children() {
        let mut m = map();
        m.nodes[0].data = NodeData::Leaf(OccupancyState::new(-99.0 / 20.0, 20));
        m.mark(m.root());
        m.split_node(m.root()).unwrap();
        m.up_propagate_frame();
        assert_eq!(m.prune(-95.0, 0.5), 1);
        assert!(m.is_leaf_data(m.root()));

        let mut m = map();
        m.nodes[0].data = NodeData::Leaf(OccupancyState::new(-99.0 / 20.0, 20));
        m.mark(m.root());
        let kids = m.split_node(m.root()).unwrap();
        if let NodeData::Leaf(s) = &mut m.nodes[kids[7].0 as usize].data {
            *s = OccupancyState::new(0.5, 20);
        }
        m.up_propagate_frame();
        assert_eq!(m.prune(-95.0, 0.5), 0);

        assert_eq!(map().prune(-95.0, 0.5), 0);
    }

    #[test]
    fn lowest_cell_reports_level_and_size() {
        let mut m = map();
        let p = Vec3::new(0.005, 0.005, 0.005);
        let c = m.lowest_cell_at(&p).unwrap();
        assert!(!c.state.observed());
        assert_eq!(c.level, 0);
        assert!((c.size - 0.64).abs() < 1e-12);
        m.allocate_path([0; 3], m.block_level()).unwrap();
        let c = m.lowest_cell_at(&p).unwrap();
        assert_eq!((c.level, c.scale), (m.block_level(), Some(0)));
        assert!((c.size - 0.01).abs() < 1e-12);
    }
}
