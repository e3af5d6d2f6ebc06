use super::{NodeMeta, OccupancyState};

/// Number of mip scales in an 8^3 block (8, 4, 2 and 1 cells per edge).
pub const BLOCK_SCALES: u8 = 4;
/// Finest-voxel edge of a block.
pub const BLOCK_EDGE: u32 = 8;

/// Cells per edge at scale `s`.
#[inline]
pub const fn cells_per_edge(scale: u8) -> usize {
    (BLOCK_EDGE as usize) >> scale
}

#[inline]
pub const fn cells_at(scale: u8) -> usize {
    let n = cells_per_edge(scale);
    n * n * n
}

#[inline]
pub fn cell_index(scale: u8, x: usize, y: usize, z: usize) -> usize {
    let n = cells_per_edge(scale);
    x + n * (y + n * z)
}

#[inline]
pub fn cell_coords(scale: u8, idx: usize) -> [usize; 3] {
    let n = cells_per_edge(scale);
    [idx % n, (idx / n) % n, idx / (n * n)]
}

/// Second cell array at a pending integration scale, filled while the block
/// waits to switch scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBuffer {
    pub scale: u8,
    /// Frames in which the block was fully inside the image.
    pub observations: u32,
    pub cells: Vec<OccupancyState>,
}

/// Dense 8^3 brick with mip levels. Only scales at or above the current
/// integration scale carry arrays; scales above it are derived means.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelBlock {
    pub(crate) coord: [u32; 3],
    pub(crate) current_scale: u8,
    pub(crate) min_scale_reached: u8,
    pub(crate) scales: [Option<Vec<OccupancyState>>; BLOCK_SCALES as usize],
    pub(crate) buffer: Option<TransitionBuffer>,
    /// Bit `i` of entry `s - 1` is set when cell `i` of scale `s` (1 or 2)
    /// covers only observed free data cells. Meaningful above the current
    /// scale only.
    pub(crate) free_masks: [u64; 2],
}

impl VoxelBlock {
    /// Empty block (no arrays) integrating at `scale`.
    pub fn new(coord: [u32; 3], scale: u8) -> Self {
        VoxelBlock {
            coord,
            current_scale: scale,
            min_scale_reached: scale,
            scales: Default::default(),
            buffer: None,
            free_masks: [0; 2],
        }
    }

    /// Block whose cells at `scale` all hold `state`.
    pub fn filled(coord: [u32; 3], scale: u8, state: OccupancyState) -> Self {
        let mut b = VoxelBlock::new(coord, scale);
        if state.observed() {
            b.scales[scale as usize] = Some(vec![state; cells_at(scale)]);
            b.propagate_mips();
        }
        b
    }

    /// Finest-voxel coordinate of the block corner.
    pub fn coord(&self) -> [u32; 3] {
        self.coord
    }

    pub fn current_scale(&self) -> u8 {
        self.current_scale
    }

    pub fn min_scale_reached(&self) -> u8 {
        self.min_scale_reached
    }

    pub fn cells(&self, scale: u8) -> Option<&[OccupancyState]> {
        self.scales.get(scale as usize)?.as_deref()
    }

    pub fn transition_buffer(&self) -> Option<&TransitionBuffer> {
        self.buffer.as_ref()
    }

    /// State at scale `scale` of the cell containing block-local voxel
    /// `local`; unknown when that scale is not allocated.
    pub fn cell_at_voxel(&self, scale: u8, local: [u32; 3]) -> OccupancyState {
        match self.cells(scale) {
            Some(c) => {
                let [x, y, z] = local.map(|v| (v >> scale) as usize);
                c[cell_index(scale, x, y, z)]
            }
            None => OccupancyState::UNKNOWN,
        }
    }

    /// Data-bearing array, allocated on demand.
    pub(crate) fn current_cells_mut(&mut self) -> &mut Vec<OccupancyState> {
        let s = self.current_scale;
        self.scales[s as usize].get_or_insert_with(|| vec![OccupancyState::UNKNOWN; cells_at(s)])
    }

    pub fn allocated_cells(&self) -> usize {
        self.scales.iter().flatten().map(Vec::len).sum::<usize>()
            + self.buffer.as_ref().map_or(0, |b| b.cells.len())
    }

    /// Recomputes every scale above the current one as the mean of the
    /// observed children one scale below.
    pub fn propagate_mips(&mut self) {
        let s_c = self.current_scale;
        if self.scales[s_c as usize].is_none() {
            for s in s_c + 1..BLOCK_SCALES {
                self.scales[s as usize] = None;
            }
            self.free_masks = [0; 2];
            return;
        }
        for s in s_c + 1..BLOCK_SCALES {
            let mut parent = self.scales[s as usize].take().unwrap_or_default();
            reduce_into(
                self.scales[s as usize - 1].as_ref().unwrap(),
                s - 1,
                &mut parent,
                |kids| OccupancyState::mean_of(kids),
            );
            self.scales[s as usize] = Some(parent);
        }
        self.update_free_masks();
    }

    /// Recomputes `free_masks` from the data cells.
    pub(crate) fn update_free_masks(&mut self) {
        self.free_masks = [0; 2];
        let s_c = self.current_scale;
        let Some(cells) = self.cells(s_c) else {
            return;
        };
        if s_c >= BLOCK_SCALES - 2 {
            return;
        }
        let first = group_mask(s_c + 1, |i| cells[i].observed() && cells[i].accumulated() < 0.0);
        self.free_masks[s_c as usize] = first;
        if s_c == 0 {
            self.free_masks[1] = group_mask(2, |i| first >> i & 1 == 1);
        }
    }

    /// Whether cell `idx` of `scale` covers only observed free data.
    /// `scale` must not be below the current scale.
    pub fn cell_free(&self, scale: u8, idx: usize) -> bool {
        let s_c = self.current_scale;
        debug_assert!(scale >= s_c);
        if scale == s_c {
            self.cells(s_c)
                .is_some_and(|c| c[idx].observed() && c[idx].accumulated() < 0.0)
        } else if scale < BLOCK_SCALES - 1 {
            self.free_masks[scale as usize - 1] >> idx & 1 == 1
        } else {
            self.meta().is_free()
        }
    }

    /// Max accumulated log-odds and unknown flag over the data-bearing cells.
    pub fn meta(&self) -> NodeMeta {
        match self.cells(self.current_scale) {
            None => NodeMeta::UNKNOWN,
            Some(cells) => {
                let mut m = NodeMeta {
                    max_log_odds: f64::NEG_INFINITY,
                    contains_unknown: false,
                };
                for c in cells {
                    if c.observed() {
                        let a = c.accumulated();
                        if a > m.max_log_odds {
                            m.max_log_odds = a;
                        }
                    } else {
                        m.contains_unknown = true;
                    }
                }
                m
            }
        }
    }

    /// Cell array at `target` derived from the current data: parent copies
    /// for finer targets; for coarser ones a group that is all free becomes
    /// its mean, otherwise its least free member (unknown first), so the
    /// coarse cell never reports free over a voxel that was not.
    pub(crate) fn derive_scale(&self, target: u8) -> Vec<OccupancyState> {
        let s_c = self.current_scale;
        let Some(cur) = self.cells(s_c) else {
            return vec![OccupancyState::UNKNOWN; cells_at(target)];
        };
        if target >= s_c {
            let mut arr = cur.to_vec();
            for s in s_c..target {
                arr = reduce_groups(&arr, s, conservative_merge);
            }
            arr
        } else {
            let n = cells_per_edge(target);
            let shift = s_c - target;
            let mut out = Vec::with_capacity(cells_at(target));
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        out.push(cur[cell_index(s_c, x >> shift, y >> shift, z >> shift)]);
                    }
                }
            }
            out
        }
    }

    /// Replaces the integration scale by the buffered one.
    pub(crate) fn switch_to_buffer(&mut self) {
        let Some(buf) = self.buffer.take() else {
            return;
        };
        let new = buf.scale;
        for s in 0..new {
            self.scales[s as usize] = None;
        }
        self.scales[new as usize] = Some(buf.cells);
        self.current_scale = new;
        self.min_scale_reached = self.min_scale_reached.min(new);
        self.propagate_mips();
    }
}

/// Bit per cell at `scale`, set when all eight children one scale finer
/// satisfy `child`.
fn group_mask(scale: u8, child: impl Fn(usize) -> bool) -> u64 {
    let n = cells_per_edge(scale);
    let nc = 2 * n;
    let offsets = [0, 1, nc, nc + 1, nc * nc, nc * nc + 1, nc * nc + nc, nc * nc + nc + 1];
    let mut mask = 0u64;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let base = 2 * x + nc * (2 * y + nc * 2 * z);
                if offsets.iter().all(|o| child(base + o)) {
                    mask |= 1 << (x + n * (y + n * z));
                }
            }
        }
    }
    mask
}

fn conservative_merge(kids: &[OccupancyState; 8]) -> OccupancyState {
    if let Some(u) = kids.iter().find(|k| !k.observed()) {
        return *u;
    }
    let worst = kids
        .iter()
        .max_by(|a, b| a.accumulated().total_cmp(&b.accumulated()))
        .expect("eight children");
    if worst.accumulated() >= 0.0 {
        *worst
    } else {
        OccupancyState::mean_of(kids)
    }
}

/// One step up: `merge` applied to each 2x2x2 group.
fn reduce_groups(
    child: &[OccupancyState],
    child_scale: u8,
    merge: impl Fn(&[OccupancyState; 8]) -> OccupancyState,
) -> Vec<OccupancyState> {
    let mut out = Vec::new();
    reduce_into(child, child_scale, &mut out, merge);
    out
}

/// Like `reduce_groups`, writing into `out` and reusing its storage.
fn reduce_into(
    child: &[OccupancyState],
    child_scale: u8,
    out: &mut Vec<OccupancyState>,
    merge: impl Fn(&[OccupancyState; 8]) -> OccupancyState,
) {
    let n = cells_per_edge(child_scale + 1);
    let nc = 2 * n;
    let offsets = [0, 1, nc, nc + 1, nc * nc, nc * nc + 1, nc * nc + nc, nc * nc + nc + 1];
    out.clear();
    out.reserve(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let base = 2 * x + nc * (2 * y + nc * 2 * z);
                let kids: [OccupancyState; 8] = offsets.map(|o| child[base + o]);
                out.push(merge(&kids));
            }
        }
    }
}
