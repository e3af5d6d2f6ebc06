//! Binary map format (little-endian).
//!
//! ```text
//! header : "AOM1" u32 version f64 v_res u8 depth f64 origin[3]
//! node   : u8 tag u8 level u32 coord[3] f64 max_log_odds u8 contains_unknown
//!          tag 0 (interior): eight child node records follow
//!          tag 1 (leaf)    : f64 mean i32 weight
//!          tag 2 (block)   : u8 current_scale u8 min_scale_reached
//!                            u8 allocated-scale mask, then per set bit
//!                            (ascending) the cells of that scale
//!                            u8 has_buffer [u8 scale u32 observations cells]
//! cell   : f64 mean i32 weight
//! ```
//! Nodes are written in pre-order starting at the root.

use std::io::{Read, Write};
use std::path::Path;

use super::*;

const MAGIC: &[u8; 4] = b"AOM1";
const VERSION: u32 = 1;

impl OccupancyOctree {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.extend_from_slice(&self.v_res.to_le_bytes());
        w.push(self.depth);
        for i in 0..3 {
            w.extend_from_slice(&self.origin[i].to_le_bytes());
        }
        self.write_node(self.root(), &mut w);
        w
    }

    fn write_node(&self, id: NodeId, w: &mut Vec<u8>) {
        let n = &self.nodes[id.0 as usize];
        let tag = match n.data {
            NodeData::Interior(_) => 0u8,
            NodeData::Leaf(_) => 1,
            NodeData::Block(_) => 2,
        };
        w.push(tag);
        w.push(n.level);
        for c in n.coord {
            w.extend_from_slice(&c.to_le_bytes());
        }
        w.extend_from_slice(&n.meta.max_log_odds.to_le_bytes());
        w.push(n.meta.contains_unknown as u8);
        match n.data {
            NodeData::Interior(first) => {
                for k in 0..8 {
                    self.write_node(NodeId(first + k), w);
                }
            }
            NodeData::Leaf(s) => write_cell(&s, w),
            NodeData::Block(b) => {
                let block = self.block(BlockId(b));
                w.push(block.current_scale);
                w.push(block.min_scale_reached);
                let mask = (0..BLOCK_SCALES)
                    .filter(|&s| block.scales[s as usize].is_some())
                    .fold(0u8, |m, s| m | (1 << s));
                w.push(mask);
                for cells in block.scales.iter().flatten() {
                    cells.iter().for_each(|c| write_cell(c, w));
                }
                match &block.buffer {
                    None => w.push(0),
                    Some(buf) => {
                        w.push(1);
                        w.push(buf.scale);
                        w.extend_from_slice(&buf.observations.to_le_bytes());
                        buf.cells.iter().for_each(|c| write_cell(c, w));
                    }
                }
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let v_res = r.f64()?;
        let depth = r.u8()?;
        let origin = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let mut map = OccupancyOctree::new(v_res, depth, origin)
            .map_err(|e| Error::Format(e.to_string()))?;
        map.nodes.clear();
        map.nodes.push(Node {
            coord: [0; 3],
            level: 0,
            data: NodeData::Leaf(OccupancyState::UNKNOWN),
            meta: NodeMeta::UNKNOWN,
            flags: 0,
        });
        map.read_node(0, &mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(map)
    }

    fn read_node(&mut self, idx: usize, r: &mut Reader) -> Result<()> {
        let tag = r.u8()?;
        let level = r.u8()?;
        let coord = [r.u32()?, r.u32()?, r.u32()?];
        let meta = NodeMeta {
            max_log_odds: r.f64()?,
            contains_unknown: r.u8()? != 0,
        };
        if level > self.block_level() {
            return Err(Error::Format(format!("node level {level} too deep")));
        }
        let data = match tag {
            0 => {
                if level >= self.block_level() {
                    return Err(Error::Format("interior node at block level".into()));
                }
                let first = self.nodes.len() as u32;
                for _ in 0..8 {
                    self.nodes.push(Node {
                        coord: [0; 3],
                        level: level + 1,
                        data: NodeData::Leaf(OccupancyState::UNKNOWN),
                        meta: NodeMeta::UNKNOWN,
                        flags: 0,
                    });
                }
                for k in 0..8 {
                    self.read_node(first as usize + k, r)?;
                }
                NodeData::Interior(first)
            }
            1 => NodeData::Leaf(read_cell(r)?),
            2 => {
                if level != self.block_level() {
                    return Err(Error::Format("block away from block level".into()));
                }
                let current_scale = r.u8()?;
                let min_scale_reached = r.u8()?;
                let mask = r.u8()?;
                if current_scale >= BLOCK_SCALES || mask >> BLOCK_SCALES != 0 {
                    return Err(Error::Format("bad block scale".into()));
                }
                let mut block = VoxelBlock::new(coord, current_scale);
                block.min_scale_reached = min_scale_reached;
                for s in 0..BLOCK_SCALES {
                    if mask & (1 << s) != 0 {
                        block.scales[s as usize] = Some(read_cells(r, cells_at(s))?);
                    }
                }
                if r.u8()? != 0 {
                    let scale = r.u8()?;
                    if scale >= BLOCK_SCALES {
                        return Err(Error::Format("bad buffer scale".into()));
                    }
                    let observations = r.u32()?;
                    block.buffer = Some(TransitionBuffer {
                        scale,
                        observations,
                        cells: read_cells(r, cells_at(scale))?,
                    });
                }
                block.update_free_masks();
                NodeData::Block(self.alloc_block(block))
            }
            t => return Err(Error::Format(format!("unknown node tag {t}"))),
        };
        self.nodes[idx] = Node {
            coord,
            level,
            data,
            meta,
            flags: 0,
        };
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        OccupancyOctree::from_bytes(&bytes)
    }
}

fn write_cell(c: &OccupancyState, w: &mut Vec<u8>) {
    w.extend_from_slice(&c.mean_log_odds.to_le_bytes());
    w.extend_from_slice(&(c.weight as i32).to_le_bytes());
}

fn read_cell(r: &mut Reader) -> Result<OccupancyState> {
    let mean = r.f64()?;
    let weight = r.i32()?;
    if weight < 0 {
        return Err(Error::Format("negative weight".into()));
    }
    Ok(OccupancyState::new(mean, weight as u32))
}

fn read_cells(r: &mut Reader, n: usize) -> Result<Vec<OccupancyState>> {
    (0..n).map(|_| read_cell(r)).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Format("truncated map file".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = OccupancyOctree::new(0.02, 6, Vec3::new(-0.5, 0.25, 1.0)).unwrap();
        let Handle::Block(b) = m.allocate_path([17, 3, 40], m.block_level()).unwrap() else {
            panic!()
        };
        for (i, c) in m.block_mut(b).current_cells_mut().iter_mut().enumerate() {
            *c = OccupancyState::new(-(i as f64) * 0.01, (i % 20) as u32);
        }
        let derived = m.block(b).derive_scale(1);
        m.block_mut(b).buffer = Some(TransitionBuffer {
            scale: 1,
            observations: 2,
            cells: derived,
        });
        m.up_propagate_frame();
        let bytes = m.to_bytes();
        let back = OccupancyOctree::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"AOM1");
    }

    #[test]
    fn rejects_garbage() {
        assert!(OccupancyOctree::from_bytes(b"NOPE").is_err());
        let m = OccupancyOctree::new(0.02, 5, Vec3::zeros()).unwrap();
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(OccupancyOctree::from_bytes(&bytes).is_err());
    }
}
