//! Iso-surface extraction at log-odds 0.
//!
//! Every block is polygonised on the lattice of its own cell centres at its
//! current scale. Cubes are split into six tetrahedra around the main
//! diagonal, so each cube is handled without lookup tables and shared faces
//! between cubes of the same scale produce identical edges. Corner values
//! come from [`interpolate_occupancy`]; a cube with an unknown corner emits
//! nothing. Blocks of different scales may leave cracks between them.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::map::{cells_per_edge, OccupancyOctree};
use crate::query::interpolate_occupancy;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    /// Integration scale of the block each vertex came from.
    pub scales: Vec<u8>,
    pub triangles: Vec<[u32; 3]>,
}

/// Display colour for a scale.
pub fn scale_color(scale: u8) -> [u8; 3] {
    match scale {
        0 => [0, 200, 0],
        1 => [255, 140, 0],
        2 => [0, 90, 255],
        _ => [220, 0, 0],
    }
}

const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

/// Lattice points are stored in half-voxel units so cell centres of every
/// scale have integer keys.
type Key = [i64; 3];

struct BlockMesh {
    /// Triangles as three (edge, position, scale) vertices.
    tris: Vec<[((Key, Key), Vec3); 3]>,
    scale: u8,
}

pub fn extract_mesh(map: &OccupancyOctree) -> Mesh {
    let parts: Vec<BlockMesh> = map
        .block_ids()
        .par_iter()
        .map(|&b| mesh_block(map, map.block(b).coord(), map.block(b).current_scale()))
        .collect();

    let mut mesh = Mesh::default();
    let mut index: HashMap<(Key, Key), u32> = HashMap::new();
    for part in parts {
        for tri in part.tris {
            let ids = tri.map(|(edge, p)| {
                *index.entry(edge).or_insert_with(|| {
                    mesh.vertices.push(p);
                    mesh.scales.push(part.scale);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                mesh.triangles.push(ids);
            }
        }
    }
    mesh
}

fn mesh_block(map: &OccupancyOctree, coord: [u32; 3], scale: u8) -> BlockMesh {
    let v = map.v_res();
    let edge = 1i64 << scale;
    let n = cells_per_edge(scale) as i64;
    let key_of = |c: [i64; 3]| c.map(|x| 2 * x * edge + edge);
    let pos_of = |k: Key| map.origin() + Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64) * (0.5 * v);

    // Corner values on an (n + 1)^3 lattice that reaches one cell into the
    // neighbouring blocks.
    let m = (n + 1) as usize;
    let mut values = vec![None; m * m * m];
    let base = coord.map(|c| c as i64 / edge);
    for z in 0..m {
        for y in 0..m {
            for x in 0..m {
                let c = [base[0] + x as i64, base[1] + y as i64, base[2] + z as i64];
                values[x + m * (y + m * z)] = interpolate_occupancy(map, &pos_of(key_of(c)));
            }
        }
    }

    let mut tris = Vec::new();
    for z in 0..n as usize {
        for y in 0..n as usize {
            for x in 0..n as usize {
                let mut corner_val = [0.0; 8];
                let mut corner_key = [[0i64; 3]; 8];
                let mut known = true;
                for k in 0..8 {
                    let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
                    match values[(x + dx) + m * ((y + dy) + m * (z + dz))] {
                        Some(l) => corner_val[k] = l,
                        None => known = false,
                    }
                    corner_key[k] = key_of([
                        base[0] + (x + dx) as i64,
                        base[1] + (y + dy) as i64,
                        base[2] + (z + dz) as i64,
                    ]);
                }
                if !known {
                    continue;
                }
                for tet in TETS {
                    polygonise_tet(tet, &corner_val, &corner_key, &pos_of, &mut tris);
                }
            }
        }
    }
    BlockMesh { tris, scale }
}

fn polygonise_tet(
    tet: [usize; 4],
    val: &[f64; 8],
    key: &[Key; 8],
    pos_of: &impl Fn(Key) -> Vec3,
    out: &mut Vec<[((Key, Key), Vec3); 3]>,
) {
    let inside: Vec<usize> = tet.iter().copied().filter(|&c| val[c] > 0.0).collect();
    let outside: Vec<usize> = tet.iter().copied().filter(|&c| val[c] <= 0.0).collect();
    if inside.is_empty() || outside.is_empty() {
        return;
    }
    let vertex = |a: usize, b: usize| {
        let (a, b) = if key[a] <= key[b] { (a, b) } else { (b, a) };
        let t = val[a] / (val[a] - val[b]);
        let p = pos_of(key[a]) + (pos_of(key[b]) - pos_of(key[a])) * t;
        ((key[a], key[b]), p)
    };
    let centroid = |cs: &[usize]| cs.iter().map(|&c| pos_of(key[c])).sum::<Vec3>() / cs.len() as f64;
    // Normals point from occupied toward free space.
    let outward = centroid(&outside) - centroid(&inside);
    let mut emit = |tri: [((Key, Key), Vec3); 3]| {
        let n = (tri[1].1 - tri[0].1).cross(&(tri[2].1 - tri[0].1));
        if n.dot(&outward) < 0.0 {
            out.push([tri[0], tri[2], tri[1]]);
        } else {
            out.push(tri);
        }
    };
    match (inside.len(), outside.len()) {
        (1, 3) => emit([
            vertex(inside[0], outside[0]),
            vertex(inside[0], outside[1]),
            vertex(inside[0], outside[2]),
        ]),
        (3, 1) => emit([
            vertex(outside[0], inside[0]),
            vertex(outside[0], inside[1]),
            vertex(outside[0], inside[2]),
        ]),
        _ => {
            let (a, b) = (inside[0], inside[1]);
            let (c, d) = (outside[0], outside[1]);
            let (ac, ad, bc, bd) = (vertex(a, c), vertex(a, d), vertex(b, c), vertex(b, d));
            emit([ac, ad, bd]);
            emit([ac, bd, bc]);
        }
    }
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_ply_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Binary little-endian PLY with per-vertex colour and scale.
    pub fn write_ply_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             property uchar scale\nelement face {}\n\
             property list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        for (p, &s) in self.vertices.iter().zip(&self.scales) {
            for i in 0..3 {
                w.write_all(&(p[i] as f32).to_le_bytes())?;
            }
            w.write_all(&scale_color(s))?;
            w.write_all(&[s])?;
        }
        for t in &self.triangles {
            w.write_all(&[3u8])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_obj_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// OBJ with the common `v x y z r g b` colour extension.
    pub fn write_obj_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (p, &s) in self.vertices.iter().zip(&self.scales) {
            let [r, g, b] = scale_color(s).map(|c| c as f64 / 255.0);
            writeln!(w, "v {} {} {} {:.4} {:.4} {:.4}", p.x, p.y, p.z, r, g, b)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{cell_coords, Handle, OccupancyState};

    /// Block filled with a linear field crossing zero at x = 1.23.
    fn ramp_map() -> OccupancyOctree {
        let mut m = OccupancyOctree::new(0.1, 5, Vec3::zeros()).unwrap();
        for bx in [8u32, 16] {
            let Handle::Block(b) = m.allocate_path([bx, 8, 8], m.block_level()).unwrap() else {
                panic!()
            };
            for (i, c) in m.block_mut(b).current_cells_mut().iter_mut().enumerate() {
                let x = (bx as f64 + cell_coords(0, i)[0] as f64 + 0.5) * 0.1;
                *c = OccupancyState::new(10.0 * (x - 1.23), 1);
            }
        }
        m.up_propagate_frame();
        m
    }

    #[test]
    fn empty_map_gives_empty_mesh() {
        let m = OccupancyOctree::new(0.1, 5, Vec3::zeros()).unwrap();
        assert!(extract_mesh(&m).is_empty());
    }

    #[test]
    fn linear_field_gives_plane() {
        let mesh = extract_mesh(&ramp_map());
        assert!(!mesh.is_empty());
        for p in &mesh.vertices {
            assert!((p.x - 1.23).abs() < 1e-9, "{p:?}");
        }
        assert!(mesh.scales.iter().all(|&s| s == 0));
        // Normals face the free side (-x).
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            assert!((b - a).cross(&(c - a)).x < 0.0);
        }
    }

    #[test]
    fn interior_edges_are_shared() {
        let mesh = extract_mesh(&ramp_map());
        let mut uses: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(uses.values().all(|&n| n <= 2));
        assert!(uses.values().filter(|&&n| n == 2).count() > uses.len() / 2);
    }

    #[test]
    fn writers_produce_expected_counts() {
        let mesh = extract_mesh(&ramp_map());
        let mut ply = Vec::new();
        mesh.write_ply_to(&mut ply).unwrap();
        let header_end = ply.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(
            ply.len() - header_end,
            mesh.vertices.len() * 16 + mesh.triangles.len() * 13
        );
        let mut obj = Vec::new();
        mesh.write_obj_to(&mut obj).unwrap();
        let text = String::from_utf8(obj).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), mesh.vertices.len());
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), mesh.triangles.len());
    }
}
