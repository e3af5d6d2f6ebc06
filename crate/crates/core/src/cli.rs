//! Command-line front end. `run` is separate from the binary so it can be
//! driven with in-memory streams.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::config::{Config, Settings};
use crate::dataset::{SyntheticScene, TumSequence};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::integrator::{FrameInput, IntegrationStats, Integrator};
use crate::map::OccupancyOctree;
use crate::meshing::extract_mesh;
use crate::query::{check_segment, raycast, CorridorSegment, HitKind, Occupancy};

#[derive(Debug, Parser)]
#[command(name = "aomap", version, about = "Adaptive-resolution occupancy mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a TUM directory or a synthetic scene file into a map.
    Integrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-frame statistics as CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Image scale factor (1 or 0.5).
        #[arg(long)]
        downsample: Option<f64>,
    },
    /// Colour-coded occupancy slice as PNG.
    Slice {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
        #[arg(long)]
        coord: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the surface mesh (PLY or OBJ by extension).
    Mesh {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raycast a depth image from a camera pose.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// tx ty tz qx qy qz qw
        #[arg(long, num_args = 7, allow_negative_numbers = true)]
        pose: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional normal image (RGB PNG).
        #[arg(long)]
        normals: Option<PathBuf>,
    },
    /// Corridor checks: JSON lines on stdin, verdicts on stdout.
    Check {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        unknown_unsafe: bool,
    },
    /// Allocation summary as JSON.
    Stats {
        #[arg(long)]
        map: PathBuf,
    },
}

/// Parses `args` (program name first) and executes the command.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return write!(stdout, "{e}").map_err(|e| Error::io("stdout", e));
            }
            return Err(Error::InvalidInput(first_line(&e.to_string())));
        }
    };
    match cli.command {
        Command::Integrate {
            config,
            input,
            output,
            stats,
            downsample,
        } => integrate(config.as_deref(), &input, &output, stats.as_deref(), downsample, stdout),
        Command::Slice { map, axis, coord, out } => {
            slice(&OccupancyOctree::load(map)?, axis, coord).and_then(|img| save_rgb(&img, &out))
        }
        Command::Mesh { map, out } => {
            let mesh = extract_mesh(&OccupancyOctree::load(map)?);
            match out.extension().and_then(|e| e.to_str()) {
                Some("obj") => mesh.write_obj(&out),
                _ => mesh.write_ply(&out),
            }?;
            writeln!(stdout, "{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len())
                .map_err(|e| Error::io("stdout", e))
        }
        Command::Render {
            map,
            pose,
            config,
            out,
            normals,
        } => render(&map, &pose, config.as_deref(), &out, normals.as_deref()),
        Command::Check { map, unknown_unsafe } => {
            check(&OccupancyOctree::load(map)?, unknown_unsafe, stdin, stdout)
        }
        Command::Stats { map } => {
            let m = OccupancyOctree::load(map)?;
            let json = stats_json(&m);
            writeln!(stdout, "{json}").map_err(|e| Error::io("stdout", e))
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").trim_start_matches("error: ").to_string()
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

enum Source {
    Tum(TumSequence),
    Scene(SyntheticScene),
}

fn integrate(
    config: Option<&Path>,
    input: &Path,
    output: &Path,
    stats_path: Option<&Path>,
    downsample: Option<f64>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if downsample.is_some() {
        cfg.downsample = downsample;
    }
    let (source, settings): (Source, Settings) = if input.is_dir() {
        let s = cfg.resolve(None)?;
        (Source::Tum(TumSequence::open(input, s.association_tolerance)?), s)
    } else {
        let scene = SyntheticScene::load(input)?;
        let s = cfg.resolve(scene.intrinsics)?;
        (Source::Scene(scene), s)
    };
    let mut map = OccupancyOctree::with_extent(settings.v_res, settings.map_size, settings.map_origin)?;
    let mut integrator = Integrator::new(settings.spec.clone(), settings.integration.clone())?;
    let mut rows = vec![IntegrationStats::CSV_HEADER.to_string()];
    let n = match &source {
        Source::Tum(t) => t.len(),
        Source::Scene(s) => s.frames,
    };
    for i in 0..n {
        let frame: FrameInput = match &source {
            Source::Tum(t) => t.load(i)?,
            Source::Scene(s) => s.render(&settings.spec, i),
        };
        let st = integrator.integrate(&mut map, &frame)?;
        rows.push(st.csv_row());
    }
    map.save(output)?;
    if let Some(p) = stats_path {
        std::fs::write(p, rows.join("\n") + "\n").map_err(|e| Error::io(p, e))?;
    }
    let ms = map.stats();
    writeln!(stdout, "integrated {n} frames: {} blocks, {} bytes", ms.blocks, ms.bytes)
        .map_err(|e| Error::io("stdout", e))
}

/// RGB raster of one axis-aligned slice at finest resolution.
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

pub const SLICE_UNKNOWN: [u8; 3] = [128, 128, 128];
pub const SLICE_OCCUPIED: [u8; 3] = [220, 30, 30];
pub const SLICE_BORDER: [u8; 3] = [40, 40, 40];

/// Free cells are blue, darker for more negative log-odds.
pub fn slice_free_color(l: f64, l_min_total: f64) -> [u8; 3] {
    let f = (l / l_min_total).clamp(0.0, 1.0);
    let c = (200.0 * (1.0 - f)) as u8;
    [c, c, 255]
}

/// Slice through the map perpendicular to `axis` at world coordinate
/// `coord`. Image columns follow the first remaining axis, rows the second
/// (flipped so it grows upward). Cell outlines are drawn on each cell's
/// minimum edges.
pub fn slice(map: &OccupancyOctree, axis: Axis, coord: f64) -> Result<RgbImage> {
    let a = axis as usize;
    let (ua, va) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let n = map.voxels_per_edge() as usize;
    if n > 8192 {
        return Err(Error::InvalidInput(format!("map of {n} voxels per edge is too large to slice")));
    }
    let k = ((coord - map.origin()[a]) / map.v_res()).floor();
    if !(k >= 0.0 && (k as usize) < n) {
        return Err(Error::OutOfBounds(format!("slice coordinate {coord} outside the map")));
    }
    let mut img = RgbImage {
        width: n,
        height: n,
        data: vec![SLICE_UNKNOWN; n * n],
    };
    // Default free-colour scale when no sensor is known.
    let l_min_total = -100.0;
    for row in 0..n {
        let vi = n - 1 - row;
        for ui in 0..n {
            let mut c = [0u32; 3];
            c[a] = k as u32;
            c[ua] = ui as u32;
            c[va] = vi as u32;
            let cell = map.cell_at_voxel(c);
            let edge = (cell.size / map.v_res()).round() as u32;
            let on_border = edge > 1 && (c[ua] % edge == 0 || c[va] % edge == 0);
            let color = if on_border {
                SLICE_BORDER
            } else {
                match Occupancy::of_state(&cell.state) {
                    Occupancy::Unknown => SLICE_UNKNOWN,
                    Occupancy::Occupied => SLICE_OCCUPIED,
                    Occupancy::Free => slice_free_color(cell.state.accumulated(), l_min_total),
                }
            };
            img.data[row * n + ui] = color;
        }
    }
    Ok(img)
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().flatten().copied().collect();
    image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .expect("buffer size matches dimensions")
        .save(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

fn render(map_path: &Path, pose: &[f64], config: Option<&Path>, out: &Path, normals: Option<&Path>) -> Result<()> {
    let map = OccupancyOctree::load(map_path)?;
    let settings = load_config(config)?.resolve(None)?;
    let spec = &settings.spec;
    let q = nalgebra::Quaternion::new(pose[6], pose[3], pose[4], pose[5]);
    if (q.norm() - 1.0).abs() >= 1e-3 {
        return Err(Error::DegeneratePose("quaternion is not unit length".into()));
    }
    let pose = Pose::from_quaternion(
        Vec3::new(pose[0], pose[1], pose[2]),
        nalgebra::UnitQuaternion::from_quaternion(q),
    );
    let mut depth = crate::depth::DepthImage::filled(spec.width, spec.height, 0.0);
    let mut nimg = RgbImage {
        width: spec.width,
        height: spec.height,
        data: vec![[0; 3]; spec.width * spec.height],
    };
    for v in 0..spec.height {
        for u in 0..spec.width {
            let dc = spec.back_project(u as f64, v as f64);
            let dir = pose.transform_vector(&dc);
            // The sensor sees nothing closer than the near plane, so the ray
            // starts there instead of in the unobserved space around the
            // camera.
            let start = pose.translation + dir * spec.z_np;
            let r = raycast(&map, &start, &dir, (spec.z_fp - spec.z_np) * dc.norm(), false);
            if let Some(hit) = r.hit.filter(|h| h.kind == HitKind::Occupied) {
                depth.set(u, v, spec.z_np + hit.t / dc.norm());
                let c = map.lowest_cell_at(&(hit.point + dir.normalize() * 1e-9))?;
                let rel = (hit.point - c.aabb.center()) / (0.5 * c.size);
                let axis = rel.iamax();
                let mut nrm = Vec3::zeros();
                nrm[axis] = rel[axis].signum();
                nimg.data[v * spec.width + u] = nrm.map(|x| ((x * 0.5 + 0.5) * 255.0) as u8).into();
            }
        }
    }
    crate::dataset::tum::save_depth_png(&depth, out)?;
    if let Some(p) = normals {
        save_rgb(&nimg, p)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    start: [f64; 3],
    end: [f64; 3],
    radius: f64,
}

fn check(map: &OccupancyOctree, unknown_is_unsafe: bool, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    for (i, line) in stdin.lines().enumerate() {
        let line = line.map_err(|e| Error::io("stdin", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: PathBuf::from("<stdin>"),
            line: i + 1,
            msg,
        };
        let req: SegmentRequest = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(req.radius > 0.0) {
            return Err(parse_err("radius must be positive".into()));
        }
        let seg = CorridorSegment {
            start: Vec3::from(req.start),
            end: Vec3::from(req.end),
            radius: req.radius,
        };
        let r = check_segment(map, &seg, unknown_is_unsafe);
        let out = serde_json::json!({ "verdict": r.verdict.as_str(), "checks": r.visits });
        writeln!(stdout, "{out}").map_err(|e| Error::io("stdout", e))?;
    }
    Ok(())
}

pub fn stats_json(map: &OccupancyOctree) -> serde_json::Value {
    let s = map.stats();
    serde_json::json!({
        "depth": s.depth,
        "v_res": map.v_res(),
        "nodes": s.nodes,
        "nodes_per_level": s.nodes_per_level,
        "leaves_per_level": s.leaves_per_level,
        "blocks": s.blocks,
        "blocks_per_scale": s.blocks_per_scale,
        "allocated_cells": s.allocated_cells,
        "bytes": s.bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_check_stream_gives_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.aom");
        OccupancyOctree::new(0.1, 5, Vec3::zeros()).unwrap().save(&p).unwrap();
        let mut out = Vec::new();
        let args = ["aomap", "check", "--map", p.to_str().unwrap()];
        run(args, &mut &b""[..], &mut out).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn bad_arguments_are_invalid_input() {
        let mut out = Vec::new();
        let e = run(["aomap", "frobnicate"], &mut &b""[..], &mut out).unwrap_err();
        assert_eq!(e.kind(), "invalid_input");
        assert!(!e.to_string().contains('\n'));
    }
}
