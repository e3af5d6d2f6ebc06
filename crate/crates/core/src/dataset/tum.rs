//! TUM RGB-D directory reader.
//!
//! Layout: `depth.txt` lists `timestamp path` pairs relative to the
//! directory, `groundtruth.txt` lists `timestamp tx ty tz qx qy qz qw`.
//! Depth PNGs are 16 bit with 5000 units per meter and 0 for no return.

use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::integrator::FrameInput;

pub const DEPTH_SCALE: f64 = 5000.0;
pub const DEFAULT_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthEntry {
    pub timestamp: f64,
    pub path: PathBuf,
    pub pose: Pose,
}

/// Depth frames paired with their nearest ground-truth pose.
#[derive(Clone, Debug)]
pub struct TumSequence {
    pub entries: Vec<DepthEntry>,
    /// Depth frames without a pose within the tolerance.
    pub dropped: usize,
}

impl TumSequence {
    pub fn open(dir: impl AsRef<Path>, tolerance: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let depth_list = parse_depth_list(&dir.join("depth.txt"))?;
        let poses = parse_trajectory(&dir.join("groundtruth.txt"))?;
        let (entries, dropped) = associate(dir, depth_list, &poses, tolerance);
        if dropped > 0 {
            log::warn!("{dropped} depth frames had no pose within {tolerance} s and were dropped");
        }
        Ok(TumSequence { entries, dropped })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<FrameInput> {
        let e = &self.entries[i];
        Ok(FrameInput {
            depth: load_depth_png(&e.path)?,
            pose: e.pose,
            timestamp: e.timestamp,
        })
    }

    /// Frames in timestamp order, decoded lazily.
    pub fn frames(&self) -> impl Iterator<Item = Result<FrameInput>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_depth_list(path: &Path) -> Result<Vec<(f64, String)>> {
    let mut out = Vec::new();
    for (n, line) in read_lines(path)? {
        let mut it = line.split_whitespace();
        let (Some(ts), Some(file), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, n, "expected `timestamp filename`"));
        };
        let ts: f64 = ts
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad timestamp `{ts}`")))?;
        out.push((ts, file.to_string()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Parses a trajectory file. Quaternions within 1e-3 of unit norm are
/// renormalised; others are rejected.
pub fn parse_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (n, line) in read_lines(path)? {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, n, "non-numeric field"))?;
        if vals.len() != 8 {
            return Err(parse_err(path, n, format!("expected 8 fields, got {}", vals.len())));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() >= 1e-3 {
            return Err(parse_err(path, n, format!("quaternion norm {norm} is not 1")));
        }
        out.push(StampedPose {
            timestamp: vals[0],
            pose: Pose::from_quaternion(
                Vec3::new(vals[1], vals[2], vals[3]),
                UnitQuaternion::from_quaternion(q),
            ),
        });
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

/// Pairs every depth frame with the nearest pose in time.
pub fn associate(
    dir: &Path,
    depth: Vec<(f64, String)>,
    poses: &[StampedPose],
    tolerance: f64,
) -> (Vec<DepthEntry>, usize) {
    let mut entries = Vec::new();
    let mut dropped = 0;
    for (ts, file) in depth {
        let i = poses.partition_point(|p| p.timestamp < ts);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|k| poses.get(k))
            .min_by(|a, b| (a.timestamp - ts).abs().total_cmp(&(b.timestamp - ts).abs()));
        match best {
            Some(p) if (p.timestamp - ts).abs() <= tolerance => entries.push(DepthEntry {
                timestamp: ts,
                path: dir.join(file),
                pose: p.pose,
            }),
            _ => dropped += 1,
        }
    }
    (entries, dropped)
}

pub fn load_depth_png(path: &Path) -> Result<DepthImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let img = img.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / DEPTH_SCALE).collect();
    Ok(DepthImage::new(w as usize, h as usize, data))
}

/// Writes depth in meters as a 16-bit PNG (values clamped to the range).
pub fn save_depth_png(depth: &DepthImage, path: &Path) -> Result<()> {
    let raw: Vec<u16> = depth
        .data
        .iter()
        .map(|&z| if z.is_finite() && z > 0.0 { (z * DEPTH_SCALE).round().min(65535.0) as u16 } else { 0 })
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, raw)
        .expect("buffer size matches dimensions");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
