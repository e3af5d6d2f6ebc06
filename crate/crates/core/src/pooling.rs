//! Multi-scale max-min pooling of a depth image.
//!
//! Level `f` stores, for every pixel, the depth span of the
//! `(2^f + 1) x (2^f + 1)` window centred on it together with two flags: the
//! window holds an invalid sample, and the window reaches past the image
//! border. Level 1 is pooled directly from the image; level `f > 1` merges
//! the four level `f - 1` records at `(u ± 2^(f-2), v ± 2^(f-2))`.

use rayon::prelude::*;

use crate::depth::DepthImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolRecord {
    /// `+inf` when the window holds no valid depth.
    pub z_min: f64,
    /// `-inf` when the window holds no valid depth.
    pub z_max: f64,
    pub contains_invalid: bool,
    pub touches_boundary: bool,
}

impl PoolRecord {
    const EMPTY: PoolRecord = PoolRecord {
        z_min: f64::INFINITY,
        z_max: f64::NEG_INFINITY,
        contains_invalid: false,
        touches_boundary: false,
    };

    pub fn has_valid(&self) -> bool {
        self.z_min <= self.z_max
    }

    #[inline]
    fn merge(&mut self, o: &PoolRecord) {
        self.z_min = self.z_min.min(o.z_min);
        self.z_max = self.z_max.max(o.z_max);
        self.contains_invalid |= o.contains_invalid;
        self.touches_boundary |= o.touches_boundary;
    }
}

/// Result of a pixel bounding-box span query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanQuery {
    pub record: PoolRecord,
    /// Pooling level used.
    pub level: u32,
    /// Number of pooled windows read.
    pub queries: usize,
}

const INVALID: u8 = 1;
const BOUNDARY: u8 = 2;

/// One level stored column-wise so the merges vectorise.
#[derive(Clone, Debug)]
struct Level {
    z_min: Vec<f64>,
    z_max: Vec<f64>,
    flags: Vec<u8>,
}

impl Level {
    fn new(n: usize) -> Self {
        Level {
            z_min: vec![f64::INFINITY; n],
            z_max: vec![f64::NEG_INFINITY; n],
            flags: vec![0; n],
        }
    }
}

// Stored depths are never NaN (invalid samples hold the infinities), so
// plain comparisons suffice and let the row loops vectorise.
#[inline]
fn min(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

#[inline]
fn max(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

#[inline]
fn or(a: u8, b: u8) -> u8 {
    a | b
}

/// `out[i] = op` over `a[i - off], a[i + off], b[i - off], b[i + off]` with
/// the column clamped to the row.
fn merge_shifted<T: Copy>(out: &mut [T], [a, b]: [&[T]; 2], off: usize, op: impl Fn(T, T) -> T) {
    let w = out.len();
    let at = |i: usize| {
        let (l, r) = (i.saturating_sub(off), (i + off).min(w - 1));
        op(op(a[l], a[r]), op(b[l], b[r]))
    };
    if 2 * off >= w {
        for (i, o) in out.iter_mut().enumerate() {
            *o = at(i);
        }
        return;
    }
    for i in (0..off).chain(w - off..w) {
        out[i] = at(i);
    }
    let n = w - 2 * off;
    let (al, ar, bl, br) = (&a[..n], &a[2 * off..], &b[..n], &b[2 * off..]);
    for (i, o) in out[off..w - off].iter_mut().enumerate() {
        *o = op(op(al[i], ar[i]), op(bl[i], br[i]));
    }
}

#[derive(Clone, Debug)]
pub struct PoolingPyramid {
    width: usize,
    height: usize,
    levels: Vec<Level>,
    merge_ops: u64,
}

impl PoolingPyramid {
    /// Builds levels `1..=f_max`. Depths outside `[z_min_valid, z_max_valid]`,
    /// zero and NaN count as invalid.
    pub fn build(
        depth: &DepthImage,
        f_max: u32,
        z_min_valid: f64,
        z_max_valid: f64,
    ) -> Result<Self> {
        let (w, h) = (depth.width, depth.height);
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput("empty depth image".into()));
        }
        if f_max == 0 {
            return Err(Error::InvalidInput("f_max must be at least 1".into()));
        }
        let valid = |z: f64| z.is_finite() && z > 0.0 && z >= z_min_valid && z <= z_max_valid;

        let mut base = Level::new(w * h);
        for (i, &z) in depth.data.iter().enumerate() {
            if valid(z) {
                base.z_min[i] = z;
                base.z_max[i] = z;
            } else {
                base.flags[i] = INVALID;
            }
        }

        // Level 1, separable: a horizontal 3-pass then a vertical one.
        let mut rows = Level::new(w * h);
        rows.z_min
            .par_chunks_mut(w)
            .zip(rows.z_max.par_chunks_mut(w))
            .zip(rows.flags.par_chunks_mut(w))
            .enumerate()
            .for_each(|(v, ((lo, hi), fl))| {
                let r = v * w..(v + 1) * w;
                let (bl, bh, bf) = (&base.z_min[r.clone()], &base.z_max[r.clone()], &base.flags[r]);
                for u in 0..w {
                    let (l, m, r) = (u.saturating_sub(1), u, (u + 1).min(w - 1));
                    lo[u] = min(min(bl[l], bl[m]), bl[r]);
                    hi[u] = max(max(bh[l], bh[m]), bh[r]);
                    fl[u] = bf[l] | bf[m] | bf[r];
                }
                fl[0] |= BOUNDARY;
                fl[w - 1] |= BOUNDARY;
            });
        let mut level1 = Level::new(w * h);
        level1
            .z_min
            .par_chunks_mut(w)
            .zip(level1.z_max.par_chunks_mut(w))
            .zip(level1.flags.par_chunks_mut(w))
            .enumerate()
            .for_each(|(v, ((lo, hi), fl))| {
                let rows_of = |dv: i64| {
                    let y = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                    y * w..(y + 1) * w
                };
                let (a, m, b) = (rows_of(-1), rows_of(0), rows_of(1));
                for u in 0..w {
                    lo[u] = min(min(rows.z_min[a.start + u], rows.z_min[m.start + u]), rows.z_min[b.start + u]);
                    hi[u] = max(max(rows.z_max[a.start + u], rows.z_max[m.start + u]), rows.z_max[b.start + u]);
                    fl[u] = rows.flags[a.start + u] | rows.flags[m.start + u] | rows.flags[b.start + u];
                }
                if v == 0 || v + 1 == h {
                    fl.iter_mut().for_each(|f| *f |= BOUNDARY);
                }
            });

        let mut merge_ops = 6 * (w * h) as u64;
        let mut levels = vec![level1];
        for f in 2..=f_max {
            let prev = levels.last().expect("level 1 exists");
            let off = 1usize << (f - 2);
            let half = 1usize << (f - 1);
            let mut next = Level::new(w * h);
            next.z_min
                .par_chunks_mut(w)
                .zip(next.z_max.par_chunks_mut(w))
                .zip(next.flags.par_chunks_mut(w))
                .enumerate()
                .for_each(|(v, ((lo, hi), fl))| {
                    let up = v.saturating_sub(off) * w..;
                    let down = (v + off).min(h - 1) * w..;
                    merge_shifted(lo, [&prev.z_min[up.clone()][..w], &prev.z_min[down.clone()][..w]], off, min);
                    merge_shifted(hi, [&prev.z_max[up.clone()][..w], &prev.z_max[down.clone()][..w]], off, max);
                    merge_shifted(fl, [&prev.flags[up][..w], &prev.flags[down][..w]], off, or);
                    let row_edge = v < half || v + half >= h;
                    for (u, f) in fl.iter_mut().enumerate() {
                        *f &= INVALID;
                        if row_edge || u < half || u + half >= w {
                            *f |= BOUNDARY;
                        }
                    }
                });
            merge_ops += 4 * (w * h) as u64;
            levels.push(next);
        }
        Ok(PoolingPyramid {
            width: w,
            height: h,
            levels,
            merge_ops,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn f_max(&self) -> u32 {
        self.levels.len() as u32
    }

    /// Number of record reads/merges performed by `build`.
    pub fn merge_ops(&self) -> u64 {
        self.merge_ops
    }

    /// Record of level `f` (1-based) at pixel (u, v).
    pub fn record(&self, f: u32, u: usize, v: usize) -> PoolRecord {
        let l = &self.levels[f as usize - 1];
        let i = v * self.width + u;
        PoolRecord {
            z_min: l.z_min[i],
            z_max: l.z_max[i],
            contains_invalid: l.flags[i] & INVALID != 0,
            touches_boundary: l.flags[i] & BOUNDARY != 0,
        }
    }

    /// Conservative depth span over the inclusive pixel box
    /// `[u0, u1] x [v0, v1]`, or `None` when the box misses the image.
    ///
    /// Uses the largest level whose window fits in the box and tiles the box
    /// with windows centred inside it, so the answer may include up to half
    /// a window of surrounding pixels but never misses a pixel of the box.
    pub fn query_box(&self, u0: i64, v0: i64, u1: i64, v1: i64) -> Option<SpanQuery> {
        let (w, h) = (self.width as i64, self.height as i64);
        if u1 < 0 || v1 < 0 || u0 >= w || v0 >= h || u1 < u0 || v1 < v0 {
            return None;
        }
        let clipped = u0 < 0 || v0 < 0 || u1 >= w || v1 >= h;
        let (u0, v0, u1, v1) = (u0.max(0), v0.max(0), u1.min(w - 1), v1.min(h - 1));
        let min_dim = (u1 - u0 + 1).min(v1 - v0 + 1);

        let mut f = 1u32;
        while f < self.f_max() && (1i64 << (f + 1)) + 1 <= min_dim {
            f += 1;
        }
        let size = (1i64 << f) + 1;

        let mut record = PoolRecord::EMPTY;
        record.touches_boundary = clipped;
        let mut queries = 0;
        for v in WindowCenters::new(v0, v1, size) {
            for u in WindowCenters::new(u0, u1, size) {
                record.merge(&self.record(f, u as usize, v as usize));
                queries += 1;
            }
        }
        Some(SpanQuery {
            record,
            level: f,
            queries,
        })
    }
}

/// Centres of `size`-wide windows covering `[lo, hi]`, all inside it.
#[derive(Clone, Copy, Debug)]
struct WindowCenters {
    next: Option<i64>,
    hi: i64,
    size: i64,
}

impl WindowCenters {
    fn new(lo: i64, hi: i64, size: i64) -> Self {
        let first = if hi - lo + 1 <= size { (lo + hi) / 2 } else { lo + size / 2 };
        WindowCenters {
            next: Some(first),
            hi,
            size,
        }
    }
}

impl Iterator for WindowCenters {
    type Item = i64;

    fn next(&mut self) -> Option<i64> {
        let c = self.next?;
        let half = self.size / 2;
        self.next = (c + half < self.hi).then(|| (c + self.size).min(self.hi - half));
        Some(c)
    }
}
