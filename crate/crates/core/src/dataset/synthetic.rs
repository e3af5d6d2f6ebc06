//! Analytic scenes rendered to exact z-depth images.
//!
//! Scene files are line oriented, `#` starts a comment:
//!
//! ```text
//! aoscene 1
//! sensor   <width> <height> <fx> <fy> <cx> <cy>     optional
//! plane    px py pz  nx ny nz                        solid behind the normal
//! box      minx miny minz  maxx maxy maxz
//! sphere   cx cy cz  r
//! cylinder bx by bz  ax ay az  r h                   base, axis, radius, height
//! keyframe tx ty tz  qx qy qz qw                     camera-to-world pose
//! lookat   ex ey ez  tx ty tz                        keyframe looking at a point, world z up
//! frames   <n>
//! noise    <seed>                                    optional depth noise
//! ```
//!
//! The trajectory visits the keyframes at evenly spaced parameters,
//! interpolating positions linearly and rotations spherically.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Pose, Vec3};
use crate::integrator::FrameInput;
use crate::sensor::SensorSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Half-space bounded by the plane; the normal points into free space.
    Plane { point: Vec3, normal: Vec3 },
    Box(Aabb),
    Sphere { center: Vec3, radius: f64 },
    /// Solid capped cylinder starting at `base` and extending `height`
    /// along the unit `axis`.
    Cylinder {
        base: Vec3,
        axis: Vec3,
        radius: f64,
        height: f64,
    },
}

impl Primitive {
    /// Exact signed distance, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Plane { point, normal } => normal.dot(&(p - point)),
            Primitive::Box(b) => {
                let c = b.center();
                let h = (b.max - b.min) * 0.5;
                let q = (p - c).abs() - h;
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let rel = p - base;
                let along = rel.dot(&axis);
                let radial = (rel - axis * along).norm();
                let dr = radial - radius;
                let dh = (along - 0.5 * height).abs() - 0.5 * height;
                let outside = (dr.max(0.0).powi(2) + dh.max(0.0).powi(2)).sqrt();
                outside + dr.max(dh).min(0.0)
            }
        }
    }

    /// Smallest positive `t` where `o + t d` meets the surface.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let pos = |t: f64| (t > 1e-12).then_some(t);
        match *self {
            Primitive::Plane { point, normal } => {
                let den = normal.dot(d);
                if den.abs() < 1e-15 {
                    return None;
                }
                pos(normal.dot(&(point - o)) / den)
            }
            Primitive::Box(b) => {
                let (t0, t1) = b.ray_interval(o, d)?;
                pos(t0).or_else(|| pos(t1))
            }
            Primitive::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                pos((-b - s) / a).or_else(|| pos((-b + s) / a))
            }
            Primitive::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let rel = o - base;
                let (oa, da) = (rel.dot(&axis), d.dot(&axis));
                let (op, dp) = (rel - axis * oa, d - axis * da);
                let in_height = |t: f64| {
                    let h = oa + t * da;
                    (0.0..=height).contains(&h)
                };
                let mut best: Option<f64> = None;
                let mut take = |t: f64| {
                    if t > 1e-12 && best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                };
                let a = dp.dot(&dp);
                if a > 1e-18 {
                    let b = op.dot(&dp);
                    let c = op.dot(&op) - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / a, (-b + s) / a] {
                            if in_height(t) {
                                take(t);
                            }
                        }
                    }
                }
                if da.abs() > 1e-15 {
                    for h in [0.0, height] {
                        let t = (h - oa) / da;
                        if (op + dp * t).norm_squared() <= radius * radius {
                            take(t);
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub keyframes: Vec<Pose>,
    pub frames: usize,
    pub intrinsics: Option<Intrinsics>,
    /// Seed for additive depth noise; `None` renders exact depth.
    pub noise_seed: Option<u64>,
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>, keyframes: Vec<Pose>, frames: usize) -> Self {
        SyntheticScene {
            primitives,
            keyframes,
            frames,
            intrinsics: None,
            noise_seed: None,
        }
    }

    /// Signed distance to the nearest geometry (negative inside any solid).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|g| g.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Camera pose of frame `i`.
    pub fn pose(&self, i: usize) -> Pose {
        let k = self.keyframes.len();
        if k == 1 || self.frames <= 1 {
            return self.keyframes[0];
        }
        let s = i as f64 / (self.frames - 1) as f64 * (k - 1) as f64;
        let seg = (s.floor() as usize).min(k - 2);
        let f = s - seg as f64;
        let (a, b) = (&self.keyframes[seg], &self.keyframes[seg + 1]);
        let q = a.quaternion().slerp(&b.quaternion(), f);
        Pose::from_quaternion(a.translation * (1.0 - f) + b.translation * f, q)
    }

    /// Renders frame `i`: z-depth of the first surface along each pixel
    /// ray, 0 where nothing is hit.
    pub fn render(&self, spec: &SensorSpec, i: usize) -> FrameInput {
        let pose = self.pose(i);
        let mut depth = DepthImage::filled(spec.width, spec.height, 0.0);
        let mut rng = self
            .noise_seed
            .map(|s| ChaCha8Rng::seed_from_u64(s.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64));
        for v in 0..spec.height {
            for u in 0..spec.width {
                let dc = Vec3::new((u as f64 - spec.cx) / spec.fx, (v as f64 - spec.cy) / spec.fy, 1.0);
                let dw = pose.transform_vector(&dc);
                let t = self
                    .primitives
                    .iter()
                    .filter_map(|g| g.intersect(&pose.translation, &dw))
                    .fold(f64::INFINITY, f64::min);
                if t.is_finite() {
                    let z = match rng.as_mut() {
                        Some(r) => {
                            let n = Normal::new(0.0, spec.sigma(t)).expect("positive sigma");
                            t + n.sample(r)
                        }
                        None => t,
                    };
                    depth.set(u, v, z);
                }
            }
        }
        FrameInput {
            depth,
            pose,
            timestamp: i as f64 / 30.0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut scene = SyntheticScene::new(Vec::new(), Vec::new(), 0);
        let mut header = false;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let args: Vec<&str> = it.collect();
            if !header {
                if key != "aoscene" || args != ["1"] {
                    return Err(err(n, "expected header `aoscene 1`".into()));
                }
                header = true;
                continue;
            }
            let nums = |count: usize| -> Result<Vec<f64>> {
                if args.len() != count {
                    return Err(err(n, format!("`{key}` takes {count} values, got {}", args.len())));
                }
                args.iter()
                    .map(|a| a.parse::<f64>().map_err(|_| err(n, format!("bad number `{a}`"))))
                    .collect()
            };
            let v3 = |a: &[f64]| Vec3::new(a[0], a[1], a[2]);
            match key {
                "sensor" => {
                    let a = nums(6)?;
                    scene.intrinsics = Some(Intrinsics {
                        width: a[0] as usize,
                        height: a[1] as usize,
                        fx: a[2],
                        fy: a[3],
                        cx: a[4],
                        cy: a[5],
                    });
                }
                "plane" => {
                    let a = nums(6)?;
                    let normal = v3(&a[3..]);
                    if normal.norm() < 1e-12 {
                        return Err(err(n, "zero plane normal".into()));
                    }
                    scene.primitives.push(Primitive::Plane {
                        point: v3(&a),
                        normal: normal.normalize(),
                    });
                }
                "box" => {
                    let a = nums(6)?;
                    scene.primitives.push(Primitive::Box(Aabb::new(v3(&a), v3(&a[3..]))));
                }
                "sphere" => {
                    let a = nums(4)?;
                    scene.primitives.push(Primitive::Sphere {
                        center: v3(&a),
                        radius: a[3],
                    });
                }
                "cylinder" => {
                    let a = nums(8)?;
                    let axis = v3(&a[3..]);
                    if axis.norm() < 1e-12 {
                        return Err(err(n, "zero cylinder axis".into()));
                    }
                    scene.primitives.push(Primitive::Cylinder {
                        base: v3(&a),
                        axis: axis.normalize(),
                        radius: a[6],
                        height: a[7],
                    });
                }
                "keyframe" => {
                    let a = nums(7)?;
                    let q = Quaternion::new(a[6], a[3], a[4], a[5]);
                    if (q.norm() - 1.0).abs() >= 1e-3 {
                        return Err(err(n, "quaternion is not unit length".into()));
                    }
                    scene
                        .keyframes
                        .push(Pose::from_quaternion(v3(&a), UnitQuaternion::from_quaternion(q)));
                }
                "lookat" => {
                    let a = nums(6)?;
                    scene.keyframes.push(Pose::look_at(v3(&a), v3(&a[3..]), -Vec3::z()));
                }
                "frames" => {
                    scene.frames = nums(1)?[0] as usize;
                }
                "noise" => {
                    let s = args.first().and_then(|s| s.parse::<u64>().ok());
                    scene.noise_seed = Some(s.ok_or_else(|| err(n, "noise takes an integer seed".into()))?);
                }
                other => return Err(err(n, format!("unknown directive `{other}`"))),
            }
        }
        if !header {
            return Err(err(1, "empty scene file".into()));
        }
        if scene.keyframes.is_empty() || scene.frames == 0 {
            return Err(err(text.lines().count(), "scene needs a keyframe and a frame count".into()));
        }
        Ok(scene)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("aoscene 1\n");
        if let Some(k) = self.intrinsics {
            s += &format!("sensor {} {} {} {} {} {}\n", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
        }
        for p in &self.primitives {
            s += &match p {
                Primitive::Plane { point: a, normal: b } => {
                    format!("plane {} {} {} {} {} {}\n", a.x, a.y, a.z, b.x, b.y, b.z)
                }
                Primitive::Box(b) => format!(
                    "box {} {} {} {} {} {}\n",
                    b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
                ),
                Primitive::Sphere { center: c, radius } => {
                    format!("sphere {} {} {} {}\n", c.x, c.y, c.z, radius)
                }
                Primitive::Cylinder {
                    base: b,
                    axis: a,
                    radius,
                    height,
                } => format!(
                    "cylinder {} {} {} {} {} {} {} {}\n",
                    b.x, b.y, b.z, a.x, a.y, a.z, radius, height
                ),
            };
        }
        for k in &self.keyframes {
            let q = k.quaternion();
            let t = k.translation;
            s += &format!(
                "keyframe {} {} {} {} {} {} {}\n",
                t.x, t.y, t.z, q.i, q.j, q.k, q.w
            );
        }
        s += &format!("frames {}\n", self.frames);
        if let Some(seed) = self.noise_seed {
            s += &format!("noise {seed}\n");
        }
        s
    }
}

/// Ready-made scenes. World z points up; cameras look along +x.
pub mod scenes {
    use super::*;

    fn look(eye: Vec3, target: Vec3) -> Pose {
        Pose::look_at(eye, target, -Vec3::z())
    }

    /// Wall at `x = 2` with a thin vertical pole 0.8 m in front of it. The
    /// camera slides sideways so the pole's shadow on the wall moves.
    /// Fits a 2.56 m map with minimum corner `(-0.28, -1.28, -1.28)`.
    pub fn wall_and_pole(frames: usize) -> SyntheticScene {
        SyntheticScene::new(
            vec![
                Primitive::Plane {
                    point: Vec3::new(2.0, 0.0, 0.0),
                    normal: -Vec3::x(),
                },
                Primitive::Cylinder {
                    base: Vec3::new(1.2, 0.0, -1.5),
                    axis: Vec3::z(),
                    radius: 0.05,
                    height: 3.0,
                },
            ],
            vec![
                look(Vec3::new(0.0, -0.3, 0.0), Vec3::new(2.0, -0.15, 0.0)),
                look(Vec3::new(0.0, 0.3, 0.0), Vec3::new(2.0, 0.15, 0.0)),
            ],
            frames,
        )
    }

    /// Single wall facing the camera at distance `dist`, camera swaying.
    pub fn flat_wall(dist: f64, frames: usize) -> SyntheticScene {
        SyntheticScene::new(
            vec![Primitive::Plane {
                point: Vec3::new(dist, 0.0, 0.0),
                normal: -Vec3::x(),
            }],
            vec![
                look(Vec3::new(0.0, -0.1, -0.05), Vec3::new(dist, -0.1, 0.0)),
                look(Vec3::new(0.0, 0.1, 0.05), Vec3::new(dist, 0.1, 0.0)),
            ],
            frames,
        )
    }

    /// Ball in front of a wall, viewed from a short arc.
    pub fn sphere_on_wall(frames: usize) -> SyntheticScene {
        SyntheticScene::new(
            vec![
                Primitive::Plane {
                    point: Vec3::new(2.2, 0.0, 0.0),
                    normal: -Vec3::x(),
                },
                Primitive::Sphere {
                    center: Vec3::new(1.4, 0.0, 0.0),
                    radius: 0.3,
                },
            ],
            vec![
                look(Vec3::new(0.0, -0.4, 0.1), Vec3::new(1.4, 0.0, 0.0)),
                look(Vec3::new(0.1, 0.0, -0.1), Vec3::new(1.4, 0.0, 0.0)),
                look(Vec3::new(0.0, 0.4, 0.1), Vec3::new(1.4, 0.0, 0.0)),
            ],
            frames,
        )
    }

    /// Closed room spanning `[0, size]` with a table, a cabinet and a pole.
    /// The camera stands near the middle and turns through `sweep_deg`
    /// degrees starting from the +x direction.
    pub fn room(size: Vec3, sweep_deg: f64, frames: usize) -> SyntheticScene {
        let mut prims = Vec::new();
        for axis in 0..3 {
            let mut n = Vec3::zeros();
            n[axis] = 1.0;
            prims.push(Primitive::Plane {
                point: Vec3::zeros(),
                normal: n,
            });
            let mut p = Vec3::zeros();
            p[axis] = size[axis];
            prims.push(Primitive::Plane { point: p, normal: -n });
        }
        prims.push(Primitive::Box(Aabb::new(
            Vec3::new(size.x * 0.6, size.y * 0.2, 0.0),
            Vec3::new(size.x * 0.8, size.y * 0.4, 0.75),
        )));
        prims.push(Primitive::Box(Aabb::new(
            Vec3::new(size.x * 0.85, size.y * 0.6, 0.0),
            Vec3::new(size.x, size.y * 0.8, 1.8),
        )));
        prims.push(Primitive::Cylinder {
            base: Vec3::new(size.x * 0.7, size.y * 0.55, 0.0),
            axis: Vec3::z(),
            radius: 0.06,
            height: size.z,
        });
        let eye = Vec3::new(size.x * 0.4, size.y * 0.45, size.z * 0.5);
        let keys = 1 + (sweep_deg / 30.0).ceil().max(1.0) as usize;
        let keyframes = (0..keys)
            .map(|k| {
                let a = (sweep_deg * k as f64 / (keys - 1) as f64).to_radians();
                look(eye, eye + Vec3::new(a.cos(), a.sin(), -0.15))
            })
            .collect();
        SyntheticScene::new(prims, keyframes, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SensorSpec {
        SensorSpec::with_defaults(64, 48, 50.0, 50.0, 31.5, 23.5, 0.02)
    }

    #[test]
    fn fronto_parallel_wall_renders_constant_depth() {
        let scene = SyntheticScene::new(
            vec![Primitive::Plane {
                point: Vec3::new(0.0, 0.0, 3.0),
                normal: -Vec3::z(),
            }],
            vec![Pose::identity()],
            1,
        );
        let f = scene.render(&spec(), 0);
        assert!(f.depth.data.iter().all(|&z| (z - 3.0).abs() < 1e-12));
    }

    #[test]
    fn pole_creates_depth_discontinuity() {
        let scene = scenes::wall_and_pole(1);
        let s = spec();
        let f = scene.render(&s, 0);
        let row: Vec<f64> = (0..s.width).map(|u| f.depth.get(u, 24)).collect();
        let near = row.iter().filter(|&&z| z < 1.5).count();
        assert!(near > 0 && near < 10, "{row:?}");
        assert!(row.windows(2).any(|w| (w[0] - w[1]).abs() > 0.5));
    }

    #[test]
    fn noise_is_seeded() {
        let mut scene = scenes::flat_wall(2.0, 3);
        scene.noise_seed = Some(7);
        let s = spec();
        assert_eq!(scene.render(&s, 1), scene.render(&s, 1));
        assert_ne!(scene.render(&s, 1).depth, scene.render(&s, 2).depth);
        scene.noise_seed = None;
        let exact = scene.render(&s, 1);
        scene.noise_seed = Some(7);
        assert_ne!(exact.depth, scene.render(&s, 1).depth);
    }

    #[test]
    fn signed_distances() {
        let b = Primitive::Box(Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)));
        assert!((b.signed_distance(&Vec3::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
        assert!((b.signed_distance(&Vec3::repeat(0.5)) + 0.5).abs() < 1e-12);
        let c = Primitive::Cylinder {
            base: Vec3::zeros(),
            axis: Vec3::z(),
            radius: 0.5,
            height: 2.0,
        };
        assert!((c.signed_distance(&Vec3::new(1.0, 0.0, 1.0)) - 0.5).abs() < 1e-12);
        assert!((c.signed_distance(&Vec3::new(0.0, 0.0, 3.0)) - 1.0).abs() < 1e-12);
        let sph = Primitive::Sphere {
            center: Vec3::zeros(),
            radius: 1.0,
        };
        assert!((sph.signed_distance(&Vec3::new(0.0, 3.0, 0.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn renders_agree_with_distance_field() {
        let s = spec();
        for scene in [scenes::wall_and_pole(4), scenes::sphere_on_wall(4), scenes::room(Vec3::new(5.0, 5.0, 3.0), 90.0, 4)] {
            for i in 0..scene.frames {
                let f = scene.render(&s, i);
                for v in (0..s.height).step_by(5) {
                    for u in (0..s.width).step_by(5) {
                        let z = f.depth.get(u, v);
                        if z > 0.0 {
                            let p = f.pose.transform_point(&(s.back_project(u as f64, v as f64) * z));
                            assert!(scene.signed_distance(&p).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut scene = scenes::sphere_on_wall(12);
        scene.noise_seed = Some(3);
        scene.intrinsics = Some(Intrinsics {
            width: 64,
            height: 48,
            fx: 50.0,
            fy: 50.0,
            cx: 31.5,
            cy: 23.5,
        });
        let back = SyntheticScene::parse(&scene.to_text(), Path::new("x")).unwrap();
        assert_eq!(back.primitives, scene.primitives);
        assert_eq!(back.frames, 12);
        assert_eq!(back.intrinsics, scene.intrinsics);
        for i in 0..12 {
            let (a, b) = (back.pose(i), scene.pose(i));
            assert!((a.rotation - b.rotation).abs().max() < 1e-9);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "aoscene 1\nplane 0 0 0 1 0\n";
        match SyntheticScene::parse(text, Path::new("s")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(SyntheticScene::parse("aoscene 2\n", Path::new("s")).is_err());
        assert!(SyntheticScene::parse("aoscene 1\nblob 1\n", Path::new("s")).is_err());
    }

    #[test]
    fn trajectory_interpolates_between_keyframes() {
        let scene = scenes::wall_and_pole(11);
        assert_eq!(scene.pose(0).translation, scene.keyframes[0].translation);
        assert!((scene.pose(10).translation - scene.keyframes[1].translation).norm() < 1e-12);
        assert!((scene.pose(5).translation.y).abs() < 1e-12);
    }
}
