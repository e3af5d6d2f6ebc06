//! Small geometric vocabulary shared by the map, integrator and queries:
//! axis-aligned boxes, rigid poses and closed-form primitive/box distances.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Closed axis-aligned box `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(min: Vec3, edge: f64) -> Self {
        Aabb {
            min,
            max: min + Vec3::repeat(edge),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= o.max[i] && o.min[i] <= self.max[i])
    }

    /// The eight corners, bit `i` of the index selecting max along axis `i`.
    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|k| {
            Vec3::new(
                if k & 1 == 0 { self.min.x } else { self.max.x },
                if k & 2 == 0 { self.min.y } else { self.max.y },
                if k & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }

    /// Squared Euclidean distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        (0..3)
            .map(|i| {
                let e = (self.min[i] - p[i]).max(p[i] - self.max[i]).max(0.0);
                e * e
            })
            .sum()
    }

    /// Parametric entry/exit of the ray `origin + t * dir` through the box,
    /// or `None` when the ray's line misses it.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = {
                let a = (self.min[i] - origin[i]) * inv;
                let b = (self.max[i] - origin[i]) * inv;
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Squared distance between the segment `a..b` and a box. Exact: the
/// objective is convex and piecewise quadratic in the segment parameter, so
/// each piece is minimised in closed form.
pub fn segment_box_distance_squared(a: &Vec3, b: &Vec3, bx: &Aabb) -> f64 {
    let d = b - a;
    let mut breaks = vec![0.0, 1.0];
    for i in 0..3 {
        if d[i] != 0.0 {
            for bound in [bx.min[i], bx.max[i]] {
                let t = (bound - a[i]) / d[i];
                if t > 0.0 && t < 1.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(|x, y| x.total_cmp(y));

    let eval = |t: f64| bx.distance_squared(&(a + d * t));
    let mut best = eval(0.0).min(eval(1.0));
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (mut qa, mut qb) = (0.0, 0.0);
        for i in 0..3 {
            let x = a[i] + mid * d[i];
            if x < bx.min[i] {
                qa += d[i] * d[i];
                qb += -2.0 * d[i] * (bx.min[i] - a[i]);
            } else if x > bx.max[i] {
                qa += d[i] * d[i];
                qb += 2.0 * d[i] * (a[i] - bx.max[i]);
            }
        }
        if qa > 0.0 {
            let t = (-qb / (2.0 * qa)).clamp(lo, hi);
            best = best.min(eval(t));
        } else {
            // Constant (zero or flat) on this piece.
            best = best.min(eval(mid));
        }
        if best == 0.0 {
            break;
        }
    }
    best
}

/// Does a sphere overlap the closed box?
pub fn sphere_overlaps_box(center: &Vec3, radius: f64, bx: &Aabb) -> bool {
    bx.distance_squared(center) <= radius * radius
}

/// Does the capsule (segment swept by a sphere) overlap the closed box?
pub fn capsule_overlaps_box(a: &Vec3, b: &Vec3, radius: f64, bx: &Aabb) -> bool {
    segment_box_distance_squared(a, b, bx) <= radius * radius
}

/// Rigid transform `T_WC` taking camera-frame points to the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_quaternion(translation: Vec3, q: UnitQuaternion<f64>) -> Self {
        Pose {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Camera at `eye` looking at `target`, camera y axis pointing as close
    /// to `down` as possible (image rows grow downward).
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        Pose {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::DegeneratePose("non-finite entries".into()));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::DegeneratePose(format!(
                "rotation not orthonormal (error {err:.3e})"
            )));
        }
        if r.determinant() < 0.0 {
            return Err(Error::DegeneratePose("rotation is a reflection".into()));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// World to camera.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn position(&self) -> Vec3 {
        self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_segment_box(a: &Vec3, b: &Vec3, bx: &Aabb) -> f64 {
        (0..=20_000)
            .map(|i| bx.distance_squared(&(a + (b - a) * (i as f64 / 20_000.0))))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn segment_distance_matches_dense_sampling() {
        let bx = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.5));
        let cases = [
            (Vec3::new(-1.0, -1.0, 2.0), Vec3::new(3.0, 4.0, 1.0)),
            (Vec3::new(2.0, 0.5, 0.2), Vec3::new(2.0, 1.5, 0.2)),
            (Vec3::new(-2.0, 3.0, -1.0), Vec3::new(4.0, -2.0, 3.0)),
            (Vec3::new(0.5, 0.5, 0.2), Vec3::new(0.5, 0.5, 0.2)),
        ];
        for (a, b) in cases {
            let exact = segment_box_distance_squared(&a, &b, &bx);
            let sampled = brute_segment_box(&a, &b, &bx);
            assert!(exact <= sampled + 1e-12);
            assert!(sampled - exact < 1e-6, "{exact} vs {sampled}");
        }
    }

    proptest! {
        #[test]
        fn segment_distance_is_lower_bound_and_tight(
            ax in -3.0..3.0f64, ay in -3.0..3.0f64, az in -3.0..3.0f64,
            bx_ in -3.0..3.0f64, by in -3.0..3.0f64, bz in -3.0..3.0f64,
        ) {
            let bx = Aabb::new(Vec3::new(-0.5, 0.0, 0.2), Vec3::new(0.7, 1.1, 0.9));
            let a = Vec3::new(ax, ay, az);
            let b = Vec3::new(bx_, by, bz);
            let exact = segment_box_distance_squared(&a, &b, &bx);
            let sampled = brute_segment_box(&a, &b, &bx);
            prop_assert!(exact <= sampled + 1e-12);
            prop_assert!(sampled - exact < 1e-3);
        }
    }

    #[test]
    fn ray_interval_through_unit_box() {
        let bx = Aabb::cube(Vec3::zeros(), 1.0);
        let (t0, t1) = bx
            .ray_interval(&Vec3::new(-1.0, 0.5, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!((t0, t1), (1.0, 2.0));
        assert!(bx
            .ray_interval(&Vec3::new(-1.0, 2.0, 0.5), &Vec3::new(1.0, 0.0, 0.0))
            .is_none());
    }

    #[test]
    fn pose_validation_rejects_reflection() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(Pose::new(r, Vec3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 2.0, Vec3::zeros()).is_err());
        let p = Pose::look_at(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0));
        p.validate().unwrap();
        let c = p.inverse_transform_point(&Vec3::new(2.0, 0.0, 0.0));
        assert!((c - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }
}
