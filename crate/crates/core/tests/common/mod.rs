#![allow(dead_code)]

use liftpose_core::epipolar::{Correspondence, RelativePose};
use liftpose_core::kinematics::Intrinsics;
use liftpose_core::linalg::axis_angle;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two cameras: the first at the origin looking down +z, the second rotated by up to ~50 deg
/// and displaced by a unit-scale baseline.
pub struct Rig {
    pub pose: RelativePose,
    pub k1: Intrinsics,
    pub k2: Intrinsics,
}

impl Rig {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let axis = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        );
        let angle = r.random_range(0.1..0.9);
        let rot = axis_angle(&(axis.normalize() * angle));
        let t = Vector3::new(
            r.random_range(-1.0..1.0),
            r.random_range(-0.3..0.3),
            r.random_range(-0.3..0.3),
        );
        let mut k = || {
            let f = r.random_range(800.0..1200.0);
            Intrinsics::new(
                f,
                f * r.random_range(0.98..1.02),
                r.random_range(450.0..550.0),
                r.random_range(450.0..550.0),
            )
        };
        let (k1, k2) = (k(), k());
        Self {
            pose: RelativePose::new(rot, t.normalize()),
            k1,
            k2,
        }
    }

    pub fn project1(&self, x: &Vector3<f64>) -> Vector2<f64> {
        project(&self.k1, x)
    }

    pub fn project2(&self, x: &Vector3<f64>) -> Vector2<f64> {
        project(&self.k2, &(self.pose.r * x + self.pose.t))
    }

    pub fn correspondence(&self, x: &Vector3<f64>) -> Correspondence {
        Correspondence::new(self.project1(x), self.project2(x))
    }

    /// Points in front of both cameras, in the first camera's frame.
    pub fn points(&self, n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut r = rng(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = Vector3::new(
                r.random_range(-2.0..2.0),
                r.random_range(-2.0..2.0),
                r.random_range(4.0..9.0),
            );
            if (self.pose.r * x + self.pose.t).z > 1.0 {
                out.push(x);
            }
        }
        out
    }

    pub fn correspondences(&self, n: usize, seed: u64) -> Vec<Correspondence> {
        self.points(n, seed)
            .iter()
            .map(|x| self.correspondence(x))
            .collect()
    }
}

pub fn project(k: &Intrinsics, x: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy)
}

/// Frobenius distance between matrices after unit normalization, minimized over sign.
pub fn distance_up_to_scale(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> f64 {
    let a = a / a.norm();
    let b = b / b.norm();
    (a - b).norm().min((a + b).norm())
}

pub mod toy;
