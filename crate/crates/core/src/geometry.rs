//! Planar poses, body twists and laser scans.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Smallest signed difference `a - b`, wrapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// A point in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Planar pose. `theta` is kept in `(-π, π]` by every constructor and operation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// `self ⊕ other`: `other` is expressed in this pose's frame.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)
    }

    /// Maps a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl From<[f64; 3]> for Pose2D {
    fn from(a: [f64; 3]) -> Self {
        Pose2D::new(a[0], a[1], a[2])
    }
}

/// The relative motion taking `from` to `to`, expressed in `from`'s frame.
pub fn pose_delta(from: &Pose2D, to: &Pose2D) -> Pose2D {
    from.inverse().compose(to)
}

/// Body-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D { vx: 0.0, vy: 0.0, omega: 0.0 };

    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn scale(&self, s: f64) -> Twist2D {
        Twist2D::new(self.vx * s, self.vy * s, self.omega * s)
    }

    /// Exact displacement after holding this twist for `dt` seconds.
    ///
    /// Straight-line motion is recovered as the limit when the rotation is
    /// negligible.
    pub fn integrate(&self, dt: f64) -> Pose2D {
        let dth = self.omega * dt;
        let (dx, dy) = if dth.abs() < 1e-9 {
            // second-order expansion of the arc formulas
            let half = 0.5 * dth;
            (
                (self.vx - self.vy * half) * dt,
                (self.vy + self.vx * half) * dt,
            )
        } else {
            let (s, c) = dth.sin_cos();
            let a = s / self.omega;
            let b = (1.0 - c) / self.omega;
            (a * self.vx - b * self.vy, b * self.vx + a * self.vy)
        };
        Pose2D::new(dx, dy, dth)
    }

    /// Constant twist that would produce `delta` over `dt` (inverse of [`Twist2D::integrate`]).
    pub fn from_delta(delta: &Pose2D, dt: f64) -> Twist2D {
        let th = delta.theta;
        let omega = th / dt;
        if th.abs() < 1e-9 {
            let half = 0.5 * th;
            // invert the first-order arc map
            let vx = (delta.x + delta.y * half) / dt;
            let vy = (delta.y - delta.x * half) / dt;
            return Twist2D::new(vx, vy, omega);
        }
        let (s, c) = th.sin_cos();
        let a = s / omega;
        let b = (1.0 - c) / omega;
        let det = a * a + b * b;
        Twist2D::new(
            (a * delta.x + b * delta.y) / det,
            (-b * delta.x + a * delta.y) / det,
            omega,
        )
    }
}

impl Add for Twist2D {
    type Output = Twist2D;
    fn add(self, o: Twist2D) -> Twist2D {
        Twist2D::new(self.vx + o.vx, self.vy + o.vy, self.omega + o.omega)
    }
}

impl Sub for Twist2D {
    type Output = Twist2D;
    fn sub(self, o: Twist2D) -> Twist2D {
        Twist2D::new(self.vx - o.vx, self.vy - o.vy, self.omega - o.omega)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScanError {
    #[error("scan needs at least {min} beams, got {got}")]
    TooFewBeams { min: usize, got: usize },
    #[error("angle increment must be positive")]
    BadIncrement,
    #[error("range {value} at beam {index} outside [0, {range_max}]")]
    RangeOutOfBounds { index: usize, value: f64, range_max: f64 },
}

/// Bearing-indexed range array. No-return beams carry exactly `range_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub timestamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub const MIN_BEAMS: usize = 8;

    pub fn new(
        timestamp: f64,
        angle_min: f64,
        angle_increment: f64,
        range_max: f64,
        ranges: Vec<f64>,
    ) -> Result<Self, ScanError> {
        if ranges.len() < Self::MIN_BEAMS {
            return Err(ScanError::TooFewBeams { min: Self::MIN_BEAMS, got: ranges.len() });
        }
        if !(angle_increment > 0.0) {
            return Err(ScanError::BadIncrement);
        }
        for (index, &value) in ranges.iter().enumerate() {
            if !(0.0..=range_max).contains(&value) {
                return Err(ScanError::RangeOutOfBounds { index, value, range_max });
            }
        }
        Ok(Self { timestamp, angle_min, angle_increment, range_max, ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn bearing(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    pub fn is_return(&self, i: usize) -> bool {
        self.ranges[i] < self.range_max
    }

    pub fn same_layout(&self, other: &LaserScan) -> bool {
        self.ranges.len() == other.ranges.len()
            && self.angle_min == other.angle_min
            && self.angle_increment == other.angle_increment
    }

    /// Beam endpoints in the sensor frame, returns only.
    pub fn endpoints(&self) -> impl Iterator<Item = (usize, Point2)> + '_ {
        self.ranges.iter().enumerate().filter(|(i, _)| self.is_return(*i)).map(|(i, &r)| {
            let a = self.bearing(i);
            (i, Point2::new(r * a.cos(), r * a.sin()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Pose2D, b: &Pose2D, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && angle_diff(a.theta, b.theta).abs() < tol
    }

    #[test]
    fn compose_hand_rotated_offset() {
        let a = Pose2D::new(1.0, 0.0, PI / 2.0);
        let b = Pose2D::new(1.0, 0.0, 0.0);
        assert!(close(&a.compose(&b), &Pose2D::new(1.0, 1.0, PI / 2.0), 1e-12));
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose2D::new(0.3, -2.0, 2.5);
        assert_eq!(Pose2D::IDENTITY.compose(&p), p);
        assert!(close(&p.compose(&p.inverse()), &Pose2D::IDENTITY, 1e-9));
    }

    #[test]
    fn pose_delta_examples() {
        let p = Pose2D::new(1.0, 1.0, PI / 2.0);
        assert!(close(&pose_delta(&p, &p), &Pose2D::IDENTITY, 1e-12));
        let q = Pose2D::new(-4.0, 0.2, -1.0);
        assert!(close(&pose_delta(&Pose2D::IDENTITY, &q), &q, 1e-12));
        let to = Pose2D::new(1.0, 2.0, PI / 2.0);
        assert!(close(&pose_delta(&p, &to), &Pose2D::new(1.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn normalize_keeps_pi_and_maps_minus_pi() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn scan_validation() {
        assert_eq!(
            LaserScan::new(0.0, 0.0, 0.1, 5.0, vec![1.0; 4]),
            Err(ScanError::TooFewBeams { min: 8, got: 4 })
        );
        assert_eq!(LaserScan::new(0.0, 0.0, 0.0, 5.0, vec![1.0; 8]), Err(ScanError::BadIncrement));
        assert!(LaserScan::new(0.0, 0.0, 0.1, 5.0, vec![6.0; 8]).is_err());
        assert!(LaserScan::new(0.0, 0.0, 0.1, 5.0, vec![5.0; 8]).is_ok());
    }

    #[test]
    fn twist_integration_straight_and_arc() {
        let d = Twist2D::new(0.5, 0.0, 0.0).integrate(2.0);
        assert!(close(&d, &Pose2D::new(1.0, 0.0, 0.0), 1e-12));
        // quarter circle of radius 1
        let d = Twist2D::new(PI / 2.0, 0.0, PI / 2.0).integrate(1.0);
        assert!(close(&d, &Pose2D::new(1.0, 1.0, PI / 2.0), 1e-12));
    }

    fn pose() -> impl Strategy<Value = Pose2D> {
        (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(close(&l, &r, 1e-9));
        }

        #[test]
        fn delta_recomposes(a in pose(), b in pose()) {
            prop_assert!(close(&a.compose(&pose_delta(&a, &b)), &b, 1e-9));
        }

        #[test]
        fn normalization_is_idempotent(t in -1e4..1e4f64) {
            let n = normalize_angle(t);
            prop_assert!(n > -PI && n <= PI);
            prop_assert_eq!(normalize_angle(n), n);
        }

        #[test]
        fn twist_delta_roundtrip(vx in -1.0..1.0f64, vy in -1.0..1.0f64, w in -2.0..2.0f64) {
            let t = Twist2D::new(vx, vy, w);
            let back = Twist2D::from_delta(&t.integrate(0.05), 0.05);
            prop_assert!((back.vx - vx).abs() < 1e-9);
            prop_assert!((back.vy - vy).abs() < 1e-9);
            prop_assert!((back.omega - w).abs() < 1e-9);
        }
    }
}
