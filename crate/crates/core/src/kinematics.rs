//! Plant descriptions and body-twist ↔ actuator-speed maps.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose2D, Twist2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    DiffDrive,
    QuadPlanar,
}

impl PlantKind {
    pub fn actuator_count(self) -> usize {
        match self {
            PlantKind::DiffDrive => 2,
            PlantKind::QuadPlanar => 4,
        }
    }

    pub fn is_holonomic(self) -> bool {
        matches!(self, PlantKind::QuadPlanar)
    }
}

impl std::str::FromStr for PlantKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "diffdrive" => Ok(PlantKind::DiffDrive),
            "quadplanar" => Ok(PlantKind::QuadPlanar),
            other => Err(format!("unknown plant kind {other:?} (diffdrive|quadplanar)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("non-holonomic violation: differential drive cannot realize vy = {0}")]
    NonHolonomic(f64),
    #[error("expected {expected} actuator values, got {got}")]
    ActuatorCount { expected: usize, got: usize },
    #[error("invalid plant configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Everything hardware-specific about a robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// m, differential drive only.
    pub wheel_radius: f64,
    /// m, differential drive only.
    pub track_width: f64,
    /// Rows map (vx, vy, ω) to one actuator's speed, planar quadrotor only.
    pub mixing_matrix: [[f64; 3]; 4],
    /// Actuator speed per (duty · volt): `u = γ·k·V`.
    pub gamma: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub accel_linear: f64,
    pub accel_angular: f64,
    /// Collision disc radius, m.
    pub robot_radius: f64,
    /// Fixed LiDAR mounting pose in the robot frame.
    pub sensor_offset: Pose2D,
}

impl PlantConfig {
    pub fn diffdrive() -> Self {
        Self {
            kind: PlantKind::DiffDrive,
            wheel_radius: 0.05,
            track_width: 0.30,
            mixing_matrix: [[0.0; 3]; 4],
            gamma: 1.0,
            v_max: 0.35,
            omega_max: 1.2,
            accel_linear: 0.6,
            accel_angular: 2.0,
            robot_radius: 0.18,
            sensor_offset: Pose2D::new(0.05, 0.0, 0.0),
        }
    }

    pub fn quadplanar() -> Self {
        let arm = 0.2;
        Self {
            kind: PlantKind::QuadPlanar,
            wheel_radius: 0.0,
            track_width: 0.0,
            mixing_matrix: [
                [1.0, 1.0, arm],
                [1.0, -1.0, -arm],
                [-1.0, 1.0, -arm],
                [-1.0, -1.0, arm],
            ],
            gamma: 0.07,
            v_max: 0.35,
            omega_max: 1.2,
            accel_linear: 0.6,
            accel_angular: 2.0,
            robot_radius: 0.18,
            sensor_offset: Pose2D::new(0.0, 0.0, 0.0),
        }
    }

    pub fn for_kind(kind: PlantKind) -> Self {
        match kind {
            PlantKind::DiffDrive => Self::diffdrive(),
            PlantKind::QuadPlanar => Self::quadplanar(),
        }
    }

    pub fn actuator_count(&self) -> usize {
        self.kind.actuator_count()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let positive = [self.gamma, self.v_max, self.omega_max, self.accel_linear, self.accel_angular];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(KinematicsError::InvalidConfig("gamma and limits must be positive"));
        }
        match self.kind {
            PlantKind::DiffDrive if !(self.wheel_radius > 0.0 && self.track_width > 0.0) => {
                Err(KinematicsError::InvalidConfig("wheel radius and track width must be positive"))
            }
            PlantKind::QuadPlanar if self.mix_normal().determinant().abs() < 1e-12 => {
                Err(KinematicsError::InvalidConfig("mixing matrix must have rank 3"))
            }
            _ => Ok(()),
        }
    }

    fn mix(&self) -> SMatrix<f64, 4, 3> {
        SMatrix::<f64, 4, 3>::from_fn(|r, c| self.mixing_matrix[r][c])
    }

    fn mix_normal(&self) -> Matrix3<f64> {
        let m = self.mix();
        m.transpose() * m
    }

    /// Body twist → per-actuator speed setpoints.
    pub fn inverse_kinematics(&self, twist: &Twist2D) -> Result<Vec<f64>, KinematicsError> {
        match self.kind {
            PlantKind::DiffDrive => {
                if twist.vy != 0.0 {
                    return Err(KinematicsError::NonHolonomic(twist.vy));
                }
                let half = 0.5 * self.track_width * twist.omega;
                Ok(vec![(twist.vx - half) / self.wheel_radius, (twist.vx + half) / self.wheel_radius])
            }
            PlantKind::QuadPlanar => {
                let u = self.mix() * Vector3::new(twist.vx, twist.vy, twist.omega);
                Ok(u.iter().copied().collect())
            }
        }
    }

    /// Per-actuator speeds → body twist (least squares for the over-actuated plant).
    pub fn forward_kinematics(&self, speeds: &[f64]) -> Result<Twist2D, KinematicsError> {
        let n = self.actuator_count();
        if speeds.len() != n {
            return Err(KinematicsError::ActuatorCount { expected: n, got: speeds.len() });
        }
        match self.kind {
            PlantKind::DiffDrive => {
                let (l, r) = (speeds[0], speeds[1]);
                Ok(Twist2D::new(
                    0.5 * self.wheel_radius * (l + r),
                    0.0,
                    self.wheel_radius * (r - l) / self.track_width,
                ))
            }
            PlantKind::QuadPlanar => {
                let m = self.mix();
                let u = nalgebra::Vector4::from_column_slice(speeds);
                let inv = self
                    .mix_normal()
                    .try_inverse()
                    .ok_or(KinematicsError::InvalidConfig("mixing matrix must have rank 3"))?;
                let x = inv * (m.transpose() * u);
                Ok(Twist2D::new(x[0], x[1], x[2]))
            }
        }
    }

    /// Actuator speed produced by full duty at `volts`.
    pub fn actuator_speed_at_full_duty(&self, volts: f64) -> f64 {
        self.gamma * volts
    }

    /// Clamps a twist to the plant's velocity limits (and zeroes vy for non-holonomic plants).
    pub fn clamp_twist(&self, t: &Twist2D) -> Twist2D {
        let vy = if self.kind.is_holonomic() { t.vy.clamp(-self.v_max, self.v_max) } else { 0.0 };
        Twist2D::new(
            t.vx.clamp(-self.v_max, self.v_max),
            vy,
            t.omega.clamp(-self.omega_max, self.omega_max),
        )
    }
}
