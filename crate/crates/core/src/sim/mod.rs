//! Deterministic planar world simulator: plant dynamics, LiDAR and battery.
//!
//! The simulator is the only place that knows the true pose. The navigation
//! stack sees nothing but the scans it emits.

mod lidar;
mod world;

pub use lidar::{raycast_scan, LidarConfig};
pub use world::{Segment, World, WorldError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{LaserScan, Pose2D, Twist2D};
use crate::kinematics::PlantConfig;

/// Per-actuator PWM duty values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub duty: Vec<f64>,
}

impl ActuatorCommand {
    pub fn new(duty: Vec<f64>) -> Self {
        Self { duty }
    }

    pub fn zeros(n: usize) -> Self {
        Self { duty: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub v_nominal: f64,
    pub v_now: f64,
    /// Integrated Σ|duty|·dt, a stand-in for amp-seconds.
    pub capacity_drawn: f64,
    /// Volts lost per unit of `capacity_drawn`.
    pub droop_rate: f64,
}

impl BatteryState {
    /// 14.8 V pack; at ~0.8 average Σ|duty| a ten minute run sags to about 13.0 V.
    pub fn lipo_4s() -> Self {
        Self { v_nominal: 14.8, v_now: 14.8, capacity_drawn: 0.0, droop_rate: 0.00375 }
    }

    pub fn without_droop(mut self) -> Self {
        self.droop_rate = 0.0;
        self
    }

    fn drain(&mut self, draw: f64) {
        self.capacity_drawn += draw;
        let floor = 0.1 * self.v_nominal;
        self.v_now = (self.v_now - self.droop_rate * draw).max(floor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Actuator speed noise σ as a fraction of the commanded speed.
    pub actuator_frac: f64,
    pub lidar: LidarConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { actuator_frac: 0.02, lidar: LidarConfig::default() }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { actuator_frac: 0.0, lidar: LidarConfig { noise_sigma: 0.0, ..LidarConfig::default() } }
    }
}

/// Snapshot of everything that evolves during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub true_pose: Pose2D,
    pub true_twist: Twist2D,
    pub battery: BatteryState,
    pub tick: u64,
    pub time: f64,
    pub rng_seed: u64,
    pub contacts: u64,
    pub faults: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("non-finite actuator command")]
    NonFiniteCommand,
    #[error("command has {got} actuators, plant has {expected}")]
    ActuatorCount { expected: usize, got: usize },
    #[error("dt {0} outside (0, 0.1]")]
    BadTimestep(f64),
}

pub struct Simulator {
    pub world: World,
    pub plant: PlantConfig,
    pub noise: NoiseConfig,
    state: SimState,
    rng: ChaCha8Rng,
    last_speeds: Vec<f64>,
}

impl Simulator {
    pub fn new(world: World, plant: PlantConfig, noise: NoiseConfig, battery: BatteryState, spawn: Pose2D, seed: u64) -> Self {
        let n = plant.actuator_count();
        Self {
            world,
            plant,
            noise,
            state: SimState {
                true_pose: spawn,
                true_twist: Twist2D::ZERO,
                battery,
                tick: 0,
                time: 0.0,
                rng_seed: seed,
                contacts: 0,
                faults: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_speeds: vec![0.0; n],
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn true_pose(&self) -> Pose2D {
        self.state.true_pose
    }

    pub fn battery_voltage(&self) -> f64 {
        self.state.battery.v_now
    }

    /// Teleports the robot; test fixtures only.
    pub fn set_pose(&mut self, pose: Pose2D) {
        self.state.true_pose = pose;
    }

    /// Forces the pack voltage, e.g. to script a droop profile.
    pub fn set_battery_voltage(&mut self, volts: f64) {
        self.state.battery.v_now = volts;
    }

    pub fn sensor_pose(&self) -> Pose2D {
        self.state.true_pose.compose(&self.plant.sensor_offset)
    }

    /// Scan from the current true pose, stamped with the simulation clock.
    pub fn scan(&mut self) -> LaserScan {
        let pose = self.sensor_pose();
        let mut scan = raycast_scan(&self.world, &pose, &self.noise.lidar, &mut self.rng);
        scan.timestamp = self.state.time;
        scan
    }

    /// Speeds the actuators would achieve for `cmd` right now: `γ·duty·V` plus noise.
    /// Oracle use only; the navigation stack never reads plant-side speeds.
    pub fn measured_actuator_speeds(&mut self, cmd: &ActuatorCommand) -> Vec<f64> {
        let gain = self.plant.gamma * self.state.battery.v_now;
        let frac = self.noise.actuator_frac;
        cmd.duty
            .iter()
            .map(|&d| {
                let u = gain * d.clamp(-1.0, 1.0);
                if frac > 0.0 && u != 0.0 {
                    u + Normal::new(0.0, frac * u.abs()).expect("finite sigma").sample(&mut self.rng)
                } else {
                    u
                }
            })
            .collect()
    }

    /// Speeds realized during the last step.
    pub fn last_actuator_speeds(&self) -> &[f64] {
        &self.last_speeds
    }

    pub fn step(&mut self, cmd: &ActuatorCommand, dt: f64) -> Result<(), SimError> {
        let n = self.plant.actuator_count();
        let reject = if !(dt > 0.0 && dt <= 0.1) {
            Some(SimError::BadTimestep(dt))
        } else if cmd.duty.len() != n {
            Some(SimError::ActuatorCount { expected: n, got: cmd.duty.len() })
        } else if cmd.duty.iter().any(|d| !d.is_finite()) {
            Some(SimError::NonFiniteCommand)
        } else {
            None
        };
        if let Some(e) = reject {
            self.state.faults += 1;
            return Err(e);
        }

        let speeds = self.measured_actuator_speeds(cmd);
        let target = self
            .plant
            .forward_kinematics(&speeds)
            .expect("actuator count checked above");
        let twist = limit_accel(&self.state.true_twist, &target, &self.plant, dt);

        let start = self.state.true_pose;
        let full = start.compose(&twist.integrate(dt));
        let radius = self.plant.robot_radius;
        let next = if self.world.clearance(full.position()) >= radius {
            self.state.true_twist = twist;
            full
        } else {
            self.state.contacts += 1;
            // largest collision-free fraction of the arc; rotation still completes
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                let p = start.compose(&twist.integrate(mid * dt));
                if self.world.clearance(p.position()) >= radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = start.compose(&twist.integrate(lo * dt));
            self.state.true_twist = Twist2D::new(0.0, 0.0, twist.omega);
            Pose2D::new(p.x, p.y, full.theta)
        };

        self.state.true_pose = next;
        let draw: f64 = cmd.duty.iter().map(|d| d.clamp(-1.0, 1.0).abs()).sum::<f64>() * dt;
        self.state.battery.drain(draw);
        self.state.tick += 1;
        self.state.time += dt;
        self.last_speeds = speeds;
        Ok(())
    }
}

fn limit_accel(current: &Twist2D, target: &Twist2D, plant: &PlantConfig, dt: f64) -> Twist2D {
    let lin = plant.accel_linear * dt;
    let ang = plant.accel_angular * dt;
    let step = |c: f64, t: f64, lim: f64| c + (t - c).clamp(-lim, lim);
    Twist2D::new(
        step(current.vx, target.vx, lin),
        step(current.vy, target.vy, lin),
        step(current.omega, target.omega, ang),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::kinematics::PlantConfig;

    fn open_sim(plant: PlantConfig, noise: NoiseConfig) -> Simulator {
        let mut p = plant;
        p.accel_linear = 1e6;
        p.accel_angular = 1e6;
        Simulator::new(World::empty(), p, noise, BatteryState::lipo_4s(), Pose2D::IDENTITY, 7)
    }

    #[test]
    fn zero_duty_changes_nothing() {
        let mut sim = open_sim(PlantConfig::diffdrive(), NoiseConfig::default());
        let before = sim.state().clone();
        for _ in 0..10 {
            sim.step(&ActuatorCommand::zeros(2), 0.05).unwrap();
        }
        assert_eq!(sim.true_pose(), before.true_pose);
        assert_eq!(sim.state().battery.v_now, before.battery.v_now);
    }

    #[test]
    fn equal_duties_drive_straight() {
        let plant = PlantConfig::diffdrive();
        let mut sim = open_sim(plant.clone(), NoiseConfig::noiseless());
        sim.state.battery.droop_rate = 0.0;
        let d = 0.3;
        for _ in 0..20 {
            sim.step(&ActuatorCommand::new(vec![d, d]), 0.05).unwrap();
        }
        let speed = plant.gamma * d * 14.8 * plant.wheel_radius;
        let p = sim.true_pose();
        assert!((p.x - speed * 1.0).abs() < 1e-9, "{p:?}");
        assert!(p.y.abs() < 1e-12 && p.theta == 0.0);
    }

    #[test]
    fn opposite_duties_spin_in_place() {
        let plant = PlantConfig::diffdrive();
        let mut sim = open_sim(plant.clone(), NoiseConfig::noiseless());
        sim.state.battery.droop_rate = 0.0;
        let d = 0.1;
        sim.step(&ActuatorCommand::new(vec![-d, d]), 0.05).unwrap();
        let p = sim.true_pose();
        let omega = 2.0 * plant.gamma * d * 14.8 * plant.wheel_radius / plant.track_width;
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.theta - omega * 0.05).abs() < 1e-12);
    }

    #[test]
    fn non_finite_command_rejected() {
        let mut sim = open_sim(PlantConfig::diffdrive(), NoiseConfig::default());
        let before = sim.state().clone();
        assert_eq!(sim.step(&ActuatorCommand::new(vec![f64::NAN, 0.0]), 0.05), Err(SimError::NonFiniteCommand));
        assert_eq!(sim.state().faults, 1);
        assert_eq!(sim.state().true_pose, before.true_pose);
        assert!(sim.step(&ActuatorCommand::zeros(2), 0.2).is_err());
    }

    #[test]
    fn commanded_speed_oracle() {
        let mut plant = PlantConfig::diffdrive();
        plant.gamma = 0.1;
        let mut sim = open_sim(plant, NoiseConfig::noiseless());
        assert_eq!(sim.measured_actuator_speeds(&ActuatorCommand::zeros(2)), vec![0.0, 0.0]);
        let u = sim.measured_actuator_speeds(&ActuatorCommand::new(vec![0.5, 0.5]));
        assert!((u[0] - 0.74).abs() < 1e-12 && (u[1] - 0.74).abs() < 1e-12);
    }

    #[test]
    fn speed_noise_is_unbiased() {
        let mut plant = PlantConfig::diffdrive();
        plant.gamma = 0.1;
        let mut sim = open_sim(plant, NoiseConfig::default());
        let n = 1000;
        let mean = (0..n)
            .map(|_| sim.measured_actuator_speeds(&ActuatorCommand::new(vec![0.5, 0.5]))[0])
            .sum::<f64>()
            / n as f64;
        let sigma = 0.02 * 0.74;
        assert!((mean - 0.74).abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn droop_is_monotone() {
        let mut sim = open_sim(PlantConfig::diffdrive(), NoiseConfig::default());
        let mut last = sim.battery_voltage();
        for i in 0..200 {
            let d = if i % 3 == 0 { 0.0 } else { 0.4 };
            sim.step(&ActuatorCommand::new(vec![d, -d]), 0.05).unwrap();
            assert!(sim.battery_voltage() <= last);
            last = sim.battery_voltage();
        }
        assert!(last < 14.8);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut sim = Simulator::new(
                World::fig5(),
                PlantConfig::diffdrive(),
                NoiseConfig::default(),
                BatteryState::lipo_4s(),
                Pose2D::new(1.5, 1.5, 0.0),
                42,
            );
            let mut scans = Vec::new();
            for i in 0..50 {
                let d = 0.2 + 0.01 * (i % 7) as f64;
                sim.step(&ActuatorCommand::new(vec![d, d + 0.05]), 0.05).unwrap();
                scans.push(sim.scan());
            }
            (sim.state().clone(), scans)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wall_stops_translation() {
        let mut world = World::empty();
        world.add_box(Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0));
        let plant = PlantConfig::diffdrive();
        let mut sim = Simulator::new(world, plant.clone(), NoiseConfig::noiseless(), BatteryState::lipo_4s(), Pose2D::IDENTITY, 1);
        for _ in 0..200 {
            sim.step(&ActuatorCommand::new(vec![1.0, 1.0]), 0.1).unwrap();
            assert!(sim.world.clearance(sim.true_pose().position()) >= plant.robot_radius - 1e-9);
        }
        assert!(sim.state().contacts > 0);
        assert!(sim.true_pose().x > 1.0 - plant.robot_radius - 1e-3);
    }
}
