//! Two-level actuation: a twist-level correction on top of per-actuator PID,
//! followed by battery-droop duty compensation.

use thiserror::Error;

use crate::geometry::Twist2D;
use crate::kinematics::{KinematicsError, PlantConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("battery sense fault: measured voltage {0} V")]
    BatterySenseFault(f64),
    #[error("dt must be positive, got {0}")]
    BadTimestep(f64),
}

/// Proportional twist correction from odometry feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelController {
    pub gain: f64,
    pub v_max: f64,
    pub vy_max: f64,
    pub omega_max: f64,
    /// Set when the last observed twist was unusable.
    pub dropout: bool,
    pub dropouts: u64,
}

impl HighLevelController {
    pub fn new(plant: &PlantConfig) -> Self {
        let vy_max = if plant.kind.is_holonomic() { plant.v_max } else { 0.0 };
        Self { gain: 0.5, v_max: plant.v_max, vy_max, omega_max: plant.omega_max, dropout: false, dropouts: 0 }
    }

    /// `v_r + K·(v_r − v_o)`, clamped; a non-finite `v_o` passes `v_r` through.
    pub fn step(&mut self, v_r: &Twist2D, v_o: &Twist2D) -> Twist2D {
        self.dropout = !v_o.is_finite();
        let raw = if self.dropout {
            self.dropouts += 1;
            *v_r
        } else {
            *v_r + (*v_r - *v_o).scale(self.gain)
        };
        Twist2D::new(
            raw.vx.clamp(-self.v_max, self.v_max),
            raw.vy.clamp(-self.vy_max, self.vy_max),
            raw.omega.clamp(-self.omega_max, self.omega_max),
        )
    }
}

pub fn high_level_step(state: &mut HighLevelController, v_r: &Twist2D, v_o: &Twist2D) -> Twist2D {
    state.step(v_r, v_o)
}

/// Per-actuator setpoints for a body twist.
pub fn inverse_kinematics(plant: &PlantConfig, twist: &Twist2D) -> Result<Vec<f64>, ControlError> {
    Ok(plant.inverse_kinematics(twist)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    /// Per second: the integral term is `ki·∫e dt`.
    pub ki: f64,
    pub kd: f64,
    /// Bound on `|∫e dt|`.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 0.2, ki: 8.0, kd: 0.0, integral_limit: 0.125 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: 0.0, prev_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One update; output clamped to `[-1, 1]`. A non-finite `measured` holds the integral.
    pub fn step(&mut self, setpoint: f64, measured: f64, dt: f64) -> f64 {
        let g = self.gains;
        let e = if measured.is_finite() { setpoint - measured } else { 0.0 };
        let lim = g.integral_limit;
        self.integral = (self.integral + e * dt).clamp(-lim, lim);
        let deriv = match self.prev_error {
            Some(p) if g.kd != 0.0 => (e - p) / dt,
            _ => 0.0,
        };
        self.prev_error = Some(e);
        (g.kp * e + g.ki * self.integral + g.kd * deriv).clamp(-1.0, 1.0)
    }
}

pub fn pid_step(pid: &mut Pid, setpoint: f64, measured: f64, dt: f64) -> f64 {
    pid.step(setpoint, measured, dt)
}

/// `k·(2V − V′)/V` without clamping.
pub fn battery_correct_raw(k: f64, v_nominal: f64, v_measured: f64) -> f64 {
    k * (2.0 * v_nominal - v_measured) / v_nominal
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryCompensator {
    pub v_nominal: f64,
    pub v_measured: f64,
    pub clamp_events: u64,
}

impl BatteryCompensator {
    pub fn new(v_nominal: f64) -> Self {
        Self { v_nominal, v_measured: v_nominal, clamp_events: 0 }
    }

    pub fn set_voltage(&mut self, v: f64) {
        self.v_measured = v;
    }

    pub fn correct(&mut self, k: f64) -> Result<f64, ControlError> {
        if !(self.v_measured > 0.0) {
            return Err(ControlError::BatterySenseFault(self.v_measured));
        }
        let k2 = battery_correct_raw(k, self.v_nominal, self.v_measured);
        if k2.abs() > 1.0 {
            self.clamp_events += 1;
        }
        Ok(k2.clamp(-1.0, 1.0))
    }
}

pub fn battery_correct(comp: &mut BatteryCompensator, k: f64) -> Result<f64, ControlError> {
    comp.correct(k)
}

/// What one low-level tick produced, per actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelOutput {
    pub setpoints: Vec<f64>,
    pub duty_pre: Vec<f64>,
    pub duty_post: Vec<f64>,
}

/// The only hardware-specific unit: IK, PID per actuator and battery correction.
#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelController {
    pub plant: PlantConfig,
    pub pids: Vec<Pid>,
    pub battery: BatteryCompensator,
    pub compensate: bool,
}

impl LowLevelController {
    pub fn new(plant: PlantConfig, gains: PidGains, v_nominal: f64) -> Self {
        let pids = vec![Pid::new(gains); plant.actuator_count()];
        Self { plant, pids, battery: BatteryCompensator::new(v_nominal), compensate: true }
    }

    pub fn reset(&mut self) {
        self.pids.iter_mut().for_each(Pid::reset);
    }

    /// Actuator speed at full duty and nominal voltage; PID runs on speeds divided by this.
    pub fn speed_scale(&self) -> f64 {
        self.plant.actuator_speed_at_full_duty(self.battery.v_nominal)
    }

    /// `measured` is the odometry twist mapped through IK; `None` during a dropout.
    pub fn step(&mut self, command: &Twist2D, measured: Option<&Twist2D>, volts: f64, dt: f64) -> Result<LowLevelOutput, ControlError> {
        if !(dt > 0.0) {
            return Err(ControlError::BadTimestep(dt));
        }
        let setpoints = self.plant.inverse_kinematics(command)?;
        let n = setpoints.len();
        let meas = match measured {
            Some(t) if t.is_finite() => {
                let t = if self.plant.kind.is_holonomic() { *t } else { Twist2D::new(t.vx, 0.0, t.omega) };
                self.plant.inverse_kinematics(&t)?
            }
            _ => vec![f64::NAN; n],
        };
        let scale = self.speed_scale();
        let duty_pre: Vec<f64> = self
            .pids
            .iter_mut()
            .zip(setpoints.iter().zip(&meas))
            .map(|(pid, (s, m))| pid.step(s / scale, m / scale, dt))
            .collect();
        self.battery.set_voltage(volts);
        let duty_post = if self.compensate {
            duty_pre.iter().map(|&k| self.battery.correct(k)).collect::<Result<Vec<_>, _>>()?
        } else {
            duty_pre.clone()
        };
        Ok(LowLevelOutput { setpoints, duty_pre, duty_post })
    }
}

/// High-level correction feeding the low-level loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationController {
    pub high: HighLevelController,
    pub low: LowLevelController,
}

impl ActuationController {
    pub fn new(plant: PlantConfig, gains: PidGains, v_nominal: f64) -> Self {
        Self { high: HighLevelController::new(&plant), low: LowLevelController::new(plant, gains, v_nominal) }
    }

    pub fn reset(&mut self) {
        self.low.reset();
    }

    pub fn step(&mut self, v_r: &Twist2D, v_o: Option<&Twist2D>, volts: f64, dt: f64) -> Result<(Twist2D, LowLevelOutput), ControlError> {
        let nan = Twist2D::new(f64::NAN, f64::NAN, f64::NAN);
        let observed = v_o.copied().unwrap_or(nan);
        let cmd = self.high.step(v_r, &observed);
        let out = self.low.step(&cmd, v_o, volts, dt)?;
        Ok((cmd, out))
    }
}
