//! Closed-loop runs against the simulator: navigation, scripted mapping laps,
//! odometry and localization traces, and the battery experiment.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ActuationController, PidGains};
use crate::geometry::{angle_diff, pose_delta, Point2, Pose2D, Twist2D};
use crate::grid::{GridGeometry, OccupancyGrid};
use crate::kinematics::PlantConfig;
use crate::mapper::{Mapper, MapperConfig};
use crate::mcl::{Localizer, LocalizerConfig, MclError};
use crate::nav::{evaluate_goal_error, GoalError, Mode, NavConfig, Navigator};
use crate::odometry::{OdometryAccumulator, RangeFlowConfig};
use crate::sim::{ActuatorCommand, BatteryState, NoiseConfig, Simulator, World};

pub const CONTROL_DT: f64 = 0.05;

/// Occupied-cell intersection over union.
pub fn occupied_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> f64 {
    let (ma, mb) = (a.occupied_mask(), b.occupied_mask());
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Drives the plant through one control period: controller, then simulator.
pub(crate) fn actuate(sim: &mut Simulator, ctrl: &mut ActuationController, command: &Twist2D, observed: Option<&Twist2D>, dt: f64) {
    let volts = sim.battery_voltage();
    let duty = match ctrl.step(command, observed, volts, dt) {
        Ok((_, out)) => out.duty_post,
        Err(_) => vec![0.0; sim.plant.actuator_count()],
    };
    sim.step(&ActuatorCommand::new(duty), dt).expect("controller emits finite duties of the right length");
}

fn brake(sim: &mut Simulator, ctrl: &mut ActuationController, dt: f64) {
    ctrl.reset();
    let n = sim.plant.actuator_count();
    sim.step(&ActuatorCommand::zeros(n), dt).expect("zero duty is valid");
}

#[derive(Debug, Clone)]
pub struct NavRun {
    pub plant: PlantConfig,
    pub world: World,
    pub map: OccupancyGrid,
    pub spawn: Pose2D,
    pub goal: Pose2D,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub battery: BatteryState,
    pub gains: PidGains,
    /// Simulated seconds before the run counts as a failure.
    pub time_limit: f64,
    /// Initial pose uncertainty handed to the localizer (σ_xy, σ_θ).
    pub init_sigma: (f64, f64),
}

impl NavRun {
    pub fn new(plant: PlantConfig, world: World, map: OccupancyGrid, spawn: Pose2D, goal: Pose2D, seed: u64) -> Self {
        Self {
            plant,
            world,
            map,
            spawn,
            goal,
            seed,
            noise: NoiseConfig::default(),
            battery: BatteryState::lipo_4s(),
            gains: PidGains::default(),
            time_limit: 60.0,
            init_sigma: (0.05, 0.05),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NavReport {
    pub seed: u64,
    pub goal: [f64; 3],
    pub final_mode: Mode,
    pub reached: bool,
    pub error_true: GoalError,
    pub error_est: GoalError,
    pub sim_time: f64,
    pub wall_time: f64,
    pub contacts: u64,
    /// Largest per-tick command change beyond the acceleration limit.
    pub accel_excess: f64,
    pub recoveries: u32,
    pub replans: u32,
    pub path_length: f64,
    pub ticks: u64,
}

impl NavReport {
    pub const CSV_HEADER: &'static str =
        "seed,goal_x,goal_y,goal_theta,mode,reached,d_e,alpha_deg,d_e_est,alpha_est_deg,sim_time,wall_time,contacts,recoveries,replans,path_length";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.4},{},{},{:.4},{:.2},{:.4},{:.2},{:.2},{:.3},{},{},{},{:.3}",
            self.seed,
            self.goal[0],
            self.goal[1],
            self.goal[2],
            self.final_mode,
            self.reached,
            self.error_true.d_e,
            self.error_true.alpha,
            self.error_est.d_e,
            self.error_est.alpha,
            self.sim_time,
            self.wall_time,
            self.contacts,
            self.recoveries,
            self.replans,
            self.path_length
        )
    }
}

/// Goals used by the navigation suite, reached from the "start" spawn. Two sit
/// behind the blocks so the straight line is obstructed.
pub fn fig5_goals() -> [Pose2D; 4] {
    [
        Pose2D::new(8.0, 2.5, 0.0),
        Pose2D::new(3.0, 8.0, std::f64::consts::FRAC_PI_2),
        Pose2D::new(8.5, 8.5, std::f64::consts::FRAC_PI_2),
        Pose2D::new(5.0, 5.0, -std::f64::consts::FRAC_PI_2),
    ]
}

/// One spawn-to-goal run of the full stack.
pub fn run_navigation(run: &NavRun) -> NavReport {
    let clock = Instant::now();
    let dt = CONTROL_DT;
    let plant = run.plant.clone();
    let mut sim = Simulator::new(run.world.clone(), plant.clone(), run.noise, run.battery, run.spawn, run.seed);
    let mut nav = Navigator::new(plant.clone(), NavConfig::for_plant(&plant), run.seed ^ 0x9e37_79b9);
    let mut ctrl = ActuationController::new(plant.clone(), run.gains, run.battery.v_nominal);
    nav.load_map(run.map.clone()).expect("navigation map has obstacles and free space");
    nav.initialize_pose(run.spawn, run.init_sigma.0, run.init_sigma.1).expect("map loaded");

    let mut path_length = 0.0;
    let mut accel_excess: f64 = 0.0;
    let mut prev = Twist2D::ZERO;
    let mut contacts = 0;
    let goal_ok = nav.set_goal(run.goal).is_ok();
    let mut terminal_at = None;
    let max_ticks = (run.time_limit / dt).round() as u64;
    while goal_ok && sim.state().tick < max_ticks {
        let scan = sim.scan();
        let out = nav.tick(Some(&scan), dt);
        let d = out.command - prev;
        accel_excess = accel_excess
            .max(d.vx.abs() - plant.accel_linear * dt)
            .max(d.vy.abs() - plant.accel_linear * dt)
            .max(d.omega.abs() - plant.accel_angular * dt);
        prev = out.command;
        if out.mode.is_terminal() {
            terminal_at = Some(sim.state().time);
            break;
        }
        let before = sim.true_pose();
        let c0 = sim.state().contacts;
        actuate(&mut sim, &mut ctrl, &out.command, nav.observed_twist().as_ref(), dt);
        if out.mode == Mode::Executing {
            contacts += sim.state().contacts - c0;
        }
        path_length += before.position().distance(sim.true_pose().position());
    }
    // let the plant come to rest before measuring
    for _ in 0..10 {
        brake(&mut sim, &mut ctrl, dt);
    }
    let mode = nav.mode();
    NavReport {
        seed: run.seed,
        goal: run.goal.to_array(),
        final_mode: mode,
        reached: mode == Mode::GoalReached,
        error_true: evaluate_goal_error(&sim.true_pose(), &run.goal),
        error_est: evaluate_goal_error(&nav.pose_estimate(), &run.goal),
        sim_time: terminal_at.unwrap_or(sim.state().time),
        wall_time: clock.elapsed().as_secs_f64(),
        contacts,
        accel_excess: accel_excess.max(0.0),
        recoveries: nav.recoveries,
        replans: nav.replans,
        path_length,
        ticks: nav.ticks(),
    }
}

/// Operator route for a mapping drive: the operator steers toward each
/// waypoint in turn while watching the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopScript {
    pub speed: f64,
    pub waypoints: Vec<[f64; 2]>,
}

impl TeleopScript {
    /// A lap of the two-block demo room that sees every face of every wall.
    pub fn fig5_lap() -> Self {
        Self {
            speed: 0.25,
            waypoints: vec![
                [5.0, 1.5],
                [8.5, 1.5],
                [8.5, 5.0],
                [8.5, 8.5],
                [5.0, 8.5],
                [1.5, 8.5],
                [1.5, 5.0],
                [5.0, 4.5],
                [4.5, 6.5],
                [1.5, 4.5],
                [1.5, 1.5],
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Teleop twist steering `pose` toward `target`.
pub fn operator_twist(plant: &PlantConfig, pose: &Pose2D, target: Point2, speed: f64) -> Twist2D {
    let to = target - pose.position();
    let bearing = angle_diff(to.y.atan2(to.x), pose.theta);
    let omega = (2.0 * bearing).clamp(-plant.omega_max, plant.omega_max);
    let v = if bearing.abs() > 0.6 { 0.0 } else { speed * bearing.cos() * (to.norm() / 0.3).min(1.0) };
    Twist2D::new(v, 0.0, omega)
}

#[derive(Debug, Clone)]
pub struct MappingReport {
    pub map: OccupancyGrid,
    pub ground_truth: OccupancyGrid,
    pub iou: f64,
    pub updates: usize,
    pub sim_time: f64,
    pub contacts: u64,
    pub final_pose_error: f64,
}

/// Drives `script` with teleop commands while the mapper runs on scans and
/// scan odometry only.
pub fn mapping_lap(world: &World, plant: &PlantConfig, script: &TeleopScript, spawn: Pose2D, seed: u64, noise: NoiseConfig) -> MappingReport {
    let cfg = NavConfig::for_plant(plant);
    let geometry: GridGeometry = world.map_geometry(cfg.mapper.resolution, 0.5);
    let mut nav = Navigator::new(plant.clone(), cfg, seed ^ 0x5eed);
    nav.set_mapping_geometry(geometry);
    let mut sim = Simulator::new(world.clone(), plant.clone(), noise, BatteryState::lipo_4s(), spawn, seed);
    let mut ctrl = ActuationController::new(plant.clone(), PidGains::default(), 14.8);
    nav.initialize_pose_unmapped(spawn);
    nav.set_mode(Mode::Mapping).expect("IDLE to MAPPING");

    let dt = CONTROL_DT;
    let mut remaining = script.waypoints.iter().map(|w| Point2::new(w[0], w[1])).collect::<Vec<_>>().into_iter().peekable();
    let limit = 20_000;
    while let Some(&target) = remaining.peek() {
        if sim.state().tick > limit {
            break;
        }
        let truth = sim.true_pose();
        if truth.position().distance(target) < 0.15 {
            remaining.next();
            continue;
        }
        nav.set_teleop(operator_twist(plant, &truth, target, script.speed));
        let scan = sim.scan();
        let out = nav.tick(Some(&scan), dt);
        actuate(&mut sim, &mut ctrl, &out.command, nav.observed_twist().as_ref(), dt);
    }
    for _ in 0..10 {
        nav.set_teleop(Twist2D::ZERO);
        let scan = sim.scan();
        let out = nav.tick(Some(&scan), dt);
        actuate(&mut sim, &mut ctrl, &out.command, nav.observed_twist().as_ref(), dt);
    }
    let updates = nav.mapper().map_or(0, |m| m.updates);
    nav.set_mode(Mode::Idle).expect("MAPPING to IDLE");
    let map = nav.map().expect("mapping produced a map").clone();
    let ground_truth = world.rasterize(geometry);
    MappingReport {
        iou: occupied_iou(&map, &ground_truth),
        final_pose_error: nav.pose_estimate().position().distance(sim.true_pose().position()),
        map,
        ground_truth,
        updates,
        sim_time: sim.state().time,
        contacts: sim.state().contacts,
    }
}

/// Mapper-only variant driven directly (no navigator), for experiments on the filter itself.
pub fn mapper_for(world: &World, spawn: Pose2D, plant: &PlantConfig, cfg: MapperConfig) -> Mapper {
    Mapper::new(world.map_geometry(cfg.resolution, 0.5), spawn, plant.sensor_offset, cfg).expect("valid mapper config")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomRow {
    pub tick: u64,
    pub truth: Twist2D,
    pub estimate: Twist2D,
    pub rms: f64,
}

impl OdomRow {
    pub const CSV_HEADER: &'static str = "tick,vx_t,vx_e,vy_t,vy_e,w_t,w_e,rms";
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.5},{:.5},{:.5},{:.5},{:.5},{:.5},{:.6}",
            self.tick, self.truth.vx, self.estimate.vx, self.truth.vy, self.estimate.vy, self.truth.omega, self.estimate.omega, self.rms
        )
    }
}

/// Holds a body twist open-loop and compares scan odometry against the plant.
pub fn odom_eval(world: &World, plant: &PlantConfig, spawn: Pose2D, twist: Twist2D, steps: usize, seed: u64, noise: NoiseConfig) -> Vec<OdomRow> {
    let dt = CONTROL_DT;
    let mut sim = Simulator::new(world.clone(), plant.clone(), noise, BatteryState::lipo_4s().without_droop(), spawn, seed);
    let cfg = RangeFlowConfig { constrain_vy: !plant.kind.is_holonomic(), sensor_offset: plant.sensor_offset, ..RangeFlowConfig::default() };
    let mut odo = OdometryAccumulator::new(sim.scan(), plant.sensor_offset, cfg);
    let scale = plant.actuator_speed_at_full_duty(14.8);
    let duty: Vec<f64> = plant.inverse_kinematics(&plant.clamp_twist(&twist)).expect("clamped twist is realizable").iter().map(|u| u / scale).collect();
    let mut rows = Vec::with_capacity(steps);
    for tick in 1..=steps as u64 {
        let before = sim.true_pose();
        sim.step(&ActuatorCommand::new(duty.clone()), dt).expect("valid duty");
        let truth = Twist2D::from_delta(&pose_delta(&before, &sim.true_pose()), dt);
        let (estimate, rms) = match odo.accumulate(sim.scan()) {
            Ok(_) => (odo.last_twist, odo.last_estimate.as_ref().map_or(f64::NAN, |e| e.residual_rms)),
            Err(_) => (Twist2D::new(f64::NAN, f64::NAN, f64::NAN), f64::NAN),
        };
        rows.push(OdomRow { tick, truth, estimate, rms });
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeRow {
    pub tick: u64,
    pub truth: Pose2D,
    pub estimate: Pose2D,
    pub n_eff: f64,
}

impl LocalizeRow {
    pub const CSV_HEADER: &'static str = "tick,x_true,y_true,theta_true,x_est,y_est,theta_est,n_eff";
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.1}",
            self.tick, self.truth.x, self.truth.y, self.truth.theta, self.estimate.x, self.estimate.y, self.estimate.theta, self.n_eff
        )
    }

    pub fn position_error(&self) -> f64 {
        self.truth.position().distance(self.estimate.position())
    }

    pub fn heading_error_deg(&self) -> f64 {
        angle_diff(self.truth.theta, self.estimate.theta).abs().to_degrees()
    }
}

/// Global localization from a uniform cloud along a teleop route, with a
/// forced measurement update every `ticks_per_update` ticks.
pub fn localize_run(
    world: &World,
    map: &OccupancyGrid,
    plant: &PlantConfig,
    script: &TeleopScript,
    spawn: Pose2D,
    updates: usize,
    ticks_per_update: usize,
    seed: u64,
    config: LocalizerConfig,
) -> Result<Vec<LocalizeRow>, MclError> {
    let dt = CONTROL_DT;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10ca1);
    let mut sim = Simulator::new(world.clone(), plant.clone(), NoiseConfig::default(), BatteryState::lipo_4s(), spawn, seed);
    let mut ctrl = ActuationController::new(plant.clone(), PidGains::default(), 14.8);
    let mut localizer = Localizer::new(map, config, plant.sensor_offset)?;
    localizer.init_uniform(plant.robot_radius, &mut rng);
    let ocfg = RangeFlowConfig { constrain_vy: !plant.kind.is_holonomic(), sensor_offset: plant.sensor_offset, ..RangeFlowConfig::default() };
    let mut odo = OdometryAccumulator::new(sim.scan(), plant.sensor_offset, ocfg);
    let mut targets = script.waypoints.iter().map(|w| Point2::new(w[0], w[1])).cycle();
    let mut target = targets.next().expect("script has waypoints");
    let mut rows = Vec::with_capacity(updates);
    let mut pending = Pose2D::IDENTITY;
    let mut observed = Some(Twist2D::ZERO);
    while rows.len() < updates {
        for _ in 0..ticks_per_update {
            let truth = sim.true_pose();
            if truth.position().distance(target) < 0.15 {
                target = targets.next().expect("cycled");
            }
            let cmd = operator_twist(plant, &truth, target, script.speed);
            actuate(&mut sim, &mut ctrl, &cmd, observed.as_ref(), dt);
            match odo.accumulate(sim.scan()) {
                Ok(d) => {
                    pending = pending.compose(&d);
                    observed = Some(odo.last_twist);
                }
                Err(_) => observed = None,
            }
        }
        let scan = sim.scan();
        localizer.update(&pending, &scan, true, &mut rng);
        pending = Pose2D::IDENTITY;
        rows.push(LocalizeRow { tick: sim.state().tick, truth: sim.true_pose(), estimate: localizer.estimate()?.pose, n_eff: localizer.last_n_eff });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlRow {
    pub tick: u64,
    pub v_cmd: f64,
    pub v_true: f64,
    pub v_odom: f64,
    pub volts: f64,
    pub duty_pre: f64,
    pub duty_post: f64,
}

impl CtrlRow {
    pub const CSV_HEADER: &'static str = "tick,v_cmd,v_true,v_odom,V_measured,duty_pre,duty_post";
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.5},{:.6},{:.5},{:.4},{:.6},{:.6}",
            self.tick, self.v_cmd, self.v_true, self.v_odom, self.volts, self.duty_pre, self.duty_post
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryExperiment {
    pub rows: Vec<CtrlRow>,
    /// Speed at the end of the settling phase, where duty is frozen.
    pub reference_speed: f64,
    pub final_speed: f64,
    pub final_volts: f64,
    pub relative_error: f64,
    pub droop_fraction: f64,
}

/// Constant-speed straight run with the control loop closed until it settles at
/// nominal voltage, then duty held open-loop while the pack sags from 14.8 V to
/// 13.0 V. With `correction` the held duty passes through the droop compensator.
pub fn battery_experiment(plant: &PlantConfig, speed: f64, droop: bool, correction: bool) -> BatteryExperiment {
    let dt = CONTROL_DT;
    let v_nom = 14.8;
    let v_end = 13.0;
    let mut sim = Simulator::new(World::empty(), plant.clone(), NoiseConfig::noiseless(), BatteryState::lipo_4s().without_droop(), Pose2D::IDENTITY, 0);
    let mut ctrl = ActuationController::new(plant.clone(), PidGains::default(), v_nom);
    ctrl.low.compensate = correction;
    let cmd = Twist2D::new(speed, 0.0, 0.0);
    let settle = 200u64;
    let sag = 400u64;
    let mut rows = Vec::new();
    let mut held: Option<Vec<f64>> = None;
    let mut truth = Twist2D::ZERO;
    let mut v_odom = 0.0;
    for tick in 0..settle + sag {
        let volts = if droop && tick >= settle { v_nom - (v_nom - v_end) * ((tick - settle + 1) as f64 / sag as f64).min(1.0) } else { v_nom };
        sim.set_battery_voltage(volts);
        let (pre, post) = match &held {
            None => {
                // noiseless closed loop on the plant twist stands in for converged odometry
                let (_, out) = ctrl.step(&cmd, Some(&truth), volts, dt).expect("valid command");
                v_odom = truth.vx;
                (out.duty_pre, out.duty_post)
            }
            Some(k) => {
                ctrl.low.battery.set_voltage(volts);
                let post = if correction {
                    k.iter().map(|&d| ctrl.low.battery.correct(d).expect("positive voltage")).collect()
                } else {
                    k.clone()
                };
                (k.clone(), post)
            }
        };
        let before = sim.true_pose();
        sim.step(&ActuatorCommand::new(post.clone()), dt).expect("valid duty");
        truth = Twist2D::from_delta(&pose_delta(&before, &sim.true_pose()), dt);
        if tick + 1 == settle {
            held = Some(pre.clone());
        }
        rows.push(CtrlRow { tick, v_cmd: speed, v_true: truth.vx, v_odom, volts, duty_pre: pre[0], duty_post: post[0] });
    }
    let reference_speed = rows[settle as usize - 1].v_true;
    let last = rows.last().expect("non-empty");
    BatteryExperiment {
        reference_speed,
        final_speed: last.v_true,
        final_volts: last.volts,
        relative_error: (last.v_true - reference_speed).abs() / reference_speed,
        droop_fraction: (v_nom - last.volts) / v_nom,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let g = GridGeometry::new(1.0, Pose2D::IDENTITY, 4, 1).unwrap();
        let mut a = OccupancyGrid::new(g);
        let mut b = OccupancyGrid::new(g);
        assert_eq!(occupied_iou(&a, &b), 1.0);
        a.set(crate::grid::Cell::new(0, 0), 5.0);
        a.set(crate::grid::Cell::new(1, 0), 5.0);
        b.set(crate::grid::Cell::new(1, 0), 5.0);
        assert_eq!(occupied_iou(&a, &b), 0.5);
    }

    #[test]
    fn operator_turns_before_driving() {
        let p = PlantConfig::diffdrive();
        let t = operator_twist(&p, &Pose2D::IDENTITY, Point2::new(-1.0, 0.1), 0.25);
        assert_eq!(t.vx, 0.0);
        assert!(t.omega > 0.0);
        let t = operator_twist(&p, &Pose2D::IDENTITY, Point2::new(2.0, 0.0), 0.25);
        assert!((t.vx - 0.25).abs() < 1e-12);
    }
}
