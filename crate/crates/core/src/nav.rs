//! Goal-driven navigation: the state machine tying localization, costmaps,
//! planners and the velocity command together.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::{build_global_costmap, build_local_costmap, Costmap, CostmapConfig};
use crate::geometry::{angle_diff, LaserScan, Point2, Pose2D, Twist2D};
use crate::grid::{GridGeometry, OccupancyGrid};
use crate::kinematics::PlantConfig;
use crate::mapper::{Mapper, MapperConfig, MapperError};
use crate::mcl::{Localizer, LocalizerConfig, MclError};
use crate::odometry::{OdometryAccumulator, RangeFlowConfig};
use crate::planner::{plan_global, plan_local, snap_goal, DwaConfig, GlobalPath, PlanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    Mapping,
    Planning,
    Executing,
    Recovery,
    GoalReached,
    Aborted,
}

impl Mode {
    pub const ALL: [Mode; 7] = [Mode::Idle, Mode::Mapping, Mode::Planning, Mode::Executing, Mode::Recovery, Mode::GoalReached, Mode::Aborted];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Idle => "IDLE",
            Mode::Mapping => "MAPPING",
            Mode::Planning => "PLANNING",
            Mode::Executing => "EXECUTING",
            Mode::Recovery => "RECOVERY",
            Mode::GoalReached => "GOAL_REACHED",
            Mode::Aborted => "ABORTED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Mode::GoalReached | Mode::Aborted)
    }

    /// The transition table. Leaving a terminal mode takes an operator action
    /// (a new goal or a reset to IDLE).
    pub fn can_transition(self, to: Mode) -> bool {
        use Mode::*;
        matches!(
            (self, to),
            (Idle, Mapping)
                | (Idle, Planning)
                | (Mapping, Idle)
                | (Planning, Executing)
                | (Planning, Aborted)
                | (Executing, GoalReached)
                | (Executing, Recovery)
                | (Executing, Planning)
                | (Recovery, Planning)
                | (Recovery, Aborted)
                | (GoalReached, Planning)
                | (GoalReached, Idle)
                | (Aborted, Planning)
                | (Aborted, Idle)
        )
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = NavError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| NavError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalError {
    pub d_e: f64,
    /// Degrees in `[0, 180]`.
    pub alpha: f64,
}

impl GoalError {
    pub fn within(&self, d: f64, alpha_deg: f64) -> bool {
        self.d_e <= d && self.alpha <= alpha_deg
    }
}

pub fn evaluate_goal_error(pose: &Pose2D, goal: &Pose2D) -> GoalError {
    GoalError { d_e: (pose.x - goal.x).hypot(pose.y - goal.y), alpha: angle_diff(pose.theta, goal.theta).abs().to_degrees() }
}

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("goal in obstacle")]
    GoalInObstacle,
    #[error("goal lies outside the map")]
    GoalOffMap,
    #[error("no map loaded")]
    NoMap,
    #[error("localization not initialized")]
    NotLocalized,
    #[error("cannot go from {from} to {to}")]
    IllegalTransition { from: Mode, to: Mode },
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Localization(#[from] MclError),
    #[error(transparent)]
    Mapping(#[from] MapperError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavConfig {
    pub goal_tolerance: f64,
    pub goal_tolerance_yaw: f64,
    /// Translation stops once the estimate is this close to the goal...
    pub approach_radius: f64,
    /// ...and resumes only if it drifts beyond this.
    pub release_radius: f64,
    /// Final in-place alignment target.
    pub settle_yaw: f64,
    /// Position hold while aligning: speed = gain·distance, capped at `min_approach_speed`.
    pub hold_gain: f64,
    pub hold_deadband: f64,
    pub rotate_gain: f64,
    /// Deceleration used to cap speed near the goal, as a fraction of the plant limit.
    pub approach_decel: f64,
    pub min_approach_speed: f64,
    pub max_recoveries: u32,
    pub recovery_angle: f64,
    pub recovery_omega: f64,
    /// Getting this much closer to the goal resets the recovery count.
    pub progress_distance: f64,
    pub scan_timeout: u32,
    pub stuck_ticks: u32,
    pub stuck_distance: f64,
    pub replan_deviation: f64,
    pub mapper_update_d: f64,
    pub mapper_update_a: f64,
    pub costmap: CostmapConfig,
    pub dwa: DwaConfig,
    pub localizer: LocalizerConfig,
    pub odometry: RangeFlowConfig,
    pub mapper: MapperConfig,
}

impl NavConfig {
    pub fn for_plant(plant: &PlantConfig) -> Self {
        Self {
            goal_tolerance: 0.10,
            goal_tolerance_yaw: 20f64.to_radians(),
            approach_radius: 0.04,
            release_radius: 0.15,
            settle_yaw: 4f64.to_radians(),
            hold_gain: 1.0,
            hold_deadband: 0.015,
            rotate_gain: 1.5,
            approach_decel: 0.5,
            min_approach_speed: 0.04,
            max_recoveries: 3,
            recovery_angle: 0.5 * PI,
            recovery_omega: 0.6 * plant.omega_max,
            progress_distance: 0.25,
            scan_timeout: 5,
            stuck_ticks: 80,
            stuck_distance: 0.05,
            replan_deviation: 0.5,
            mapper_update_d: 0.1,
            mapper_update_a: 0.1,
            costmap: CostmapConfig { inscribed_radius: plant.robot_radius, ..CostmapConfig::default() },
            dwa: DwaConfig::for_plant(plant),
            localizer: LocalizerConfig::default(),
            odometry: RangeFlowConfig {
                constrain_vy: !plant.kind.is_holonomic(),
                sensor_offset: plant.sensor_offset,
                ..RangeFlowConfig::default()
            },
            mapper: MapperConfig::default(),
        }
    }
}

/// Something the operator or the pipeline did, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum NavEvent {
    Transition { from: Mode, to: Mode, tick: u64 },
    GoalAccepted(Pose2D),
    GoalRejected(String),
    PathPlanned { waypoints: usize, cost: f64 },
    PlanFailed(PlanError),
    LocalMinimum,
    Stuck,
    RecoveryStarted(u32),
    Fault,
    MapReady,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub command: Twist2D,
    pub mode: Mode,
    pub fault: bool,
}

#[derive(Debug, Clone)]
struct MapContext {
    map: OccupancyGrid,
    costmap: Costmap,
    localizer: Localizer,
}

#[derive(Debug, Clone, Copy)]
struct RecoveryMotion {
    remaining: f64,
    direction: f64,
}

pub struct Navigator {
    pub plant: PlantConfig,
    pub config: NavConfig,
    mode: Mode,
    goal: Option<Pose2D>,
    path: Option<GlobalPath>,
    pub replans: u32,
    pub recoveries: u32,
    context: Option<MapContext>,
    mapper: Option<Mapper>,
    mapping_geometry: Option<GridGeometry>,
    mapper_pending: Pose2D,
    odometry: Option<OdometryAccumulator>,
    observed: Option<Twist2D>,
    pose_est: Pose2D,
    localized: bool,
    last_command: Twist2D,
    teleop: Twist2D,
    missing_scans: u32,
    fault: bool,
    recovery: Option<RecoveryMotion>,
    progress_ref: f64,
    final_approach: bool,
    stuck_anchor: (Point2, u64),
    local_costmap: Option<Costmap>,
    local_clears: u64,
    tick: u64,
    rng: ChaCha8Rng,
    events: Vec<NavEvent>,
}

impl Navigator {
    pub fn new(plant: PlantConfig, config: NavConfig, seed: u64) -> Self {
        Self {
            plant,
            config,
            mode: Mode::Idle,
            goal: None,
            path: None,
            replans: 0,
            recoveries: 0,
            context: None,
            mapper: None,
            mapping_geometry: None,
            mapper_pending: Pose2D::IDENTITY,
            odometry: None,
            observed: None,
            pose_est: Pose2D::IDENTITY,
            localized: false,
            last_command: Twist2D::ZERO,
            teleop: Twist2D::ZERO,
            missing_scans: 0,
            fault: false,
            recovery: None,
            progress_ref: f64::INFINITY,
            final_approach: false,
            stuck_anchor: (Point2::new(0.0, 0.0), 0),
            local_costmap: None,
            local_clears: 0,
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
        }
    }

    /// Loads a map for localization and planning.
    pub fn load_map(&mut self, map: OccupancyGrid) -> Result<(), NavError> {
        let localizer = Localizer::new(&map, self.config.localizer, self.plant.sensor_offset)?;
        let costmap = build_global_costmap(&map, &self.config.costmap);
        self.context = Some(MapContext { map, costmap, localizer });
        self.localized = false;
        Ok(())
    }

    /// Seeds the particle cloud around a known pose.
    pub fn initialize_pose(&mut self, pose: Pose2D, sigma_xy: f64, sigma_theta: f64) -> Result<(), NavError> {
        let ctx = self.context.as_mut().ok_or(NavError::NoMap)?;
        ctx.localizer.init_gaussian(pose, sigma_xy, sigma_theta, &mut self.rng);
        self.pose_est = pose;
        self.localized = true;
        Ok(())
    }

    /// Spreads the particle cloud over the whole free space.
    pub fn initialize_global(&mut self, margin: f64) -> Result<(), NavError> {
        let ctx = self.context.as_mut().ok_or(NavError::NoMap)?;
        ctx.localizer.init_uniform(margin, &mut self.rng);
        self.pose_est = ctx.localizer.estimate()?.pose;
        self.localized = true;
        Ok(())
    }

    /// Pose the mapper starts from when no map exists yet; it anchors the map frame.
    pub fn initialize_pose_unmapped(&mut self, pose: Pose2D) {
        self.pose_est = pose;
    }

    /// Map extent used when MAPPING starts without a loaded map.
    pub fn set_mapping_geometry(&mut self, geometry: GridGeometry) {
        self.mapping_geometry = Some(geometry);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn goal(&self) -> Option<Pose2D> {
        self.goal
    }
    pub fn path(&self) -> Option<&GlobalPath> {
        self.path.as_ref()
    }
    pub fn pose_estimate(&self) -> Pose2D {
        self.pose_est
    }
    pub fn observed_twist(&self) -> Option<Twist2D> {
        self.observed
    }
    pub fn last_command(&self) -> Twist2D {
        self.last_command
    }
    pub fn fault(&self) -> bool {
        self.fault
    }
    pub fn map(&self) -> Option<&OccupancyGrid> {
        self.context.as_ref().map(|c| &c.map)
    }
    pub fn global_costmap(&self) -> Option<&Costmap> {
        self.context.as_ref().map(|c| &c.costmap)
    }
    pub fn local_costmap(&self) -> Option<&Costmap> {
        self.local_costmap.as_ref()
    }
    pub fn localizer(&self) -> Option<&Localizer> {
        self.context.as_ref().map(|c| &c.localizer)
    }
    pub fn mapper(&self) -> Option<&Mapper> {
        self.mapper.as_ref()
    }
    pub fn local_clears(&self) -> u64 {
        self.local_clears
    }
    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Drains the event log.
    pub fn take_events(&mut self) -> Vec<NavEvent> {
        std::mem::take(&mut self.events)
    }

    fn transition(&mut self, to: Mode) -> Result<(), NavError> {
        if self.mode == to {
            return Ok(());
        }
        if !self.mode.can_transition(to) {
            return Err(NavError::IllegalTransition { from: self.mode, to });
        }
        self.events.push(NavEvent::Transition { from: self.mode, to, tick: self.tick });
        self.mode = to;
        Ok(())
    }

    fn enter(&mut self, to: Mode) {
        self.transition(to).expect("internal transitions follow the table");
    }

    /// Accepts a navigation goal. Rejected goals leave the state untouched.
    pub fn set_goal(&mut self, goal: Pose2D) -> Result<(), NavError> {
        if !matches!(self.mode, Mode::Idle | Mode::GoalReached | Mode::Aborted | Mode::Executing) {
            return Err(NavError::IllegalTransition { from: self.mode, to: Mode::Planning });
        }
        let ctx = self.context.as_ref().ok_or(NavError::NoMap)?;
        if !self.localized {
            return Err(NavError::NotLocalized);
        }
        if let Err(e) = snap_goal(&ctx.costmap, goal.position()) {
            let err = match e {
                PlanError::GoalOffMap => NavError::GoalOffMap,
                _ => NavError::GoalInObstacle,
            };
            self.events.push(NavEvent::GoalRejected(err.to_string()));
            return Err(err);
        }
        if self.mode == Mode::Executing {
            self.replans += 1;
        }
        self.enter(Mode::Planning);
        self.goal = Some(goal);
        self.path = None;
        self.recoveries = 0;
        self.recovery = None;
        self.progress_ref = f64::INFINITY;
        self.final_approach = false;
        self.stuck_anchor = (self.pose_est.position(), self.tick);
        self.events.push(NavEvent::GoalAccepted(goal));
        Ok(())
    }

    /// Operator mode switch: `MAPPING` from IDLE, `IDLE` from MAPPING or a terminal mode.
    pub fn set_mode(&mut self, mode: Mode) -> Result<(), NavError> {
        match (self.mode, mode) {
            (Mode::Idle, Mode::Mapping) => {
                let geometry = self
                    .context
                    .as_ref()
                    .map(|c| c.map.geometry)
                    .or(self.mapping_geometry)
                    .ok_or(NavError::NoMap)?;
                let start = self.pose_est;
                self.mapper = Some(Mapper::new(geometry, start, self.plant.sensor_offset, self.config.mapper)?);
                self.mapper_pending = Pose2D::IDENTITY;
                self.teleop = Twist2D::ZERO;
                self.enter(Mode::Mapping);
                Ok(())
            }
            (Mode::Mapping, Mode::Idle) => {
                let mapper = self.mapper.take().expect("mapper exists while MAPPING");
                let pose = mapper.best_pose().compose(&self.mapper_pending);
                let map = mapper.best_map().clone();
                self.enter(Mode::Idle);
                self.load_map(map)?;
                self.initialize_pose(pose, 0.05, 0.05)?;
                self.events.push(NavEvent::MapReady);
                Ok(())
            }
            (from, Mode::Idle) if from.is_terminal() => {
                self.enter(Mode::Idle);
                self.goal = None;
                self.path = None;
                Ok(())
            }
            (from, to) if from == to => Ok(()),
            (from, to) => Err(NavError::IllegalTransition { from, to }),
        }
    }

    /// Teleop command, honoured only while MAPPING.
    pub fn set_teleop(&mut self, twist: Twist2D) {
        self.teleop = self.plant.clamp_twist(&twist);
    }

    /// The map currently being built, if MAPPING.
    pub fn mapping_preview(&self) -> Option<&OccupancyGrid> {
        self.mapper.as_ref().map(Mapper::best_map)
    }

    /// One control period: odometry, localization, then the mode's planner.
    pub fn tick(&mut self, scan: Option<&LaserScan>, dt: f64) -> TickOutput {
        self.tick += 1;
        let Some(scan) = scan else {
            self.missing_scans += 1;
            self.observed = None;
            if self.missing_scans > self.config.scan_timeout {
                if !self.fault {
                    self.events.push(NavEvent::Fault);
                }
                self.fault = true;
                self.last_command = Twist2D::ZERO;
            }
            return self.output();
        };
        self.missing_scans = 0;
        self.fault = false;

        let delta = self.odometry_step(scan);
        if self.mode == Mode::Mapping {
            self.mapping_step(&delta, scan);
        } else if let Some(ctx) = self.context.as_mut() {
            if self.localized {
                ctx.localizer.update(&delta, scan, false, &mut self.rng);
                if let Ok(est) = ctx.localizer.estimate() {
                    self.pose_est = est.pose;
                }
            }
        }

        let desired = match self.mode {
            Mode::Idle | Mode::GoalReached | Mode::Aborted => Twist2D::ZERO,
            Mode::Mapping => self.teleop,
            Mode::Planning | Mode::Executing | Mode::Recovery => self.navigate(scan, &delta, dt),
        };
        self.last_command = match self.mode {
            Mode::GoalReached | Mode::Aborted | Mode::Idle => Twist2D::ZERO,
            _ => self.rate_limit(&desired, dt),
        };
        self.output()
    }

    fn output(&self) -> TickOutput {
        TickOutput { command: self.last_command, mode: self.mode, fault: self.fault }
    }

    fn odometry_step(&mut self, scan: &LaserScan) -> Pose2D {
        match self.odometry.as_mut() {
            None => {
                self.odometry = Some(OdometryAccumulator::new(scan.clone(), self.plant.sensor_offset, self.config.odometry));
                self.observed = Some(Twist2D::ZERO);
                Pose2D::IDENTITY
            }
            Some(odo) => match odo.accumulate(scan.clone()) {
                Ok(d) => {
                    self.observed = Some(odo.last_twist);
                    d
                }
                Err(_) => {
                    self.observed = None;
                    Pose2D::IDENTITY
                }
            },
        }
    }

    fn mapping_step(&mut self, delta: &Pose2D, scan: &LaserScan) {
        let Some(mapper) = self.mapper.as_mut() else { return };
        self.mapper_pending = self.mapper_pending.compose(delta);
        let p = self.mapper_pending;
        let due = mapper.updates == 0 || p.x.hypot(p.y) >= self.config.mapper_update_d || p.theta.abs() >= self.config.mapper_update_a;
        if due {
            mapper.update(&p, scan, &mut self.rng);
            self.mapper_pending = Pose2D::IDENTITY;
        }
        self.pose_est = mapper.best_pose().compose(&self.mapper_pending);
    }

    /// Per-component acceleration limit relative to the previous command.
    fn rate_limit(&self, t: &Twist2D, dt: f64) -> Twist2D {
        let lin = self.plant.accel_linear * dt;
        let ang = self.plant.accel_angular * dt;
        let c = self.last_command;
        let step = |from: f64, to: f64, lim: f64| from + (to - from).clamp(-lim, lim);
        self.plant.clamp_twist(&Twist2D::new(step(c.vx, t.vx, lin), step(c.vy, t.vy, lin), step(c.omega, t.omega, ang)))
    }

    /// Twist that brakes toward zero as fast as the plant allows.
    fn braking(&self, omega: f64) -> Twist2D {
        Twist2D::new(0.0, 0.0, omega)
    }

    fn navigate(&mut self, scan: &LaserScan, delta: &Pose2D, dt: f64) -> Twist2D {
        let local = build_local_costmap(scan, &self.pose_est, &self.plant.sensor_offset, self.costmap_resolution(), &self.config.costmap);
        self.local_costmap = Some(local);
        if self.mode == Mode::Recovery {
            return self.recovery_step(delta);
        }
        if self.mode == Mode::Planning && !self.plan() {
            return Twist2D::ZERO;
        }
        self.execute_step(dt)
    }

    fn costmap_resolution(&self) -> f64 {
        self.context.as_ref().map_or(0.05, |c| c.map.geometry.resolution)
    }

    /// PLANNING: search the global costmap; success moves to EXECUTING.
    fn plan(&mut self) -> bool {
        let goal = self.goal.expect("PLANNING has a goal");
        let ctx = self.context.as_ref().expect("PLANNING has a map");
        let mut start = self.pose_est;
        // a slightly-off estimate can sit in the inscribed band; plan from the nearest free cell
        if let Ok(c) = snap_goal(&ctx.costmap, start.position()) {
            let p = ctx.costmap.geometry.cell_center(c);
            if !ctx.costmap.is_traversable(ctx.costmap.geometry.cell_unchecked(start.position())) {
                start = Pose2D::new(p.x, p.y, start.theta);
            }
        }
        match plan_global(&ctx.costmap, &start, &goal) {
            Ok(mut path) => {
                if path.goal() != Some(goal.position()) {
                    path.waypoints.push(goal.position());
                }
                self.events.push(NavEvent::PathPlanned { waypoints: path.waypoints.len(), cost: path.total_cost });
                self.path = Some(path);
                self.final_approach = false;
                self.stuck_anchor = (self.pose_est.position(), self.tick);
                self.enter(Mode::Executing);
                true
            }
            Err(e) => {
                self.events.push(NavEvent::PlanFailed(e));
                self.path = None;
                self.enter(Mode::Aborted);
                false
            }
        }
    }

    fn execute_step(&mut self, dt: f64) -> Twist2D {
        let goal = self.goal.expect("EXECUTING has a goal");
        let est = self.pose_est;
        let d = est.position().distance(goal.position());
        let yaw_err = angle_diff(goal.theta, est.theta);
        let cfg = self.config;

        if d <= cfg.approach_radius {
            self.final_approach = true;
        } else if d > cfg.release_radius {
            self.final_approach = false;
        }

        if self.final_approach {
            let c = self.last_command;
            let lin_step = self.plant.accel_linear * dt;
            let ang_step = self.plant.accel_angular * dt;
            let err = evaluate_goal_error(&est, &goal);
            let settled = d <= cfg.approach_radius
                && yaw_err.abs() <= cfg.settle_yaw
                && c.vx.abs().max(c.vy.abs()) <= lin_step
                && c.omega.abs() <= ang_step
                && err.within(cfg.goal_tolerance, cfg.goal_tolerance_yaw.to_degrees());
            if settled {
                self.enter(Mode::GoalReached);
                return Twist2D::ZERO;
            }
            // creep back toward the goal along whatever axes the plant has while turning
            let offset = est.inverse().transform_point(goal.position());
            let hold = if d > cfg.hold_deadband { offset * ((cfg.hold_gain * d).min(cfg.min_approach_speed) / d) } else { Point2::new(0.0, 0.0) };
            let omega = (cfg.rotate_gain * yaw_err).clamp(-cfg.recovery_omega, cfg.recovery_omega);
            return self.plant.clamp_twist(&Twist2D::new(hold.x, hold.y, omega));
        }

        let path = self.path.as_ref().expect("EXECUTING has a path");
        let off_path = path.waypoints.iter().map(|w| w.distance(est.position())).fold(f64::INFINITY, f64::min);
        if off_path > cfg.replan_deviation {
            self.replans += 1;
            self.enter(Mode::Planning);
            return if self.plan() { self.execute_step(dt) } else { Twist2D::ZERO };
        }

        let v_cap = (2.0 * cfg.approach_decel * self.plant.accel_linear * d).sqrt().max(cfg.min_approach_speed);
        let mut dwa = cfg.dwa;
        dwa.v_max = dwa.v_max.min(v_cap);
        dwa.vy_max = dwa.vy_max.min(v_cap);
        dwa.dt_cmd = dt;
        let local = self.local_costmap.as_ref().expect("built this tick");
        let choice = plan_local(&dwa, &self.last_command, &est, local, path);

        let moved = est.position().distance(self.stuck_anchor.0);
        if moved > cfg.stuck_distance {
            self.stuck_anchor = (est.position(), self.tick);
        }
        let stuck = self.tick - self.stuck_anchor.1 > cfg.stuck_ticks as u64;
        match choice {
            Ok(c) if !stuck => c.twist,
            other => {
                self.events.push(if other.is_err() { NavEvent::LocalMinimum } else { NavEvent::Stuck });
                self.start_recovery(d);
                Twist2D::ZERO
            }
        }
    }

    fn start_recovery(&mut self, d_goal: f64) {
        if d_goal < self.progress_ref - self.config.progress_distance {
            self.recoveries = 0;
        }
        self.progress_ref = self.progress_ref.min(d_goal);
        self.enter(Mode::Recovery);
        self.stuck_anchor = (self.pose_est.position(), self.tick);
        if self.recoveries >= self.config.max_recoveries {
            self.recovery = None;
            self.enter(Mode::Aborted);
            return;
        }
        self.recoveries += 1;
        self.events.push(NavEvent::RecoveryStarted(self.recoveries));
        let direction = if self.recoveries % 2 == 1 { 1.0 } else { -1.0 };
        self.recovery = Some(RecoveryMotion { remaining: self.config.recovery_angle, direction });
    }

    /// RECOVERY: stop, rotate in place, clear the local costmap, replan.
    fn recovery_step(&mut self, delta: &Pose2D) -> Twist2D {
        let Some(mut r) = self.recovery else {
            self.enter(Mode::Aborted);
            return Twist2D::ZERO;
        };
        let c = self.last_command;
        let translating = c.vx.abs() > 1e-9 || c.vy.abs() > 1e-9;
        if !translating {
            r.remaining -= delta.theta * r.direction;
        }
        if r.remaining > 0.0 {
            self.recovery = Some(r);
            let omega = if translating { 0.0 } else { r.direction * self.config.recovery_omega.min(2.0 * r.remaining + 0.1) };
            return self.braking(omega);
        }
        if c.omega.abs() > 1e-9 {
            self.recovery = Some(r);
            return self.braking(0.0);
        }
        self.recovery = None;
        if let Some(lc) = self.local_costmap.as_mut() {
            lc.clear();
        }
        self.local_clears += 1;
        self.enter(Mode::Planning);
        Twist2D::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn goal_error_examples() {
        let g = Pose2D::new(1.0, 2.0, 0.3);
        assert_eq!(evaluate_goal_error(&g, &g), GoalError { d_e: 0.0, alpha: 0.0 });
        let e = evaluate_goal_error(&Pose2D::new(1.06, 2.08, 0.3), &g);
        assert!((e.d_e - 0.10).abs() < 1e-12);
        let e = evaluate_goal_error(&Pose2D::new(0.0, 0.0, 170f64.to_radians()), &Pose2D::new(0.0, 0.0, -170f64.to_radians()));
        assert!((e.alpha - 20.0).abs() < 1e-9);
        let e = evaluate_goal_error(&Pose2D::new(0.0, 0.0, PI), &Pose2D::new(0.0, 0.0, 0.0));
        assert!((e.alpha - 180.0).abs() < 1e-9);
    }

    #[test]
    fn transition_table() {
        use Mode::*;
        assert!(Idle.can_transition(Mapping) && Idle.can_transition(Planning));
        assert!(!Idle.can_transition(Executing));
        assert!(!Planning.can_transition(GoalReached));
        assert!(!Recovery.can_transition(Executing));
        assert!(!GoalReached.can_transition(Executing));
        assert!(!Aborted.can_transition(Recovery));
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn terminal_modes_command_zero() {
        let mut nav = Navigator::new(PlantConfig::diffdrive(), NavConfig::for_plant(&PlantConfig::diffdrive()), 0);
        nav.mode = Mode::GoalReached;
        nav.last_command = Twist2D::new(0.2, 0.0, 0.1);
        let scan = LaserScan::new(0.0, -PI, 2.0 * PI / 32.0, 5.0, vec![2.0; 32]).unwrap();
        for k in 0..5 {
            let mut s = scan.clone();
            s.timestamp = 0.05 * k as f64;
            assert_eq!(nav.tick(Some(&s), 0.05).command, Twist2D::ZERO);
        }
    }

    #[test]
    fn missing_scans_trip_fail_safe() {
        let plant = PlantConfig::diffdrive();
        let mut nav = Navigator::new(plant.clone(), NavConfig::for_plant(&plant), 0);
        nav.mode = Mode::Mapping;
        nav.last_command = Twist2D::new(0.2, 0.0, 0.0);
        for _ in 0..5 {
            let out = nav.tick(None, 0.05);
            assert!(!out.fault);
        }
        let out = nav.tick(None, 0.05);
        assert!(out.fault);
        assert_eq!(out.command, Twist2D::ZERO);
    }

    #[test]
    fn set_goal_needs_a_map() {
        let plant = PlantConfig::diffdrive();
        let mut nav = Navigator::new(plant.clone(), NavConfig::for_plant(&plant), 0);
        assert_eq!(nav.set_goal(Pose2D::new(1.0, 1.0, 0.0)), Err(NavError::NoMap));
        assert_eq!(nav.mode(), Mode::Idle);
        assert_eq!(nav.set_mode(Mode::Executing), Err(NavError::IllegalTransition { from: Mode::Idle, to: Mode::Executing }));
    }

    /// Random operator events and scan gaps never produce an off-table transition.
    #[test]
    fn event_fuzz_respects_table() {
        use crate::sim::{World, LidarConfig, raycast_scan};
        let world = World::fig5();
        let geometry = world.map_geometry(0.05, 0.5);
        let map = world.rasterize(geometry);
        let plant = PlantConfig::diffdrive();
        let lidar = LidarConfig { n_beams: 90, ..LidarConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::BTreeSet::new();
        for round in 0..4 {
            let mut cfg = NavConfig::for_plant(&plant);
            cfg.localizer.n_particles = 50;
            cfg.mapper.n_particles = 2;
            let mut nav = Navigator::new(plant.clone(), cfg, round);
            nav.set_mapping_geometry(geometry);
            let mut truth = Pose2D::new(1.5, 1.5, 0.0);
            let mut t = 0.0;
            for _ in 0..300 {
                match rng.gen_range(0..12) {
                    0 => {
                        let _ = nav.load_map(map.clone()).and_then(|_| nav.initialize_pose(truth, 0.02, 0.02));
                    }
                    1 => {
                        let g = Pose2D::new(rng.gen_range(-1.0..11.0), rng.gen_range(-1.0..11.0), rng.gen_range(-PI..PI));
                        let _ = nav.set_goal(g);
                    }
                    2 => {
                        let m = Mode::ALL[rng.gen_range(0..7)];
                        let _ = nav.set_mode(m);
                    }
                    3 => nav.set_teleop(Twist2D::new(0.2, 0.1, 0.5)),
                    4 => {
                        nav.tick(None, 0.05);
                    }
                    _ => {
                        t += 0.05;
                        let cmd = nav.last_command();
                        let stepped = truth.compose(&cmd.integrate(0.05));
                        if world.clearance(stepped.position()) > plant.robot_radius {
                            truth = stepped;
                        }
                        let mut s = raycast_scan(&world, &truth, &lidar, &mut rng);
                        s.timestamp = t;
                        nav.tick(Some(&s), 0.05);
                    }
                }
                for e in nav.take_events() {
                    if let NavEvent::Transition { from, to, .. } = e {
                        assert!(from.can_transition(to), "{from} -> {to}");
                        seen.insert((from.as_str(), to.as_str()));
                    }
                }
            }
        }
        assert!(seen.len() >= 4, "{seen:?}");
    }
}
