//! A live robot: simulator, navigator and actuation controller advanced in
//! lockstep, fed by wire-protocol frames and reporting telemetry.
//!
//! Everything is driven by `step`, so a session replays identically for a given seed.

use std::path::Path;

use crate::control::{ActuationController, PidGains};
use crate::geometry::{Pose2D, Twist2D};
use crate::grid::OccupancyGrid;
use crate::kinematics::PlantConfig;
use crate::mapio::save_map;
use crate::nav::{Mode, NavConfig, NavError, NavEvent, Navigator};
use crate::protocol::{parse_client, ClientMessage, MapPatch, ScanFrame, ServerMessage, Telemetry};
use crate::scenario::{actuate, CONTROL_DT};
use crate::sim::{BatteryState, NoiseConfig, Simulator, World};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub plant: PlantConfig,
    pub world: World,
    pub spawn: Pose2D,
    /// Prior map. Without one the session starts unlocalized and can only map.
    pub map: Option<OccupancyGrid>,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub battery: BatteryState,
    pub gains: PidGains,
    /// Minimum ticks between two map frames.
    pub map_interval: u64,
    /// Send every n-th particle / beam.
    pub particle_stride: usize,
    pub scan_stride: usize,
}

impl SessionConfig {
    pub fn new(plant: PlantConfig, world: World, spawn: Pose2D, map: Option<OccupancyGrid>, seed: u64) -> Self {
        Self {
            plant,
            world,
            spawn,
            map,
            seed,
            noise: NoiseConfig::default(),
            battery: BatteryState::lipo_4s(),
            gains: PidGains::default(),
            map_interval: 20,
            particle_stride: 5,
            scan_stride: 4,
        }
    }
}

pub struct Session {
    pub sim: Simulator,
    pub nav: Navigator,
    ctrl: ActuationController,
    config: SessionConfig,
    map_dirty: bool,
    last_map_tick: Option<u64>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, NavError> {
        let plant = config.plant.clone();
        let sim = Simulator::new(config.world.clone(), plant.clone(), config.noise, config.battery, config.spawn, config.seed);
        let mut nav = Navigator::new(plant.clone(), NavConfig::for_plant(&plant), config.seed ^ 0x9e37_79b9);
        match &config.map {
            Some(map) => {
                nav.load_map(map.clone())?;
                nav.initialize_pose(config.spawn, 0.05, 0.05)?;
            }
            None => {
                let cfg = NavConfig::for_plant(&plant);
                nav.set_mapping_geometry(config.world.map_geometry(cfg.mapper.resolution, 0.5));
                nav.initialize_pose_unmapped(config.spawn);
            }
        }
        let ctrl = ActuationController::new(plant, config.gains, config.battery.v_nominal);
        let map_dirty = config.map.is_some();
        Ok(Self { sim, nav, ctrl, config, map_dirty, last_map_tick: None })
    }

    pub fn tick(&self) -> u64 {
        self.sim.state().tick
    }

    pub fn mode(&self) -> Mode {
        self.nav.mode()
    }

    /// Applies one client frame. Returns the frames to send back to that client.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(e.to_string())],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        let result = match msg {
            ClientMessage::Teleop { twist } => {
                self.nav.set_teleop(Twist2D::new(twist[0], twist[1], twist[2]));
                Ok(None)
            }
            ClientMessage::Goal { pose } => self.nav.set_goal(Pose2D::from(pose)).map(|_| None).map_err(|e| e.to_string()),
            ClientMessage::SetMode { mode } => match mode {
                Mode::Mapping | Mode::Idle => self.nav.set_mode(mode).map(|_| None).map_err(|e| e.to_string()),
                other => Err(format!("mode {other} cannot be requested")),
            },
            ClientMessage::SaveMap { path } => self.save(&path).map(Some),
        };
        match result {
            Ok(reply) => reply.into_iter().collect(),
            Err(msg) => vec![ServerMessage::error(msg)],
        }
    }

    fn save(&self, path: &str) -> Result<ServerMessage, String> {
        let grid = self.current_map().ok_or("no map to save")?;
        let files = save_map(grid, Path::new(path)).map_err(|e| e.to_string())?;
        Ok(ServerMessage::MapSaved { yaml: files.yaml.display().to_string(), pgm: files.pgm.display().to_string() })
    }

    /// Sends the full map with the next telemetry frame, e.g. for a client that just joined.
    pub fn resend_map(&mut self) {
        self.map_dirty = true;
        self.last_map_tick = None;
    }

    /// The map being built while MAPPING, the loaded map otherwise.
    pub fn current_map(&self) -> Option<&OccupancyGrid> {
        self.nav.mapping_preview().or(self.nav.map())
    }

    /// One control period of the whole loop.
    pub fn step(&mut self) -> Telemetry {
        let dt = CONTROL_DT;
        let scan = self.sim.scan();
        let out = self.nav.tick(Some(&scan), dt);
        actuate(&mut self.sim, &mut self.ctrl, &out.command, self.nav.observed_twist().as_ref(), dt);
        for event in self.nav.take_events() {
            if event == NavEvent::MapReady {
                self.map_dirty = true;
                self.last_map_tick = None;
            }
        }
        if out.mode == Mode::Mapping {
            self.map_dirty = true;
        }

        let tick = self.tick();
        let throttled = self.last_map_tick.is_some_and(|t| tick < t + self.config.map_interval);
        let map_patch = match self.current_map() {
            Some(grid) if self.map_dirty && !throttled => Some(MapPatch::from_grid(grid)),
            _ => None,
        };
        if map_patch.is_some() {
            self.map_dirty = false;
            self.last_map_tick = Some(tick);
        }

        let particles = self.nav.localizer().map(|loc| {
            loc.particles.iter().step_by(self.config.particle_stride.max(1)).map(|p| [p.pose.x, p.pose.y, p.pose.theta, p.weight]).collect()
        });
        let path = self.nav.path().map(|p| p.waypoints.iter().map(|w| [w.x, w.y]).collect());
        Telemetry {
            tick,
            mode: out.mode,
            pose_true: self.sim.true_pose().to_array(),
            pose_est: self.nav.pose_estimate().to_array(),
            battery_v: self.sim.battery_voltage(),
            particles,
            path,
            scan: Some(ScanFrame::from_scan(&scan, &self.sim.sensor_pose(), self.config.scan_stride)),
            map_patch,
        }
    }
}
