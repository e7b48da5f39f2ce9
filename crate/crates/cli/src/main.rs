use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gennav::costmap::build_global_costmap;
use gennav::mapio::{load_map, resolve_yaml, save_map};
use gennav::mcl::LocalizerConfig;
use gennav::nav::NavConfig;
use gennav::planner::plan_global;
use gennav::render::plan_svg;
use gennav::scenario::{
    battery_experiment, fig5_goals, localize_run, mapping_lap, odom_eval, run_navigation, CtrlRow, LocalizeRow, NavReport, NavRun, OdomRow,
    TeleopScript,
};
use gennav::session::{Session, SessionConfig};
use gennav::sim::{NoiseConfig, World};
use gennav::{OccupancyGrid, PlantConfig, PlantKind, Pose2D, Twist2D};
use gennav_server::ServerConfig;

#[derive(Parser)]
#[command(name = "gennav", version, about = "Planar navigation stack on a deterministic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Robot {
    Diffdrive,
    Quadplanar,
}

impl Robot {
    fn plant(self) -> PlantConfig {
        PlantConfig::for_kind(match self {
            Robot::Diffdrive => PlantKind::DiffDrive,
            Robot::Quadplanar => PlantKind::QuadPlanar,
        })
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct WorldArgs {
    /// World JSON; the bundled two-block room when omitted.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Spawn name from the world file, or "x,y,theta".
    #[arg(long, visible_alias = "start", default_value = "start")]
    spawn: String,
    #[arg(long, value_enum, default_value = "diffdrive")]
    robot: Robot,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl WorldArgs {
    fn world(&self) -> Result<World> {
        match &self.world {
            Some(p) => World::load(p).with_context(|| format!("loading world {}", p.display())),
            None => Ok(World::fig5()),
        }
    }

    fn spawn(&self, world: &World) -> Result<Pose2D> {
        if self.spawn.contains(',') {
            return parse_pose(&self.spawn);
        }
        Ok(world.spawn(&self.spawn)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Drive a constant twist open-loop and compare scan odometry with the plant.
    OdomEval {
        #[command(flatten)]
        w: WorldArgs,
        /// Body twist "vx,vy,omega".
        #[arg(long, default_value = "0.2,0,0")]
        twist: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        noiseless: bool,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Teleoperated mapping lap; writes `<out>.pgm` and `<out>.yaml`.
    Map {
        #[command(flatten)]
        w: WorldArgs,
        /// Teleop route JSON `{"speed":..,"waypoints":[[x,y],..]}`; a lap of the bundled room when omitted.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        noiseless: bool,
        #[arg(long, default_value = "map")]
        out: PathBuf,
    },
    /// Global localization from a uniform particle cloud.
    Localize {
        #[command(flatten)]
        w: WorldArgs,
        /// Map YAML; ground truth of the world when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        updates: usize,
        #[arg(long, default_value_t = 10)]
        ticks_per_update: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global plan on the inflated map. Prints the path as CSV.
    Plan {
        #[command(flatten)]
        w: WorldArgs,
        #[arg(long)]
        map: Option<PathBuf>,
        /// Goal "x,y,theta".
        #[arg(long)]
        goal: String,
        #[arg(long)]
        emit_svg: Option<PathBuf>,
        /// Write the global costmap as PGM.
        #[arg(long)]
        dump_costmap: Option<PathBuf>,
    },
    /// Constant-speed run through a battery sag.
    CtrlEval {
        #[arg(long, value_enum, default_value = "diffdrive")]
        robot: Robot,
        #[arg(long, default_value_t = 0.2)]
        speed: f64,
        #[arg(long, value_enum, default_value = "on")]
        droop: Switch,
        #[arg(long, value_enum, default_value = "on")]
        correction: Switch,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded spawn-to-goal runs of the full stack.
    Navigate {
        #[command(flatten)]
        w: WorldArgs,
        #[arg(long)]
        map: Option<PathBuf>,
        /// Goal "x,y,theta"; the standard goal set when omitted.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dump_costmap: Option<PathBuf>,
    },
    /// Live session behind a WebSocket at `/ws`.
    Serve {
        #[command(flatten)]
        w: WorldArgs,
        /// Prior map; without one the session starts ready for MAPPING.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Socket only, no static UI.
        #[arg(long)]
        headless: bool,
        /// Built UI assets.
        #[arg(long, default_value = "ui/dist")]
        ui: PathBuf,
    },
}

fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().with_context(|| format!("'{s}' is not x,y,z"))?;
    match v[..] {
        [a, b, c] if v.iter().all(|x| x.is_finite()) => Ok([a, b, c]),
        _ => bail!("expected three finite comma-separated numbers, got '{s}'"),
    }
}

fn parse_pose(s: &str) -> Result<Pose2D> {
    Ok(Pose2D::from(parse_triple(s)?))
}

fn map_or_truth(world: &World, map: Option<&Path>, spawn: &Pose2D, plant: &PlantConfig) -> Result<OccupancyGrid> {
    match map {
        Some(p) => load_map(&resolve_yaml(p)).with_context(|| format!("loading map {}", p.display())),
        None => Ok(world.known_map(world.map_geometry(NavConfig::for_plant(plant).mapper.resolution, 0.5), spawn.position())),
    }
}

fn write_csv(out: Option<&Path>, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::OdomEval { w, twist, steps, noiseless, out } => {
            let world = w.world()?;
            let t = parse_triple(&twist)?;
            let noise = if noiseless { NoiseConfig::noiseless() } else { NoiseConfig::default() };
            let rows = odom_eval(&world, &w.robot.plant(), w.spawn(&world)?, Twist2D::new(t[0], t[1], t[2]), steps, w.seed, noise);
            write_csv(out.as_deref(), OdomRow::CSV_HEADER, rows.iter().map(OdomRow::csv_row))?;
        }
        Command::Map { w, script, noiseless, out } => {
            let world = w.world()?;
            let script = match script {
                Some(p) => TeleopScript::from_json(&fs::read_to_string(&p)?)?,
                None => TeleopScript::fig5_lap(),
            };
            let noise = if noiseless { NoiseConfig::noiseless() } else { NoiseConfig::default() };
            let report = mapping_lap(&world, &w.robot.plant(), &script, w.spawn(&world)?, w.seed, noise);
            let files = save_map(&report.map, &out)?;
            eprintln!(
                "wrote {} and {}: {} updates, {:.1} s simulated, occupied IoU vs ground truth {:.3}",
                files.pgm.display(),
                files.yaml.display(),
                report.updates,
                report.sim_time,
                report.iou
            );
        }
        Command::Localize { w, map, updates, ticks_per_update, out } => {
            let world = w.world()?;
            let plant = w.robot.plant();
            let spawn = w.spawn(&world)?;
            let grid = map_or_truth(&world, map.as_deref(), &spawn, &plant)?;
            let script = TeleopScript::fig5_lap();
            let rows = localize_run(&world, &grid, &plant, &script, spawn, updates, ticks_per_update, w.seed, LocalizerConfig::default())?;
            write_csv(out.as_deref(), LocalizeRow::CSV_HEADER, rows.iter().map(LocalizeRow::csv_row))?;
            if let Some(last) = rows.last() {
                eprintln!("final error {:.3} m, {:.1}°", last.position_error(), last.heading_error_deg());
            }
        }
        Command::Plan { w, map, goal, emit_svg, dump_costmap } => {
            let world = w.world()?;
            let plant = w.robot.plant();
            let start = w.spawn(&world)?;
            let goal = parse_pose(&goal)?;
            let grid = map_or_truth(&world, map.as_deref(), &start, &plant)?;
            let costmap = build_global_costmap(&grid, &NavConfig::for_plant(&plant).costmap);
            if let Some(p) = &dump_costmap {
                costmap.dump_pgm(p)?;
            }
            let path = plan_global(&costmap, &start, &goal);
            if let Some(p) = &emit_svg {
                fs::write(p, plan_svg(&costmap, path.as_ref().ok(), &start, &goal))?;
            }
            let path = path.context("planning failed")?;
            print!("{}", path.to_csv());
            eprintln!("{} waypoints, {:.2} m, cost {:.1}", path.waypoints.len(), path.length(), path.total_cost);
        }
        Command::CtrlEval { robot, speed, droop, correction, out } => {
            let exp = battery_experiment(&robot.plant(), speed, droop == Switch::On, correction == Switch::On);
            write_csv(out.as_deref(), CtrlRow::CSV_HEADER, exp.rows.iter().map(CtrlRow::csv_row))?;
            eprintln!(
                "held speed {:.4} -> {:.4} m/s at {:.2} V: relative error {:.4} (droop {:.4})",
                exp.reference_speed, exp.final_speed, exp.final_volts, exp.relative_error, exp.droop_fraction
            );
        }
        Command::Navigate { w, map, goal, runs, report, dump_costmap } => {
            let world = w.world()?;
            let plant = w.robot.plant();
            let spawn = w.spawn(&world)?;
            let grid = map_or_truth(&world, map.as_deref(), &spawn, &plant)?;
            if let Some(p) = &dump_costmap {
                build_global_costmap(&grid, &NavConfig::for_plant(&plant).costmap).dump_pgm(p)?;
            }
            let goals: Vec<Pose2D> = match goal {
                Some(g) => vec![parse_pose(&g)?],
                None => fig5_goals().to_vec(),
            };
            let mut reports = Vec::new();
            for i in 0..runs {
                let seed = w.seed + i;
                for g in &goals {
                    let r = run_navigation(&NavRun::new(plant.clone(), world.clone(), grid.clone(), spawn, *g, seed));
                    eprintln!("seed {seed} goal {:?}: {} d_e {:.3} m alpha {:.1}° in {:.1} s", g.to_array(), r.final_mode, r.error_true.d_e, r.error_true.alpha, r.sim_time);
                    reports.push(r);
                }
            }
            let reached = reports.iter().filter(|r| r.reached).count();
            eprintln!("reached {reached}/{}", reports.len());
            write_csv(report.as_deref(), NavReport::CSV_HEADER, reports.iter().map(NavReport::csv_row))?;
            if reached < reports.len() {
                std::process::exit(2);
            }
        }
        Command::Serve { w, map, port, headless, ui } => {
            let world = w.world()?;
            let plant = w.robot.plant();
            let spawn = w.spawn(&world)?;
            let grid = match &map {
                Some(p) => Some(load_map(&resolve_yaml(p)).with_context(|| format!("loading map {}", p.display()))?),
                None => None,
            };
            let session = Session::new(SessionConfig::new(plant, world, spawn, grid, w.seed))?;
            let mut cfg = ServerConfig::headless(SocketAddr::from(([0, 0, 0, 0], port)));
            if !headless {
                cfg.static_dir = Some(ui);
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let server = gennav_server::start(session, cfg).await?;
                eprintln!("listening on ws://{}/ws", server.addr);
                let session = server.run_until_ctrl_c().await?;
                eprintln!("stopped after {} ticks", session.tick());
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
