//! Full stack: localization, planning and control from spawn to goal.
//!
//! `cargo run -p gennav --example navigate --release [diffdrive|quadplanar]`

use gennav::scenario::{fig5_goals, run_navigation, NavRun};
use gennav::sim::World;
use gennav::PlantConfig;

fn main() {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "diffdrive".into());
    let plant = PlantConfig::for_kind(kind.parse().expect("diffdrive or quadplanar"));
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    let map = world.known_map(world.map_geometry(0.05, 0.5), spawn.position());
    for goal in fig5_goals() {
        let r = run_navigation(&NavRun::new(plant.clone(), world.clone(), map.clone(), spawn, goal, 0));
        println!(
            "goal ({:.1}, {:.1}, {:+.2}): {} after {:.1} s, d_e {:.3} m, alpha {:.1}°, path {:.2} m, contacts {}",
            goal.x, goal.y, goal.theta, r.final_mode, r.sim_time, r.error_true.d_e, r.error_true.alpha, r.path_length, r.contacts
        );
    }
}
