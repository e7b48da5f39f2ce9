//! Monte Carlo localization from a uniform cloud on a known map.
//!
//! `cargo run -p gennav --example global_localization --release`

use gennav::mcl::LocalizerConfig;
use gennav::scenario::{localize_run, TeleopScript};
use gennav::sim::World;
use gennav::PlantConfig;

fn main() {
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    let map = world.known_map(world.map_geometry(0.05, 0.5), spawn.position());
    let rows = localize_run(&world, &map, &PlantConfig::diffdrive(), &TeleopScript::fig5_lap(), spawn, 30, 10, 4, LocalizerConfig::default()).unwrap();
    for r in rows.iter().step_by(5).chain(rows.last()) {
        println!("tick {:4}: error {:.3} m {:5.1}°  N_eff {:.0}", r.tick, r.position_error(), r.heading_error_deg(), r.n_eff);
    }
}
