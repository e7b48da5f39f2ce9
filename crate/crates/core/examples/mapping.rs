//! Teleoperated mapping lap with the particle-filter mapper, then save/load of
//! the PGM + YAML pair.
//!
//! `cargo run -p gennav --example mapping --release`

use gennav::mapio::{load_map, save_map};
use gennav::scenario::{mapping_lap, occupied_iou, TeleopScript};
use gennav::sim::{NoiseConfig, World};
use gennav::PlantConfig;

fn main() {
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    let report = mapping_lap(&world, &PlantConfig::diffdrive(), &TeleopScript::fig5_lap(), spawn, 1, NoiseConfig::default());
    println!("{} mapper updates over {:.0} s, occupied IoU vs ground truth {:.3}", report.updates, report.sim_time, report.iou);

    let dir = std::env::temp_dir().join("gennav-mapping-example");
    std::fs::create_dir_all(&dir).unwrap();
    let files = save_map(&report.map, &dir.join("room")).unwrap();
    let back = load_map(&files.yaml).unwrap();
    println!("saved {} ({} occupied cells), reloaded IoU {:.3}", files.yaml.display(), back.occupied_count(), occupied_iou(&back, &report.map));
}
