//! Inflated global costmap from a map, written as a PGM.
//!
//! `cargo run -p gennav --example costmap`

use gennav::costmap::{build_global_costmap, CostmapConfig, INSCRIBED, LETHAL};
use gennav::sim::World;
use gennav::{PlantConfig, Point2};

fn main() {
    let world = World::fig5();
    let map = world.known_map(world.map_geometry(0.05, 0.5), Point2::new(1.5, 1.5));
    let plant = PlantConfig::diffdrive();
    let cm = build_global_costmap(&map, &CostmapConfig { inscribed_radius: plant.robot_radius, ..CostmapConfig::default() });
    let count = |pred: fn(u8) -> bool| cm.cost.iter().filter(|&&c| pred(c)).count();
    println!("lethal {}, inscribed {}, inflated {}, free {}", count(|c| c == LETHAL), count(|c| c == INSCRIBED), count(|c| c > 0 && c < INSCRIBED), count(|c| c == 0));
    for x in [1.0, 1.5, 2.0, 2.3, 2.45] {
        let p = Point2::new(x, 6.5);
        println!("  ({x:.2}, 6.5): {:.2} m to the nearest obstacle, cost {}", cm.distance_at(p).unwrap(), cm.cost_at(p).unwrap());
    }
    let out = std::env::temp_dir().join("gennav-costmap.pgm");
    cm.dump_pgm(&out).unwrap();
    println!("wrote {}", out.display());
}
