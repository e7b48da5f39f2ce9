//! Dijkstra over the costmap, rendered to SVG.
//!
//! `cargo run -p gennav --example global_plan`

use gennav::costmap::{build_global_costmap, CostmapConfig};
use gennav::planner::plan_global;
use gennav::render::plan_svg;
use gennav::sim::World;
use gennav::Pose2D;

fn main() {
    let world = World::fig5();
    let start = world.spawn("start").unwrap();
    let map = world.known_map(world.map_geometry(0.05, 0.5), start.position());
    let cm = build_global_costmap(&map, &CostmapConfig::default());
    let goal = Pose2D::new(8.0, 2.5, 0.0);
    let path = plan_global(&cm, &start, &goal).unwrap();
    println!("{} waypoints, {:.2} m (straight line {:.2} m), cost {:.1}", path.waypoints.len(), path.length(), start.position().distance(goal.position()), path.total_cost);
    match plan_global(&cm, &start, &Pose2D::new(6.5, 2.5, 0.0)) {
        Err(e) => println!("goal inside the block: {e}"),
        Ok(_) => unreachable!("block interior is lethal"),
    }
    let out = std::env::temp_dir().join("gennav-plan.svg");
    std::fs::write(&out, plan_svg(&cm, Some(&path), &start, &goal)).unwrap();
    println!("wrote {}", out.display());
}
