//! One dynamic-window decision from a scan-built local costmap.
//!
//! `cargo run -p gennav --example local_planner`

use gennav::costmap::{build_global_costmap, build_local_costmap, CostmapConfig};
use gennav::planner::{plan_global, plan_local, DwaConfig};
use gennav::sim::{raycast_scan, LidarConfig, World};
use gennav::{PlantConfig, Pose2D, Twist2D};
use rand::SeedableRng;

fn main() {
    let world = World::fig5();
    let pose = Pose2D::new(4.5, 2.5, 0.0);
    let map = world.known_map(world.map_geometry(0.05, 0.5), pose.position());
    let goal = Pose2D::new(8.0, 2.5, 0.0);
    let path = plan_global(&build_global_costmap(&map, &CostmapConfig::default()), &pose, &goal).unwrap();

    for plant in [PlantConfig::diffdrive(), PlantConfig::quadplanar()] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let scan = raycast_scan(&world, &pose.compose(&plant.sensor_offset), &LidarConfig::default(), &mut rng);
        let cfg = CostmapConfig { inscribed_radius: plant.robot_radius, ..CostmapConfig::default() };
        let local = build_local_costmap(&scan, &pose, &plant.sensor_offset, 0.05, &cfg);
        let choice = plan_local(&DwaConfig::for_plant(&plant), &Twist2D::new(0.2, 0.0, 0.0), &pose, &local, &path).unwrap();
        println!(
            "{:?}: {}/{} samples admissible, chose vx {:.3} vy {:.3} omega {:+.3} toward ({:.2}, {:.2})",
            plant.kind, choice.admissible, choice.sampled, choice.twist.vx, choice.twist.vy, choice.twist.omega, choice.target.x, choice.target.y
        );
    }
}
