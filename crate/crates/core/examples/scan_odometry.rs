//! Range-flow odometry from consecutive simulated scans, no wheel encoders.
//!
//! `cargo run -p gennav --example scan_odometry`

use gennav::scenario::odom_eval;
use gennav::sim::{NoiseConfig, World};
use gennav::{PlantConfig, Twist2D};

fn main() {
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    for (name, plant, twist) in [
        ("diffdrive, arc", PlantConfig::diffdrive(), Twist2D::new(0.25, 0.0, 0.3)),
        ("quadplanar, strafe", PlantConfig::quadplanar(), Twist2D::new(0.1, 0.2, 0.0)),
    ] {
        let rows = odom_eval(&world, &plant, spawn, twist, 80, 7, NoiseConfig::default());
        // skip the spin-up
        let tail = &rows[20..];
        let n = tail.len() as f64;
        let mean = |f: fn(&Twist2D) -> f64| tail.iter().map(|r| f(&r.estimate) - f(&r.truth)).sum::<f64>() / n;
        println!("{name}: {} scans, mean error vx {:+.4} vy {:+.4} m/s, omega {:+.4} rad/s", rows.len(), mean(|t| t.vx), mean(|t| t.vy), mean(|t| t.omega));
    }
}
