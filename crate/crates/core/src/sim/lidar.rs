use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::World;
use crate::geometry::{LaserScan, Pose2D};

/// 360° scanner. Beam `i` points at `-π + i·2π/n` in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub n_beams: usize,
    pub range_max: f64,
    pub noise_sigma: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { n_beams: 360, range_max: 12.0, noise_sigma: 0.01 }
    }
}

impl LidarConfig {
    pub fn angle_min(&self) -> f64 {
        -PI
    }

    pub fn angle_increment(&self) -> f64 {
        2.0 * PI / self.n_beams as f64
    }
}

/// Casts every beam against the world; misses and hits beyond `range_max`
/// read exactly `range_max`. The timestamp is left at zero.
pub fn raycast_scan<R: Rng + ?Sized>(world: &World, sensor_pose: &Pose2D, cfg: &LidarConfig, rng: &mut R) -> LaserScan {
    assert!(cfg.n_beams >= LaserScan::MIN_BEAMS, "scanner needs at least 8 beams");
    let origin = sensor_pose.position();
    let inc = cfg.angle_increment();
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma"));
    let ranges = (0..cfg.n_beams)
        .map(|i| {
            let bearing = cfg.angle_min() + i as f64 * inc;
            match world.cast(origin, sensor_pose.theta + bearing) {
                Some(d) if d < cfg.range_max => {
                    let noisy = match &noise {
                        Some(n) => d + n.sample(rng),
                        None => d,
                    };
                    noisy.clamp(0.0, cfg.range_max)
                }
                _ => cfg.range_max,
            }
        })
        .collect();
    LaserScan::new(0.0, cfg.angle_min(), inc, cfg.range_max, ranges).expect("scanner layout is valid")
}
