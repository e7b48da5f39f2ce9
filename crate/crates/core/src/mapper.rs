//! Occupancy-grid mapping with a small Rao-Blackwellized particle filter.
//!
//! Every particle carries a pose hypothesis and its own grid. A motion update
//! samples the odometry noise, a short hill climb aligns the scan with the
//! particle's grid, and the match score becomes the particle's weight.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{LaserScan, Point2, Pose2D};
use crate::grid::{bresenham, GridGeometry, OccupancyGrid};
use crate::mcl::{hill_climb, systematic_indices, LikelihoodField, MotionNoise, SensorModel};

pub use crate::grid::ray_cells;

#[derive(Debug, Error, PartialEq)]
pub enum MapperError {
    #[error("empty particle set")]
    EmptySet,
    #[error("invalid mapper config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapParticle {
    pub pose: Pose2D,
    pub weight: f64,
    pub grid: OccupancyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperConfig {
    pub n_particles: usize,
    pub resolution: f64,
    pub l_occ: f64,
    pub l_free: f64,
    /// Resample when `N_eff < resample_threshold * N`.
    pub resample_threshold: f64,
    /// Largest correction (dx, dy, dθ) the scan match may apply.
    pub refine_window: (f64, f64, f64),
    pub refine_rounds: usize,
    pub decimation: usize,
    /// Returns farther than this only clear cells, up to this range.
    pub max_usable_range: f64,
    pub noise: MotionNoise,
    pub model: SensorModel,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            n_particles: 15,
            resolution: 0.05,
            l_occ: 0.6,
            l_free: -0.4,
            resample_threshold: 0.5,
            refine_window: (0.05, 0.05, 2f64.to_radians()),
            refine_rounds: 5,
            decimation: 4,
            max_usable_range: 5.0,
            noise: MotionNoise { trans_per_trans: 0.05, trans_per_rot: 0.01, rot_per_trans: 0.05, rot_per_rot: 0.05, ..MotionNoise::default() },
            model: SensorModel { sigma_hit: 0.05, ..SensorModel::default() },
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<(), MapperError> {
        if self.n_particles == 0 {
            return Err(MapperError::InvalidConfig("n_particles must be at least 1"));
        }
        if !(self.l_occ > 0.0 && self.l_free < 0.0) {
            return Err(MapperError::InvalidConfig("need l_occ > 0 > l_free"));
        }
        if !(self.resolution > 0.0) {
            return Err(MapperError::InvalidConfig("resolution must be positive"));
        }
        Ok(())
    }
}

/// Inverse sensor model. Each cell is touched at most once per scan and a hit
/// wins over a pass-through. Beams longer than `max_range` are cut there and
/// only clear.
pub fn integrate_scan(grid: &mut OccupancyGrid, sensor_pose: &Pose2D, scan: &LaserScan, l_occ: f64, l_free: f64, max_range: f64) {
    const FREE: u8 = 1;
    const OCC: u8 = 2;
    let g = grid.geometry;
    let origin = g.cell_unchecked(sensor_pose.position());
    if !g.contains(origin) {
        return;
    }
    let mut marks = vec![0u8; g.len()];
    for i in 0..scan.len() {
        let hit = scan.is_return(i) && scan.ranges[i] <= max_range;
        let r = scan.ranges[i].min(max_range);
        let a = scan.bearing(i);
        let end = sensor_pose.transform_point(Point2::new(r * a.cos(), r * a.sin()));
        let cells = bresenham(origin, g.cell_unchecked(end));
        let last = cells.len() - 1;
        for (k, c) in cells.into_iter().enumerate() {
            if !g.contains(c) {
                break;
            }
            let m = &mut marks[g.index(c)];
            if k == last && hit {
                *m = OCC;
            } else if *m == 0 {
                *m = FREE;
            }
        }
    }
    for (i, m) in marks.into_iter().enumerate() {
        match m {
            FREE => grid.add(g.cell_at(i), l_free),
            OCC => grid.add(g.cell_at(i), l_occ),
            _ => {}
        }
    }
}

/// Greedy coordinate search for the pose that best explains `scan` in `field`.
pub fn refine_pose(field: &LikelihoodField, start: Pose2D, scan: &LaserScan, sensor_offset: &Pose2D, cfg: &MapperConfig) -> (Pose2D, f64) {
    hill_climb(field, start, scan, sensor_offset, cfg.refine_window, cfg.refine_rounds, cfg.decimation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperStep {
    pub n_eff: f64,
    pub resampled: bool,
}

/// One filter step: sample motion, scan-match, reweight, update grids, maybe resample.
pub fn mapper_update<R: Rng + ?Sized>(
    particles: &mut Vec<MapParticle>,
    odom_delta: &Pose2D,
    scan: &LaserScan,
    sensor_offset: &Pose2D,
    cfg: &MapperConfig,
    rng: &mut R,
) -> MapperStep {
    let mut log_w = Vec::with_capacity(particles.len());
    for p in particles.iter_mut() {
        let guess = p.pose.compose(&cfg.noise.sample(odom_delta, rng));
        let (pose, score) = match LikelihoodField::build(&p.grid, cfg.model) {
            Ok(field) => refine_pose(&field, guess, scan, sensor_offset, cfg),
            Err(_) => (guess, 0.0),
        };
        p.pose = pose;
        log_w.push(p.weight.ln() + score);
        integrate_scan(&mut p.grid, &pose.compose(sensor_offset), scan, cfg.l_occ, cfg.l_free, cfg.max_usable_range);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        for (p, w) in particles.iter_mut().zip(w) {
            p.weight = w / sum;
        }
    } else {
        let u = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = u);
    }
    let n = particles.len() as f64;
    let n_eff = 1.0 / particles.iter().map(|p| p.weight * p.weight).sum::<f64>();
    let resampled = n_eff < cfg.resample_threshold * n;
    if resampled {
        let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
        let picks = systematic_indices(&weights, rng);
        let mut next: Vec<MapParticle> = picks.into_iter().map(|i| particles[i].clone()).collect();
        next.iter_mut().for_each(|p| p.weight = 1.0 / n);
        *particles = next;
    }
    MapperStep { n_eff, resampled }
}

/// Index of the heaviest particle; ties go to the lowest index.
pub fn best_index(particles: &[MapParticle]) -> Result<usize, MapperError> {
    let mut best: Option<usize> = None;
    for (i, p) in particles.iter().enumerate() {
        if best.is_none_or(|b| p.weight > particles[b].weight) {
            best = Some(i);
        }
    }
    best.ok_or(MapperError::EmptySet)
}

pub fn best_map(particles: &[MapParticle]) -> Result<&OccupancyGrid, MapperError> {
    best_index(particles).map(|i| &particles[i].grid)
}

/// Owns a particle set and its configuration.
#[derive(Debug, Clone)]
pub struct Mapper {
    pub config: MapperConfig,
    pub particles: Vec<MapParticle>,
    pub sensor_offset: Pose2D,
    pub updates: usize,
}

impl Mapper {
    pub fn new(geometry: GridGeometry, start: Pose2D, sensor_offset: Pose2D, config: MapperConfig) -> Result<Self, MapperError> {
        config.validate()?;
        let w = 1.0 / config.n_particles as f64;
        let particles = (0..config.n_particles).map(|_| MapParticle { pose: start, weight: w, grid: OccupancyGrid::new(geometry) }).collect();
        Ok(Self { config, particles, sensor_offset, updates: 0 })
    }

    pub fn update<R: Rng + ?Sized>(&mut self, odom_delta: &Pose2D, scan: &LaserScan, rng: &mut R) -> MapperStep {
        self.updates += 1;
        mapper_update(&mut self.particles, odom_delta, scan, &self.sensor_offset, &self.config, rng)
    }

    pub fn best_map(&self) -> &OccupancyGrid {
        best_map(&self.particles).expect("mapper keeps at least one particle")
    }

    pub fn best_pose(&self) -> Pose2D {
        self.particles[best_index(&self.particles).expect("non-empty")].pose
    }
}
