//! Monte Carlo localization against a fixed occupancy map.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::edt;
use crate::geometry::{angle_diff, normalize_angle, LaserScan, Point2, Pose2D};
use crate::grid::{probability, GridGeometry, OccupancyGrid, FREE_THRESH};

#[derive(Debug, Error, PartialEq)]
pub enum MclError {
    #[error("featureless map: no occupied cells")]
    FeaturelessMap,
    #[error("empty particle set")]
    EmptySet,
    #[error("map has no free cell to sample from")]
    NoFreeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocParticle {
    pub pose: Pose2D,
    pub weight: f64,
}

/// Beam-endpoint model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub z_hit: f64,
    pub z_rand: f64,
    pub sigma_hit: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { z_hit: 0.95, z_rand: 0.05, sigma_hit: 0.1 }
    }
}

/// Distance from every cell to the nearest occupied cell.
#[derive(Debug, Clone)]
pub struct LikelihoodField {
    pub geometry: GridGeometry,
    pub distance: Vec<f64>,
    pub model: SensorModel,
}

impl LikelihoodField {
    pub fn build(map: &OccupancyGrid, model: SensorModel) -> Result<Self, MclError> {
        let mask = map.occupied_mask();
        if !mask.iter().any(|&m| m) {
            return Err(MclError::FeaturelessMap);
        }
        let g = map.geometry;
        Ok(Self { distance: edt::distance_transform(&mask, g.width, g.height, g.resolution), geometry: g, model })
    }

    /// Distance at the cell containing `p`; infinite off the map.
    pub fn distance_at(&self, p: Point2) -> f64 {
        let c = self.geometry.cell_unchecked(p);
        if self.geometry.contains(c) {
            self.distance[self.geometry.index(c)]
        } else {
            f64::INFINITY
        }
    }

    /// Bilinear blend of the four surrounding cell centres.
    pub fn distance_interp(&self, p: Point2) -> f64 {
        let g = &self.geometry;
        let fx = (p.x - g.origin.x) / g.resolution - 0.5;
        let fy = (p.y - g.origin.y) / g.resolution - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        if x0 < 0 || y0 < 0 || x0 + 1 >= g.width as i64 || y0 + 1 >= g.height as i64 {
            return self.distance_at(p);
        }
        let at = |x: i64, y: i64| self.distance[y as usize * g.width + x as usize];
        let bottom = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let top = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        bottom * (1.0 - ty) + top * ty
    }

    /// Log-likelihood of a scan taken from `robot_pose`, every `decimation`-th return.
    pub fn scan_log_likelihood(&self, scan: &LaserScan, robot_pose: &Pose2D, sensor_offset: &Pose2D, decimation: usize) -> f64 {
        let sensor = robot_pose.compose(sensor_offset);
        let m = &self.model;
        let inv2s2 = 1.0 / (2.0 * m.sigma_hit * m.sigma_hit);
        let floor = m.z_rand / scan.range_max;
        let step = decimation.max(1);
        let mut total = 0.0;
        for i in (0..scan.len()).step_by(step) {
            if !scan.is_return(i) {
                continue;
            }
            let r = scan.ranges[i];
            let a = scan.bearing(i);
            let end = sensor.transform_point(Point2::new(r * a.cos(), r * a.sin()));
            let d = self.distance_interp(end);
            total += (m.z_hit * (-d * d * inv2s2).exp() + floor).ln();
        }
        total
    }
}

/// Coordinate ascent on the scan likelihood, never leaving `window` around
/// `start`. Each round halves the step.
pub fn hill_climb(
    field: &LikelihoodField,
    start: Pose2D,
    scan: &LaserScan,
    sensor_offset: &Pose2D,
    window: (f64, f64, f64),
    rounds: usize,
    decimation: usize,
) -> (Pose2D, f64) {
    let score = |p: &Pose2D| field.scan_log_likelihood(scan, p, sensor_offset, decimation);
    let (wx, wy, wt) = window;
    let mut best = start;
    let mut best_score = score(&start);
    for round in 0..rounds {
        let s = 0.5f64.powi(round as i32);
        let moves = [(wx * s, 0.0, 0.0), (-wx * s, 0.0, 0.0), (0.0, wy * s, 0.0), (0.0, -wy * s, 0.0), (0.0, 0.0, wt * s), (0.0, 0.0, -wt * s)];
        loop {
            let mut improved = None;
            for (dx, dy, dt) in moves {
                let cand = Pose2D::new(best.x + dx, best.y + dy, best.theta + dt);
                if (cand.x - start.x).abs() > wx + 1e-12 || (cand.y - start.y).abs() > wy + 1e-12 || angle_diff(cand.theta, start.theta).abs() > wt + 1e-12 {
                    continue;
                }
                let v = score(&cand);
                if v > improved.map_or(best_score, |(_, b)| b) {
                    improved = Some((cand, v));
                }
            }
            match improved {
                Some((p, v)) => {
                    best = p;
                    best_score = v;
                }
                None => break,
            }
        }
    }
    (best, best_score)
}

/// Odometry noise: σ of each delta component grows with the motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionNoise {
    pub trans_per_trans: f64,
    pub trans_per_rot: f64,
    pub rot_per_trans: f64,
    pub rot_per_rot: f64,
    /// Minimum σ added whenever the delta is non-zero.
    pub trans_floor: f64,
    pub rot_floor: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            trans_per_trans: 0.1,
            trans_per_rot: 0.02,
            rot_per_trans: 0.1,
            rot_per_rot: 0.1,
            trans_floor: 0.002,
            rot_floor: 0.002,
        }
    }
}

impl MotionNoise {
    pub fn none() -> Self {
        Self { trans_per_trans: 0.0, trans_per_rot: 0.0, rot_per_trans: 0.0, rot_per_rot: 0.0, trans_floor: 0.0, rot_floor: 0.0 }
    }

    pub fn sigmas(&self, delta: &Pose2D) -> (f64, f64) {
        let t = delta.x.hypot(delta.y);
        let r = delta.theta.abs();
        let moving = t > 0.0 || r > 0.0;
        let (tf, rf) = if moving { (self.trans_floor, self.rot_floor) } else { (0.0, 0.0) };
        (
            self.trans_per_trans * t + self.trans_per_rot * r + tf,
            self.rot_per_trans * t + self.rot_per_rot * r + rf,
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, delta: &Pose2D, rng: &mut R) -> Pose2D {
        let (st, sr) = self.sigmas(delta);
        let n = |s: f64, rng: &mut R| if s > 0.0 { Normal::new(0.0, s).expect("finite sigma").sample(rng) } else { 0.0 };
        let dx = delta.x + n(st, rng);
        let dy = delta.y + n(st, rng);
        let dth = delta.theta + n(sr, rng);
        Pose2D::new(dx, dy, dth)
    }
}

/// Propagates every particle by a noisy copy of `odom_delta`; weights untouched.
pub fn motion_update<R: Rng + ?Sized>(particles: &mut [LocParticle], odom_delta: &Pose2D, noise: &MotionNoise, rng: &mut R) {
    for p in particles.iter_mut() {
        let d = noise.sample(odom_delta, rng);
        p.pose = p.pose.compose(&d);
    }
}

pub fn effective_sample_size(particles: &[LocParticle]) -> f64 {
    1.0 / particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
}

/// Indices drawn by systematic (low-variance) resampling over `weights`.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let start = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cumulative = weights[0];
    for m in 0..n {
        let u = start + m as f64 * step;
        while u > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Systematic (low-variance) resampling; output weights are uniform.
pub fn low_variance_resample<R: Rng + ?Sized>(particles: &[LocParticle], rng: &mut R) -> Vec<LocParticle> {
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let step = 1.0 / particles.len() as f64;
    systematic_indices(&weights, rng).into_iter().map(|i| LocParticle { pose: particles[i].pose, weight: step }).collect()
}

/// Normalizes log-weights in place. Returns `false` if nothing survives.
pub fn normalize_log_weights(log_w: &[f64], out: &mut [LocParticle]) -> bool {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|p| p.weight = u);
        return false;
    }
    let mut sum = 0.0;
    for (p, &l) in out.iter_mut().zip(log_w) {
        p.weight = (l - max).exp();
        sum += p.weight;
    }
    out.iter_mut().for_each(|p| p.weight /= sum);
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementOutcome {
    pub n_eff: f64,
    pub resampled: bool,
    /// Every weight underflowed; the caller should re-seed the set.
    pub degenerate: bool,
}

/// Reweights by the scan likelihood and resamples when `N_eff < N/2`.
pub fn measurement_update<R: Rng + ?Sized>(
    particles: &mut Vec<LocParticle>,
    scan: &LaserScan,
    field: &LikelihoodField,
    sensor_offset: &Pose2D,
    decimation: usize,
    exponent: f64,
    rng: &mut R,
) -> MeasurementOutcome {
    let log_w: Vec<f64> = particles
        .iter()
        .map(|p| p.weight.ln() + exponent * field.scan_log_likelihood(scan, &p.pose, sensor_offset, decimation))
        .collect();
    if !normalize_log_weights(&log_w, particles) {
        return MeasurementOutcome { n_eff: particles.len() as f64, resampled: false, degenerate: true };
    }
    let n_eff = effective_sample_size(particles);
    let resample = n_eff < 0.5 * particles.len() as f64;
    if resample {
        *particles = low_variance_resample(particles, rng);
    }
    MeasurementOutcome { n_eff, resampled: resample, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose2D,
    /// Weighted scatter of (x, y, θ) around the mean.
    pub covariance: Matrix3<f64>,
}

/// Weighted mean position and circular-mean heading.
pub fn pose_estimate(particles: &[LocParticle]) -> Result<PoseEstimate, MclError> {
    if particles.is_empty() {
        return Err(MclError::EmptySet);
    }
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
    for p in particles {
        let w = p.weight / total;
        x += w * p.pose.x;
        y += w * p.pose.y;
        s += w * p.pose.theta.sin();
        c += w * p.pose.theta.cos();
    }
    let theta = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
    let mean = Pose2D::new(x, y, theta);
    let mut cov = Matrix3::zeros();
    for p in particles {
        let w = p.weight / total;
        let d = nalgebra::Vector3::new(p.pose.x - mean.x, p.pose.y - mean.y, angle_diff(p.pose.theta, mean.theta));
        cov += w * d * d.transpose();
    }
    Ok(PoseEstimate { pose: mean, covariance: cov })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizerConfig {
    pub n_particles: usize,
    pub model: SensorModel,
    pub noise: MotionNoise,
    pub decimation: usize,
    /// Measurement updates run once the robot has moved this far...
    pub update_min_d: f64,
    /// ...or turned this much.
    pub update_min_a: f64,
    /// While the cloud's positional spread (RMS, m) exceeds this, each
    /// particle is hill-climbed on the field and the likelihood is tempered.
    /// Once converged the filter runs plain.
    pub global_spread: f64,
    /// Hill-climb (dx, dy, dθ) window and halving rounds.
    pub refine_window: (f64, f64, f64),
    pub refine_rounds: usize,
    /// Log-likelihood scale while dispersed; below 1 it offsets the
    /// overconfidence of treating beams as independent.
    pub exponent: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            model: SensorModel::default(),
            noise: MotionNoise::default(),
            decimation: 4,
            update_min_d: 0.05,
            update_min_a: 0.05,
            refine_window: (0.2, 0.2, 8f64.to_radians()),
            global_spread: 0.5,
            refine_rounds: 3,
            exponent: 0.01,
        }
    }
}

/// Owns the particle cloud and the field; drives motion and measurement updates.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub config: LocalizerConfig,
    pub field: LikelihoodField,
    pub particles: Vec<LocParticle>,
    pub sensor_offset: Pose2D,
    free_cells: Vec<usize>,
    pending: Pose2D,
    pub last_n_eff: f64,
    pub resets: u64,
}

impl Localizer {
    pub fn new(map: &OccupancyGrid, config: LocalizerConfig, sensor_offset: Pose2D) -> Result<Self, MclError> {
        let field = LikelihoodField::build(map, config.model)?;
        let free_cells: Vec<usize> = (0..map.geometry.len())
            .filter(|&i| probability(map.cells()[i]) < FREE_THRESH && field.distance[i] > 0.0)
            .collect();
        if free_cells.is_empty() {
            return Err(MclError::NoFreeSpace);
        }
        Ok(Self {
            config,
            field,
            particles: Vec::new(),
            sensor_offset,
            free_cells,
            pending: Pose2D::IDENTITY,
            last_n_eff: 0.0,
            resets: 0,
        })
    }

    /// Spreads particles uniformly over known-free cells at least `margin` from obstacles.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, margin: f64, rng: &mut R) {
        let g = self.field.geometry;
        let pool: Vec<usize> = self.free_cells.iter().copied().filter(|&i| self.field.distance[i] >= margin).collect();
        let pool = if pool.is_empty() { self.free_cells.clone() } else { pool };
        let n = self.config.n_particles;
        self.particles = (0..n)
            .map(|_| {
                let c = g.cell_at(pool[rng.gen_range(0..pool.len())]);
                let center = g.cell_center(c);
                let jx = (rng.gen::<f64>() - 0.5) * g.resolution;
                let jy = (rng.gen::<f64>() - 0.5) * g.resolution;
                let th = normalize_angle(rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
                LocParticle { pose: Pose2D::new(center.x + jx, center.y + jy, th), weight: 1.0 / n as f64 }
            })
            .collect();
        self.pending = Pose2D::IDENTITY;
    }

    pub fn init_gaussian<R: Rng + ?Sized>(&mut self, mean: Pose2D, sigma_xy: f64, sigma_theta: f64, rng: &mut R) {
        let n = self.config.n_particles;
        let nxy = Normal::new(0.0, sigma_xy.max(1e-12)).expect("finite sigma");
        let nth = Normal::new(0.0, sigma_theta.max(1e-12)).expect("finite sigma");
        self.particles = (0..n)
            .map(|_| LocParticle {
                pose: Pose2D::new(mean.x + nxy.sample(rng), mean.y + nxy.sample(rng), mean.theta + nth.sample(rng)),
                weight: 1.0 / n as f64,
            })
            .collect();
        self.pending = Pose2D::IDENTITY;
    }

    /// Applies an odometry increment and, once enough motion has built up
    /// (or when `force` is set), a measurement update. Returns `true` when the
    /// measurement update ran.
    pub fn update<R: Rng + ?Sized>(&mut self, odom_delta: &Pose2D, scan: &LaserScan, force: bool, rng: &mut R) -> bool {
        motion_update(&mut self.particles, odom_delta, &self.config.noise, rng);
        self.pending = self.pending.compose(odom_delta);
        let moved = self.pending.x.hypot(self.pending.y) >= self.config.update_min_d
            || self.pending.theta.abs() >= self.config.update_min_a;
        if !(moved || force) {
            return false;
        }
        self.pending = Pose2D::IDENTITY;
        let c = self.config;
        let dispersed = self.spread() > c.global_spread;
        if dispersed {
            for p in self.particles.iter_mut() {
                p.pose = hill_climb(&self.field, p.pose, scan, &self.sensor_offset, c.refine_window, c.refine_rounds, c.decimation).0;
            }
        }
        let exponent = if dispersed { c.exponent } else { 1.0 };
        let out = measurement_update(&mut self.particles, scan, &self.field, &self.sensor_offset, c.decimation, exponent, rng);
        self.last_n_eff = out.n_eff;
        if out.degenerate {
            self.resets += 1;
            self.init_uniform(0.0, rng);
        }
        true
    }

    pub fn estimate(&self) -> Result<PoseEstimate, MclError> {
        pose_estimate(&self.particles)
    }

    /// Weighted RMS distance of the particles from their mean position.
    pub fn spread(&self) -> f64 {
        match self.estimate() {
            Ok(e) => (e.covariance[(0, 0)] + e.covariance[(1, 1)]).max(0.0).sqrt(),
            Err(_) => f64::INFINITY,
        }
    }
}
