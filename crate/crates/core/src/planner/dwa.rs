use std::cmp::Ordering;
use std::f64::consts::PI;

use super::{GlobalPath, PlanError};
use crate::costmap::{Costmap, INSCRIBED};
use crate::geometry::{angle_diff, Point2, Pose2D, Twist2D};
use crate::kinematics::PlantConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwaConfig {
    pub v_min: f64,
    pub v_max: f64,
    /// Lateral speed bound; only sampled when `holonomic`.
    pub vy_max: f64,
    pub omega_max: f64,
    pub accel_v: f64,
    pub accel_omega: f64,
    /// Control period the window is reachable within, s.
    pub dt_cmd: f64,
    pub horizon: f64,
    pub sim_dt: f64,
    pub n_v: usize,
    pub n_vy: usize,
    pub n_omega: usize,
    pub holonomic: bool,
    pub w_heading: f64,
    pub w_clearance: f64,
    pub w_velocity: f64,
    pub lookahead: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 0.35,
            vy_max: 0.0,
            omega_max: 1.2,
            accel_v: 0.6,
            accel_omega: 2.0,
            dt_cmd: 0.05,
            horizon: 1.5,
            sim_dt: 0.1,
            n_v: 11,
            n_vy: 5,
            n_omega: 21,
            holonomic: false,
            w_heading: 0.8,
            w_clearance: 0.3,
            w_velocity: 0.2,
            lookahead: 0.6,
        }
    }
}

impl DwaConfig {
    pub fn for_plant(plant: &PlantConfig) -> Self {
        let holonomic = plant.kind.is_holonomic();
        Self {
            v_max: plant.v_max,
            vy_max: if holonomic { plant.v_max } else { 0.0 },
            omega_max: plant.omega_max,
            accel_v: plant.accel_linear,
            accel_omega: plant.accel_angular,
            holonomic,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerms {
    pub heading: f64,
    pub clearance: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub twist: Twist2D,
    pub trajectory: Vec<Pose2D>,
    pub terms: SampleTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwaChoice {
    pub twist: Twist2D,
    pub score: f64,
    pub trajectory: Vec<Pose2D>,
    pub target: Point2,
    pub admissible: usize,
    pub sampled: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Reachable interval `c ± d` intersected with `[min, max]`; when they do not
/// overlap, the reachable value nearest the bounds.
fn window(c: f64, d: f64, min: f64, max: f64) -> (f64, f64) {
    let (lo, hi) = ((c - d).max(min), (c + d).min(max));
    if lo <= hi {
        (lo, hi)
    } else if c - d > max {
        (c - d, c - d)
    } else {
        (c + d, c + d)
    }
}

/// Poses after each `sim_dt` step of holding `twist` for `duration`.
pub fn simulate(pose: &Pose2D, twist: &Twist2D, sim_dt: f64, duration: f64) -> Vec<Pose2D> {
    let steps = (duration / sim_dt - 1e-9).ceil().max(1.0) as usize;
    let step = twist.integrate(sim_dt);
    let mut out = Vec::with_capacity(steps);
    let mut p = *pose;
    for _ in 0..steps {
        p = p.compose(&step);
        out.push(p);
    }
    out
}

/// Point on `path` at least `lookahead` of arc length past the waypoint closest to `pos`.
pub fn pursuit_point(path: &[Point2], pos: Point2, lookahead: f64) -> Option<Point2> {
    let nearest = path
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance(pos).total_cmp(&b.1.distance(pos)))
        .map(|(i, _)| i)?;
    let mut run = 0.0;
    for i in nearest + 1..path.len() {
        run += path[i - 1].distance(path[i]);
        if run >= lookahead {
            return Some(path[i]);
        }
    }
    path.last().copied()
}

/// Raw (unnormalized) terms, or `None` when the trajectory enters an inscribed cell.
pub fn score_sample(cfg: &DwaConfig, pose: &Pose2D, twist: &Twist2D, costmap: &Costmap, target: Point2) -> Option<Sample> {
    let speed = twist.vx.hypot(twist.vy);
    let stop_time = if cfg.accel_v > 0.0 { speed / cfg.accel_v } else { 0.0 };
    let full = simulate(pose, twist, cfg.sim_dt, cfg.horizon.max(stop_time));
    let cap = costmap.config.inflation_radius;
    let mut clearance = cap;
    for p in &full {
        let pos = p.position();
        if costmap.cost_at(pos).is_some_and(|c| c >= INSCRIBED) {
            return None;
        }
        clearance = clearance.min(costmap.distance_at(pos).unwrap_or(cap));
    }
    let keep = (cfg.horizon / cfg.sim_dt - 1e-9).ceil().max(1.0) as usize;
    let trajectory: Vec<Pose2D> = full.into_iter().take(keep).collect();
    let end = trajectory.last().copied().unwrap_or(*pose);
    let to = target - end.position();
    // direction of travel at the end of the rollout; body heading when vy = 0
    let travel = end.theta + twist.vy.atan2(twist.vx);
    let heading = if to.norm() < 1e-9 { PI } else { PI - angle_diff(to.y.atan2(to.x), travel).abs() };
    Some(Sample { twist: *twist, trajectory, terms: SampleTerms { heading, clearance, velocity: speed } })
}

fn normalizer(vals: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = vals.clone().fold(f64::INFINITY, f64::min);
    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
    move |v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
}

/// Samples the dynamic window around `current` and returns the best admissible twist.
pub fn plan_local(cfg: &DwaConfig, current: &Twist2D, pose: &Pose2D, costmap: &Costmap, path: &GlobalPath) -> Result<DwaChoice, PlanError> {
    let target = pursuit_point(&path.waypoints, pose.position(), cfg.lookahead).ok_or(PlanError::EmptyPath)?;
    let dv = cfg.accel_v * cfg.dt_cmd;
    let dw = cfg.accel_omega * cfg.dt_cmd;
    let lin = |(lo, hi): (f64, f64), n| linspace(lo, hi, n);
    let vs = lin(window(current.vx, dv, cfg.v_min, cfg.v_max), cfg.n_v);
    let ws = lin(window(current.omega, dw, -cfg.omega_max, cfg.omega_max), cfg.n_omega);
    let vys = if cfg.holonomic {
        lin(window(current.vy, dv, -cfg.vy_max, cfg.vy_max), cfg.n_vy)
    } else {
        vec![0.0]
    };

    let mut samples = Vec::new();
    let mut sampled = 0;
    for &vx in &vs {
        for &vy in &vys {
            if vx.hypot(vy) > cfg.v_max.max(current.vx.hypot(current.vy)) + 1e-12 {
                continue;
            }
            for &w in &ws {
                sampled += 1;
                if let Some(s) = score_sample(cfg, pose, &Twist2D::new(vx, vy, w), costmap, target) {
                    samples.push(s);
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(PlanError::LocalMinimum);
    }
    let nh = normalizer(samples.iter().map(|s| s.terms.heading));
    let nc = normalizer(samples.iter().map(|s| s.terms.clearance));
    let nv = normalizer(samples.iter().map(|s| s.terms.velocity));
    let score = |s: &Sample| cfg.w_heading * nh(s.terms.heading) + cfg.w_clearance * nc(s.terms.clearance) + cfg.w_velocity * nv(s.terms.velocity);

    // higher score, then smaller |ω|, then slower
    let better = |a: &(f64, &Sample), b: &(f64, &Sample)| -> Ordering {
        a.0.total_cmp(&b.0)
            .then_with(|| b.1.twist.omega.abs().total_cmp(&a.1.twist.omega.abs()))
            .then_with(|| b.1.terms.velocity.total_cmp(&a.1.terms.velocity))
            .then_with(|| b.1.twist.vy.abs().total_cmp(&a.1.twist.vy.abs()))
    };
    let admissible = samples.len();
    let (best_score, best) = samples
        .iter()
        .map(|s| (score(s), s))
        .reduce(|a, b| if better(&b, &a) == Ordering::Greater { b } else { a })
        .expect("non-empty");
    Ok(DwaChoice { twist: best.twist, score: best_score, trajectory: best.trajectory.clone(), target, admissible, sampled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{build_global_costmap, CostmapConfig};
    use crate::grid::{Cell, GridGeometry, OccupancyGrid, LOG_ODDS_MAX};

    fn open_costmap() -> Costmap {
        let m = OccupancyGrid::new(GridGeometry::new(0.05, Pose2D::new(-2.0, -2.0, 0.0), 80, 80).unwrap());
        build_global_costmap(&m, &CostmapConfig::default())
    }

    fn straight_path(to: Point2) -> GlobalPath {
        let n = 40;
        let waypoints: Vec<Point2> = (0..=n).map(|i| Point2::new(to.x * i as f64 / n as f64, to.y * i as f64 / n as f64)).collect();
        GlobalPath { cells: vec![], waypoints, total_cost: 0.0 }
    }

    #[test]
    fn pursuit_point_walks_arc_length() {
        let path: Vec<Point2> = (0..20).map(|i| Point2::new(0.1 * i as f64, 0.0)).collect();
        let p = pursuit_point(&path, Point2::new(0.32, 0.1), 0.6).unwrap();
        assert!((p.x - 0.9).abs() < 1e-9);
        assert_eq!(pursuit_point(&path, Point2::new(1.85, 0.0), 0.6), Some(path[19]));
        assert_eq!(pursuit_point(&[], Point2::new(0.0, 0.0), 0.6), None);
    }

    #[test]
    fn accelerates_toward_goal_ahead() {
        let cm = open_costmap();
        let cfg = DwaConfig::default();
        let mut twist = Twist2D::ZERO;
        let path = straight_path(Point2::new(1.8, 0.0));
        for _ in 0..20 {
            twist = plan_local(&cfg, &twist, &Pose2D::IDENTITY, &cm, &path).unwrap().twist;
        }
        assert!((twist.vx - cfg.v_max).abs() < 1e-9, "{twist:?}");
        assert!(twist.omega.abs() < 1e-9);
    }

    #[test]
    fn turns_toward_goal_behind() {
        let cm = open_costmap();
        let cfg = DwaConfig::default();
        let path = straight_path(Point2::new(0.0, 1.5));
        let choice = plan_local(&cfg, &Twist2D::ZERO, &Pose2D::IDENTITY, &cm, &path).unwrap();
        assert!(choice.twist.omega > 0.0);
    }

    #[test]
    fn respects_dynamic_window() {
        let cm = open_costmap();
        let cfg = DwaConfig::default();
        let cur = Twist2D::new(0.1, 0.0, 0.3);
        let choice = plan_local(&cfg, &cur, &Pose2D::IDENTITY, &cm, &straight_path(Point2::new(1.5, -1.0))).unwrap();
        assert!((choice.twist.vx - cur.vx).abs() <= cfg.accel_v * cfg.dt_cmd + 1e-12);
        assert!((choice.twist.omega - cur.omega).abs() <= cfg.accel_omega * cfg.dt_cmd + 1e-12);
        assert_eq!(choice.sampled, cfg.n_v * cfg.n_omega);
    }

    #[test]
    fn boxed_in_is_local_minimum() {
        let mut m = OccupancyGrid::new(GridGeometry::new(0.05, Pose2D::new(-1.0, -1.0, 0.0), 40, 40).unwrap());
        for i in 0..40 {
            for c in [Cell::new(i, 17), Cell::new(i, 23), Cell::new(17, i), Cell::new(23, i)] {
                m.set(c, LOG_ODDS_MAX);
            }
        }
        let cm = build_global_costmap(&m, &CostmapConfig::default());
        let r = plan_local(&DwaConfig::default(), &Twist2D::ZERO, &Pose2D::IDENTITY, &cm, &straight_path(Point2::new(1.0, 0.0)));
        assert_eq!(r, Err(PlanError::LocalMinimum));
    }

    #[test]
    fn wall_ahead_is_not_driven_into() {
        let mut m = OccupancyGrid::new(GridGeometry::new(0.05, Pose2D::new(-2.0, -2.0, 0.0), 80, 80).unwrap());
        for r in 0..80 {
            m.set(Cell::new(50, r), LOG_ODDS_MAX); // x = 0.525
        }
        let cm = build_global_costmap(&m, &CostmapConfig::default());
        let cfg = DwaConfig::default();
        let mut pose = Pose2D::IDENTITY;
        let mut twist = Twist2D::ZERO;
        let path = straight_path(Point2::new(1.5, 0.0));
        for _ in 0..200 {
            match plan_local(&cfg, &twist, &pose, &cm, &path) {
                Ok(c) => twist = c.twist,
                Err(_) => break,
            }
            pose = pose.compose(&twist.integrate(cfg.dt_cmd));
            assert!(cm.cost_at(pose.position()).unwrap() < INSCRIBED, "{pose:?}");
        }
    }

    /// Independent exhaustive scorer on one grid of candidates.
    #[test]
    fn choice_maximizes_normalized_score() {
        let mut m = OccupancyGrid::new(GridGeometry::new(0.05, Pose2D::new(-2.0, -2.0, 0.0), 80, 80).unwrap());
        for r in 40..60 {
            m.set(Cell::new(55, r), LOG_ODDS_MAX);
        }
        let cm = build_global_costmap(&m, &CostmapConfig::default());
        let cfg = DwaConfig::default();
        let cur = Twist2D::new(0.2, 0.0, -0.1);
        let pose = Pose2D::new(0.0, 0.1, 0.2);
        let path = straight_path(Point2::new(1.7, 0.3));
        let choice = plan_local(&cfg, &cur, &pose, &cm, &path).unwrap();
        let target = choice.target;

        let mut rows = Vec::new();
        for i in 0..cfg.n_v {
            let v = (cur.vx - 0.03) + 0.06 * i as f64 / 10.0;
            for j in 0..cfg.n_omega {
                let w = (cur.omega - 0.1) + 0.2 * j as f64 / 20.0;
                let mut p = pose;
                let mut ok = true;
                let mut clear: f64 = 0.55;
                for _ in 0..15 {
                    p = p.compose(&Twist2D::new(v, 0.0, w).integrate(0.1));
                    let c = cm.geometry.cell_unchecked(p.position());
                    if cm.cost(c).is_some_and(|x| x >= INSCRIBED) {
                        ok = false;
                    }
                    clear = clear.min(cm.distance[cm.geometry.index(c)]);
                }
                if ok {
                    let bearing = (target.y - p.y).atan2(target.x - p.x);
                    rows.push((v, w, PI - angle_diff(bearing, p.theta).abs(), clear, v));
                }
            }
        }
        let span = |k: fn(&(f64, f64, f64, f64, f64)) -> f64| {
            let lo = rows.iter().map(k).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(k).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let (h0, h1) = span(|r| r.2);
        let (c0, c1) = span(|r| r.3);
        let (v0, v1) = span(|r| r.4);
        let n = |x: f64, lo: f64, hi: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        let best = rows
            .iter()
            .map(|r| 0.8 * n(r.2, h0, h1) + 0.3 * n(r.3, c0, c1) + 0.2 * n(r.4, v0, v1))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(choice.admissible, rows.len());
        assert!((choice.score - best).abs() < 1e-9, "{} vs {best}", choice.score);
    }

    #[test]
    fn window_above_cap_decelerates() {
        assert_eq!(window(0.3, 0.03, 0.0, 0.1), (0.27, 0.27));
        assert_eq!(window(-0.5, 0.03, 0.0, 0.35), (-0.47, -0.47));
        assert_eq!(window(0.1, 0.03, 0.0, 0.35), (0.07, 0.13));
        let v = linspace(0.0, 0.03, 11);
        assert_eq!(v.len(), 11);
        assert_eq!(v[10], 0.03);
    }

    #[test]
    fn holonomic_samples_lateral_axis() {
        let cm = open_costmap();
        let cfg = DwaConfig { holonomic: true, vy_max: 0.35, ..DwaConfig::default() };
        let mut twist = Twist2D::ZERO;
        let path = straight_path(Point2::new(0.0, 1.5));
        for _ in 0..10 {
            twist = plan_local(&cfg, &twist, &Pose2D::IDENTITY, &cm, &path).unwrap().twist;
        }
        assert!(twist.vy > 0.0 || twist.omega > 0.0, "{twist:?}");
    }
}
