//! Inflated traversal-cost grids shared by the planners.

use std::path::Path;

use crate::edt;
use crate::geometry::{LaserScan, Point2, Pose2D};
use crate::grid::{Cell, GridGeometry, OccupancyGrid};
use crate::mapio;

pub const LETHAL: u8 = 254;
pub const INSCRIBED: u8 = 253;
const MAX_DECAY_COST: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostmapConfig {
    pub inscribed_radius: f64,
    pub inflation_radius: f64,
    /// Exponential fall-off rate beyond the inscribed radius, 1/m.
    pub decay: f64,
    /// Side of the square rolling window for local costmaps, m.
    pub local_window: f64,
}

impl Default for CostmapConfig {
    fn default() -> Self {
        Self { inscribed_radius: 0.18, inflation_radius: 0.55, decay: 10.0, local_window: 4.0 }
    }
}

/// Cost beyond the inscribed band; 252 at `d = inscribed_radius`.
pub fn decay_cost(d: f64, cfg: &CostmapConfig) -> u8 {
    (MAX_DECAY_COST * (-cfg.decay * (d - cfg.inscribed_radius)).exp()).round() as u8
}

/// Cost of a cell at distance `d` (m) from the nearest lethal cell.
pub fn inflated_cost(d: f64, cfg: &CostmapConfig) -> u8 {
    if d <= 0.0 {
        LETHAL
    } else if d <= cfg.inscribed_radius {
        INSCRIBED
    } else if d <= cfg.inflation_radius {
        decay_cost(d, cfg)
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub geometry: GridGeometry,
    pub cost: Vec<u8>,
    /// Distance to the nearest lethal cell, m (infinite when none exist).
    pub distance: Vec<f64>,
    pub config: CostmapConfig,
}

impl Costmap {
    fn from_lethal(geometry: GridGeometry, lethal: &[bool], config: CostmapConfig) -> Self {
        let distance = edt::distance_transform(lethal, geometry.width, geometry.height, geometry.resolution);
        let cost = distance.iter().map(|&d| inflated_cost(d, &config)).collect();
        Self { geometry, cost, distance, config }
    }

    pub fn cost(&self, c: Cell) -> Option<u8> {
        self.geometry.contains(c).then(|| self.cost[self.geometry.index(c)])
    }

    pub fn cost_at(&self, p: Point2) -> Option<u8> {
        self.cost(self.geometry.cell_unchecked(p))
    }

    /// Distance to lethal at `p`; `None` outside the grid.
    pub fn distance_at(&self, p: Point2) -> Option<f64> {
        let c = self.geometry.cell_unchecked(p);
        self.geometry.contains(c).then(|| self.distance[self.geometry.index(c)])
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        self.cost(c).is_some_and(|v| v < INSCRIBED)
    }

    /// Forgets every obstacle.
    pub fn clear(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = 0);
        self.distance.iter_mut().for_each(|d| *d = f64::INFINITY);
    }

    /// Writes the costs as a PGM (white = free, black = lethal).
    pub fn dump_pgm(&self, path: &Path) -> std::io::Result<()> {
        let g = &self.geometry;
        let mut px = Vec::with_capacity(g.len());
        for row in (0..g.height).rev() {
            for col in 0..g.width {
                px.push(255 - self.cost[row * g.width + col]);
            }
        }
        std::fs::write(path, mapio::encode_pgm(g.width, g.height, &px))
    }
}

/// Costmap over the whole map: occupied cells are lethal, then inflated.
pub fn build_global_costmap(map: &OccupancyGrid, cfg: &CostmapConfig) -> Costmap {
    Costmap::from_lethal(map.geometry, &map.occupied_mask(), *cfg)
}

/// Geometry of the rolling window centred on `center`, snapped to the resolution.
pub fn local_window(center: Point2, resolution: f64, cfg: &CostmapConfig) -> GridGeometry {
    let cells = (cfg.local_window / resolution).round().max(1.0) as usize;
    let half = 0.5 * cells as f64 * resolution;
    let ox = ((center.x - half) / resolution).floor() * resolution;
    let oy = ((center.y - half) / resolution).floor() * resolution;
    GridGeometry::new(resolution, Pose2D::new(ox, oy, 0.0), cells, cells).expect("window is non-empty")
}

/// Scan-only costmap in a window around the robot; returns at `range_max` are ignored.
pub fn build_local_costmap(scan: &LaserScan, robot_pose: &Pose2D, sensor_offset: &Pose2D, resolution: f64, cfg: &CostmapConfig) -> Costmap {
    let geometry = local_window(robot_pose.position(), resolution, cfg);
    let sensor = robot_pose.compose(sensor_offset);
    let mut lethal = vec![false; geometry.len()];
    for (_, p) in scan.endpoints() {
        let c = geometry.cell_unchecked(sensor.transform_point(p));
        if geometry.contains(c) {
            lethal[geometry.index(c)] = true;
        }
    }
    Costmap::from_lethal(geometry, &lethal, *cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LOG_ODDS_MAX;
    use std::f64::consts::PI;

    fn map(w: usize, h: usize, res: f64) -> OccupancyGrid {
        OccupancyGrid::new(GridGeometry::new(res, Pose2D::IDENTITY, w, h).unwrap())
    }

    #[test]
    fn empty_map_costs_nothing() {
        let cm = build_global_costmap(&map(10, 10, 0.05), &CostmapConfig::default());
        assert!(cm.cost.iter().all(|&c| c == 0));
    }

    #[test]
    fn single_lethal_cell_ring() {
        let mut m = map(9, 9, 0.1);
        m.set(Cell::new(4, 4), LOG_ODDS_MAX);
        let cfg = CostmapConfig { inscribed_radius: 0.1, inflation_radius: 0.3, decay: 10.0, local_window: 4.0 };
        let cm = build_global_costmap(&m, &cfg);
        assert_eq!(cm.cost(Cell::new(4, 4)), Some(LETHAL));
        for c in [Cell::new(3, 4), Cell::new(5, 4), Cell::new(4, 3), Cell::new(4, 5)] {
            assert_eq!(cm.cost(c), Some(INSCRIBED));
        }
        // diagonal neighbours sit at √2 cells, outside the inscribed radius
        let diag = decay_cost(0.1 * 2f64.sqrt(), &cfg);
        assert_eq!(cm.cost(Cell::new(5, 5)), Some(diag));
        assert!(diag < INSCRIBED);
        assert_eq!(cm.cost(Cell::new(8, 8)), Some(0));
    }

    #[test]
    fn decay_formula() {
        let cfg = CostmapConfig::default();
        assert_eq!(decay_cost(cfg.inscribed_radius, &cfg), 252);
        let mut last = 252;
        let mut d = cfg.inscribed_radius;
        while d < cfg.inflation_radius {
            d += 0.05;
            let c = decay_cost(d, &cfg);
            assert!(c < last, "{c} !< {last} at {d}");
            last = c;
        }
        assert_eq!(inflated_cost(cfg.inflation_radius + 1e-9, &cfg), 0);
    }

    #[test]
    fn monotone_in_distance() {
        let mut m = map(40, 30, 0.05);
        for c in [Cell::new(5, 5), Cell::new(20, 18), Cell::new(33, 2)] {
            m.set(c, LOG_ODDS_MAX);
        }
        let cm = build_global_costmap(&m, &CostmapConfig::default());
        let mut pairs: Vec<(f64, u8)> = cm.distance.iter().copied().zip(cm.cost.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        for (d, c) in pairs {
            if d <= 0.18 {
                assert!(c >= INSCRIBED);
            }
        }
        assert_eq!(cm, build_global_costmap(&m, &CostmapConfig::default()));
    }

    #[test]
    fn local_all_max_range_is_free() {
        let scan = LaserScan::new(0.0, -PI, 2.0 * PI / 90.0, 8.0, vec![8.0; 90]).unwrap();
        let cm = build_local_costmap(&scan, &Pose2D::new(3.0, 2.0, 0.4), &Pose2D::IDENTITY, 0.05, &CostmapConfig::default());
        assert!(cm.cost.iter().all(|&c| c == 0));
        assert_eq!(cm.geometry.width, 80);
    }

    #[test]
    fn local_hit_dead_ahead() {
        let n = 360;
        let mut ranges = vec![8.0; n];
        ranges[180] = 1.0; // bearing 0
        let scan = LaserScan::new(0.0, -PI, 2.0 * PI / n as f64, 8.0, ranges).unwrap();
        let pose = Pose2D::new(1.02, -0.53, 0.0);
        let cm = build_local_costmap(&scan, &pose, &Pose2D::IDENTITY, 0.05, &CostmapConfig::default());
        let lethal: Vec<Point2> = (0..cm.cost.len())
            .filter(|&i| cm.cost[i] == LETHAL)
            .map(|i| cm.geometry.cell_center(cm.geometry.cell_at(i)))
            .collect();
        assert_eq!(lethal.len(), 1);
        let rel = lethal[0] - pose.position();
        assert!((rel.x - 1.0).abs() <= 0.05 && rel.y.abs() <= 0.05, "{rel:?}");
    }

    #[test]
    fn window_follows_robot() {
        let cfg = CostmapConfig::default();
        let a = local_window(Point2::new(1.0, 1.0), 0.05, &cfg);
        let b = local_window(Point2::new(1.5, 0.75), 0.05, &cfg);
        assert!((b.origin.x - a.origin.x - 0.5).abs() < 1e-9);
        assert!((b.origin.y - a.origin.y + 0.25).abs() < 1e-9);
        let r = (a.origin.x / 0.05).round() * 0.05;
        assert!((a.origin.x - r).abs() < 1e-9);
    }
}
