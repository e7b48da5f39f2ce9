//! Global (Dijkstra) and local (dynamic window) planning.

mod dwa;
mod global;

pub use dwa::{plan_local, pursuit_point, score_sample, simulate, DwaChoice, DwaConfig, Sample, SampleTerms};
pub use global::{edge_cost, plan_global, snap_goal, GOAL_SNAP_RADIUS, NEIGHBORS};

use thiserror::Error;

use crate::geometry::Point2;
use crate::grid::Cell;

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum PlanError {
    #[error("robot in collision: start cell is not traversable")]
    RobotInCollision,
    #[error("start lies outside the costmap")]
    StartOffMap,
    #[error("goal lies outside the costmap")]
    GoalOffMap,
    #[error("goal in obstacle")]
    GoalInObstacle,
    #[error("no path to goal")]
    NoPath,
    #[error("local minimum: no admissible velocity")]
    LocalMinimum,
    #[error("global path is empty")]
    EmptyPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPath {
    /// Cell centres from start to goal.
    pub waypoints: Vec<Point2>,
    pub cells: Vec<Cell>,
    pub total_cost: f64,
}

impl GlobalPath {
    pub fn goal(&self) -> Option<Point2> {
        self.waypoints.last().copied()
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.waypoints {
            s.push_str(&format!("{:.4},{:.4}\n", p.x, p.y));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{build_global_costmap, Costmap, CostmapConfig, INSCRIBED, LETHAL};
    use crate::geometry::Pose2D;
    use crate::grid::{GridGeometry, OccupancyGrid, LOG_ODDS_MAX};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw_costmap(w: usize, h: usize, cost: Vec<u8>) -> Costmap {
        let geometry = GridGeometry::new(0.1, Pose2D::IDENTITY, w, h).unwrap();
        Costmap { geometry, distance: vec![f64::INFINITY; cost.len()], cost, config: CostmapConfig::default() }
    }

    /// Bellman-Ford over the same graph, relaxing every edge until nothing changes.
    fn bellman(cm: &Costmap, start: Cell, goal: Cell) -> f64 {
        let g = &cm.geometry;
        let mut dist = vec![f64::INFINITY; g.len()];
        dist[g.index(start)] = 0.0;
        loop {
            let mut changed = false;
            for i in 0..g.len() {
                if !dist[i].is_finite() {
                    continue;
                }
                let c = g.cell_at(i);
                for (dc, dr) in NEIGHBORS {
                    let nb = Cell::new(c.col + dc, c.row + dr);
                    match cm.cost(nb) {
                        Some(v) if v < INSCRIBED => {
                            let len = if dc != 0 && dr != 0 { 2f64.sqrt() } else { 1.0 };
                            let cand = dist[i] + len * g.resolution * (1.0 + v as f64 / 128.0);
                            let j = g.index(nb);
                            if cand < dist[j] {
                                dist[j] = cand;
                                changed = true;
                            }
                        }
                        _ => {}
                    }
                }
            }
            if !changed {
                return dist[g.index(goal)];
            }
        }
    }

    fn at(cm: &Costmap, c: Cell) -> Pose2D {
        let p = cm.geometry.cell_center(c);
        Pose2D::new(p.x, p.y, 0.0)
    }

    #[test]
    fn start_equals_goal() {
        let cm = raw_costmap(5, 5, vec![0; 25]);
        let p = at(&cm, Cell::new(2, 2));
        let path = plan_global(&cm, &p, &p).unwrap();
        assert_eq!(path.waypoints.len(), 1);
        assert_eq!(path.total_cost, 0.0);
    }

    #[test]
    fn corner_to_corner_diagonal() {
        let cm = raw_costmap(3, 3, vec![0; 9]);
        let path = plan_global(&cm, &at(&cm, Cell::new(0, 0)), &at(&cm, Cell::new(2, 2))).unwrap();
        assert!((path.total_cost - 2.0 * 2f64.sqrt() * 0.1).abs() < 1e-12);
        assert_eq!(path.cells, vec![Cell::new(0, 0), Cell::new(1, 1), Cell::new(2, 2)]);
    }

    #[test]
    fn error_kinds() {
        let mut cost = vec![0u8; 100];
        cost[5 * 10 + 5] = LETHAL;
        // wall separating the right column
        for r in 0..10 {
            cost[r * 10 + 8] = LETHAL;
        }
        let cm = raw_costmap(10, 10, cost);
        assert_eq!(plan_global(&cm, &at(&cm, Cell::new(5, 5)), &at(&cm, Cell::new(0, 0))), Err(PlanError::RobotInCollision));
        assert_eq!(plan_global(&cm, &at(&cm, Cell::new(0, 0)), &at(&cm, Cell::new(9, 3))), Err(PlanError::NoPath));
        assert_eq!(
            plan_global(&cm, &at(&cm, Cell::new(0, 0)), &Pose2D::new(50.0, 0.0, 0.0)),
            Err(PlanError::GoalOffMap)
        );

        let mut cost = vec![0u8; 100];
        for r in 2..9 {
            for c in 2..9 {
                cost[r * 10 + c] = LETHAL;
            }
        }
        let cm = raw_costmap(10, 10, cost);
        assert_eq!(plan_global(&cm, &at(&cm, Cell::new(0, 0)), &at(&cm, Cell::new(5, 5))), Err(PlanError::GoalInObstacle));
        // one cell inside the block snaps back out
        let snapped = plan_global(&cm, &at(&cm, Cell::new(0, 0)), &at(&cm, Cell::new(2, 5))).unwrap();
        assert_eq!(*snapped.cells.last().unwrap(), Cell::new(1, 5));
    }

    #[test]
    fn waypoints_avoid_inscribed_cells() {
        let mut m = OccupancyGrid::new(GridGeometry::new(0.05, Pose2D::IDENTITY, 60, 40).unwrap());
        for r in 0..30 {
            m.set(Cell::new(30, r), LOG_ODDS_MAX);
        }
        let cm = build_global_costmap(&m, &CostmapConfig::default());
        let path = plan_global(&cm, &Pose2D::new(0.5, 0.5, 0.0), &Pose2D::new(2.5, 0.5, 0.0)).unwrap();
        for c in &path.cells {
            assert!(cm.cost(*c).unwrap() < INSCRIBED);
        }
        for w in path.cells.windows(2) {
            assert!((w[1].col - w[0].col).abs() <= 1 && (w[1].row - w[0].row).abs() <= 1);
        }
    }

    #[test]
    fn matches_bellman_ford_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let cost: Vec<u8> = (0..400)
                .map(|_| match rng.gen_range(0..10) {
                    0 => LETHAL,
                    1 => INSCRIBED,
                    _ => rng.gen_range(0..253),
                })
                .collect();
            let mut cm = raw_costmap(20, 20, cost);
            let (s, t) = (Cell::new(0, 0), Cell::new(19, 19));
            cm.cost[0] = 0;
            cm.cost[399] = 0;
            let oracle = bellman(&cm, s, t);
            match plan_global(&cm, &at(&cm, s), &at(&cm, t)) {
                Ok(p) => assert_eq!(p.total_cost, oracle),
                Err(e) => {
                    assert_eq!(e, PlanError::NoPath);
                    assert!(oracle.is_infinite());
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let cm = raw_costmap(12, 12, vec![0; 144]);
        let a = plan_global(&cm, &at(&cm, Cell::new(0, 3)), &at(&cm, Cell::new(11, 7))).unwrap();
        let b = plan_global(&cm, &at(&cm, Cell::new(0, 3)), &at(&cm, Cell::new(11, 7))).unwrap();
        assert_eq!(a, b);
    }
}
