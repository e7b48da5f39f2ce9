use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{GlobalPath, PlanError};
use crate::costmap::{Costmap, INSCRIBED};
use crate::geometry::{Point2, Pose2D};
use crate::grid::Cell;

/// Goals on untraversable cells are moved to the nearest free cell within this radius.
pub const GOAL_SNAP_RADIUS: f64 = 0.2;

pub const NEIGHBORS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Cost of stepping onto `to` with offset `(dc, dr)`.
pub fn edge_cost(costmap: &Costmap, dc: i64, dr: i64, to_cost: u8) -> f64 {
    let len = if dc != 0 && dr != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
    len * costmap.geometry.resolution * (1.0 + to_cost as f64 / 128.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, cell)
        other.cost.total_cmp(&self.cost).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The traversable cell a goal resolves to.
pub fn snap_goal(costmap: &Costmap, goal: Point2) -> Result<Cell, PlanError> {
    let g = &costmap.geometry;
    let cell = g.world_to_cell(goal).map_err(|_| PlanError::GoalOffMap)?;
    if costmap.is_traversable(cell) {
        return Ok(cell);
    }
    let reach = (GOAL_SNAP_RADIUS / g.resolution).ceil() as i64;
    let mut best: Option<(f64, Cell)> = None;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let c = Cell::new(cell.col + dc, cell.row + dr);
            if !costmap.is_traversable(c) {
                continue;
            }
            let d = g.cell_center(c).distance(goal);
            if d > GOAL_SNAP_RADIUS {
                continue;
            }
            if best.is_none_or(|(bd, bc)| d < bd || (d == bd && c < bc)) {
                best = Some((d, c));
            }
        }
    }
    best.map(|(_, c)| c).ok_or(PlanError::GoalInObstacle)
}

/// Minimum-cost 8-connected path from `start` to `goal` over cells with cost below INSCRIBED.
pub fn plan_global(costmap: &Costmap, start: &Pose2D, goal: &Pose2D) -> Result<GlobalPath, PlanError> {
    let g = &costmap.geometry;
    let start_cell = g.world_to_cell(start.position()).map_err(|_| PlanError::StartOffMap)?;
    if !costmap.is_traversable(start_cell) {
        return Err(PlanError::RobotInCollision);
    }
    let goal_cell = snap_goal(costmap, goal.position())?;

    let n = g.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let s = g.index(start_cell);
    dist[s] = 0.0;
    heap.push(Entry { cost: 0.0, cell: start_cell });

    while let Some(Entry { cost, cell }) = heap.pop() {
        let i = g.index(cell);
        if done[i] {
            continue;
        }
        done[i] = true;
        if cell == goal_cell {
            break;
        }
        for (dc, dr) in NEIGHBORS {
            let nb = Cell::new(cell.col + dc, cell.row + dr);
            let Some(c) = costmap.cost(nb) else { continue };
            if c >= INSCRIBED {
                continue;
            }
            let j = g.index(nb);
            let next = cost + edge_cost(costmap, dc, dr, c);
            if next < dist[j] {
                dist[j] = next;
                parent[j] = i;
                heap.push(Entry { cost: next, cell: nb });
            }
        }
    }

    let gi = g.index(goal_cell);
    if !dist[gi].is_finite() {
        return Err(PlanError::NoPath);
    }
    let mut cells = vec![goal_cell];
    let mut k = gi;
    while k != s {
        k = parent[k];
        cells.push(g.cell_at(k));
    }
    cells.reverse();
    Ok(GlobalPath { waypoints: cells.iter().map(|&c| g.cell_center(c)).collect(), cells, total_cost: dist[gi] })
}
