//! Log-odds occupancy grid and cell traversal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose2D};

pub const LOG_ODDS_MIN: f64 = -10.0;
pub const LOG_ODDS_MAX: f64 = 10.0;

/// Occupancy probability above which a cell counts as an obstacle.
pub const OCCUPIED_THRESH: f64 = 0.65;
/// Occupancy probability below which a cell counts as known free.
pub const FREE_THRESH: f64 = 0.25;

pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn probability(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Integer cell coordinates: `col` along +x, `row` along +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: i64,
    pub row: i64,
}

impl Cell {
    pub const fn new(col: i64, row: i64) -> Self {
        Self { col, row }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("grid dimensions must be positive")]
    EmptyGrid,
    #[error("resolution must be positive")]
    BadResolution,
    #[error("cell buffer has {got} entries, expected {expected}")]
    BadLength { expected: usize, got: usize },
}

/// Axis-aligned cell geometry shared by occupancy grids, likelihood fields and costmaps.
///
/// `origin` is the world position of the outer corner of cell (0, 0); its
/// heading is carried for file compatibility and must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub resolution: f64,
    pub origin: Pose2D,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(resolution: f64, origin: Pose2D, width: usize, height: usize) -> Result<Self, GridError> {
        if !(resolution > 0.0) {
            return Err(GridError::BadResolution);
        }
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid);
        }
        Ok(Self { resolution, origin, width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.col >= 0 && c.row >= 0 && (c.col as usize) < self.width && (c.row as usize) < self.height
    }

    /// Cell containing `p` without a bounds check.
    pub fn cell_unchecked(&self, p: Point2) -> Cell {
        Cell::new(
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn world_to_cell(&self, p: Point2) -> Result<Cell, GridError> {
        let c = self.cell_unchecked(p);
        if self.contains(c) {
            Ok(c)
        } else {
            Err(GridError::OutOfBounds { x: p.x, y: p.y })
        }
    }

    pub fn cell_center(&self, c: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (c.col as f64 + 0.5) * self.resolution,
            self.origin.y + (c.row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn index(&self, c: Cell) -> usize {
        c.row as usize * self.width + c.col as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i64, (index / self.width) as i64)
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }
}

/// Row-major log-odds grid, values clamped to `[LOG_ODDS_MIN, LOG_ODDS_MAX]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    cells: Vec<f64>,
}

impl OccupancyGrid {
    /// All-unknown grid (log-odds zero).
    pub fn new(geometry: GridGeometry) -> Self {
        Self { cells: vec![0.0; geometry.len()], geometry }
    }

    pub fn from_cells(geometry: GridGeometry, cells: Vec<f64>) -> Result<Self, GridError> {
        if cells.len() != geometry.len() {
            return Err(GridError::BadLength { expected: geometry.len(), got: cells.len() });
        }
        let cells = cells.into_iter().map(|v| v.clamp(LOG_ODDS_MIN, LOG_ODDS_MAX)).collect();
        Ok(Self { geometry, cells })
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, c: Cell) -> Option<f64> {
        self.geometry.contains(c).then(|| self.cells[self.geometry.index(c)])
    }

    pub fn set(&mut self, c: Cell, value: f64) {
        let i = self.geometry.index(c);
        self.cells[i] = value.clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
    }

    /// Adds `delta` to a cell's log-odds, clamping the result.
    pub fn add(&mut self, c: Cell, delta: f64) {
        let i = self.geometry.index(c);
        self.cells[i] = (self.cells[i] + delta).clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
    }

    pub fn world_to_cell(&self, p: Point2) -> Result<Cell, GridError> {
        self.geometry.world_to_cell(p)
    }

    pub fn probability(&self, c: Cell) -> Option<f64> {
        self.get(c).map(probability)
    }

    pub fn is_occupied_index(&self, i: usize) -> bool {
        probability(self.cells[i]) > OCCUPIED_THRESH
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.geometry.contains(c) && self.is_occupied_index(self.geometry.index(c))
    }

    pub fn occupied_mask(&self) -> Vec<bool> {
        (0..self.cells.len()).map(|i| self.is_occupied_index(i)).collect()
    }

    pub fn occupied_count(&self) -> usize {
        (0..self.cells.len()).filter(|&i| self.is_occupied_index(i)).count()
    }
}

/// Cells visited by a straight segment, both endpoints included, 8-connected.
pub fn ray_cells(geometry: &GridGeometry, from: Point2, to: Point2) -> Result<Vec<Cell>, GridError> {
    let a = geometry.world_to_cell(from)?;
    let b = geometry.world_to_cell(to)?;
    Ok(bresenham(a, b))
}

/// Bresenham line between two cells, inclusive and in order from `a`.
pub fn bresenham(a: Cell, b: Cell) -> Vec<Cell> {
    let dx = (b.col - a.col).abs();
    let dy = -(b.row - a.row).abs();
    let sx = if a.col < b.col { 1 } else { -1 };
    let sy = if a.row < b.row { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (a.col, a.row);
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push(Cell::new(x, y));
        if x == b.col && y == b.row {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(res: f64, ox: f64, oy: f64, w: usize, h: usize) -> GridGeometry {
        GridGeometry::new(res, Pose2D::new(ox, oy, 0.0), w, h).unwrap()
    }

    #[test]
    fn world_to_cell_examples() {
        let g = geom(0.1, 0.0, 0.0, 10, 10);
        assert_eq!(g.world_to_cell(Point2::new(0.05, 0.05)), Ok(Cell::new(0, 0)));
        assert!(matches!(g.world_to_cell(Point2::new(1.5, 0.2)), Err(GridError::OutOfBounds { .. })));
        assert!(g.world_to_cell(Point2::new(-0.01, 0.2)).is_err());
        let g = geom(0.5, -1.0, -1.0, 10, 10);
        assert_eq!(g.world_to_cell(Point2::new(0.3, 0.7)), Ok(Cell::new(2, 3)));
    }

    #[test]
    fn values_clamped() {
        let mut g = OccupancyGrid::new(geom(0.1, 0.0, 0.0, 3, 3));
        let c = Cell::new(1, 1);
        for _ in 0..100 {
            g.add(c, 0.85);
        }
        assert_eq!(g.get(c), Some(LOG_ODDS_MAX));
        g.set(c, -50.0);
        assert_eq!(g.get(c), Some(LOG_ODDS_MIN));
    }

    #[test]
    fn ray_single_cell() {
        let g = geom(0.1, 0.0, 0.0, 10, 10);
        let p = Point2::new(0.42, 0.42);
        assert_eq!(ray_cells(&g, p, p).unwrap(), vec![Cell::new(4, 4)]);
    }

    #[test]
    fn ray_axis_aligned_five_cells() {
        let g = geom(0.1, 0.0, 0.0, 10, 10);
        let cells = ray_cells(&g, Point2::new(0.15, 0.35), Point2::new(0.55, 0.35)).unwrap();
        let expect: Vec<Cell> = (1..=5).map(|c| Cell::new(c, 3)).collect();
        assert_eq!(cells, expect);
    }

    #[test]
    fn ray_diagonal_chain() {
        let g = geom(0.1, 0.0, 0.0, 10, 10);
        let cells = ray_cells(&g, Point2::new(0.05, 0.05), Point2::new(0.45, 0.45)).unwrap();
        let expect: Vec<Cell> = (0..=4).map(|c| Cell::new(c, c)).collect();
        assert_eq!(cells, expect);
    }

    #[test]
    fn ray_out_of_bounds_rejected() {
        let g = geom(0.1, 0.0, 0.0, 10, 10);
        assert!(ray_cells(&g, Point2::new(0.05, 0.05), Point2::new(2.0, 0.45)).is_err());
    }

    proptest! {
        #[test]
        fn cell_center_roundtrip(col in 0i64..37, row in 0i64..23, ox in -5.0..5.0f64, oy in -5.0..5.0f64, res in 0.01..1.0f64) {
            let g = geom(res, ox, oy, 37, 23);
            let c = Cell::new(col, row);
            prop_assert_eq!(g.world_to_cell(g.cell_center(c)), Ok(c));
        }

        #[test]
        fn bresenham_is_contiguous(a in (0i64..30, 0i64..30), b in (0i64..30, 0i64..30)) {
            let cells = bresenham(Cell::new(a.0, a.1), Cell::new(b.0, b.1));
            prop_assert_eq!(cells[0], Cell::new(a.0, a.1));
            prop_assert_eq!(*cells.last().unwrap(), Cell::new(b.0, b.1));
            for w in cells.windows(2) {
                let step = ((w[1].col - w[0].col).abs(), (w[1].row - w[0].row).abs());
                prop_assert!(step.0 <= 1 && step.1 <= 1 && step != (0, 0));
            }
        }
    }
}
