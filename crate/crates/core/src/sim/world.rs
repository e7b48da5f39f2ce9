use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose2D};
use crate::grid::{Cell, GridGeometry, OccupancyGrid, LOG_ODDS_MAX, LOG_ODDS_MIN};

const FIG5_WORLD: &str = include_str!("../../assets/fig5_world.json");

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("world json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("segment {0} has non-finite coordinates")]
    NonFinite(usize),
    #[error("unknown spawn {0:?}")]
    UnknownSpawn(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { a: Point2::new(x1, y1), b: Point2::new(x2, y2) }
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.dot(ab);
        let t = if len2 == 0.0 { 0.0 } else { ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0) };
        (self.a + ab * t).distance(p)
    }

    /// Distance along the ray `origin + t·dir` (unit `dir`) to this segment.
    pub fn ray_hit(&self, origin: Point2, dir: Point2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() < 1e-12 {
            return None;
        }
        let w = self.a - origin;
        let t = w.cross(e) / denom;
        let s = w.cross(dir) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorldFile {
    segments: Vec<[f64; 4]>,
    #[serde(default)]
    spawns: BTreeMap<String, [f64; 3]>,
}

/// Static planar world made of line segments.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub segments: Vec<Segment>,
    pub spawns: BTreeMap<String, Pose2D>,
}

impl World {
    pub fn empty() -> Self {
        Self { segments: Vec::new(), spawns: BTreeMap::new() }
    }

    /// The bundled 10×10 m walled room with two 1×1 m blocks.
    pub fn fig5() -> Self {
        Self::from_json(FIG5_WORLD).expect("bundled world is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let file: WorldFile = serde_json::from_str(text)?;
        let mut segments = Vec::with_capacity(file.segments.len());
        for (i, s) in file.segments.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(WorldError::NonFinite(i));
            }
            segments.push(Segment::new(s[0], s[1], s[2], s[3]));
        }
        let spawns = file.spawns.into_iter().map(|(k, v)| (k, Pose2D::from(v))).collect();
        Ok(Self { segments, spawns })
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = WorldFile {
            segments: self.segments.iter().map(|s| [s.a.x, s.a.y, s.b.x, s.b.y]).collect(),
            spawns: self.spawns.iter().map(|(k, v)| (k.clone(), v.to_array())).collect(),
        };
        serde_json::to_string_pretty(&file).expect("world serializes")
    }

    pub fn spawn(&self, name: &str) -> Result<Pose2D, WorldError> {
        self.spawns.get(name).copied().ok_or_else(|| WorldError::UnknownSpawn(name.to_owned()))
    }

    /// Axis-aligned box adding four walls to the world.
    pub fn add_box(&mut self, min: Point2, max: Point2) {
        self.segments.extend([
            Segment::new(min.x, min.y, max.x, min.y),
            Segment::new(max.x, min.y, max.x, max.y),
            Segment::new(max.x, max.y, min.x, max.y),
            Segment::new(min.x, max.y, min.x, min.y),
        ]);
    }

    /// Closed regular polygon approximating a circle.
    pub fn add_polygon(&mut self, center: Point2, radius: f64, sides: usize) {
        for i in 0..sides {
            let a0 = 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
            let a1 = 2.0 * std::f64::consts::PI * (i + 1) as f64 / sides as f64;
            self.segments.push(Segment::new(
                center.x + radius * a0.cos(),
                center.y + radius * a0.sin(),
                center.x + radius * a1.cos(),
                center.y + radius * a1.sin(),
            ));
        }
    }

    pub fn clearance(&self, p: Point2) -> f64 {
        self.segments.iter().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }

    /// Nearest hit along a ray, if any.
    pub fn cast(&self, origin: Point2, angle: f64) -> Option<f64> {
        let dir = Point2::new(angle.cos(), angle.sin());
        self.segments.iter().filter_map(|s| s.ray_hit(origin, dir)).fold(None, |acc, t| match acc {
            Some(b) if b <= t => Some(b),
            _ => Some(t),
        })
    }

    /// Bounding box of all segments.
    pub fn bounds(&self) -> Option<(Point2, Point2)> {
        let mut it = self.segments.iter().flat_map(|s| [s.a, s.b]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y)))
        }))
    }
}

impl World {
    /// Grid covering the world plus `margin`, placed so that cell centres fall on
    /// whole multiples of `resolution` (axis-aligned walls on such lines rasterize
    /// to a single row of cells).
    pub fn map_geometry(&self, resolution: f64, margin: f64) -> GridGeometry {
        let (lo, hi) = self.bounds().unwrap_or((Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)));
        let snap = |v: f64| (v / resolution).floor() * resolution;
        let ox = snap(lo.x - margin) - 0.5 * resolution;
        let oy = snap(lo.y - margin) - 0.5 * resolution;
        let w = ((hi.x + margin - ox) / resolution).ceil() as usize;
        let h = ((hi.y + margin - oy) / resolution).ceil() as usize;
        GridGeometry::new(resolution, Pose2D::new(ox, oy, 0.0), w, h).expect("positive extent")
    }

    /// Ground-truth occupancy: every cell a segment passes through is occupied.
    pub fn rasterize(&self, geometry: GridGeometry) -> OccupancyGrid {
        let mut grid = OccupancyGrid::new(geometry);
        let step = 0.25 * geometry.resolution;
        for s in &self.segments {
            let len = s.a.distance(s.b);
            let n = (len / step).ceil().max(1.0) as usize;
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let c = geometry.cell_unchecked(s.a + (s.b - s.a) * t);
                if geometry.contains(c) {
                    grid.set(c, LOG_ODDS_MAX);
                }
            }
        }
        grid
    }

    /// Ground truth with the region reachable from `inside` marked free and
    /// enclosed pockets (block interiors) filled as occupied. Space reachable
    /// from the grid border stays unknown.
    pub fn known_map(&self, geometry: GridGeometry, inside: Point2) -> OccupancyGrid {
        let mut grid = self.rasterize(geometry);
        let start = geometry.cell_unchecked(inside);
        if !geometry.contains(start) || grid.get(start) != Some(0.0) {
            return grid;
        }
        let mut outside = vec![false; geometry.len()];
        let border = (0..geometry.width as i64)
            .flat_map(|c| [Cell::new(c, 0), Cell::new(c, geometry.height as i64 - 1)])
            .chain((0..geometry.height as i64).flat_map(|r| [Cell::new(0, r), Cell::new(geometry.width as i64 - 1, r)]));
        let mut stack: Vec<Cell> = border.filter(|&c| grid.get(c) == Some(0.0)).collect();
        while let Some(c) = stack.pop() {
            let i = geometry.index(c);
            if outside[i] {
                continue;
            }
            outside[i] = true;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = Cell::new(c.col + dx, c.row + dy);
                if grid.get(n) == Some(0.0) && !outside[geometry.index(n)] {
                    stack.push(n);
                }
            }
        }
        if outside[geometry.index(start)] {
            return grid;
        }
        let mut stack = vec![start];
        grid.set(start, LOG_ODDS_MIN);
        while let Some(c) = stack.pop() {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = Cell::new(c.col + dx, c.row + dy);
                if grid.get(n) == Some(0.0) {
                    grid.set(n, LOG_ODDS_MIN);
                    stack.push(n);
                }
            }
        }
        for i in 0..geometry.len() {
            if !outside[i] && grid.cells()[i] == 0.0 {
                grid.set(geometry.cell_at(i), LOG_ODDS_MAX);
            }
        }
        grid
    }
}
