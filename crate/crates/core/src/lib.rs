//! A middleware-free planar navigation stack.
//!
//! Scan-only odometry, particle-filter mapping and localization, costmaps,
//! Dijkstra + dynamic-window planning and a two-level actuation controller
//! with battery-droop compensation, all driven by a deterministic simulator.

pub mod control;
pub mod costmap;
pub mod edt;
pub mod geometry;
pub mod grid;
pub mod kinematics;
pub mod mapio;
pub mod mapper;
pub mod mcl;
pub mod nav;
pub mod odometry;
pub mod planner;
pub mod protocol;
pub mod render;
pub mod scenario;
pub mod session;
pub mod sim;

pub use geometry::{pose_delta, LaserScan, Point2, Pose2D, Twist2D};
pub use grid::{Cell, GridGeometry, OccupancyGrid};
pub use kinematics::{PlantConfig, PlantKind};
