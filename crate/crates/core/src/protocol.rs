//! JSON wire protocol between the navigation server and its clients.
//!
//! One JSON object per text frame, discriminated by `"type"`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{LaserScan, Pose2D};
use crate::grid::{probability, GridGeometry, OccupancyGrid};
use crate::nav::Mode;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("frame must be an object with a string \"type\"")]
    MissingType,
    #[error("unknown message type '{0}'")]
    UnknownType(String),
    #[error("invalid '{kind}' message: {detail}")]
    Invalid { kind: String, detail: String },
    #[error("bad map patch: {0}")]
    BadPatch(String),
}

/// Client → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Teleop { twist: [f64; 3] },
    Goal { pose: [f64; 3] },
    SetMode { mode: Mode },
    SaveMap { path: String },
}

const CLIENT_TYPES: [&str; 4] = ["teleop", "goal", "set_mode", "save_map"];

/// Parses one client frame, telling malformed JSON apart from an unknown type
/// and from a known type with bad fields.
pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let kind = value.get("type").and_then(|t| t.as_str()).ok_or(ProtocolError::MissingType)?.to_owned();
    if !CLIENT_TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| ProtocolError::Invalid { kind: kind.clone(), detail: e.to_string() })?;
    let finite = match &msg {
        ClientMessage::Teleop { twist } => twist.iter().all(|v| v.is_finite()),
        ClientMessage::Goal { pose } => pose.iter().all(|v| v.is_finite()),
        _ => true,
    };
    if !finite {
        return Err(ProtocolError::Invalid { kind, detail: "non-finite number".into() });
    }
    Ok(msg)
}

/// Server → client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Telemetry(Telemetry),
    Error { msg: String },
    MapSaved { yaml: String, pgm: String },
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        Self::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    pub mode: Mode,
    pub pose_true: [f64; 3],
    pub pose_est: [f64; 3],
    pub battery_v: f64,
    /// `[x, y, θ, w]`, decimated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_patch: Option<MapPatch>,
}

/// Every `stride`-th beam of a scan, in the sensor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFrame {
    pub angle_min: f64,
    /// Angle between consecutive entries of `ranges` (already multiplied by the stride).
    pub angle_increment: f64,
    pub range_max: f64,
    pub sensor_pose: [f64; 3],
    pub ranges: Vec<f64>,
}

impl ScanFrame {
    pub fn from_scan(scan: &LaserScan, sensor_pose: &Pose2D, stride: usize) -> Self {
        let stride = stride.max(1);
        Self {
            angle_min: scan.angle_min,
            angle_increment: scan.angle_increment * stride as f64,
            range_max: scan.range_max,
            sensor_pose: sensor_pose.to_array(),
            ranges: scan.ranges.iter().step_by(stride).copied().collect(),
        }
    }
}

/// Full occupancy grid. `data` is base64 of one byte per cell, row-major from
/// the origin corner, byte = round(255·p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPatch {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub data: String,
}

pub fn probability_byte(log_odds: f64) -> u8 {
    (255.0 * probability(log_odds)).round() as u8
}

impl MapPatch {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let g = grid.geometry;
        let bytes: Vec<u8> = grid.cells().iter().map(|&l| probability_byte(l)).collect();
        Self { width: g.width, height: g.height, resolution: g.resolution, origin: g.origin.to_array(), data: STANDARD.encode(bytes) }
    }

    pub fn bytes(&self) -> Result<Vec<u8>, ProtocolError> {
        let b = STANDARD.decode(&self.data).map_err(|e| ProtocolError::BadPatch(e.to_string()))?;
        if b.len() != self.width * self.height {
            return Err(ProtocolError::BadPatch(format!("{} bytes for {}×{}", b.len(), self.width, self.height)));
        }
        Ok(b)
    }

    pub fn geometry(&self) -> Result<GridGeometry, ProtocolError> {
        GridGeometry::new(self.resolution, Pose2D::from(self.origin), self.width, self.height).map_err(|e| ProtocolError::BadPatch(e.to_string()))
    }
}
