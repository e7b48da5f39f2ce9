//! Map persistence: binary PGM raster plus a YAML sidecar.
//!
//! Pixels are trinary: 0 occupied, 254 free, 205 unknown. Row 0 of the image
//! is the top of the map (largest y). Loading maps occupied/free/unknown to
//! saturated log-odds so that saving a loaded map reproduces the same bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::grid::{
    probability, GridError, GridGeometry, OccupancyGrid, FREE_THRESH, LOG_ODDS_MAX, LOG_ODDS_MIN,
    OCCUPIED_THRESH,
};

pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_FREE: u8 = 254;
pub const PIXEL_UNKNOWN: u8 = 205;

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("yaml: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("malformed pgm: {0}")]
    Pgm(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// YAML sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub negate: u8,
    pub occupied_thresh: f64,
    pub free_thresh: f64,
}

impl MapMetadata {
    fn to_yaml(&self) -> String {
        format!(
            "image: {}\nresolution: {:?}\norigin: [{:?}, {:?}, {:?}]\nnegate: {}\noccupied_thresh: {:?}\nfree_thresh: {:?}\n",
            self.image,
            self.resolution,
            self.origin[0],
            self.origin[1],
            self.origin[2],
            self.negate,
            self.occupied_thresh,
            self.free_thresh
        )
    }
}

fn classify(p: f64, occupied_thresh: f64, free_thresh: f64) -> u8 {
    if p > occupied_thresh {
        PIXEL_OCCUPIED
    } else if p < free_thresh {
        PIXEL_FREE
    } else {
        PIXEL_UNKNOWN
    }
}

/// Grid → top-down trinary raster.
pub fn to_pixels(grid: &OccupancyGrid) -> Vec<u8> {
    let g = &grid.geometry;
    let mut px = Vec::with_capacity(g.len());
    for row in (0..g.height).rev() {
        for col in 0..g.width {
            let l = grid.cells()[row * g.width + col];
            px.push(classify(probability(l), OCCUPIED_THRESH, FREE_THRESH));
        }
    }
    px
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary (P5) PGM with maxval ≤ 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), MapIoError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MapIoError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(MapIoError::Pgm(format!("unsupported magic {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| MapIoError::Pgm(format!("bad number {s}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(MapIoError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| MapIoError::Pgm("truncated raster".into()))?;
    Ok((w, h, raster.to_vec()))
}

/// Raster → log-odds grid. Trinary pixels decode exactly; other grey levels
/// are classified with the sidecar thresholds.
pub fn from_pixels(meta: &MapMetadata, width: usize, height: usize, pixels: &[u8]) -> Result<OccupancyGrid, MapIoError> {
    let geometry = GridGeometry::new(meta.resolution, Pose2D::from(meta.origin), width, height)?;
    let mut cells = vec![0.0; width * height];
    for (i, &v) in pixels.iter().enumerate() {
        let row = height - 1 - i / width;
        let col = i % width;
        let class = match v {
            PIXEL_OCCUPIED | PIXEL_FREE | PIXEL_UNKNOWN => v,
            _ => {
                let p = if meta.negate != 0 { v as f64 / 255.0 } else { (255 - v) as f64 / 255.0 };
                classify(p, meta.occupied_thresh, meta.free_thresh)
            }
        };
        cells[row * width + col] = match class {
            PIXEL_OCCUPIED => LOG_ODDS_MAX,
            PIXEL_FREE => LOG_ODDS_MIN,
            _ => 0.0,
        };
    }
    Ok(OccupancyGrid::from_cells(geometry, cells)?)
}

/// Written file pair.
#[derive(Debug, Clone)]
pub struct MapFiles {
    pub pgm: PathBuf,
    pub yaml: PathBuf,
}

/// Writes `<base>.pgm` and `<base>.yaml`.
pub fn save_map(grid: &OccupancyGrid, base: &Path) -> Result<MapFiles, MapIoError> {
    let pgm = base.with_extension("pgm");
    let yaml = base.with_extension("yaml");
    let g = &grid.geometry;
    fs::write(&pgm, encode_pgm(g.width, g.height, &to_pixels(grid)))?;
    let meta = MapMetadata {
        image: pgm.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        resolution: g.resolution,
        origin: g.origin.to_array(),
        negate: 0,
        occupied_thresh: OCCUPIED_THRESH,
        free_thresh: FREE_THRESH,
    };
    fs::write(&yaml, meta.to_yaml())?;
    Ok(MapFiles { pgm, yaml })
}

/// Loads a map from its YAML sidecar; the image path is relative to the sidecar.
pub fn load_map(yaml_path: &Path) -> Result<OccupancyGrid, MapIoError> {
    let meta: MapMetadata = serde_yaml::from_str(&fs::read_to_string(yaml_path)?)?;
    let dir = yaml_path.parent().unwrap_or_else(|| Path::new("."));
    let (w, h, px) = decode_pgm(&fs::read(dir.join(&meta.image))?)?;
    from_pixels(&meta, w, h, &px)
}

/// Accepts either the sidecar path or the shared base path.
pub fn resolve_yaml(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "yaml" || e == "yml") {
        path.to_path_buf()
    } else {
        path.with_extension("yaml")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;

    fn sample() -> OccupancyGrid {
        let g = GridGeometry::new(0.05, Pose2D::new(-0.525, -1.0, 0.0), 7, 5).unwrap();
        let mut grid = OccupancyGrid::new(g);
        grid.set(Cell::new(0, 0), 3.0);
        grid.set(Cell::new(6, 4), -2.0);
        grid.set(Cell::new(3, 2), 0.7);
        grid.set(Cell::new(2, 1), 0.3);
        grid
    }

    #[test]
    fn pixel_classes_and_orientation() {
        let px = to_pixels(&sample());
        // cell (0,0) is bottom-left → last image row, first column
        assert_eq!(px[4 * 7], PIXEL_OCCUPIED);
        // cell (6,4) is top-right → first row, last column
        assert_eq!(px[6], PIXEL_FREE);
        assert_eq!(px[2 * 7 + 3], PIXEL_OCCUPIED);
        assert_eq!(px[3 * 7 + 2], PIXEL_UNKNOWN);
    }

    #[test]
    fn files_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = save_map(&sample(), &dir.path().join("a")).unwrap();
        let loaded = load_map(&a.yaml).unwrap();
        let b = save_map(&loaded, &dir.path().join("b")).unwrap();
        assert_eq!(fs::read(&a.pgm).unwrap(), fs::read(&b.pgm).unwrap());
        let ya = fs::read_to_string(&a.yaml).unwrap().replace("a.pgm", "X");
        let yb = fs::read_to_string(&b.yaml).unwrap().replace("b.pgm", "X");
        assert_eq!(ya, yb);
        assert_eq!(loaded.geometry, sample().geometry);
        assert_eq!(loaded.occupied_mask(), sample().occupied_mask());
    }

    #[test]
    fn sidecar_keys() {
        let dir = tempfile::tempdir().unwrap();
        let f = save_map(&sample(), &dir.path().join("m")).unwrap();
        let text = fs::read_to_string(&f.yaml).unwrap();
        for key in ["resolution: 0.05", "origin: [-0.525, -1.0, 0.0]", "negate: 0", "occupied_thresh: 0.65", "free_thresh: 0.25"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
    }

    #[test]
    fn pgm_with_comment_header() {
        let mut bytes = b"P5\n# made elsewhere\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 254, 205]);
        let (w, h, px) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, px), (3, 1, vec![0, 254, 205]));
    }

    #[test]
    fn truncated_pgm_rejected() {
        assert!(decode_pgm(b"P5\n3 3\n255\n\x00\x00").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
