//! Messages exchanged with the navigation service.
//!
//! The interactive stream carries one JSON [`WireMessage`] per WebSocket
//! message. The HTTP operations use the request types in [`api`].

pub mod api;
pub mod tiles;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use tiles::{TileCanvas, TileDelta, TileEncoder, TileRun};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProtoError {
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad base64 payload: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("tile delta does not fit the canvas: {0}")]
    Tiles(String),
}

/// Steering command; names match the keyboard bindings of the cockpit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    #[serde(rename = "advance")]
    Advance,
    #[serde(rename = "retract")]
    Retract,
    #[serde(rename = "yaw+")]
    YawRight,
    #[serde(rename = "yaw-")]
    YawLeft,
    #[serde(rename = "pitch+")]
    PitchUp,
    #[serde(rename = "pitch-")]
    PitchDown,
    #[serde(rename = "roll+")]
    RollRight,
    #[serde(rename = "roll-")]
    RollLeft,
}

impl Move {
    pub const ALL: [Move; 8] = [
        Move::Advance,
        Move::Retract,
        Move::YawRight,
        Move::YawLeft,
        Move::PitchUp,
        Move::PitchDown,
        Move::RollRight,
        Move::RollLeft,
    ];

    pub fn is_translation(self) -> bool {
        matches!(self, Move::Advance | Move::Retract)
    }
}

/// An 8-bit RGB raster, base64 in transit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub rgb: String,
}

impl RgbImage {
    pub fn encode(width: u32, height: u32, rgb: &[u8]) -> Self {
        Self {
            width,
            height,
            rgb: BASE64.encode(rgb),
        }
    }

    pub fn decode(&self) -> Result<Vec<u8>, ProtoError> {
        let raw = BASE64.decode(&self.rgb)?;
        if raw.len() != 3 * self.width as usize * self.height as usize {
            return Err(ProtoError::Tiles(format!(
                "view holds {} bytes for {}x{}",
                raw.len(),
                self.width,
                self.height
            )));
        }
        Ok(raw)
    }
}

/// Compass ring for the current frame. `ticks[0]` is image-up; `true` marks
/// an uncovered direction. `stale` carries the reason when no compass exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassJson {
    pub ticks: Vec<bool>,
    pub camera_row: Option<i64>,
    pub band: Option<u32>,
    pub offset_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stale: Option<String>,
}

/// Camera position on the composed flattened image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub band: u32,
    /// Row of the composed image (band offset included).
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpan {
    pub segment: u32,
    pub row_start: u32,
    pub row_end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub coverage_pct: f64,
    pub scanned_length: f64,
    pub frames: usize,
    pub pending: usize,
    /// Axis position of the camera (mm from the cecum).
    pub s_mm: f64,
    pub bands: Vec<BandSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerFrame {
    /// Strictly increasing within a connection.
    pub seq: u64,
    pub view: RgbImage,
    pub tiles: TileDelta,
    pub compass: CompassJson,
    pub marker: Option<Marker>,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigInfo {
    pub protocol: u32,
    pub n_theta: u32,
    pub row_height: f64,
    pub n_ticks: u32,
    pub divider_rows: u32,
    pub view_width: u32,
    pub view_height: u32,
    pub tile_size: u32,
    /// Default magnitudes used when a control carries none.
    pub step_mm: f64,
    pub step_deg: f64,
    pub config: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        client: String,
        protocol: u32,
    },
    Config(ConfigInfo),
    ClientControl {
        #[serde(rename = "move")]
        mv: Move,
        /// mm for advance/retract, degrees otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        magnitude: Option<f64>,
    },
    ServerFrame(Box<ServerFrame>),
    Error {
        message: String,
    },
}

impl WireMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ProtoError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::Error {
            message: message.into(),
        }
    }
}
