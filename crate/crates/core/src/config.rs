//! Plain `key=value` configuration covering every tunable, with dotted keys
//! (`centerline.edge_threshold = 10`). Values are JSON literals; bare words
//! are read as strings. `to_text` echoes the full effective configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::centerline::CenterlineConfig;
use crate::error::{Error, Result};
use crate::frames::Intrinsics;
use crate::navigation::NavigationConfig;
use crate::session::SessionConfig;
use crate::simulator::{Injection, TrajectoryKind, TrajectoryParams, TubeParams};
use crate::unfolding::UnfoldConfig;

/// Virtual camera of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view (degrees).
    pub hfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov_deg: 100.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::with_fov(self.width, self.height, self.hfov_deg.to_radians())
    }
}

/// Scripted scan written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub kind: TrajectoryKind,
    pub fps: f64,
    /// Raw depth units per millimetre in written depth files.
    pub depth_scale: f64,
    /// Mixed into the seed of every pose-noise injection.
    pub seed: u64,
    pub injections: Vec<Injection>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Pullback,
            fps: 20.0,
            depth_scale: 100.0,
            seed: 0,
            injections: Vec::new(),
        }
    }
}

/// Pilot step sizes used by the service when a control carries no magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// Start position on the axis (mm); `null` starts 20 mm inside the open
    /// end, so that the whole tube lies ahead.
    pub start_s: Option<f64>,
    pub step_mm: f64,
    pub step_deg: f64,
}

impl PilotConfig {
    pub fn start(&self, tube_length: f64) -> f64 {
        self.start_s.unwrap_or((tube_length - 20.0).max(0.0))
    }
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            start_s: None,
            step_mm: 2.0,
            step_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub centerline: CenterlineConfig,
    pub unfold: UnfoldConfig,
    pub session: SessionConfig,
    pub navigation: NavigationConfig,
    pub camera: CameraConfig,
    pub tube: TubeParams,
    pub trajectory: TrajectoryParams,
    pub scan: ScanConfig,
    pub pilot: PilotConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::default().with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Applies overrides given as `(dotted key, value)`.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut keys = Vec::new();
        for (key, raw) in pairs {
            let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
            keys.push(key.to_string());
        }
        let cfg: Config = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        let known: Vec<String> = flatten(&serde_json::to_value(&cfg).expect("config serializes"))
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        for key in keys {
            let covered = known.iter().any(|k| *k == key || k.starts_with(&format!("{key}.")));
            if !covered {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.centerline;
        for (name, v) in [
            ("centerline.outlier_radius", c.outlier_radius),
            ("centerline.edge_threshold", c.edge_threshold),
            ("centerline.bin_width", c.bin_width),
            ("centerline.sample_spacing", c.sample_spacing),
            ("centerline.knot_spacing", c.knot_spacing),
            ("unfold.row_height", self.unfold.row_height),
            ("unfold.max_radius", self.unfold.max_radius),
            ("scan.fps", self.scan.fps),
            ("scan.depth_scale", self.scan.depth_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if c.outlier_window == 0 || c.recompute_every == 0 {
            return Err(Error::Config(
                "centerline.outlier_window and centerline.recompute_every must be positive".into(),
            ));
        }
        if self.unfold.n_theta == 0 || self.unfold.stride == 0 {
            return Err(Error::Config("unfold.n_theta and unfold.stride must be positive".into()));
        }
        if !(c.smoothing >= 0.0) {
            return Err(Error::Config("centerline.smoothing must be non-negative".into()));
        }
        self.navigation.validate(&self.unfold)?;
        self.camera.intrinsics()?;
        Ok(())
    }

    /// Every tunable as `key = value`, one per line, sorted by key.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        flatten(&tree).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The flattened key/value map, for embedding in reports.
    pub fn to_map(&self) -> Map<String, Value> {
        let tree = serde_json::to_value(self).expect("config serializes");
        flatten(&tree)
            .into_iter()
            .map(|(k, v)| (k, serde_json::from_str(&v).unwrap_or(Value::String(v))))
            .collect()
    }
}

/// Leaves of nested objects as `(dotted key, JSON text)`. Arrays and nulls
/// are leaves.
fn flatten(tree: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", tree, &mut out);
    out.sort();
    out
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("key {key:?} descends into a value")));
        };
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Map::new());
    }
    let Value::Object(map) = node else {
        return Err(Error::Config(format!("key {key:?} descends into a value")));
    };
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
