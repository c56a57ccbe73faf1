//! Bodies of the HTTP operations. Paths are resolved by the server.
//!
//! | route                | request            | response             |
//! |----------------------|--------------------|----------------------|
//! | `GET  /v1/health`    |                    | `{"status":"ok"}`    |
//! | `GET  /v1/config`    |                    | flattened config     |
//! | `POST /v1/simulate`  | [`SimulateRequest`] | simulate summary    |
//! | `POST /v1/replay`    | [`ReplayRequest`]  | coverage report      |
//! | `POST /v1/eval`      | [`EvalRequest`]    | kappa table          |
//! | `GET  /v1/stream`    | WebSocket of [`crate::WireMessage`] |     |
//!
//! Failures answer 400 (bad input) or 500 (runtime) with an [`ApiError`].

use serde::{Deserialize, Serialize};

/// Configuration for one request: `key = value` text (the server's own
/// configuration when absent) with dotted-key overrides applied on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub out_dir: String,
    #[serde(flatten)]
    pub config: ConfigSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub input_dir: String,
    /// Where to write the report and exports; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub compass: bool,
    #[serde(default)]
    pub omit_timing: bool,
    #[serde(flatten)]
    pub config: ConfigSource,
}

/// Two `clip_id,quadrant,label` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub annotations_csv: String,
    pub predictions_csv: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_request_flattens_config() {
        let r = ReplayRequest {
            input_dir: "in".into(),
            out_dir: None,
            compass: true,
            omit_timing: false,
            config: ConfigSource {
                config_text: None,
                overrides: vec![("unfold.stride".into(), "2".into())],
            },
        };
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(
            text,
            r#"{"input_dir":"in","compass":true,"omit_timing":false,"overrides":[["unfold.stride","2"]]}"#
        );
        assert_eq!(serde_json::from_str::<ReplayRequest>(&text).unwrap(), r);
        let minimal: ReplayRequest = serde_json::from_str(r#"{"input_dir":"x"}"#).unwrap();
        assert_eq!(minimal.config, ConfigSource::default());
    }
}
