//! Client of the navigation service: the HTTP operations and the interactive
//! stream.

use futures::{SinkExt, StreamExt};
use serde::Serialize;
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use colnav_proto::api::{ApiError, ErrorKind, EvalRequest, ReplayRequest, SimulateRequest};
use colnav_proto::{ConfigInfo, Move, ServerFrame, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service rejected the request's input.
    #[error("{0}")]
    Input(String),
    /// The service failed while running the request.
    #[error("{0}")]
    Runtime(String),
    /// The service could not be reached or spoke out of turn.
    #[error("{0}")]
    Transport(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

fn transport(e: impl std::fmt::Display) -> ClientError {
    ClientError::Transport(e.to_string())
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode(resp: reqwest::Response) -> Result<Value> {
        let status = resp.status();
        let body = resp.text().await.map_err(transport)?;
        if status.is_success() {
            return serde_json::from_str(&body).map_err(transport);
        }
        let (kind, message) = match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => (e.kind, e.message),
            Err(_) if status.is_client_error() => (ErrorKind::Input, body),
            Err(_) => (ErrorKind::Runtime, body),
        };
        Err(match kind {
            ErrorKind::Input => ClientError::Input(message),
            ErrorKind::Runtime => ClientError::Runtime(message),
        })
    }

    async fn get(&self, path: &str) -> Result<Value> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await.map_err(transport)?;
        Self::decode(resp).await
    }

    async fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<Value> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .map_err(transport)?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Value> {
        self.get("/v1/health").await
    }

    /// The service's effective configuration as dotted keys.
    pub async fn config(&self) -> Result<Value> {
        self.get("/v1/config").await
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<Value> {
        self.post("/v1/simulate", req).await
    }

    /// The coverage report.
    pub async fn replay(&self, req: &ReplayRequest) -> Result<Value> {
        self.post("/v1/replay", req).await
    }

    /// The kappa table.
    pub async fn eval(&self, req: &EvalRequest) -> Result<Value> {
        self.post("/v1/eval", req).await
    }

    pub async fn stream(&self) -> Result<StreamClient> {
        let url = format!("{}/v1/stream", self.base.replacen("http", "ws", 1));
        let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(transport)?;
        Ok(StreamClient { ws })
    }
}

/// One interactive connection.
pub struct StreamClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl StreamClient {
    pub async fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.ws.send(Message::Text(msg.to_json().into())).await.map_err(transport)
    }

    /// The next message, or `None` once the server closed the stream.
    pub async fn recv(&mut self) -> Result<Option<WireMessage>> {
        while let Some(msg) = self.ws.next().await {
            match msg.map_err(transport)? {
                Message::Text(t) => return WireMessage::from_json(&t).map(Some).map_err(transport),
                Message::Close(_) => return Ok(None),
                _ => continue,
            }
        }
        Ok(None)
    }

    async fn next_frame(&mut self) -> Result<ServerFrame> {
        match self.recv().await? {
            Some(WireMessage::ServerFrame(f)) => Ok(*f),
            Some(WireMessage::Error { message }) => Err(ClientError::Input(message)),
            Some(other) => Err(transport(format!("unexpected message {other:?}"))),
            None => Err(transport("stream closed")),
        }
    }

    /// Handshake: returns the server configuration and the first frame.
    pub async fn hello(&mut self, client: &str) -> Result<(ConfigInfo, ServerFrame)> {
        self.send(&WireMessage::Hello {
            client: client.to_string(),
            protocol: PROTOCOL_VERSION,
        })
        .await?;
        let info = match self.recv().await? {
            Some(WireMessage::Config(info)) => info,
            Some(WireMessage::Error { message }) => return Err(ClientError::Input(message)),
            other => return Err(transport(format!("expected config, got {other:?}"))),
        };
        Ok((info, self.next_frame().await?))
    }

    /// Sends one control and waits for the frame it produced. A rejected
    /// control comes back as [`ClientError::Input`].
    pub async fn control(&mut self, mv: Move, magnitude: Option<f64>) -> Result<ServerFrame> {
        self.send(&WireMessage::ClientControl { mv, magnitude }).await?;
        self.next_frame().await
    }

    pub async fn close(mut self) -> Result<()> {
        self.ws.close(None).await.map_err(transport)
    }
}
