//! The interactive WebSocket stream.
//!
//! One client at a time. The socket reader forwards controls to a session
//! thread through a bounded queue; the thread publishes its latest frame into
//! a watch slot, so a slow client sees coalesced frames (latest wins) rather
//! than a growing backlog. Tile deltas are computed by the writer against what
//! it actually sent. Closing the socket discards the session.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use futures::{SinkExt, StreamExt};
use tokio::sync::{mpsc, watch};

use colnav_core::config::Config;
use colnav_proto::{ConfigInfo, Move, TileEncoder, WireMessage, PROTOCOL_VERSION};

use crate::interactive::{FrameState, Interactive};
use crate::AppState;

pub const CONTROL_QUEUE: usize = 64;
pub const TILE_SIZE: u32 = 32;

enum Command {
    Reset,
    Control(Move, Option<f64>),
}

struct BusyGuard(Arc<AtomicBool>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub fn config_info(cfg: &Config) -> ConfigInfo {
    ConfigInfo {
        protocol: PROTOCOL_VERSION,
        n_theta: cfg.unfold.n_theta as u32,
        row_height: cfg.unfold.row_height,
        n_ticks: cfg.navigation.n_ticks as u32,
        divider_rows: cfg.unfold.divider_rows as u32,
        view_width: cfg.camera.width as u32,
        view_height: cfg.camera.height as u32,
        tile_size: TILE_SIZE,
        step_mm: cfg.pilot.step_mm,
        step_deg: cfg.pilot.step_deg,
        config: cfg.to_map(),
    }
}

pub async fn handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run(socket, state))
}

fn text(msg: &WireMessage) -> Message {
    Message::Text(msg.to_json().into())
}

async fn run(socket: WebSocket, state: AppState) {
    let (mut sink, mut source) = socket.split();
    if state.busy.swap(true, Ordering::SeqCst) {
        let _ = sink.send(text(&WireMessage::error("another client is connected"))).await;
        let _ = sink.close().await;
        return;
    }
    let _guard = BusyGuard(state.busy.clone());
    tracing::info!("stream client connected");

    let (ctl_tx, ctl_rx) = mpsc::channel::<Command>(CONTROL_QUEUE);
    let (reply_tx, mut reply_rx) = mpsc::channel::<WireMessage>(CONTROL_QUEUE);
    let (frame_tx, mut frame_rx) = watch::channel::<Option<Arc<FrameState>>>(None);
    let cfg = (*state.config).clone();
    let worker_replies = reply_tx.clone();
    let worker = std::thread::spawn(move || session_loop(cfg, ctl_rx, frame_tx, worker_replies));

    let writer = tokio::spawn(async move {
        let mut enc = TileEncoder::new(TILE_SIZE);
        let mut frames_open = true;
        loop {
            tokio::select! {
                biased;
                msg = reply_rx.recv() => match msg {
                    Some(m) => if sink.send(text(&m)).await.is_err() { break },
                    None => break,
                },
                changed = frame_rx.changed(), if frames_open => {
                    if changed.is_err() {
                        frames_open = false;
                        continue;
                    }
                    let latest = frame_rx.borrow_and_update().clone();
                    if let Some(f) = latest {
                        if sink.send(text(&f.to_message(&mut enc))).await.is_err() {
                            break;
                        }
                    }
                }
            }
        }
        let _ = sink.close().await;
    });

    let info = config_info(&state.config);
    while let Some(Ok(msg)) = source.next().await {
        let Message::Text(body) = msg else {
            if matches!(msg, Message::Close(_)) {
                break;
            }
            continue;
        };
        let sent = match WireMessage::from_json(&body) {
            Ok(WireMessage::Hello { protocol, .. }) if protocol != PROTOCOL_VERSION => reply_tx
                .send(WireMessage::error(format!(
                    "protocol {protocol} unsupported; server speaks {PROTOCOL_VERSION}"
                )))
                .await
                .is_ok(),
            Ok(WireMessage::Hello { .. }) => {
                reply_tx.send(WireMessage::Config(info.clone())).await.is_ok()
                    && ctl_tx.send(Command::Reset).await.is_ok()
            }
            Ok(WireMessage::ClientControl { mv, magnitude }) => ctl_tx.send(Command::Control(mv, magnitude)).await.is_ok(),
            Ok(_) => reply_tx
                .send(WireMessage::error("clients may send only hello and client_control"))
                .await
                .is_ok(),
            Err(e) => reply_tx.send(WireMessage::error(e.to_string())).await.is_ok(),
        };
        if !sent {
            break;
        }
    }
    drop(ctl_tx);
    drop(reply_tx);
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
    let _ = writer.await;
    tracing::info!("stream client disconnected; session discarded");
}

fn session_loop(
    cfg: Config,
    mut ctl: mpsc::Receiver<Command>,
    frames: watch::Sender<Option<Arc<FrameState>>>,
    replies: mpsc::Sender<WireMessage>,
) {
    let mut live: Option<Interactive> = None;
    let mut seq = 0u64;
    while let Some(cmd) = ctl.blocking_recv() {
        let result = match cmd {
            Command::Reset => Interactive::new(cfg.clone())
                .and_then(|mut s| {
                    let f = s.capture();
                    live = Some(s);
                    f
                })
                .map_err(|e| e.to_string()),
            Command::Control(mv, magnitude) => match live.as_mut() {
                Some(s) => s.control(mv, magnitude).map_err(|e| e.to_string()),
                None => Err("send hello before controls".to_string()),
            },
        };
        match result {
            Ok(mut f) => {
                seq += 1;
                f.seq = seq;
                frames.send_replace(Some(Arc::new(f)));
            }
            Err(message) => {
                if replies.blocking_send(WireMessage::error(message)).is_err() {
                    break;
                }
            }
        }
    }
}
