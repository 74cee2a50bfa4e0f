//! Realtime session server: the simulation runs on its own thread at the
//! control rate, clients talk to it over `/session`, and `/healthz` reports
//! liveness.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{close_code, CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use comanip_core::simworld::Scenario;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot, watch};

use crate::protocol::{ClientMessage, ServerMessage, WrenchCommand, MAX_FRAME_BYTES};
use crate::session::{default_scenario, Session};

/// Commands other than wrenches queue up to this depth before the server
/// answers `busy`.
const COMMAND_QUEUE: usize = 64;
/// If the loop falls this many ticks behind it drops the backlog instead of
/// running ticks back to back.
const MAX_LAG_TICKS: u32 = 20;
/// WebSocket close reasons are limited to 123 bytes.
const MAX_CLOSE_REASON: usize = 123;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Scenario(#[from] comanip_core::Error),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub scenario: Scenario,
    pub tick_hz: f64,
    pub broadcast_hz: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let scenario = default_scenario();
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8765)),
            tick_hz: 1.0 / scenario.sim.dt_ctrl,
            broadcast_hz: 30.0,
            scenario,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub tick: u64,
}

struct Shared {
    tick: AtomicU64,
    stop: AtomicBool,
    /// Latest client wrench; a newer one replaces it before the sim sees it.
    wrench: Mutex<Option<WrenchCommand>>,
    commands: SyncSender<ClientMessage>,
    hello: watch::Sender<Arc<str>>,
    frames: watch::Sender<Arc<str>>,
    /// Error replies and scenario changes, fanned out to every client.
    events: broadcast::Sender<Arc<str>>,
}

/// A running server. Dropping it without `shutdown` leaves the threads running
/// until the process exits.
pub struct Service {
    addr: SocketAddr,
    shared: Arc<Shared>,
    sim: Option<thread::JoinHandle<()>>,
    stop_http: Option<oneshot::Sender<()>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Service {
    /// Binds the listener and starts the simulation thread.
    pub async fn start(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let session = Session::new(cfg.scenario.clone())?;
        let listener = tokio::net::TcpListener::bind(cfg.bind)
            .await
            .map_err(|source| ServiceError::Bind { addr: cfg.bind, source })?;
        let addr = listener.local_addr()?;

        let (cmd_tx, cmd_rx) = sync_channel(COMMAND_QUEUE);
        let hello = ServerMessage::Hello(session.hello(cfg.tick_hz, cfg.broadcast_hz)).to_json();
        let shared = Arc::new(Shared {
            tick: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            wrench: Mutex::new(None),
            commands: cmd_tx,
            hello: watch::channel(Arc::from(hello)).0,
            frames: watch::channel(Arc::from(session.encode_frame())).0,
            events: broadcast::channel(16).0,
        });

        let sim = {
            let shared = shared.clone();
            let cfg = cfg.clone();
            thread::Builder::new()
                .name("comanip-sim".into())
                .spawn(move || sim_loop(session, cmd_rx, &shared, &cfg))?
        };

        let app = Router::new()
            .route("/healthz", get(healthz))
            .route("/session", get(session_ws))
            .with_state(shared.clone());
        let (stop_http, stopped) = oneshot::channel::<()>();
        let http = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
        });
        log::info!("serving on {addr}");
        Ok(Self {
            addr,
            shared,
            sim: Some(sim),
            stop_http: Some(stop_http),
            http,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ticks(&self) -> u64 {
        self.shared.tick.load(Ordering::Relaxed)
    }

    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(s) = self.stop_http.take() {
            let _ = s.send(());
        }
        if let Some(sim) = self.sim.take() {
            let _ = tokio::task::spawn_blocking(move || sim.join()).await;
        }
        match (&mut self.http).await {
            Ok(r) => r.map_err(ServiceError::from),
            Err(e) => Err(ServiceError::Io(std::io::Error::other(e))),
        }
    }
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let svc = Service::start(cfg).await?;
    println!("listening on http://{}", svc.local_addr());
    let _ = tokio::signal::ctrl_c().await;
    svc.shutdown().await
}

fn sim_loop(mut session: Session, commands: Receiver<ClientMessage>, shared: &Shared, cfg: &ServiceConfig) {
    let period = Duration::from_secs_f64(1.0 / cfg.tick_hz);
    let frame_period = Duration::from_secs_f64(1.0 / cfg.broadcast_hz);
    let mut next = Instant::now();
    let mut next_frame = next;
    while !shared.stop.load(Ordering::Relaxed) {
        while let Ok(msg) = commands.try_recv() {
            let scenario_change = matches!(msg, ClientMessage::SelectScenario(_));
            if let Some(reply) = session.apply(msg) {
                let _ = shared.events.send(Arc::from(reply.to_json()));
            } else if scenario_change {
                let hello: Arc<str> =
                    Arc::from(ServerMessage::Hello(session.hello(cfg.tick_hz, cfg.broadcast_hz)).to_json());
                shared.hello.send_replace(hello.clone());
                let _ = shared.events.send(hello);
            }
        }
        let wrench = shared.wrench.lock().expect("wrench slot poisoned").take();
        if let Some(w) = wrench {
            session.apply(ClientMessage::Wrench(w));
        }
        session.step();
        shared.tick.store(session.tick_count(), Ordering::Relaxed);

        let now = Instant::now();
        if now >= next_frame {
            shared.frames.send_replace(Arc::from(session.encode_frame()));
            next_frame += frame_period;
            if next_frame < now {
                next_frame = now + frame_period;
            }
        }
        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else if now - next > period * MAX_LAG_TICKS {
            log::warn!("simulation loop is running behind; dropping backlog");
            next = now;
        }
    }
}

async fn healthz(State(shared): State<Arc<Shared>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        tick: shared.tick.load(Ordering::Relaxed),
    })
}

async fn session_ws(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.max_message_size(MAX_FRAME_BYTES)
        .on_upgrade(move |socket| client(socket, shared))
        .into_response()
}

fn protocol_close(reason: &str) -> Message {
    let mut end = reason.len().min(MAX_CLOSE_REASON);
    while !reason.is_char_boundary(end) {
        end -= 1;
    }
    Message::Close(Some(CloseFrame {
        code: close_code::PROTOCOL,
        reason: reason[..end].to_string().into(),
    }))
}

async fn client(socket: WebSocket, shared: Arc<Shared>) {
    let (mut tx, mut rx) = socket.split();
    let mut frames = shared.frames.subscribe();
    let mut events = shared.events.subscribe();
    let hello = shared.hello.borrow().to_string();
    if tx.send(Message::Text(hello)).await.is_err() {
        return;
    }
    frames.mark_changed();
    loop {
        let out = tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => match ClientMessage::parse(&text) {
                    Ok(ClientMessage::Wrench(w)) => {
                        *shared.wrench.lock().expect("wrench slot poisoned") = Some(w);
                        continue;
                    }
                    Ok(cmd) => match shared.commands.try_send(cmd) {
                        Ok(()) => continue,
                        Err(TrySendError::Full(_)) => {
                            Message::Text(ServerMessage::error("busy", "command queue is full").to_json())
                        }
                        Err(TrySendError::Disconnected(_)) => break,
                    },
                    Err(e) => {
                        log::debug!("closing client: {e}");
                        let _ = tx.send(protocol_close(&e.to_string())).await;
                        break;
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let _ = tx.send(protocol_close("binary frames are not supported")).await;
                    break;
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            changed = frames.changed() => {
                if changed.is_err() {
                    break;
                }
                let f = frames.borrow_and_update().clone();
                Message::Text(f.to_string())
            }
            ev = events.recv() => match ev {
                Ok(text) => Message::Text(text.to_string()),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if tx.send(out).await.is_err() {
            break;
        }
    }
}
