//! Recording service: TCP/web-socket ingest, one session actor thread, and
//! the operator console endpoints.
//!
//! All session mutations go through one queue, so commands, timers and
//! samples are serialized exactly as the core session expects.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gazefuse_core::console::{Hub, PacketKind, PacketSink, SinkError, DEFAULT_CLIENT_BACKLOG};
use gazefuse_core::live::{Ack, LiveConfig, LiveError, LiveMode, LiveSession, LiveSummary, QualityView, StateView};
use gazefuse_core::log::{LogWriter, SessionMeta};
use gazefuse_core::protocol::{Command, KeypointKind, ProtocolConfig, ProtocolError};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::host_now_ns;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub meta: SessionMeta,
    pub protocol: ProtocolConfig,
    pub mode: LiveMode,
    pub out_dir: PathBuf,
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub client_backlog: usize,
    pub tick: Duration,
}

impl ServerConfig {
    pub fn new(meta: SessionMeta, out_dir: PathBuf, ingest_addr: SocketAddr, http_addr: SocketAddr) -> Self {
        ServerConfig {
            meta,
            protocol: ProtocolConfig::default(),
            mode: LiveMode::Protocol,
            out_dir,
            ingest_addr,
            http_addr,
            client_backlog: DEFAULT_CLIENT_BACKLOG,
            tick: Duration::from_millis(50),
        }
    }
}

/// `--session` file: session metadata plus an optional `[protocol]` table.
#[derive(Debug, Clone, Deserialize)]
pub struct SessionFile {
    #[serde(flatten)]
    pub meta: SessionMeta,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

pub fn load_session_file(path: &Path) -> Result<SessionFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut f: SessionFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if f.meta.created_ns == 0 {
        f.meta.created_ns = host_now_ns();
    }
    Ok(f)
}

enum Msg {
    Line(String),
    Tick,
    Command(Command, oneshot::Sender<Result<Ack, LiveError>>),
    Keypoint(KeypointKind, String, oneshot::Sender<Result<Ack, LiveError>>),
    State(oneshot::Sender<StateView>),
    Quality(oneshot::Sender<QualityView>),
    Stop,
}

struct TokioSink(mpsc::Sender<String>);

impl PacketSink for TokioSink {
    fn try_send(&mut self, line: String) -> Result<(), SinkError> {
        self.0.try_send(line).map_err(|e| match e {
            mpsc::error::TrySendError::Full(_) => SinkError::Full,
            mpsc::error::TrySendError::Closed(_) => SinkError::Closed,
        })
    }
}

#[derive(Clone)]
struct AppState {
    tx: mpsc::Sender<Msg>,
    hub: Arc<Mutex<Hub>>,
    out_dir: PathBuf,
    backlog: usize,
}

pub struct Running {
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub log_path: PathBuf,
    pub hub: Arc<Mutex<Hub>>,
    tx: mpsc::Sender<Msg>,
    done: oneshot::Receiver<Result<LiveSummary, String>>,
    tasks: Vec<JoinHandle<()>>,
}

impl Running {
    /// Waits until the session stops (`stop` command or [`Running::stop`]).
    pub async fn wait(&mut self) -> Result<LiveSummary> {
        let r = (&mut self.done).await;
        for t in &self.tasks {
            t.abort();
        }
        r.context("session thread exited")?.map_err(anyhow::Error::msg)
    }

    pub async fn stop(&mut self) -> Result<LiveSummary> {
        let _ = self.tx.send(Msg::Stop).await;
        self.wait().await
    }
}

fn session_thread(
    mut session: LiveSession,
    mut rx: mpsc::Receiver<Msg>,
    done: oneshot::Sender<Result<LiveSummary, String>>,
) {
    // Messages from different producers interleave, so the session clock is
    // read here and never allowed to step back.
    let mut last = 0i64;
    let mut now = || {
        last = last.max(host_now_ns());
        last
    };
    while let Some(msg) = rx.blocking_recv() {
        let t = now();
        match msg {
            // Bad lines and late samples are counted inside the session.
            Msg::Line(line) => drop(session.ingest_line(&line, t)),
            Msg::Tick => drop(session.tick(t)),
            Msg::Command(cmd, reply) => drop(reply.send(session.command(cmd, t))),
            Msg::Keypoint(kind, text, reply) => drop(reply.send(session.keypoint(kind, &text, t))),
            Msg::State(reply) => drop(reply.send(session.state_view(t))),
            Msg::Quality(reply) => drop(reply.send(session.quality(t))),
            Msg::Stop => break,
        }
    }
    let _ = done.send(session.finish(now()).map_err(|e| e.to_string()));
}

pub async fn start(cfg: ServerConfig) -> Result<Running> {
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let log_path = cfg.out_dir.join(format!("{}.log", cfg.meta.session_id));
    let writer = LogWriter::create(&log_path, &cfg.meta).with_context(|| format!("creating {}", log_path.display()))?;
    let hub = Arc::new(Mutex::new(Hub::new()));
    let live_cfg = LiveConfig { mode: cfg.mode, protocol: cfg.protocol.clone(), ..LiveConfig::new(cfg.meta.clone()) };
    let session = LiveSession::new(live_cfg, Some(writer), hub.clone(), host_now_ns())?;

    let (tx, rx) = mpsc::channel::<Msg>(8192);
    let (done_tx, done_rx) = oneshot::channel();
    std::thread::Builder::new().name("session".into()).spawn(move || session_thread(session, rx, done_tx))?;

    let ingest = TcpListener::bind(cfg.ingest_addr).await.with_context(|| format!("binding {}", cfg.ingest_addr))?;
    let http = TcpListener::bind(cfg.http_addr).await.with_context(|| format!("binding {}", cfg.http_addr))?;
    let (ingest_addr, http_addr) = (ingest.local_addr()?, http.local_addr()?);

    let mut tasks = Vec::new();
    let itx = tx.clone();
    tasks.push(tokio::spawn(async move {
        while let Ok((sock, _)) = ingest.accept().await {
            tokio::spawn(read_connection(sock, itx.clone()));
        }
    }));
    let ttx = tx.clone();
    let period = cfg.tick;
    tasks.push(tokio::spawn(async move {
        let mut iv = tokio::time::interval(period);
        loop {
            iv.tick().await;
            if ttx.send(Msg::Tick).await.is_err() {
                break;
            }
        }
    }));
    let state =
        AppState { tx: tx.clone(), hub: hub.clone(), out_dir: cfg.out_dir.clone(), backlog: cfg.client_backlog };
    let app = router(state);
    tasks.push(tokio::spawn(async move {
        let _ = axum::serve(http, app).await;
    }));

    Ok(Running { ingest_addr, http_addr, log_path, hub, tx, done: done_rx, tasks })
}

async fn read_connection(sock: TcpStream, tx: mpsc::Sender<Msg>) {
    let mut lines = BufReader::new(sock).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        if tx.send(Msg::Line(line)).await.is_err() {
            break;
        }
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/live", get(live_ws))
        .route("/ingest", get(ingest_ws))
        .route("/session/command", post(command))
        .route("/session/state", get(session_state))
        .route("/session/quality", get(session_quality))
        .route("/sessions", get(list_sessions))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct LiveQuery {
    kinds: Option<String>,
}

async fn live_ws(ws: WebSocketUpgrade, Query(q): Query<LiveQuery>, State(st): State<AppState>) -> Response {
    let kinds: Vec<PacketKind> = match q.kinds.as_deref() {
        None | Some("") => Vec::new(),
        Some(list) => match list.split(',').map(|k| PacketKind::from_name(k.trim()).ok_or(k)).collect() {
            Ok(k) => k,
            Err(bad) => return (StatusCode::BAD_REQUEST, format!("unknown packet kind `{bad}`")).into_response(),
        },
    };
    ws.on_upgrade(move |socket| forward_packets(socket, kinds, st))
}

async fn forward_packets(mut socket: WebSocket, kinds: Vec<PacketKind>, st: AppState) {
    let (ptx, mut prx) = mpsc::channel::<String>(st.backlog);
    let id = st.hub.lock().expect("hub lock").subscribe(&kinds, TokioSink(ptx));
    // Ends when the hub drops this client (backlog) or the socket fails.
    while let Some(line) = prx.recv().await {
        if socket.send(Message::Text(line.into())).await.is_err() {
            break;
        }
    }
    st.hub.lock().expect("hub lock").unsubscribe(id);
    let _ = socket.send(Message::Close(None)).await;
}

async fn ingest_ws(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.on_upgrade(move |mut socket| async move {
        while let Some(Ok(msg)) = socket.recv().await {
            let Message::Text(text) = msg else { continue };
            for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                if st.tx.send(Msg::Line(line.to_string())).await.is_err() {
                    return;
                }
            }
        }
    })
}

#[derive(Debug, Deserialize)]
struct CommandBody {
    cmd: String,
    #[serde(default)]
    args: Value,
}

fn error_name(e: &LiveError) -> &'static str {
    match e {
        LiveError::Protocol(p) => match p {
            ProtocolError::IllegalTransition { .. } => "IllegalTransition",
            ProtocolError::BaselineTooShort { .. } => "BaselineTooShort",
            ProtocolError::NoActiveSession => "NoActiveSession",
            ProtocolError::ClockWentBackwards { .. } => "ClockWentBackwards",
            ProtocolError::UnknownCommand(_) => "UnknownCommand",
            ProtocolError::UnknownKeypoint(_) => "UnknownKeypoint",
        },
        LiveError::Passthrough => "Passthrough",
        _ => "SessionError",
    }
}

fn reject(status: StatusCode, error: &str, reason: String) -> Response {
    (status, Json(json!({"ok": false, "error": error, "reason": reason}))).into_response()
}

async fn command(State(st): State<AppState>, Json(body): Json<CommandBody>) -> Response {
    let (reply, rx) = oneshot::channel();
    let msg = match body.cmd.as_str() {
        "stop" => {
            let _ = st.tx.send(Msg::Stop).await;
            return Json(json!({"ok": true, "stopped": true})).into_response();
        }
        "mark_keypoint" => {
            let kind = body.args.get("kind").and_then(Value::as_str).unwrap_or("");
            let Ok(kind) = kind.parse::<KeypointKind>() else {
                return reject(StatusCode::BAD_REQUEST, "UnknownKeypoint", format!("unknown keypoint kind `{kind}`"));
            };
            let text = body.args.get("text").and_then(Value::as_str).unwrap_or(kind.name()).to_string();
            Msg::Keypoint(kind, text, reply)
        }
        other => match other.parse::<Command>() {
            Ok(cmd) => Msg::Command(cmd, reply),
            Err(e) => return reject(StatusCode::BAD_REQUEST, "UnknownCommand", e.to_string()),
        },
    };
    if st.tx.send(msg).await.is_err() {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "SessionStopped", "session has stopped".into());
    }
    match rx.await {
        Ok(Ok(ack)) => Json(json!({"ok": true, "ack": ack})).into_response(),
        Ok(Err(e)) => reject(StatusCode::CONFLICT, error_name(&e), e.to_string()),
        Err(_) => reject(StatusCode::SERVICE_UNAVAILABLE, "SessionStopped", "session has stopped".into()),
    }
}

async fn ask<T: serde::Serialize>(st: &AppState, msg: impl FnOnce(oneshot::Sender<T>) -> Msg) -> Response {
    let (reply, rx) = oneshot::channel();
    if st.tx.send(msg(reply)).await.is_err() {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "SessionStopped", "session has stopped".into());
    }
    match rx.await {
        Ok(view) => Json(view).into_response(),
        Err(_) => reject(StatusCode::SERVICE_UNAVAILABLE, "SessionStopped", "session has stopped".into()),
    }
}

async fn session_state(State(st): State<AppState>) -> Response {
    ask(&st, Msg::State).await
}

async fn session_quality(State(st): State<AppState>) -> Response {
    ask(&st, Msg::Quality).await
}

/// Header of every `*.log` in the output directory.
pub fn list_logs(dir: &Path) -> std::io::Result<Vec<Value>> {
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    paths.sort();
    for p in paths {
        let first = std::fs::read_to_string(&p).ok().and_then(|t| t.lines().next().map(String::from));
        let header: Value = first.and_then(|l| serde_json::from_str(&l).ok()).unwrap_or(Value::Null);
        let file = p.file_name().map(|f| f.to_string_lossy().into_owned());
        out.push(json!({
            "file": file,
            "session_id": header.get("session_id"),
            "person_id": header.get("person_id"),
            "expertise_hours": header.get("expertise_hours"),
            "created_ns": header.get("created_ns"),
        }));
    }
    Ok(out)
}

async fn list_sessions(State(st): State<AppState>) -> Response {
    match list_logs(&st.out_dir) {
        Ok(v) => Json(v).into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, "IoError", e.to_string()),
    }
}
