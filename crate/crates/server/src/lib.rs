//! WebSocket front end for a [`Session`].
//!
//! The session lives on its own thread and ticks at a fixed period. Client
//! frames are queued and applied at the next tick boundary; each tick's
//! telemetry is broadcast to every connected client as an immutable snapshot.
//! Replies to a command (errors, `map_saved`) go only to the client that sent it.

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use gennav::protocol::ServerMessage;
use gennav::session::Session;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Control period of the session loop.
    pub period: Duration,
    /// Static UI assets served at `/`. `None` runs headless: socket only.
    pub static_dir: Option<PathBuf>,
    /// Stop stepping after this many ticks; commands are still applied.
    pub max_ticks: Option<u64>,
}

impl ServerConfig {
    pub fn headless(addr: SocketAddr) -> Self {
        Self { addr, period: Duration::from_millis(50), static_dir: None, max_ticks: None }
    }
}

enum Command {
    Text { text: String, reply: mpsc::UnboundedSender<String> },
    Joined,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::UnboundedSender<Command>,
    telemetry: broadcast::Sender<Arc<str>>,
    stop: watch::Receiver<bool>,
}

pub struct RunningServer {
    pub addr: SocketAddr,
    stop_http: watch::Sender<bool>,
    stop_loop: Arc<AtomicBool>,
    session: Option<thread::JoinHandle<Session>>,
    http: JoinHandle<io::Result<()>>,
}

impl RunningServer {
    /// Stops ticking, closes every connection and hands the session back.
    pub async fn shutdown(mut self) -> Session {
        self.stop_loop.store(true, Ordering::Relaxed);
        let _ = self.stop_http.send(true);
        let handle = self.session.take().expect("session thread joined once");
        let session = tokio::task::spawn_blocking(move || handle.join().expect("session thread panicked"))
            .await
            .expect("join task");
        if tokio::time::timeout(Duration::from_secs(2), &mut self.http).await.is_err() {
            self.http.abort();
        }
        session
    }

    /// Serves until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> io::Result<Session> {
        tokio::signal::ctrl_c().await?;
        Ok(self.shutdown().await)
    }
}

pub async fn start(session: Session, config: ServerConfig) -> io::Result<RunningServer> {
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let (commands, command_rx) = mpsc::unbounded_channel();
    let (telemetry, _) = broadcast::channel(64);
    let (stop_http, stop) = watch::channel(false);
    let stop_loop = Arc::new(AtomicBool::new(false));

    let loop_telemetry = telemetry.clone();
    let loop_stop = stop_loop.clone();
    let session = thread::Builder::new()
        .name("gennav-session".into())
        .spawn(move || run_session(session, command_rx, loop_telemetry, config.period, config.max_ticks, loop_stop))?;

    let state = AppState { commands, telemetry, stop: stop.clone() };
    let mut router = Router::new().route("/ws", get(upgrade)).with_state(state);
    if let Some(dir) = &config.static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    let mut stop_signal = stop;
    let http = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                let _ = stop_signal.wait_for(|s| *s).await;
            })
            .await
    });
    Ok(RunningServer { addr, stop_http, stop_loop, session: Some(session), http })
}

fn run_session(
    mut session: Session,
    mut commands: mpsc::UnboundedReceiver<Command>,
    telemetry: broadcast::Sender<Arc<str>>,
    period: Duration,
    max_ticks: Option<u64>,
    stop: Arc<AtomicBool>,
) -> Session {
    let mut next = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        while let Ok(cmd) = commands.try_recv() {
            match cmd {
                Command::Text { text, reply } => {
                    for msg in session.handle_text(&text) {
                        let _ = reply.send(msg.to_json());
                    }
                }
                Command::Joined => session.resend_map(),
            }
        }
        if !max_ticks.is_some_and(|m| session.tick() >= m) {
            let frame = ServerMessage::Telemetry(session.step()).to_json();
            // no subscribers is fine
            let _ = telemetry.send(frame.into());
        }
        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            next = now;
        }
    }
    session
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, mut state: AppState) {
    let (mut tx, mut rx) = socket.split();
    let mut telemetry = state.telemetry.subscribe();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<String>();
    if state.commands.send(Command::Joined).is_err() {
        return;
    }
    loop {
        let out: String = tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let cmd = Command::Text { text: text.as_str().to_owned(), reply: reply_tx.clone() };
                    if state.commands.send(cmd).is_err() {
                        break;
                    }
                    continue;
                }
                Some(Ok(Message::Binary(_))) => ServerMessage::error("binary frames are not supported").to_json(),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => continue,
            },
            Some(reply) = replies.recv() => reply,
            frame = telemetry.recv() => match frame {
                Ok(frame) => frame.to_string(),
                // a slow client skips straight to newer frames
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            _ = state.stop.changed() => {
                let _ = tx.send(Message::Close(None)).await;
                break;
            }
        };
        if tx.send(Message::Text(out.into())).await.is_err() {
            break;
        }
    }
}
