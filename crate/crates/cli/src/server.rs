//! Websocket teleoperation server.
//!
//! `GET /` serves a small browser client, `GET /ws` upgrades to the session
//! socket. Messages are JSON text frames following `lanefollow::teleop`.
//! One session at a time; a second client receives an error and is closed.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use lanefollow::camera::render_top_down;
use lanefollow::env::EnvConfig;
use lanefollow::eval::{compute_metrics, write_logs_jsonl, EpisodeLog};
use lanefollow::teleop::{ClientMessage, ServerMessage, Session, Tick, SCHEMA_VERSION};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use crate::error::CliError;
use crate::imaging;

const INDEX_HTML: &str = include_str!("../static/teleop.html");
pub const JPEG_QUALITY: u8 = 80;
pub const TOP_DOWN_PX_PER_M: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub env: EnvConfig,
    pub realtime_factor: f64,
    pub log_dir: PathBuf,
    pub top_down: bool,
}

struct AppState {
    opts: ServerOptions,
    busy: AtomicBool,
    episodes: AtomicUsize,
}

pub fn router(opts: ServerOptions) -> Router {
    let state = Arc::new(AppState {
        opts,
        busy: AtomicBool::new(false),
        episodes: AtomicUsize::new(0),
    });
    Router::new()
        .route("/", get(|| async { Html(INDEX_HTML) }))
        .route("/ws", get(ws_handler))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, opts: ServerOptions) -> Result<(), CliError> {
    std::fs::create_dir_all(&opts.log_dir)?;
    axum::serve(listener, router(opts)).await?;
    Ok(())
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| async move {
        if state.busy.swap(true, Ordering::SeqCst) {
            reject(socket, "another session is active").await;
            return;
        }
        if let Err(e) = run_session(socket, &state).await {
            eprintln!("teleop session ended with error: {e}");
        }
        state.busy.store(false, Ordering::SeqCst);
    })
}

async fn reject(mut socket: WebSocket, message: &str) {
    let msg = ServerMessage::Error {
        version: SCHEMA_VERSION,
        step: 0,
        message: message.into(),
    };
    let _ = socket.send(Message::Text(encode(&msg).into())).await;
    let _ = socket.close().await;
}

fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

fn frame_message(session: &Session, tick: &Tick, t0: Instant, top_down: bool) -> ServerMessage {
    let env = session.env();
    let camera = imaging::jpeg(env.camera_image(), JPEG_QUALITY);
    let top = if top_down {
        let mut vehicles = vec![*env.ego()];
        vehicles.extend(env.lead().map(|l| l.state));
        B64.encode(imaging::png(&render_top_down(env.track(), &vehicles, TOP_DOWN_PX_PER_M)))
    } else {
        String::new()
    };
    ServerMessage::Frame {
        version: SCHEMA_VERSION,
        step: tick.step,
        t_server: t0.elapsed().as_secs_f64(),
        camera_jpeg: B64.encode(camera),
        top_down_png: top,
        lane_pose: tick.lane_pose,
        reward: tick.reward,
        metrics: tick.metrics,
        done: tick.done,
    }
}

fn initial_tick(session: &Session) -> Tick {
    let env = session.env();
    Tick {
        step: 0,
        lane_pose: env.lane_pose().expect("episode started"),
        reward: 0.0,
        metrics: Default::default(),
        done: false,
    }
}

/// Writes the log and builds the summary message.
fn finish_episode(state: &AppState, log: EpisodeLog, step: usize) -> ServerMessage {
    let n = state.episodes.fetch_add(1, Ordering::SeqCst);
    let metrics = log.parse_track().map(|t| compute_metrics(&log, &t)).unwrap_or_default();
    let path = state.opts.log_dir.join(format!("episode_{n:04}_seed{}.jsonl", log.seed));
    let written = std::fs::File::create(&path)
        .map_err(Into::into)
        .and_then(|f| write_logs_jsonl(std::io::BufWriter::new(f), std::slice::from_ref(&log)));
    let log_file = match written {
        Ok(()) => Some(path.display().to_string()),
        Err(e) => {
            eprintln!("cannot write {}: {e}", path.display());
            None
        }
    };
    ServerMessage::EpisodeSummary {
        version: SCHEMA_VERSION,
        step,
        seed: log.seed,
        termination_reason: log.termination_reason,
        metrics,
        log_file,
    }
}

/// Control messages wait for queue space; frames are dropped when the client lags.
async fn send_ctl(out: &mpsc::Sender<String>, msg: ServerMessage) {
    let _ = out.send(encode(&msg)).await;
}

fn send_frame(out: &mpsc::Sender<String>, msg: ServerMessage) {
    let _ = out.try_send(encode(&msg));
}

async fn run_session(socket: WebSocket, state: &AppState) -> Result<(), CliError> {
    let (mut sink, mut stream) = socket.split();
    let mut session = Session::new(state.opts.env.clone())?;
    let t0 = Instant::now();

    // reader task: parse and forward; the stepping loop handles messages between steps
    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<Result<ClientMessage, String>>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t.to_string(),
                Message::Close(_) => break,
                _ => continue,
            };
            let parsed = serde_json::from_str::<ClientMessage>(&text).map_err(|e| e.to_string());
            if in_tx.send(parsed).is_err() {
                break;
            }
        }
    });

    let (out, mut out_rx) = mpsc::channel::<String>(8);
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    send_ctl(
        &out,
        ServerMessage::Hello {
            version: SCHEMA_VERSION,
            step: 0,
            frame_rate: state.opts.env.frame_rate,
            horizon: state.opts.env.horizon,
            map: state.opts.env.map.clone(),
        },
    )
    .await;

    let period = Duration::from_secs_f64(state.opts.env.dt() / state.opts.realtime_factor);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut result = Ok(());
    loop {
        tokio::select! {
            biased;
            msg = in_rx.recv() => {
                let Some(msg) = msg else {
                    // disconnect: the running episode is recorded as aborted
                    if let Some(log) = session.abort() {
                        finish_episode(state, log, session.env().step_count());
                    }
                    break;
                };
                match msg {
                    Err(e) => {
                        let step = session.env().step_count();
                        send_ctl(&out, ServerMessage::Error {
                            version: SCHEMA_VERSION,
                            step,
                            message: format!("bad message: {e}"),
                        }).await;
                    }
                    Ok(ClientMessage::Hello { version }) if version != SCHEMA_VERSION => {
                        send_ctl(&out, ServerMessage::Error {
                            version: SCHEMA_VERSION,
                            step: 0,
                            message: format!("schema version {version} not supported, server speaks {SCHEMA_VERSION}"),
                        }).await;
                    }
                    Ok(ClientMessage::Hello { .. }) => {}
                    Ok(ClientMessage::KeyState { keys, t_client }) => {
                        session.update_keys(keys, t_client);
                    }
                    Ok(ClientMessage::StartEpisode { seed }) => {
                        if let Some(log) = session.start(seed) {
                            send_ctl(&out, finish_episode(state, log, 0)).await;
                        }
                        ticker.reset();
                        let tick = initial_tick(&session);
                        send_ctl(&out, frame_message(&session, &tick, t0, state.opts.top_down)).await;
                    }
                    Ok(ClientMessage::EndEpisode) => {
                        let step = session.env().step_count();
                        if let Some(log) = session.abort() {
                            send_ctl(&out, finish_episode(state, log, step)).await;
                        }
                    }
                }
            }
            _ = ticker.tick(), if session.in_episode() => {
                match session.tick() {
                    Ok(Some(tick)) => {
                        let frame = frame_message(&session, &tick, t0, state.opts.top_down);
                        if tick.done {
                            // the final frame is never dropped
                            send_ctl(&out, frame).await;
                            if let Some(log) = session.take_finished() {
                                send_ctl(&out, finish_episode(state, log, tick.step)).await;
                            }
                        } else {
                            send_frame(&out, frame);
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        result = Err(CliError::from(e));
                        break;
                    }
                }
            }
        }
    }
    drop(out);
    reader.abort();
    let _ = writer.await;
    result
}
