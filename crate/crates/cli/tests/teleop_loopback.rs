use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use lanefollow::env::{Env, EnvConfig};
use lanefollow::eval::{compute_metrics, read_logs_jsonl};
use lanefollow::teleop::{teleop_env_config, ServerMessage, SCHEMA_VERSION};
use lanefollow_cli::server::{serve, ServerOptions};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn straight_config(horizon: f64) -> EnvConfig {
    EnvConfig {
        map: "straight".into(),
        horizon,
        spawn_heading: 0.0,
        spawn_lateral_fraction: 0.0,
        ..EnvConfig::default()
    }
}

/// A seed whose spawn has at least `ahead` meters of straight road in front.
fn straight_seed(cfg: &EnvConfig, ahead: f64) -> u64 {
    let mut env = Env::new(teleop_env_config(cfg.clone())).unwrap();
    (0..10_000)
        .find(|&seed| {
            env.reset(seed);
            let s = env.lane_pose().unwrap().s;
            let (_, t0) = env.track().centerline_point(s);
            (0..=(ahead * 20.0) as usize).all(|k| {
                let (_, t) = env.track().centerline_point(s + k as f64 * 0.05);
                (t - t0).abs() < 1e-9
            })
        })
        .expect("some spawn sits at the start of a long straight")
}

async fn start_server(env: EnvConfig, log_dir: &Path, realtime_factor: f64) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = ServerOptions {
        env,
        realtime_factor,
        log_dir: log_dir.to_path_buf(),
        top_down: true,
    };
    tokio::spawn(serve(listener, opts));
    format!("ws://{addr}/ws")
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(30), ws.next())
            .await
            .expect("server message within 30 s")
            .expect("socket open")
            .unwrap();
        if let Message::Text(t) = msg {
            assert!(t.len() < 50 * 1024, "message of {} bytes", t.len());
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, json: serde_json::Value) {
    ws.send(Message::Text(json.to_string().into())).await.unwrap();
}

async fn wait_for_log(dir: &Path) -> std::path::PathBuf {
    for _ in 0..200 {
        let found = std::fs::read_dir(dir)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.extension().is_some_and(|x| x == "jsonl"));
        if let Some(p) = found {
            return p;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("no episode log written");
}

#[tokio::test]
async fn driving_up_matches_full_speed_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = straight_config(15.0);
    let seed = straight_seed(&cfg, 7.7);
    let url = start_server(cfg.clone(), dir.path(), 40.0).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();

    let ServerMessage::Hello { version, .. } = recv(&mut ws).await else {
        panic!("expected hello");
    };
    assert_eq!(version, SCHEMA_VERSION);
    send(&mut ws, serde_json::json!({"type": "hello", "version": SCHEMA_VERSION})).await;
    send(&mut ws, serde_json::json!({"type": "key_state", "up": true, "t_client": 0.0})).await;
    send(&mut ws, serde_json::json!({"type": "start_episode", "seed": seed})).await;

    let mut steps = Vec::new();
    let summary = loop {
        match recv(&mut ws).await {
            ServerMessage::Frame { step, camera_jpeg, lane_pose, .. } => {
                assert!(!camera_jpeg.is_empty());
                assert!(lane_pose.in_right_lane);
                steps.push(step);
            }
            s @ ServerMessage::EpisodeSummary { .. } => break s,
            other => panic!("unexpected {other:?}"),
        }
    };
    assert_eq!(steps.first(), Some(&0));
    assert_eq!(steps.last(), Some(&225));
    assert!(steps.windows(2).all(|w| w[1] > w[0]));

    let ServerMessage::EpisodeSummary { metrics, termination_reason, log_file, .. } = summary else {
        unreachable!()
    };
    let top_speed = cfg.vehicle.top_speed();
    let oracle = top_speed * 15.0;
    assert!((metrics.survival_time - 15.0).abs() < 1e-9);
    assert!((metrics.distance_ego_lane - oracle).abs() <= top_speed * cfg.dt(), "{metrics:?}");
    assert_eq!(metrics.distance_ego_lane, metrics.distance_both_lanes);
    assert_eq!(termination_reason, Some(lanefollow::env::TerminationReason::TimeLimit));

    // the recorded log reproduces the reported metrics
    let file = std::fs::File::open(log_file.unwrap()).unwrap();
    let logs = read_logs_jsonl(std::io::BufReader::new(file)).unwrap();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].controller, "human");
    assert_eq!(compute_metrics(&logs[0], &logs[0].parse_track().unwrap()), metrics);
}

#[tokio::test]
async fn idle_client_stays_put_and_disconnect_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let url = start_server(straight_config(1.0), dir.path(), 20.0).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    recv(&mut ws).await;

    // a second client is turned away while the first is connected
    let (mut other, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    assert!(matches!(recv(&mut other).await, ServerMessage::Error { .. }));

    send(&mut ws, serde_json::json!({"type": "start_episode", "seed": 1})).await;
    let summary = loop {
        if let s @ ServerMessage::EpisodeSummary { .. } = recv(&mut ws).await {
            break s;
        }
    };
    let ServerMessage::EpisodeSummary { metrics, .. } = summary else { unreachable!() };
    assert!((metrics.survival_time - 1.0).abs() < 1e-9);
    assert_eq!(metrics.distance_both_lanes, 0.0);

    send(&mut ws, serde_json::json!({"type": "start_episode", "seed": 2})).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Frame { step: 0, .. }));
    drop(ws);
    // the first log is the completed episode, wait for the aborted one too
    for _ in 0..200 {
        let n = std::fs::read_dir(dir.path()).unwrap().count();
        if n >= 2 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    wait_for_log(dir.path()).await;
    let mut reasons: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let f = std::fs::File::open(e.unwrap().path()).unwrap();
            read_logs_jsonl(std::io::BufReader::new(f)).unwrap()[0].termination_reason
        })
        .collect();
    reasons.sort_by_key(|r| format!("{r:?}"));
    use lanefollow::env::TerminationReason::*;
    assert_eq!(reasons, vec![Some(Aborted), Some(TimeLimit)]);
}

#[tokio::test]
async fn version_mismatch_and_bad_messages_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let url = start_server(straight_config(1.0), dir.path(), 1.0).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    recv(&mut ws).await;
    send(&mut ws, serde_json::json!({"type": "hello", "version": 99})).await;
    let ServerMessage::Error { message, .. } = recv(&mut ws).await else { panic!() };
    assert!(message.contains("99"));
    send(&mut ws, serde_json::json!({"type": "fly"})).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
}
