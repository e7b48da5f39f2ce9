use std::time::Duration;

use futures::{SinkExt, StreamExt};
use gennav::session::{Session, SessionConfig};
use gennav::sim::World;
use gennav::PlantConfig;
use gennav_server::{start, RunningServer, ServerConfig};
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn server() -> RunningServer {
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    let map = world.known_map(world.map_geometry(0.05, 0.5), spawn.position());
    let session = Session::new(SessionConfig::new(PlantConfig::diffdrive(), world, spawn, Some(map), 1)).unwrap();
    let mut cfg = ServerConfig::headless("127.0.0.1:0".parse().unwrap());
    cfg.period = Duration::from_millis(10);
    start(session, cfg).await.unwrap()
}

async fn connect(s: &RunningServer) -> Client {
    connect_async(format!("ws://{}/ws", s.addr)).await.unwrap().0
}

async fn next_json(c: &mut Client) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), c.next()).await.expect("frame within 10 s").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).expect("server frames are JSON");
        }
    }
}

/// Skips telemetry until a frame of another type arrives.
async fn next_reply(c: &mut Client) -> Value {
    loop {
        let v = next_json(c).await;
        if v["type"] != "telemetry" {
            return v;
        }
    }
}

async fn send(c: &mut Client, text: &str) {
    c.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test]
async fn telemetry_streams_with_map_on_join() {
    let s = server().await;
    let mut c = connect(&s).await;
    let mut saw_map = false;
    let mut last_tick = 0;
    for _ in 0..10 {
        let v = next_json(&mut c).await;
        assert_eq!(v["type"], "telemetry");
        let tick = v["tick"].as_u64().unwrap();
        assert!(tick > last_tick);
        last_tick = tick;
        assert_eq!(v["pose_est"].as_array().unwrap().len(), 3);
        assert!(v["battery_v"].as_f64().unwrap() > 10.0);
        saw_map |= v.get("map_patch").is_some();
    }
    assert!(saw_map, "a joining client receives the full map");
    let session = s.shutdown().await;
    assert!(session.tick() >= last_tick);
}

#[tokio::test]
async fn bad_frames_get_errors_and_connection_survives() {
    let s = server().await;
    let mut c = connect(&s).await;
    send(&mut c, "{not json").await;
    let e = next_reply(&mut c).await;
    assert_eq!(e["type"], "error");
    assert!(e["msg"].as_str().unwrap().contains("malformed"));

    send(&mut c, r#"{"type":"fly","to":"moon"}"#).await;
    let e = next_reply(&mut c).await;
    assert_eq!(e["type"], "error");
    assert!(e["msg"].as_str().unwrap().contains("unknown"));

    send(&mut c, r#"{"type":"goal","pose":[6.5,2.5,0]}"#).await;
    assert_eq!(next_reply(&mut c).await, serde_json::json!({"type": "error", "msg": "goal in obstacle"}));

    // still alive: a valid goal is accepted and the robot starts planning
    send(&mut c, r#"{"type":"goal","pose":[3,1.5,0]}"#).await;
    let mut moving = false;
    for _ in 0..200 {
        let v = next_json(&mut c).await;
        assert_eq!(v["type"], "telemetry");
        if v["mode"] == "EXECUTING" {
            moving = true;
            break;
        }
    }
    assert!(moving);
    s.shutdown().await;
}

#[tokio::test]
async fn replies_go_to_the_sender_only() {
    let s = server().await;
    let mut a = connect(&s).await;
    let mut b = connect(&s).await;
    next_json(&mut b).await;
    send(&mut a, r#"{"type":"nope"}"#).await;
    assert_eq!(next_reply(&mut a).await["type"], "error");
    // b keeps seeing telemetry only
    for _ in 0..20 {
        assert_eq!(next_json(&mut b).await["type"], "telemetry");
    }
    s.shutdown().await;
}

#[tokio::test]
async fn save_map_over_the_socket() {
    let dir = tempfile::tempdir().unwrap();
    let s = server().await;
    let mut c = connect(&s).await;
    let base = dir.path().join("saved");
    send(&mut c, &serde_json::json!({"type": "save_map", "path": base}).to_string()).await;
    let v = next_reply(&mut c).await;
    assert_eq!(v["type"], "map_saved");
    assert!(std::path::Path::new(v["yaml"].as_str().unwrap()).exists());
    assert!(std::path::Path::new(v["pgm"].as_str().unwrap()).exists());
    s.shutdown().await;
}
