//! Driving a session with wire-protocol frames, as the socket server does.
//!
//! `cargo run -p gennav --example session --release`

use gennav::protocol::ServerMessage;
use gennav::session::{Session, SessionConfig};
use gennav::sim::World;
use gennav::PlantConfig;

fn main() {
    let world = World::fig5();
    let spawn = world.spawn("start").unwrap();
    let session = SessionConfig::new(PlantConfig::diffdrive(), world, spawn, None, 0);
    let mut s = Session::new(session).unwrap();

    let say = |s: &mut Session, frame: &str| {
        let replies: Vec<String> = s.handle_text(frame).iter().map(ServerMessage::to_json).collect();
        println!("> {frame}\n< {replies:?}");
    };
    say(&mut s, r#"{"type":"goal","pose":[3,1.5,0]}"#);
    say(&mut s, r#"{"type":"set_mode","mode":"MAPPING"}"#);
    say(&mut s, r#"{"type":"teleop","twist":[0.2,0,0.1]}"#);
    for _ in 0..100 {
        s.step();
    }
    say(&mut s, r#"{"type":"set_mode","mode":"IDLE"}"#);
    say(&mut s, r#"{"type":"goal","pose":[1.5,2.5,1.57]}"#);
    let t = s.step();
    println!("tick {} mode {} est {:?} map frame {}", t.tick, t.mode, t.pose_est, t.map_patch.is_some());
    let json = ServerMessage::Telemetry(t).to_json();
    println!("telemetry frame is {} bytes", json.len());
}
