//! Start a server on a free port and drive it from a plain TCP client.
//!
//! cargo run --release --example serve_client

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;

use armgym::episode::{GoalValue, State};
use armgym::learn::go_to_goal;
use armgym::server::{Server, ServerConfig};
use serde_json::{json, Value};

fn main() {
    let server = Server::bind("127.0.0.1:0", ServerConfig::default()).unwrap();
    let addr = server.local_addr().unwrap();
    let stop = server.shutdown_handle().unwrap();
    let handle = std::thread::spawn(move || server.run());

    let stream = TcpStream::connect(addr).unwrap();
    stream.set_nodelay(true).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut call = |req: Value| -> Value {
        writeln!(writer, "{req}").unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let resp: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(resp["ok"], json!(true), "{resp}");
        resp["result"].clone()
    };

    println!("protocol version {}", call(json!({"op": "spec"}))["protocol_version"]);
    call(json!({"op": "make", "task": "no_obstacles", "seed": 5}));
    for _ in 0..3 {
        let r = call(json!({"op": "reset"}));
        let goal: GoalValue = serde_json::from_value(r["goal"].clone()).unwrap();
        let mut state: State = serde_json::from_value(r["state"].clone()).unwrap();
        let mut steps = 0;
        loop {
            let a = go_to_goal(&state, goal.config_target.as_ref()).unwrap();
            let t = call(json!({"op": "step", "action": a.iter().collect::<Vec<_>>()}));
            steps += 1;
            state = serde_json::from_value(t["next_state"].clone()).unwrap();
            if t["done"] == json!(true) {
                println!("query {}: {} steps, reached {}", r["index"], steps, t["goal_reached"]);
                break;
            }
        }
    }
    let cloud = call(json!({"op": "sense", "rays": 200}));
    println!("sensed {} points", cloud["points"].as_array().unwrap().len());
    call(json!({"op": "close"}));
    stop.shutdown();
    handle.join().unwrap().unwrap();
}
