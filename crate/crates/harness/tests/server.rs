use endonav_harness::scenario::Scenario;
use endonav_harness::server::{bind, serve, ServeOptions};
use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

#[test]
fn tcp_session_calibrates_and_streams() {
    let listener = bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let scenario = Scenario::from_toml("schema_version = 1\nname = \"tcp\"\nduration = 0.0\n").unwrap();
    let opts = ServeOptions {
        period: Some(Duration::from_millis(1)),
        max_connections: Some(1),
        ..ServeOptions::default()
    };
    let server = std::thread::spawn(move || serve(listener, &scenario, &opts));

    let stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut lines = BufReader::new(stream.try_clone().unwrap()).lines();
    let mut next = || -> Value { serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap() };

    let hello = next();
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["payload"]["protocol"], 1);

    let calibrate = json!({"type": "mode", "seq": 1, "payload": {"mode": "calibrate"}});
    writeln!(writer, "{calibrate}").unwrap();
    writeln!(writer, "this is not json").unwrap();

    let (mut replied, mut rejected, mut calibrated, mut frames) = (false, false, false, 0);
    let mut last_tick = None;
    for _ in 0..5000 {
        let v = next();
        match v["type"].as_str().unwrap() {
            "status" if v["payload"]["reply_to"] == 1 => replied = true,
            "error" if v["payload"]["code"] == "malformed" => rejected = true,
            "telemetry" => {
                let tick = v["payload"]["tick"].as_u64().unwrap();
                // telemetry is never dropped
                if let Some(t) = last_tick {
                    assert_eq!(tick, t + 1);
                }
                last_tick = Some(tick);
                calibrated |= v["payload"]["phase"] == "calibrated";
            }
            "frame" => frames += 1,
            _ => {}
        }
        if replied && rejected && calibrated && frames > 0 {
            break;
        }
    }
    assert!(replied && rejected && calibrated && frames > 0);
    stream.shutdown(std::net::Shutdown::Both).unwrap();
    server.join().unwrap().unwrap();
}

#[test]
fn bind_failure_names_the_address() {
    let err = bind("256.0.0.1:1").unwrap_err();
    assert!(err.to_string().contains("256.0.0.1:1"), "{err}");
}
