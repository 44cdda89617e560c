mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tactile_dog::frame::{encode_frame, BoardFrame, TactileCanvas};
use tactile_dog::pipeline::protocol::{
    read_message, write_message, ClientMessage, Control, ErrorCode, Incoming, InfoMessage, ServerMessage,
    MAX_MESSAGE_LEN, TAG_CONTROL, TAG_FRAME,
};
use tactile_dog::pipeline::{Engine, PipelineError, Runtime, RuntimeOptions, SegmenterConfig, Service, ServiceOptions};
use tactile_dog::taxonomy::ZoneGeometry;

fn start(ui_dir: Option<std::path::PathBuf>) -> Service {
    let models = common::fresh_models();
    let info = InfoMessage::new(&models.taxonomy, SegmenterConfig::default());
    let runtime = Runtime::start(
        Engine::new(models, SegmenterConfig::default()),
        RuntimeOptions::default(),
    )
    .unwrap();
    Service::start(
        Arc::new(runtime),
        info,
        ServiceOptions {
            bind: "127.0.0.1:0".into(),
            ui_dir,
            ..Default::default()
        },
    )
    .unwrap()
}

fn connect(svc: &Service) -> TcpStream {
    let s = TcpStream::connect(svc.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s
}

fn recv(s: &mut TcpStream) -> ServerMessage {
    match read_message(s, MAX_MESSAGE_LEN).unwrap() {
        Incoming::Body(b) => ServerMessage::decode_body(&b).unwrap(),
        other => panic!("unexpected {other:?}"),
    }
}

fn frame_body(board: BoardFrame) -> Vec<u8> {
    ClientMessage::Frame(board).encode_body()
}

fn send_tick(s: &mut TcpStream, canvas: &TactileCanvas) {
    for b in canvas.disassemble() {
        write_message(s, &frame_body(b)).unwrap();
    }
}

fn http_get(svc: &Service, path: &str) -> (String, Vec<u8>) {
    let mut s = connect(svc);
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header end");
    (
        String::from_utf8_lossy(&raw[..split]).into_owned(),
        raw[split + 4..].to_vec(),
    )
}

#[test]
fn info_arrives_first() {
    let svc = start(None);
    let mut s = connect(&svc);
    let ServerMessage::Info(info) = recv(&mut s) else {
        panic!("expected INFO")
    };
    assert_eq!(info.protocol_version, 1);
    assert_eq!((info.canvas_rows, info.canvas_cols, info.tile), (64, 128, 32));
    assert_eq!(info.gestures.len(), 81);
    assert_eq!(info.actions.len(), 40);
    assert_eq!(info.tiling.len(), 13);
    assert_eq!(info.zones.checksum, ZoneGeometry::checksum_of(&info.zones.parts));
    svc.shutdown().unwrap();
}

#[test]
fn full_tick_yields_state_promptly() {
    let svc = start(None);
    let mut s = connect(&svc);
    let started = Instant::now();
    send_tick(&mut s, &TactileCanvas::zeros(0));
    assert!(matches!(recv(&mut s), ServerMessage::Info(_)));
    let ServerMessage::State(state) = recv(&mut s) else {
        panic!("expected STATE")
    };
    assert!(
        started.elapsed() < Duration::from_millis(200),
        "{:?}",
        started.elapsed()
    );
    assert_eq!(state.tick, 0);
    assert!(state.history.is_empty());
    let summary = svc.shutdown().unwrap();
    assert_eq!(summary.stats.boards_received, 8);
    assert_eq!(summary.stats.canvases_processed, 1);
}

#[test]
fn malformed_messages_get_errors_and_connection_survives() {
    let svc = start(None);
    let mut s = connect(&svc);
    assert!(matches!(recv(&mut s), ServerMessage::Info(_)));
    let mut bad_frame = encode_frame(&TactileCanvas::zeros(0).disassemble()[0]);
    bad_frame[0] ^= 0xFF;
    let cases: Vec<(Vec<u8>, ErrorCode)> = vec![
        (vec![], ErrorCode::Empty),
        (vec![0x7F, 1, 2], ErrorCode::UnknownTag),
        ([vec![TAG_FRAME], bad_frame].concat(), ErrorCode::BadFrame),
        ([vec![TAG_FRAME], vec![1, 2, 3]].concat(), ErrorCode::BadFrame),
        (
            [vec![TAG_CONTROL], b"{\"command\":\"fly\"}".to_vec()].concat(),
            ErrorCode::BadControl,
        ),
        (
            [vec![TAG_CONTROL], b"not json".to_vec()].concat(),
            ErrorCode::BadControl,
        ),
    ];
    for (body, code) in cases {
        write_message(&mut s, &body).unwrap();
        let ServerMessage::Error(e) = recv(&mut s) else {
            panic!("expected ERROR for {code:?}")
        };
        assert_eq!(e.code, code);
        assert!(!e.message.is_empty());
    }
    write_message(&mut s, &ClientMessage::Control(Control::Info).encode_body()).unwrap();
    assert!(matches!(recv(&mut s), ServerMessage::Info(_)));
    send_tick(&mut s, &TactileCanvas::zeros(0));
    assert!(matches!(recv(&mut s), ServerMessage::State(_)));
    svc.shutdown().unwrap();
}

#[test]
fn oversize_message_is_skipped_with_error() {
    let svc = start(None);
    let mut s = connect(&svc);
    assert!(matches!(recv(&mut s), ServerMessage::Info(_)));
    let body = vec![0x01; MAX_MESSAGE_LEN + 1];
    write_message(&mut s, &body).unwrap();
    let ServerMessage::Error(e) = recv(&mut s) else {
        panic!("expected ERROR")
    };
    assert_eq!(e.code, ErrorCode::Oversize);
    send_tick(&mut s, &TactileCanvas::zeros(0));
    assert!(matches!(recv(&mut s), ServerMessage::State(_)));
    svc.shutdown().unwrap();
}

#[test]
fn two_clients_see_the_same_broadcasts() {
    let svc = start(None);
    let mut a = connect(&svc);
    let mut b = connect(&svc);
    assert!(matches!(recv(&mut a), ServerMessage::Info(_)));
    assert!(matches!(recv(&mut b), ServerMessage::Info(_)));
    let deadline = Instant::now() + Duration::from_secs(5);
    while svc.runtime().subscriber_count() < 2 {
        assert!(Instant::now() < deadline, "second client never subscribed");
        std::thread::sleep(Duration::from_millis(5));
    }
    for t in 0..10 {
        send_tick(&mut a, &TactileCanvas::zeros(t));
    }
    let take = |s: &mut TcpStream| (0..10).map(|_| recv(s)).collect::<Vec<_>>();
    let (ma, mb) = (take(&mut a), take(&mut b));
    assert_eq!(ma, mb);
    assert!(ma.iter().all(|m| matches!(m, ServerMessage::State(_))));
    svc.shutdown().unwrap();
}

#[test]
fn websocket_client_round_trip() {
    let svc = start(None);
    let stream = TcpStream::connect(svc.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let url = format!("ws://{}/ws", svc.local_addr());
    let (mut ws, _) = tungstenite::client(url.as_str(), stream).unwrap();
    let next = |ws: &mut tungstenite::WebSocket<TcpStream>| loop {
        match ws.read().unwrap() {
            tungstenite::Message::Binary(b) => return ServerMessage::decode_body(&b).unwrap(),
            _ => continue,
        }
    };
    assert!(matches!(next(&mut ws), ServerMessage::Info(_)));
    for b in TactileCanvas::zeros(0).disassemble() {
        ws.send(tungstenite::Message::binary(frame_body(b))).unwrap();
    }
    assert!(matches!(next(&mut ws), ServerMessage::State(_)));
    ws.send(tungstenite::Message::binary(vec![0x55])).unwrap();
    let ServerMessage::Error(e) = next(&mut ws) else {
        panic!("expected ERROR")
    };
    assert_eq!(e.code, ErrorCode::UnknownTag);
    ws.close(None).unwrap();
    svc.shutdown().unwrap();
}

#[test]
fn zones_and_info_over_http() {
    let svc = start(None);
    let (head, body) = http_get(&svc, "/zones.json");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    let zones: ZoneGeometry = serde_json::from_slice(&body).unwrap();
    assert_eq!(zones, common::taxonomy().zone_geometry());
    assert_eq!(zones.checksum, ZoneGeometry::checksum_of(&zones.parts));
    assert_eq!((zones.canvas_rows, zones.canvas_cols), (64, 128));
    let (head, body) = http_get(&svc, "/info.json");
    assert!(head.starts_with("HTTP/1.1 200"));
    let info: InfoMessage = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.zones, zones);
    let (head, _) = http_get(&svc, "/missing.js");
    assert!(head.starts_with("HTTP/1.1 404"), "{head}");
    svc.shutdown().unwrap();
}

#[test]
fn static_ui_files_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>dog</html>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let svc = start(Some(dir.path().to_path_buf()));
    let (head, body) = http_get(&svc, "/");
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.to_ascii_lowercase().contains("content-type: text/html"));
    assert_eq!(body, b"<html>dog</html>");
    let (head, body) = http_get(&svc, "/app.js");
    assert!(head.to_ascii_lowercase().contains("javascript"));
    assert_eq!(body, b"console.log(1)");
    let (head, _) = http_get(&svc, "/../../etc/passwd");
    assert!(!head.starts_with("HTTP/1.1 200"), "{head}");
    svc.shutdown().unwrap();
}

#[test]
fn bind_failure_is_a_startup_error() {
    let svc = start(None);
    let models = common::fresh_models();
    let info = InfoMessage::new(&models.taxonomy, SegmenterConfig::default());
    let runtime = Runtime::start(
        Engine::new(models, SegmenterConfig::default()),
        RuntimeOptions::default(),
    )
    .unwrap();
    let err = Service::start(
        Arc::new(runtime),
        info,
        ServiceOptions {
            bind: svc.local_addr().to_string(),
            ..Default::default()
        },
    )
    .err()
    .expect("port is taken");
    assert!(matches!(err, PipelineError::Startup(_)), "{err}");
    svc.shutdown().unwrap();
}

#[test]
fn slow_subscriber_is_kicked() {
    let models = common::fresh_models();
    let runtime = Runtime::start(
        Engine::new(models, SegmenterConfig::default()),
        RuntimeOptions::default(),
    )
    .unwrap();
    let kicked = Arc::new(AtomicBool::new(false));
    let flag = kicked.clone();
    let sub = runtime.subscribe(4, move || flag.store(true, Ordering::SeqCst));
    let fast = runtime.subscribe(1024, || panic!("fast subscriber kicked"));
    for t in 0..50 {
        runtime.ingest().push_canvas(TactileCanvas::zeros(t));
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while !kicked.load(Ordering::SeqCst) {
        assert!(Instant::now() < deadline, "slow subscriber never kicked");
        std::thread::sleep(Duration::from_millis(5));
    }
    let summary = runtime.shutdown().unwrap();
    assert!(summary.stats.clients_disconnected >= 1);
    assert!(sub.messages.try_iter().count() <= 4);
    assert_eq!(fast.messages.try_iter().count(), 50);
}
