//! Talks to the pipeline service over the raw TCP protocol: reads INFO,
//! streams a touch session as board frames and prints what comes back.
//!
//! cargo run --example service_client -- [host:port]
//!
//! With no address an in-process server with untrained models is started.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use tactile_dog::actions::ActionTable;
use tactile_dog::classifier::{Classifier, ClassifierConfig};
use tactile_dog::pipeline::protocol::{
    read_message, write_message, ClientMessage, Incoming, InfoMessage, ServerMessage,
};
use tactile_dog::pipeline::{
    Engine, Models, Runtime, RuntimeOptions, SegmenterConfig, Service, ServiceOptions, TouchSession,
};
use tactile_dog::sim::{NoiseModel, Synthesizer};
use tactile_dog::taxonomy::Taxonomy;
use tactile_dog::translator::{Translator, TranslatorConfig};

fn local_service(tax: &Arc<Taxonomy>) -> Result<Service, Box<dyn std::error::Error>> {
    let models = Models::new(
        tax.clone(),
        Classifier::build(ClassifierConfig::desk(), tax)?,
        Translator::build(TranslatorConfig::default(), tax)?,
        ActionTable::load_default(tax.clone()),
    )?;
    let runtime = Runtime::start(
        Engine::new(models, SegmenterConfig::default()),
        RuntimeOptions::default(),
    )?;
    Ok(Service::start(
        Arc::new(runtime),
        InfoMessage::new(tax, SegmenterConfig::default()),
        ServiceOptions {
            bind: "127.0.0.1:0".into(),
            ..Default::default()
        },
    )?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tax = Arc::new(Taxonomy::load_default());
    let local = match std::env::args().nth(1) {
        Some(_) => None,
        None => Some(local_service(&tax)?),
    };
    let addr = match &local {
        Some(s) => s.local_addr().to_string(),
        None => std::env::args().nth(1).expect("checked"),
    };

    let mut http = TcpStream::connect(&addr)?;
    write!(http, "GET /zones.json HTTP/1.1\r\nHost: {addr}\r\n\r\n")?;
    let mut reply = String::new();
    http.read_to_string(&mut reply)?;
    println!("GET /zones.json: {}", reply.lines().next().unwrap_or(""));

    let mut conn = TcpStream::connect(&addr)?;
    conn.set_read_timeout(Some(Duration::from_secs(3)))?;
    let reader = {
        let mut conn = conn.try_clone()?;
        std::thread::spawn(move || {
            let mut states = 0;
            while let Ok(Incoming::Body(body)) = read_message(&mut conn, 1 << 20) {
                match ServerMessage::decode_body(&body) {
                    Ok(ServerMessage::Info(i)) => {
                        println!(
                            "INFO protocol {}, {} gestures, {} zones",
                            i.protocol_version,
                            i.gestures.len(),
                            i.zones.parts.len()
                        )
                    }
                    Ok(ServerMessage::State(_)) => states += 1,
                    Ok(ServerMessage::Gesture(g)) => println!("GESTURE {} at tick {}", g.class, g.tick),
                    Ok(ServerMessage::Action(a)) => println!("ACTION {} at tick {}", a.action, a.tick),
                    Ok(ServerMessage::Rejection(r)) => println!("REJECTION {} ({})", r.action, r.reason.code()),
                    Ok(ServerMessage::Error(e)) => println!("ERROR {:?}: {}", e.code, e.message),
                    Err(e) => println!("undecodable message: {e}"),
                }
            }
            println!("{states} STATE updates");
        })
    };

    let synth = Synthesizer::with_defaults(tax.clone());
    let classes = ["pat_head", "rub_neck"].map(|t| tax.class_by_token(t).unwrap());
    let session = TouchSession::scripted(&synth, &classes, 10, 5)?;
    let base = 1_000_000;
    for canvas in session.canvases(&NoiseModel::standard(5)) {
        let mut canvas = canvas;
        canvas.tick += base;
        for board in canvas.disassemble() {
            write_message(&mut conn, &ClientMessage::Frame(board).encode_body())?;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    write_message(&mut conn, &[0x7F])?;
    std::thread::sleep(Duration::from_millis(300));
    conn.shutdown(std::net::Shutdown::Write)?;
    if let Some(s) = local {
        let summary = s.shutdown()?;
        println!("server processed {} canvases", summary.stats.canvases_processed);
    }
    reader.join().expect("reader thread");
    Ok(())
}
