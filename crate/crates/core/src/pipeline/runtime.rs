//! Threaded live loop: ingest (on the producers' threads), inference and
//! broadcast, joined by bounded drop-oldest queues.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, Receiver, Sender, TrySendError};
use serde::Serialize;

use super::engine::{Engine, Record};
use super::log::SessionLogWriter;
use super::protocol::{Control, ServerMessage};
use super::queue::{drop_oldest, DropOldest};
use super::PipelineError;
use crate::frame::{assemble_canvas, decode_frame, BoardFrame, FrameError, TactileCanvas, BOARD_COUNT, TILE};

#[derive(Debug, Clone)]
pub struct RuntimeOptions {
    /// Canvases waiting for inference.
    pub frame_queue: usize,
    /// Messages waiting for fan-out.
    pub broadcast_queue: usize,
    /// Incomplete ticks kept while their boards trickle in.
    pub pending_ticks: usize,
    pub log_path: Option<PathBuf>,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            frame_queue: 64,
            broadcast_queue: 1024,
            pending_ticks: 4,
            log_path: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct Stats {
    pub boards_received: AtomicU64,
    pub bad_frames: AtomicU64,
    pub stale_boards: AtomicU64,
    pub incomplete_ticks: AtomicU64,
    pub canvases_queued: AtomicU64,
    pub canvases_dropped: AtomicU64,
    pub canvases_processed: AtomicU64,
    pub events: AtomicU64,
    pub max_event_latency_us: AtomicU64,
    pub broadcasts_dropped: AtomicU64,
    pub clients_disconnected: AtomicU64,
    pub last_client_frame_ms: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub boards_received: u64,
    pub bad_frames: u64,
    pub stale_boards: u64,
    pub incomplete_ticks: u64,
    pub canvases_queued: u64,
    pub canvases_dropped: u64,
    pub canvases_processed: u64,
    pub events: u64,
    pub max_event_latency_us: u64,
    pub broadcasts_dropped: u64,
    pub clients_disconnected: u64,
}

impl Stats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            boards_received: g(&self.boards_received),
            bad_frames: g(&self.bad_frames),
            stale_boards: g(&self.stale_boards),
            incomplete_ticks: g(&self.incomplete_ticks),
            canvases_queued: g(&self.canvases_queued),
            canvases_dropped: g(&self.canvases_dropped),
            canvases_processed: g(&self.canvases_processed),
            events: g(&self.events),
            max_event_latency_us: g(&self.max_event_latency_us),
            broadcasts_dropped: g(&self.broadcasts_dropped),
            clients_disconnected: g(&self.clients_disconnected),
        }
    }
}

/// Groups board frames by tick and emits a canvas once all 8 arrive.
#[derive(Debug)]
struct Assembler {
    pending: BTreeMap<u64, Vec<BoardFrame>>,
    emitted: Option<u64>,
    limit: usize,
}

impl Assembler {
    fn push(&mut self, frame: BoardFrame, stats: &Stats) -> Result<Option<TactileCanvas>, FrameError> {
        if frame.rows() as usize != TILE || frame.cols() as usize != TILE {
            return Err(FrameError::TileShape {
                board: frame.board_id(),
                rows: frame.rows(),
                cols: frame.cols(),
            });
        }
        let tick = frame.tick();
        if self.emitted.is_some_and(|e| tick <= e) {
            stats.stale_boards.fetch_add(1, Ordering::Relaxed);
            log::debug!("stale board {} for tick {tick}", frame.board_id());
            return Ok(None);
        }
        let slot = self.pending.entry(tick).or_default();
        slot.retain(|f| f.board_id() != frame.board_id());
        slot.push(frame);
        if slot.len() == BOARD_COUNT {
            let boards = self.pending.remove(&tick).expect("present");
            let older: Vec<u64> = self.pending.range(..tick).map(|(&t, _)| t).collect();
            for t in older {
                self.pending.remove(&t);
                stats.incomplete_ticks.fetch_add(1, Ordering::Relaxed);
                log::warn!("tick {t} never completed");
            }
            self.emitted = Some(tick);
            return assemble_canvas(&boards).map(Some);
        }
        while self.pending.len() > self.limit {
            let (t, _) = self.pending.pop_first().expect("non-empty");
            stats.incomplete_ticks.fetch_add(1, Ordering::Relaxed);
            log::warn!("tick {t} evicted before completing");
        }
        Ok(None)
    }
}

/// Entry point for frames. Cheap to clone; never blocks on inference.
#[derive(Debug, Clone)]
pub struct Ingest {
    assembler: Arc<Mutex<Assembler>>,
    queue: DropOldest<TactileCanvas>,
    stats: Arc<Stats>,
    started: Instant,
}

impl Ingest {
    pub fn push_board(&self, frame: BoardFrame) -> Result<(), FrameError> {
        self.stats.boards_received.fetch_add(1, Ordering::Relaxed);
        // Enqueue under the lock so concurrent producers keep tick order.
        let mut assembler = self.assembler.lock().expect("assembler lock");
        match assembler.push(frame, &self.stats) {
            Ok(Some(c)) => {
                self.enqueue(c);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(e) => {
                self.stats.bad_frames.fetch_add(1, Ordering::Relaxed);
                log::warn!("dropping board frame: {e}");
                Err(e)
            }
        }
    }

    /// Decodes and pushes a client frame, recording client activity.
    pub fn push_encoded(&self, bytes: &[u8]) -> Result<(), FrameError> {
        self.mark_client();
        match decode_frame(bytes) {
            Ok(f) => self.push_board(f),
            Err(e) => {
                self.stats.bad_frames.fetch_add(1, Ordering::Relaxed);
                log::warn!("dropping undecodable frame: {e}");
                Err(e)
            }
        }
    }

    pub fn mark_client(&self) {
        let ms = self.started.elapsed().as_millis() as u64 + 1;
        self.stats.last_client_frame_ms.store(ms, Ordering::Relaxed);
    }

    /// True if a client sent a frame within `window`.
    pub fn client_active(&self, window: Duration) -> bool {
        match self.stats.last_client_frame_ms.load(Ordering::Relaxed) {
            0 => false,
            ms => self.started.elapsed().as_millis() as u64 + 1 - ms <= window.as_millis() as u64,
        }
    }

    /// Pushes an already assembled canvas, bypassing board assembly.
    pub fn push_canvas(&self, canvas: TactileCanvas) {
        let mut a = self.assembler.lock().expect("assembler lock");
        if a.emitted.is_some_and(|e| canvas.tick <= e) {
            self.stats.stale_boards.fetch_add(1, Ordering::Relaxed);
            return;
        }
        a.emitted = Some(canvas.tick);
        let older: Vec<u64> = a.pending.range(..=canvas.tick).map(|(&t, _)| t).collect();
        for t in older {
            a.pending.remove(&t);
        }
        self.enqueue(canvas);
    }

    /// Last tick handed to inference.
    pub fn last_tick(&self) -> Option<u64> {
        self.assembler.lock().expect("assembler lock").emitted
    }

    fn enqueue(&self, canvas: TactileCanvas) {
        self.stats.canvases_queued.fetch_add(1, Ordering::Relaxed);
        let evicted = self.queue.push(canvas);
        if evicted > 0 {
            self.stats.canvases_dropped.fetch_add(evicted, Ordering::Relaxed);
            log::warn!("inference behind; dropped {evicted} frame(s)");
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queue_capacity(&self) -> usize {
        self.queue.capacity()
    }
}

type Kick = Box<dyn Fn() + Send + Sync>;

struct Subscriber {
    id: u64,
    tx: Sender<Arc<ServerMessage>>,
    kick: Kick,
}

#[derive(Clone, Default)]
struct Hub {
    subscribers: Arc<Mutex<Vec<Subscriber>>>,
    next_id: Arc<AtomicU64>,
}

/// A client's view of the broadcast stream.
#[derive(Debug)]
pub struct Subscription {
    pub id: u64,
    pub messages: Receiver<Arc<ServerMessage>>,
    /// Lets the connection queue its own replies in order with broadcasts.
    pub replies: Sender<Arc<ServerMessage>>,
}

enum Command {
    Control(Control),
    Shutdown,
}

/// Totals reported when the runtime stops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeSummary {
    pub stats: StatsSnapshot,
    pub records_logged: u64,
    pub last_tick: Option<u64>,
}

type InferenceHandle = JoinHandle<Result<(u64, Option<u64>), PipelineError>>;

/// The running loop. Dropping it without [`Runtime::shutdown`] detaches
/// the worker threads.
pub struct Runtime {
    ingest: Ingest,
    commands: Sender<Command>,
    hub: Hub,
    stats: Arc<Stats>,
    workers: Mutex<Option<(InferenceHandle, JoinHandle<()>)>>,
}

impl Runtime {
    pub fn start(engine: Engine, options: RuntimeOptions) -> Result<Self, PipelineError> {
        let log = match &options.log_path {
            Some(p) => Some(SessionLogWriter::new(BufWriter::new(File::create(p).map_err(
                |e| PipelineError::Startup(format!("cannot create session log {}: {e}", p.display())),
            )?))?),
            None => None,
        };
        let stats = Arc::new(Stats::default());
        let (frames_tx, frames_rx) = drop_oldest(options.frame_queue);
        let (out_tx, out_rx) = drop_oldest(options.broadcast_queue);
        let (cmd_tx, cmd_rx) = bounded(64);
        let hub = Hub::default();

        let ingest = Ingest {
            assembler: Arc::new(Mutex::new(Assembler {
                pending: BTreeMap::new(),
                emitted: None,
                limit: options.pending_ticks.max(1),
            })),
            queue: frames_tx,
            stats: stats.clone(),
            started: Instant::now(),
        };

        let inference = {
            let stats = stats.clone();
            std::thread::Builder::new()
                .name("inference".into())
                .spawn(move || inference_loop(engine, frames_rx, cmd_rx, out_tx, log, &stats))?
        };
        let broadcast = {
            let hub = hub.clone();
            let stats = stats.clone();
            std::thread::Builder::new()
                .name("broadcast".into())
                .spawn(move || broadcast_loop(out_rx, &hub, &stats))?
        };
        Ok(Self {
            ingest,
            commands: cmd_tx,
            hub,
            stats,
            workers: Mutex::new(Some((inference, broadcast))),
        })
    }

    pub fn ingest(&self) -> &Ingest {
        &self.ingest
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn control(&self, control: Control) {
        let _ = self.commands.send(Command::Control(control));
    }

    /// Registers a client. `kick` runs if the client falls `capacity`
    /// messages behind; it is then unsubscribed.
    pub fn subscribe(&self, capacity: usize, kick: impl Fn() + Send + Sync + 'static) -> Subscription {
        let (tx, rx) = bounded(capacity.max(1));
        let id = self.hub.next_id.fetch_add(1, Ordering::Relaxed);
        self.hub.subscribers.lock().expect("hub lock").push(Subscriber {
            id,
            tx: tx.clone(),
            kick: Box::new(kick),
        });
        Subscription {
            id,
            messages: rx,
            replies: tx,
        }
    }

    pub fn unsubscribe(&self, id: u64) {
        self.hub.subscribers.lock().expect("hub lock").retain(|s| s.id != id);
    }

    pub fn subscriber_count(&self) -> usize {
        self.hub.subscribers.lock().expect("hub lock").len()
    }

    /// Processes what is queued, closes any open touch, finishes the log
    /// and joins the workers. Fails if called twice.
    pub fn shutdown(&self) -> Result<RuntimeSummary, PipelineError> {
        let (inference, broadcast) = self
            .workers
            .lock()
            .expect("workers lock")
            .take()
            .ok_or_else(|| PipelineError::Startup("runtime already stopped".into()))?;
        let _ = self.commands.send(Command::Shutdown);
        let (records_logged, last_tick) = inference
            .join()
            .map_err(|_| PipelineError::Startup("inference thread panicked".into()))??;
        let _ = broadcast.join();
        self.hub.subscribers.lock().expect("hub lock").clear();
        Ok(RuntimeSummary {
            stats: self.stats.snapshot(),
            records_logged,
            last_tick,
        })
    }
}

fn to_message(r: &Record) -> Option<ServerMessage> {
    match r {
        Record::Frame(_) => None,
        Record::Gesture(g) => Some(ServerMessage::Gesture(g.clone())),
        Record::Action(a) => Some(ServerMessage::Action(a.clone())),
        Record::Rejection(r) => Some(ServerMessage::Rejection(r.clone())),
    }
}

fn inference_loop(
    mut engine: Engine,
    frames: Receiver<TactileCanvas>,
    commands: Receiver<Command>,
    out: DropOldest<Arc<ServerMessage>>,
    mut log: Option<SessionLogWriter<BufWriter<File>>>,
    stats: &Stats,
) -> Result<(u64, Option<u64>), PipelineError> {
    let mut last_tick = None;
    let publish = |m: ServerMessage| {
        if out.push(Arc::new(m)) > 0 {
            stats.broadcasts_dropped.fetch_add(1, Ordering::Relaxed);
        }
    };
    let mut handle = |canvas: TactileCanvas,
                      engine: &mut Engine,
                      log: &mut Option<SessionLogWriter<BufWriter<File>>>|
     -> Result<(), PipelineError> {
        let step = engine.process(canvas)?;
        if step.records.is_empty() {
            return Ok(());
        }
        stats.canvases_processed.fetch_add(1, Ordering::Relaxed);
        for d in &step.event_latency {
            stats.events.fetch_add(1, Ordering::Relaxed);
            stats
                .max_event_latency_us
                .fetch_max(d.as_micros() as u64, Ordering::Relaxed);
        }
        if let Some(l) = log {
            l.append_all(&step.records)?;
        }
        last_tick = Some(step.state.tick);
        step.records.iter().filter_map(to_message).for_each(&publish);
        publish(ServerMessage::State(step.state));
        Ok(())
    };
    loop {
        select! {
            recv(frames) -> c => match c {
                Ok(c) => handle(c, &mut engine, &mut log)?,
                Err(_) => break,
            },
            recv(commands) -> cmd => match cmd {
                Ok(Command::Control(Control::Reset)) => {
                    engine.reset();
                    publish(ServerMessage::State(engine.snapshot()));
                }
                Ok(Command::Control(Control::Info)) => {}
                Ok(Command::Shutdown) | Err(_) => {
                    for c in frames.try_iter() {
                        handle(c, &mut engine, &mut log)?;
                    }
                    break;
                }
            },
        }
    }
    let tail = engine.finish()?;
    tail.iter().filter_map(to_message).for_each(&publish);
    let logged = match log {
        Some(mut l) => {
            l.append_all(&tail)?;
            let n = l.count();
            l.finish()?;
            n
        }
        None => 0,
    };
    Ok((logged, last_tick))
}

fn broadcast_loop(messages: Receiver<Arc<ServerMessage>>, hub: &Hub, stats: &Stats) {
    for m in messages {
        let mut subs = hub.subscribers.lock().expect("hub lock");
        subs.retain(|s| match s.tx.try_send(m.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                log::warn!("client {} fell behind; disconnecting", s.id);
                stats.clients_disconnected.fetch_add(1, Ordering::Relaxed);
                (s.kick)();
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
    }
}
