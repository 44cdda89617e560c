use std::time::{Duration, Instant};

use super::engine::{Engine, Record};
use super::log::encode_record;
use super::PipelineError;
use crate::frame::TICK_HZ;

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    /// Everything the fresh engine produced, frames included.
    pub records: Vec<Record>,
    pub frames: usize,
    pub event_latencies: Vec<Duration>,
    pub elapsed: Duration,
}

impl ReplayOutcome {
    pub fn max_event_latency(&self) -> Duration {
        self.event_latencies.iter().copied().max().unwrap_or_default()
    }
}

/// Encoded gesture, action and rejection records, in order.
pub fn decision_bytes(records: &[Record]) -> Vec<Vec<u8>> {
    records.iter().filter(|r| !r.is_frame()).map(encode_record).collect()
}

/// Describes the first difference between two sessions' decisions.
pub fn diff_decisions(expected: &[Record], actual: &[Record]) -> Option<String> {
    let (a, b) = (decision_bytes(expected), decision_bytes(actual));
    if let Some(i) = a.iter().zip(&b).position(|(x, y)| x != y) {
        return Some(format!(
            "decision {i} differs: {} vs {}",
            String::from_utf8_lossy(&a[i][1..]),
            String::from_utf8_lossy(&b[i][1..])
        ));
    }
    (a.len() != b.len()).then(|| format!("{} decisions vs {}", a.len(), b.len()))
}

/// Re-feeds a session's frames through `engine`, paced at the original
/// tick spacing divided by `speed`. An infinite speed disables pacing.
pub fn replay(
    log: &[Record],
    engine: &mut Engine,
    speed: f64,
    mut on_record: impl FnMut(&Record),
) -> Result<ReplayOutcome, PipelineError> {
    if speed.is_nan() || speed <= 0.0 {
        return Err(PipelineError::Startup(format!(
            "replay speed must be positive, got {speed}"
        )));
    }
    let tick_period = Duration::from_secs(1) / TICK_HZ;
    let started = Instant::now();
    let mut first_tick = None;
    let mut records = Vec::new();
    let mut event_latencies = Vec::new();
    let mut frames = 0;
    for r in log {
        let Record::Frame(canvas) = r else { continue };
        frames += 1;
        let first = *first_tick.get_or_insert(canvas.tick);
        if speed.is_finite() {
            let due = tick_period.mul_f64((canvas.tick - first) as f64 / speed);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let step = engine.process(canvas.clone())?;
        event_latencies.extend(step.event_latency);
        for r in step.records {
            on_record(&r);
            records.push(r);
        }
    }
    for r in engine.finish()? {
        on_record(&r);
        records.push(r);
    }
    Ok(ReplayOutcome {
        records,
        frames,
        event_latencies,
        elapsed: started.elapsed(),
    })
}
