use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::frame::{GestureWindow, TactileCanvas, WINDOW_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// Pixels at or below this value count as silence.
    pub threshold: u8,
    /// Consecutive active frames needed to open an event.
    pub min_active: usize,
    /// Consecutive inactive frames that close an event.
    pub idle_gap: usize,
    /// Above-threshold mass a frame needs to count as active.
    pub min_mass: u32,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            threshold: 8,
            min_active: 3,
            idle_gap: 5,
            min_mass: 40,
        }
    }
}

impl SegmenterConfig {
    pub fn is_active(&self, mass: u32) -> bool {
        mass > 0 && mass >= self.min_mass
    }
}

/// Sum of pixel values strictly above `threshold`.
pub fn frame_mass(canvas: &TactileCanvas, threshold: u8) -> u32 {
    canvas
        .pixels()
        .iter()
        .filter(|&&p| p > threshold)
        .map(|&p| p as u32)
        .sum()
}

/// A closed touch event.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// First active frame.
    pub start_tick: u64,
    /// Last active frame.
    pub end_tick: u64,
    /// Tick of the frame that closed the event.
    pub closed_at: u64,
    pub window: GestureWindow,
}

/// Span frames plus bookkeeping for choosing the 20-frame window.
#[derive(Debug, Clone)]
struct Cluster {
    first_active: u64,
    last_active: u64,
    run: usize,
    qualified: bool,
    /// Inactive frames seen since `last_active`.
    trailing: Vec<(TactileCanvas, u32)>,
    /// Last (up to) 20 frames of the span.
    recent: VecDeque<(TactileCanvas, u32)>,
    recent_mass: u64,
    span_len: usize,
    best: Option<(u64, Vec<TactileCanvas>)>,
}

impl Cluster {
    fn open(frame: TactileCanvas, mass: u32, min_active: usize) -> Self {
        let tick = frame.tick;
        let mut c = Self {
            first_active: tick,
            last_active: tick,
            run: 0,
            qualified: false,
            trailing: Vec::new(),
            recent: VecDeque::with_capacity(WINDOW_LEN),
            recent_mass: 0,
            span_len: 0,
            best: None,
        };
        c.push_active(frame, mass, min_active);
        c
    }

    fn push_span(&mut self, frame: TactileCanvas, mass: u32) {
        if self.recent.len() == WINDOW_LEN {
            let (_, m) = self.recent.pop_front().expect("full");
            self.recent_mass -= m as u64;
        }
        self.recent_mass += mass as u64;
        self.recent.push_back((frame, mass));
        self.span_len += 1;
        if self.recent.len() == WINDOW_LEN && self.best.as_ref().is_none_or(|(m, _)| self.recent_mass > *m) {
            self.best = Some((self.recent_mass, self.recent.iter().map(|(f, _)| f.clone()).collect()));
        }
    }

    fn push_active(&mut self, frame: TactileCanvas, mass: u32, min_active: usize) {
        for (f, m) in std::mem::take(&mut self.trailing) {
            self.push_span(f, m);
        }
        self.last_active = frame.tick;
        self.run += 1;
        if self.run >= min_active {
            self.qualified = true;
        }
        self.push_span(frame, mass);
    }

    fn window(self) -> GestureWindow {
        let frames = match self.best {
            Some((_, frames)) => frames,
            None => {
                let len = self.recent.len();
                let left = (WINDOW_LEN - len) / 2;
                let start = self.first_active.wrapping_sub(left as u64);
                let mut frames: Vec<TactileCanvas> = (0..left as u64)
                    .map(|i| TactileCanvas::zeros(start.wrapping_add(i)))
                    .collect();
                frames.extend(self.recent.into_iter().map(|(f, _)| f));
                while frames.len() < WINDOW_LEN {
                    frames.push(TactileCanvas::zeros(start.wrapping_add(frames.len() as u64)));
                }
                frames
            }
        };
        GestureWindow::new(frames, None).expect("span frames are consecutive")
    }
}

/// Online touch-event segmenter over a tick-ordered canvas stream.
///
/// Missing ticks count as silent frames; frames that do not advance the
/// tick are ignored.
#[derive(Debug, Clone)]
pub struct Segmenter {
    config: SegmenterConfig,
    cluster: Option<Cluster>,
    last_tick: Option<u64>,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Self {
        Self {
            config,
            cluster: None,
            last_tick: None,
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.last_tick
    }

    /// True while a touch is being tracked.
    pub fn is_open(&self) -> bool {
        self.cluster.is_some()
    }

    /// Feeds one canvas; returns the events it closes (at most one unless
    /// the tick jumped).
    pub fn push(&mut self, canvas: TactileCanvas) -> Vec<Segment> {
        let mut out = Vec::new();
        if let Some(last) = self.last_tick {
            if canvas.tick <= last {
                log::debug!("ignoring frame for tick {} after {last}", canvas.tick);
                return out;
            }
            // Missing ticks are silence; past idle_gap + 1 of them nothing changes.
            let gap = (canvas.tick - last - 1).min(self.config.idle_gap as u64 + 1);
            for t in (last + 1)..=(last + gap) {
                out.extend(self.step(TactileCanvas::zeros(t)));
            }
        }
        self.last_tick = Some(canvas.tick);
        out.extend(self.step(canvas));
        out
    }

    fn step(&mut self, canvas: TactileCanvas) -> Option<Segment> {
        let mass = frame_mass(&canvas, self.config.threshold);
        let active = self.config.is_active(mass);
        let tick = canvas.tick;
        match (&mut self.cluster, active) {
            (None, false) => None,
            (None, true) => {
                self.cluster = Some(Cluster::open(canvas, mass, self.config.min_active));
                None
            }
            (Some(c), true) => {
                if !c.trailing.is_empty() {
                    c.run = 0;
                }
                c.push_active(canvas, mass, self.config.min_active);
                None
            }
            (Some(c), false) => {
                c.trailing.push((canvas, mass));
                if c.trailing.len() >= self.config.idle_gap.max(1) {
                    self.close(tick)
                } else {
                    None
                }
            }
        }
    }

    fn close(&mut self, closed_at: u64) -> Option<Segment> {
        let c = self.cluster.take()?;
        if !c.qualified {
            return None;
        }
        Some(Segment {
            start_tick: c.first_active,
            end_tick: c.last_active,
            closed_at,
            window: c.window(),
        })
    }

    /// Closes a pending event at the end of the stream.
    pub fn finish(&mut self) -> Option<Segment> {
        let at = self.last_tick.unwrap_or(0);
        self.close(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(tick: u64, v: u8) -> TactileCanvas {
        let mut c = TactileCanvas::zeros(tick);
        for i in 0..4 {
            c.set(0, i, v);
        }
        c
    }

    fn run(values: &[u8]) -> Vec<(u64, u64)> {
        let mut s = Segmenter::new(SegmenterConfig::default());
        let mut out: Vec<_> = values
            .iter()
            .enumerate()
            .flat_map(|(t, &v)| s.push(frame(t as u64, v)))
            .collect();
        out.extend(s.finish());
        out.into_iter().map(|e| (e.start_tick, e.end_tick)).collect()
    }

    #[test]
    fn silence_has_no_events() {
        assert!(run(&[0; 50]).is_empty());
        // below min_mass: 4 px * 9 = 36
        assert!(run(&[9; 50]).is_empty());
    }

    #[test]
    fn short_bursts_do_not_open() {
        assert!(run(&[0, 50, 50, 0, 0, 0, 0, 0, 0]).is_empty());
    }

    #[test]
    fn one_and_two_events() {
        let mut v = vec![0u8; 10];
        v.extend([50; 4]);
        v.extend([0; 8]);
        assert_eq!(run(&v), vec![(10, 13)]);
        v.extend([60; 3]);
        v.extend([0; 2]);
        v.extend([60; 1]);
        assert_eq!(run(&v), vec![(10, 13), (22, 27)]);
    }

    #[test]
    fn short_span_is_padded_symmetrically() {
        let mut s = Segmenter::new(SegmenterConfig::default());
        let mut events = Vec::new();
        for t in 0..30u64 {
            let v = if (10..16).contains(&t) { 100 } else { 0 };
            events.extend(s.push(frame(t, v)));
        }
        let e = &events[0];
        assert_eq!(e.closed_at, 20);
        assert_eq!(e.window.start_tick(), 3);
        let active: Vec<bool> = e.window.frames().iter().map(|f| !f.is_silent()).collect();
        assert_eq!(active.iter().position(|&a| a), Some(7));
        assert_eq!(active.iter().filter(|&&a| a).count(), 6);
    }

    #[test]
    fn long_span_keeps_heaviest_window() {
        let mut s = Segmenter::new(SegmenterConfig::default());
        let mut events = Vec::new();
        for t in 0..60u64 {
            let v = match t {
                5..=44 => 50,
                _ => 0,
            };
            let v = if (30..35).contains(&t) { 200 } else { v };
            events.extend(s.push(frame(t, v)));
        }
        let w = &events[0].window;
        // earliest 20-frame window containing 30..35 entirely
        assert_eq!(w.start_tick(), 15);
    }

    #[test]
    fn tick_gaps_count_as_silence() {
        let mut s = Segmenter::new(SegmenterConfig::default());
        for t in 0..4 {
            assert!(s.push(frame(t, 80)).is_empty());
        }
        let e = s.push(frame(100, 0));
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].start_tick, e[0].end_tick, e[0].closed_at), (0, 3, 8));
        assert!(s.push(frame(50, 80)).is_empty());
    }
}
