//! Pressure frames: per-board tiles, the assembled canvas, fixed-length
//! gesture windows, and their binary encodings.

mod codec;
pub mod container;
pub mod layout;

use thiserror::Error;

use crate::taxonomy::ClassId;

pub use codec::{decode_frame, encode_frame, encoded_len, FRAME_HEADER_LEN, FRAME_MAGIC, FRAME_VERSION};

pub const BOARD_COUNT: usize = 8;
pub const TILE: usize = 32;
pub const CANVAS_ROWS: usize = 2 * TILE;
pub const CANVAS_COLS: usize = 4 * TILE;
pub const CANVAS_PIXELS: usize = CANVAS_ROWS * CANVAS_COLS;
pub const WINDOW_LEN: usize = 20;
/// Frame rate of the sensor bus.
pub const TICK_HZ: u32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("force {force} kg outside the domain (range {range} kg)")]
    Domain { force: f64, range: f64 },
    #[error("board id {0} out of range")]
    BoardId(u8),
    #[error("{rows}x{cols} frame needs {expected} samples, got {actual}")]
    SampleCount {
        rows: u16,
        cols: u16,
        expected: usize,
        actual: usize,
    },
    #[error("board {board} frame is {rows}x{cols}, tiles are 32x32")]
    TileShape { board: u8, rows: u16, cols: u16 },
    #[error("missing boards {0:?}")]
    MissingBoards(Vec<u8>),
    #[error("board {0} appears twice")]
    DuplicateBoard(u8),
    #[error("boards {boards:?} are not at tick {tick}")]
    Sync { tick: u64, boards: Vec<u8> },
    #[error("bad frame format: {0}")]
    Format(&'static str),
    #[error("frame length {actual}, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("window needs {expected} frames, got {actual}")]
    WindowLength { expected: usize, actual: usize },
    #[error("window ticks not consecutive at frame {0}")]
    WindowTicks(usize),
    #[error("canvas needs {CANVAS_PIXELS} pixels, got {0}")]
    CanvasSize(usize),
}

/// Linear map of force onto 0..=255, clamped at full scale.
pub fn quantize_pressure(force_kg: f64, range_kg: f64) -> Result<u8, FrameError> {
    if force_kg.is_nan() || force_kg < 0.0 || range_kg.is_nan() || range_kg <= 0.0 {
        return Err(FrameError::Domain {
            force: force_kg,
            range: range_kg,
        });
    }
    Ok((force_kg / range_kg * 255.0).round().min(255.0) as u8)
}

/// One reading board's samples at one tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardFrame {
    board_id: u8,
    rows: u16,
    cols: u16,
    tick: u64,
    samples: Vec<u8>,
}

impl BoardFrame {
    pub fn new(board_id: u8, rows: u16, cols: u16, tick: u64, samples: Vec<u8>) -> Result<Self, FrameError> {
        if board_id as usize >= BOARD_COUNT {
            return Err(FrameError::BoardId(board_id));
        }
        let expected = rows as usize * cols as usize;
        if samples.len() != expected {
            return Err(FrameError::SampleCount {
                rows,
                cols,
                expected,
                actual: samples.len(),
            });
        }
        Ok(Self {
            board_id,
            rows,
            cols,
            tick,
            samples,
        })
    }

    /// A 32 x 32 tile frame.
    pub fn tile(board_id: u8, tick: u64, samples: Vec<u8>) -> Result<Self, FrameError> {
        Self::new(board_id, TILE as u16, TILE as u16, tick, samples)
    }

    pub fn board_id(&self) -> u8 {
        self.board_id
    }

    pub fn rows(&self) -> u16 {
        self.rows
    }

    pub fn cols(&self) -> u16 {
        self.cols
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }
}

/// The 64 x 128 synchronized pressure image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TactileCanvas {
    pub tick: u64,
    pixels: Vec<u8>,
}

impl TactileCanvas {
    pub fn zeros(tick: u64) -> Self {
        Self {
            tick,
            pixels: vec![0; CANVAS_PIXELS],
        }
    }

    pub fn from_pixels(tick: u64, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if pixels.len() != CANVAS_PIXELS {
            return Err(FrameError::CanvasSize(pixels.len()));
        }
        Ok(Self { tick, pixels })
    }

    /// Row-major pixels.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * CANVAS_COLS + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * CANVAS_COLS + col] = v;
    }

    pub fn is_silent(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    /// Splits back into the 8 board tiles (inverse of [`assemble_canvas`]).
    pub fn disassemble(&self) -> Vec<BoardFrame> {
        (0..BOARD_COUNT as u8)
            .map(|b| {
                let (r0, c0) = layout::tile_origin(b);
                let mut samples = Vec::with_capacity(TILE * TILE);
                for r in 0..TILE {
                    let start = (r0 + r) * CANVAS_COLS + c0;
                    samples.extend_from_slice(&self.pixels[start..start + TILE]);
                }
                BoardFrame::tile(b, self.tick, samples).expect("tile dimensions")
            })
            .collect()
    }
}

/// Tiles 8 synchronized board frames into a canvas.
///
/// Samples at padding positions of boards 6 and 7 are dropped, so those
/// canvas pixels are always 0.
pub fn assemble_canvas(boards: &[BoardFrame]) -> Result<TactileCanvas, FrameError> {
    let mut slots: [Option<&BoardFrame>; BOARD_COUNT] = [None; BOARD_COUNT];
    for f in boards {
        let slot = &mut slots[f.board_id as usize];
        if slot.is_some() {
            return Err(FrameError::DuplicateBoard(f.board_id));
        }
        *slot = Some(f);
    }
    let missing: Vec<u8> = (0..BOARD_COUNT as u8)
        .filter(|&b| slots[b as usize].is_none())
        .collect();
    if !missing.is_empty() {
        return Err(FrameError::MissingBoards(missing));
    }
    let frames: Vec<&BoardFrame> = slots.iter().map(|s| s.expect("checked")).collect();
    if let Some(f) = frames
        .iter()
        .find(|f| f.rows as usize != TILE || f.cols as usize != TILE)
    {
        return Err(FrameError::TileShape {
            board: f.board_id,
            rows: f.rows,
            cols: f.cols,
        });
    }
    let tick = modal_tick(frames.iter().map(|f| f.tick));
    let off: Vec<u8> = frames.iter().filter(|f| f.tick != tick).map(|f| f.board_id).collect();
    if !off.is_empty() {
        return Err(FrameError::Sync { tick, boards: off });
    }

    let mask = layout::sensor_mask();
    let mut canvas = TactileCanvas::zeros(tick);
    for f in frames {
        let (r0, c0) = layout::tile_origin(f.board_id);
        let base = f.board_id as usize * TILE * TILE;
        for r in 0..TILE {
            for c in 0..TILE {
                let i = r * TILE + c;
                if mask[base + i] {
                    canvas.pixels[(r0 + r) * CANVAS_COLS + c0 + c] = f.samples[i];
                }
            }
        }
    }
    Ok(canvas)
}

/// Most frequent tick; the lowest wins a tie.
fn modal_tick(ticks: impl Iterator<Item = u64>) -> u64 {
    let mut ticks: Vec<u64> = ticks.collect();
    ticks.sort_unstable();
    let (mut best, mut best_n) = (ticks[0], 0);
    let mut i = 0;
    while i < ticks.len() {
        let j = ticks[i..].iter().take_while(|&&t| t == ticks[i]).count();
        if j > best_n {
            best = ticks[i];
            best_n = j;
        }
        i += j;
    }
    best
}

/// Twenty consecutive canvases, optionally labeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GestureWindow {
    frames: Vec<TactileCanvas>,
    pub label: Option<ClassId>,
}

impl GestureWindow {
    pub fn new(frames: Vec<TactileCanvas>, label: Option<ClassId>) -> Result<Self, FrameError> {
        if frames.len() != WINDOW_LEN {
            return Err(FrameError::WindowLength {
                expected: WINDOW_LEN,
                actual: frames.len(),
            });
        }
        if let Some(i) = (1..frames.len()).find(|&i| frames[i].tick != frames[i - 1].tick.wrapping_add(1)) {
            return Err(FrameError::WindowTicks(i));
        }
        Ok(Self { frames, label })
    }

    /// A window of silent canvases starting at `start_tick`.
    pub fn silent(start_tick: u64, label: Option<ClassId>) -> Self {
        let frames = (0..WINDOW_LEN as u64)
            .map(|i| TactileCanvas::zeros(start_tick + i))
            .collect();
        Self { frames, label }
    }

    pub fn frames(&self) -> &[TactileCanvas] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [TactileCanvas] {
        &mut self.frames
    }

    pub fn start_tick(&self) -> u64 {
        self.frames[0].tick
    }
}
