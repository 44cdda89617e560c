//! Client/server messages: `len u32 LE | tag u8 | payload[len - 1]`.
//!
//! Frame payloads use the board-frame codec; everything else is a UTF-8
//! JSON object. Over WebSocket each binary message carries `tag | payload`
//! without the length prefix.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::engine::{ActionRecord, GestureRecord, RejectionRecord, StateSnapshot};
use super::segment::SegmenterConfig;
use crate::frame::{
    decode_frame, encode_frame, layout, BoardFrame, CANVAS_COLS, CANVAS_ROWS, TICK_HZ, TILE, WINDOW_LEN,
};
use crate::taxonomy::{Taxonomy, ZoneGeometry};
use crate::translator::MAX_CONTENT_LEN;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted `len`, tag included.
pub const MAX_MESSAGE_LEN: usize = 1 << 20;

pub const TAG_FRAME: u8 = 0x01;
pub const TAG_CONTROL: u8 = 0x02;
pub const TAG_GESTURE: u8 = 0x10;
pub const TAG_ACTION: u8 = 0x11;
pub const TAG_REJECTION: u8 = 0x12;
pub const TAG_STATE: u8 = 0x13;
pub const TAG_ERROR: u8 = 0x14;
pub const TAG_INFO: u8 = 0x15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Control {
    /// Clear history, dog state and any open touch.
    Reset,
    /// Ask for a fresh INFO message.
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Frame(BoardFrame),
    Control(Control),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Empty,
    Oversize,
    UnknownTag,
    BadFrame,
    BadControl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorReply {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Placement of one sensor inside its board tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub name: String,
    pub board: u8,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub range_kg: f64,
}

/// Sent on connect and on request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMessage {
    pub protocol_version: u32,
    pub tick_hz: u32,
    pub canvas_rows: usize,
    pub canvas_cols: usize,
    pub tile: usize,
    pub window_len: usize,
    pub history_capacity: usize,
    pub tiling: Vec<TileEntry>,
    pub zones: ZoneGeometry,
    pub gestures: Vec<String>,
    pub actions: Vec<String>,
    pub segmentation: SegmenterConfig,
}

impl InfoMessage {
    pub fn new(taxonomy: &Taxonomy, segmentation: SegmenterConfig) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            tick_hz: TICK_HZ,
            canvas_rows: CANVAS_ROWS,
            canvas_cols: CANVAS_COLS,
            tile: TILE,
            window_len: WINDOW_LEN,
            history_capacity: MAX_CONTENT_LEN,
            tiling: layout::PATCHES
                .iter()
                .map(|p| TileEntry {
                    name: p.name.to_string(),
                    board: p.board,
                    row: p.row,
                    col: p.col,
                    height: p.height,
                    width: p.width,
                    range_kg: p.range_kg,
                })
                .collect(),
            zones: taxonomy.zone_geometry(),
            gestures: taxonomy.gesture_vocab().content_tokens().to_vec(),
            actions: taxonomy.action_vocab().content_tokens().to_vec(),
            segmentation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Gesture(GestureRecord),
    Action(ActionRecord),
    Rejection(RejectionRecord),
    State(StateSnapshot),
    Error(ErrorReply),
    Info(Box<InfoMessage>),
}

impl ServerMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ServerMessage::Gesture(_) => TAG_GESTURE,
            ServerMessage::Action(_) => TAG_ACTION,
            ServerMessage::Rejection(_) => TAG_REJECTION,
            ServerMessage::State(_) => TAG_STATE,
            ServerMessage::Error(_) => TAG_ERROR,
            ServerMessage::Info(_) => TAG_INFO,
        }
    }

    /// `tag | payload`.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = vec![self.tag()];
        let w = &mut out;
        match self {
            ServerMessage::Gesture(v) => serde_json::to_writer(w, v),
            ServerMessage::Action(v) => serde_json::to_writer(w, v),
            ServerMessage::Rejection(v) => serde_json::to_writer(w, v),
            ServerMessage::State(v) => serde_json::to_writer(w, v),
            ServerMessage::Error(v) => serde_json::to_writer(w, v),
            ServerMessage::Info(v) => serde_json::to_writer(w, v),
        }
        .expect("messages serialize");
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, String> {
        let (&tag, payload) = body.split_first().ok_or("empty message")?;
        let e = |e: serde_json::Error| e.to_string();
        Ok(match tag {
            TAG_GESTURE => ServerMessage::Gesture(serde_json::from_slice(payload).map_err(e)?),
            TAG_ACTION => ServerMessage::Action(serde_json::from_slice(payload).map_err(e)?),
            TAG_REJECTION => ServerMessage::Rejection(serde_json::from_slice(payload).map_err(e)?),
            TAG_STATE => ServerMessage::State(serde_json::from_slice(payload).map_err(e)?),
            TAG_ERROR => ServerMessage::Error(serde_json::from_slice(payload).map_err(e)?),
            TAG_INFO => ServerMessage::Info(serde_json::from_slice(payload).map_err(e)?),
            other => return Err(format!("unknown server tag {other:#04x}")),
        })
    }
}

impl ClientMessage {
    pub fn encode_body(&self) -> Vec<u8> {
        match self {
            ClientMessage::Frame(f) => {
                let mut out = vec![TAG_FRAME];
                out.extend_from_slice(&encode_frame(f));
                out
            }
            ClientMessage::Control(c) => {
                let mut out = vec![TAG_CONTROL];
                serde_json::to_writer(&mut out, c).expect("controls serialize");
                out
            }
        }
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ErrorReply> {
        let Some((&tag, payload)) = body.split_first() else {
            return Err(ErrorReply::new(ErrorCode::Empty, "message has no tag"));
        };
        match tag {
            TAG_FRAME => decode_frame(payload)
                .map(ClientMessage::Frame)
                .map_err(|e| ErrorReply::new(ErrorCode::BadFrame, e.to_string())),
            TAG_CONTROL => serde_json::from_slice(payload)
                .map(ClientMessage::Control)
                .map_err(|e| ErrorReply::new(ErrorCode::BadControl, e.to_string())),
            other => Err(ErrorReply::new(
                ErrorCode::UnknownTag,
                format!("unknown tag {other:#04x}"),
            )),
        }
    }
}

/// Prefixes a body with its length.
pub fn frame_message(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn write_message(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    w.write_all(&frame_message(body))
}

/// Outcome of reading one length-prefixed message.
#[derive(Debug, PartialEq)]
pub enum Incoming {
    Body(Vec<u8>),
    /// The declared length exceeded the limit; the payload was skipped.
    Oversize(usize),
    Closed,
}

pub fn read_message(r: &mut impl Read, limit: usize) -> io::Result<Incoming> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(Incoming::Closed),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > limit {
        let skipped = io::copy(&mut r.take(len as u64), &mut io::sink())?;
        if skipped as usize != len {
            return Ok(Incoming::Closed);
        }
        return Ok(Incoming::Oversize(len));
    }
    let mut body = vec![0; len];
    match r.read_exact(&mut body) {
        Ok(()) => Ok(Incoming::Body(body)),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(Incoming::Closed),
        Err(e) => Err(e),
    }
}
