//! Wire format of one board frame (all integers little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `TFRM`               |
//! | 4      | 1    | version (1)                |
//! | 5      | 1    | board id                   |
//! | 6      | 2    | rows                       |
//! | 8      | 2    | cols                       |
//! | 10     | 8    | tick                       |
//! | 18     | r*c  | samples, row-major         |
//! | end-4  | 4    | CRC-32 of all prior bytes  |

use super::{BoardFrame, FrameError, BOARD_COUNT};

pub const FRAME_MAGIC: [u8; 4] = *b"TFRM";
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 18;
const CRC_LEN: usize = 4;

/// Encoded size of a `rows` x `cols` frame.
pub fn encoded_len(rows: u16, cols: u16) -> usize {
    FRAME_HEADER_LEN + rows as usize * cols as usize + CRC_LEN
}

pub fn encode_frame(frame: &BoardFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(frame.rows, frame.cols));
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(frame.board_id);
    out.extend_from_slice(&frame.rows.to_le_bytes());
    out.extend_from_slice(&frame.cols.to_le_bytes());
    out.extend_from_slice(&frame.tick.to_le_bytes());
    out.extend_from_slice(&frame.samples);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<BoardFrame, FrameError> {
    if bytes.len() < FRAME_MAGIC.len() {
        if FRAME_MAGIC.starts_with(bytes) {
            return Err(FrameError::Length {
                expected: FRAME_HEADER_LEN + CRC_LEN,
                actual: bytes.len(),
            });
        }
        return Err(FrameError::Format("bad magic"));
    }
    if bytes[..4] != FRAME_MAGIC {
        return Err(FrameError::Format("bad magic"));
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FrameError::Length {
            expected: FRAME_HEADER_LEN + CRC_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[4] != FRAME_VERSION {
        return Err(FrameError::Format("unsupported version"));
    }
    let board_id = bytes[5];
    if board_id as usize >= BOARD_COUNT {
        return Err(FrameError::Format("board id out of range"));
    }
    let rows = u16::from_le_bytes([bytes[6], bytes[7]]);
    let cols = u16::from_le_bytes([bytes[8], bytes[9]]);
    let tick = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    let expected = encoded_len(rows, cols);
    if bytes.len() != expected {
        return Err(FrameError::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let body = expected - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(FrameError::Checksum { stored, computed });
    }
    BoardFrame::new(board_id, rows, cols, tick, bytes[FRAME_HEADER_LEN..body].to_vec())
}
