//! Session logs: the record container with magic `TSLG`, one tagged record
//! per entry.

use std::io::{Read, Seek, Write};

use super::engine::Record;
use super::PipelineError;
use crate::frame::container::{ContainerError, ContainerReader, ContainerWriter};
use crate::frame::{TactileCanvas, CANVAS_PIXELS};

pub const SESSION_MAGIC: [u8; 4] = *b"TSLG";

pub const TAG_FRAME: u8 = 1;
pub const TAG_GESTURE: u8 = 2;
pub const TAG_ACTION: u8 = 3;
pub const TAG_REJECTION: u8 = 4;

/// `tag | payload`; frames carry `tick u64 LE | 8192 pixels`, the other
/// kinds a JSON object.
pub fn encode_record(record: &Record) -> Vec<u8> {
    match record {
        Record::Frame(c) => {
            let mut out = Vec::with_capacity(1 + 8 + CANVAS_PIXELS);
            out.push(TAG_FRAME);
            out.extend_from_slice(&c.tick.to_le_bytes());
            out.extend_from_slice(c.pixels());
            out
        }
        Record::Gesture(g) => json(TAG_GESTURE, g),
        Record::Action(a) => json(TAG_ACTION, a),
        Record::Rejection(r) => json(TAG_REJECTION, r),
    }
}

fn json<T: serde::Serialize>(tag: u8, value: &T) -> Vec<u8> {
    let mut out = vec![tag];
    serde_json::to_writer(&mut out, value).expect("records serialize");
    out
}

pub fn decode_record(bytes: &[u8]) -> Result<Record, String> {
    let (&tag, payload) = bytes.split_first().ok_or("empty record")?;
    let json_err = |e: serde_json::Error| e.to_string();
    Ok(match tag {
        TAG_FRAME => {
            if payload.len() != 8 + CANVAS_PIXELS {
                return Err(format!("frame record of {} bytes", payload.len()));
            }
            let tick = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes"));
            Record::Frame(TactileCanvas::from_pixels(tick, payload[8..].to_vec()).map_err(|e| e.to_string())?)
        }
        TAG_GESTURE => Record::Gesture(serde_json::from_slice(payload).map_err(json_err)?),
        TAG_ACTION => Record::Action(serde_json::from_slice(payload).map_err(json_err)?),
        TAG_REJECTION => Record::Rejection(serde_json::from_slice(payload).map_err(json_err)?),
        other => return Err(format!("unknown record tag {other:#04x}")),
    })
}

/// Appends records, keeping the header count current so the file stays
/// readable if the writer is never finished.
pub struct SessionLogWriter<W: Write + Seek> {
    inner: ContainerWriter<W>,
    last_tick: u64,
}

impl<W: Write + Seek> SessionLogWriter<W> {
    pub fn new(sink: W) -> std::io::Result<Self> {
        let mut inner = ContainerWriter::new(sink, SESSION_MAGIC)?;
        inner.sync()?;
        Ok(Self { inner, last_tick: 0 })
    }

    pub fn append(&mut self, record: &Record) -> Result<(), PipelineError> {
        if record.tick() < self.last_tick {
            return Err(PipelineError::Log(format!(
                "record tick {} precedes {}",
                record.tick(),
                self.last_tick
            )));
        }
        self.last_tick = record.tick();
        self.inner.append(&encode_record(record))?;
        Ok(())
    }

    pub fn append_all<'a>(&mut self, records: impl IntoIterator<Item = &'a Record>) -> Result<(), PipelineError> {
        for r in records {
            self.append(r)?;
        }
        self.inner.sync()?;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.inner.count()
    }

    pub fn finish(self) -> std::io::Result<W> {
        self.inner.finish()
    }
}

/// Reads every record, failing with the index of the first bad one.
pub fn read_session_log(source: impl Read) -> Result<Vec<Record>, PipelineError> {
    let mut reader = ContainerReader::new(source, SESSION_MAGIC).map_err(PipelineError::Container)?;
    let mut out = Vec::new();
    let mut last_tick = 0;
    while let Some(bytes) = reader.next_record().map_err(PipelineError::Container)? {
        let index = reader.position() - 1;
        let record = decode_record(&bytes)
            .map_err(|reason| PipelineError::Container(ContainerError::Record { index, reason }))?;
        if record.tick() < last_tick {
            return Err(PipelineError::Container(ContainerError::Record {
                index,
                reason: format!("tick {} precedes {last_tick}", record.tick()),
            }));
        }
        last_tick = record.tick();
        out.push(record);
    }
    Ok(out)
}
