//! Record container shared by dataset files and session logs:
//!
//! `magic[4] | version u16 | count u64 | (len u32 | record[len]) * count`
//!
//! All integers little-endian. The writer patches `count` on finish so a
//! stream of unknown length can be written in one pass.

use std::io::{self, Read, Seek, SeekFrom, Write};

use thiserror::Error;

use super::{FrameError, GestureWindow, TactileCanvas, CANVAS_PIXELS, WINDOW_LEN};
use crate::taxonomy::ClassId;

pub const CONTAINER_VERSION: u16 = 1;
pub const DATASET_MAGIC: [u8; 4] = *b"TDWS";
const HEADER_LEN: u64 = 14;
const UNLABELED: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad container magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("record {index} is truncated (last valid record: {})", last_valid(*.index))]
    Truncated { index: u64 },
    #[error("record {index} is invalid: {reason}")]
    Record { index: u64, reason: String },
    #[error("container declares {declared} records but holds more")]
    Trailing { declared: u64 },
}

fn last_valid(index: u64) -> String {
    index.checked_sub(1).map_or("none".into(), |i| i.to_string())
}

pub struct ContainerWriter<W: Write + Seek> {
    inner: W,
    count: u64,
}

impl<W: Write + Seek> ContainerWriter<W> {
    pub fn new(mut inner: W, magic: [u8; 4]) -> io::Result<Self> {
        inner.write_all(&magic)?;
        inner.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        Ok(Self { inner, count: 0 })
    }

    pub fn append(&mut self, record: &[u8]) -> io::Result<()> {
        let len = u32::try_from(record.len()).map_err(|_| io::Error::other("record exceeds 4 GiB"))?;
        self.inner.write_all(&len.to_le_bytes())?;
        self.inner.write_all(record)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Patches the record count in the header so the container is
    /// readable as written so far; appending may continue.
    pub fn sync(&mut self) -> io::Result<()> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(6))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()
    }

    /// Writes the final record count and returns the sink.
    pub fn finish(mut self) -> io::Result<W> {
        self.sync()?;
        Ok(self.inner)
    }
}

/// Streaming reader; yields records in order.
pub struct ContainerReader<R: Read> {
    inner: R,
    declared: u64,
    index: u64,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut inner: R, magic: [u8; 4]) -> Result<Self, ContainerError> {
        let mut header = [0u8; HEADER_LEN as usize];
        inner.read_exact(&mut header).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ContainerError::Magic([0; 4]),
            _ => e.into(),
        })?;
        let found: [u8; 4] = header[..4].try_into().expect("4 bytes");
        if found != magic {
            return Err(ContainerError::Magic(found));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != CONTAINER_VERSION {
            return Err(ContainerError::Version(version));
        }
        let declared = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
        Ok(Self {
            inner,
            declared,
            index: 0,
        })
    }

    pub fn declared_count(&self) -> u64 {
        self.declared
    }

    /// Index the next record will have.
    pub fn position(&self) -> u64 {
        self.index
    }

    pub fn next_record(&mut self) -> Result<Option<Vec<u8>>, ContainerError> {
        if self.index == self.declared {
            let mut probe = [0u8; 1];
            return match self.inner.read(&mut probe)? {
                0 => Ok(None),
                _ => Err(ContainerError::Trailing {
                    declared: self.declared,
                }),
            };
        }
        let truncated = |e: io::Error, index| match e.kind() {
            io::ErrorKind::UnexpectedEof => ContainerError::Truncated { index },
            _ => e.into(),
        };
        let mut len = [0u8; 4];
        self.inner.read_exact(&mut len).map_err(|e| truncated(e, self.index))?;
        let len = u32::from_le_bytes(len) as usize;
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut buf)
            .map_err(|e| truncated(e, self.index))?;
        if buf.len() != len {
            return Err(ContainerError::Truncated { index: self.index });
        }
        self.index += 1;
        Ok(Some(buf))
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = Result<Vec<u8>, ContainerError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// `label u16 (0xFFFF = none) | start tick u64 | 20 x 8192 pixels`.
pub fn encode_window(w: &GestureWindow) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + WINDOW_LEN * CANVAS_PIXELS);
    let label = w.label.map_or(UNLABELED, |c| c.0 as u16);
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&w.start_tick().to_le_bytes());
    for f in w.frames() {
        out.extend_from_slice(f.pixels());
    }
    out
}

pub fn decode_window(bytes: &[u8]) -> Result<GestureWindow, FrameError> {
    let expected = 10 + WINDOW_LEN * CANVAS_PIXELS;
    if bytes.len() != expected {
        return Err(FrameError::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let label = u16::from_le_bytes([bytes[0], bytes[1]]);
    let start = u64::from_le_bytes(bytes[2..10].try_into().expect("8 bytes"));
    let frames = bytes[10..]
        .chunks_exact(CANVAS_PIXELS)
        .enumerate()
        .map(|(i, px)| TactileCanvas::from_pixels(start + i as u64, px.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    GestureWindow::new(frames, (label != UNLABELED).then_some(ClassId(label as usize)))
}

pub fn write_dataset<W: Write + Seek>(sink: W, windows: impl IntoIterator<Item = GestureWindow>) -> io::Result<u64> {
    let mut w = ContainerWriter::new(sink, DATASET_MAGIC)?;
    for win in windows {
        w.append(&encode_window(&win))?;
    }
    let n = w.count();
    w.finish()?;
    Ok(n)
}

pub fn read_dataset<R: Read>(source: R) -> Result<Vec<GestureWindow>, ContainerError> {
    let mut reader = ContainerReader::new(source, DATASET_MAGIC)?;
    let mut out = Vec::new();
    while let Some(rec) = reader.next_record()? {
        let index = reader.position() - 1;
        out.push(decode_window(&rec).map_err(|e| ContainerError::Record {
            index,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
