//! On-disk formats: PLY point clouds and the binary observation container.

mod container;
mod ply;

use std::io::{BufRead, Read};

pub use container::{read_observation, write_observation, CONTAINER_MAGIC, CONTAINER_VERSION};
pub(crate) use ply::{color_from_u8, color_to_u8};
pub use ply::{read_ply, write_ply, PlyEncoding};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed input at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("input truncated at byte {offset}")]
    Truncated { offset: u64 },
    #[error("i/o error at byte {offset}: {source}")]
    Io { offset: u64, source: std::io::Error },
}

impl FormatError {
    pub(crate) fn malformed(offset: u64, reason: impl Into<String>) -> Self {
        FormatError::Malformed {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(offset: u64, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { offset }
        } else {
            FormatError::Io { offset, source }
        }
    }

    /// Byte position at which decoding stopped.
    pub fn offset(&self) -> u64 {
        match self {
            FormatError::Malformed { offset, .. }
            | FormatError::Truncated { offset }
            | FormatError::Io { offset, .. } => *offset,
        }
    }
}

/// Buffered reader that tracks how many bytes have been consumed.
pub(crate) struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R> CountingReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }
}

impl<R: BufRead> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for CountingReader<R> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.offset += amt as u64;
        self.inner.consume(amt);
    }
}
