//! Bandwidth cap for a byte sink, used to emulate a slow wireless link on
//! loopback.

use std::io::{self, Write};
use std::time::{Duration, Instant};

/// Writes no faster than `bytes_per_sec`. Idle time does not build up
/// credit, so every burst pays the full transfer time.
pub struct ThrottledWriter<W> {
    inner: W,
    bytes_per_sec: Option<u64>,
    /// Instant at which the link is free again.
    free_at: Instant,
    written: u64,
}

const CHUNK: usize = 16 * 1024;

impl<W: Write> ThrottledWriter<W> {
    /// `None` disables throttling.
    pub fn new(inner: W, bytes_per_sec: Option<u64>) -> Self {
        Self {
            inner,
            bytes_per_sec: bytes_per_sec.filter(|&b| b > 0),
            free_at: Instant::now(),
            written: 0,
        }
    }

    pub fn bytes_written(&self) -> u64 {
        self.written
    }

    pub fn get_ref(&self) -> &W {
        &self.inner
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    fn pay_for(&mut self, bytes: usize) {
        if let Some(rate) = self.bytes_per_sec {
            let now = Instant::now();
            self.free_at = self.free_at.max(now) + Duration::from_secs_f64(bytes as f64 / rate as f64);
            if self.free_at > now {
                std::thread::sleep(self.free_at - now);
            }
        }
    }
}

impl<W: Write> Write for ThrottledWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = if self.bytes_per_sec.is_some() {
            buf.len().min(CHUNK)
        } else {
            buf.len()
        };
        let n = self.inner.write(&buf[..n])?;
        self.written += n as u64;
        self.pay_for(n);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
