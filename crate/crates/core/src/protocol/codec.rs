//! Frame layout: `"SFU1"`, u8 tag, u32 payload length, payload. Integers and
//! floats are little-endian; strings are a u16 byte length plus UTF-8.

use std::io::{self, Read};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SFU1";
pub const HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: usize = 256 << 20;

pub const TAG_MESH_UPLOAD: u8 = 1;
pub const TAG_FRAME_CAPTURE: u8 = 2;
pub const TAG_COMPONENT_BATCH: u8 = 3;
pub const TAG_SELECTION: u8 = 4;
pub const TAG_ACK: u8 = 5;
pub const TAG_PROTOCOL_ERROR: u8 = 6;

/// Geometry of one component inside a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WireComponent {
    pub class_name: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum WireMessage {
    MeshUpload {
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[u32; 3]>,
    },
    FrameCapture {
        frame_index: u64,
        width: u32,
        height: u32,
        /// BGRA8, row-major.
        pixels: Vec<u8>,
        /// Row-major.
        camera_to_world: [f64; 16],
        /// Row-major.
        projection: [f64; 16],
    },
    ComponentBatch {
        batch_id: u32,
        components: Vec<WireComponent>,
    },
    Selection {
        point: [f64; 3],
        class_name: String,
    },
    Ack {
        ref_id: u32,
    },
    ProtocolError {
        code: u16,
        text: String,
    },
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::MeshUpload { .. } => TAG_MESH_UPLOAD,
            WireMessage::FrameCapture { .. } => TAG_FRAME_CAPTURE,
            WireMessage::ComponentBatch { .. } => TAG_COMPONENT_BATCH,
            WireMessage::Selection { .. } => TAG_SELECTION,
            WireMessage::Ack { .. } => TAG_ACK,
            WireMessage::ProtocolError { .. } => TAG_PROTOCOL_ERROR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::MeshUpload { .. } => "MeshUpload",
            WireMessage::FrameCapture { .. } => "FrameCapture",
            WireMessage::ComponentBatch { .. } => "ComponentBatch",
            WireMessage::Selection { .. } => "Selection",
            WireMessage::Ack { .. } => "Ack",
            WireMessage::ProtocolError { .. } => "ProtocolError",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("payload of {0} bytes exceeds the 256 MiB limit")]
    Oversized(usize),
    #[error("malformed {tag} payload: {reason}")]
    Malformed {
        tag: u8,
        reason: String,
        /// Bytes to skip to reach the next frame.
        consumed: usize,
    },
    #[error("cannot encode: {0}")]
    Invalid(String),
}

/// Result of looking at the front of a byte buffer.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Decoded {
    Message(WireMessage, usize),
    /// More bytes are needed.
    Incomplete,
    /// A well-framed message with an unknown tag.
    Skipped {
        tag: u8,
        consumed: usize,
    },
}

type Geometry = (Vec<[f64; 3]>, Vec<[u32; 3]>);

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn count(&mut self, n: usize, what: &str) -> Result<(), CodecError> {
        let n = u32::try_from(n).map_err(|_| CodecError::Invalid(format!("too many {what}")))?;
        self.u32(n);
        Ok(())
    }
    fn string(&mut self, s: &str) -> Result<(), CodecError> {
        let n = u16::try_from(s.len()).map_err(|_| CodecError::Invalid(format!("string of {} bytes", s.len())))?;
        self.u16(n);
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn geometry(&mut self, vertices: &[[f64; 3]], triangles: &[[u32; 3]]) -> Result<(), CodecError> {
        self.count(vertices.len(), "vertices")?;
        for v in vertices {
            v.iter().for_each(|&c| self.f64(c));
        }
        self.count(triangles.len(), "triangles")?;
        for t in triangles {
            t.iter().for_each(|&i| self.u32(i));
        }
        Ok(())
    }
}

/// Appends the framed encoding of `message` to `out`.
pub fn encode_into(message: &WireMessage, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let start = out.len();
    out.extend_from_slice(MAGIC);
    out.push(message.tag());
    out.extend_from_slice(&[0; 4]);
    let mut w = Writer(std::mem::take(out));
    let result = (|| {
        match message {
            WireMessage::MeshUpload { vertices, triangles } => w.geometry(vertices, triangles)?,
            WireMessage::FrameCapture {
                frame_index,
                width,
                height,
                pixels,
                camera_to_world,
                projection,
            } => {
                let expected = *width as usize * *height as usize * 4;
                if pixels.len() != expected {
                    return Err(CodecError::Invalid(format!(
                        "{} pixel bytes for {width}x{height}",
                        pixels.len()
                    )));
                }
                w.u64(*frame_index);
                w.u32(*width);
                w.u32(*height);
                w.0.extend_from_slice(pixels);
                camera_to_world.iter().chain(projection).for_each(|&v| w.f64(v));
            }
            WireMessage::ComponentBatch { batch_id, components } => {
                w.u32(*batch_id);
                w.count(components.len(), "components")?;
                for c in components {
                    w.string(&c.class_name)?;
                    w.geometry(&c.vertices, &c.triangles)?;
                }
            }
            WireMessage::Selection { point, class_name } => {
                point.iter().for_each(|&c| w.f64(c));
                w.string(class_name)?;
            }
            WireMessage::Ack { ref_id } => w.u32(*ref_id),
            WireMessage::ProtocolError { code, text } => {
                w.u16(*code);
                w.string(text)?;
            }
        }
        Ok(())
    })();
    *out = w.0;
    if let Err(e) = result {
        out.truncate(start);
        return Err(e);
    }
    let len = out.len() - start - HEADER_LEN;
    if len > MAX_PAYLOAD {
        out.truncate(start);
        return Err(CodecError::Oversized(len));
    }
    out[start + 5..start + 9].copy_from_slice(&(len as u32).to_le_bytes());
    Ok(())
}

pub fn encode(message: &WireMessage) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    encode_into(message, &mut out)?;
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or("payload too short")?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u16(&mut self) -> Result<u16, String> {
        self.array().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32, String> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, String> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64, String> {
        self.array().map(f64::from_le_bytes)
    }
    fn string(&mut self) -> Result<String, String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "string is not UTF-8".to_string())
    }
    /// Element count, checked against the bytes left so that a hostile
    /// count cannot trigger a huge allocation.
    fn count(&mut self, element_size: usize) -> Result<usize, String> {
        let n = self.u32()? as usize;
        if n.saturating_mul(element_size) > self.data.len() - self.pos {
            return Err(format!("count {n} exceeds payload"));
        }
        Ok(n)
    }
    fn geometry(&mut self) -> Result<Geometry, String> {
        let nv = self.count(24)?;
        let vertices = (0..nv)
            .map(|_| Ok([self.f64()?, self.f64()?, self.f64()?]))
            .collect::<Result<_, String>>()?;
        let nt = self.count(12)?;
        let triangles = (0..nt)
            .map(|_| Ok([self.u32()?, self.u32()?, self.u32()?]))
            .collect::<Result<_, String>>()?;
        Ok((vertices, triangles))
    }
    fn matrix(&mut self) -> Result<[f64; 16], String> {
        let mut m = [0.0; 16];
        for v in &mut m {
            *v = self.f64()?;
        }
        Ok(m)
    }
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<Option<WireMessage>, String> {
    let mut r = Reader { data: payload, pos: 0 };
    let message = match tag {
        TAG_MESH_UPLOAD => {
            let (vertices, triangles) = r.geometry()?;
            WireMessage::MeshUpload { vertices, triangles }
        }
        TAG_FRAME_CAPTURE => {
            let frame_index = r.u64()?;
            let width = r.u32()?;
            let height = r.u32()?;
            let n = (width as usize)
                .checked_mul(height as usize)
                .and_then(|p| p.checked_mul(4))
                .ok_or("image size overflows")?;
            let pixels = r.take(n)?.to_vec();
            WireMessage::FrameCapture {
                frame_index,
                width,
                height,
                pixels,
                camera_to_world: r.matrix()?,
                projection: r.matrix()?,
            }
        }
        TAG_COMPONENT_BATCH => {
            let batch_id = r.u32()?;
            let n = r.count(10)?;
            let components = (0..n)
                .map(|_| {
                    let class_name = r.string()?;
                    let (vertices, triangles) = r.geometry()?;
                    Ok(WireComponent {
                        class_name,
                        vertices,
                        triangles,
                    })
                })
                .collect::<Result<_, String>>()?;
            WireMessage::ComponentBatch { batch_id, components }
        }
        TAG_SELECTION => WireMessage::Selection {
            point: [r.f64()?, r.f64()?, r.f64()?],
            class_name: r.string()?,
        },
        TAG_ACK => WireMessage::Ack { ref_id: r.u32()? },
        TAG_PROTOCOL_ERROR => WireMessage::ProtocolError {
            code: r.u16()?,
            text: r.string()?,
        },
        _ => return Ok(None),
    };
    if r.pos != payload.len() {
        return Err(format!("{} trailing bytes", payload.len() - r.pos));
    }
    Ok(Some(message))
}

/// Decodes the frame at the start of `bytes`.
///
/// Partial input yields [`Decoded::Incomplete`]. Bad magic and oversized
/// lengths are unrecoverable; a malformed payload reports how many bytes to
/// skip.
pub fn decode(bytes: &[u8]) -> Result<Decoded, CodecError> {
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        let mut m = [0; 4];
        m[..magic_len].copy_from_slice(&bytes[..magic_len]);
        return Err(CodecError::BadMagic(m));
    }
    if bytes.len() < HEADER_LEN {
        return Ok(Decoded::Incomplete);
    }
    let tag = bytes[4];
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(CodecError::Oversized(len));
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Ok(Decoded::Incomplete);
    }
    match decode_payload(tag, &bytes[HEADER_LEN..total]) {
        Ok(Some(m)) => Ok(Decoded::Message(m, total)),
        Ok(None) => Ok(Decoded::Skipped { tag, consumed: total }),
        Err(reason) => Err(CodecError::Malformed {
            tag,
            reason,
            consumed: total,
        }),
    }
}

/// What [`FrameReader::next_event`] found on the stream.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ReadEvent {
    Message(WireMessage, usize),
    Skipped { tag: u8, bytes: usize },
    Malformed { tag: u8, reason: String, bytes: usize },
}

/// Reassembles frames from an arbitrary byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    start: usize,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            start: 0,
        }
    }

    /// Next frame, `Ok(None)` on a clean end of stream. Bad magic, oversized
    /// frames and a stream ending mid-frame are errors.
    pub fn next_event(&mut self) -> io::Result<Option<ReadEvent>> {
        loop {
            match decode(&self.buf[self.start..]) {
                Ok(Decoded::Message(m, n)) => {
                    self.start += n;
                    return Ok(Some(ReadEvent::Message(m, n)));
                }
                Ok(Decoded::Skipped { tag, consumed }) => {
                    self.start += consumed;
                    return Ok(Some(ReadEvent::Skipped { tag, bytes: consumed }));
                }
                Err(CodecError::Malformed { tag, reason, consumed }) => {
                    self.start += consumed;
                    return Ok(Some(ReadEvent::Malformed {
                        tag,
                        reason,
                        bytes: consumed,
                    }));
                }
                Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
                Ok(Decoded::Incomplete) => {}
            }
            if self.start > 0 {
                self.buf.drain(..self.start);
                self.start = 0;
            }
            let mut chunk = [0u8; 64 * 1024];
            let n = self.inner.read(&mut chunk)?;
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        format!("stream ended inside a frame ({} bytes buffered)", self.buf.len()),
                    ))
                };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    /// Next decodable message, skipping unknown tags and malformed frames.
    pub fn next_message(&mut self) -> io::Result<Option<WireMessage>> {
        while let Some(event) = self.next_event()? {
            match event {
                ReadEvent::Message(m, _) => return Ok(Some(m)),
                ReadEvent::Skipped { tag, .. } => log::warn!("skipped frame with unknown tag {tag}"),
                ReadEvent::Malformed { tag, reason, .. } => log::warn!("skipped malformed frame (tag {tag}): {reason}"),
            }
        }
        Ok(None)
    }
}
