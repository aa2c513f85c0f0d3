//! Server side of a session: one client, mesh first, then frames fused in
//! arrival order with periodic component batches.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crossbeam_channel::bounded;
use nalgebra::Point3;
use thiserror::Error;

use super::codec::{encode, FrameReader, ReadEvent, WireMessage};
use super::{capture_frame, error_code, to_wire, DEFAULT_QUEUE_BOUND};
use crate::components::{self, batch_trigger, LabeledComponent, ThresholdTable, DEFAULT_BATCH_SIZE};
use crate::fusion::{FusionConfig, FusionState};
use crate::geometry::{ClassSet, SemanticMesh};
use crate::interaction::{handle_selection, ActionReport, ActuationHook, ActuatorState, Selection};
use crate::segmentation::{BgraImage, SegmentationSource};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("connection: {0}")]
    Io(#[from] io::Error),
    #[error("writing component files: {0}")]
    Components(#[from] components::ComponentError),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub classes: ClassSet,
    pub fusion: FusionConfig,
    pub thresholds: ThresholdTable,
    pub batch_size: u32,
    pub queue_bound: usize,
    pub hook: ActuationHook,
    /// Each batch is also written to `<dir>/batch_<id>/component_<id>_<class>.ply`.
    pub component_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            classes: ClassSet::default(),
            fusion: FusionConfig::default(),
            thresholds: ThresholdTable::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            queue_bound: DEFAULT_QUEUE_BOUND,
            hook: ActuationHook::disabled(),
            component_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    Scanning,
    MeshReceived,
    Streaming,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionState {
    pub phase: Phase,
    pub frames_received: u64,
    pub frames_fused: u64,
    pub frames_since_batch: u32,
    pub batches_sent: u32,
    pub bytes_in: u64,
    pub bytes_out: u64,
    /// Frames read off the wire but not yet fused.
    pub backlog_depth: usize,
    pub backlog_max: usize,
}

/// One row of the session metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetric {
    pub frame_index: u64,
    pub bytes_in: u64,
    pub backlog_depth: usize,
    pub fuse_ms: f64,
}

impl FrameMetric {
    pub const CSV_HEADER: &'static str = "frame_index,bytes_in,backlog_depth,fuse_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3}",
            self.frame_index, self.bytes_in, self.backlog_depth, self.fuse_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub batch_id: u32,
    pub frames_fused: u64,
    pub components: Vec<(String, usize)>,
}

#[derive(Debug, Default)]
pub struct SessionReport {
    pub state: SessionState,
    pub metrics: Vec<FrameMetric>,
    pub batches: Vec<BatchRecord>,
    pub actions: Vec<ActionReport>,
    pub actuator: ActuatorState,
    /// Errors sent to the client, in order.
    pub errors: Vec<(u16, String)>,
    pub fusion: Option<FusionState>,
    /// Components of the most recent batch.
    pub components: Vec<LabeledComponent>,
    /// Why the session ended early, if it did.
    pub aborted: Option<String>,
}

impl SessionReport {
    /// Per-frame metrics as CSV with a header row.
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{}\n", FrameMetric::CSV_HEADER);
        for m in &self.metrics {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }

    /// One line per handled selection.
    pub fn action_log(&self) -> String {
        self.actions.iter().map(|a| format!("{a}\n")).collect()
    }
}

// Frame payloads dominate the size; boxing would only move the copy.
#[allow(clippy::large_enum_variant)]
enum Inbound {
    Event(ReadEvent),
    Failed(io::Error),
}

struct Server<'a, W> {
    writer: W,
    segmenter: &'a dyn SegmentationSource,
    config: &'a ServerConfig,
    backlog: &'a AtomicUsize,
    report: SessionReport,
}

impl<W: Write> Server<'_, W> {
    fn send(&mut self, message: &WireMessage) -> io::Result<()> {
        let bytes = encode(message).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        self.writer.write_all(&bytes)?;
        self.writer.flush()?;
        self.report.state.bytes_out += bytes.len() as u64;
        Ok(())
    }

    fn reject(&mut self, code: u16, text: impl Into<String>) -> io::Result<()> {
        let text = text.into();
        log::warn!("protocol error {code}: {text}");
        self.report.errors.push((code, text.clone()));
        self.send(&WireMessage::ProtocolError { code, text })
    }

    fn ack(&mut self, seq: u64) -> io::Result<()> {
        self.send(&WireMessage::Ack { ref_id: seq as u32 })
    }

    fn handle(&mut self, seq: u64, event: ReadEvent) -> Result<(), SessionError> {
        match event {
            ReadEvent::Message(message, bytes) => {
                self.report.state.bytes_in += bytes as u64;
                self.handle_message(seq, message, bytes)?;
            }
            ReadEvent::Skipped { tag, bytes } => {
                self.report.state.bytes_in += bytes as u64;
                self.reject(error_code::UNKNOWN_TAG, format!("unknown tag {tag}"))?;
            }
            ReadEvent::Malformed { tag, reason, bytes } => {
                self.report.state.bytes_in += bytes as u64;
                self.reject(error_code::MALFORMED, format!("tag {tag}: {reason}"))?;
            }
        }
        Ok(())
    }

    fn handle_message(&mut self, seq: u64, message: WireMessage, bytes: usize) -> Result<(), SessionError> {
        match message {
            WireMessage::MeshUpload { vertices, triangles } => {
                if self.report.fusion.is_some() {
                    self.reject(error_code::MESH_FIXED, "mesh already fixed")?;
                    return Ok(());
                }
                let points = vertices.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect();
                let state = SemanticMesh::new(points, triangles, self.config.classes.len())
                    .map_err(|e| e.to_string())
                    .and_then(|mesh| {
                        FusionState::new(&mesh, self.config.classes.clone(), self.config.fusion)
                            .map_err(|e| e.to_string())
                    });
                match state {
                    Ok(state) => {
                        log::info!(
                            "mesh received: {} vertices, {} triangles",
                            state.mesh().vertices().len(),
                            state.mesh().triangles().len()
                        );
                        self.report.fusion = Some(state);
                        self.report.state.phase = Phase::MeshReceived;
                        self.ack(seq)?;
                    }
                    Err(e) => self.reject(error_code::REJECTED, format!("mesh: {e}"))?,
                }
            }
            WireMessage::FrameCapture {
                frame_index,
                width,
                height,
                pixels,
                camera_to_world,
                projection,
            } => {
                self.backlog.fetch_sub(1, Ordering::SeqCst);
                self.report.state.backlog_depth = self.backlog.load(Ordering::SeqCst);
                self.report.state.frames_received += 1;
                if self.report.fusion.is_none() {
                    self.reject(error_code::MESH_FIRST, "mesh-first")?;
                    return Ok(());
                }
                let started = Instant::now();
                let fused = capture_frame(frame_index, width, height, &camera_to_world, &projection)
                    .map_err(|e| e.to_string())
                    .and_then(|frame| {
                        let image = BgraImage {
                            width,
                            height,
                            data: pixels,
                        };
                        let scores = self
                            .segmenter
                            .segment(&frame, Some(&image))
                            .map_err(|e| e.to_string())?;
                        let fusion = self.report.fusion.as_mut().expect("checked above");
                        fusion.fuse_frame(&frame, &scores).map_err(|e| e.to_string())
                    });
                match fused {
                    Ok(update) => {
                        let state = &mut self.report.state;
                        state.phase = Phase::Streaming;
                        state.frames_fused += 1;
                        state.frames_since_batch += 1;
                        let fuse_ms = started.elapsed().as_secs_f64() * 1e3;
                        log::debug!(
                            "frame {frame_index}: {} updated, {} near-skipped, {:.1} ms",
                            update.updated.len(),
                            update.skipped_near.len(),
                            fuse_ms
                        );
                        self.report.metrics.push(FrameMetric {
                            frame_index,
                            bytes_in: bytes as u64,
                            backlog_depth: state.backlog_depth,
                            fuse_ms,
                        });
                        if batch_trigger(state.frames_since_batch, self.config.batch_size) {
                            self.send_batch()?;
                        }
                        self.ack(seq)?;
                    }
                    Err(e) => self.reject(error_code::REJECTED, format!("frame {frame_index}: {e}"))?,
                }
            }
            WireMessage::Selection { point, class_name } => {
                let selection = Selection {
                    point: Point3::from(point),
                    class_name,
                };
                let (next, action) =
                    handle_selection(&selection, &self.report.actuator, self.report.state.frames_fused);
                log::info!("action {action}");
                self.config.hook.fire(&action);
                self.report.actuator = next;
                self.report.actions.push(action);
                self.ack(seq)?;
            }
            other => self.reject(error_code::UNEXPECTED, format!("unexpected {}", other.name()))?,
        }
        Ok(())
    }

    fn send_batch(&mut self) -> Result<(), SessionError> {
        let fusion = self.report.fusion.as_ref().expect("batches follow the mesh");
        let labels = fusion.argmax_labels();
        let all = components::extract_components(fusion.mesh(), &labels, &self.config.classes)?;
        let kept = components::filter_components(all, &self.config.thresholds)?;
        let batch_id = self.report.state.batches_sent;
        if let Some(dir) = &self.config.component_dir {
            let dir = dir.join(format!("batch_{batch_id:03}"));
            std::fs::create_dir_all(&dir).map_err(SessionError::Io)?;
            components::write_component_plys(&dir, &kept, &self.config.classes)?;
        }
        let message = WireMessage::ComponentBatch {
            batch_id,
            components: kept.iter().map(to_wire).collect(),
        };
        self.send(&message)?;
        log::info!("batch {batch_id}: {} components", kept.len());
        self.report.batches.push(BatchRecord {
            batch_id,
            frames_fused: self.report.state.frames_fused,
            components: kept
                .iter()
                .map(|c| (c.class_name.clone(), c.triangle_count()))
                .collect(),
        });
        self.report.components = kept;
        self.report.state.batches_sent += 1;
        self.report.state.frames_since_batch = 0;
        Ok(())
    }
}

/// Runs one session until the client closes its sending side.
///
/// A reader thread decodes frames into a bounded queue; this thread fuses
/// them in arrival order and writes replies. `close` is called when the
/// session stops early so that the reader can be unblocked.
pub fn serve<R, W>(
    reader: R,
    writer: W,
    segmenter: &dyn SegmentationSource,
    config: &ServerConfig,
    close: impl FnOnce(),
) -> SessionReport
where
    R: Read + Send,
    W: Write,
{
    let backlog = AtomicUsize::new(0);
    let backlog_max = AtomicUsize::new(0);
    let (tx, rx) = bounded::<Inbound>(config.queue_bound.max(1));
    std::thread::scope(|scope| {
        let (backlog_in, backlog_peak) = (&backlog, &backlog_max);
        scope.spawn(move || {
            let mut frames = FrameReader::new(reader);
            loop {
                let item = match frames.next_event() {
                    Ok(Some(event)) => {
                        if matches!(event, ReadEvent::Message(WireMessage::FrameCapture { .. }, _)) {
                            let depth = backlog_in.fetch_add(1, Ordering::SeqCst) + 1;
                            backlog_peak.fetch_max(depth, Ordering::SeqCst);
                        }
                        Inbound::Event(event)
                    }
                    Ok(None) => break,
                    Err(e) => Inbound::Failed(e),
                };
                let failed = matches!(item, Inbound::Failed(_));
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });

        let mut server = Server {
            writer,
            segmenter,
            config,
            backlog: &backlog,
            report: SessionReport::default(),
        };
        let mut close = Some(close);
        for (seq, item) in (0u64..).zip(rx.iter()) {
            let outcome = match item {
                Inbound::Event(event) => server.handle(seq, event),
                Inbound::Failed(e) => Err(SessionError::Io(e)),
            };
            if let Err(e) = outcome {
                log::error!("session aborted: {e}");
                server.report.aborted = Some(e.to_string());
                break;
            }
        }
        drop(rx);
        if server.report.aborted.is_some() {
            if let Some(close) = close.take() {
                close();
            }
        }
        server.report.state.backlog_max = backlog_max.load(Ordering::SeqCst);
        server.report.state.backlog_depth = backlog.load(Ordering::SeqCst);
        server.report
    })
}

/// [`serve`] over a TCP connection.
pub fn serve_tcp(
    stream: TcpStream,
    segmenter: &dyn SegmentationSource,
    config: &ServerConfig,
) -> Result<SessionReport, SessionError> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let closer = stream.try_clone()?;
    let report = serve(reader, io::BufWriter::new(&stream), segmenter, config, move || {
        let _ = closer.shutdown(Shutdown::Both);
    });
    let _ = stream.shutdown(Shutdown::Write);
    Ok(report)
}
