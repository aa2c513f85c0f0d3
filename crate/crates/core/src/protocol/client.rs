//! Simulated AR client: uploads the mesh once, then captures and sends
//! frames at a fixed pace over a possibly throttled link, collects component
//! batches and can perform one scripted air-tap selection.

use std::collections::HashMap;
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use nalgebra::{Point3, Vector3};

use super::codec::{encode, FrameReader, WireComponent, WireMessage};
use super::throttle::ThrottledWriter;
use super::{frame_capture, from_wire, mesh_upload};
use crate::components::LabeledComponent;
use crate::geometry::{CameraFrame, ClassSet, SemanticMesh};
use crate::interaction::{raycast, GazeRay, RayHit};
use crate::scenegen::render_bgra;
use crate::segmentation::BgraImage;

/// Device render rate used to turn "frames per photo" into seconds.
pub const DEVICE_FPS: f64 = 60.0;

/// Produces the frames the client sends.
pub trait FrameSource: Send {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn capture(&mut self, index: usize) -> Result<(CameraFrame, BgraImage), String>;
}

/// Renders BGRA pictures of a labeled scene along a list of frames.
pub struct RenderedFrames {
    scene: Arc<SemanticMesh>,
    classes: ClassSet,
    frames: Vec<CameraFrame>,
}

impl RenderedFrames {
    pub fn new(scene: Arc<SemanticMesh>, classes: ClassSet, frames: Vec<CameraFrame>) -> Self {
        Self { scene, classes, frames }
    }
}

impl FrameSource for RenderedFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn capture(&mut self, index: usize) -> Result<(CameraFrame, BgraImage), String> {
        let frame = self
            .frames
            .get(index)
            .ok_or_else(|| format!("no frame {index}"))?
            .clone();
        let image = render_bgra(&self.scene, &frame, &self.classes);
        Ok((frame, image))
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub classes: ClassSet,
    /// Device frames between two photos; 0 sends as fast as possible.
    pub pacing: u32,
    pub device_fps: f64,
    pub throttle_bytes_per_sec: Option<u64>,
    /// After the frame with this index is acknowledged, gaze at the lamp
    /// and send a selection. Later frames are held until it is queued, so
    /// the server handles it right after that frame.
    pub selection_step: Option<u64>,
    /// Extra pause between the mesh acknowledgement and the first photo.
    pub mesh_delay: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            classes: ClassSet::default(),
            pacing: 0,
            device_fps: DEVICE_FPS,
            throttle_bytes_per_sec: None,
            selection_step: None,
            mesh_delay: Duration::ZERO,
        }
    }
}

impl ClientConfig {
    pub fn capture_interval(&self) -> Duration {
        if self.pacing == 0 || self.device_fps <= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(f64::from(self.pacing) / self.device_fps)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBatch {
    pub batch_id: u32,
    pub components: Vec<WireComponent>,
}

/// Client-side congestion at the moment a photo is taken: earlier photos
/// that the server has not yet acknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacklogSample {
    pub frame_index: u64,
    pub backlog: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub step: u64,
    pub ray: GazeRay,
    pub hit: RayHit,
    /// The view from the camera was blocked and the ray was cast from
    /// above the lamp instead.
    pub from_above: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ClientReport {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_acked: u64,
    pub batches: Vec<ReceivedBatch>,
    pub errors: Vec<(u16, String)>,
    pub backlog: Vec<BacklogSample>,
    pub max_backlog: u64,
    pub selection: Option<SelectionOutcome>,
    pub selection_acked: bool,
    pub elapsed: Duration,
    /// From the first photo to the last frame acknowledgement.
    pub streaming_time: Option<Duration>,
    pub aborted: Option<String>,
}

impl ClientReport {
    /// Fused frames per second over the streaming phase.
    pub fn frames_per_second(&self) -> Option<f64> {
        self.streaming_time
            .filter(|t| !t.is_zero())
            .map(|t| self.frames_acked as f64 / t.as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sent {
    Mesh,
    Frame(u64),
    Selection,
}

struct Shared {
    outbox: Option<Sender<Vec<u8>>>,
    next_seq: u32,
    kinds: HashMap<u32, Sent>,
    responses: u32,
    capture_done: bool,
    selection_pending: bool,
    captured: u64,
    positions: Vec<Point3<f64>>,
    first_capture: Option<Instant>,
}

impl Shared {
    fn enqueue(&mut self, kind: Sent, bytes: Vec<u8>) -> bool {
        let Some(outbox) = &self.outbox else { return false };
        if outbox.send(bytes).is_err() {
            return false;
        }
        self.kinds.insert(self.next_seq, kind);
        self.next_seq += 1;
        true
    }

    /// Closes the outgoing queue once nothing else will be sent.
    fn maybe_close(&mut self) {
        if self.capture_done && self.selection_pending && self.responses == self.next_seq {
            // The selection frame was never acknowledged; give up on it.
            log::warn!("scripted selection skipped: its frame was not acknowledged");
            self.selection_pending = false;
        }
        if self.capture_done && !self.selection_pending {
            self.outbox = None;
        }
    }
}

fn lamp_target(components: &[LabeledComponent]) -> Option<Point3<f64>> {
    components
        .iter()
        .filter(|c| c.class_name.eq_ignore_ascii_case("lamp"))
        .max_by_key(|c| c.triangle_count())
        .map(LabeledComponent::centroid)
}

/// Gaze from `eye` at the biggest lamp; falls back to looking straight down
/// from one meter above it when something else is in the way.
fn scripted_gaze(step: u64, eye: Point3<f64>, components: &[LabeledComponent]) -> Option<SelectionOutcome> {
    let target = lamp_target(components)?;
    let is_lamp = |h: &RayHit| h.class_name.eq_ignore_ascii_case("lamp");
    if let Ok(ray) = GazeRay::towards(eye, target) {
        if let Some(hit) = raycast(&ray, components).filter(is_lamp) {
            return Some(SelectionOutcome {
                step,
                ray,
                hit,
                from_above: false,
            });
        }
    }
    let ray = GazeRay::new(target + Vector3::y(), -Vector3::y()).ok()?;
    let hit = raycast(&ray, components).filter(is_lamp)?;
    Some(SelectionOutcome {
        step,
        ray,
        hit,
        from_above: true,
    })
}

fn encode_or_abort(message: &WireMessage) -> io::Result<Vec<u8>> {
    encode(message).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Drives one session over `stream`. Connection loss ends the run early
/// with whatever was recorded so far.
pub fn run_client(
    stream: TcpStream,
    mesh: &SemanticMesh,
    source: &mut dyn FrameSource,
    config: &ClientConfig,
) -> ClientReport {
    let started = Instant::now();
    let mut report = ClientReport::default();
    if let Err(e) = stream.set_nodelay(true) {
        log::debug!("set_nodelay: {e}");
    }
    let (reader, writer) = match (stream.try_clone(), stream.try_clone()) {
        (Ok(r), Ok(w)) => (r, w),
        (Err(e), _) | (_, Err(e)) => {
            report.aborted = Some(format!("cloning stream: {e}"));
            return report;
        }
    };
    let (tx, rx) = unbounded::<Vec<u8>>();
    let n_frames = source.len();
    let shared = Mutex::new(Shared {
        outbox: Some(tx),
        next_seq: 0,
        kinds: HashMap::new(),
        responses: 0,
        capture_done: false,
        selection_pending: config.selection_step.is_some_and(|s| (s as usize) < n_frames),
        captured: 0,
        positions: Vec::with_capacity(n_frames),
        first_capture: None,
    });
    let state = Mutex::new(report);
    // Signalled whenever the receiver changes `shared`.
    let changed = Condvar::new();

    std::thread::scope(|scope| {
        let sender = scope.spawn(|| -> io::Result<u64> {
            let mut out = ThrottledWriter::new(
                BufWriter::with_capacity(1 << 16, &writer),
                config.throttle_bytes_per_sec,
            );
            let mut sent = 0u64;
            let mut result = Ok(());
            for bytes in rx.iter() {
                if let Err(e) = out.write_all(&bytes).and_then(|_| out.flush()) {
                    result = Err(e);
                    break;
                }
                sent += bytes.len() as u64;
            }
            drop(rx);
            let _ = writer.shutdown(Shutdown::Write);
            result.map(|_| sent)
        });

        let receiver = scope.spawn(|| {
            let mut frames = FrameReader::new(&reader);
            let mut components: Vec<LabeledComponent> = Vec::new();
            let mut last_frame_ack: Option<Instant> = None;
            loop {
                let message = match frames.next_message() {
                    Ok(Some(m)) => m,
                    Ok(None) => break,
                    Err(e) => {
                        state.lock().unwrap().aborted.get_or_insert(format!("receiving: {e}"));
                        break;
                    }
                };
                let mut sh = shared.lock().unwrap();
                match message {
                    WireMessage::Ack { ref_id } => {
                        sh.responses += 1;
                        match sh.kinds.get(&ref_id).copied() {
                            Some(Sent::Frame(i)) => {
                                last_frame_ack = Some(Instant::now());
                                state.lock().unwrap().frames_acked += 1;
                                if sh.selection_pending && config.selection_step == Some(i) {
                                    let eye = sh.positions[i as usize];
                                    match scripted_gaze(i, eye, &components) {
                                        Some(outcome) => {
                                            let hit = &outcome.hit;
                                            let msg = WireMessage::Selection {
                                                point: [hit.point.x, hit.point.y, hit.point.z],
                                                class_name: hit.class_name.clone(),
                                            };
                                            log::info!(
                                                "air tap after frame {i}: {} at {:.3} m",
                                                hit.class_name,
                                                hit.distance
                                            );
                                            if let Ok(bytes) = encode_or_abort(&msg) {
                                                sh.enqueue(Sent::Selection, bytes);
                                            }
                                            state.lock().unwrap().selection = Some(outcome);
                                        }
                                        None => log::warn!(
                                            "air tap after frame {i}: no lamp among {} components",
                                            components.len()
                                        ),
                                    }
                                    sh.selection_pending = false;
                                }
                            }
                            Some(Sent::Selection) => state.lock().unwrap().selection_acked = true,
                            Some(Sent::Mesh) | None => {}
                        }
                    }
                    WireMessage::ProtocolError { code, text } => {
                        sh.responses += 1;
                        log::warn!("server error {code}: {text}");
                        state.lock().unwrap().errors.push((code, text));
                    }
                    WireMessage::ComponentBatch {
                        batch_id,
                        components: wire,
                    } => {
                        components = wire
                            .iter()
                            .enumerate()
                            .map(|(i, c)| from_wire(i as u32, c, &config.classes))
                            .collect();
                        state.lock().unwrap().batches.push(ReceivedBatch {
                            batch_id,
                            components: wire,
                        });
                    }
                    other => log::warn!("unexpected {} from server", other.name()),
                }
                sh.maybe_close();
                changed.notify_all();
            }
            // The server is gone; nothing more will be answered.
            let mut sh = shared.lock().unwrap();
            sh.selection_pending = false;
            sh.outbox = None;
            changed.notify_all();
            let first = sh.first_capture;
            drop(sh);
            if let (Some(a), Some(b)) = (first, last_frame_ack) {
                state.lock().unwrap().streaming_time = Some(b.duration_since(a));
            }
        });

        // Capture loop on this thread.
        let mut capture = || -> Result<(), String> {
            let bytes = encode_or_abort(&mesh_upload(mesh)).map_err(|e| e.to_string())?;
            if !shared.lock().unwrap().enqueue(Sent::Mesh, bytes) {
                return Err("connection closed before the mesh was sent".into());
            }
            // Photos start once the server has answered the mesh.
            drop(
                changed
                    .wait_while(shared.lock().unwrap(), |s| s.responses == 0 && s.outbox.is_some())
                    .unwrap(),
            );
            if !config.mesh_delay.is_zero() {
                std::thread::sleep(config.mesh_delay);
            }
            let interval = config.capture_interval();
            let t0 = Instant::now();
            for i in 0..n_frames {
                let due = t0 + interval * i as u32;
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
                let (frame, image) = source.capture(i)?;
                let position = frame.position();
                let bytes =
                    encode_or_abort(&frame_capture(&frame.with_index(i as u64), &image)).map_err(|e| e.to_string())?;
                let mut sh = shared.lock().unwrap();
                if config.selection_step.is_some_and(|step| i as u64 > step) {
                    // The tap goes out right after its frame, before any later one.
                    sh = changed
                        .wait_while(sh, |s| {
                            s.selection_pending && s.outbox.is_some() && s.responses < s.next_seq
                        })
                        .unwrap();
                }
                let backlog = sh.captured - state.lock().unwrap().frames_acked;
                {
                    let mut st = state.lock().unwrap();
                    st.backlog.push(BacklogSample {
                        frame_index: i as u64,
                        backlog,
                    });
                    st.max_backlog = st.max_backlog.max(backlog);
                }
                sh.first_capture.get_or_insert_with(Instant::now);
                sh.positions.push(position);
                if !sh.enqueue(Sent::Frame(i as u64), bytes) {
                    return Err("connection closed while streaming".into());
                }
                sh.captured += 1;
                state.lock().unwrap().frames_sent += 1;
            }
            Ok(())
        };
        let captured = capture();
        {
            let mut sh = shared.lock().unwrap();
            sh.capture_done = true;
            if captured.is_err() {
                sh.selection_pending = false;
            }
            sh.maybe_close();
        }
        if let Err(e) = captured {
            state.lock().unwrap().aborted.get_or_insert(e);
        }
        match sender.join().expect("sender thread") {
            Ok(sent) => state.lock().unwrap().bytes_sent = sent,
            Err(e) => {
                state.lock().unwrap().aborted.get_or_insert(format!("sending: {e}"));
                let _ = reader.shutdown(Shutdown::Both);
            }
        }
        receiver.join().expect("receiver thread");
    });

    let mut report = state.into_inner().unwrap();
    report.elapsed = started.elapsed();
    report
}
