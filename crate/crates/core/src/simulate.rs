//! End-to-end run over loopback TCP: scene, trajectory, oracle
//! segmentation, fusion, component batches and a scripted lamp selection.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::components::{extract_components, filter_components, ComponentError, LabeledComponent};
use crate::config::RunConfig;
use crate::geometry::{CameraFrame, ClassSet, GeometryError, SemanticMesh};
use crate::interaction::ActuationHook;
use crate::metrics::{ConfusionMatrix, MetricsError, Scores};
use crate::ply::{self, PlyError, PlyFormat, WriteOptions};
use crate::protocol::client::{run_client, ClientConfig, ClientReport, RenderedFrames};
use crate::protocol::session::{serve_tcp, ServerConfig, SessionReport};
use crate::rasterizer::{self, RasterError, NO_TRIANGLE};
use crate::scenegen::{generate_scene, generate_trajectory, write_trajectory_path, SceneError, SceneSpec, Trajectory};
use crate::seed::substream;
use crate::segmentation::{triangle_majority, NoiseModel, OracleSegmenter, SegmentationError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Components(#[from] ComponentError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("server thread panicked")]
    ServerPanic,
    #[error("session produced no fused map: {0}")]
    NoResult(String),
}

/// Fused labels scored against ground truth along the capture poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Per-pixel confusion (rows = truth) of the reprojected label maps.
    pub confusion: ConfusionMatrix,
    /// Object (non-Unknown) vertices visible in at least one frame.
    pub visible_object_vertices: usize,
    pub correct_object_vertices: usize,
}

impl Evaluation {
    pub fn vertex_accuracy(&self) -> f64 {
        if self.visible_object_vertices == 0 {
            return 0.0;
        }
        self.correct_object_vertices as f64 / self.visible_object_vertices as f64
    }
}

/// Scores `predicted` vertex labels against the labels carried by `scene`.
pub fn evaluate_labels(
    scene: &SemanticMesh,
    predicted: &[u8],
    frames: &[CameraFrame],
    classes: &ClassSet,
    visibility_tolerance: f64,
) -> Result<Evaluation, SimulationError> {
    let truth = scene.labels().ok_or(SegmentationError::MissingLabels)?;
    if predicted.len() != truth.len() {
        return Err(GeometryError::LengthMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        }
        .into());
    }
    let unknown = classes.unknown_index() as u8;
    let mut confusion = ConfusionMatrix::new(classes.len());
    let mut seen = vec![false; truth.len()];
    for frame in frames {
        let raster = rasterizer::render(scene, frame);
        let pixel_labels = |labels: &[u8]| -> Vec<u8> {
            raster
                .triangle
                .iter()
                .map(|&t| {
                    if t == NO_TRIANGLE {
                        unknown
                    } else {
                        triangle_majority(scene.triangles()[t as usize].map(|v| labels[v as usize]), unknown)
                    }
                })
                .collect()
        };
        confusion.accumulate(&pixel_labels(predicted), &pixel_labels(truth))?;
        for v in rasterizer::visible_vertices(scene, frame, &raster.depth, visibility_tolerance)? {
            seen[v.vertex as usize] = true;
        }
    }
    let mut visible = 0;
    let mut correct = 0;
    for (v, &t) in truth.iter().enumerate() {
        if seen[v] && t != unknown {
            visible += 1;
            correct += usize::from(predicted[v] == t);
        }
    }
    Ok(Evaluation {
        confusion,
        visible_object_vertices: visible,
        correct_object_vertices: correct,
    })
}

#[derive(Debug)]
pub struct SimulationReport {
    pub scene: Arc<SemanticMesh>,
    pub spec: SceneSpec,
    pub trajectory: Trajectory,
    pub frames: Vec<CameraFrame>,
    pub client: ClientReport,
    pub server: SessionReport,
    pub fused_labels: Vec<u8>,
    /// Components of the fused map after thresholding.
    pub components: Vec<LabeledComponent>,
    pub evaluation: Evaluation,
    pub elapsed: Duration,
}

impl SimulationReport {
    pub fn scores(&self) -> Result<Scores, MetricsError> {
        self.evaluation.confusion.scores()
    }

    pub fn lamp_on(&self) -> bool {
        self.server.actuator.lamp_on
    }

    /// Accuracy figures only; no timings, so identical across runs.
    pub fn evaluation_csv(&self, classes: &ClassSet) -> Result<String, MetricsError> {
        let scores = self.scores()?;
        let mut s = format!(
            "{},vertex_accuracy,visible_object_vertices,components\n",
            Scores::CSV_HEADER
        );
        let _ = writeln!(
            s,
            "{},{:.4},{},{}",
            scores.csv_row(),
            self.evaluation.vertex_accuracy(),
            self.evaluation.visible_object_vertices,
            self.components.len()
        );
        s.push('\n');
        s.push_str(&scores.table());
        s.push('\n');
        for (i, name) in classes.names().iter().enumerate() {
            let row: Vec<String> = (0..classes.len())
                .map(|j| self.evaluation.confusion.get(i, j).to_string())
                .collect();
            let _ = writeln!(s, "{name:>8} {}", row.join(" "));
        }
        Ok(s)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scene: {} vertices, {} triangles, {} objects",
            self.scene.vertices().len(),
            self.scene.triangles().len(),
            self.spec.objects.len()
        );
        let _ = writeln!(
            s,
            "frames: {} sent, {} fused, {} batches",
            self.client.frames_sent,
            self.server.state.frames_fused,
            self.server.batches.len()
        );
        let _ = writeln!(
            s,
            "vertex accuracy: {:.4} over {} visible object vertices",
            self.evaluation.vertex_accuracy(),
            self.evaluation.visible_object_vertices
        );
        let names: Vec<String> = self
            .components
            .iter()
            .map(|c| format!("{}({})", c.class_name, c.triangle_count()))
            .collect();
        let _ = writeln!(s, "components: {} [{}]", self.components.len(), names.join(", "));
        let _ = writeln!(s, "lamp on: {}", self.lamp_on());
        let _ = writeln!(s, "elapsed: {:.2} s", self.elapsed.as_secs_f64());
        s
    }
}

fn noise_for(config: &RunConfig, classes: &ClassSet) -> Result<NoiseModel, SegmentationError> {
    NoiseModel::symmetric(
        classes.len(),
        config.noise_flip,
        config.noise_concentration,
        substream(config.seed, "noise"),
    )
}

/// Builds the scene and trajectory that a simulation with `config` uses.
pub fn build_scene(
    config: &RunConfig,
    classes: &ClassSet,
) -> Result<(SceneSpec, SemanticMesh, Trajectory), SimulationError> {
    let mut spec = SceneSpec::random(config.chairs, config.lamps, config.seed)?;
    spec.density = config.density;
    let scene = generate_scene(&spec, classes)?;
    let trajectory = generate_trajectory(&scene, classes, &config.orbit(), config.frames, config.seed)?;
    Ok((spec, scene, trajectory))
}

pub fn server_config(config: &RunConfig, classes: &ClassSet, component_dir: Option<&Path>) -> ServerConfig {
    ServerConfig {
        classes: classes.clone(),
        fusion: config.fusion(),
        thresholds: config.thresholds.clone(),
        batch_size: config.batch_size,
        queue_bound: config.queue_bound,
        hook: config
            .actuation_hook
            .clone()
            .map(ActuationHook::shell)
            .unwrap_or_default(),
        component_dir: component_dir.map(Path::to_path_buf),
    }
}

pub fn client_config(config: &RunConfig, classes: &ClassSet) -> ClientConfig {
    ClientConfig {
        classes: classes.clone(),
        pacing: config.pacing,
        device_fps: config.device_fps,
        throttle_bytes_per_sec: config.throttle_bytes_per_sec,
        selection_step: config.selection_step,
        mesh_delay: Duration::ZERO,
    }
}

/// Runs a full session on an ephemeral loopback port. With `out`, writes
/// the scene, trajectory, fused map, per-batch components, session
/// metrics, action log and evaluation there and nowhere else.
pub fn run_simulation(config: &RunConfig, out: Option<&Path>) -> Result<SimulationReport, SimulationError> {
    let started = Instant::now();
    let classes = ClassSet::default();
    let (spec, scene, trajectory) = build_scene(config, &classes)?;
    let frames = trajectory.frames(&config.intrinsics())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        ply::write_path(dir.join("scene.ply"), &scene, WriteOptions::default())?;
        write_trajectory_path(dir.join("trajectory.txt"), &trajectory)?;
    }
    let scene = Arc::new(scene);
    let segmenter = OracleSegmenter::new((*scene).clone(), classes.clone(), noise_for(config, &classes)?)?;
    let server_config = server_config(config, &classes, out);
    let client_config = client_config(config, &classes);

    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let address = listener.local_addr()?;
    let (server, client) = std::thread::scope(|scope| {
        let server = scope.spawn(|| -> Result<SessionReport, SimulationError> {
            let (stream, peer) = listener.accept()?;
            log::info!("simulation server accepted {peer}");
            Ok(serve_tcp(stream, &segmenter, &server_config).map_err(|e| io::Error::other(e.to_string()))?)
        });
        let client = TcpStream::connect(address).map(|stream| {
            let mut source = RenderedFrames::new(Arc::clone(&scene), classes.clone(), frames.clone());
            run_client(stream, &scene.geometry_only(classes.len()), &mut source, &client_config)
        });
        (server.join(), client)
    });
    let server = server.map_err(|_| SimulationError::ServerPanic)??;
    let client = client?;
    if let Some(reason) = server.aborted.as_ref().or(client.aborted.as_ref()) {
        log::warn!("session ended early: {reason}");
    }
    let fusion = server.fusion.as_ref().ok_or_else(|| {
        SimulationError::NoResult(client.aborted.clone().unwrap_or_else(|| "no mesh uploaded".into()))
    })?;
    let fused_labels = fusion.argmax_labels();
    let components = filter_components(
        extract_components(fusion.mesh(), &fused_labels, &classes)?,
        &config.thresholds,
    )?;
    let evaluation = evaluate_labels(&scene, &fused_labels, &frames, &classes, config.visibility_tolerance)?;

    let report = SimulationReport {
        scene,
        spec,
        trajectory,
        frames,
        client,
        server,
        fused_labels,
        components,
        evaluation,
        elapsed: started.elapsed(),
    };
    if let Some(dir) = out {
        write_outputs(dir, &report, &classes)?;
    }
    Ok(report)
}

fn write_outputs(dir: &Path, report: &SimulationReport, classes: &ClassSet) -> Result<(), SimulationError> {
    let fusion = report.server.fusion.as_ref().expect("checked by caller");
    let fused = fusion
        .mesh()
        .clone()
        .with_labels(report.fused_labels.clone(), classes)?;
    ply::write_path(
        dir.join("fused.ply"),
        &fused,
        WriteOptions {
            format: PlyFormat::BinaryLittleEndian,
            labels: true,
            probabilities: Some(classes),
        },
    )?;
    fs::write(dir.join("session_metrics.csv"), report.server.metrics_csv())?;
    fs::write(dir.join("actions.log"), report.server.action_log())?;
    fs::write(dir.join("evaluation.csv"), report.evaluation_csv(classes)?)?;
    Ok(())
}

/// Files a simulation writes, relative to its output directory.
pub fn deterministic_outputs() -> Vec<PathBuf> {
    [
        "scene.ply",
        "trajectory.txt",
        "fused.ply",
        "actions.log",
        "evaluation.csv",
    ]
    .iter()
    .map(PathBuf::from)
    .collect()
}
