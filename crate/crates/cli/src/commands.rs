use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use semfuse::config::RunConfig;
use semfuse::geometry::ClassSet;
use semfuse::pgm;
use semfuse::ply::{self, PlyFormat, WriteOptions};
use semfuse::protocol::client::{run_client, RenderedFrames};
use semfuse::protocol::session::serve_tcp;
use semfuse::scenegen::{
    generate_scene, generate_trajectory, read_trajectory_path, write_trajectory_path, SceneSpec, TrajectoryStyle,
};
use semfuse::seed::substream;
use semfuse::segmentation::{read_smap_path, FileSegmenter, NoiseModel, OracleSegmenter, SegmentationSource};
use semfuse::simulate::{client_config, run_simulation, server_config};

use crate::Failure;

fn read_scene(path: &Path, classes: &ClassSet) -> anyhow::Result<semfuse::geometry::SemanticMesh> {
    ply::read_mesh(path, classes).with_context(|| format!("reading scene {}", path.display()))
}

fn create_out(out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn serve(
    config: &RunConfig,
    scene: Option<PathBuf>,
    smap_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let classes = ClassSet::default();
    let segmenter: Box<dyn SegmentationSource> = match (scene, smap_dir) {
        (Some(path), _) => {
            let mesh = read_scene(&path, &classes)?;
            let noise = NoiseModel::symmetric(
                classes.len(),
                config.noise_flip,
                config.noise_concentration,
                substream(config.seed, "noise"),
            )
            .context("noise model")?;
            Box::new(OracleSegmenter::new(mesh, classes.clone(), noise).context("oracle segmenter")?)
        }
        (None, Some(dir)) => Box::new(FileSegmenter::new(dir, classes.clone())),
        (None, None) => return Err(Failure::Usage("serve needs --scene or --smap-dir".into())),
    };
    create_out(out.as_deref())?;
    let listener = TcpListener::bind((config.host.as_str(), config.port))
        .with_context(|| format!("binding {}:{}", config.host, config.port))?;
    let address = listener.local_addr().context("local address")?;
    println!("listening on {address}");
    let _ = std::io::stdout().flush();
    let (stream, peer) = listener.accept().context("accepting client")?;
    log::info!("client {peer} connected");
    let report = serve_tcp(
        stream,
        segmenter.as_ref(),
        &server_config(config, &classes, out.as_deref()),
    )
    .context("session")?;

    if let Some(dir) = &out {
        fs::write(dir.join("session_metrics.csv"), report.metrics_csv()).context("writing metrics")?;
        fs::write(dir.join("actions.log"), report.action_log()).context("writing action log")?;
        if let Some(fusion) = &report.fusion {
            let fused = fusion
                .mesh()
                .clone()
                .with_labels(fusion.argmax_labels(), &classes)
                .context("labeling fused map")?;
            let options = WriteOptions {
                probabilities: Some(&classes),
                ..WriteOptions::default()
            };
            ply::write_path(dir.join("fused.ply"), &fused, options).context("writing fused map")?;
        }
    }
    let s = &report.state;
    println!(
        "frames fused: {}, batches: {}, max backlog: {}, lamp on: {}",
        s.frames_fused, s.batches_sent, s.backlog_max, report.actuator.lamp_on
    );
    for (code, text) in &report.errors {
        println!("protocol error {code}: {text}");
    }
    match report.aborted {
        Some(reason) => Err(Failure::Runtime(format!("session aborted: {reason}"))),
        None => Ok(()),
    }
}

pub fn replay(
    config: &RunConfig,
    scene: &Path,
    traj: &Path,
    connect: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let classes = ClassSet::default();
    let scene = read_scene(scene, &classes)?;
    if scene.labels().is_none() {
        return Err(Failure::Usage("replay scene must carry labels".into()));
    }
    let trajectory = read_trajectory_path(traj).with_context(|| format!("reading {}", traj.display()))?;
    let frames = trajectory.frames(&config.intrinsics()).context("building frames")?;
    create_out(out.as_deref())?;
    let address = connect.unwrap_or_else(|| format!("{}:{}", config.host, config.port));
    let stream = TcpStream::connect(&address).with_context(|| format!("connecting to {address}"))?;
    let mesh = scene.geometry_only(classes.len());
    let mut source = RenderedFrames::new(Arc::new(scene), classes.clone(), frames);
    let report = run_client(stream, &mesh, &mut source, &client_config(config, &classes));

    if let Some(dir) = &out {
        let mut csv = String::from("frame_index,backlog\n");
        for b in &report.backlog {
            csv.push_str(&format!("{},{}\n", b.frame_index, b.backlog));
        }
        fs::write(dir.join("client_backlog.csv"), csv).context("writing backlog")?;
    }
    println!(
        "frames sent: {}, acked: {}, bytes: {}, batches: {}, max backlog: {}",
        report.frames_sent,
        report.frames_acked,
        report.bytes_sent,
        report.batches.len(),
        report.max_backlog
    );
    if let Some(fps) = report.frames_per_second() {
        println!("fused frames per second: {fps:.2}");
    }
    if let Some(sel) = &report.selection {
        println!(
            "selected {} after frame {} (acked: {})",
            sel.hit.class_name, sel.step, report.selection_acked
        );
    }
    match report.aborted {
        Some(reason) => Err(Failure::Runtime(format!("replay aborted: {reason}"))),
        None => Ok(()),
    }
}

pub fn simulate(config: &RunConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let report = run_simulation(config, out.as_deref()).context("simulate")?;
    print!("{}", report.summary());
    if let Some(reason) = report.server.aborted.as_ref().or(report.client.aborted.as_ref()) {
        return Err(Failure::Runtime(format!("session aborted: {reason}")));
    }
    Ok(())
}

/// `orbit:N` or `orbit:N:RADIUS:HEIGHT`.
fn parse_traj(spec: &str) -> Result<(TrajectoryStyle, usize), Failure> {
    let bad = || {
        Failure::Usage(format!(
            "bad --traj `{spec}`; expected orbit:N or orbit:N:RADIUS:HEIGHT"
        ))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.first() != Some(&"orbit") {
        return Err(bad());
    }
    let n: usize = parts
        .get(1)
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(bad)?;
    let style = match parts.len() {
        2 => TrajectoryStyle::default_orbit(),
        4 => TrajectoryStyle::Orbit {
            radius: parts[2].parse().map_err(|_| bad())?,
            height: parts[3].parse().map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    };
    Ok((style, n))
}

#[allow(clippy::too_many_arguments)]
pub fn gen_scene(
    seed: u64,
    chairs: usize,
    lamps: usize,
    density: f64,
    out: &Path,
    traj: Option<&str>,
    traj_out: Option<PathBuf>,
    ascii: bool,
) -> Result<(), Failure> {
    let traj = traj.map(parse_traj).transpose()?;
    if traj.is_some() && traj_out.is_none() {
        return Err(Failure::Usage("--traj needs --traj-out".into()));
    }
    if density.is_nan() || density <= 0.0 {
        return Err(Failure::Usage("--density must be positive".into()));
    }
    let classes = ClassSet::default();
    let mut spec = SceneSpec::random(chairs, lamps, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    spec.density = density;
    let scene = generate_scene(&spec, &classes).context("generating scene")?;
    let format = if ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    ply::write_path(
        out,
        &scene,
        WriteOptions {
            format,
            ..WriteOptions::default()
        },
    )
    .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{}: {} vertices, {} triangles, {} objects",
        out.display(),
        scene.vertices().len(),
        scene.triangles().len(),
        spec.objects.len()
    );
    if let (Some((style, n)), Some(path)) = (traj, traj_out) {
        let trajectory = generate_trajectory(&scene, &classes, &style, n, seed).context("generating trajectory")?;
        write_trajectory_path(&path, &trajectory).with_context(|| format!("writing {}", path.display()))?;
        println!("{}: {} poses", path.display(), trajectory.len());
    }
    Ok(())
}

pub fn smap_argmax(input: &Path, out: &Path) -> Result<(), Failure> {
    let map = read_smap_path(input).with_context(|| format!("reading {}", input.display()))?;
    if map.classes() > 256 {
        return Err(anyhow!("{} classes do not fit an 8-bit image", map.classes()).into());
    }
    // The last class is Unknown by convention; ties resolve to it.
    let labels = map.argmax(map.classes() - 1);
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    pgm::write_u8(std::io::BufWriter::new(file), map.width(), map.height(), &labels).context("writing PGM")?;
    Ok(())
}
