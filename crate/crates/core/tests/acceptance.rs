//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Point3, Vector3};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfuse::components::{extract_components, filter_components, LabeledComponent, ThresholdTable};
use semfuse::config::RunConfig;
use semfuse::fusion::{bayes_update, FusionConfig, FusionState, ScoreMap};
use semfuse::geometry::{look_at, make_perspective, CameraFrame, ClassDistribution, ClassSet, SemanticMesh};
use semfuse::interaction::{handle_selection, raycast, ActuatorState, GazeRay, Selection};
use semfuse::metrics::ConfusionMatrix;
use semfuse::protocol::session::{serve, ServerConfig};
use semfuse::protocol::{decode, encode, error_code, frame_capture, mesh_upload, Decoded, FrameReader, WireMessage};
use semfuse::rasterizer::{self, NEAR_CLIP};
use semfuse::scenegen::{generate_scene, generate_trajectory, render_bgra, Intrinsics, SceneSpec, TrajectoryStyle};
use semfuse::segmentation::{NoiseModel, OracleSegmenter};
use semfuse::simulate::{run_simulation, SimulationReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion(id: u32, title: &str, check: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "[{}] {id:>2} {title}: {} ({:.2} s)",
        if result.pass { "PASS" } else { "FAIL" },
        result.detail,
        started.elapsed().as_secs_f64()
    );
    result.pass
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize, min: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| min + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bayes_algebra() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let floor = FusionConfig::default().epsilon_floor;
    let (mut norm, mut ident, mut comm) = (0.0f64, 0.0f64, 0.0f64);
    let pairs = 10_000;
    for _ in 0..pairs {
        let k = rng.random_range(2..=8);
        // Priors are states a fused vertex can be in: no entry below the floor.
        let prior = random_distribution(&mut rng, k, 1e-3);
        let a = random_distribution(&mut rng, k, 0.0);
        let b = random_distribution(&mut rng, k, 0.0);
        let post = bayes_update(&prior, &a, floor).unwrap();
        norm = norm.max((post.probabilities().iter().sum::<f64>() - 1.0).abs());
        let same = bayes_update(&prior, &vec![1.0 / k as f64; k], floor).unwrap();
        ident = ident.max(max_diff(same.probabilities(), &prior));
        let ab = bayes_update(bayes_update(&prior, &a, floor).unwrap().probabilities(), &b, floor).unwrap();
        let ba = bayes_update(bayes_update(&prior, &b, floor).unwrap().probabilities(), &a, floor).unwrap();
        comm = comm.max(max_diff(ab.probabilities(), ba.probabilities()));
    }
    let elapsed = started.elapsed();
    outcome(
        norm <= 1e-9 && ident <= 1e-12 && comm <= 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "{pairs} pairs; max |sum-1| {norm:.1e}, uniform-likelihood drift {ident:.1e}, order difference {comm:.1e}"
        ),
    )
}

/// Nearest depth along the ray through each pixel centre, by testing
/// every triangle.
fn oracle_depth(
    vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    c2w: &Matrix4<f64>,
    fov_y: f64,
    w: u32,
    h: u32,
) -> Vec<Option<f64>> {
    let tan = (fov_y / 2.0).tan();
    let aspect = f64::from(w) / f64::from(h);
    let origin = c2w.transform_point(&Point3::origin());
    let mut out = Vec::with_capacity((w * h) as usize);
    for py in 0..h {
        for px in 0..w {
            let nx = 2.0 * (f64::from(px) + 0.5) / f64::from(w) - 1.0;
            let ny = 1.0 - 2.0 * (f64::from(py) + 0.5) / f64::from(h);
            // Camera-space direction with unit viewing-axis depth.
            let d = c2w.transform_vector(&Vector3::new(nx * tan * aspect, ny * tan, -1.0));
            let mut best: Option<f64> = None;
            for t in triangles {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let n = (b - a).cross(&(c - a));
                let denom = n.dot(&d);
                if denom.abs() < 1e-14 {
                    continue;
                }
                let s = n.dot(&(a - origin)) / denom;
                if s < NEAR_CLIP {
                    continue;
                }
                let p = origin + d * s;
                let inside = [(a, b), (b, c), (c, a)]
                    .iter()
                    .all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) >= 0.0);
                if inside && best.is_none_or(|v| s < v) {
                    best = Some(s);
                }
            }
            out.push(best);
        }
    }
    out
}

fn rasterizer_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (64u32, 64u32);
    let fov = 60f64.to_radians();
    let proj = make_perspective(fov, 1.0, 0.1, 100.0).unwrap();
    let (mut agree, mut covered) = (0usize, 0usize);
    for m in 0..100 {
        let n_tri = rng.random_range(1..=50);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        // A fifth of the meshes reach behind the camera to exercise clipping.
        let z_max = if m % 5 == 0 { 1.0 } else { -0.5 };
        for t in 0..n_tri {
            let centre = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-8.0..z_max),
            );
            for _ in 0..3 {
                let jitter = Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                vertices.push(Point3::from(centre + jitter));
            }
            triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
        }
        let eye = Point3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.0..1.0),
        );
        let target = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -5.0);
        let c2w = look_at(eye, target, Vector3::y()).unwrap();
        let frame = CameraFrame::new(w, h, c2w, proj, 0).unwrap();
        let mesh = SemanticMesh::new(vertices.clone(), triangles.clone(), 3).unwrap();
        let depth = rasterizer::render_depth(&mesh, &frame);
        let expected = oracle_depth(&vertices, &triangles, &c2w, fov, w, h);
        for (i, e) in expected.iter().enumerate() {
            let got = depth.get(i as u32 % w, i as u32 / w);
            match (got, e) {
                (None, None) => {}
                (Some(g), Some(e)) => {
                    covered += 1;
                    agree += usize::from((g - e).abs() <= 1e-4 * e);
                }
                _ => covered += 1,
            }
        }
    }
    let ratio = agree as f64 / covered as f64;

    // A fronto-parallel plane 3 m away filling the view.
    let plane = SemanticMesh::new(
        vec![
            Point3::new(-10.0, -10.0, -3.0),
            Point3::new(10.0, -10.0, -3.0),
            Point3::new(10.0, 10.0, -3.0),
            Point3::new(-10.0, 10.0, -3.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        3,
    )
    .unwrap();
    let frame = CameraFrame::new(w, h, Matrix4::identity(), proj, 0).unwrap();
    let depth = rasterizer::render_depth(&plane, &frame);
    let plane_err = depth.as_slice().iter().map(|d| (d - 3.0).abs()).fold(0.0, f64::max);
    let plane_ok = depth.covered_pixels() == (w * h) as usize && plane_err <= 1e-5;
    let elapsed = started.elapsed();
    outcome(
        ratio >= 0.99 && plane_ok && elapsed < Duration::from_secs(60),
        format!(
            "{agree}/{covered} covered pixels within 1e-4 relative ({:.3}%); plane max error {plane_err:.1e}",
            100.0 * ratio
        ),
    )
}

/// Row-major grid of vertices on the plane `z`, returned with its triangles
/// offset by `base`.
fn grid(x0: f64, x1: f64, y0: f64, y1: f64, z: f64, n: u32, base: u32) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let mut v = Vec::new();
    let mut t = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let fx = f64::from(i) / f64::from(n);
            let fy = f64::from(j) / f64::from(n);
            v.push(Point3::new(x0 + (x1 - x0) * fx, y0 + (y1 - y0) * fy, z));
        }
    }
    for j in 0..n {
        for i in 0..n {
            let a = base + j * (n + 1) + i;
            t.push([a, a + 1, a + n + 2]);
            t.push([a, a + n + 2, a + n + 1]);
        }
    }
    (v, t)
}

fn nearest_vertex(vertices: &[Point3<f64>], p: Point3<f64>) -> usize {
    (0..vertices.len())
        .min_by(|&a, &b| (vertices[a] - p).norm().total_cmp(&(vertices[b] - p).norm()))
        .unwrap()
}

fn constant_scores(w: u32, h: u32, dist: [f64; 3]) -> ScoreMap {
    ScoreMap::new(
        w,
        h,
        3,
        dist.iter().copied().cycle().take((w * h * 3) as usize).collect(),
    )
    .unwrap()
}

fn jittered_frames(n: usize, w: u32, h: u32) -> Vec<CameraFrame> {
    let proj = make_perspective(60f64.to_radians(), f64::from(w) / f64::from(h), 0.1, 100.0).unwrap();
    (0..n)
        .map(|i| {
            let dx = 0.01 * i as f64 - 0.05;
            let c2w = Matrix4::new_translation(&Vector3::new(dx, 0.003 * i as f64, 0.0));
            CameraFrame::new(w, h, c2w, proj, i as u64).unwrap()
        })
        .collect()
}

fn visibility_gate() -> Outcome {
    let (w, h) = (160, 120);
    let (mut v, mut t) = grid(-3.0, 3.0, -2.0, 2.0, -4.0, 12, 0);
    let (ov, ot) = grid(-0.5, 0.5, -0.5, 0.5, -2.0, 1, v.len() as u32);
    v.extend(ov);
    t.extend(ot);
    let occluded = nearest_vertex(&v[..169], Point3::new(0.0, 0.0, -4.0));
    let twin = nearest_vertex(&v[..169], Point3::new(1.5, 0.0, -4.0));
    let mesh = SemanticMesh::new(v, t, 3).unwrap();
    let mut state = FusionState::new(&mesh, ClassSet::default(), FusionConfig::default()).unwrap();
    let scores = constant_scores(w, h, [0.8, 0.1, 0.1]);
    let mut twin_updates = 0;
    let mut occluded_updates = 0;
    for frame in jittered_frames(10, w, h) {
        let report = state.fuse_frame(&frame, &scores).unwrap();
        twin_updates += usize::from(report.updated.contains(&(twin as u32)));
        occluded_updates += usize::from(report.updated.contains(&(occluded as u32)));
    }
    let initial = ClassDistribution::uniform(3);
    let bit_identical = state
        .distribution(occluded)
        .probabilities()
        .iter()
        .zip(initial.probabilities())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        bit_identical && occluded_updates == 0 && twin_updates == 10,
        format!("occluded vertex untouched: {bit_identical} ({occluded_updates} updates); visible twin updated {twin_updates}/10 frames"),
    )
}

fn near_skip() -> Outcome {
    let (w, h) = (160, 120);
    let (mut v, mut t) = grid(-0.7, -0.3, -0.2, 0.2, -1.5, 4, 0);
    let (fv, ft) = grid(0.6, 1.4, -0.4, 0.4, -3.0, 4, v.len() as u32);
    v.extend(fv);
    t.extend(ft);
    let near = nearest_vertex(&v, Point3::new(-0.5, 0.0, -1.5));
    let far = nearest_vertex(&v, Point3::new(1.0, 0.0, -3.0));
    let mesh = SemanticMesh::new(v, t, 3).unwrap();
    let mut state = FusionState::new(&mesh, ClassSet::default(), FusionConfig::default()).unwrap();
    let scores = constant_scores(w, h, [0.1, 0.1, 0.8]);
    let (mut near_skipped, mut near_updated, mut far_updated) = (0, 0, 0);
    for frame in jittered_frames(10, w, h) {
        let report = state.fuse_frame(&frame, &scores).unwrap();
        near_skipped += usize::from(report.skipped_near.contains(&(near as u32)));
        near_updated += usize::from(report.updated.contains(&(near as u32)));
        far_updated += usize::from(report.updated.contains(&(far as u32)));
    }
    let near_same = state.distribution(near) == &ClassDistribution::uniform(3);
    outcome(
        near_updated == 0 && near_skipped == 10 && near_same && far_updated == 10,
        format!(
            "1.5 m vertex: skipped {near_skipped}/10, updated {near_updated}; 3.0 m vertex updated {far_updated}/10"
        ),
    )
}

/// A connected strip of `n` triangles, all labeled `class`.
fn strip(n: u32, class: u8, classes: &ClassSet) -> SemanticMesh {
    let cols = n / 2 + 1;
    let mut v = Vec::new();
    for i in 0..=cols {
        v.push(Point3::new(f64::from(i), 0.0, 0.0));
        v.push(Point3::new(f64::from(i), 1.0, 0.0));
    }
    let mut t = Vec::new();
    for k in 0..n {
        let i = k / 2;
        t.push(if k % 2 == 0 {
            [2 * i, 2 * i + 2, 2 * i + 1]
        } else {
            [2 * i + 1, 2 * i + 2, 2 * i + 3]
        });
    }
    let labels = vec![class; v.len()];
    SemanticMesh::new(v, t, classes.len())
        .unwrap()
        .with_labels(labels, classes)
        .unwrap()
}

fn thresholds() -> Outcome {
    let classes = ClassSet::default();
    let table = ThresholdTable::default();
    let kept = |n: u32, name: &str| {
        let class = classes.index_of(name).unwrap() as u8;
        let mesh = strip(n, class, &classes);
        let comps = extract_components(&mesh, mesh.labels().unwrap(), &classes).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].triangle_count(), n as usize);
        filter_components(comps, &table).unwrap().len() == 1
    };
    let results = [
        (30, "Chair", false),
        (31, "Chair", true),
        (5, "Lamp", false),
        (6, "Lamp", true),
    ];
    let mut detail = Vec::new();
    let mut pass = true;
    for (n, class, expect) in results {
        let got = kept(n, class);
        pass &= got == expect;
        detail.push(format!("{class} {n}: {}", if got { "kept" } else { "dropped" }));
    }
    outcome(pass, detail.join(", "))
}

/// Textbook formulas over the raw counts; classes without ground-truth
/// support are left out of the means.
fn naive_scores(n: &[Vec<u64>]) -> [f64; 4] {
    let k = n.len();
    let t: Vec<f64> = (0..k).map(|i| n[i].iter().sum::<u64>() as f64).collect();
    let col: Vec<f64> = (0..k).map(|j| (0..k).map(|i| n[i][j]).sum::<u64>() as f64).collect();
    let total: f64 = t.iter().sum();
    let diag: f64 = (0..k).map(|i| n[i][i] as f64).sum();
    let present: Vec<usize> = (0..k).filter(|&i| t[i] > 0.0).collect();
    let iu = |i: usize| n[i][i] as f64 / (t[i] + col[i] - n[i][i] as f64);
    let mean_acc = present.iter().map(|&i| n[i][i] as f64 / t[i]).sum::<f64>() / present.len() as f64;
    let mean_iu = present.iter().map(|&i| iu(i)).sum::<f64>() / present.len() as f64;
    let fw = present.iter().map(|&i| t[i] * iu(i)).sum::<f64>() / total;
    [diag / total, mean_acc, mean_iu, fw]
}

fn library_scores(c: &ConfusionMatrix) -> [f64; 4] {
    [
        c.pixel_accuracy().unwrap(),
        c.mean_accuracy().unwrap(),
        c.mean_iu().unwrap(),
        c.frequency_weighted_iu().unwrap(),
    ]
}

fn metrics() -> Outcome {
    let perfect = ConfusionMatrix::from_counts(vec![vec![40, 0, 0], vec![0, 25, 0], vec![0, 0, 35]]).unwrap();
    let p = library_scores(&perfect);
    let perfect_ok = p.iter().all(|&v| format!("{v:.6}") == "1.000000");

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(2..=6);
        let mut rows: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(0..1000)).collect())
            .collect();
        if rng.random_bool(0.2) {
            let empty = rng.random_range(0..k);
            rows[empty] = vec![0; k];
        }
        let c = ConfusionMatrix::from_counts(rows.clone()).unwrap();
        worst = worst.max(max_diff(&library_scores(&c), &naive_scores(&rows)));
    }

    let example = ConfusionMatrix::from_counts(vec![vec![50, 50], vec![0, 100]]).unwrap();
    let acc = example.pixel_accuracy().unwrap();
    let miu = example.mean_iu().unwrap();
    let example_ok = (acc - 0.75).abs() <= 1e-9 && (miu - 7.0 / 12.0).abs() <= 1e-9;
    outcome(
        perfect_ok && worst <= 1e-12 && example_ok,
        format!(
            "perfect {:?}; 200 random vs naive max diff {worst:.1e}; example acc {acc:.6} mean IU {miu:.6}",
            p.map(|v| format!("{v:.6}"))
        ),
    )
}

fn class_counts(names: impl Iterator<Item = String>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for n in names {
        *out.entry(n).or_insert(0) += 1;
    }
    out
}

fn end_to_end(first: &SimulationReport, elapsed: Duration, config: &RunConfig) -> Outcome {
    let second = run_simulation(config, None).unwrap();
    let accuracy = first.evaluation.vertex_accuracy();
    let truth = class_counts(first.spec.objects.iter().map(|o| o.primitive.class_name().to_string()));
    let found = class_counts(first.components.iter().map(|c| c.class_name.clone()));
    let same_bits = |a: &SimulationReport, b: &SimulationReport| {
        let (fa, fb) = (a.server.fusion.as_ref().unwrap(), b.server.fusion.as_ref().unwrap());
        fa.mesh()
            .distributions()
            .iter()
            .zip(fb.mesh().distributions())
            .all(|(x, y)| {
                x.probabilities()
                    .iter()
                    .zip(y.probabilities())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    };
    let deterministic = first.fused_labels == second.fused_labels
        && same_bits(first, &second)
        && first.components == second.components
        && first.server.action_log() == second.server.action_log()
        && first.evaluation == second.evaluation;
    outcome(
        accuracy >= 0.95 && truth == found && deterministic && elapsed < Duration::from_secs(120),
        format!(
            "vertex accuracy {:.4} over {} visible object vertices; components {:?} vs objects {:?}; deterministic: {deterministic}; run {:.1} s",
            accuracy,
            first.evaluation.visible_object_vertices,
            found,
            truth,
            elapsed.as_secs_f64()
        ),
    )
}

fn protocol() -> Outcome {
    let mut runner = TestRunner::new(quiet(10_000));
    let roundtrips = runner.run(&common::wire_message(), |m| {
        let bytes = encode(&m).unwrap();
        assert_eq!(decode(&bytes).unwrap(), Decoded::Message(m, bytes.len()));
        Ok(())
    });

    let mut runner = TestRunner::new(quiet(500));
    let strategy = (proptest::collection::vec(common::wire_message(), 1..8), 1usize..97);
    let mut chunked_ok = true;
    for _ in 0..500 {
        let (messages, step) = strategy.new_tree(&mut runner).unwrap().current();
        let stream: Vec<u8> = messages.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut reader = FrameReader::new(ChunkedReader {
            data: stream,
            pos: 0,
            step,
        });
        for m in &messages {
            chunked_ok &= reader.next_message().unwrap().as_ref() == Some(m);
        }
        chunked_ok &= reader.next_message().unwrap().is_none();
    }

    // Frame before mesh, then a proper mesh and frame.
    let classes = ClassSet::default();
    let scene = generate_scene(&SceneSpec::random(0, 1, 8).unwrap(), &classes).unwrap();
    let traj = generate_trajectory(&scene, &classes, &TrajectoryStyle::default_orbit(), 1, 8).unwrap();
    let frame = traj.frames(&Intrinsics::with_size(64, 36)).unwrap().remove(0);
    let image = render_bgra(&scene, &frame, &classes);
    let mut input = encode(&frame_capture(&frame, &image)).unwrap();
    input.extend(encode(&mesh_upload(&scene.geometry_only(3))).unwrap());
    input.extend(encode(&frame_capture(&frame, &image)).unwrap());
    let segmenter = OracleSegmenter::new(scene, classes, NoiseModel::exact(3, 0)).unwrap();
    let mut output = Vec::new();
    let report = serve(
        Cursor::new(input),
        &mut output,
        &segmenter,
        &ServerConfig::default(),
        || {},
    );
    let mut replies = FrameReader::new(Cursor::new(output));
    let first = replies.next_message().unwrap();
    let gate_ok = matches!(
        first,
        Some(WireMessage::ProtocolError {
            code: error_code::MESH_FIRST,
            ..
        })
    ) && report.state.frames_fused == 1
        && report.batches.is_empty();

    let config = RunConfig {
        width: 224,
        height: 126,
        selection_step: None,
        ..RunConfig::default()
    };
    let sim = run_simulation(&config, None).unwrap();
    let batches = (sim.server.batches.len(), sim.client.batches.len());
    outcome(
        roundtrips.is_ok() && chunked_ok && gate_ok && batches == (4, 4),
        format!(
            "10000 roundtrips: {}; 500 chunked streams: {chunked_ok}; frame before mesh rejected: {gate_ok}; 24 frames / batch 5 -> {} batches sent, {} received",
            if roundtrips.is_ok() { "ok" } else { "failed" },
            batches.0,
            batches.1
        ),
    )
}

fn quiet(cases: u32) -> Config {
    Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    }
}

struct ChunkedReader {
    data: Vec<u8>,
    pos: usize,
    step: usize,
}

impl std::io::Read for ChunkedReader {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.step.min(buf.len()).min(self.data.len() - self.pos);
        buf[..n].copy_from_slice(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn throughput() -> Outcome {
    let base = RunConfig {
        density: 500.0,
        selection_step: None,
        ..RunConfig::default()
    };
    let open = run_simulation(&base, None).unwrap();
    let triangles = open.scene.triangles().len();
    let fps = open.client.frames_per_second().unwrap_or(0.0);
    let fps_ok = fps >= 1.0 && (40_000..=60_000).contains(&triangles) && open.server.state.frames_fused == 24;

    let mut maxima = Vec::new();
    let mut lines = Vec::new();
    for (name, pacing) in [("fast", 30), ("medium", 60), ("slow", 100)] {
        let config = RunConfig {
            throttle_bytes_per_sec: Some(1_800_000),
            pacing,
            frames: 8,
            ..base.clone()
        };
        let run = run_simulation(&config, None).unwrap();
        let samples: Vec<u64> = run.client.backlog.iter().map(|b| b.backlog).collect();
        lines.push(format!(
            "{name}({pacing}) backlog {samples:?} server queue max {}",
            run.server.state.backlog_max
        ));
        maxima.push((
            samples.first().copied().unwrap_or(0),
            samples.last().copied().unwrap_or(0),
            run.client.max_backlog,
        ));
    }
    let (fast, medium, slow) = (maxima[0], maxima[1], maxima[2]);
    let trend_ok = fast.1 > fast.0 && fast.2 >= 3 && slow.2 == 0 && fast.2 > medium.2 && medium.2 >= slow.2;
    outcome(
        fps_ok && trend_ok,
        format!(
            "{fps:.2} fused frames/s at 896x504 with {triangles} triangles; throttled 1.8 MB/s: {}",
            lines.join("; ")
        ),
    )
}

/// Every triangle of every component, plane-then-inside test.
fn oracle_raycast(origin: Point3<f64>, dir: Vector3<f64>, comps: &[LabeledComponent]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for c in comps {
        for t in &c.triangles {
            let [a, b, cc] = t.map(|i| c.vertices[i as usize]);
            let n = (b - a).cross(&(cc - a));
            let denom = n.dot(&dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let s = n.dot(&(a - origin)) / denom;
            if s <= 0.0 {
                continue;
            }
            let p = origin + dir * s;
            let inside = [(a, b), (b, cc), (cc, a)]
                .iter()
                .all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) >= 0.0);
            if inside && best.is_none_or(|v| s < v) {
                best = Some(s);
            }
        }
    }
    best
}

fn interaction(e2e: &SimulationReport) -> Outcome {
    let classes = ClassSet::default();
    let scene = &e2e.scene;
    let comps = filter_components(
        extract_components(scene, scene.labels().unwrap(), &classes).unwrap(),
        &ThresholdTable::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut hits, mut mismatches, mut worst) = (0, 0, 0.0f64);
    for _ in 0..10_000 {
        let origin = Point3::new(
            rng.random_range(-1.8..1.8),
            rng.random_range(0.2..2.5),
            rng.random_range(-1.8..1.8),
        );
        let target = if rng.random_bool(0.8) {
            let c = &comps[rng.random_range(0..comps.len())];
            let v = c.vertices[rng.random_range(0..c.vertices.len())];
            v + Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            )
        } else {
            origin
                + Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
        };
        let Ok(ray) = GazeRay::towards(origin, target) else {
            continue;
        };
        let got = raycast(&ray, &comps).map(|h| h.distance);
        let expected = oracle_raycast(ray.origin(), ray.direction(), &comps);
        match (got, expected) {
            (Some(g), Some(e)) => {
                hits += 1;
                worst = worst.max((g - e).abs());
                mismatches += usize::from((g - e).abs() > 1e-9);
            }
            (None, None) => {}
            _ => mismatches += 1,
        }
    }

    let scripted = e2e
        .server
        .actions
        .iter()
        .any(|a| a.class_name.eq_ignore_ascii_case("lamp") && a.toggled)
        && e2e.server.actuator.lamp_on
        && e2e
            .client
            .selection
            .as_ref()
            .is_some_and(|s| s.hit.class_name == "Lamp");

    let lamp = Selection {
        point: Point3::origin(),
        class_name: "Lamp".into(),
    };
    let chair = Selection {
        point: Point3::origin(),
        class_name: "Chair".into(),
    };
    let mut parity_ok = true;
    for n in 1..=20u64 {
        let mut state = ActuatorState::default();
        for i in 0..2 * n {
            if rng.random_bool(0.3) {
                state = handle_selection(&chair, &state, i).0;
            }
            state = handle_selection(&lamp, &state, i).0;
        }
        parity_ok &= !state.lamp_on && state.toggle_count == 2 * n;
        parity_ok &= handle_selection(&lamp, &state, 0).0.lamp_on;
    }
    outcome(
        mismatches == 0 && scripted && parity_ok,
        format!(
            "10000 rays ({hits} hits), {mismatches} disagreements, max distance diff {worst:.1e}; scripted lamp selection toggled on: {scripted}; parity after 2n selections: {parity_ok}"
        ),
    )
}

fn main() {
    // libtest-style flags are accepted and ignored; `--list` reports nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    println!("acceptance criteria");
    let mut results = vec![
        criterion(1, "Bayes update algebra", bayes_algebra),
        criterion(2, "rasterizer vs ray-casting oracle", rasterizer_oracle),
        criterion(3, "visibility gate", visibility_gate),
        criterion(4, "near-skip rule", near_skip),
        criterion(5, "component thresholds", thresholds),
        criterion(6, "segmentation metrics", metrics),
    ];

    let config = RunConfig::default();
    let started = Instant::now();
    let e2e = catch_unwind(|| run_simulation(&config, None));
    let elapsed = started.elapsed();
    match &e2e {
        Ok(Ok(report)) => results.push(criterion(7, "end-to-end synthetic accuracy", || {
            end_to_end(report, elapsed, &config)
        })),
        _ => results.push(criterion(7, "end-to-end synthetic accuracy", || {
            outcome(false, "default simulation failed")
        })),
    }
    results.push(criterion(8, "protocol", protocol));
    results.push(criterion(9, "throughput and backlog", throughput));
    match &e2e {
        Ok(Ok(report)) => results.push(criterion(10, "interaction", || interaction(report))),
        _ => results.push(criterion(10, "interaction", || {
            outcome(false, "default simulation failed")
        })),
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
