use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn semfuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semfuse"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    semfuse().args(args).current_dir(cwd).output().expect("spawn semfuse")
}

const SMALL: &[&str] = &[
    "--width",
    "160",
    "--height",
    "90",
    "--frames",
    "10",
    "--set",
    "density=200",
];

fn tree(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.push(path.display().to_string());
        }
    }
    out.sort();
    out
}

#[test]
fn gen_scene_writes_scene_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "gen-scene",
            "--seed",
            "4",
            "--chairs",
            "1",
            "--lamps",
            "1",
            "--out",
            "scene.ply",
            "--traj",
            "orbit:6",
            "--traj-out",
            "traj.txt",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(dir.path().join("traj.txt")).unwrap();
    assert_eq!(traj.lines().count(), 6);
    assert!(traj.lines().all(|l| l.split_whitespace().count() == 16));
    assert!(fs::read(dir.path().join("scene.ply")).unwrap().starts_with(b"ply\n"));
}

#[test]
fn simulate_is_deterministic_and_stays_in_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let mut args = vec!["simulate", "--out", name];
        args.extend_from_slice(SMALL);
        let out = run(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("lamp on: true"));
    }
    let top: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(top.len(), 2);
    let a = tree(&dir.path().join("a"));
    let b = tree(&dir.path().join("b"));
    assert_eq!(a.len(), b.len());
    for (fa, fb) in a.iter().zip(&b) {
        if fa.ends_with("session_metrics.csv") {
            continue;
        }
        assert_eq!(fs::read(fa).unwrap(), fs::read(fb).unwrap(), "{fa} differs");
    }
    let csv = fs::read_to_string(dir.path().join("a/session_metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("frame_index,bytes_in,backlog_depth,fuse_ms"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate", "--port", "70000"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(1));
    fs::write(dir.path().join("bad.conf"), "batch_size = 5\ncolour = blue\n").unwrap();
    let out = run(&["simulate", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--pred", "missing", "--gt", "missing"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let gen = run(
        &[
            "gen-scene",
            "--out",
            "s.ply",
            "--traj",
            "orbit:2",
            "--traj-out",
            "t.txt",
            "--density",
            "100",
        ],
        dir.path(),
    );
    assert!(gen.status.success());
    let out = run(
        &["replay", "--scene", "s.ply", "--traj", "t.txt", "--connect", &addr],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

fn write_pgm(path: &Path, w: u32, h: u32, pixels: &[u8]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).unwrap();
}

#[test]
fn eval_scores_pgm_pairs() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("pred")).unwrap();
    fs::create_dir(dir.path().join("gt")).unwrap();
    // Truth: 100 of class 0, 100 of class 1. Half of class 0 predicted as 1.
    let truth: Vec<u8> = (0..200).map(|i| u8::from(i >= 100)).collect();
    let pred: Vec<u8> = (0..200).map(|i| u8::from(i >= 50)).collect();
    write_pgm(&dir.path().join("gt/f0.pgm"), 20, 10, &truth);
    write_pgm(&dir.path().join("pred/f0.pgm"), 20, 10, &pred);
    let out = run(
        &[
            "eval",
            "--pred",
            "pred",
            "--gt",
            "gt",
            "--classes",
            "A,B",
            "--out",
            "report",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("report/metrics.csv")).unwrap();
    assert!(csv.contains("pooled,75.00,75.00,58.33,58.33"), "{csv}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean IU"));
}

#[test]
fn serve_and_replay_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(
        &[
            "gen-scene",
            "--seed",
            "1",
            "--density",
            "200",
            "--out",
            "scene.ply",
            "--traj",
            "orbit:6",
            "--traj-out",
            "traj.txt",
        ],
        dir.path(),
    );
    assert!(gen.status.success());
    let mut server = semfuse()
        .args([
            "serve",
            "--scene",
            "scene.ply",
            "--port",
            "0",
            "--batch-size",
            "3",
            "--width",
            "160",
            "--height",
            "90",
            "--out",
            "server",
        ])
        .current_dir(dir.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listening line")
        .to_string();
    let client = run(
        &[
            "replay",
            "--scene",
            "scene.ply",
            "--traj",
            "traj.txt",
            "--connect",
            &addr,
            "--width",
            "160",
            "--height",
            "90",
            "--out",
            "client",
        ],
        dir.path(),
    );
    assert!(client.status.success(), "{}", String::from_utf8_lossy(&client.stderr));
    let stdout = String::from_utf8_lossy(&client.stdout);
    assert!(stdout.contains("frames sent: 6, acked: 6"), "{stdout}");
    assert!(server.wait().unwrap().success());
    let metrics = fs::read_to_string(dir.path().join("server/session_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
    assert!(dir.path().join("server/fused.ply").is_file());
    assert!(dir.path().join("server/batch_001").is_dir());
    assert!(dir.path().join("client/client_backlog.csv").is_file());
}

#[test]
fn smap_argmax_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = b"SMAP".to_vec();
    for v in [2u32, 1, 3] {
        bytes.extend(v.to_le_bytes());
    }
    for v in [0.7f32, 0.2, 0.1, 0.1, 0.1, 0.8] {
        bytes.extend(v.to_le_bytes());
    }
    fs::write(dir.path().join("m.smap"), bytes).unwrap();
    let out = run(&["smap-argmax", "m.smap", "--out", "m.pgm"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dir.path().join("m.pgm")).unwrap(), b"P5\n2 1\n255\n\x00\x02");
}
