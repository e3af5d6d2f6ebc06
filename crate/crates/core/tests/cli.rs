//! End-to-end runs of the `aomap` binary on a small synthetic scene.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use aomap::dataset::synthetic::{scenes, Intrinsics};
use aomap::geometry::{Pose, Vec3};

fn aomap(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_aomap"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str], stdin: &str) -> String {
    let out = aomap(args, stdin);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a wall scene with a 64x48 sensor and a matching config, then
/// integrates it. Returns the map path.
fn integrated_map(dir: &Path) -> std::path::PathBuf {
    let mut scene = scenes::flat_wall(1.5, 4);
    scene.intrinsics = Some(Intrinsics {
        width: 64,
        height: 48,
        fx: 52.5,
        fy: 52.5,
        cx: 31.5,
        cy: 23.5,
    });
    let scene_path = dir.join("wall.aoscene");
    std::fs::write(&scene_path, scene.to_text()).unwrap();
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "v_res = 0.05\nmap_size = 5.12\n").unwrap();
    let map = dir.join("wall.aom");
    let stats = dir.join("stats.csv");
    let out = ok(
        &[
            "integrate",
            "--config",
            s(&cfg),
            "--input",
            s(&scene_path),
            "--output",
            s(&map),
            "--stats",
            s(&stats),
        ],
        "",
    );
    assert!(out.starts_with("integrated 4 frames"), "{out}");
    let csv = std::fs::read_to_string(&stats).unwrap();
    assert_eq!(csv.lines().count(), 5);
    map
}

#[test]
fn integrate_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let map = integrated_map(dir.path());

    let stats: serde_json::Value = serde_json::from_str(&ok(&["stats", "--map", s(&map)], "")).unwrap();
    assert!(stats["blocks"].as_u64().unwrap() > 0);
    assert_eq!(stats["v_res"].as_f64(), Some(0.05));

    let mesh = dir.path().join("wall.ply");
    let out = ok(&["mesh", "--map", s(&map), "--out", s(&mesh)], "");
    assert!(!out.starts_with("0 vertices"), "{out}");
    assert!(std::fs::read(&mesh).unwrap().starts_with(b"ply"));

    let slice = dir.path().join("slice.png");
    ok(&["slice", "--map", s(&map), "--axis", "z", "--coord", "0.01", "--out", s(&slice)], "");
    let img = image::open(&slice).unwrap();
    assert_eq!(img.width(), img.height());
}

#[test]
fn check_reports_one_verdict_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let map = integrated_map(dir.path());
    // In front of the wall, through the wall, and behind it.
    let input = concat!(
        "{\"start\": [0.5, 0.0, 0.0], \"end\": [0.8, 0.0, 0.0], \"radius\": 0.05}\n",
        "\n",
        "{\"start\": [1.0, 0.0, 0.0], \"end\": [2.0, 0.0, 0.0], \"radius\": 0.05}\n",
        "{\"start\": [2.3, 0.0, 0.0], \"end\": [2.3, 0.0, 0.0], \"radius\": 0.05}\n",
    );
    let out = ok(&["check", "--map", s(&map)], input);
    let verdicts: Vec<String> = out
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert!(v["checks"].as_u64().unwrap() > 0);
            v["verdict"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(verdicts, ["safe", "unsafe", "unobserved"]);
    let out = ok(&["check", "--map", s(&map), "--unknown-unsafe"], input);
    assert!(out.lines().nth(2).unwrap().contains("\"unsafe\""), "{out}");

    let bad = aomap(&["check", "--map", s(&map)], "{\"start\": [0, 0, 0]}\n");
    assert!(!bad.status.success());
    assert!(!bad.stderr.is_empty());
}

#[test]
fn render_sees_the_wall() {
    let dir = tempfile::tempdir().unwrap();
    let map = integrated_map(dir.path());
    let cfg = dir.path().join("render.toml");
    std::fs::write(&cfg, "v_res = 0.05\nwidth = 64\nheight = 48\nfx = 52.5\nfy = 52.5\ncx = 31.5\ncy = 23.5\n").unwrap();
    let depth = dir.path().join("depth.png");
    let normals = dir.path().join("normals.png");
    let pose = Pose::look_at(Vec3::zeros(), Vec3::new(1.5, 0.0, 0.0), -Vec3::z());
    let q = pose.quaternion();
    let nums: Vec<String> = [0.0, 0.0, 0.0, q.i, q.j, q.k, q.w].iter().map(|x| x.to_string()).collect();
    let mut args = vec!["render", "--map", s(&map), "--config", s(&cfg), "--pose"];
    args.extend(nums.iter().map(String::as_str));
    args.extend(["--out", s(&depth), "--normals", s(&normals)]);
    ok(&args, "");
    let d = aomap::dataset::tum::load_depth_png(&depth).unwrap();
    let z = d.get(32, 24);
    assert!((z - 1.5).abs() <= 0.1, "centre depth {z}");
    assert!(normals.exists());
}

#[test]
fn errors_exit_nonzero() {
    let out = aomap(&["stats", "--map", "/nonexistent/map.aom"], "");
    assert!(!out.status.success());
    let out = aomap(&["nonsense"], "");
    assert!(!out.status.success());
}
