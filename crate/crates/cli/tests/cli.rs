// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semfuse_core::formats::{read_bev, read_json, write_json};
use semfuse_core::fuse::{fuse_concat_conv, ConvKernel};
use semfuse_core::pillar::PillarSpec;
use semfuse_core::pipeline::Kernels;
use semfuse_core::SemanticCombiner;
use serde_json::Value;

fn semfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semfuse")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a light scene config and synthesizes it into `dir/scene`.
fn synth(dir: &Path, seed: u64, extra: &[&str]) -> PathBuf {
    synth_with(dir, r#"{"feature_channels": 16, "points_per_m2": 2.0}"#, seed, extra)
}

fn synth_with(dir: &Path, config: &str, seed: u64, extra: &[&str]) -> PathBuf {
    let cfg = dir.join("scene_config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("scene");
    let seed = seed.to_string();
    let mut args = vec!["synth", "--config", s(&cfg), "--out", s(&out), "--seed", &seed];
    args.extend_from_slice(extra);
    let o = semfuse(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn edit_pipeline(scene: &Path, name: &str, f: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = read_json(&scene.join("pipeline.json")).unwrap();
    f(&mut v);
    let p = scene.join(name);
    write_json(&p, &v).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    read_json(&dir.join("report.json")).unwrap()
}

#[test]
fn synth_writes_every_file() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 1, &[]);
    for f in [
        "calibration.json",
        "cloud.bin",
        "gt.txt",
        "scene.json",
        "pipeline.json",
        "kernels.json",
        "pillars.json",
        "eval.json",
        "masks/manifest.txt",
    ] {
        assert!(scene.join(f).is_file(), "{f} missing");
    }
    for k in 0..6 {
        assert!(scene.join(format!("features/cam{k}.feat")).is_file());
        assert!(scene.join(format!("masks/cam{k}.rle")).is_file());
    }
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (sa, sb) = (synth(a.path(), 9, &[]), synth(b.path(), 9, &[]));
    for f in [
        "cloud.bin",
        "gt.txt",
        "masks/cam3.rle",
        "features/cam0.feat",
        "calibration.json",
        "scene.json",
    ] {
        assert_eq!(
            fs::read(sa.join(f)).unwrap(),
            fs::read(sb.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn synth_census_hits_target() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.json");
    fs::write(&cfg, r#"{"feature_channels": 4, "points_per_m2": 1.0}"#).unwrap();
    let o = semfuse(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&t.path().join("s")),
        "--target-fg",
        "0.1564",
    ]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("census"))
        .unwrap()
        .to_string();
    let fg: f64 = line.rsplit('=').next().unwrap().parse().unwrap();
    assert!((fg - 0.1564).abs() <= 0.002, "{line}");
}

#[test]
fn ones_attention_matches_mapping() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 2, &[]);
    let ones = edit_pipeline(&scene, "ones.json", |v| {
        v["attention"] = serde_json::json!({"kind": "ones"})
    });
    let (ra, rb) = (t.path().join("ra"), t.path().join("rb"));
    assert_eq!(
        code(&semfuse(&[
            "run",
            "--config",
            s(&ones),
            "--out",
            s(&ra),
            "--mode",
            "mapping"
        ])),
        0
    );
    assert_eq!(
        code(&semfuse(&[
            "run",
            "--config",
            s(&ones),
            "--out",
            s(&rb),
            "--mode",
            "attention"
        ])),
        0
    );
    assert_eq!(report(&ra)["fused_digest"], report(&rb)["fused_digest"]);
    assert_eq!(
        fs::read(ra.join("fused.bev")).unwrap(),
        fs::read(rb.join("fused.bev")).unwrap()
    );
}

#[test]
fn semantic_mask_reduction_on_engineered_scene() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 4, &["--target-fg", "0.1564"]);
    let out = t.path().join("run");
    let o = semfuse(&["run", "--config", s(&scene.join("pipeline.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let reduction = r["reduction"].as_f64().unwrap();
    assert!((reduction - 0.8436).abs() <= 0.005, "reduction {reduction}");
    assert!((reduction - (1.0 - r["foreground_fraction"].as_f64().unwrap())).abs() < 1e-12);
    assert!(stdout(&o).contains("reduction 84."));
}

#[test]
fn additive_identity_equals_sum_of_stream_dumps() {
    let t = tempfile::tempdir().unwrap();
    // Camera features as deep as the pillar encoding, so identity kernels fit both streams.
    let scene = synth_with(t.path(), r#"{"feature_channels": 14, "points_per_m2": 2.0}"#, 5, &[]);
    let pillars: PillarSpec = read_json(&scene.join("pillars.json")).unwrap();
    let c = pillars.channel_count(10);
    assert_eq!(c, 14);
    let mut combiner = SemanticCombiner::zeros(c, 10);
    for k in 0..10 {
        combiner.weights[k * 11 + k] = 1.0;
    }
    let kernels = Kernels {
        combiner,
        concat: ConvKernel::zeros(c, 2 * c, 1),
        additive_cam: ConvKernel::identity(c),
        additive_lidar: ConvKernel::identity(c),
    };
    write_json(&scene.join("identity_kernels.json"), &kernels).unwrap();
    let cfg = edit_pipeline(&scene, "identity.json", |v| {
        v["kernels"] = "identity_kernels.json".into()
    });
    let out = t.path().join("run");
    let o = semfuse(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--fuser",
        "additive",
        "--dump-stages",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cam = read_bev(&out.join("camera.bev")).unwrap();
    let lidar = read_bev(&out.join("lidar.bev")).unwrap();
    let fused = read_bev(&out.join("fused.bev")).unwrap();
    let sum = cam.add(&lidar).unwrap();
    for (a, b) in fused.data().iter().zip(sum.data()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }
    assert!(out.join("painted.bin").is_file());
}

#[test]
fn stage_dumps_recombine_through_concat_fuser() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 6, &[]);
    let out = t.path().join("run");
    let o = semfuse(&[
        "run",
        "--config",
        s(&scene.join("pipeline.json")),
        "--out",
        s(&out),
        "--dump-stages",
    ]);
    assert_eq!(code(&o), 0);
    let kernels: Kernels = read_json(&scene.join("kernels.json")).unwrap();
    let cam = read_bev(&out.join("camera.bev")).unwrap();
    let lidar = read_bev(&out.join("lidar.bev")).unwrap();
    let fused = read_bev(&out.join("fused.bev")).unwrap();
    let again = fuse_concat_conv(&cam, &lidar, &kernels.concat).unwrap();
    for (a, b) in fused.data().iter().zip(again.data()) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
    }
    assert!(out.join("detections.txt").is_file());
}

#[test]
fn thread_override_does_not_change_results() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 7, &[]);
    let cfg = scene.join("pipeline.json");
    let digests: Vec<Value> = ["1", "3"]
        .iter()
        .map(|n| {
            let out = t.path().join(format!("t{n}"));
            assert_eq!(
                code(&semfuse(&[
                    "run",
                    "--config",
                    s(&cfg),
                    "--out",
                    s(&out),
                    "--threads",
                    n
                ])),
                0
            );
            report(&out)["fused_digest"].clone()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn eval_identity_and_empty() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 8, &[]);
    let gt = scene.join("gt.txt");
    let copy = t.path().join("dets.txt");
    fs::copy(&gt, &copy).unwrap();
    let o = semfuse(&[
        "eval",
        "--dets",
        s(&copy),
        "--gts",
        s(&gt),
        "--out",
        s(&t.path().join("m")),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("mAP 100.00  NDS 100.00"), "{}", stdout(&o));
    let m: Value = read_json(&t.path().join("m/metrics.json")).unwrap();
    assert_eq!(m["map"], 1.0);
    assert_eq!(m["nds"], 1.0);

    let empty = t.path().join("empty.txt");
    fs::write(&empty, "# no detections\n").unwrap();
    let o = semfuse(&["eval", "--dets", s(&empty), "--gts", s(&gt)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("mAP 0.00 "), "{}", stdout(&o));
}

#[test]
fn eval_oracle_translation_error() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(
        t.path(),
        10,
        &["--n-objects", "40", "--oracle-sigma", "0.5", "--oracle-seed", "3"],
    );
    let o = semfuse(&[
        "eval",
        "--dets",
        s(&scene.join("oracle_dets.txt")),
        "--gts",
        s(&scene.join("gt.txt")),
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let ate: f64 = text
        .split_whitespace()
        .skip_while(|w| *w != "mATE")
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.4..=0.85).contains(&ate), "{text}");
}

#[test]
fn bench_reports_masked_speedup() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 11, &["--target-fg", "0.1564"]);
    let cfg = scene.join("pipeline.json");
    let out = t.path().join("b");
    let o = semfuse(&["bench", "--config", s(&cfg), "--repetitions", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b: Value = read_json(&out.join("bench.json")).unwrap();
    assert!(b["pooled_ratio"].as_f64().unwrap() <= 0.17);
    let pool = b["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["stage"] == "pool")
        .unwrap();
    assert!(pool["masked"]["median"].as_f64().unwrap() < pool["unmasked"]["median"].as_f64().unwrap());
    assert!(stdout(&o).contains("pooling throughput"));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    // Usage.
    assert_eq!(code(&semfuse(&["frobnicate"])), 1);
    assert_eq!(code(&semfuse(&["run"])), 1);
    assert_eq!(
        code(&semfuse(&["bench", "--config", "x.json", "--repetitions", "2"])),
        1
    );
    assert_eq!(
        code(&semfuse(&[
            "run",
            "--config",
            "x.json",
            "--out",
            "o",
            "--mode",
            "attention+both"
        ])),
        1
    );
    assert_eq!(code(&semfuse(&["--help"])), 0);

    // Unwritable output: a path below a regular file.
    let blocker = t.path().join("file");
    fs::write(&blocker, "").unwrap();
    assert_eq!(code(&semfuse(&["synth", "--out", s(&blocker.join("sub"))])), 1);

    // Unreadable and malformed inputs.
    let bad = t.path().join("bad.txt");
    fs::write(&bad, "0 0.5 1 2\n").unwrap();
    assert_eq!(code(&semfuse(&["eval", "--dets", s(&bad), "--gts", s(&bad)])), 2);
    assert_eq!(code(&semfuse(&["eval", "--dets", "/nonexistent", "--gts", s(&bad)])), 2);
    let json = t.path().join("broken.json");
    fs::write(&json, "{ not json").unwrap();
    assert_eq!(code(&semfuse(&["run", "--config", s(&json), "--out", s(t.path())])), 2);

    // Contract violations.
    let cfg = t.path().join("neg.json");
    fs::write(&cfg, r#"{"points_per_m2": -1.0}"#).unwrap();
    let o = semfuse(&["synth", "--config", s(&cfg), "--out", s(&t.path().join("s"))]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("point density"));
}

#[test]
fn stage_errors_name_the_stage() {
    let t = tempfile::tempdir().unwrap();
    let scene = synth(t.path(), 12, &[]);
    // A combiner producing more channels than the feature images carry.
    let mut kernels: Kernels = read_json(&scene.join("kernels.json")).unwrap();
    kernels.combiner = SemanticCombiner::zeros(20, 10);
    write_json(&scene.join("kernels.json"), &kernels).unwrap();
    let o = semfuse(&[
        "run",
        "--config",
        s(&scene.join("pipeline.json")),
        "--out",
        s(&t.path().join("r")),
    ]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("embed stage") && err.contains("cam0"), "{err}");
}
