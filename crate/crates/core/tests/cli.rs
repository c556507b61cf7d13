mod common;

use std::path::{Path, PathBuf};

use common::rng;
use gridsight::cli::{
    cmd_detect, cmd_eval, cmd_gen_data, cmd_stream, cmd_train, run, DetectArgs, EvalArgs, GenDataArgs, StreamArgs,
    TrainArgs, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK,
};
use gridsight::data::{load_dataset, read_image, render_sample, write_ppm, Annotation, RgbImage};
use gridsight::io::{encode_checkpoint, parse_detections, parse_metrics_csv, save_checkpoint};
use gridsight::model::{Model, ModelConfig};
use gridsight::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small, fast topology for 64-pixel synthetic data.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = ModelConfig {
        name: "small".into(),
        input_size: 64,
        width: 8,
        ..ModelConfig::preset_c()
    };
    let p = dir.join("small.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p
}

fn gen(out: &Path, n: usize, n_val: usize, size: usize, seed: u64) {
    cmd_gen_data(&GenDataArgs { n, n_val: Some(n_val), classes: 3, size, seed, out: out.into() }).unwrap();
}

fn train_args(data: &Path, config: &Path, out: &Path, epochs: usize) -> TrainArgs {
    TrainArgs {
        data: data.into(),
        config: config.to_string_lossy().into_owned(),
        epochs,
        batch: 4,
        lr: 0.01,
        seed: 1,
        out: out.into(),
        no_aux: false,
    }
}

fn args(v: &[&str]) -> Vec<String> {
    std::iter::once("gridsight").chain(v.iter().copied()).map(String::from).collect()
}

fn noise_image(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    rng(seed).fill(&mut img.pixels[..]);
    img
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    assert_eq!(run(args(&["gen-data", "--n", "0", "--out", s(&empty)])), EXIT_OK);
    for split in ["train", "val"] {
        assert!(load_dataset(&empty, split, 3, 160).unwrap().is_empty());
    }

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, 8, 2, 64, 7);
    gen(&b, 8, 2, 64, 7);
    for split in ["train", "val"] {
        let da = load_dataset(&a, split, 3, 64).unwrap();
        assert_eq!(da.missing_labels, 0);
        for sample in &da.samples {
            let rel = format!("images/{split}/{}.ppm", sample.id);
            assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap());
            let rel = format!("labels/{split}/{}.txt", sample.id);
            assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap());
        }
    }
    assert_eq!(run(args(&["gen-data", "--classes", "6", "--out", s(&dir.path().join("c"))])), EXIT_INPUT);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(args(&["train", "--data", "/nonexistent/data", "--out", s(&out)])), EXIT_INPUT);
    assert_eq!(run(args(&["train", "--bogus"])), EXIT_INPUT);
    assert_eq!(run(args(&["--help"])), EXIT_OK);
    assert_eq!(run(args(&["eval", "--data", s(dir.path()), "--ckpt", "/nonexistent.gsd"])), EXIT_INPUT);
    assert_eq!(run(args(&["stream", "--preset", "zz", "--frames", "synth:2"])), EXIT_INPUT);

    let data = dir.path().join("data");
    gen(&data, 4, 0, 64, 3);
    let cfg = small_config(dir.path());
    let code = run(args(&["train", "--data", s(&data), "--config", s(&cfg), "--epochs", "3", "--lr", "1e30", "--out", s(&out)]));
    assert_eq!(code, EXIT_NUMERIC);

    assert_eq!(run(args(&["grad-check", "--skip-detector"])), EXIT_OK);
    assert_eq!(run(args(&["grad-check", "--skip-detector", "--tol", "0"])), EXIT_NUMERIC);
    assert_eq!(run(args(&["grad-check", "--skip-detector", "--fault-op", "silu"])), EXIT_NUMERIC);
}

#[test]
fn zero_epochs_write_header_and_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, 3, 1, 64, 1);
    let cfg_path = small_config(dir.path());
    let out = dir.path().join("run");
    cmd_train(&train_args(&data, &cfg_path, &out, 0)).unwrap();

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(parse_metrics_csv(&csv).unwrap().is_empty());

    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    let init = encode_checkpoint(&Model::new(cfg.with_seed(1)).unwrap()).unwrap();
    assert_eq!(std::fs::read(out.join("best.gsd")).unwrap(), init);
    assert_eq!(std::fs::read(out.join("last.gsd")).unwrap(), init);
}

#[test]
fn training_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, 6, 2, 64, 2);
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_train(&train_args(&data, &cfg, &a, 2)).unwrap();
    cmd_train(&train_args(&data, &cfg, &b, 2)).unwrap();
    for f in ["metrics.csv", "best.gsd", "last.gsd"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = parse_metrics_csv(&std::fs::read_to_string(a.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.eval.is_some()));

    let c = dir.path().join("c");
    cmd_train(&TrainArgs { seed: 2, ..train_args(&data, &cfg, &c, 2) }).unwrap();
    assert_ne!(std::fs::read(a.join("last.gsd")).unwrap(), std::fs::read(c.join("last.gsd")).unwrap());
}

fn fresh_checkpoint(dir: &Path, classes: usize) -> PathBuf {
    let p = dir.join(format!("fresh{classes}.gsd"));
    let cfg = ModelConfig { input_size: 64, width: 8, ..ModelConfig::preset_c() }.with_classes(classes);
    save_checkpoint(&Model::new(cfg).unwrap(), &p).unwrap();
    p
}

#[test]
fn eval_conventions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, 2, 3, 64, 4);
    let ckpt = fresh_checkpoint(dir.path(), 3);
    let out = dir.path().join("eval");
    let base = EvalArgs {
        data: data.clone(),
        ckpt: ckpt.clone(),
        split: "val".into(),
        conf: 1.01,
        iou: 0.45,
        out: Some(out.clone()),
    };
    let r = cmd_eval(&base).unwrap();
    assert_eq!(r.detections, 0);
    assert_eq!((r.precision, r.recall, r.map50), (0.0, 0.0, 0.0));
    assert_eq!(std::fs::read_to_string(out.join("detections.txt")).unwrap(), "");
    assert!(out.join("report.csv").is_file() && out.join("pr_curve.csv").is_file());

    let r = cmd_eval(&EvalArgs { conf: 0.001, ..base.clone() }).unwrap();
    assert!(r.detections > 0);
    let ids: Vec<String> = load_dataset(&data, "val", 3, 64).unwrap().samples.into_iter().map(|s| s.id).collect();
    let text = std::fs::read_to_string(out.join("detections.txt")).unwrap();
    let dets = parse_detections(&out.join("detections.txt"), &text, &ids).unwrap();
    assert_eq!(dets.iter().map(Vec::len).sum::<usize>(), r.detections);

    let wrong = fresh_checkpoint(dir.path(), 2);
    let e = cmd_eval(&EvalArgs { ckpt: wrong, ..base }).unwrap_err();
    assert!(matches!(e, Error::Config(_)), "{e}");
}

#[test]
fn detect_preserves_size_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fresh_checkpoint(dir.path(), 3);
    let input = dir.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    let img = noise_image(200, 120, 1);
    write_ppm(&input.join("wide.ppm"), &img).unwrap();
    write_ppm(&input.join("small.ppm"), &noise_image(33, 47, 2)).unwrap();
    std::fs::write(input.join("broken.ppm"), b"P6\n10 10\n255\nshort").unwrap();

    let out = dir.path().join("out");
    let a = DetectArgs { ckpt: ckpt.clone(), input: input.clone(), out: out.clone(), conf: 1.01, iou: 0.45 };
    assert_eq!(cmd_detect(&a).unwrap(), EXIT_OK);
    let back = read_image(&out.join("wide.ppm")).unwrap();
    assert_eq!((back.width, back.height), (200, 120));
    // nothing detected, so the picture passes through untouched
    assert_eq!(back, img);
    let small = read_image(&out.join("small.ppm")).unwrap();
    assert_eq!((small.width, small.height), (33, 47));
    assert!(!out.join("broken.ppm").exists());

    let low = DetectArgs { conf: 0.001, out: dir.path().join("low"), ..a };
    assert_eq!(cmd_detect(&low).unwrap(), EXIT_OK);
    let drawn = read_image(&dir.path().join("low/wide.ppm")).unwrap();
    assert_eq!((drawn.width, drawn.height), (200, 120));
    assert_ne!(drawn, img);

    let bad_only = dir.path().join("bad");
    std::fs::create_dir_all(&bad_only).unwrap();
    std::fs::write(bad_only.join("x.ppm"), b"garbage").unwrap();
    let code = run(args(&["detect", "--ckpt", s(&ckpt), "--input", s(&bad_only), "--out", s(&dir.path().join("o2"))]));
    assert_eq!(code, EXIT_INPUT);
}

fn stream_args(frames: &str, preset: &str) -> StreamArgs {
    StreamArgs {
        ckpt: None,
        preset: Some(preset.into()),
        frames: frames.into(),
        fps_target: None,
        out: None,
        conf: 0.001,
        iou: 0.45,
        seed: 0,
    }
}

#[test]
fn stream_is_deterministic_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    let img = noise_image(64, 64, 5);
    for k in 0..10 {
        write_ppm(&frames.join(format!("frame_{k}.ppm")), &img).unwrap();
    }
    let out = dir.path().join("out");
    let a = StreamArgs { out: Some(out.clone()), ..stream_args(s(&frames), s(&cfg)) };
    let res = cmd_stream(&a).unwrap();
    assert_eq!(res.frames.len(), 10);
    assert!(!res.frames[0].1.is_empty());
    for (_, dets) in &res.frames {
        assert_eq!(dets, &res.frames[0].1);
    }
    assert_eq!(res.latency.frames(), 10);
    for f in ["detections.txt", "latency.txt", "latency.csv"] {
        assert!(out.join(f).is_file());
    }

    let empty = dir.path().join("none");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(cmd_stream(&stream_args(s(&empty), s(&cfg))).is_err());
    assert_eq!(run(args(&["stream", "--preset", s(&cfg), "--frames", s(&empty)])), EXIT_INPUT);
    assert_eq!(run(args(&["stream", "--preset", s(&cfg), "--frames", "synth:0"])), EXIT_INPUT);
}

#[test]
fn stream_fps_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for target in [None, Some(1000.0), Some(40.0)] {
        let a = StreamArgs { fps_target: target, ..stream_args("synth:20:3:64", s(&cfg)) };
        let r = cmd_stream(&a).unwrap().latency;
        assert_eq!(r.frames(), 20);
        assert!(r.p50_ms <= r.p95_ms);
        assert!(r.consistent(0.1), "achieved {} vs bound {}", r.achieved_fps, r.fps);
        if let Some(t) = target {
            // pacing never runs faster than asked
            assert!(r.achieved_fps <= t * 1.1, "achieved {} for target {t}", r.achieved_fps);
        }
    }
}

/// Trains to memorization on a handful of images, then checks eval on the
/// training split and a detect run over every training image: each must come
/// back with exactly its labelled classes, three-glyph images included.
#[test]
fn overfit_sanity_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, 8, 0, 64, 11);
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    cmd_train(&TrainArgs { epochs: 800, lr: 0.005, ..train_args(&data, &cfg, &out, 0) }).unwrap();
    let ckpt = out.join("last.gsd");

    let r = cmd_eval(&EvalArgs {
        data: data.clone(),
        ckpt: ckpt.clone(),
        split: "train".into(),
        conf: 0.001,
        iou: 0.45,
        out: None,
    })
    .unwrap();
    assert!(r.map50 >= 0.95, "train-split map50 {}", r.map50);

    // the generator stream is reproducible, so the labels of every train image are known
    let mut g = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<Vec<Annotation>> = (0..8).map(|_| render_sample(&mut g, 3, 64).1).collect();
    assert!(labels.iter().any(|a| a.len() == 3), "a three-glyph image in the split");
    let det_out = dir.path().join("det");
    let d = DetectArgs { ckpt, input: data.join("images/train"), out: det_out.clone(), conf: 0.25, iou: 0.45 };
    assert_eq!(cmd_detect(&d).unwrap(), EXIT_OK);
    let ids: Vec<String> = (0..8).map(|k| format!("train_{k:05}")).collect();
    let text = std::fs::read_to_string(det_out.join("detections.txt")).unwrap();
    let all = parse_detections(Path::new("d"), &text, &ids).unwrap();
    for (k, (dets, anns)) in all.iter().zip(&labels).enumerate() {
        let mut got: Vec<usize> = dets.iter().map(|b| b.class_id).collect();
        let mut want: Vec<usize> = anns.iter().map(|a| a.class_id).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "image {k}: {dets:?} vs {anns:?}");
    }
}
