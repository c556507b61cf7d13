//! Command-line front end. [`run`] parses arguments, dispatches to a
//! subcommand and maps failures to exit codes: 0 ok, 2 input error,
//! 3 numeric failure.

mod stream;

pub use stream::{list_frames, run_stream, FrameSource, StreamOutput, HANDOFF_CAPACITY};

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::{GradCheckOptions, GradFault, OP_NAMES};
use crate::data::{
    draw_boxes, is_supported_image, load_dataset, read_class_names, read_image, resize_image, synth_shapes,
    write_ppm, Dataset, SynthConfig,
};
use crate::error::{Error, Result};
use crate::io::{format_detections, load_checkpoint, metrics_header, metrics_row, save_checkpoint};
use crate::metrics::pr_curve_csv;
use crate::model::{Model, ModelConfig};
use crate::train::{evaluate_model, ground_truth, predict, train, DetectOptions, TrainConfig};
use crate::verify::{block_suite, detector_loss_check, primitive_suite, SuiteRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "gridsight", version, about = "Grid object detector: train, evaluate, detect, stream")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a YOLO-format dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Detect objects in an image or a directory of images.
    Detect(DetectArgs),
    /// Run a frame stream through a model and report latency.
    Stream(StreamArgs),
    /// Generate the synthetic shapes dataset.
    GenData(GenDataArgs),
    /// Finite-difference gradient verification.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    /// Dataset root with images/, labels/ and optionally classes.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// Preset name (c, e, tiny) or a JSON model config file.
    #[arg(long, default_value = "c")]
    pub config: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Train without the auxiliary branch.
    #[arg(long)]
    pub no_aux: bool,
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long, default_value_t = 0.001)]
    pub conf: f64,
    #[arg(long, default_value_t = crate::detect::DEFAULT_NMS_IOU)]
    pub iou: f64,
    /// Directory for detections.txt, report.csv and pr_curve.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::detect::DEFAULT_CONF_THRESH)]
    pub conf: f64,
    #[arg(long, default_value_t = crate::detect::DEFAULT_NMS_IOU)]
    pub iou: f64,
}

#[derive(Args, Clone, Debug)]
pub struct StreamArgs {
    /// Trained checkpoint. Without it, a freshly initialized `--preset`
    /// model is used (latency benchmarking only).
    #[arg(long, conflicts_with = "preset")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory of numbered frames, or `synth:N[:SEED[:SIZE]]`.
    #[arg(long)]
    pub frames: String,
    #[arg(long)]
    pub fps_target: Option<f64>,
    /// Directory for detections.txt, latency.txt and latency.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = crate::detect::DEFAULT_CONF_THRESH)]
    pub conf: f64,
    #[arg(long, default_value_t = crate::detect::DEFAULT_NMS_IOU)]
    pub iou: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug)]
pub struct GenDataArgs {
    /// Training images.
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    /// Validation images; defaults to n / 8.
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 160)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct GradCheckArgs {
    /// Preset or JSON config for the end-to-end loss check.
    #[arg(long, default_value = "tiny")]
    pub config: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Skip the whole-detector check.
    #[arg(long)]
    pub skip_detector: bool,
    /// Scales one op's backward rule (negative control).
    #[arg(long, hide = true)]
    pub fault_op: Option<String>,
    #[arg(long, hide = true, default_value_t = 1.5)]
    pub fault_scale: f64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a).map(|_| EXIT_OK),
        Command::Detect(a) => cmd_detect(&a),
        Command::Stream(a) => cmd_stream(&a).map(|_| EXIT_OK),
        Command::GenData(a) => cmd_gen_data(&a).map(|_| EXIT_OK),
        Command::GradCheck(a) => cmd_grad_check(&a).map(|ok| if ok { EXIT_OK } else { EXIT_NUMERIC }),
    }
}

/// A preset name or a path to a JSON [`ModelConfig`].
pub fn resolve_config(spec: &str) -> Result<ModelConfig> {
    if let Ok(cfg) = ModelConfig::preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Error::Config(format!("`{spec}` is neither a preset nor a config file")));
    }
    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Config(format!("{spec}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_classes(root: &Path) -> Result<Option<usize>> {
    let f = root.join("classes.txt");
    Ok(if f.is_file() { Some(read_class_names(&f)?.len()) } else { None })
}

/// Writes the metrics header and one row per epoch to `out/metrics.csv`,
/// plus `last.gsd` and `best.gsd` (highest validation mAP@0.5; the last
/// epoch when there is no validation split).
pub fn cmd_train(a: &TrainArgs) -> Result<Model<f32>> {
    if !a.data.is_dir() {
        return Err(Error::InvalidArgument(format!("dataset {} not found", a.data.display())));
    }
    let mut cfg = resolve_config(&a.config)?.with_seed(a.seed).with_aux(!a.no_aux);
    if let Some(c) = dataset_classes(&a.data)? {
        cfg = cfg.with_classes(c);
    }
    let train_set = load_dataset(&a.data, "train", cfg.classes, cfg.input_size)?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: training split is empty", a.data.display())));
    }
    let val = if a.data.join("images").join("val").is_dir() {
        Some(load_dataset(&a.data, "val", cfg.classes, cfg.input_size)?).filter(|v| !v.is_empty())
    } else {
        None
    };
    std::fs::create_dir_all(&a.out)?;
    let mut model = Model::<f32>::new(cfg)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut csv = File::create(a.out.join("metrics.csv"))?;
    csv.write_all(metrics_header().as_bytes())?;
    let (best_path, last_path) = (a.out.join("best.gsd"), a.out.join("last.gsd"));
    save_checkpoint(&model, &best_path)?;
    save_checkpoint(&model, &last_path)?;
    let mut best = f64::NEG_INFINITY;
    train(&mut model, &train_set, val.as_ref(), &tc, |rec, m| {
        csv.write_all(metrics_row(rec).as_bytes())?;
        csv.flush()?;
        let map50 = rec.eval.as_ref().map_or(f64::INFINITY, |e| e.map50);
        println!(
            "epoch {:>3}/{}  loss {:.4}{}",
            rec.epoch,
            tc.epochs,
            rec.loss.total,
            rec.eval
                .as_ref()
                .map(|e| format!("  P {:.3} R {:.3} map50 {:.4} map50-95 {:.4}", e.precision, e.recall, e.map50, e.map50_95))
                .unwrap_or_default()
        );
        if map50 > best || val.is_none() {
            best = map50;
            save_checkpoint(m, &best_path)?;
        }
        save_checkpoint(m, &last_path)
    })?;
    Ok(model)
}

fn load_for_data(ckpt: &Path, data: Option<&Path>) -> Result<Model<f32>> {
    let model = load_checkpoint(ckpt)?;
    if let Some(root) = data {
        if let Some(c) = dataset_classes(root)? {
            if c != model.config().classes {
                return Err(Error::Config(format!(
                    "checkpoint has {} classes but {} lists {c}",
                    model.config().classes,
                    root.join("classes.txt").display()
                )));
            }
        }
    }
    Ok(model)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<crate::metrics::EvalReport> {
    let model = load_for_data(&a.ckpt, Some(&a.data))?;
    let ds: Dataset = load_dataset(&a.data, &a.split, model.config().classes, model.config().input_size)?;
    let opts = DetectOptions {
        conf_thresh: a.conf,
        iou_thresh: a.iou,
        class_aware: true,
    };
    let (report, dets) = evaluate_model(&model, &ds, &opts)?;
    print!("{}", report.table());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let ids: Vec<String> = ds.samples.iter().map(|s| s.id.clone()).collect();
        std::fs::write(out.join("detections.txt"), format_detections(&ids, &dets))?;
        std::fs::write(out.join("report.csv"), report.csv())?;
        std::fs::write(out.join("pr_curve.csv"), pr_curve_csv(&dets, &ground_truth(&ds), &ds.class_names)?)?;
    } else {
        print!("{}", report.csv());
    }
    Ok(report)
}

/// Annotated copies go to `out/<stem>.ppm` at the input's own resolution.
/// Returns exit code 2 when no input image could be processed.
pub fn cmd_detect(a: &DetectArgs) -> Result<i32> {
    let mut model = load_for_data(&a.ckpt, None)?;
    let inputs = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&a.input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.is_file() && is_supported_image(p));
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", a.input.display())));
    }
    std::fs::create_dir_all(&a.out)?;
    let opts = DetectOptions {
        conf_thresh: a.conf,
        iou_thresh: a.iou,
        class_aware: true,
    };
    let size = model.config().input_size;
    let (mut ids, mut all) = (Vec::new(), Vec::new());
    for path in &inputs {
        let mut img = match read_image(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        let x = resize_image(&img.to_tensor(), size)?.reshape(&[1, 3, size, size])?;
        let boxes = predict(&mut model, x, &opts)?.pop().unwrap_or_default();
        draw_boxes(&mut img, &boxes, 2);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_ppm(&a.out.join(format!("{stem}.ppm")), &img)?;
        println!("{}: {} detections", path.display(), boxes.len());
        ids.push(stem);
        all.push(boxes);
    }
    std::fs::write(a.out.join("detections.txt"), format_detections(&ids, &all))?;
    Ok(if ids.is_empty() { EXIT_INPUT } else { EXIT_OK })
}

pub fn cmd_stream(a: &StreamArgs) -> Result<StreamOutput> {
    let model = match (&a.ckpt, &a.preset) {
        (Some(p), _) => load_for_data(p, None)?,
        (None, Some(name)) => Model::new(resolve_config(name)?.with_seed(a.seed))?.strip_auxiliary(),
        (None, None) => return Err(Error::InvalidArgument("stream needs --ckpt or --preset".into())),
    };
    let source = FrameSource::parse(&a.frames, model.config().input_size)?;
    let opts = DetectOptions {
        conf_thresh: a.conf,
        iou_thresh: a.iou,
        class_aware: true,
    };
    let out = run_stream(&model, &source, &opts, a.fps_target)?;
    print!("{}", out.latency.text());
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        let (ids, dets): (Vec<String>, Vec<_>) = out.frames.iter().cloned().unzip();
        std::fs::write(dir.join("detections.txt"), format_detections(&ids, &dets))?;
        std::fs::write(dir.join("latency.txt"), out.latency.text())?;
        std::fs::write(dir.join("latency.csv"), out.latency.csv())?;
    }
    Ok(out)
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_train: a.n,
        n_val: a.n_val.unwrap_or(a.n / 8),
        classes: a.classes,
        size: a.size,
        seed: a.seed,
    };
    synth_shapes(&a.out, &cfg)?;
    println!(
        "wrote {} train / {} val images to {}",
        cfg.n_train,
        cfg.n_val,
        a.out.display()
    );
    Ok(())
}

/// Aligned pass/fail table.
pub fn suite_table(rows: &[(String, SuiteRow)]) -> String {
    let w = rows.iter().map(|(g, r)| g.len() + r.name.len() + 1).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$}  {:>12}  {:>7}  result\n", "check", "max rel err", "samples");
    for (group, r) in rows {
        writeln!(
            s,
            "{:<w$}  {:>12.3e}  {:>7}  {}",
            format!("{group}/{}", r.name),
            r.report.max_rel_err(),
            r.report.samples.len(),
            if r.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    s
}

/// Runs all suites; returns whether every row passed.
pub fn cmd_grad_check(a: &GradCheckArgs) -> Result<bool> {
    let cfg = resolve_config(&a.config)?;
    let fault = match &a.fault_op {
        None => None,
        Some(name) => {
            let op = OP_NAMES
                .iter()
                .find(|n| *n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown op `{name}`")))?;
            Some(GradFault {
                op,
                scale: a.fault_scale,
            })
        }
    };
    let opts = GradCheckOptions {
        tol: a.tol,
        fault,
        ..GradCheckOptions::default()
    };
    let mut rows = Vec::new();
    for seed in a.seed..a.seed + a.seeds.max(1) {
        for r in primitive_suite(seed, opts)? {
            rows.push((format!("op[{seed}]"), r));
        }
        for r in block_suite(cfg.width.max(2), seed, opts)? {
            rows.push((format!("block[{seed}]"), r));
        }
        if !a.skip_detector {
            let report = detector_loss_check(&cfg, seed, opts)?;
            rows.push((
                format!("model[{seed}]"),
                SuiteRow {
                    name: "detector_loss".into(),
                    report,
                },
            ));
        }
    }
    print!("{}", suite_table(&rows));
    let failed: Vec<String> = rows
        .iter()
        .filter(|(_, r)| !r.passed())
        .map(|(g, r)| format!("{g}/{}", r.name))
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed at tol {:e}", rows.len(), a.tol);
    } else {
        println!("{} of {} checks FAILED: {}", failed.len(), rows.len(), failed.join(", "));
    }
    Ok(failed.is_empty())
}
