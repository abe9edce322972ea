//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cost::count_madds;
use crate::detect::{average_precision, bench, detect, DetectConfig, Detection};
use crate::error::{Error, Result};
use crate::io::{
    format_detections, format_pr, load_annotations, load_dataset, load_image, load_weights, parse_config, parse_detections,
    save_weights, synth_generate,
};
use crate::model::{build_model, ModelConfig, ModelParams};
use crate::train::{grad_check, train_loop, GradCheckConfig, Schedule, TrainConfig};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_BATCH: usize = 8;

#[derive(Parser, Debug)]
#[command(name = "extd", about = "Weight-shared multi-scale face detector", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the parameter and multiply-add report of a model.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 640)]
        input_size: usize,
        /// Machine-readable lines instead of the table.
        #[arg(long)]
        machine: bool,
        /// Leave out BN, activation and other elementwise arithmetic.
        #[arg(long)]
        no_elementwise: bool,
    },
    /// Train on an annotation file and write a weight file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_LR)]
        lr: f64,
        #[arg(long, default_value_t = DEFAULT_BATCH)]
        batch: usize,
        /// Keep the learning rate constant instead of dropping it at 50% and 75%.
        #[arg(long)]
        constant_lr: bool,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        no_vflip: bool,
        /// Loss trace file; stdout when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Detect faces in one image, or in every image of an annotation file.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, required_unless_present = "data", conflicts_with = "data")]
        image: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        conf: f64,
        #[arg(long, default_value_t = 0.3)]
        nms: f64,
        #[arg(long, default_value_t = 750)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average precision of a detection file against annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Write the 1000-threshold PR curve here.
        #[arg(long)]
        pr: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences (double precision).
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        input_size: usize,
    },
    /// Generate a synthetic face dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Forward-pass latency on square inputs.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

/// Gradcheck tolerance on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-3;

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.cmd, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// Loads weights and checks they are exactly the tensors `cfg` builds.
fn read_weights(path: &Path, cfg: &ModelConfig) -> Result<ModelParams<f32>> {
    let params: ModelParams<f32> = load_weights(path)?;
    let expected = build_model::<f32>(cfg, 0)?;
    for (name, t) in expected.iter() {
        let got = params.get(name).map_err(|_| Error::KeyMismatch(format!("weight file lacks `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::KeyMismatch(format!("`{name}` has shape {:?}, model expects {:?}", got.shape(), t.shape())));
        }
    }
    if let Some(extra) = params.names().find(|n| !expected.contains(n)) {
        return Err(Error::KeyMismatch(format!("weight file has unknown tensor `{extra}`")));
    }
    Ok(params)
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Summarize { config, input_size, machine, no_elementwise } => {
            let cfg = read_config(&config)?;
            let mut report = count_madds(&cfg, input_size, input_size)?;
            if no_elementwise {
                report = report.without_elementwise();
            }
            if machine {
                write!(out, "{}", report.machine_lines())?;
            } else {
                writeln!(out, "{}", cfg.name())?;
                write!(out, "{}", report.table())?;
            }
        }
        Command::Train { config, data, out: weights, iters, seed, resolution, lr, batch, constant_lr, no_augment, no_vflip, trace } => {
            let cfg = read_config(&config)?;
            let (samples, dropped) = load_dataset(&data)?;
            if dropped > 0 {
                writeln!(err, "warning: {dropped} degenerate or out-of-image boxes dropped")?;
            }
            let schedule = if constant_lr { Schedule::constant(iters, lr, batch) } else { Schedule::scaled(iters, lr, batch) };
            let mut tc = TrainConfig::new(schedule, resolution, seed);
            if no_augment {
                tc.augment = None;
            } else if no_vflip {
                tc.augment = tc.augment.map(|a| a.without_vflip());
            }
            let mut trace_file = trace.map(std::fs::File::create).transpose()?;
            let mut io_err = None;
            let (params, _) = train_loop(&cfg, &tc, &samples, None, |l| {
                let res = match trace_file.as_mut() {
                    Some(f) => writeln!(f, "{}", l.format()),
                    None => writeln!(out, "{}", l.format()),
                };
                if let Err(e) = res {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            save_weights(&weights, &params)?;
        }
        Command::Detect { config, weights, image, data, conf, nms, topk, out: dest } => {
            let cfg = read_config(&config)?;
            let params = read_weights(&weights, &cfg)?;
            let dc = DetectConfig { conf_thresh: conf, nms_iou: nms, topk };
            let inputs: Vec<(String, PathBuf)> = match (image, data) {
                (Some(img), _) => vec![(img.display().to_string(), img)],
                (None, Some(ann)) => {
                    let index = load_annotations(&ann)?;
                    index.entries.iter().map(|e| (e.path.clone(), crate::io::annotations::resolve(&ann, e))).collect()
                }
                (None, None) => unreachable!("clap requires one of --image and --data"),
            };
            let mut results = Vec::with_capacity(inputs.len());
            for (id, path) in inputs {
                let img = load_image(&path)?;
                results.push((id, detect(&params, &cfg, &img, &dc)?));
            }
            std::fs::write(&dest, format_detections(&results))?;
            let total: usize = results.iter().map(|r| r.1.len()).sum();
            writeln!(out, "{} images, {total} detections", results.len())?;
        }
        Command::Eval { pred, gt, iou, pr } => {
            let index = load_annotations(&gt)?;
            let preds = parse_detections(&std::fs::read_to_string(&pred)?)?;
            let mut by_id: HashMap<String, Vec<Detection>> = HashMap::new();
            for (id, d) in preds {
                if by_id.insert(id.clone(), d).is_some() {
                    return Err(Error::Invalid(format!("`{id}` appears twice in {}", pred.display())));
                }
            }
            let mut dets = Vec::with_capacity(index.entries.len());
            let mut gts = Vec::with_capacity(index.entries.len());
            for e in &index.entries {
                dets.push(by_id.remove(&e.path).unwrap_or_default());
                gts.push(e.boxes.clone());
            }
            if let Some(id) = by_id.keys().min() {
                return Err(Error::Invalid(format!("predictions for `{id}`, which has no annotation")));
            }
            let r = average_precision(&dets, &gts, iou);
            writeln!(out, "AP {:.4}", r.ap)?;
            writeln!(out, "tp {} fp {} fn {} (score >= 0.5)", r.tp, r.fp, r.fn_)?;
            if let Some(path) = pr {
                std::fs::write(path, format_pr(&r.pr_points))?;
            }
        }
        Command::Gradcheck { config, seed, input_size } => {
            let cfg = read_config(&config)?;
            let gc = GradCheckConfig { seed, input_size, ..GradCheckConfig::default() };
            let report = grad_check(&cfg, &gc)?;
            write!(out, "{}", report.render())?;
            let pass = report.max_rel_err < GRADCHECK_TOL;
            writeln!(out, "{} (tolerance {GRADCHECK_TOL:e})", if pass { "PASS" } else { "FAIL" })?;
            return Ok(if pass { 0 } else { 2 });
        }
        Command::Synth { out: dir, count, resolution, seed } => {
            let index = synth_generate(count, resolution, seed, &dir)?;
            let faces: usize = index.entries.iter().map(|e| e.boxes.len()).sum();
            writeln!(out, "{count} images, {faces} faces -> {}", dir.join("annotations.txt").display())?;
        }
        Command::Bench { config, weights, sizes, trials } => {
            let cfg = read_config(&config)?;
            let params = read_weights(&weights, &cfg)?;
            for row in bench(&params, &cfg, &sizes, trials)? {
                writeln!(out, "{}", row.format())?;
            }
        }
    }
    Ok(0)
}
