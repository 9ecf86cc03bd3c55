//! `cfseg` command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration or usage errors, 3 for
//! data errors, 4 for I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cfseg::datasetprep::{make_split, Variant, CLINICAL_SPLIT_RATIOS};
use cfseg::harness::dataset::{eval_truth, load_pairs, load_prepared, load_raw, write_prepared};
use cfseg::harness::experiment::{summarize, ImageMetrics};
use cfseg::harness::report::ExperimentTiming;
use cfseg::harness::{
    benchmark, benchmark_hu, run_crossval, write_phantom, write_report, ExperimentConfig, Manifest, PhantomConfig,
    Pipeline, Report, ReportFormat, TimingStats,
};
use cfseg::imaging::{
    decode_colors, load_gray_png, load_hu, load_rgb_png, save_rgb_png, window_hu, HuImage, Palette, Raster,
    WindowedImage, FAT_WINDOW_HI, FAT_WINDOW_LO,
};
use cfseg::metrics::confusion;
use cfseg::model::{load_checkpoint, save_checkpoint, Preset, Trainer};
use cfseg::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "cfseg", version, about = "Cardiac fat segmentation on CT slices")]
struct Cli {
    /// JSON file with configuration values; flags override them.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known labels.
    Phantom(PhantomArgs),
    /// Window raw slices, split them and write training pairs.
    Prepare(PrepareArgs),
    /// Train a checkpoint on a prepared dataset.
    Train(TrainArgs),
    /// Segment one image or a directory of images.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Emulated 3-fold cross-validation over the prepared split.
    Crossval(CrossvalArgs),
    /// Time the segmentation path over a directory of images.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long = "hole-rate")]
    hole_rate: Option<f64>,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    seed: Option<u64>,
    /// HU window as `LO:HI`.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<(i32, i32)>,
    /// Working side for e1/e2 (defaults to the native side, capped at 256).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Close the e2 mask before recoloring.
    #[arg(long)]
    postprocess: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(&s.to_ascii_lowercase()).ok_or_else(|| format!("unknown variant {s:?}, expected e1, e2, e3 or e4"))
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {s:?}, expected toy or paper"))
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    ReportFormat::parse(s).ok_or_else(|| format!("unknown format {s:?}, expected csv, json or markdown"))
}

fn parse_window(s: &str) -> std::result::Result<(i32, i32), String> {
    let (lo, hi) = s.split_once(':').ok_or("window must look like LO:HI")?;
    let lo = lo.trim().parse().map_err(|e| format!("window lower bound: {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("window upper bound: {e}"))?;
    Ok((lo, hi))
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn read_config(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else { return Ok(json!({})) };
    let bytes = fs::read(path)?;
    let v: Value = serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(invalid(format!("{} must hold a JSON object", path.display())));
    }
    Ok(v)
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| invalid(e.to_string()))
}

/// Applies a config file to an experiment. Training fields may appear
/// either under `train_cfg` or at the top level.
fn apply_experiment_config(exp: &mut ExperimentConfig, file: &Value) -> Result<()> {
    let mut v = serde_json::to_value(&*exp)?;
    let known = ["variant", "train_cfg", "split", "postprocess", "dataset_root", "working_size", "record_timing"];
    let mut top = serde_json::Map::new();
    let mut train = serde_json::Map::new();
    for (k, val) in file.as_object().into_iter().flatten() {
        if known.contains(&k.as_str()) {
            top.insert(k.clone(), val.clone());
        } else {
            train.insert(k.clone(), val.clone());
        }
    }
    merge(&mut v, &Value::Object(top));
    merge(&mut v["train_cfg"], &Value::Object(train));
    *exp = from_value(v)?;
    Ok(())
}

fn report_format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => ReportFormat::Csv,
        Some("md" | "markdown") => ReportFormat::Markdown,
        _ => ReportFormat::Json,
    }
}

/// Image files under `path` (or `path` itself), sorted, skipping overlays.
fn image_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    let is_image = |p: &Path| {
        matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "huim"))
            && !p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with("_overlay"))
    };
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::DatasetMissing(path.to_path_buf()));
    }
    let mut files: Vec<PathBuf> =
        fs::read_dir(path)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| is_image(p)).collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_hu(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "huim")
}

fn load_slice(path: &Path) -> Result<WindowedImage> {
    if is_hu(path) {
        window_hu(&load_hu(path)?, FAT_WINDOW_LO, FAT_WINDOW_HI)
    } else {
        load_gray_png(path)
    }
}

fn phantom(args: PhantomArgs, file: &Value) -> Result<()> {
    let mut v = serde_json::to_value(PhantomConfig::default())?;
    merge(&mut v, file);
    let mut cfg: PhantomConfig = from_value(v)?;
    if let Some(n) = args.n {
        cfg.n_images = n;
    }
    if let Some(s) = args.size {
        cfg.size = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.noise {
        cfg.noise_level = f;
    }
    if let Some(f) = args.hole_rate {
        cfg.hole_rate = f;
    }
    let slices = write_phantom(&cfg, &args.out)?;
    println!("wrote {} phantom slices to {}", slices.len(), args.out.display());
    Ok(())
}

fn prepare(args: PrepareArgs, file: &Value) -> Result<()> {
    let window = args
        .window
        .or(file.get("window").map(|w| from_value(w.clone())).transpose()?)
        .unwrap_or((FAT_WINDOW_LO, FAT_WINDOW_HI));
    let ratios = match file.get("ratios") {
        Some(r) => from_value(r.clone())?,
        None => CLINICAL_SPLIT_RATIOS,
    };
    let seed = args.seed.or(file.get("seed").and_then(Value::as_u64)).unwrap_or(0);
    let data = load_raw(&args.input, window)?;
    let native = data.native_size()?;
    let working = args
        .size
        .or(file.get("working_size").and_then(Value::as_u64).map(|v| v as usize))
        .unwrap_or(native.min(256));
    let split = make_split(&data.ids, ratios, seed)?;
    let manifest = Manifest { variant: args.variant, working_size: working, native_size: native, window, split };
    write_prepared(&args.out, &data, &manifest)?;
    println!(
        "prepared {} slices for {}: {} train, {} val, {} test",
        data.len(),
        args.variant,
        manifest.split.train_ids.len(),
        manifest.split.val_ids.len(),
        manifest.split.test_ids.len()
    );
    Ok(())
}

fn train(args: TrainArgs, file: &Value) -> Result<()> {
    let (manifest, data) = load_prepared(&args.data)?;
    if manifest.variant != args.variant {
        return Err(invalid(format!("{} was prepared for {}, not {}", args.data.display(), manifest.variant, args.variant)));
    }
    let preset = match (args.preset, file.get("preset")) {
        (Some(p), _) => p,
        (None, Some(p)) => from_value(p.clone())?,
        (None, None) => Preset::Toy,
    };
    let mut exp = ExperimentConfig::new(args.variant, preset, manifest.split.clone(), manifest.working_size, manifest.native_size);
    apply_experiment_config(&mut exp, file)?;
    exp.dataset_root = args.data.clone();
    let t = &mut exp.train_cfg;
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(b) = args.batch {
        t.batch_size = b;
    }
    if let Some(r) = args.lr {
        t.learning_rate = r;
    }
    if let Some(l) = args.lambda {
        t.l1_weight = l;
    }
    if let Some(s) = args.seed {
        t.seed = s;
    }
    exp.validate(data.native_size()?)?;
    let train_set = load_pairs(&args.data, exp.variant, &exp.split.train_ids)?;
    let val_set = load_pairs(&args.data, exp.variant, &exp.split.val_ids)?;
    let mut trainer = Trainer::for_preset(exp.train_cfg.clone(), exp.variant.out_channels())?;
    for _ in 0..exp.train_cfg.epochs {
        let r = trainer.run_epoch(&train_set, &val_set)?;
        let val = r.val_l1.map(|v| format!(" val_l1 {v:.5}")).unwrap_or_default();
        println!("epoch {:>3}  g {:.4}  d {:.4}  l1 {:.5}{val}", r.epoch, r.g_loss, r.d_loss, r.l1);
    }
    let mut ckpt = trainer.into_checkpoint();
    ckpt.variant = Some(exp.variant);
    save_checkpoint(&ckpt, &args.out)?;
    println!("saved {}", args.out.display());
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let pipeline = Pipeline::new(&ckpt, args.postprocess)?;
    let inputs = image_inputs(&args.input)?;
    fs::create_dir_all(&args.out)?;
    let mut images = Vec::new();
    for path in &inputs {
        let id = stem(path);
        let pred = pipeline.run(&load_slice(path)?)?;
        save_rgb_png(&pred.mask(), &args.out.join(format!("{id}.png")))?;
        if let Some(o) = &pred.overlay {
            save_rgb_png(o, &args.out.join(format!("{id}_overlay.png")))?;
        }
        images.push(json!({ "id": id, "seconds": pred.seconds }));
    }
    let summary = json!({
        "variant": pipeline.variant,
        "postprocess": pipeline.postprocess,
        "images": images,
    });
    fs::write(args.out.join("segment.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("segmented {} images into {}", inputs.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let meta_path = args.pred.join("segment.json");
    let meta: Value = if meta_path.is_file() { serde_json::from_slice(&fs::read(&meta_path)?)? } else { json!({}) };
    let variant: Variant = match meta.get("variant") {
        Some(v) => from_value(v.clone())?,
        None => Variant::E1,
    };
    let postprocess = meta.get("postprocess").and_then(Value::as_bool).unwrap_or(false);
    let name = if postprocess { format!("{variant}_closing") } else { variant.name().to_string() };
    let seconds_of = |id: &str| {
        meta.get("images")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().find(|e| e["id"] == id))
            .and_then(|e| e["seconds"].as_f64())
            .unwrap_or(0.0)
    };
    let preds: Vec<PathBuf> = image_inputs(&args.pred)?.into_iter().filter(|p| !is_hu(p)).collect();
    let mut per_image = Vec::new();
    let mut seconds = Vec::new();
    for path in &preds {
        let id = stem(path);
        let truth_path = args.truth.join(format!("{id}.png"));
        if !truth_path.is_file() {
            return Err(Error::DatasetMissing(truth_path));
        }
        let pred = decode_colors(&load_rgb_png(path)?, &Palette::CANONICAL);
        let truth = eval_truth(variant, &load_rgb_png(&truth_path)?, pred.width())?;
        let s = seconds_of(&id);
        for &class in variant.classes() {
            per_image.push(ImageMetrics {
                experiment: name.clone(),
                id: id.clone(),
                class,
                counts: confusion(&pred, &truth, class)?,
                seconds: s,
            });
        }
        seconds.push(s);
    }
    let report = Report {
        rows: summarize(&name, variant.classes(), &per_image)?,
        timing: vec![ExperimentTiming { experiment: name, stats: TimingStats::from_samples(&seconds)? }],
        config: json!({ "pred": args.pred, "truth": args.truth, "variant": variant }),
    };
    write_report(&report, &args.out, args.format)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn crossval(args: CrossvalArgs, file: &Value) -> Result<()> {
    let (manifest, data) = load_prepared(&args.data)?;
    let preset = match (args.preset, file.get("preset")) {
        (Some(p), _) => p,
        (None, Some(p)) => from_value(p.clone())?,
        (None, None) => Preset::Toy,
    };
    let mut exp = ExperimentConfig::new(args.variant, preset, manifest.split.clone(), manifest.working_size, manifest.native_size);
    apply_experiment_config(&mut exp, file)?;
    exp.dataset_root = args.data.clone();
    if let Some(s) = args.seed {
        exp.train_cfg.seed = s;
    }
    let result = run_crossval(&exp, &data)?;
    fs::create_dir_all(&args.out)?;
    for (k, run) in result.runs.iter().enumerate() {
        write_report(run, &args.out.join(format!("run{k}.json")), ReportFormat::Json)?;
    }
    for (name, r) in [("mean", &result.mean), ("std", &result.std)] {
        write_report(r, &args.out.join(format!("{name}.csv")), ReportFormat::Csv)?;
        write_report(r, &args.out.join(format!("{name}.json")), ReportFormat::Json)?;
        write_report(r, &args.out.join(format!("{name}.md")), ReportFormat::Markdown)?;
    }
    fs::write(args.out.join("rotations.json"), serde_json::to_string_pretty(&result.rotations)?)?;
    print!("{}", result.mean.to_csv());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let variant = ckpt.variant.unwrap_or(Variant::E1);
    let pipeline = Pipeline::new(&ckpt, variant == Variant::E2)?;
    let inputs = image_inputs(&args.input)?;
    let stats = if inputs.iter().all(|p| is_hu(p)) {
        let slices = inputs.iter().map(|p| load_hu(p)).collect::<Result<Vec<HuImage>>>()?;
        benchmark_hu(&pipeline, &slices, (FAT_WINDOW_LO, FAT_WINDOW_HI))?
    } else {
        let images = inputs.iter().map(|p| load_slice(p)).collect::<Result<Vec<_>>>()?;
        benchmark(&pipeline, &images)?
    };
    let report = Report {
        rows: vec![],
        timing: vec![ExperimentTiming { experiment: variant.name().into(), stats }],
        config: json!({ "ckpt": args.ckpt, "input": args.input, "postprocess": pipeline.postprocess }),
    };
    write_report(&report, &args.out, report_format_for(&args.out))?;
    println!("{} images: mean {:.4} s, min {:.4} s, max {:.4} s", stats.n, stats.mean, stats.min, stats.max);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = read_config(cli.config.as_deref())?;
    match cli.command {
        Command::Phantom(a) => phantom(a, &file),
        Command::Prepare(a) => prepare(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Segment(a) => segment(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Crossval(a) => crossval(a, &file),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
