//! End-to-end experiment runs, emulated 3-fold cross-validation, and
//! timing benchmarks.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::dataset::{eval_truth, pairs_for, Dataset};
use super::pipeline::{Pipeline, Prediction};
use super::report::{ExperimentTiming, MetricsRow, Report, TimingStats};
use crate::datasetprep::{SplitSpec, Variant};
use crate::error::{Error, Result};
use crate::imaging::{window_hu, HuImage, Label, WindowedImage};
use crate::metrics::{aggregate, class_metrics, confusion, ClassMetrics, ConfusionCounts};
use crate::model::{Checkpoint, Preset, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub train_cfg: TrainConfig,
    pub split: SplitSpec,
    /// Morphological closing of E2 predictions.
    pub postprocess: bool,
    pub dataset_root: PathBuf,
    /// Square side E1 and E2 resize to.
    pub working_size: usize,
    /// When false, every timing is reported as zero so that reports of
    /// repeated runs are byte-identical.
    pub record_timing: bool,
}

impl ExperimentConfig {
    /// Preset defaults with the crop and load sizes the variant needs.
    pub fn new(variant: Variant, preset: Preset, split: SplitSpec, working_size: usize, native_size: usize) -> Self {
        let mut train_cfg = TrainConfig::for_preset(preset);
        train_cfg.crop_size = variant.network_size(working_size, native_size);
        train_cfg.load_size = preset.load_size_for(train_cfg.crop_size);
        Self {
            variant,
            train_cfg,
            split,
            postprocess: variant == Variant::E2,
            dataset_root: PathBuf::new(),
            working_size,
            record_timing: true,
        }
    }

    pub fn validate(&self, native_size: usize) -> Result<()> {
        if self.postprocess && self.variant != Variant::E2 {
            return Err(Error::ConfigInvalid("postprocess is only meaningful for e2".into()));
        }
        let crop = self.variant.network_size(self.working_size, native_size);
        if self.train_cfg.crop_size != crop {
            return Err(Error::ConfigInvalid(format!(
                "{} needs crop size {crop}, config has {}",
                self.variant, self.train_cfg.crop_size
            )));
        }
        if self.split.train_ids.is_empty() || self.split.test_ids.is_empty() {
            return Err(Error::ConfigInvalid("split needs training and test ids".into()));
        }
        self.train_cfg.validate(&self.train_cfg.preset.generator(1, self.variant.out_channels()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub experiment: String,
    pub id: String,
    pub class: Label,
    pub counts: ConfusionCounts,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub checkpoint: Checkpoint,
    pub report: Report,
    pub per_image: Vec<ImageMetrics>,
    /// Test-set predictions of the configured pipeline, in split order.
    pub predictions: Vec<(String, Prediction)>,
}

/// Trains on the split's training ids for `cfg.train_cfg.epochs` epochs.
pub fn train_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<Checkpoint> {
    cfg.validate(data.native_size()?)?;
    let train = pairs_for(cfg.variant, data, &cfg.split.train_ids, cfg.working_size)?;
    let val = pairs_for(cfg.variant, data, &cfg.split.val_ids, cfg.working_size)?;
    let mut trainer = Trainer::for_preset(cfg.train_cfg.clone(), cfg.variant.out_channels())?;
    for _ in 0..cfg.train_cfg.epochs {
        trainer.run_epoch(&train, &val)?;
    }
    let mut ckpt = trainer.into_checkpoint();
    ckpt.variant = Some(cfg.variant);
    Ok(ckpt)
}

/// Pipelines scored for a variant: E2 with closing reports both the raw
/// and the closed masks.
fn scored_pipelines(variant: Variant, postprocess: bool) -> Vec<(String, bool)> {
    match (variant, postprocess) {
        (Variant::E2, true) => vec![("e2".into(), false), ("e2_closing".into(), true)],
        _ => vec![(variant.name().into(), postprocess)],
    }
}

/// Mean over images of per-image class metrics, with summed counts.
pub fn summarize(experiment: &str, classes: &[Label], per_image: &[ImageMetrics]) -> Result<Vec<MetricsRow>> {
    classes
        .iter()
        .map(|&class| {
            let rows: Vec<&ImageMetrics> =
                per_image.iter().filter(|m| m.experiment == experiment && m.class == class).collect();
            if rows.is_empty() {
                return Err(Error::EmptyInput);
            }
            let n = rows.len() as f64;
            let mut mean = [0.0; 7];
            let mut counts = ConfusionCounts::default();
            for r in &rows {
                for (m, v) in mean.iter_mut().zip(class_metrics(&r.counts, r.seconds).fields()) {
                    *m += v;
                }
                counts += r.counts;
            }
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(MetricsRow { experiment: experiment.into(), class, metrics: ClassMetrics::from_fields(mean), counts: Some(counts) })
        })
        .collect()
}

/// Segments the test ids with a trained checkpoint and scores them.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    data: &Dataset,
) -> Result<(Report, Vec<ImageMetrics>, Vec<(String, Prediction)>)> {
    let mut per_image = Vec::new();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut predictions = Vec::new();
    for (name, postprocess) in scored_pipelines(cfg.variant, cfg.postprocess) {
        let pipeline = Pipeline { checkpoint: ckpt, variant: cfg.variant, postprocess };
        let mut seconds = Vec::new();
        for id in &cfg.split.test_ids {
            let i = data.index_of(id)?;
            let mut pred = pipeline.run(&data.images[i])?;
            if !cfg.record_timing {
                pred.seconds = 0.0;
            }
            let truth = eval_truth(cfg.variant, &data.truth[i], cfg.working_size)?;
            for &class in cfg.variant.classes() {
                per_image.push(ImageMetrics {
                    experiment: name.clone(),
                    id: id.clone(),
                    class,
                    counts: confusion(&pred.labels, &truth, class)?,
                    seconds: pred.seconds,
                });
            }
            seconds.push(pred.seconds);
            if postprocess == cfg.postprocess {
                predictions.push((id.clone(), pred));
            }
        }
        rows.extend(summarize(&name, cfg.variant.classes(), &per_image)?);
        timing.push(ExperimentTiming { experiment: name, stats: TimingStats::from_samples(&seconds)? });
    }
    let report = Report { rows, timing, config: serde_json::to_value(cfg)? };
    Ok((report, per_image, predictions))
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentRun> {
    let checkpoint = train_experiment(cfg, data)?;
    let (report, per_image, predictions) = evaluate_checkpoint(cfg, &checkpoint, data)?;
    Ok(ExperimentRun { checkpoint, report, per_image, predictions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalResult {
    pub rotations: Vec<SplitSpec>,
    pub runs: Vec<Report>,
    pub mean: Report,
    pub std: Report,
}

/// Field-wise mean and sample standard deviation of matching rows.
pub fn aggregate_reports(runs: &[Report], config: serde_json::Value) -> Result<(Report, Report)> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let mut mean_rows = Vec::new();
    let mut std_rows = Vec::new();
    for row in &first.rows {
        let metrics = runs
            .iter()
            .map(|r| {
                r.row(&row.experiment, row.class).map(|m| m.metrics).ok_or_else(|| {
                    Error::ConfigInvalid(format!("run lacks row {}/{}", row.experiment, row.class))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = aggregate(&metrics)?;
        let make = |m| MetricsRow { experiment: row.experiment.clone(), class: row.class, metrics: m, counts: None };
        mean_rows.push(make(stats.mean));
        std_rows.push(make(stats.std));
    }
    let timing = first
        .timing
        .iter()
        .filter_map(|t| {
            let all: Vec<TimingStats> = runs
                .iter()
                .filter_map(|r| r.timing.iter().find(|u| u.experiment == t.experiment).map(|u| u.stats))
                .collect();
            (all.len() == runs.len()).then(|| ExperimentTiming {
                experiment: t.experiment.clone(),
                stats: TimingStats {
                    mean: all.iter().map(|s| s.mean).sum::<f64>() / all.len() as f64,
                    min: all.iter().map(|s| s.min).fold(f64::INFINITY, f64::min),
                    max: all.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max),
                    n: all.iter().map(|s| s.n).sum(),
                },
            })
        })
        .collect();
    Ok((
        Report { rows: mean_rows, timing, config: config.clone() },
        Report { rows: std_rows, timing: vec![], config },
    ))
}

/// Runs `run` once per cyclic rotation of the split's roles and
/// aggregates the three reports.
pub fn run_crossval_with(
    cfg: &ExperimentConfig,
    mut run: impl FnMut(&ExperimentConfig) -> Result<Report>,
) -> Result<CrossvalResult> {
    if cfg.split.partitions().iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigInvalid("cross-validation needs three nonempty partitions".into()));
    }
    let mut rotations = Vec::new();
    let mut runs = Vec::new();
    for r in 0..3 {
        let mut c = cfg.clone();
        c.split = cfg.split.rotated(r);
        runs.push(run(&c)?);
        rotations.push(c.split);
    }
    let (mean, std) = aggregate_reports(&runs, serde_json::to_value(cfg)?)?;
    Ok(CrossvalResult { rotations, runs, mean, std })
}

pub fn run_crossval(cfg: &ExperimentConfig, data: &Dataset) -> Result<CrossvalResult> {
    run_crossval_with(cfg, |c| Ok(run_experiment(c, data)?.report))
}

/// Wall-clock of the full inference path per already-windowed slice.
pub fn benchmark(pipeline: &Pipeline, images: &[WindowedImage]) -> Result<TimingStats> {
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let seconds = images.iter().map(|img| pipeline.run(img).map(|p| p.seconds)).collect::<Result<Vec<_>>>()?;
    TimingStats::from_samples(&seconds)
}

/// Like [`benchmark`] but starting from raw HU slices, so windowing is timed too.
pub fn benchmark_hu(pipeline: &Pipeline, slices: &[HuImage], window: (i32, i32)) -> Result<TimingStats> {
    if slices.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut seconds = Vec::with_capacity(slices.len());
    for hu in slices {
        let start = std::time::Instant::now();
        let img = window_hu(hu, window.0, window.1)?;
        pipeline.run(&img)?;
        seconds.push(start.elapsed().as_secs_f64());
    }
    TimingStats::from_samples(&seconds)
}
