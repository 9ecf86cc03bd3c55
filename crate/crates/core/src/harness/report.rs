//! Per-class result tables and their CSV, JSON and markdown renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Label;
use crate::metrics::{ClassMetrics, ConfusionCounts};

pub const CSV_HEADER: &str = "experiment,class,accuracy,tpr,tnr,fnr,f1,iou,seconds_per_image";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub class: Label,
    pub metrics: ClassMetrics<f64>,
    /// Pixel counts summed over the evaluated images; absent for
    /// aggregated rows.
    pub counts: Option<ConfusionCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl TimingStats {
    pub fn from_samples(seconds: &[f64]) -> Result<Self> {
        if seconds.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            mean: seconds.iter().sum::<f64>() / seconds.len() as f64,
            min: seconds.iter().copied().fold(f64::INFINITY, f64::min),
            max: seconds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: seconds.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTiming {
    pub experiment: String,
    pub stats: TimingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<MetricsRow>,
    pub timing: Vec<ExperimentTiming>,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            "markdown" | "md" => Some(Self::Markdown),
            _ => None,
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl Report {
    pub fn experiments(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.experiment.as_str()) {
                names.push(&r.experiment);
            }
        }
        names
    }

    pub fn row(&self, experiment: &str, class: Label) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.experiment == experiment && r.class == class)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.4}",
                r.experiment,
                r.class,
                pct(m.accuracy),
                pct(m.tpr),
                pct(m.tnr),
                pct(m.fnr),
                pct(m.f1),
                pct(m.iou),
                m.seconds_per_image
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One table per experiment with columns Acc, TP, TN, F1, IoU, time.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for name in self.experiments() {
            let _ = writeln!(out, "## {name}\n");
            out.push_str("| Class | Acc % | TP % | TN % | F1 % | IoU % | Time (s) |\n");
            out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
            for r in self.rows.iter().filter(|r| r.experiment == name) {
                let m = &r.metrics;
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {:.4} |",
                    r.class,
                    pct(m.accuracy),
                    pct(m.tpr),
                    pct(m.tnr),
                    pct(m.f1),
                    pct(m.iou),
                    m.seconds_per_image
                );
            }
            out.push('\n');
        }
        if !self.timing.is_empty() {
            out.push_str("## timing\n\n| Experiment | Mean (s) | Min (s) | Max (s) | Images |\n|---|---:|---:|---:|---:|\n");
            for t in &self.timing {
                let s = &t.stats;
                let _ = writeln!(out, "| {} | {:.4} | {:.4} | {:.4} | {} |", t.experiment, s.mean, s.min, s.max, s.n);
            }
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        Ok(match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json()?,
            ReportFormat::Markdown => self.to_markdown(),
        })
    }
}

pub fn write_report(r: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, r.render(format)?)?;
    Ok(())
}
