//! Output files: atomic writes, metrics CSV, SVG plots and sweep tables.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so readers
/// never see a truncated file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// One line of the metrics CSV. `head` is a head index or `all`; `bucket` is
/// a noise-level range such as `0.0-0.1`, or empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub head: String,
    pub metric: String,
    pub value: f64,
    pub bucket: String,
}

impl MetricRow {
    pub fn new(epoch: usize, split: &str, head: &str, metric: &str, value: f64) -> Self {
        Self {
            epoch,
            split: split.into(),
            head: head.into(),
            metric: metric.into(),
            value,
            bucket: String::new(),
        }
    }

    pub fn bucketed(mut self, bucket: impl Into<String>) -> Self {
        self.bucket = bucket.into();
        self
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        wtr.write_record(["epoch", "split", "head", "metric", "value", "bucket"])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner().map_err(|e| Error::Usage(format!("csv buffer: {}", e.error())))
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_atomic(path, &metrics_csv(rows)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["epoch", "split", "head", "metric", "value", "bucket"] {
        return Err(Error::Validation(format!("{}: not a metrics CSV (header {:?})", path.display(), header)));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// `(epoch, value)` pairs of the rows that match, in file order.
pub fn series(rows: &[MetricRow], split: &str, head: &str, metric: &str, bucket: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.split == split && r.head == head && r.metric == metric && r.bucket == bucket)
        .map(|r| (r.epoch as f64, r.value))
        .collect()
}

/// Distinct non-empty buckets, in order of first appearance.
pub fn buckets(rows: &[MetricRow]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for r in rows {
        if !r.bucket.is_empty() && !seen.contains(&r.bucket) {
            seen.push(r.bucket.clone());
        }
    }
    seen
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue-to-red ramp for `u ∈ [0, 1]`.
fn ramp(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * u).round() as u8;
    let g = (80.0 + 100.0 * (1.0 - (2.0 * u - 1.0).abs())).round() as u8;
    let b = (220.0 - 190.0 * u).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// A line chart with one polyline per series and a legend on the right.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, lines: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = lines.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let (pw, ph) = (PLOT_W - MARGIN_L - MARGIN_R, PLOT_H - MARGIN_T - MARGIN_B);
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        PLOT_W / 2.0,
        escape(title)
    );
    s += &format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            sx(xv),
            PLOT_H - MARGIN_B + 16.0,
            trim_number(xv)
        );
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            trim_number(yv)
        );
    }
    s += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        MARGIN_L + pw / 2.0,
        PLOT_H - 12.0,
        escape(x_label)
    );
    s += &format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    let n = lines.len().max(2) - 1;
    for (i, (name, points)) in lines.iter().enumerate() {
        let color = ramp(i as f64 / n as f64);
        let path: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!(
            "<polyline class=\"series\" data-name=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            escape(name),
            path.join(" ")
        );
        let ly = MARGIN_T + 14.0 * i as f64 + 6.0;
        let lx = PLOT_W - MARGIN_R + 10.0;
        s += &format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(name)
        );
    }
    s += "</svg>\n";
    s
}

/// Rows are buckets (lowest noise at the top), columns are epochs; the cell
/// color encodes the value in `[0, 1]`.
pub fn heatmap_svg(title: &str, row_labels: &[String], epochs: &[usize], values: &[Vec<Option<f64>>]) -> String {
    let (pw, ph) = (PLOT_W - MARGIN_L - MARGIN_R, PLOT_H - MARGIN_T - MARGIN_B);
    let cw = pw / epochs.len().max(1) as f64;
    let rh = ph / row_labels.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        PLOT_W / 2.0,
        escape(title)
    );
    for (r, label) in row_labels.iter().enumerate() {
        let y = MARGIN_T + r as f64 * rh;
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            MARGIN_L - 4.0,
            y + rh / 2.0 + 3.0,
            escape(label)
        );
        for (c, v) in values[r].iter().enumerate() {
            let fill = v.map_or_else(|| "#dddddd".to_string(), ramp);
            s += &format!(
                "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>\n",
                MARGIN_L + c as f64 * cw,
                y,
                cw,
                rh
            );
        }
    }
    if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
        for (e, x) in [(first, MARGIN_L + cw / 2.0), (last, MARGIN_L + pw - cw / 2.0)] {
            s += &format!(
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{e}</text>\n",
                PLOT_H - MARGIN_B + 16.0
            );
        }
    }
    s += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n",
        MARGIN_L + pw / 2.0,
        PLOT_H - 12.0
    );
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let y = MARGIN_T + (1.0 - u) * (ph - 20.0);
        s += &format!(
            "<rect x=\"{}\" y=\"{y:.1}\" width=\"14\" height=\"20\" fill=\"{}\"/><text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            PLOT_W - MARGIN_R + 16.0,
            ramp(u),
            PLOT_W - MARGIN_R + 34.0,
            y + 14.0,
            trim_number(u)
        );
    }
    s += "</svg>\n";
    s
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Files written by [`write_plots`], relative to its output directory.
pub const LOSS_PLOT: &str = "loss.svg";
pub const ACCURACY_PLOT: &str = "accuracy.svg";
pub const BUCKET_PLOT: &str = "buckets.svg";
pub const HEATMAP_PLOT: &str = "bucket_heatmap.svg";

/// Learning curves, plus per-bucket curves and a heatmap when the rows
/// carry noise buckets. Returns the paths written.
pub fn write_plots(rows: &[MetricRow], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, svg.as_bytes())?;
        written.push(p);
        Ok(())
    };
    emit(
        LOSS_PLOT,
        line_chart_svg(
            "Training loss",
            "epoch",
            "loss",
            &[("train".into(), series(rows, "train", "all", "loss", ""))],
        ),
    )?;
    let mut heads: Vec<String> = rows
        .iter()
        .filter(|r| r.split == "test" && r.metric == "accuracy" && r.head != "all")
        .map(|r| r.head.clone())
        .collect();
    heads.sort();
    heads.dedup();
    let mut acc = vec![
        ("train".to_string(), series(rows, "train", "all", "accuracy", "")),
        ("test".to_string(), series(rows, "test", "all", "accuracy", "")),
    ];
    if heads.len() > 1 {
        acc.extend(heads.iter().map(|h| (format!("test head {h}"), series(rows, "test", h, "accuracy", ""))));
    }
    emit(ACCURACY_PLOT, line_chart_svg("Accuracy", "epoch", "accuracy", &acc))?;

    let bs = buckets(rows);
    if !bs.is_empty() {
        let lines: Vec<(String, Vec<(f64, f64)>)> = bs
            .iter()
            .map(|b| (format!("t in {b}"), series(rows, "train", "all", "bucket_accuracy", b)))
            .collect();
        emit(
            BUCKET_PLOT,
            line_chart_svg("Training accuracy by noise level", "epoch", "accuracy", &lines),
        )?;
        let mut epochs: Vec<usize> = rows.iter().map(|r| r.epoch).collect();
        epochs.sort_unstable();
        epochs.dedup();
        let values: Vec<Vec<Option<f64>>> = bs
            .iter()
            .map(|b| {
                let s = series(rows, "train", "all", "bucket_accuracy", b);
                epochs
                    .iter()
                    .map(|&e| s.iter().find(|(x, _)| *x == e as f64).map(|p| p.1))
                    .collect()
            })
            .collect();
        emit(
            HEATMAP_PLOT,
            heatmap_svg("Training accuracy by noise level", &bs, &epochs, &values),
        )?;
    }
    Ok(written)
}

/// `mean (std)` with the sample standard deviation, in percent.
pub fn mean_std_cell(values: &[f64]) -> String {
    let n = values.len();
    if n == 0 {
        return "n/a".into();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    format!("{:.2} ({:.2})", 100.0 * mean, 100.0 * std)
}

/// A Markdown table: one row per `(label, per-column values)`.
pub fn comparison_table(columns: &[&str], rows: &[(String, Vec<Vec<f64>>)]) -> String {
    let mut s = format!("| |{}|\n", columns.iter().map(|c| format!(" {c} ")).collect::<Vec<_>>().join("|"));
    s += &format!("|---|{}|\n", vec!["---"; columns.len()].join("|"));
    for (label, cells) in rows {
        s += &format!(
            "| {label} |{}|\n",
            cells.iter().map(|v| format!(" {} ", mean_std_cell(v))).collect::<Vec<_>>().join("|")
        );
    }
    s
}
