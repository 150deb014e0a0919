//! Results table and histogram rendering.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::probe::{DimensionSubset, ProbeReport, ScoreHistogram};
use crate::tasks::{MetricKind, Score};

pub const CSV_HEADER: [&str; 8] = [
    "experiment",
    "task",
    "layer",
    "subset",
    "rank",
    "valid_score",
    "test_score",
    "metric",
];

/// One line of the results table. `subset` is `None` for all dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub task: String,
    pub layer: usize,
    pub subset: Option<DimensionSubset>,
    pub rank: usize,
    pub valid: Score,
    pub test: Score,
    pub metric: MetricKind,
}

/// The baseline row (rank 0, subset `ALL`) followed by the ranked entries.
pub fn report_rows(experiment: &str, report: &ProbeReport) -> Vec<ResultRow> {
    let row = |subset, rank, valid, test| ResultRow {
        experiment: experiment.to_string(),
        task: report.task.clone(),
        layer: report.layer,
        subset,
        rank,
        valid,
        test,
        metric: report.metric,
    };
    let mut rows = vec![row(None, 0, report.baseline_valid, report.baseline)];
    rows.extend(
        report
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| row(Some(e.subset.clone()), i + 1, e.valid, e.test)),
    );
    rows
}

fn subset_cell(subset: &Option<DimensionSubset>) -> String {
    subset
        .as_ref()
        .map_or_else(|| "ALL".to_string(), |s| s.to_string())
}

pub fn render_results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("writing results: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.task.clone(),
            r.layer.to_string(),
            subset_cell(&r.subset),
            r.rank.to_string(),
            r.valid.to_string(),
            r.test.to_string(),
            r.metric.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("writing results: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_results_csv(rows)?).map_err(|e| Error::io(path, e))
}

fn parse_score(cell: &str) -> Result<Score> {
    if cell == "NaN" {
        return Ok(Score::UNDEFINED);
    }
    let (int, frac) = cell.split_once('.').unwrap_or((cell, ""));
    if frac.len() != 4 || int.trim_start_matches('-').is_empty() {
        return Err(Error::Format(format!(
            "score {cell:?} does not have four decimals"
        )));
    }
    cell.parse::<f64>()
        .map(Score::new)
        .map_err(|_| Error::Format(format!("score {cell:?} is not a number")))
}

/// Parses and validates a results table; scores come back rounded to the
/// four printed decimals.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("reading results: {e}")))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!(
            "unexpected results header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("reading results: {e}")))?;
        let num = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| {
                Error::Format(format!(
                    "column {} is not an integer: {:?}",
                    CSV_HEADER[i], &rec[i]
                ))
            })
        };
        let subset = match &rec[3] {
            "ALL" => None,
            s => Some(
                s.parse::<DimensionSubset>()
                    .map_err(|e| Error::Format(e.to_string()))?,
            ),
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            task: rec[1].to_string(),
            layer: num(2)?,
            subset,
            rank: num(4)?,
            valid: parse_score(&rec[5])?,
            test: parse_score(&rec[6])?,
            metric: rec[7]
                .parse()
                .map_err(|e: Error| Error::Format(e.to_string()))?,
        });
    }
    Ok(rows)
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

/// Overlaid bar charts, one series per histogram, one bar per score point.
/// Each bar carries its bin and count as data attributes.
pub fn render_histogram_svg(histograms: &[ScoreHistogram], metric: MetricKind) -> String {
    let bins: Vec<i64> = histograms
        .iter()
        .flat_map(|h| h.bins.keys().copied())
        .collect();
    let lo = bins.iter().copied().min().unwrap_or(0);
    let hi = bins.iter().copied().max().unwrap_or(0) + 1;
    let max_count = histograms
        .iter()
        .flat_map(|h| h.bins.values().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let bar_w = plot_w / (hi - lo) as f64;
    let x = |bin: i64| MARGIN_LEFT + (bin - lo) as f64 * bar_w;
    let base_y = MARGIN_TOP + plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, h) in histograms.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let _ = writeln!(
            s,
            r#"<g class="series" data-label="{}" data-undefined="{}" data-above-threshold="{}" fill="{color}" fill-opacity="0.5">"#,
            escape(&h.label),
            h.undefined,
            h.above_threshold
        );
        for (&bin, &count) in &h.bins {
            let height = plot_h * count as f64 / max_count as f64;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-bin="{bin}" data-count="{count}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                x(bin),
                base_y - height,
                bar_w,
                height
            );
        }
        let _ = writeln!(s, "</g>");
        let ly = MARGIN_TOP + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{color}">{}</text>"#,
            SVG_WIDTH - MARGIN_RIGHT - 150.0,
            escape(&h.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{base_y}" x2="{}" y2="{base_y}" stroke="black"/>"#,
        SVG_WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base_y}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{} (points)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 12.0,
        metric
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">subsets</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_LEFT}" y="{:.2}" font-size="11">{lo}</text>"#,
        base_y + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{hi}</text>"#,
        SVG_WIDTH - MARGIN_RIGHT,
        base_y + 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{MARGIN_TOP}" font-size="11" text-anchor="end">{max_count}</text>"#,
        MARGIN_LEFT - 4.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_histogram_svg(
    histograms: &[ScoreHistogram],
    metric: MetricKind,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_histogram_svg(histograms, metric)).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
