//! Report emission: CSV tables, a JSON summary and line plots.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::MetricsRecord;
use super::sweep::SweepResult;
use super::train::EpochRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub agent: String,
    pub scenario: String,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub name: String,
    pub points: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSweep {
    pub name: String,
    pub result: SweepResult,
}

/// Everything a report is rendered from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<TableRow>,
    pub curves: Vec<CurveSeries>,
    pub sweeps: Vec<NamedSweep>,
}

impl Summary {
    /// Add or replace the row of an (agent, scenario) pair.
    pub fn set_row(&mut self, agent: &str, scenario: &str, metrics: MetricsRecord) {
        let row = TableRow {
            agent: agent.into(),
            scenario: scenario.into(),
            metrics,
        };
        match self
            .rows
            .iter_mut()
            .find(|r| r.agent == agent && r.scenario == scenario)
        {
            Some(r) => *r = row,
            None => self.rows.push(row),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Merge another summary in; later rows replace earlier ones.
    pub fn merge(&mut self, other: Summary) {
        for r in other.rows {
            self.set_row(&r.agent, &r.scenario, r.metrics);
        }
        for c in other.curves {
            self.curves.retain(|x| x.name != c.name);
            self.curves.push(c);
        }
        for s in other.sweeps {
            self.sweeps.retain(|x| x.name != s.name);
            self.sweeps.push(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub table_csv: PathBuf,
    pub curves_csv: PathBuf,
    pub summary_json: PathBuf,
    pub plots: Vec<PathBuf>,
}

const METRIC_COLUMNS: [&str; 8] = [
    "mean_bandwidth_pct",
    "mean_qos_degradation_pct",
    "min_bandwidth_pct",
    "max_bandwidth_pct",
    "min_qos_degradation_pct",
    "max_qos_degradation_pct",
    "episodes",
    "config_hash",
];

fn metric_fields(m: &MetricsRecord) -> Vec<String> {
    vec![
        m.mean_bandwidth_pct.to_string(),
        m.mean_qos_degradation_pct.to_string(),
        m.min_bandwidth_pct.to_string(),
        m.max_bandwidth_pct.to_string(),
        m.min_qos_degradation_pct.to_string(),
        m.max_qos_degradation_pct.to_string(),
        m.episodes.to_string(),
        m.config_hash.clone(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `metrics.csv`, `table.csv` and `curves.csv`.
pub fn write_csvs(summary: &Summary, out_dir: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut header = vec!["kind", "name", "agent", "scenario", "parameter", "value"];
    header.extend(METRIC_COLUMNS);
    let mut rows = Vec::new();
    for r in &summary.rows {
        let mut row = vec!["table".into(), String::new(), r.agent.clone(), r.scenario.clone(), String::new(), String::new()];
        row.extend(metric_fields(&r.metrics));
        rows.push(row);
    }
    for s in &summary.sweeps {
        let res = &s.result;
        for (v, m) in res.values.iter().zip(&res.records) {
            let mut row = vec!["sweep".into(), s.name.clone(), String::new(), String::new(), res.parameter.clone(), v.to_string()];
            row.extend(metric_fields(m));
            rows.push(row);
        }
        let mut row = vec![
            "sweep-reference".into(),
            s.name.clone(),
            String::new(),
            res.reference_label.clone(),
            res.parameter.clone(),
            String::new(),
        ];
        row.extend(metric_fields(&res.reference));
        rows.push(row);
    }
    let metrics = out_dir.join("metrics.csv");
    write_csv(&metrics, &header, &rows)?;

    let mut header = vec!["agent", "scenario"];
    header.extend(METRIC_COLUMNS);
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.agent.clone(), r.scenario.clone()];
            row.extend(metric_fields(&r.metrics));
            row
        })
        .collect();
    let table = out_dir.join("table.csv");
    write_csv(&table, &header, &rows)?;

    let header = [
        "curve",
        "epoch",
        "mean_bandwidth_pct",
        "mean_qos_degradation_pct",
        "min_bandwidth_pct",
        "max_bandwidth_pct",
        "min_qos_degradation_pct",
        "max_qos_degradation_pct",
        "validation_bandwidth_pct",
        "validation_qos_degradation_pct",
    ];
    let rows: Vec<Vec<String>> = summary
        .curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| {
                vec![
                    c.name.clone(),
                    p.epoch.to_string(),
                    p.mean_bandwidth_pct.to_string(),
                    p.mean_qos_degradation_pct.to_string(),
                    p.min_bandwidth_pct.to_string(),
                    p.max_bandwidth_pct.to_string(),
                    p.min_qos_degradation_pct.to_string(),
                    p.max_qos_degradation_pct.to_string(),
                    p.validation_bandwidth_pct.to_string(),
                    p.validation_qos_degradation_pct.to_string(),
                ]
            })
        })
        .collect();
    let curves = out_dir.join("curves.csv");
    write_csv(&curves, &header, &rows)?;
    Ok((metrics, table, curves))
}

/// Write every report file under `out_dir`.
pub fn emit_report(summary: &Summary, out_dir: &Path) -> Result<ReportFiles> {
    let (metrics_csv, table_csv, curves_csv) = write_csvs(summary, out_dir)?;
    let summary_json = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(&summary_json, text).map_err(|e| Error::io(&summary_json, e))?;
    let plot_dir = out_dir.join("curves");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut plots = Vec::new();
    for c in &summary.curves {
        let path = plot_dir.join(format!("{}.png", file_stem(&c.name)));
        plot_curve(c, &path)?;
        plots.push(path);
    }
    for s in &summary.sweeps {
        let path = plot_dir.join(format!("sweep-{}.png", file_stem(&s.name)));
        plot_sweep(&s.result, &path)?;
        plots.push(path);
    }
    Ok(ReportFiles {
        metrics_csv,
        table_csv,
        curves_csv,
        summary_json,
        plots,
    })
}

/// Re-emit the report from a saved `summary.json`.
pub fn reemit(summary_json: &Path, out_dir: &Path) -> Result<ReportFiles> {
    emit_report(&Summary::load(summary_json)?, out_dir)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

const WIDTH: u32 = 800;
const PANEL_HEIGHT: u32 = 300;
const BANDWIDTH_COLOR: RGBColor = RGBColor(31, 119, 180);
const DEGRADATION_COLOR: RGBColor = RGBColor(214, 39, 40);
const REFERENCE_COLOR: RGBColor = RGBColor(90, 90, 90);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Image(e.to_string())
}

/// One panel: a mean line, an optional min/max band and optional
/// horizontal reference lines. Axes are framed without text labels.
fn panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    xs: &[f64],
    mean: &[f64],
    band: Option<(&[f64], &[f64])>,
    references: &[f64],
    color: RGBColor,
) -> Result<()>
where
    DB::ErrorType: 'static,
{
    let (x0, x1) = span(xs.iter().copied());
    let ys = mean
        .iter()
        .chain(band.map_or(&[][..], |b| b.0))
        .chain(band.map_or(&[][..], |b| b.1))
        .chain(references)
        .copied();
    let (y0, y1) = span(ys.chain([0.0]));
    let mut chart = ChartBuilder::on(area)
        .margin(12)
        .build_cartesian_2d(x0..x1, y0..y1 * 1.05)
        .map_err(plot_err)?;
    chart
        .plotting_area()
        .draw(&Rectangle::new([(x0, y0), (x1, y1 * 1.05)], BLACK.stroke_width(1)))
        .map_err(plot_err)?;
    if let Some((lo, hi)) = band {
        let mut poly: Vec<(f64, f64)> = xs.iter().copied().zip(hi.iter().copied()).collect();
        poly.extend(xs.iter().copied().zip(lo.iter().copied()).rev());
        chart
            .draw_series(std::iter::once(Polygon::new(poly, color.mix(0.2).filled())))
            .map_err(plot_err)?;
    }
    for &r in references {
        chart
            .draw_series(LineSeries::new([(x0, r), (x1, r)], REFERENCE_COLOR.stroke_width(1)))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(
            xs.iter().copied().zip(mean.iter().copied()),
            color.stroke_width(2),
        ))
        .map_err(plot_err)?;
    Ok(())
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Bandwidth (top) and degradation (bottom) per epoch with min/max bands.
fn plot_curve(c: &CurveSeries, path: &Path) -> Result<()> {
    let root = BitMapBackend::new(path, (WIDTH, 2 * PANEL_HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(PANEL_HEIGHT);
    let xs: Vec<f64> = c.points.iter().map(|p| p.epoch as f64).collect();
    if !xs.is_empty() {
        let get = |f: fn(&EpochRecord) -> f64| c.points.iter().map(f).collect::<Vec<_>>();
        let (bw, bw_lo, bw_hi) = (get(|p| p.mean_bandwidth_pct), get(|p| p.min_bandwidth_pct), get(|p| p.max_bandwidth_pct));
        let (be, be_lo, be_hi) = (
            get(|p| p.mean_qos_degradation_pct),
            get(|p| p.min_qos_degradation_pct),
            get(|p| p.max_qos_degradation_pct),
        );
        panel(&top, &xs, &bw, Some((&bw_lo, &bw_hi)), &[], BANDWIDTH_COLOR)?;
        panel(&bottom, &xs, &be, Some((&be_lo, &be_hi)), &[10.0], DEGRADATION_COLOR)?;
    }
    root.present().map_err(plot_err)
}

/// Bandwidth (top) and degradation (bottom) across the swept values, with
/// the reference evaluation as horizontal lines.
fn plot_sweep(s: &SweepResult, path: &Path) -> Result<()> {
    let root = BitMapBackend::new(path, (WIDTH, 2 * PANEL_HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(PANEL_HEIGHT);
    if !s.values.is_empty() {
        let bw: Vec<f64> = s.records.iter().map(|m| m.mean_bandwidth_pct).collect();
        let be: Vec<f64> = s.records.iter().map(|m| m.mean_qos_degradation_pct).collect();
        panel(&top, &s.values, &bw, None, &[s.reference.mean_bandwidth_pct], BANDWIDTH_COLOR)?;
        panel(
            &bottom,
            &s.values,
            &be,
            None,
            &[s.reference.mean_qos_degradation_pct, 10.0],
            DEGRADATION_COLOR,
        )?;
    }
    root.present().map_err(plot_err)
}
