//! SVG figures from the result CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::eval::{METRICS, ROWS_FILE};
use crate::{Error, Result};

/// Header-indexed CSV table (no quoting; fields never contain commas).
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Config(format!("missing column {name}")))
    }

    pub fn f64_at(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col].parse().unwrap_or(f64::NAN)
    }
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn draw(path: &Path, title: &str, x_label: &str, y_label: &str, series: &Series) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let pts = || series.values().flatten().filter(|p| p.0.is_finite() && p.1.is_finite());
    if pts().next().is_none() {
        return Err(Error::Plot(format!("nothing to plot for {title}")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts() {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a - 0.02 * (b - a), b + 0.02 * (b - a)) };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| plot_err(&e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let clean: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(clean, color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Renders raw/effective nsse against the swept value and one CDF figure per metric from
/// the CSVs in `dir`. Returns the files written.
pub fn plot_results(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let rows = Table::read(&dir.join(ROWS_FILE))?;
    let (axis, value, method) = (rows.col("axis")?, rows.col("value")?, rows.col("method")?);
    let axis_name = rows.rows.first().map(|r| r[axis].clone()).unwrap_or_default();
    let swept = rows.rows.iter().any(|r| !r[value].is_empty());
    if swept {
        for (col, label) in [("mean_nsse", "raw"), ("mean_effective_nsse", "effective")] {
            let c = rows.col(col)?;
            let mut series = Series::new();
            for i in 0..rows.rows.len() {
                series.entry(rows.rows[i][method].clone()).or_default().push((rows.f64_at(i, value), rows.f64_at(i, c)));
            }
            let path = dir.join(format!("{label}_nsse_vs_{axis_name}.svg"));
            draw(&path, &format!("{label} normalized SSE"), &axis_name, "normalized SSE", &series)?;
            written.push(path);
        }
    }
    for metric in METRICS {
        let path = dir.join(format!("cdf_{metric}.csv"));
        if !path.exists() {
            continue;
        }
        let t = Table::read(&path)?;
        if t.rows.is_empty() {
            continue;
        }
        let (v, m, p) = (t.col("value")?, t.col("method")?, t.col("cdf")?);
        let x = if metric == "nsse" { t.col("x")? } else { t.col("x_db")? };
        let mut series = Series::new();
        for i in 0..t.rows.len() {
            let key = if t.rows[i][v].is_empty() { t.rows[i][m].clone() } else { format!("{} @ {}", t.rows[i][m], t.rows[i][v]) };
            series.entry(key).or_default().push((t.f64_at(i, x), t.f64_at(i, p)));
        }
        let out = dir.join(format!("cdf_{metric}.svg"));
        draw(&out, &format!("CDF of {metric}"), metric, "CDF", &series)?;
        written.push(out);
    }
    Ok(written)
}
