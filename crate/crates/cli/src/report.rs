//! Metric tables over training and their SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use dehaze_core::evaluation::MetricMeans;
use dehaze_core::{Error, Result};
use plotters::prelude::*;

const HEADER: &str = "label\titeration\tmse\tnrmse\tpsnr\tssim";

/// Mean metrics of one checkpoint (an epoch of a run).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub label: String,
    pub iteration: u64,
    pub means: MetricMeans,
}

pub fn validation_table(rows: &[ValidationRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let m = &r.means;
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.label, r.iteration, m.mse, m.nrmse, m.psnr, m.ssim
        );
    }
    s
}

pub fn write_validation(path: &Path, rows: &[ValidationRow]) -> Result<()> {
    std::fs::write(path, validation_table(rows)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rows of an existing table (empty if the file does not exist yet).
pub fn read_validation(path: &Path) -> Result<Vec<ValidationRow>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let bad = |line: usize, why: &str| Error::Dataset {
        id: format!("{}:{}", path.display(), line + 1),
        reason: why.to_string(),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad(i, "expected 6 columns"));
        }
        let f = |k: usize| cols[k].parse::<f64>().map_err(|_| bad(i, "unparsable number"));
        rows.push(ValidationRow {
            label: cols[0].to_string(),
            iteration: cols[1].parse().map_err(|_| bad(i, "unparsable iteration"))?,
            means: MetricMeans {
                mse: f(2)?,
                nrmse: f(3)?,
                psnr: f(4)?,
                ssim: f(5)?,
            },
        });
    }
    Ok(rows)
}

/// Writes `psnr.svg` and `ssim.svg` with one point per row, x = iteration.
pub fn plot_metrics(out: &Path, rows: &[ValidationRow], title: &str) -> anyhow::Result<()> {
    plot_one(&out.join("psnr.svg"), rows, &format!("PSNR ({title})"), "PSNR [dB]", |m| m.psnr)?;
    plot_one(&out.join("ssim.svg"), rows, &format!("SSIM ({title})"), "SSIM", |m| m.ssim)?;
    Ok(())
}

fn plot_one(
    path: &Path,
    rows: &[ValidationRow],
    caption: &str,
    y_label: &str,
    metric: impl Fn(&MetricMeans) -> f64,
) -> anyhow::Result<()> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.iteration as f64, metric(&r.means)))
        .filter(|(_, y)| y.is_finite())
        .collect();
    if points.is_empty() {
        log::warn!("no finite values for {}; plot skipped", path.display());
        return Ok(());
    }
    let (x0, x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let xpad = ((x1 - x0) * 0.05).max(1.0);
    let ypad = ((y1 - y0) * 0.1).max(1e-3);

    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x0 - xpad)..(x1 + xpad), (y0 - ypad)..(y1 + ypad))?;
    chart.configure_mesh().x_desc("iteration").y_desc(y_label).draw()?;
    chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE))?;
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))?;
    root.present()?;
    Ok(())
}
