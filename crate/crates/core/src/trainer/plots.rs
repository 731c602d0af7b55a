//! Mean ± std curves across runs, as CSV data plus an SVG rendered from it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsRow;
use crate::error::{Error, Result};

/// One point of a curve aggregated over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub timestep: u64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub title: String,
    pub bands: Vec<Band>,
}

impl PlotData {
    /// Aggregates `value` across logs, truncating to the shortest log.
    /// Timesteps where some log lacks the value are skipped; `None` if that
    /// leaves nothing.
    pub fn aggregate(title: &str, logs: &[Vec<MetricsRow>], value: impl Fn(&MetricsRow) -> Option<f64>) -> Result<Option<Self>> {
        let shortest = logs.iter().map(Vec::len).min().ok_or_else(|| Error::invalid("emit_plots", "no logs"))?;
        if shortest == 0 {
            return Err(Error::invalid("emit_plots", "empty log"));
        }
        let mut bands = Vec::with_capacity(shortest);
        for i in 0..shortest {
            let Some(values) = logs.iter().map(|l| value(&l[i])).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            bands.push(Band {
                timestep: logs[0][i].timestep,
                mean,
                std: var.sqrt(),
                runs: values.len(),
            });
        }
        Ok((!bands.is_empty()).then(|| PlotData {
            title: title.to_string(),
            bands,
        }))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for b in &self.bands {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(title: &str, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let bands = r.deserialize().collect::<std::result::Result<Vec<Band>, _>>()?;
        Ok(PlotData {
            title: title.to_string(),
            bands,
        })
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// A line for the mean over a shaded ±1 std band.
pub fn render_svg(data: &PlotData) -> String {
    let bands = &data.bands;
    let t_lo = bands.first().map_or(0.0, |b| b.timestep as f64);
    let t_hi = bands.last().map_or(1.0, |b| b.timestep as f64).max(t_lo + 1.0);
    let mut y_lo = bands.iter().map(|b| b.mean - b.std).fold(f64::INFINITY, f64::min);
    let mut y_hi = bands.iter().map(|b| b.mean + b.std).fold(f64::NEG_INFINITY, f64::max);
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let px = |t: f64| MARGIN + (t - t_lo) / (t_hi - t_lo) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        data.title
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for (value, y) in [(y_lo, y0), (y_hi, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{value:.4}</text>"#,
            x0 - 4.0
        );
    }
    for (value, x) in [(t_lo, x0), (t_hi, x1)] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{value}</text>"#,
            y0 + 16.0
        );
    }
    if !bands.is_empty() {
        let upper = bands.iter().map(|b| format!("{:.3},{:.3}", px(b.timestep as f64), py(b.mean + b.std)));
        let lower = bands.iter().rev().map(|b| format!("{:.3},{:.3}", px(b.timestep as f64), py(b.mean - b.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = bands
            .iter()
            .map(|b| format!("{:.3},{:.3}", px(b.timestep as f64), py(b.mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, line.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `returns.csv`/`returns.svg` for evaluation returns and, when every
/// run logged it, `model_mse.csv`/`model_mse.svg`. Each SVG is rendered from
/// the data read back from its CSV.
pub fn emit_plots(logs: &[Vec<MetricsRow>], out_dir: &Path) -> Result<PlotData> {
    let lengths: Vec<usize> = logs.iter().map(Vec::len).collect();
    if lengths.windows(2).any(|w| w[0] != w[1]) {
        warn!(
            "logs have different lengths {lengths:?}; truncating to {}",
            lengths.iter().min().copied().unwrap_or(0)
        );
    }
    fs::create_dir_all(out_dir)?;
    let returns = PlotData::aggregate("evaluation return", logs, |r| Some(r.eval_return))?
        .expect("eval return is always present");
    emit(&returns, out_dir, "returns")?;
    if let Some(mse) = PlotData::aggregate("model validation MSE", logs, |r| r.model_mse)? {
        emit(&mse, out_dir, "model_mse")?;
    }
    Ok(returns)
}

fn emit(data: &PlotData, dir: &Path, stem: &str) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    data.write_csv(&csv)?;
    let reread = PlotData::read_csv(&data.title, &csv)?;
    fs::write(dir.join(format!("{stem}.svg")), render_svg(&reread))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(values: &[f64]) -> Vec<MetricsRow> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricsRow {
                timestep: 100 * i as u64,
                eval_return: v,
                ..MetricsRow::default()
            })
            .collect()
    }

    #[test]
    fn single_log_collapses_the_band() {
        let data = PlotData::aggregate("r", &[log(&[1.0, 2.0, 3.0])], |r| Some(r.eval_return))
            .unwrap()
            .unwrap();
        assert!(data.bands.iter().all(|b| b.std == 0.0));
        assert_eq!(data.bands.iter().map(|b| b.mean).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn different_lengths_truncate_to_the_shortest() {
        let data = PlotData::aggregate("r", &[log(&[1.0, 2.0, 3.0]), log(&[3.0, 4.0])], |r| Some(r.eval_return))
            .unwrap()
            .unwrap();
        assert_eq!(data.bands.len(), 2);
        assert_eq!((data.bands[0].mean, data.bands[0].std), (2.0, 1.0));
    }

    #[test]
    fn data_file_reproduces_the_image() {
        let dir = tempfile::tempdir().unwrap();
        let returned = emit_plots(&[log(&[0.1, -2.5, 1.0 / 3.0]), log(&[0.7, 1e-9, 2.0])], dir.path()).unwrap();
        let reread = PlotData::read_csv(&returned.title, &dir.path().join("returns.csv")).unwrap();
        assert_eq!(reread, returned);
        let image = fs::read_to_string(dir.path().join("returns.svg")).unwrap();
        assert_eq!(render_svg(&reread), image);
        assert!(!dir.path().join("model_mse.csv").exists());
    }

    #[test]
    fn no_logs_is_an_error() {
        assert!(emit_plots(&[], Path::new("unused")).is_err());
    }
}
