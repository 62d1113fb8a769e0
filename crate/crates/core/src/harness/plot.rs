use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

/// One labelled curve: `(env_steps, mean, stddev)` points sorted by step.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedCsv { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads curves from a metrics, aggregate or merged ablation CSV.
///
/// Rows are grouped by the `algo` column when present, otherwise by file stem.
/// Several rows at one `env_steps` (one per seed) become their mean with the
/// sample standard deviation as the band; a lone row uses its own
/// `eval_return_stddev` column when there is one.
pub fn read_series(path: &Path) -> Result<Vec<Series>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| malformed(path, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let steps_col = col("env_steps").ok_or_else(|| malformed(path, "missing env_steps column"))?;
    let ret_col = col("mean_eval_return").ok_or_else(|| malformed(path, "missing mean_eval_return column"))?;
    let std_col = col("eval_return_stddev");
    let algo_col = col("algo");
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| malformed(path, format!("row {} is missing column {c}", i + 1)))
        };
        let parse_f = |c: usize| -> Result<f64> {
            field(c)?.trim().parse::<f64>().map_err(|e| malformed(path, format!("row {}: {e}", i + 1)))
        };
        let steps: u64 =
            field(steps_col)?.trim().parse().map_err(|e| malformed(path, format!("row {}: env_steps {e}", i + 1)))?;
        let ret = parse_f(ret_col)?;
        let std = match std_col {
            Some(c) => parse_f(c)?,
            None => 0.0,
        };
        let label = match algo_col {
            Some(c) => field(c)?.to_string(),
            None => stem.clone(),
        };
        groups.entry(label).or_default().entry(steps).or_default().push((ret, std));
    }
    if groups.is_empty() {
        return Err(malformed(path, "no data rows"));
    }
    Ok(groups
        .into_iter()
        .map(|(label, by_step)| Series {
            label,
            points: by_step
                .into_iter()
                .map(|(steps, vals)| {
                    let n = vals.len() as f64;
                    let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
                    let band = if vals.len() == 1 {
                        vals[0].1
                    } else {
                        (vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    };
                    (steps as f64, mean, band)
                })
                .collect(),
        })
        .collect())
}

/// Renders mean-return curves with ± stddev bands to an SVG file.
///
/// Nothing is written if any input is missing, empty or malformed.
pub fn emit_plot(csv_paths: &[PathBuf], out: &Path) -> Result<()> {
    if csv_paths.is_empty() {
        return Err(Error::Usage("no CSV files to plot".into()));
    }
    let mut series = Vec::new();
    for p in csv_paths {
        series.extend(read_series(p)?);
    }
    let svg = render_svg(&series)?;
    std::fs::write(out, svg)?;
    Ok(())
}

pub fn render_svg(series: &[Series]) -> Result<String> {
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, m, s) in points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(Error::Plot("no finite points to draw".into()));
    }
    if x1 - x0 < 1.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.05).max(0.5);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("env_steps")
            .y_desc("mean eval return")
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let upper = s.points.iter().map(|(x, m, sd)| (*x, m + sd));
            let lower = s.points.iter().rev().map(|(x, m, sd)| (*x, m - sd));
            let band: Vec<(f64, f64)> = upper.chain(lower).collect();
            chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled()))).map_err(|e| plot_err(&e))?;
            let line: Vec<(f64, f64)> = s.points.iter().map(|(x, m, _)| (*x, *m)).collect();
            let single = line.len() == 1;
            chart
                .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            if single {
                chart
                    .draw_series(line.into_iter().map(|p| Circle::new(p, 4, color.filled())))
                    .map_err(|e| plot_err(&e))?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(buf)
}
