//! Report figures. Each SVG is written next to a CSV holding the exact
//! series it draws.

use std::fmt::Write as _;
use std::path::Path;

use drivesynth_core::fidelity::{CorrelationMatrix, KdeComparison};
use drivesynth_core::privacy::TrendComparison;
use drivesynth_core::utility::ClassificationReport;
use drivesynth_core::{DataTable, LossTrace, TARGET_COLUMN};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::svg::{self, Frame, Svg};

/// Most points drawn per scatter panel; larger tables are thinned by a fixed
/// stride.
pub const MAX_SCATTER_POINTS: usize = 3000;

#[derive(Debug, Clone)]
pub struct Figure {
    pub name: String,
    pub svg: String,
    pub series: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FigureIndex {
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

fn csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn kde_figure(k: &KdeComparison) -> Figure {
    let x = &k.real.x;
    let top = k
        .real
        .density
        .iter()
        .chain(&k.synthetic.density)
        .copied()
        .fold(0.0, f64::max);
    let f = Frame::new(90.0, 60.0, 670.0, 450.0, svg::range(x.iter().copied()), (0.0, top * 1.05));
    let mut s = Svg::new(&format!("Density of {}: real vs synthetic", k.column));
    s.axes(&f, &k.column, "density");
    s.polyline(&f, x, &k.real.density, svg::REAL_COLOR, 2.0);
    s.polyline(&f, &k.synthetic.x, &k.synthetic.density, svg::SYNTH_COLOR, 2.0);
    s.legend(600.0, 80.0, &[("real", svg::REAL_COLOR), ("synthetic", svg::SYNTH_COLOR)]);
    let mut notes = Vec::new();
    for (who, series) in [("real", &k.real), ("synthetic", &k.synthetic)] {
        if series.spike {
            notes.push(format!("{who}: constant column drawn as a spike"));
        }
        if series.low_mass {
            notes.push(format!("{who}: grid holds only {:.3} of the mass", series.integral));
        }
    }
    for (i, n) in notes.iter().enumerate() {
        s.text(100.0, 80.0 + 16.0 * i as f64, n, "start", 11.0);
    }
    let mut csv = String::from("x,real,synthetic\n");
    for i in 0..x.len() {
        csv_row(
            &mut csv,
            &[x[i].to_string(), k.real.density[i].to_string(), k.synthetic.density[i].to_string()],
        );
    }
    let name = format!("kde_{}", k.column);
    Figure {
        svg: s.finish(),
        series: vec![(name.clone(), csv)],
        name,
    }
}

pub fn correlation_figure(m: &CorrelationMatrix, which: &str) -> Figure {
    let n = m.columns.len();
    let side = 440.0;
    let cell = side / n.max(1) as f64;
    let (left, top) = (230.0, 70.0);
    let mut s = Svg::new(&format!("Correlation matrix ({which})"));
    s.comment("cell (i, j) sits at x = 230 + j * cell, y = 70 + i * cell; fill blue (-1) to red (+1)");
    let mut csv = String::new();
    csv_row(
        &mut csv,
        &std::iter::once(String::new())
            .chain(m.columns.iter().map(|c| quote(c)))
            .collect::<Vec<_>>(),
    );
    for (i, row) in m.values.iter().enumerate() {
        let y = top + i as f64 * cell;
        s.text(left - 8.0, y + cell / 2.0 + 4.0, &m.columns[i], "end", 12.0);
        for (j, &v) in row.iter().enumerate() {
            let x = left + j as f64 * cell;
            s.rect(x, y, cell, cell, &svg::diverging(v), Some("#ffffff"));
            s.text(x + cell / 2.0, y + cell / 2.0 + 4.0, &format!("{v:.2}"), "middle", 11.0);
        }
        let mut cells = vec![quote(&m.columns[i])];
        cells.extend(row.iter().map(f64::to_string));
        csv_row(&mut csv, &cells);
    }
    for (j, c) in m.columns.iter().enumerate() {
        s.text(left + j as f64 * cell + cell / 2.0, top + side + 18.0, c, "middle", 12.0);
    }
    if !m.constant_columns.is_empty() {
        s.text(
            left,
            top + side + 50.0,
            &format!("constant columns (correlation set to 0): {}", m.constant_columns.join(", ")),
            "start",
            11.0,
        );
    }
    let name = format!("correlation_{which}");
    Figure {
        svg: s.finish(),
        series: vec![(name.clone(), csv)],
        name,
    }
}

pub fn confusion_figure(report: &ClassificationReport, labels: &[String], which: &str, model: &str) -> Figure {
    let k = report.confusion.len();
    let side = 420.0;
    let cell = side / k.max(1) as f64;
    let (left, top) = (230.0, 90.0);
    let mut s = Svg::new(&format!("Confusion matrix, {which}: {model}"));
    s.text(
        400.0,
        52.0,
        &format!("accuracy {:.4} on {} rows; rows are true classes", report.accuracy, report.total),
        "middle",
        12.0,
    );
    let label = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
    let mut csv = String::new();
    let mut header = vec!["true\\predicted".to_string()];
    header.extend((0..k).map(|i| quote(&label(i))));
    csv_row(&mut csv, &header);
    for (i, row) in report.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        let y = top + i as f64 * cell;
        s.text(left - 8.0, y + cell / 2.0 + 4.0, &label(i), "end", 12.0);
        for (j, &count) in row.iter().enumerate() {
            let share = if support > 0 { count as f64 / support as f64 } else { 0.0 };
            let x = left + j as f64 * cell;
            s.rect(x, y, cell, cell, &svg::sequential(share), Some("#ffffff"));
            s.text(x + cell / 2.0, y + cell / 2.0 + 4.0, &count.to_string(), "middle", 12.0);
        }
        let mut cells = vec![quote(&label(i))];
        cells.extend(row.iter().map(usize::to_string));
        csv_row(&mut csv, &cells);
    }
    for j in 0..k {
        s.text(left + j as f64 * cell + cell / 2.0, top + side + 18.0, &label(j), "middle", 12.0);
    }
    s.text(left + side / 2.0, top + side + 40.0, "predicted", "middle", 13.0);
    let name = format!("confusion_{which}");
    Figure {
        svg: s.finish(),
        series: vec![(name.clone(), csv)],
        name,
    }
}

pub fn loss_figure(trace: &LossTrace) -> Figure {
    let epochs: Vec<f64> = (1..=trace.total.len()).map(|e| e as f64).collect();
    let all = trace.total.iter().chain(&trace.reconstruction).chain(&trace.kl).copied();
    let f = Frame::new(90.0, 60.0, 670.0, 450.0, (1.0, epochs.len().max(2) as f64), svg::range(all));
    let mut s = Svg::new("Training loss per epoch");
    s.axes(&f, "epoch", "loss (mean per row)");
    let series = [
        ("total", &trace.total, "#000000"),
        ("reconstruction", &trace.reconstruction, "#1f77b4"),
        ("kl", &trace.kl, "#d62728"),
    ];
    for (_, v, color) in series {
        s.polyline(&f, &epochs, v, color, 2.0);
    }
    s.legend(620.0, 80.0, &series.map(|(n, _, c)| (n, c)));
    let mut csv = String::from("epoch,total,reconstruction,kl\n");
    for i in 0..trace.total.len() {
        csv_row(
            &mut csv,
            &[
                (i + 1).to_string(),
                trace.total[i].to_string(),
                trace.reconstruction[i].to_string(),
                trace.kl[i].to_string(),
            ],
        );
    }
    Figure {
        name: "loss".into(),
        svg: s.finish(),
        series: vec![("loss".into(), csv)],
    }
}

fn stride(n: usize) -> usize {
    n.div_ceil(MAX_SCATTER_POINTS).max(1)
}

/// Side-by-side longitude/latitude scatter coloured by road class with each
/// table's fitted line. `None` when the synthetic table is empty.
pub fn geography_figure(
    real: &DataTable,
    synth: &DataTable,
    lat: &str,
    lon: &str,
    trend: &TrendComparison,
) -> CliResult<Option<Figure>> {
    if synth.n_rows() == 0 || real.n_rows() == 0 {
        return Ok(None);
    }
    let coords = |t: &DataTable| -> CliResult<(Vec<f64>, Vec<f64>, Vec<String>)> {
        let la = t.continuous(lat)?;
        let lo = t.continuous(lon)?;
        let col = t.column_by_name(TARGET_COLUMN)?;
        let (codes, labels) = (col.as_codes().unwrap_or(&[]), col.labels().unwrap_or(&[]));
        let road = |i: usize| {
            codes
                .get(i)
                .and_then(|&c| labels.get(c as usize))
                .cloned()
                .unwrap_or_default()
        };
        let step = stride(t.n_rows());
        let idx: Vec<usize> = (0..t.n_rows()).step_by(step).collect();
        Ok((
            idx.iter().map(|&i| lo[i]).collect(),
            idx.iter().map(|&i| la[i]).collect(),
            idx.iter().map(|&i| road(i)).collect(),
        ))
    };
    let r = coords(real)?;
    let sy = coords(synth)?;
    let xr = svg::range(r.0.iter().chain(&sy.0).copied());
    let yr = svg::range(r.1.iter().chain(&sy.1).copied());
    let mut s = Svg::new("Trip geography: real vs synthetic");
    s.comment(&format!(
        "at most {MAX_SCATTER_POINTS} points per panel; every k-th row is drawn (real k = {}, synthetic k = {})",
        stride(real.n_rows()),
        stride(synth.n_rows())
    ));
    let mut csv = String::from("table,longitude,latitude,road\n");
    for (panel, (name, pts, line)) in [("real", &r, trend.real), ("synthetic", &sy, trend.synthetic)]
        .into_iter()
        .enumerate()
    {
        let f = Frame::new(95.0 + panel as f64 * 360.0, 70.0, 310.0, 420.0, xr, yr);
        s.axes(&f, lon, lat);
        s.text(f.left + f.width / 2.0, 60.0, name, "middle", 14.0);
        for i in 0..pts.0.len() {
            s.dot(&f, pts.0[i], pts.1[i], 1.6, svg::road_color(&pts.2[i]));
            csv_row(
                &mut csv,
                &[name.into(), pts.0[i].to_string(), pts.1[i].to_string(), quote(&pts.2[i])],
            );
        }
        let (x0, x1) = f.x;
        s.polyline(
            &f,
            &[x0, x1],
            &[line.intercept + line.slope * x0, line.intercept + line.slope * x1],
            "#000000",
            1.5,
        );
    }
    s.legend(
        120.0,
        560.0,
        &[
            ("asphalt", svg::road_color("asphalt")),
            ("cobblestone", svg::road_color("cobblestone")),
            ("dirt", svg::road_color("dirt")),
        ],
    );
    s.text(
        450.0,
        565.0,
        &format!("relative slope difference {:.4}", trend.relative_slope_difference),
        "start",
        12.0,
    );
    let mut lines = String::from("table,slope,intercept\n");
    for (name, l) in [("real", trend.real), ("synthetic", trend.synthetic)] {
        let _ = writeln!(lines, "{name},{},{}", l.slope, l.intercept);
    }
    Ok(Some(Figure {
        name: "geography".into(),
        svg: s.finish(),
        series: vec![("geography".into(), csv), ("geography_trend".into(), lines)],
    }))
}

/// Writes `figures/<name>.svg` and `series/<series>.csv` under `out`.
pub fn write_figures(out: &Path, figures: &[Figure]) -> CliResult<Vec<String>> {
    let fig_dir = out.join("figures");
    let series_dir = out.join("series");
    for d in [&fig_dir, &series_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::write(d, e))?;
    }
    let mut files = Vec::new();
    for f in figures {
        let p = fig_dir.join(format!("{}.svg", f.name));
        std::fs::write(&p, &f.svg).map_err(|e| CliError::write(&p, e))?;
        files.push(format!("figures/{}.svg", f.name));
        for (name, csv) in &f.series {
            let p = series_dir.join(format!("{name}.csv"));
            std::fs::write(&p, csv).map_err(|e| CliError::write(&p, e))?;
            files.push(format!("series/{name}.csv"));
        }
    }
    files.sort();
    Ok(files)
}
