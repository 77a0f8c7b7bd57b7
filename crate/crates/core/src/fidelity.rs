//! Statistical similarity between a real and a synthetic table.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, DataTable};
use crate::error::{Error, Result};

/// Points per KDE curve.
pub const KDE_GRID: usize = 200;
/// KDE curves integrating below this over their grid are flagged.
pub const KDE_MIN_INTEGRAL: f64 = 0.97;

/// `1 - sup |F_real - F_synth|` over the two empirical CDFs.
pub fn ks_complement(real: &[f64], synth: &[f64]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Empty("KS statistic needs two non-empty samples".into()));
    }
    let mut a = real.to_vec();
    let mut b = synth.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(1.0 - sup)
}

fn frequencies<K: Ord + Copy>(keys: impl Iterator<Item = K>) -> (BTreeMap<K, f64>, usize) {
    let mut counts = BTreeMap::new();
    let mut n = 0;
    for k in keys {
        *counts.entry(k).or_insert(0.0) += 1.0;
        n += 1;
    }
    for v in counts.values_mut() {
        *v /= n as f64;
    }
    (counts, n)
}

fn tv_between<K: Ord + Copy>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut sum = 0.0;
    for (k, p) in a {
        sum += (p - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in b {
        if !a.contains_key(k) {
            sum += q;
        }
    }
    (1.0 - 0.5 * sum).clamp(0.0, 1.0)
}

/// `1 - TV` between the category frequencies of two code columns.
pub fn tv_complement(real: &[u32], synth: &[u32]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Empty("TV distance needs two non-empty samples".into()));
    }
    let (a, _) = frequencies(real.iter().copied());
    let (b, _) = frequencies(synth.iter().copied());
    Ok(tv_between(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub column: String,
    /// `"ks_complement"` or `"tv_complement"`.
    pub metric: String,
    pub score: f64,
}

fn column_score(name: &str, real: &Column, synth: &Column) -> Result<ColumnScore> {
    let (metric, score) = match (real, synth) {
        (Column::Continuous(a), Column::Continuous(b)) => ("ks_complement", ks_complement(a, b)?),
        (Column::Categorical { codes: a, .. }, Column::Categorical { codes: b, .. }) => {
            ("tv_complement", tv_complement(a, b)?)
        }
        _ => return Err(Error::Schema(format!("column {name:?} changes kind"))),
    };
    Ok(ColumnScore {
        column: name.to_string(),
        metric: metric.into(),
        score,
    })
}

/// Per-column scores and their mean.
pub fn column_shapes(real: &DataTable, synth: &DataTable) -> Result<(Vec<ColumnScore>, f64)> {
    real.check_same_schema(synth)?;
    let names = real.schema().names();
    let scores = (0..real.n_cols())
        .into_par_iter()
        .map(|i| column_score(names[i], real.column(i), synth.column(i)))
        .collect::<Result<Vec<_>>>()?;
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

/// Pearson correlation; `None` when either column has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quartile_edges(values: &[f64]) -> [f64; 3] {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    [
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    ]
}

/// Bin index = number of edges strictly below `x`.
fn bin_of(x: f64, edges: &[f64; 3]) -> u32 {
    edges.partition_point(|e| *e < x) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub columns: (String, String),
    /// `"correlation"` or `"contingency"`.
    pub metric: String,
    pub score: f64,
    /// Set when a constant column forced a correlation of 0.
    pub constant_column: bool,
}

/// Similarity of the relationship between columns `i` and `j`.
pub fn pair_trend_similarity(real: &DataTable, synth: &DataTable, i: usize, j: usize) -> Result<PairScore> {
    real.check_same_schema(synth)?;
    if i == j || i >= real.n_cols() || j >= real.n_cols() {
        return Err(Error::InvalidArgument(format!("invalid column pair ({i}, {j})")));
    }
    if real.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(Error::Empty("pair trends need non-empty tables".into()));
    }
    let names = real.schema().names();
    let columns = (names[i].to_string(), names[j].to_string());
    match (real.column(i), real.column(j), synth.column(i), synth.column(j)) {
        (
            Column::Continuous(rx),
            Column::Continuous(ry),
            Column::Continuous(sx),
            Column::Continuous(sy),
        ) => {
            let a = pearson(rx, ry);
            let b = pearson(sx, sy);
            let constant_column = a.is_none() || b.is_none();
            let score = 1.0 - (a.unwrap_or(0.0) - b.unwrap_or(0.0)).abs() / 2.0;
            Ok(PairScore {
                columns,
                metric: "correlation".into(),
                score,
                constant_column,
            })
        }
        _ => {
            let rk = contingency_keys(real.column(i), real.column(j), real.column(i), real.column(j));
            let sk = contingency_keys(synth.column(i), synth.column(j), real.column(i), real.column(j));
            let (a, _) = frequencies(rk.into_iter());
            let (b, _) = frequencies(sk.into_iter());
            Ok(PairScore {
                columns,
                metric: "contingency".into(),
                score: tv_between(&a, &b),
                constant_column: false,
            })
        }
    }
}

/// Cell keys for a contingency table; continuous columns are cut at the
/// quartiles of the corresponding real column.
fn contingency_keys(x: &Column, y: &Column, real_x: &Column, real_y: &Column) -> Vec<(u32, u32)> {
    fn keys(c: &Column, reference: &Column) -> Vec<u32> {
        match c {
            Column::Categorical { codes, .. } => codes.clone(),
            Column::Continuous(v) => {
                let edges = quartile_edges(reference.as_continuous().expect("same kind"));
                v.iter().map(|&x| bin_of(x, &edges)).collect()
            }
        }
    }
    keys(x, real_x).into_iter().zip(keys(y, real_y)).collect()
}

/// All pair scores (`i < j`) and their mean.
pub fn column_pair_trends(real: &DataTable, synth: &DataTable) -> Result<(Vec<PairScore>, f64)> {
    real.check_same_schema(synth)?;
    let n = real.n_cols();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("pair trends need at least two columns".into()));
    }
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| pair_trend_similarity(real, synth, i, j))
        .collect::<Result<Vec<_>>>()?;
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    /// Adjusted Fisher-Pearson coefficient; absent below 3 values or for a
    /// constant column.
    pub skewness: Option<f64>,
}

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "summary statistics need at least 2 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let skewness = if n >= 3 && m2 > 0.0 {
        let g1 = (m3 / nf) / (m2 / nf).powf(1.5);
        Some(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
    } else {
        None
    };
    Ok(SummaryStats { mean, std, skewness })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeSeries {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Trapezoid integral of `density` over `x`.
    pub integral: f64,
    /// Zero-variance input rendered as a unit-mass spike.
    pub spike: bool,
    /// `integral` fell below [`KDE_MIN_INTEGRAL`].
    pub low_mass: bool,
}

/// Silverman's rule of thumb, `0.9 * min(std, IQR / 1.34) * n^(-1/5)`;
/// falls back to the std when the IQR is 0.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let s = summary_stats(values).map(|s| s.std).unwrap_or(0.0);
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Gaussian KDE evaluated at the given grid points.
pub fn kde_on_grid(values: &[f64], bandwidth: f64, grid: &[f64]) -> Result<KdeSeries> {
    if values.is_empty() {
        return Err(Error::Empty("KDE needs at least one value".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .par_iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| {
                    let u = (g - v) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let integral = trapezoid(grid, &density);
    Ok(KdeSeries {
        x: grid.to_vec(),
        density,
        bandwidth,
        integral,
        spike: false,
        low_mass: integral < KDE_MIN_INTEGRAL,
    })
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i == points - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

fn spike(at: f64) -> KdeSeries {
    let w = 1e-6 * at.abs().max(1.0);
    KdeSeries {
        x: vec![at - w, at, at + w],
        density: vec![0.0, 1.0 / w, 0.0],
        bandwidth: 0.0,
        integral: 1.0,
        spike: true,
        low_mass: false,
    }
}

/// KDE with Silverman bandwidth on `points` grid points spanning the data
/// range padded by three bandwidths on each side.
pub fn kde(values: &[f64], points: usize) -> Result<KdeSeries> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("KDE needs at least 2 values".into()));
    }
    if points < 2 {
        return Err(Error::InvalidArgument("KDE grid needs at least 2 points".into()));
    }
    let h = silverman_bandwidth(values);
    let (lo, hi) = min_max(values);
    if h <= 0.0 {
        return Ok(spike(lo));
    }
    kde_on_grid(values, h, &linspace(lo - 3.0 * h, hi + 3.0 * h, points))
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their off-diagonal entries are 0.
    pub constant_columns: Vec<String>,
}

/// Pearson correlations between all continuous columns.
pub fn correlation_matrix(table: &DataTable) -> Result<CorrelationMatrix> {
    let names = table.schema().names();
    let cols: Vec<(&str, &[f64])> = table
        .columns()
        .iter()
        .zip(&names)
        .filter_map(|(c, n)| c.as_continuous().map(|v| (*n, v)))
        .collect();
    if cols.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation matrix needs at least two continuous columns".into(),
        ));
    }
    if table.n_rows() < 2 {
        return Err(Error::InvalidArgument("correlation matrix needs at least two rows".into()));
    }
    let k = cols.len();
    let mut values = vec![vec![0.0; k]; k];
    let mut constant = vec![false; k];
    for (i, (_, v)) in cols.iter().enumerate() {
        let (lo, hi) = min_max(v);
        constant[i] = lo == hi;
    }
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(cols[i].1, cols[j].1).unwrap_or(0.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        columns: cols.iter().map(|(n, _)| n.to_string()).collect(),
        values,
        constant_columns: cols
            .iter()
            .zip(&constant)
            .filter(|(_, &c)| c)
            .map(|((n, _), _)| n.to_string())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub column: String,
    pub real: SummaryStats,
    pub synthetic: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeComparison {
    pub column: String,
    pub real: KdeSeries,
    pub synthetic: KdeSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub column_scores: Vec<ColumnScore>,
    pub pair_scores: Vec<PairScore>,
    pub column_shapes: f64,
    pub column_pair_trends: f64,
    pub overall: f64,
    pub summary: Vec<SummaryRow>,
    pub correlation_real: CorrelationMatrix,
    pub correlation_synthetic: CorrelationMatrix,
    pub kde: Vec<KdeComparison>,
    pub flags: Vec<String>,
}

/// Full fidelity comparison. KDE curves for a column share one grid spanning
/// both tables.
pub fn evaluate_fidelity(real: &DataTable, synth: &DataTable) -> Result<FidelityReport> {
    real.check_same_schema(synth)?;
    if real.n_rows() < 2 || synth.n_rows() < 2 {
        return Err(Error::InvalidArgument(
            "fidelity needs at least two rows in each table".into(),
        ));
    }
    let (column_scores, column_shapes) = column_shapes(real, synth)?;
    let (pair_scores, column_pair_trends) = column_pair_trends(real, synth)?;
    let mut flags = Vec::new();
    for p in &pair_scores {
        if p.constant_column {
            flags.push(format!(
                "constant column in pair ({}, {}); correlation taken as 0",
                p.columns.0, p.columns.1
            ));
        }
    }
    let names = real.schema().names();
    let mut summary = Vec::new();
    let mut kdes = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let (Some(r), Some(s)) = (real.column(i).as_continuous(), synth.column(i).as_continuous())
        else {
            continue;
        };
        summary.push(SummaryRow {
            column: name.to_string(),
            real: summary_stats(r)?,
            synthetic: summary_stats(s)?,
        });
        kdes.push(kde_pair(name, r, s)?);
    }
    for k in &kdes {
        for (which, series) in [("real", &k.real), ("synthetic", &k.synthetic)] {
            if series.spike {
                flags.push(format!("{which} {} has zero variance; KDE drawn as a spike", k.column));
            } else if series.low_mass {
                flags.push(format!(
                    "{which} {} KDE integrates to {:.4} over its grid",
                    k.column, series.integral
                ));
            }
        }
    }
    let correlation_real = correlation_matrix(real)?;
    let correlation_synthetic = correlation_matrix(synth)?;
    for (which, m) in [("real", &correlation_real), ("synthetic", &correlation_synthetic)] {
        for c in &m.constant_columns {
            flags.push(format!("{which} {c} is constant; correlations reported as 0"));
        }
    }
    Ok(FidelityReport {
        column_scores,
        pair_scores,
        column_shapes,
        column_pair_trends,
        overall: (column_shapes + column_pair_trends) / 2.0,
        summary,
        correlation_real,
        correlation_synthetic,
        kde: kdes,
        flags,
    })
}

fn kde_pair(name: &str, real: &[f64], synth: &[f64]) -> Result<KdeComparison> {
    let hr = silverman_bandwidth(real);
    let hs = silverman_bandwidth(synth);
    let (rl, rh) = min_max(real);
    let (sl, sh) = min_max(synth);
    let pad = 3.0 * hr.max(hs);
    let grid = linspace(rl.min(sl) - pad, rh.max(sh) + pad, KDE_GRID);
    let one = |v: &[f64], h: f64, lo: f64| {
        if h > 0.0 {
            kde_on_grid(v, h, &grid)
        } else {
            Ok(spike(lo))
        }
    };
    Ok(KdeComparison {
        column: name.to_string(),
        real: one(real, hr, rl)?,
        synthetic: one(synth, hs, sl)?,
    })
}
