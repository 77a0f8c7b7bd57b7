//! Brute-force reference implementations of the evaluation metrics and a
//! randomized suite comparing them against the library versions.
//!
//! Every reference here is written from the definition, quadratic where that
//! is simplest, and shares no helpers with the code it checks.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, ColumnSpec, DataTable, TableSchema};
use crate::error::Result;
use crate::{fidelity, privacy, utility};

pub const TOLERANCE: f64 = 1e-9;

/// `1 - max |F_a(x) - F_b(x)|`, evaluating both CDFs by counting at every
/// observed value.
pub fn ks_complement(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let sup = a
        .iter()
        .chain(b)
        .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
        .fold(0.0, f64::max);
    1.0 - sup
}

fn tv_generic<K: std::hash::Hash + Eq + Copy>(a: &[K], b: &[K]) -> f64 {
    let keys: HashSet<K> = a.iter().chain(b).copied().collect();
    let freq = |s: &[K], k: K| s.iter().filter(|&&v| v == k).count() as f64 / s.len() as f64;
    let tv: f64 = keys.iter().map(|&k| (freq(a, k) - freq(b, k)).abs()).sum::<f64>() / 2.0;
    1.0 - tv
}

pub fn tv_complement(a: &[u32], b: &[u32]) -> f64 {
    tv_generic(a, b)
}

/// Mean, sample standard deviation and
/// `n / ((n-1)(n-2)) * sum(((x - mean) / s)^3)`.
pub fn summary_stats(x: &[f64]) -> (f64, f64, Option<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let s = var.sqrt();
    let skew = if x.len() >= 3 && s > 0.0 {
        let t: f64 = x.iter().map(|v| ((v - mean) / s).powi(3)).sum();
        Some(n / ((n - 1.0) * (n - 2.0)) * t)
    } else {
        None
    };
    (mean, s, skew)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

/// Linear-interpolation quantile (the common "type 7" definition).
fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

fn discretize(col: &Column, reference: &Column) -> Vec<u32> {
    match (col, reference) {
        (Column::Categorical { codes, .. }, _) => codes.clone(),
        (Column::Continuous(v), Column::Continuous(r)) => {
            let edges = [quantile(r, 0.25), quantile(r, 0.5), quantile(r, 0.75)];
            v.iter()
                .map(|&x| edges.iter().filter(|&&e| e < x).count() as u32)
                .collect()
        }
        _ => panic!("column kinds differ"),
    }
}

/// Pair similarity: `1 - |r_real - r_synth| / 2` for two continuous
/// columns (constant columns count as r = 0), otherwise `1 - TV` of the
/// joint distribution after cutting continuous columns at the real
/// quartiles.
pub fn pair_trend_similarity(real: &DataTable, synth: &DataTable, i: usize, j: usize) -> f64 {
    let (ri, rj, si, sj) = (real.column(i), real.column(j), synth.column(i), synth.column(j));
    if let (Column::Continuous(a), Column::Continuous(b), Column::Continuous(c), Column::Continuous(d)) =
        (ri, rj, si, sj)
    {
        let r1 = pearson(a, b).unwrap_or(0.0);
        let r2 = pearson(c, d).unwrap_or(0.0);
        return 1.0 - (r1 - r2).abs() / 2.0;
    }
    let real_keys: Vec<(u32, u32)> = discretize(ri, ri).into_iter().zip(discretize(rj, rj)).collect();
    let synth_keys: Vec<(u32, u32)> = discretize(si, ri).into_iter().zip(discretize(sj, rj)).collect();
    tv_generic(&real_keys, &synth_keys)
}

/// Distance between row `a` of `x` and row `b` of `y`, with continuous
/// columns divided by the real range (1 if zero) and 1 per categorical
/// mismatch, under the square root.
fn row_distance(real: &DataTable, x: &DataTable, a: usize, y: &DataTable, b: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..real.n_cols() {
        match (real.column(c), x.column(c), y.column(c)) {
            (Column::Continuous(r), Column::Continuous(u), Column::Continuous(v)) => {
                let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let range = if hi > lo { hi - lo } else { 1.0 };
                s += ((u[a] - lo) / range - (v[b] - lo) / range).powi(2);
            }
            (_, Column::Categorical { codes: u, .. }, Column::Categorical { codes: v, .. }) => {
                if u[a] != v[b] {
                    s += 1.0;
                }
            }
            _ => panic!("column kinds differ"),
        }
    }
    s.sqrt()
}

fn sorted_distances(real: &DataTable, synth: &DataTable, row: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..real.n_rows())
        .map(|r| row_distance(real, synth, row, real, r))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

pub fn dcr(real: &DataTable, synth: &DataTable) -> Vec<f64> {
    (0..synth.n_rows()).map(|s| sorted_distances(real, synth, s)[0]).collect()
}

pub fn nndr(real: &DataTable, synth: &DataTable) -> Vec<f64> {
    (0..synth.n_rows())
        .map(|s| {
            let d = sorted_distances(real, synth, s);
            if d[1] == 0.0 {
                1.0
            } else {
                d[0] / d[1]
            }
        })
        .collect()
}

pub fn grid_overlap(real: &DataTable, synth: &DataTable, lat: &str, lon: &str, cell: f64) -> f64 {
    let cells = |t: &DataTable| -> HashSet<(i64, i64)> {
        let (a, b) = (t.continuous(lat).unwrap(), t.continuous(lon).unwrap());
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x / cell).floor() as i64, (y / cell).floor() as i64))
            .collect()
    };
    let (a, b) = (cells(real), cells(synth));
    let union: HashSet<_> = a.union(&b).collect();
    if union.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union.len() as f64
}

/// Per-class `(code, precision, recall, f1, support)` for every class seen in
/// either vector, plus accuracy, macro and support-weighted F1.
pub struct ReferenceMetrics {
    pub accuracy: f64,
    pub classes: Vec<(u32, f64, f64, f64, usize)>,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub weighted_f1: f64,
}

pub fn classification_metrics(pred: &[u32], truth: &[u32]) -> ReferenceMetrics {
    let n = truth.len();
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let mut seen: Vec<u32> = pred.iter().chain(truth).copied().collect::<HashSet<_>>().into_iter().collect();
    seen.sort();
    let mut classes = Vec::new();
    for &c in &seen {
        let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
        let fneg = pred.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fneg) } else { 0.0 };
        classes.push((c, precision, recall, f1, (tp + fneg) as usize));
    }
    let m = classes.len() as f64;
    ReferenceMetrics {
        accuracy: correct as f64 / n as f64,
        macro_precision: classes.iter().map(|c| c.1).sum::<f64>() / m,
        macro_recall: classes.iter().map(|c| c.2).sum::<f64>() / m,
        macro_f1: classes.iter().map(|c| c.3).sum::<f64>() / m,
        weighted_f1: classes.iter().map(|c| c.3 * c.4 as f64).sum::<f64>() / n as f64,
        classes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub comparisons: usize,
    /// Largest `|library - reference| / max(1, |reference|)`.
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instances: usize,
    pub tolerance: f64,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Default)]
struct Tally {
    comparisons: usize,
    max_error: f64,
    mismatch: bool,
}

impl Tally {
    fn compare(&mut self, got: f64, want: f64) {
        self.comparisons += 1;
        let err = (got - want).abs() / want.abs().max(1.0);
        if err.is_nan() {
            self.mismatch = true;
        } else {
            self.max_error = self.max_error.max(err);
        }
    }

    fn compare_opt(&mut self, got: Option<f64>, want: Option<f64>) {
        match (got, want) {
            (Some(g), Some(w)) => self.compare(g, w),
            (None, None) => self.comparisons += 1,
            _ => self.mismatch = true,
        }
    }

    fn exact<T: PartialEq>(&mut self, got: T, want: T) {
        self.comparisons += 1;
        if got != want {
            self.mismatch = true;
        }
    }
}

/// A small random table pair: latitude, longitude, a tie-heavy continuous
/// column and a categorical column. Some synthetic rows copy real rows.
pub fn random_instance(rng: &mut impl Rng, max_rows: usize) -> Result<(DataTable, DataTable)> {
    let labels: Vec<String> = (0..rng.random_range(1..=4)).map(|i| format!("c{i}")).collect();
    let k = labels.len() as u32;
    let constant = rng.random_bool(0.1);
    let coarse = rng.random_bool(0.5);
    let make = |rng: &mut dyn rand::RngCore, n: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<u32>) {
        let mut lat = Vec::new();
        let mut lon = Vec::new();
        let mut x = Vec::new();
        let mut c = Vec::new();
        for _ in 0..n {
            lat.push(-27.7 + rng.random_range(-0.005..0.005));
            lon.push(-51.1 + rng.random_range(-0.005..0.005));
            let v: f64 = rng.random_range(-2.0..2.0);
            x.push(if constant {
                1.5
            } else if coarse {
                (v * 2.0).round() / 2.0
            } else {
                v
            });
            c.push(rng.random_range(0..k));
        }
        (lat, lon, x, c)
    };
    let nr = rng.random_range(2..=max_rows.max(2));
    let ns = rng.random_range(2..=max_rows.max(2));
    let (lat, lon, x, c) = make(rng, nr);
    let (mut slat, mut slon, mut sx, mut sc) = make(rng, ns);
    for s in 0..ns {
        if rng.random_bool(0.1) {
            let r = rng.random_range(0..nr);
            (slat[s], slon[s], sx[s], sc[s]) = (lat[r], lon[r], x[r], c[r]);
        }
    }
    let schema = TableSchema::new(vec![
        ColumnSpec::new("latitude", ColumnKind::Continuous, "degrees"),
        ColumnSpec::new("longitude", ColumnKind::Continuous, "degrees"),
        ColumnSpec::new("x", ColumnKind::Continuous, ""),
        ColumnSpec::new("class", ColumnKind::Categorical, "code"),
    ])?;
    let build = |lat, lon, x, codes| {
        DataTable::new(
            schema.clone(),
            vec![
                Column::Continuous(lat),
                Column::Continuous(lon),
                Column::Continuous(x),
                Column::Categorical {
                    codes,
                    labels: labels.clone(),
                },
            ],
        )
    };
    Ok((build(lat, lon, x, c)?, build(slat, slon, sx, sc)?))
}

/// Compares every library metric with its reference on `instances` random
/// table pairs of at most `max_rows` rows.
pub fn run_suite(instances: usize, max_rows: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "ks_complement",
        "tv_complement",
        "summary_stats",
        "pair_trend_similarity",
        "dcr",
        "nndr",
        "grid_overlap",
        "classification_report",
    ];
    let mut tallies: HashMap<&str, Tally> = names.iter().map(|n| (*n, Tally::default())).collect();
    for _ in 0..instances {
        let (real, synth) = random_instance(&mut rng, max_rows)?;

        let t = tallies.get_mut("ks_complement").unwrap();
        for c in 0..3 {
            let (a, b) = (real.column(c).as_continuous().unwrap(), synth.column(c).as_continuous().unwrap());
            t.compare(fidelity::ks_complement(a, b)?, ks_complement(a, b));
        }

        let (a, b) = (real.codes("class")?, synth.codes("class")?);
        tallies
            .get_mut("tv_complement")
            .unwrap()
            .compare(fidelity::tv_complement(a, b)?, tv_complement(a, b));

        let t = tallies.get_mut("summary_stats").unwrap();
        for c in 0..3 {
            let v = real.column(c).as_continuous().unwrap();
            let got = fidelity::summary_stats(v)?;
            let (mean, std, skew) = summary_stats(v);
            t.compare(got.mean, mean);
            t.compare(got.std, std);
            t.compare_opt(got.skewness, skew);
        }

        let t = tallies.get_mut("pair_trend_similarity").unwrap();
        for i in 0..real.n_cols() {
            for j in i + 1..real.n_cols() {
                let got = fidelity::pair_trend_similarity(&real, &synth, i, j)?.score;
                t.compare(got, pair_trend_similarity(&real, &synth, i, j));
            }
        }

        let t = tallies.get_mut("dcr").unwrap();
        let (got, summary) = privacy::dcr(&real, &synth)?;
        let want = dcr(&real, &synth);
        for (g, w) in got.iter().zip(&want) {
            t.compare(*g, *w);
        }
        t.exact(summary.exact_matches, want.iter().filter(|&&d| d == 0.0).count());
        t.compare(summary.p5, quantile(&want, 0.05));
        t.compare(summary.median, quantile(&want, 0.5));

        let t = tallies.get_mut("nndr").unwrap();
        let (got, median) = privacy::nndr(&real, &synth)?;
        let want = nndr(&real, &synth);
        for (g, w) in got.iter().zip(&want) {
            t.compare(*g, *w);
        }
        t.compare(median, quantile(&want, 0.5));

        let t = tallies.get_mut("grid_overlap").unwrap();
        for cell in [0.0005, 0.001, 0.004] {
            let got = privacy::grid_overlap(&real, &synth, "latitude", "longitude", cell)?;
            t.compare(got, grid_overlap(&real, &synth, "latitude", "longitude", cell));
        }

        let t = tallies.get_mut("classification_report").unwrap();
        let k = rng.random_range(2..=5u32);
        let n = rng.random_range(1..=max_rows.max(1));
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<u32> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..k) })
            .collect();
        let labels: Vec<String> = (0..k).map(|i| format!("l{i}")).collect();
        let got = utility::evaluate(&pred, &truth, &labels)?;
        let want = classification_metrics(&pred, &truth);
        t.compare(got.accuracy, want.accuracy);
        t.exact(got.classes.len(), want.classes.len());
        for (g, w) in got.classes.iter().zip(&want.classes) {
            t.exact(g.code, w.0);
            t.compare(g.precision, w.1);
            t.compare(g.recall, w.2);
            t.compare(g.f1, w.3);
            t.exact(g.support, w.4);
        }
        t.compare(got.macro_avg.precision, want.macro_precision);
        t.compare(got.macro_avg.recall, want.macro_recall);
        t.compare(got.macro_avg.f1, want.macro_f1);
        t.compare(got.weighted_avg.f1, want.weighted_f1);
    }
    let checks = names
        .iter()
        .map(|n| {
            let t = &tallies[n];
            OracleCheck {
                name: n.to_string(),
                comparisons: t.comparisons,
                max_error: t.max_error,
                passed: !t.mismatch && t.max_error <= TOLERANCE,
            }
        })
        .collect();
    Ok(OracleReport {
        instances,
        tolerance: TOLERANCE,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references_on_hand_cases() {
        assert_eq!(ks_complement(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(ks_complement(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_eq!(tv_complement(&[0, 0, 1, 1], &[0, 0, 0, 0]), 0.5);
        let (_, _, skew) = summary_stats(&[0.0, 0.0, 1.0]);
        assert!((skew.unwrap() - 3f64.sqrt()).abs() < 1e-12);
        let m = classification_metrics(&[0, 1, 1], &[0, 1, 0]);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.classes[0].4, 2);
    }

    #[test]
    fn suite_passes() {
        let report = run_suite(60, 100, 7).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
            assert!(c.comparisons >= 60, "{c:?}");
        }
    }
}
