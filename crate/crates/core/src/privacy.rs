//! Re-identification resistance of a synthetic table relative to the real one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Column, DataTable};
use crate::error::{Error, Result};
use crate::fidelity::quantile;
use crate::neighbors::KdTree;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const DEFAULT_CELL_DEG: f64 = 0.001;

/// Maps rows into a Euclidean space where continuous columns are min-max
/// scaled by the real table's ranges and a categorical mismatch adds 1 to the
/// squared distance.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    offsets: Vec<(f64, f64)>,
    widths: Vec<usize>,
    dim: usize,
}

impl FeatureSpace {
    pub fn fit(real: &DataTable) -> Self {
        let mut offsets = Vec::new();
        let mut widths = Vec::new();
        for col in real.columns() {
            match col {
                Column::Continuous(v) => {
                    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let range = if hi > lo { hi - lo } else { 1.0 };
                    offsets.push((lo, range));
                    widths.push(1);
                }
                Column::Categorical { labels, .. } => {
                    offsets.push((0.0, 1.0));
                    widths.push(labels.len());
                }
            }
        }
        let dim = widths.iter().sum();
        FeatureSpace { offsets, widths, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major embedding of every row of `table`.
    pub fn embed(&self, table: &DataTable) -> Result<Vec<f64>> {
        if table.n_cols() != self.widths.len() {
            return Err(Error::Schema("table does not match the feature space".into()));
        }
        let n = table.n_rows();
        let mut out = vec![0.0; n * self.dim];
        let mut at = 0;
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for (c, col) in table.columns().iter().enumerate() {
            match col {
                Column::Continuous(v) => {
                    let (lo, range) = self.offsets[c];
                    for (r, x) in v.iter().enumerate() {
                        out[r * self.dim + at] = (x - lo) / range;
                    }
                }
                Column::Categorical { codes, .. } => {
                    for (r, &k) in codes.iter().enumerate() {
                        if k as usize >= self.widths[c] {
                            return Err(Error::Schema(format!(
                                "code {k} in column {c} is not in the real table's code map"
                            )));
                        }
                        out[r * self.dim + at + k as usize] = half;
                    }
                }
            }
            at += self.widths[c];
        }
        Ok(out)
    }
}

fn check_pair(real: &DataTable, synth: &DataTable) -> Result<()> {
    real.check_same_schema(synth)?;
    if real.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(Error::Empty("privacy metrics need non-empty tables".into()));
    }
    Ok(())
}

fn index_real(real: &DataTable, synth: &DataTable) -> Result<(KdTree, Vec<f64>, usize)> {
    let space = FeatureSpace::fit(real);
    let tree = KdTree::new(space.embed(real)?, space.dim())?;
    Ok((tree, space.embed(synth)?, space.dim()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrSummary {
    pub min: f64,
    pub p5: f64,
    pub median: f64,
    pub exact_matches: usize,
}

/// Distance from each synthetic row to its closest real row.
pub fn dcr(real: &DataTable, synth: &DataTable) -> Result<(Vec<f64>, DcrSummary)> {
    check_pair(real, synth)?;
    let (tree, queries, _) = index_real(real, synth)?;
    let d: Vec<f64> = tree
        .nearest_all(&queries, 1)
        .into_iter()
        .map(|n| n[0].distance())
        .collect();
    let summary = DcrSummary {
        min: d.iter().copied().fold(f64::INFINITY, f64::min),
        p5: quantile(&d, 0.05),
        median: quantile(&d, 0.5),
        exact_matches: d.iter().filter(|&&v| v == 0.0).count(),
    };
    Ok((d, summary))
}

/// Closest over second-closest real distance per synthetic row, and the
/// median. A row whose two nearest real rows are both at distance 0 gets 1.
pub fn nndr(real: &DataTable, synth: &DataTable) -> Result<(Vec<f64>, f64)> {
    check_pair(real, synth)?;
    if real.n_rows() < 2 {
        return Err(Error::InvalidArgument("NNDR needs at least two real rows".into()));
    }
    let (tree, queries, _) = index_real(real, synth)?;
    let ratios: Vec<f64> = tree
        .nearest_all(&queries, 2)
        .into_iter()
        .map(|n| {
            let (d1, d2) = (n[0].distance(), n[1].distance());
            if d2 == 0.0 {
                1.0
            } else {
                d1 / d2
            }
        })
        .collect();
    let median = quantile(&ratios, 0.5);
    Ok((ratios, median))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<Line> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidArgument("regression needs equal, non-empty columns".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("regressor has zero variance".into()));
    }
    let slope = sxy / sxx;
    Ok(Line {
        slope,
        intercept: my - slope * mx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendComparison {
    pub x: String,
    pub y: String,
    pub real: Line,
    pub synthetic: Line,
    /// `|s_real - s_synth| / |s_real|`.
    pub relative_slope_difference: f64,
}

pub fn trend_compare(real: &DataTable, synth: &DataTable, x: &str, y: &str) -> Result<TrendComparison> {
    let r = ols(real.continuous(x)?, real.continuous(y)?)?;
    let s = ols(synth.continuous(x)?, synth.continuous(y)?)?;
    Ok(TrendComparison {
        x: x.into(),
        y: y.into(),
        real: r,
        synthetic: s,
        relative_slope_difference: (r.slope - s.slope).abs() / r.slope.abs(),
    })
}

/// Great-circle distance in meters between two (latitude, longitude) points
/// given in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2)
        + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDistance {
    pub point: (f64, f64),
    pub nearest_synthetic: (f64, f64),
    pub meters: f64,
    /// Euclidean distance after min-max scaling lat/long by the real ranges.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    pub start: EndpointDistance,
    pub end: EndpointDistance,
    /// Set when a synthetic point coincides with either endpoint.
    pub exposed: bool,
}

/// Nearest synthetic point to the first and last real rows.
pub fn endpoint_obscurity(real: &DataTable, synth: &DataTable, lat: &str, lon: &str) -> Result<EndpointReport> {
    let (rlat, rlon) = (real.continuous(lat)?, real.continuous(lon)?);
    let (slat, slon) = (synth.continuous(lat)?, synth.continuous(lon)?);
    if rlat.is_empty() || slat.is_empty() {
        return Err(Error::Empty("endpoint check needs non-empty tables".into()));
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    };
    let (lat_range, lon_range) = (range(rlat), range(rlon));
    let nearest = |p: (f64, f64)| {
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..slat.len() {
            let d = haversine_m(p, (slat[i], slon[i]));
            if d < best.0 {
                best = (d, i);
            }
        }
        let q = (slat[best.1], slon[best.1]);
        EndpointDistance {
            point: p,
            nearest_synthetic: q,
            meters: best.0,
            normalized: (((p.0 - q.0) / lat_range).powi(2) + ((p.1 - q.1) / lon_range).powi(2)).sqrt(),
        }
    };
    let last = rlat.len() - 1;
    let start = nearest((rlat[0], rlon[0]));
    let end = nearest((rlat[last], rlon[last]));
    let exposed = start.meters == 0.0 || end.meters == 0.0;
    Ok(EndpointReport { start, end, exposed })
}

fn occupied_cells(lat: &[f64], lon: &[f64], cell: f64) -> BTreeSet<(i64, i64)> {
    lat.iter()
        .zip(lon)
        .map(|(a, b)| ((a / cell).floor() as i64, (b / cell).floor() as i64))
        .collect()
}

/// Jaccard index of the lat/long grid cells occupied by each table; 1 when
/// neither occupies any cell.
pub fn grid_overlap(real: &DataTable, synth: &DataTable, lat: &str, lon: &str, cell_deg: f64) -> Result<f64> {
    if !(cell_deg > 0.0) {
        return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_deg}")));
    }
    let a = occupied_cells(real.continuous(lat)?, real.continuous(lon)?, cell_deg);
    let b = occupied_cells(synth.continuous(lat)?, synth.continuous(lon)?, cell_deg);
    let union = a.union(&b).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.intersection(&b).count() as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    pub latitude: String,
    pub longitude: String,
    pub cell_deg: f64,
    /// Endpoints closer than this to a synthetic point are flagged.
    pub min_endpoint_m: f64,
    /// A 5th-percentile DCR at or below this is flagged.
    pub min_dcr_p5: f64,
    /// Relative slope differences above this are flagged.
    pub max_slope_difference: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            cell_deg: DEFAULT_CELL_DEG,
            min_endpoint_m: 0.0,
            min_dcr_p5: 0.0,
            max_slope_difference: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub dcr: DcrSummary,
    pub nndr_median: f64,
    pub trend: TrendComparison,
    pub endpoints: EndpointReport,
    pub grid_cell_deg: f64,
    pub grid_jaccard: f64,
    pub flags: Vec<String>,
}

pub fn evaluate_privacy(real: &DataTable, synth: &DataTable, config: &PrivacyConfig) -> Result<PrivacyReport> {
    let (_, dcr) = dcr(real, synth)?;
    let (_, nndr_median) = nndr(real, synth)?;
    let trend = trend_compare(real, synth, &config.longitude, &config.latitude)?;
    let endpoints = endpoint_obscurity(real, synth, &config.latitude, &config.longitude)?;
    let grid_jaccard = grid_overlap(real, synth, &config.latitude, &config.longitude, config.cell_deg)?;
    let mut flags = Vec::new();
    if dcr.exact_matches > 0 {
        flags.push(format!("{} synthetic rows copy a real row exactly", dcr.exact_matches));
    }
    if dcr.p5 <= config.min_dcr_p5 {
        flags.push(format!("5th-percentile DCR {} is at or below {}", dcr.p5, config.min_dcr_p5));
    }
    if trend.relative_slope_difference > config.max_slope_difference {
        flags.push(format!(
            "lat/long slope differs by {:.4} (limit {})",
            trend.relative_slope_difference, config.max_slope_difference
        ));
    }
    for (name, e) in [("start", &endpoints.start), ("end", &endpoints.end)] {
        if e.meters <= config.min_endpoint_m {
            flags.push(format!("trip {name} has a synthetic point {:.1} m away", e.meters));
        }
    }
    Ok(PrivacyReport {
        dcr,
        nndr_median,
        trend,
        endpoints,
        grid_cell_deg: config.cell_deg,
        grid_jaccard,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_surrogate, ColumnKind, ColumnSpec, TableSchema};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn one_d(v: Vec<f64>) -> DataTable {
        DataTable::new(
            TableSchema::new(vec![ColumnSpec::new("x", ColumnKind::Continuous, "")]).unwrap(),
            vec![Column::Continuous(v)],
        )
        .unwrap()
    }

    fn geo(lat: Vec<f64>, lon: Vec<f64>) -> DataTable {
        DataTable::new(
            TableSchema::new(vec![
                ColumnSpec::new("latitude", ColumnKind::Continuous, ""),
                ColumnSpec::new("longitude", ColumnKind::Continuous, ""),
            ])
            .unwrap(),
            vec![Column::Continuous(lat), Column::Continuous(lon)],
        )
        .unwrap()
    }

    #[test]
    fn dcr_examples() {
        let (d, s) = dcr(&one_d(vec![0.0, 10.0]), &one_d(vec![4.0])).unwrap();
        assert!((d[0] - 0.4).abs() < 1e-15);
        assert_eq!(s.exact_matches, 0);
        let t = generate_surrogate(200, 1).unwrap();
        let (d, s) = dcr(&t, &t).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        assert_eq!(s.exact_matches, 200);
        assert!(dcr(&t, &t.empty_like()).is_err());
    }

    #[test]
    fn categorical_mismatch_adds_one() {
        let spec = TableSchema::new(vec![
            ColumnSpec::new("x", ColumnKind::Continuous, ""),
            ColumnSpec::new("c", ColumnKind::Categorical, ""),
        ])
        .unwrap();
        let t = |x: f64, c: u32| {
            DataTable::new(
                spec.clone(),
                vec![
                    Column::Continuous(vec![x, x + 1.0]),
                    Column::Categorical {
                        codes: vec![c, c],
                        labels: vec!["a".into(), "b".into()],
                    },
                ],
            )
            .unwrap()
        };
        let (d, _) = dcr(&t(0.0, 0), &t(0.0, 1)).unwrap();
        assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn nndr_examples() {
        let (r, _) = nndr(&one_d(vec![0.0, 10.0]), &one_d(vec![5.0])).unwrap();
        assert_eq!(r, vec![1.0]);
        let (r, _) = nndr(&one_d(vec![0.0, 10.0, 20.0]), &one_d(vec![10.0])).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(nndr(&one_d(vec![1.0]), &one_d(vec![1.0])).is_err());
    }

    #[test]
    fn ols_examples() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let l = ols(&x, &y).unwrap();
        assert!((l.slope - 3.0).abs() < 1e-12 && (l.intercept + 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let x: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0 + noise.sample(&mut rng)).collect();
        assert!((ols(&x, &y).unwrap().slope - 3.0).abs() < 0.01);
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn trend_of_identical_tables() {
        let t = generate_surrogate(300, 2).unwrap();
        let c = trend_compare(&t, &t, "longitude", "latitude").unwrap();
        assert_eq!(c.relative_slope_difference, 0.0);
    }

    #[test]
    fn haversine_scale_at_pvs_latitude() {
        // One hundredth of a degree of latitude is ~1112 m anywhere.
        let d = haversine_m((-27.7, -51.1), (-27.71, -51.1));
        assert!((d - 1111.95).abs() < 0.5, "{d}");
        let d = haversine_m((-27.7, -51.1), (-27.7, -51.11));
        let expected = 1111.95 * (27.7f64).to_radians().cos();
        assert!((d - expected).abs() < 0.5, "{d} vs {expected}");
    }

    #[test]
    fn endpoint_examples() {
        let real = geo(vec![-27.70, -27.69, -27.68], vec![-51.10, -51.11, -51.12]);
        let synth = geo(vec![-27.70, -27.60], vec![-51.10, -51.20]);
        let e = endpoint_obscurity(&real, &synth, "latitude", "longitude").unwrap();
        assert_eq!(e.start.meters, 0.0);
        assert!(e.exposed);
        let far = geo(vec![-27.69], vec![-51.11]);
        let e = endpoint_obscurity(&real, &far, "latitude", "longitude").unwrap();
        assert!(e.start.meters >= 1100.0 && e.end.meters >= 1100.0);
        assert!(!e.exposed);
        let e = endpoint_obscurity(&real, &real, "latitude", "longitude").unwrap();
        assert_eq!((e.start.meters, e.end.meters), (0.0, 0.0));
        assert!(endpoint_obscurity(&one_d(vec![1.0]), &one_d(vec![1.0]), "latitude", "longitude").is_err());
    }

    #[test]
    fn grid_examples() {
        let a = geo(vec![0.5, 1.5, 2.5], vec![0.5, 0.5, 0.5]);
        let b = geo(vec![0.5, 1.5, 2.5, 0.5], vec![0.5, 1.5, 2.5, 2.5]);
        // a: cells (0,0) (1,0) (2,0); b: (0,0) (1,1) (2,2) (0,2).
        let j = grid_overlap(&a, &b, "latitude", "longitude", 1.0).unwrap();
        assert!((j - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(grid_overlap(&a, &a, "latitude", "longitude", 1.0).unwrap(), 1.0);
        let far = geo(vec![50.0], vec![50.0]);
        assert_eq!(grid_overlap(&a, &far, "latitude", "longitude", 1.0).unwrap(), 0.0);
        assert!(grid_overlap(&a, &a, "latitude", "longitude", 0.0).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..500, shift in 1usize..40) {
            let real = generate_surrogate(60, seed).unwrap();
            let synth = generate_surrogate(40, seed + 1).unwrap();
            let perm: Vec<usize> = (0..60).map(|i| (i + shift) % 60).collect();
            let real_p = real.select_rows(&perm);
            let (d1, _) = dcr(&real, &synth).unwrap();
            let (d2, _) = dcr(&real_p, &synth).unwrap();
            prop_assert_eq!(d1, d2);
            let (n1, _) = nndr(&real, &synth).unwrap();
            let (n2, _) = nndr(&real_p, &synth).unwrap();
            prop_assert_eq!(n1, n2);
            let j1 = grid_overlap(&real, &synth, "latitude", "longitude", 0.001).unwrap();
            let j2 = grid_overlap(&synth, &real, "latitude", "longitude", 0.001).unwrap();
            prop_assert_eq!(j1, j2);
            prop_assert!((0.0..=1.0).contains(&j1));
        }
    }
}
