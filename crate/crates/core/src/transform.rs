//! Reversible encoding between a [`DataTable`] and the model-space matrix.
//!
//! Continuous columns use mode-specific normalization: a univariate Gaussian
//! mixture is fit by EM, each value is assigned to one mode and encoded as
//! `alpha = (x - mean) / (4 * std)` clipped to `[-1, 1]` plus a one-hot mode
//! indicator. Categorical columns are one-hot encoded. A continuous column
//! always occupies `1 + k` slots; pruned components stay as inactive slots.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, DataTable, TableSchema};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Mixture components per continuous column.
pub const DEFAULT_COMPONENTS: usize = 10;
/// Components whose weight falls below this are dropped after fitting.
pub const PRUNE_WEIGHT: f64 = 1e-3;
/// k-means++ seeding looks at no more than this many values.
const SEED_SUBSAMPLE: usize = 10_000;
const DEFAULT_MAX_ITER: usize = 100;
const DEFAULT_TOL: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Univariate Gaussian mixture. A component with weight 0 is inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    #[inline]
    fn log_component(&self, j: usize, x: f64) -> f64 {
        let z = (x - self.means[j]) / self.stds[j];
        self.weights[j].ln() - self.stds[j].ln() - LN_SQRT_2PI - 0.5 * z * z
    }

    /// Posterior responsibilities of the active components for `x`
    /// (inactive entries are 0).
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let mut logp = vec![f64::NEG_INFINITY; self.k()];
        let mut max = f64::NEG_INFINITY;
        for j in self.active() {
            logp[j] = self.log_component(j, x);
            max = max.max(logp[j]);
        }
        let mut total = 0.0;
        for l in &mut logp {
            *l = if l.is_finite() { (*l - max).exp() } else { 0.0 };
            total += *l;
        }
        for l in &mut logp {
            *l /= total;
        }
        logp
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let mut max = f64::NEG_INFINITY;
                let lp: Vec<f64> = self
                    .active()
                    .map(|j| {
                        let l = self.log_component(j, x);
                        max = max.max(l);
                        l
                    })
                    .collect();
                max + lp.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            })
            .sum()
    }
}

/// Result of one EM run with a fixed component count.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: GmmParams,
    /// Total log-likelihood after initialization and after every iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn std_floor(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = var.sqrt();
    1e-4 * if s > 0.0 { s } else { 1.0 }
}

fn distinct_count(values: &[f64], cap: usize) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len().min(cap)
}

/// k-means++ centres drawn from a deterministic subsample.
fn kmeans_pp(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pool: Vec<f64> = if values.len() > SEED_SUBSAMPLE {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.shuffle(rng);
        idx.truncate(SEED_SUBSAMPLE);
        idx.sort_unstable();
        idx.into_iter().map(|i| values[i]).collect()
    } else {
        values.to_vec()
    };
    let mut centres = vec![pool[rng.random_range(0..pool.len())]];
    let mut d2: Vec<f64> = pool.iter().map(|x| (x - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = pool[pick];
        centres.push(c);
        for (d, x) in d2.iter_mut().zip(&pool) {
            *d = d.min((x - c).powi(2));
        }
    }
    centres
}

/// Plain maximum-likelihood EM with `k` components and a per-component
/// standard-deviation floor. Initialized from a hard assignment to k-means++
/// centres.
pub fn em_fit(values: &[f64], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<EmRun> {
    if values.is_empty() {
        return Err(Error::Empty("cannot fit a mixture to an empty column".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("mixture input value {i}")));
    }
    let floor = std_floor(values);
    let n = values.len();
    let k = k.min(distinct_count(values, k));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = kmeans_pp(values, k, &mut rng);
    let k = centres.len();

    // Hard assignment to the nearest centre gives the starting parameters.
    let mut resp = vec![0.0; n * k];
    for (i, &x) in values.iter().enumerate() {
        let mut best = 0;
        for j in 1..k {
            if (x - centres[j]).abs() < (x - centres[best]).abs() {
                best = j;
            }
        }
        resp[i * k + best] = 1.0;
    }
    let mut params = GmmParams {
        weights: vec![0.0; k],
        means: centres,
        stds: vec![floor; k],
    };
    m_step(values, &resp, &mut params, floor);

    let mut trace = vec![e_step(values, &params, &mut resp)];
    let mut converged = false;
    for _ in 0..max_iter {
        m_step(values, &resp, &mut params, floor);
        let ll = e_step(values, &params, &mut resp);
        let prev = *trace.last().expect("trace seeded");
        debug_assert!(
            ll >= prev - 1e-9 * prev.abs().max(1.0),
            "EM log-likelihood decreased: {prev} -> {ll}"
        );
        trace.push(ll);
        if (ll - prev).abs() / n as f64 <= tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        log_likelihood: trace,
        converged,
    })
}

fn e_step(values: &[f64], params: &GmmParams, resp: &mut [f64]) -> f64 {
    let k = params.k();
    let mut total = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for (j, r) in row.iter_mut().enumerate() {
            *r = if params.weights[j] > 0.0 {
                params.log_component(j, x)
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(*r);
        }
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = if r.is_finite() { (*r - max).exp() } else { 0.0 };
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
        total += max + s.ln();
    }
    total
}

fn m_step(values: &[f64], resp: &[f64], params: &mut GmmParams, floor: f64) {
    let k = params.k();
    let n = values.len() as f64;
    let mut mass = vec![0.0; k];
    let mut sum = vec![0.0; k];
    for (i, &x) in values.iter().enumerate() {
        for j in 0..k {
            let r = resp[i * k + j];
            mass[j] += r;
            sum[j] += r * x;
        }
    }
    let mut means = params.means.clone();
    for j in 0..k {
        if mass[j] > 0.0 {
            means[j] = sum[j] / mass[j];
        }
    }
    let mut sq = vec![0.0; k];
    for (i, &x) in values.iter().enumerate() {
        for j in 0..k {
            sq[j] += resp[i * k + j] * (x - means[j]).powi(2);
        }
    }
    for j in 0..k {
        params.weights[j] = mass[j] / n;
        if mass[j] > 0.0 {
            params.means[j] = means[j];
            params.stds[j] = (sq[j] / mass[j]).sqrt().max(floor);
        }
    }
}

/// Fits the per-column mixture: EM for every component count up to `k`,
/// keeps the count with the lowest BIC, drops components lighter than
/// [`PRUNE_WEIGHT`] and pads back to `k` slots with inactive components.
pub fn fit_gmm(values: &[f64], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<GmmParams> {
    if values.is_empty() {
        return Err(Error::Empty("cannot fit a mixture to an empty column".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    let n = values.len() as f64;
    let max_m = k.min(distinct_count(values, k));
    let mut best: Option<(f64, GmmParams)> = None;
    let mut worse_in_a_row = 0;
    for m in 1..=max_m {
        let run = em_fit(values, m, seed.wrapping_add(m as u64), max_iter, tol)?;
        let ll = *run.log_likelihood.last().expect("non-empty trace");
        let free = (3 * run.params.k() - 1) as f64;
        let bic = -2.0 * ll + free * n.ln();
        match &best {
            Some((b, _)) if bic >= *b => {
                worse_in_a_row += 1;
                if worse_in_a_row >= 2 {
                    break;
                }
            }
            _ => {
                worse_in_a_row = 0;
                best = Some((bic, run.params));
            }
        }
    }
    let (_, fitted) = best.expect("at least one component count evaluated");

    let keep: Vec<usize> = (0..fitted.k())
        .filter(|&j| fitted.weights[j] >= PRUNE_WEIGHT)
        .collect();
    let keep = if keep.is_empty() {
        vec![(0..fitted.k())
            .max_by(|&a, &b| fitted.weights[a].total_cmp(&fitted.weights[b]))
            .expect("non-empty mixture")]
    } else {
        keep
    };
    let total: f64 = keep.iter().map(|&j| fitted.weights[j]).sum();
    let mut params = GmmParams {
        weights: vec![0.0; k],
        means: vec![0.0; k],
        stds: vec![1.0; k],
    };
    for (slot, &j) in keep.iter().enumerate() {
        params.weights[slot] = fitted.weights[j] / total;
        params.means[slot] = fitted.means[j];
        params.stds[slot] = fitted.stds[j];
    }
    Ok(params)
}

/// How a value picks its mode during encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeAssignment {
    /// Highest posterior responsibility.
    Argmax,
    /// Draw from the posterior responsibilities.
    Sampled { seed: u64 },
}

pub fn normalize_value(x: f64, mode: usize, gmm: &GmmParams) -> f64 {
    ((x - gmm.means[mode]) / (4.0 * gmm.stds[mode])).clamp(-1.0, 1.0)
}

pub fn denormalize_value(alpha: f64, mode: usize, gmm: &GmmParams) -> f64 {
    alpha * 4.0 * gmm.stds[mode] + gmm.means[mode]
}

/// Encodes a column as `(alpha, mode index)` pairs.
pub fn normalize_column(
    values: &[f64],
    gmm: &GmmParams,
    assignment: ModeAssignment,
) -> (Vec<f64>, Vec<usize>) {
    let mut rng = match assignment {
        ModeAssignment::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ModeAssignment::Argmax => None,
    };
    let mut alphas = Vec::with_capacity(values.len());
    let mut modes = Vec::with_capacity(values.len());
    for &x in values {
        let r = gmm.responsibilities(x);
        let mode = match rng.as_mut() {
            None => argmax(&r),
            Some(rng) => {
                let mut u = rng.random::<f64>();
                let mut pick = argmax(&r);
                for (j, p) in r.iter().enumerate() {
                    if *p > 0.0 {
                        if u < *p {
                            pick = j;
                            break;
                        }
                        u -= p;
                    }
                }
                pick
            }
        };
        alphas.push(normalize_value(x, mode, gmm));
        modes.push(mode);
    }
    (alphas, modes)
}

/// Decodes `(alpha, indicator row)` pairs. Indicators need not be one-hot:
/// the largest entry among active components selects the mode.
pub fn denormalize_column(alphas: &[f64], indicators: &[&[f64]], gmm: &GmmParams) -> Vec<f64> {
    alphas
        .iter()
        .zip(indicators)
        .map(|(&a, ind)| denormalize_value(a, active_argmax(ind, gmm), gmm))
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn active_argmax(scores: &[f64], gmm: &GmmParams) -> usize {
    let mut best: Option<usize> = None;
    for j in gmm.active() {
        if best.is_none_or(|b| scores[j] > scores[b]) {
            best = Some(j);
        }
    }
    best.unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Continuous { gmm: GmmParams },
    Categorical { labels: Vec<String> },
}

impl ColumnEncoding {
    pub fn width(&self) -> usize {
        match self {
            ColumnEncoding::Continuous { gmm } => 1 + gmm.k(),
            ColumnEncoding::Categorical { labels } => labels.len(),
        }
    }
}

/// Contiguous slice of model-space columns and how the decoder treats it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSpan {
    /// Single `alpha` slot, decoded through `tanh`.
    Alpha { start: usize },
    /// Group of logits trained with softmax cross-entropy.
    Softmax { start: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransformer {
    schema: TableSchema,
    encodings: Vec<ColumnEncoding>,
}

/// Fits one encoding per schema column; continuous columns run in parallel.
pub fn fit_transformer(table: &DataTable, k: usize, seed: u64) -> Result<ColumnTransformer> {
    if table.n_rows() == 0 {
        return Err(Error::Empty("cannot fit a transformer on an empty table".into()));
    }
    let encodings = table
        .columns()
        .par_iter()
        .enumerate()
        .map(|(i, col)| match col {
            Column::Continuous(v) => Ok(ColumnEncoding::Continuous {
                gmm: fit_gmm(
                    v,
                    k,
                    seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                    DEFAULT_MAX_ITER,
                    DEFAULT_TOL,
                )?,
            }),
            Column::Categorical { labels, .. } => Ok(ColumnEncoding::Categorical {
                labels: labels.clone(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ColumnTransformer {
        schema: table.schema().clone(),
        encodings,
    })
}

impl ColumnTransformer {
    pub fn new(schema: TableSchema, encodings: Vec<ColumnEncoding>) -> Result<Self> {
        if schema.len() != encodings.len() {
            return Err(Error::Schema(format!(
                "{} encodings for {} columns",
                encodings.len(),
                schema.len()
            )));
        }
        for (spec, enc) in schema.columns.iter().zip(&encodings) {
            let ok = matches!(
                (spec.kind, enc),
                (ColumnKind::Continuous, ColumnEncoding::Continuous { .. })
                    | (ColumnKind::Categorical, ColumnEncoding::Categorical { .. })
            );
            if !ok {
                return Err(Error::Schema(format!("encoding kind mismatch for {:?}", spec.name)));
            }
        }
        Ok(ColumnTransformer { schema, encodings })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    fn check_schema(&self, other: &TableSchema) -> Result<()> {
        let a = &self.schema.columns;
        let b = &other.columns;
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.name != y.name || x.kind != y.kind) {
            return Err(Error::Schema(format!(
                "table columns [{}] do not match transformer columns [{}]",
                other.names().join(", "),
                self.schema.names().join(", ")
            )));
        }
        Ok(())
    }

    pub fn encodings(&self) -> &[ColumnEncoding] {
        &self.encodings
    }

    pub fn width(&self) -> usize {
        self.encodings.iter().map(ColumnEncoding::width).sum()
    }

    pub fn continuous_count(&self) -> usize {
        self.encodings
            .iter()
            .filter(|e| matches!(e, ColumnEncoding::Continuous { .. }))
            .count()
    }

    /// Decoder head layout, in column order.
    pub fn output_spans(&self) -> Vec<OutputSpan> {
        let mut spans = Vec::new();
        let mut at = 0;
        for enc in &self.encodings {
            match enc {
                ColumnEncoding::Continuous { gmm } => {
                    spans.push(OutputSpan::Alpha { start: at });
                    spans.push(OutputSpan::Softmax {
                        start: at + 1,
                        len: gmm.k(),
                    });
                }
                ColumnEncoding::Categorical { labels } => spans.push(OutputSpan::Softmax {
                    start: at,
                    len: labels.len(),
                }),
            }
            at += enc.width();
        }
        spans
    }

    pub fn apply(&self, table: &DataTable, assignment: ModeAssignment) -> Result<Matrix> {
        self.check_schema(table.schema())?;
        let rows = table.n_rows();
        let width = self.width();
        let mut out = Matrix::zeros(rows, width);
        let mut at = 0;
        for (i, (enc, col)) in self.encodings.iter().zip(table.columns()).enumerate() {
            match (enc, col) {
                (ColumnEncoding::Continuous { gmm }, Column::Continuous(v)) => {
                    let assignment = match assignment {
                        ModeAssignment::Sampled { seed } => ModeAssignment::Sampled {
                            seed: seed.wrapping_mul(31).wrapping_add(i as u64),
                        },
                        a => a,
                    };
                    let (alphas, modes) = normalize_column(v, gmm, assignment);
                    for r in 0..rows {
                        out.set(r, at, alphas[r]);
                        out.set(r, at + 1 + modes[r], 1.0);
                    }
                }
                (ColumnEncoding::Categorical { labels }, Column::Categorical { codes, .. }) => {
                    for (r, &c) in codes.iter().enumerate() {
                        if c as usize >= labels.len() {
                            return Err(Error::Schema(format!(
                                "code {c} at row {r} has no slot in the fitted encoding"
                            )));
                        }
                        out.set(r, at + c as usize, 1.0);
                    }
                }
                _ => unreachable!("schema checked above"),
            }
            at += enc.width();
        }
        Ok(out)
    }

    /// Decodes model-space rows; modes and categories are taken by argmax.
    pub fn invert(&self, matrix: &Matrix) -> Result<DataTable> {
        if matrix.cols() != self.width() {
            return Err(Error::Schema(format!(
                "matrix has {} columns, transformer width is {}",
                matrix.cols(),
                self.width()
            )));
        }
        let rows = matrix.rows();
        let mut columns = Vec::with_capacity(self.encodings.len());
        let mut at = 0;
        for enc in &self.encodings {
            match enc {
                ColumnEncoding::Continuous { gmm } => {
                    let values = (0..rows)
                        .map(|r| {
                            let row = matrix.row(r);
                            let mode = active_argmax(&row[at + 1..at + 1 + gmm.k()], gmm);
                            denormalize_value(row[at], mode, gmm)
                        })
                        .collect();
                    columns.push(Column::Continuous(values));
                }
                ColumnEncoding::Categorical { labels } => {
                    let codes = (0..rows)
                        .map(|r| argmax(&matrix.row(r)[at..at + labels.len()]) as u32)
                        .collect();
                    columns.push(Column::Categorical {
                        codes,
                        labels: labels.clone(),
                    });
                }
            }
            at += enc.width();
        }
        DataTable::new(self.schema.clone(), columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_surrogate, ColumnSpec};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn two_clusters(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| unit.sample(&mut rng) + if i % 2 == 0 { 0.0 } else { 100.0 })
            .collect()
    }

    #[test]
    fn constant_column_gets_floor_std() {
        let g = fit_gmm(&[3.5; 50], 1, 0, 100, 1e-6).unwrap();
        assert_eq!(g.means[0], 3.5);
        assert_eq!(g.stds[0], 1e-4);
        assert_eq!(g.weights, vec![1.0]);
        let g = fit_gmm(&[3.5; 50], 10, 0, 100, 1e-6).unwrap();
        assert_eq!(g.active_count(), 1);
        assert_eq!(g.k(), 10);
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let v = two_clusters(5000, 3);
        let g = fit_gmm(&v, 2, 5, 200, 1e-8).unwrap();
        let mut comps: Vec<(f64, f64)> = g.active().map(|j| (g.means[j], g.weights[j])).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(comps.len(), 2);
        assert!((comps[0].0 - 0.0).abs() < 0.5 && (comps[1].0 - 100.0).abs() < 0.5, "{comps:?}");
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
    }

    #[test]
    fn surplus_components_are_pruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..6000)
            .map(|i| [-20.0, 5.0, 40.0][i % 3] + unit.sample(&mut rng))
            .collect();
        let g = fit_gmm(&v, 10, 1, 200, 1e-7).unwrap();
        let heavy = g.weights.iter().filter(|&&w| w > 0.01).count();
        assert!(heavy <= 3, "{g:?}");
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let v = generate_surrogate(3000, 4).unwrap();
        for name in ["latitude", "speed", "gyro"] {
            let col = v.continuous(name).unwrap();
            for k in [1, 3, 7] {
                let run = em_fit(col, k, 11, 60, 0.0).unwrap();
                for w in run.log_likelihood.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{name} k={k}: {w:?}");
                }
            }
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(fit_gmm(&[], 3, 0, 10, 1e-6), Err(Error::Empty(_))));
    }

    fn fixed_gmm() -> GmmParams {
        GmmParams {
            weights: vec![0.5, 0.5, 0.0],
            means: vec![0.0, 100.0, 7.0],
            stds: vec![1.0, 2.0, 1.0],
        }
    }

    #[test]
    fn normalization_formula_points() {
        let g = fixed_gmm();
        let (a, m) = normalize_column(&[100.0, 108.0, 0.0], &g, ModeAssignment::Argmax);
        assert_eq!(a, vec![0.0, 1.0, 0.0]);
        assert_eq!(m, vec![1, 1, 0]);
        let (a, _) = normalize_column(&[150.0], &g, ModeAssignment::Argmax);
        assert_eq!(a, vec![1.0]);
        assert_eq!(denormalize_value(0.0, 1, &g), 100.0);
        assert_eq!(denormalize_value(-1.0, 1, &g), 92.0);
    }

    #[test]
    fn denormalize_takes_argmax_of_soft_indicators() {
        let g = fixed_gmm();
        let soft = [0.2, 0.7, 0.1];
        // Inactive slot 2 is ignored even when it scores highest.
        let inactive_high = [0.2, 0.1, 0.9];
        let out = denormalize_column(&[0.5, 0.5], &[&soft, &inactive_high], &g);
        assert_eq!(out, vec![104.0, 2.0]);
    }

    #[test]
    fn sampled_modes_follow_responsibilities() {
        let g = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![0.0, 1.0],
            stds: vec![1.0, 1.0],
        };
        let (_, modes) = normalize_column(&vec![0.5; 4000], &g, ModeAssignment::Sampled { seed: 2 });
        let ones = modes.iter().filter(|&&m| m == 1).count() as f64 / 4000.0;
        assert!((ones - 0.5).abs() < 0.05);
    }

    #[test]
    fn pvs_width_and_one_hot_slots() {
        let t = generate_surrogate(400, 1).unwrap();
        let tr = fit_transformer(&t, 10, 0).unwrap();
        assert_eq!(tr.width(), 69);
        let m = tr.apply(&t, ModeAssignment::Argmax).unwrap();
        let road = t.codes("road_encoded").unwrap();
        let r = road.iter().position(|&c| c == 1).unwrap();
        assert_eq!(&m.row(r)[66..69], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn apply_rejects_column_mismatch() {
        let t = generate_surrogate(100, 1).unwrap();
        let tr = fit_transformer(&t, 3, 0).unwrap();
        let other = DataTable::new(
            TableSchema::new(vec![ColumnSpec::new("x", ColumnKind::Continuous, "")]).unwrap(),
            vec![Column::Continuous(vec![1.0])],
        )
        .unwrap();
        assert!(tr.apply(&other, ModeAssignment::Argmax).is_err());
        assert!(tr.invert(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn transformer_roundtrip_on_random_table() {
        let t = generate_surrogate(2000, 12).unwrap();
        let tr = fit_transformer(&t, 10, 3).unwrap();
        let m = tr.apply(&t, ModeAssignment::Argmax).unwrap();
        let back = tr.invert(&m).unwrap();
        for (a, b) in t.columns().iter().zip(back.columns()) {
            match (a, b) {
                (Column::Continuous(x), Column::Continuous(y)) => {
                    for (p, q) in x.iter().zip(y) {
                        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
                    }
                }
                (a, b) => assert_eq!(a, b),
            }
        }
        let json = serde_json::to_string(&tr).unwrap();
        let tr2: ColumnTransformer = serde_json::from_str(&json).unwrap();
        assert_eq!(tr2, tr);
    }

    proptest! {
        #[test]
        fn roundtrip_within_four_stds(
            means in proptest::collection::vec(-50.0f64..50.0, 1..5),
            u in proptest::collection::vec(-1.0f64..1.0, 1..50),
            seed in any::<u64>(),
        ) {
            let k = means.len();
            let g = GmmParams {
                weights: vec![1.0 / k as f64; k],
                means: means.clone(),
                stds: (0..k).map(|j| 0.5 + j as f64).collect(),
            };
            let xs: Vec<f64> = u.iter().enumerate().map(|(i, &t)| {
                let j = i % k;
                g.means[j] + 4.0 * g.stds[j] * t
            }).collect();
            let (alphas, modes) = normalize_column(&xs, &g, ModeAssignment::Sampled { seed });
            prop_assert!(alphas.iter().all(|a| (-1.0..=1.0).contains(a)));
            for ((x, a), m) in xs.iter().zip(&alphas).zip(&modes) {
                if (x - g.means[*m]).abs() <= 4.0 * g.stds[*m] {
                    prop_assert!((denormalize_value(*a, *m, &g) - x).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn width_formula_holds(kinds in proptest::collection::vec(0usize..4, 1..8), k in 1usize..6) {
            // kind 0 = continuous; 1..4 = categorical with that many labels.
            let n = 40;
            let mut specs = Vec::new();
            let mut cols = Vec::new();
            let mut expected = 0;
            for (i, &kind) in kinds.iter().enumerate() {
                if kind == 0 {
                    specs.push(ColumnSpec::new(format!("c{i}"), ColumnKind::Continuous, ""));
                    cols.push(Column::Continuous((0..n).map(|r| ((r * (i + 3)) % 17) as f64).collect()));
                    expected += 1 + k;
                } else {
                    specs.push(ColumnSpec::new(format!("c{i}"), ColumnKind::Categorical, ""));
                    cols.push(Column::Categorical {
                        codes: (0..n).map(|r| (r % kind) as u32).collect(),
                        labels: (0..kind).map(|l| l.to_string()).collect(),
                    });
                    expected += kind;
                }
            }
            let t = DataTable::new(TableSchema::new(specs).unwrap(), cols).unwrap();
            let tr = fit_transformer(&t, k, 0).unwrap();
            prop_assert_eq!(tr.width(), expected);
            let m = tr.apply(&t, ModeAssignment::Sampled { seed: 1 }).unwrap();
            for span in tr.output_spans() {
                if let OutputSpan::Softmax { start, len } = span {
                    for r in 0..m.rows() {
                        let s = &m.row(r)[start..start + len];
                        prop_assert_eq!(s.iter().filter(|&&v| v == 1.0).count(), 1);
                        prop_assert_eq!(s.iter().filter(|&&v| v == 0.0).count(), len - 1);
                    }
                }
            }
        }
    }
}
