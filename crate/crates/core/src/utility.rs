//! Road-surface classification harness: train on real or synthetic rows,
//! test on real rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, TARGET_COLUMN};
use crate::error::{Error, Result};
use crate::neighbors::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierKind {
    Knn { k: usize },
    DecisionTree { max_depth: usize, min_leaf: usize },
    BoostedTrees { rounds: usize, max_depth: usize, learning_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    None,
    ZScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub scaling: Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindName {
    Knn,
    DecisionTree,
    BoostedTrees,
}

/// Flat on-disk form, e.g. `{ kind = "knn", k = 5, scaling = "z_score" }`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(default)]
    scaling: Scaling,
}

impl TryFrom<RawSpec> for ClassifierSpec {
    type Error = String;

    fn try_from(r: RawSpec) -> std::result::Result<Self, String> {
        let kind = match (r.kind, r.k, r.max_depth, r.min_leaf, r.rounds, r.learning_rate) {
            (KindName::Knn, Some(k), None, None, None, None) => ClassifierKind::Knn { k },
            (KindName::DecisionTree, None, Some(max_depth), Some(min_leaf), None, None) => {
                ClassifierKind::DecisionTree { max_depth, min_leaf }
            }
            (KindName::BoostedTrees, None, Some(max_depth), None, Some(rounds), Some(learning_rate)) => {
                ClassifierKind::BoostedTrees {
                    rounds,
                    max_depth,
                    learning_rate,
                }
            }
            (kind, ..) => {
                return Err(format!(
                    "{kind:?} takes: knn -> k; decision_tree -> max_depth, min_leaf; \
                     boosted_trees -> rounds, max_depth, learning_rate"
                ))
            }
        };
        Ok(ClassifierSpec {
            kind,
            scaling: r.scaling,
        })
    }
}

impl From<ClassifierSpec> for RawSpec {
    fn from(s: ClassifierSpec) -> Self {
        let mut r = RawSpec {
            kind: KindName::Knn,
            k: None,
            max_depth: None,
            min_leaf: None,
            rounds: None,
            learning_rate: None,
            scaling: s.scaling,
        };
        match s.kind {
            ClassifierKind::Knn { k } => r.k = Some(k),
            ClassifierKind::DecisionTree { max_depth, min_leaf } => {
                r.kind = KindName::DecisionTree;
                r.max_depth = Some(max_depth);
                r.min_leaf = Some(min_leaf);
            }
            ClassifierKind::BoostedTrees {
                rounds,
                max_depth,
                learning_rate,
            } => {
                r.kind = KindName::BoostedTrees;
                r.rounds = Some(rounds);
                r.max_depth = Some(max_depth);
                r.learning_rate = Some(learning_rate);
            }
        }
        r
    }
}

impl ClassifierSpec {
    pub fn knn(k: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::Knn { k },
            scaling: Scaling::ZScore,
        }
    }

    pub fn decision_tree(max_depth: usize, min_leaf: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::DecisionTree { max_depth, min_leaf },
            scaling: Scaling::None,
        }
    }

    pub fn boosted_trees(rounds: usize, max_depth: usize, learning_rate: f64) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::BoostedTrees {
                rounds,
                max_depth,
                learning_rate,
            },
            scaling: Scaling::None,
        }
    }

    /// KNN (k = 5, z-scored), a Gini tree and boosted trees.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::knn(5),
            Self::decision_tree(12, 5),
            Self::boosted_trees(60, 4, 0.3),
        ]
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            ClassifierKind::Knn { k } => format!("knn(k={k})"),
            ClassifierKind::DecisionTree { max_depth, min_leaf } => {
                format!("decision_tree(depth={max_depth},min_leaf={min_leaf})")
            }
            ClassifierKind::BoostedTrees {
                rounds,
                max_depth,
                learning_rate,
            } => format!("boosted_trees(rounds={rounds},depth={max_depth},lr={learning_rate})"),
        };
        match self.scaling {
            Scaling::None => base,
            Scaling::ZScore => format!("{base}+zscore"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ClassifierKind::Knn { k } => k >= 1,
            ClassifierKind::DecisionTree { max_depth, min_leaf } => max_depth >= 1 && min_leaf >= 1,
            ClassifierKind::BoostedTrees {
                rounds,
                max_depth,
                learning_rate,
            } => rounds >= 1 && max_depth >= 1 && learning_rate > 0.0 && learning_rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "classifier hyperparameters must be positive: {}",
                self.name()
            )))
        }
    }
}

/// Row-major feature matrix: every column except the target, categoricals as
/// their codes.
struct Features {
    data: Vec<f64>,
    dim: usize,
}

impl Features {
    fn from_table(table: &DataTable) -> Result<(Self, Vec<u32>)> {
        let target = table.schema().index_of(TARGET_COLUMN).ok_or_else(|| {
            Error::MissingColumn(TARGET_COLUMN.to_string())
        })?;
        let labels = table.codes(TARGET_COLUMN)?.to_vec();
        let cols: Vec<Vec<f64>> = table
            .columns()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, c)| match c.as_continuous() {
                Some(v) => v.to_vec(),
                None => c.as_codes().expect("categorical").iter().map(|&k| k as f64).collect(),
            })
            .collect();
        let dim = cols.len();
        let n = table.n_rows();
        let mut data = vec![0.0; n * dim];
        for (j, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                data[r * dim + j] = *v;
            }
        }
        Ok((Features { data, dim }, labels))
    }

    fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    fn get(&self, r: usize, j: usize) -> f64 {
        self.data[r * self.dim + j]
    }
}

fn zscore(train: &mut Features, test: &mut Features) {
    let n = train.rows() as f64;
    for j in 0..train.dim {
        let mean = (0..train.rows()).map(|r| train.get(r, j)).sum::<f64>() / n;
        let var = (0..train.rows()).map(|r| (train.get(r, j) - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for f in [&mut *train, &mut *test] {
            let dim = f.dim;
            for r in 0..f.rows() {
                let v = &mut f.data[r * dim + j];
                *v = (*v - mean) / sd;
            }
        }
    }
}

fn argmax_lowest(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best as u32
}

/// Fits `spec` on `train` and predicts the target code of every `test` row.
pub fn fit_predict(spec: &ClassifierSpec, train: &DataTable, test: &DataTable) -> Result<Vec<u32>> {
    spec.validate()?;
    train.check_same_schema(test)?;
    if train.n_rows() == 0 {
        return Err(Error::Empty("classifier needs training rows".into()));
    }
    let classes = train
        .column_by_name(TARGET_COLUMN)?
        .labels()
        .map_or(0, <[String]>::len);
    let (mut xtr, ytr) = Features::from_table(train)?;
    let (mut xte, _) = Features::from_table(test)?;
    if spec.scaling == Scaling::ZScore {
        zscore(&mut xtr, &mut xte);
    }
    let n_test = test.n_rows();
    if n_test == 0 {
        return Ok(Vec::new());
    }
    Ok(match spec.kind {
        ClassifierKind::Knn { k } => {
            let tree = KdTree::new(xtr.data, xtr.dim)?;
            tree.nearest_all(&xte.data, k)
                .into_iter()
                .map(|nb| {
                    let mut votes = vec![0.0; classes];
                    for n in nb {
                        votes[ytr[n.index] as usize] += 1.0;
                    }
                    argmax_lowest(&votes)
                })
                .collect()
        }
        ClassifierKind::DecisionTree { max_depth, min_leaf } => {
            let tree = Cart::fit(&xtr, &ytr, classes, max_depth, min_leaf);
            (0..n_test).into_par_iter().map(|r| tree.predict(xte.row(r))).collect()
        }
        ClassifierKind::BoostedTrees {
            rounds,
            max_depth,
            learning_rate,
        } => {
            let model = Boosted::fit(&xtr, &ytr, classes, rounds, max_depth, learning_rate);
            (0..n_test).into_par_iter().map(|r| model.predict(xte.row(r))).collect()
        }
    })
}

#[derive(Debug, Clone)]
enum CartNode {
    Leaf(u32),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Gini classification tree with exact thresholds at midpoints between
/// consecutive distinct values; `x <= threshold` goes left.
#[derive(Debug, Clone)]
struct Cart {
    nodes: Vec<CartNode>,
}

fn gini(counts: &[f64], n: f64) -> f64 {
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

impl Cart {
    fn fit(x: &Features, y: &[u32], classes: usize, max_depth: usize, min_leaf: usize) -> Self {
        let mut tree = Cart { nodes: Vec::new() };
        let idx: Vec<usize> = (0..x.rows()).collect();
        tree.grow(x, y, classes, idx, 0, max_depth, min_leaf);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        x: &Features,
        y: &[u32],
        classes: usize,
        idx: Vec<usize>,
        depth: usize,
        max_depth: usize,
        min_leaf: usize,
    ) -> usize {
        let id = self.nodes.len();
        let mut counts = vec![0.0; classes];
        for &i in &idx {
            counts[y[i] as usize] += 1.0;
        }
        self.nodes.push(CartNode::Leaf(argmax_lowest(&counts)));
        let n = idx.len() as f64;
        let parent = gini(&counts, n);
        if depth >= max_depth || parent <= 0.0 || idx.len() < 2 * min_leaf {
            return id;
        }

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.clone();
        for f in 0..x.dim {
            sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            let mut left = vec![0.0; classes];
            let mut right = counts.clone();
            for p in 0..sorted.len() - 1 {
                let c = y[sorted[p]] as usize;
                left[c] += 1.0;
                right[c] -= 1.0;
                let nl = p + 1;
                let nr = sorted.len() - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (a, b) = (x.get(sorted[p], f), x.get(sorted[p + 1], f));
                if a == b {
                    continue;
                }
                let impurity =
                    (nl as f64 * gini(&left, nl as f64) + nr as f64 * gini(&right, nr as f64)) / n;
                if best.is_none_or(|(bi, _, _)| impurity < bi) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((impurity, f, threshold));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return id;
        };
        if parent - impurity <= 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x.get(i, feature) <= threshold);
        let left = self.grow(x, y, classes, l, depth + 1, max_depth, min_leaf);
        let right = self.grow(x, y, classes, r, depth + 1, max_depth, min_leaf);
        self.nodes[id] = CartNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn predict(&self, row: &[f64]) -> u32 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                CartNode::Leaf(c) => return c,
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

const BOOST_BINS: usize = 64;
const BOOST_MIN_LEAF: usize = 5;

#[derive(Debug, Clone)]
enum RegNode {
    Leaf(f64),
    Split { feature: usize, bin: u16, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct RegTree {
    nodes: Vec<RegNode>,
}

impl RegTree {
    fn predict(&self, bins: &[u16]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                RegNode::Leaf(v) => return v,
                RegNode::Split {
                    feature,
                    bin,
                    left,
                    right,
                } => at = if bins[feature] <= bin { left } else { right },
            }
        }
    }
}

/// One-vs-rest gradient boosting: per class, squared-error regression trees
/// fit on histogram bins to the residual of the 0/1 class indicator.
#[derive(Debug, Clone)]
struct Boosted {
    edges: Vec<Vec<f64>>,
    base: Vec<f64>,
    trees: Vec<Vec<RegTree>>,
    learning_rate: f64,
}

fn bin_edges(values: &mut [f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..BOOST_BINS)
        .map(|i| crate::fidelity::quantile_sorted(values, i as f64 / BOOST_BINS as f64))
        .collect();
    edges.dedup();
    edges
}

fn bin_index(edges: &[f64], v: f64) -> u16 {
    edges.partition_point(|e| *e < v) as u16
}

impl Boosted {
    fn fit(x: &Features, y: &[u32], classes: usize, rounds: usize, depth: usize, lr: f64) -> Self {
        let n = x.rows();
        let edges: Vec<Vec<f64>> = (0..x.dim)
            .map(|j| bin_edges(&mut (0..n).map(|r| x.get(r, j)).collect::<Vec<_>>()))
            .collect();
        let bins: Vec<u16> = (0..n)
            .flat_map(|r| (0..x.dim).map(move |j| (r, j)))
            .map(|(r, j)| bin_index(&edges[j], x.get(r, j)))
            .collect();
        let mut base = vec![0.0; classes];
        for &c in y {
            base[c as usize] += 1.0 / n as f64;
        }
        let trees = (0..classes)
            .map(|c| {
                let target: Vec<f64> = y.iter().map(|&k| if k as usize == c { 1.0 } else { 0.0 }).collect();
                let mut f = vec![base[c]; n];
                let mut out = Vec::with_capacity(rounds);
                for _ in 0..rounds {
                    let resid: Vec<f64> = target.iter().zip(&f).map(|(t, p)| t - p).collect();
                    let tree = grow_regression(&bins, x.dim, &edges, &resid, depth);
                    for (r, fr) in f.iter_mut().enumerate() {
                        *fr += lr * tree.predict(&bins[r * x.dim..(r + 1) * x.dim]);
                    }
                    out.push(tree);
                }
                out
            })
            .collect();
        Boosted {
            edges,
            base,
            trees,
            learning_rate: lr,
        }
    }

    fn predict(&self, row: &[f64]) -> u32 {
        let bins: Vec<u16> = row.iter().zip(&self.edges).map(|(v, e)| bin_index(e, *v)).collect();
        let scores: Vec<f64> = self
            .trees
            .iter()
            .zip(&self.base)
            .map(|(ts, b)| b + ts.iter().map(|t| self.learning_rate * t.predict(&bins)).sum::<f64>())
            .collect();
        argmax_lowest(&scores)
    }
}

fn grow_regression(bins: &[u16], dim: usize, edges: &[Vec<f64>], resid: &[f64], depth: usize) -> RegTree {
    let mut tree = RegTree { nodes: Vec::new() };
    let idx: Vec<usize> = (0..resid.len()).collect();
    grow_reg_node(&mut tree, bins, dim, edges, resid, idx, depth);
    tree
}

fn grow_reg_node(
    tree: &mut RegTree,
    bins: &[u16],
    dim: usize,
    edges: &[Vec<f64>],
    resid: &[f64],
    idx: Vec<usize>,
    depth: usize,
) -> usize {
    let id = tree.nodes.len();
    let n = idx.len() as f64;
    let sum: f64 = idx.iter().map(|&i| resid[i]).sum();
    tree.nodes.push(RegNode::Leaf(sum / n));
    if depth == 0 || idx.len() < 2 * BOOST_MIN_LEAF {
        return id;
    }
    let base_score = sum * sum / n;
    let mut best: Option<(f64, usize, u16)> = None;
    for f in 0..dim {
        let nb = edges[f].len() + 1;
        let mut s = vec![0.0; nb];
        let mut c = vec![0usize; nb];
        for &i in &idx {
            let b = bins[i * dim + f] as usize;
            s[b] += resid[i];
            c[b] += 1;
        }
        let (mut sl, mut cl) = (0.0, 0usize);
        for b in 0..nb - 1 {
            sl += s[b];
            cl += c[b];
            let cr = idx.len() - cl;
            if cl < BOOST_MIN_LEAF || cr < BOOST_MIN_LEAF {
                continue;
            }
            let sr = sum - sl;
            let gain = sl * sl / cl as f64 + sr * sr / cr as f64 - base_score;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, b as u16));
            }
        }
    }
    let Some((gain, feature, bin)) = best else {
        return id;
    };
    if gain <= 1e-12 {
        return id;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| bins[i * dim + feature] <= bin);
    let left = grow_reg_node(tree, bins, dim, edges, resid, l, depth - 1);
    let right = grow_reg_node(tree, bins, dim, edges, resid, r, depth - 1);
    tree.nodes[id] = RegNode::Split {
        feature,
        bin,
        left,
        right,
    };
    id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub code: u32,
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub total: usize,
    /// Classes that occur in the truth or the predictions, by code.
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    /// `confusion[truth][predicted]` over the full code map.
    pub confusion: Vec<Vec<usize>>,
    pub flags: Vec<String>,
}

/// Standard per-class precision/recall/F1 with macro and support-weighted
/// averages. Undefined ratios are reported as 0 and flagged.
pub fn evaluate(predictions: &[u32], truth: &[u32], labels: &[String]) -> Result<ClassificationReport> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("cannot evaluate zero predictions".into()));
    }
    let k = labels.len();
    if let Some(c) = predictions.iter().chain(truth).find(|&&c| c as usize >= k) {
        return Err(Error::InvalidArgument(format!("class code {c} outside {k} labels")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t as usize][p as usize] += 1;
    }
    let total = truth.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut flags = Vec::new();
    let mut classes = Vec::new();
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
        if support == 0 && predicted == 0 {
            continue;
        }
        let tp = confusion[c][c] as f64;
        let precision = if predicted > 0 {
            tp / predicted as f64
        } else {
            flags.push(format!("{} never predicted; precision set to 0", labels[c]));
            0.0
        };
        let recall = if support > 0 {
            tp / support as f64
        } else {
            flags.push(format!("{} absent from truth; recall set to 0", labels[c]));
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassMetrics {
            code: c as u32,
            label: labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let m = classes.len() as f64;
    let macro_avg = AverageMetrics {
        precision: classes.iter().map(|c| c.precision).sum::<f64>() / m,
        recall: classes.iter().map(|c| c.recall).sum::<f64>() / m,
        f1: classes.iter().map(|c| c.f1).sum::<f64>() / m,
    };
    let w = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
    };
    let weighted_avg = AverageMetrics {
        precision: w(|c| c.precision),
        recall: w(|c| c.recall),
        f1: w(|c| c.f1),
    };
    let report = ClassificationReport {
        accuracy: correct as f64 / total as f64,
        total,
        classes,
        macro_avg,
        weighted_avg,
        confusion,
        flags,
    };
    debug_assert!(report.check_invariants().is_ok());
    Ok(report)
}

impl ClassificationReport {
    /// Confusion row sums equal supports and accuracy equals trace / total.
    pub fn check_invariants(&self) -> Result<()> {
        for c in &self.classes {
            let row: usize = self.confusion[c.code as usize].iter().sum();
            if row != c.support {
                return Err(Error::InvalidArgument(format!(
                    "class {} support {} but confusion row sums to {row}",
                    c.label, c.support
                )));
            }
        }
        let trace: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        let sum: usize = self.confusion.iter().flatten().sum();
        if sum != self.total || trace as f64 / self.total as f64 != self.accuracy {
            return Err(Error::InvalidArgument("accuracy does not match the confusion matrix".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecResult {
    pub name: String,
    pub spec: ClassifierSpec,
    pub report: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRun {
    pub train_rows: usize,
    pub test_rows: usize,
    pub results: Vec<SpecResult>,
    /// Index into `results` of the highest accuracy (first on ties).
    pub best: usize,
}

impl UtilityRun {
    pub fn best_report(&self) -> &ClassificationReport {
        &self.results[self.best].report
    }
}

fn run_specs(train: &DataTable, test: &DataTable, specs: &[ClassifierSpec]) -> Result<UtilityRun> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no classifiers configured".into()));
    }
    let labels = test
        .column_by_name(TARGET_COLUMN)?
        .labels()
        .map(<[String]>::to_vec)
        .unwrap_or_default();
    let truth = test.codes(TARGET_COLUMN)?;
    let results = specs
        .par_iter()
        .map(|spec| {
            let pred = fit_predict(spec, train, test)?;
            Ok(SpecResult {
                name: spec.name(),
                spec: *spec,
                report: evaluate(&pred, truth, &labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.report.accuracy > results[best].report.accuracy {
            best = i;
        }
    }
    Ok(UtilityRun {
        train_rows: train.n_rows(),
        test_rows: test.n_rows(),
        results,
        best,
    })
}

/// Train on real rows, test on held-out real rows.
pub fn trtr(real_train: &DataTable, real_test: &DataTable, specs: &[ClassifierSpec]) -> Result<UtilityRun> {
    run_specs(real_train, real_test, specs)
}

/// Train on synthetic rows only, test on real rows.
pub fn tstr(synth: &DataTable, real_test: &DataTable, specs: &[ClassifierSpec]) -> Result<UtilityRun> {
    run_specs(synth, real_test, specs)
}
