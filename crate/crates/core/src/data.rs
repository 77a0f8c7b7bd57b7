//! Tabular data: schema, columnar tables, raw CSV ingestion and the reduction
//! of raw PVS recordings to six features plus the road label.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the label column produced by [`reduce_features`].
pub const TARGET_COLUMN: &str = "road_encoded";

/// Road labels with fixed codes; anything else is appended after them.
pub const ROAD_LABELS: [&str; 3] = ["asphalt", "cobblestone", "dirt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub unit: String,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, unit: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            unit: unit.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {:?}", c.name)));
            }
        }
        Ok(TableSchema { columns })
    }

    /// Processed PVS layout: six continuous features and the encoded road type.
    pub fn pvs() -> Self {
        use ColumnKind::*;
        TableSchema {
            columns: vec![
                ColumnSpec::new("latitude", Continuous, "degrees"),
                ColumnSpec::new("longitude", Continuous, "degrees"),
                ColumnSpec::new("speed", Continuous, "as-published"),
                ColumnSpec::new("acceleration", Continuous, "abs-mean of accelerometer axes"),
                ColumnSpec::new("gyro", Continuous, "abs-mean of gyroscope axes"),
                ColumnSpec::new("mag", Continuous, "abs-mean of magnetometer axes"),
                ColumnSpec::new(TARGET_COLUMN, Categorical, "code"),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Continuous(Vec<f64>),
    /// Codes index into `labels`.
    Categorical { codes: Vec<u32>, labels: Vec<String> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Column::Continuous(_) => ColumnKind::Continuous,
            Column::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Column::Continuous(v) => Some(v),
            Column::Categorical { .. } => None,
        }
    }

    pub fn as_codes(&self) -> Option<&[u32]> {
        match self {
            Column::Categorical { codes, .. } => Some(codes),
            Column::Continuous(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        match self {
            Column::Categorical { labels, .. } => Some(labels),
            Column::Continuous(_) => None,
        }
    }

    fn select(&self, idx: &[usize]) -> Column {
        match self {
            Column::Continuous(v) => Column::Continuous(idx.iter().map(|&i| v[i]).collect()),
            Column::Categorical { codes, labels } => Column::Categorical {
                codes: idx.iter().map(|&i| codes[i]).collect(),
                labels: labels.clone(),
            },
        }
    }
}

/// Columnar table; every column has the same length and matches its schema kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: TableSchema,
    columns: Vec<Column>,
}

impl DataTable {
    pub fn new(schema: TableSchema, columns: Vec<Column>) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "schema has {} columns, {} supplied",
                schema.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if col.kind() != spec.kind {
                return Err(Error::Schema(format!(
                    "column {:?} declared {:?} but holds {:?} data",
                    spec.name,
                    spec.kind,
                    col.kind()
                )));
            }
            if col.len() != rows {
                return Err(Error::Schema(format!(
                    "column {:?} has {} rows, expected {rows}",
                    spec.name,
                    col.len()
                )));
            }
            match col {
                Column::Continuous(v) => {
                    if let Some(r) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("column {:?}, row {r}", spec.name)));
                    }
                }
                Column::Categorical { codes, labels } => {
                    if let Some(r) = codes.iter().position(|&c| c as usize >= labels.len()) {
                        return Err(Error::Schema(format!(
                            "column {:?}, row {r}: code {} outside code map of {} labels",
                            spec.name,
                            codes[r],
                            labels.len()
                        )));
                    }
                }
            }
        }
        Ok(DataTable { schema, columns })
    }

    /// Zero-row table with the given schema; categorical code maps are kept.
    pub fn empty_like(&self) -> DataTable {
        self.select_rows(&[])
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column> {
        self.schema
            .index_of(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn continuous(&self, name: &str) -> Result<&[f64]> {
        self.column_by_name(name)?
            .as_continuous()
            .ok_or_else(|| Error::Schema(format!("column {name:?} is not continuous")))
    }

    pub fn codes(&self, name: &str) -> Result<&[u32]> {
        self.column_by_name(name)?
            .as_codes()
            .ok_or_else(|| Error::Schema(format!("column {name:?} is not categorical")))
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn select_rows(&self, idx: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
        }
    }

    /// Replaces one column, checking kind and length.
    pub fn with_column(&self, name: &str, column: Column) -> Result<DataTable> {
        let i = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let mut columns = self.columns.clone();
        columns[i] = column;
        DataTable::new(self.schema.clone(), columns)
    }

    /// Errors unless `other` has the same column names and kinds.
    pub fn check_same_schema(&self, other: &DataTable) -> Result<()> {
        let a = &self.schema.columns;
        let b = &other.schema.columns;
        if a.len() != b.len()
            || a.iter().zip(b).any(|(x, y)| x.name != y.name || x.kind != y.kind)
        {
            return Err(Error::Schema(format!(
                "tables disagree: [{}] vs [{}]",
                self.schema.names().join(", "),
                other.schema.names().join(", ")
            )));
        }
        Ok(())
    }

    /// Row `r` as strings in CSV form (categoricals as their codes).
    fn csv_row(&self, r: usize) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| match c {
                Column::Continuous(v) => format!("{}", v[r]),
                Column::Categorical { codes, .. } => codes[r].to_string(),
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(self.schema.names())?;
        for r in 0..self.n_rows() {
            w.write_record(self.csv_row(r))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn sidecar(&self, rows_read: usize, rows_rejected: usize) -> TableSidecar {
        let code_maps = self
            .schema
            .columns
            .iter()
            .zip(&self.columns)
            .filter_map(|(s, c)| c.labels().map(|l| (s.name.clone(), l.to_vec())))
            .collect();
        TableSidecar {
            schema: self.schema.clone(),
            code_maps,
            rows: self.n_rows(),
            rows_read,
            rows_rejected,
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` side by side.
    pub fn write_with_sidecar(&self, csv_path: &Path, sidecar: &TableSidecar) -> Result<()> {
        self.write_csv(csv_path)?;
        let json_path = csv_path.with_extension("json");
        let mut f = BufWriter::new(File::create(&json_path).map_err(|e| Error::io(&json_path, e))?);
        serde_json::to_writer_pretty(&mut f, sidecar)?;
        f.write_all(b"\n").map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }

    /// Reads a table written by [`DataTable::write_with_sidecar`].
    pub fn read_with_sidecar(csv_path: &Path) -> Result<(DataTable, TableSidecar)> {
        let json_path = csv_path.with_extension("json");
        let f = File::open(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: TableSidecar = serde_json::from_reader(BufReader::new(f))?;
        let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let headers = rdr.headers()?.clone();
        let names = sidecar.schema.names();
        if headers.iter().collect::<Vec<_>>() != names {
            return Err(Error::Schema(format!(
                "{} header does not match its sidecar schema",
                csv_path.display()
            )));
        }
        let mut cont: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut cat: Vec<Vec<u32>> = vec![Vec::new(); names.len()];
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, spec) in sidecar.schema.columns.iter().enumerate() {
                let cell = rec.get(c).unwrap_or("");
                let bad = || Error::BadCell {
                    row: r + 1,
                    column: spec.name.clone(),
                    value: cell.to_string(),
                };
                match spec.kind {
                    ColumnKind::Continuous => cont[c].push(cell.parse().map_err(|_| bad())?),
                    ColumnKind::Categorical => cat[c].push(cell.parse().map_err(|_| bad())?),
                }
            }
        }
        let columns = sidecar
            .schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, spec)| match spec.kind {
                ColumnKind::Continuous => Column::Continuous(std::mem::take(&mut cont[c])),
                ColumnKind::Categorical => Column::Categorical {
                    codes: std::mem::take(&mut cat[c]),
                    labels: sidecar.code_maps.get(&spec.name).cloned().unwrap_or_default(),
                },
            })
            .collect();
        let table = DataTable::new(sidecar.schema.clone(), columns)?;
        Ok((table, sidecar))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSidecar {
    pub schema: TableSchema,
    pub code_maps: BTreeMap<String, Vec<String>>,
    pub rows: usize,
    pub rows_read: usize,
    pub rows_rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Copy the single raw column unchanged.
    Passthrough,
    /// Per-row mean of absolute values across the raw columns.
    AbsMean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSource {
    pub name: String,
    pub columns: Vec<String>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelSource {
    /// A text column holding the road label.
    Column(String),
    /// Indicator columns, one per label; the column holding 1 names the row's label.
    OneHot(Vec<(String, String)>),
}

/// Which raw columns feed each processed feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub features: Vec<FeatureSource>,
    pub label: LabelSource,
}

impl Default for ColumnMapping {
    /// Column names of the published PVS `dataset_gps_mpu_*.csv` files with
    /// the one-hot road columns of `dataset_labels.csv`.
    fn default() -> Self {
        let axes = |sensor: &str| -> Vec<String> {
            ["dashboard", "above_suspension", "below_suspension"]
                .iter()
                .flat_map(|place| {
                    ["x", "y", "z"]
                        .iter()
                        .map(move |ax| format!("{sensor}_{ax}_{place}"))
                })
                .collect()
        };
        let pass = |n: &str| FeatureSource {
            name: n.into(),
            columns: vec![n.into()],
            aggregate: Aggregate::Passthrough,
        };
        let group = |n: &str, sensor: &str| FeatureSource {
            name: n.into(),
            columns: axes(sensor),
            aggregate: Aggregate::AbsMean,
        };
        ColumnMapping {
            features: vec![
                pass("latitude"),
                pass("longitude"),
                pass("speed"),
                group("acceleration", "acc"),
                group("gyro", "gyro"),
                group("mag", "mag"),
            ],
            label: LabelSource::OneHot(
                ROAD_LABELS
                    .iter()
                    .map(|l| (l.to_string(), format!("{l}_road")))
                    .collect(),
            ),
        }
    }
}

impl ColumnMapping {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) || f.name == TARGET_COLUMN {
                return Err(Error::InvalidArgument(format!(
                    "feature name {:?} is duplicated or reserved",
                    f.name
                )));
            }
            if f.columns.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "feature {:?} has an empty aggregation group",
                    f.name
                )));
            }
            if f.aggregate == Aggregate::Passthrough && f.columns.len() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "passthrough feature {:?} must name exactly one raw column",
                    f.name
                )));
            }
            for c in &f.columns {
                if !seen.insert(c.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "raw column {c:?} appears in more than one group"
                    )));
                }
            }
        }
        for c in self.label_columns() {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!(
                    "label column {c:?} is also used as a feature"
                )));
            }
        }
        Ok(())
    }

    fn label_columns(&self) -> Vec<&str> {
        match &self.label {
            LabelSource::Column(c) => vec![c.as_str()],
            LabelSource::OneHot(pairs) => pairs.iter().map(|(_, c)| c.as_str()).collect(),
        }
    }

    /// Raw numeric columns the mapping reads.
    pub fn numeric_columns(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .features
            .iter()
            .flat_map(|f| f.columns.iter().map(String::as_str))
            .collect();
        if let LabelSource::OneHot(pairs) = &self.label {
            v.extend(pairs.iter().map(|(_, c)| c.as_str()));
        }
        v
    }

    /// Every raw column the mapping reads.
    pub fn required_columns(&self) -> Vec<&str> {
        let mut v = self.numeric_columns();
        if let LabelSource::Column(c) = &self.label {
            v.push(c);
        }
        v
    }

    /// Checks a set of header names against the mapping; used for config
    /// validation before any stage runs.
    pub fn check_headers<'a>(&self, headers: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let present: BTreeSet<&str> = headers.into_iter().collect();
        if let LabelSource::Column(c) = &self.label {
            if !present.contains(c.as_str()) {
                return Err(Error::MissingColumn("label".into()));
            }
        }
        for c in self.required_columns() {
            if !present.contains(c) {
                return Err(Error::MissingColumn(c.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowPolicy {
    /// Any unparseable cell is an error naming row and column.
    #[default]
    Strict,
    /// Rows with an unparseable or missing cell are dropped and counted.
    SkipInvalid,
}

/// Referenced raw columns, parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub numeric: BTreeMap<String, Vec<f64>>,
    pub labels: Vec<String>,
    pub rows_read: usize,
    pub rows_rejected: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

pub fn load_csv(path: &Path, mapping: &ColumnMapping, policy: RowPolicy) -> Result<RawTable> {
    load_csv_joined(&[path], mapping, policy)
}

/// Reads the header row of a CSV file.
pub fn read_headers(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let h = rdr.headers()?;
    if h.is_empty() || (h.len() == 1 && h.get(0) == Some("")) {
        return Err(Error::Empty(format!("{} has no header row", path.display())));
    }
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

/// Loads several CSV files that describe the same rows and joins them
/// column-wise (PVS keeps sensors and labels in separate files).
pub fn load_csv_joined(paths: &[&Path], mapping: &ColumnMapping, policy: RowPolicy) -> Result<RawTable> {
    mapping.validate()?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no input files".into()));
    }
    let numeric_wanted: BTreeSet<&str> = mapping.numeric_columns().into_iter().collect();
    let label_col = match &mapping.label {
        LabelSource::Column(c) => Some(c.as_str()),
        LabelSource::OneHot(_) => None,
    };

    // (file index, column index) for every wanted column.
    let mut located: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut readers = Vec::with_capacity(paths.len());
    for (fi, path) in paths.iter().enumerate() {
        let file = File::open(path).map_err(|e| Error::io(*path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(BufReader::new(file));
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || (headers.len() == 1 && headers.get(0) == Some("")) {
            return Err(Error::Empty(format!("{} is empty", path.display())));
        }
        for (ci, h) in headers.iter().enumerate() {
            let h = h.trim();
            if numeric_wanted.contains(h) || label_col == Some(h) {
                located.entry(h.to_string()).or_insert((fi, ci));
            }
        }
        readers.push(rdr.into_records());
    }
    if let Some(c) = label_col {
        if !located.contains_key(c) {
            return Err(Error::MissingColumn("label".into()));
        }
    }
    for c in &numeric_wanted {
        if !located.contains_key(*c) {
            return Err(Error::MissingColumn((*c).to_string()));
        }
    }

    let mut numeric: BTreeMap<String, Vec<f64>> =
        numeric_wanted.iter().map(|c| (c.to_string(), Vec::new())).collect();
    let mut labels = Vec::new();
    let mut rows_read = 0usize;
    let mut rows_rejected = 0usize;
    let mut row_values: BTreeMap<&str, f64> = BTreeMap::new();

    loop {
        let mut records = Vec::with_capacity(readers.len());
        let mut ended = 0;
        for rdr in readers.iter_mut() {
            match rdr.next() {
                Some(rec) => records.push(Some(rec?)),
                None => {
                    ended += 1;
                    records.push(None);
                }
            }
        }
        if ended == readers.len() {
            break;
        }
        if ended > 0 {
            return Err(Error::Schema(format!(
                "input files disagree on row count (diverge after row {rows_read})"
            )));
        }
        rows_read += 1;
        let row_no = rows_read;
        row_values.clear();
        let mut failure: Option<Error> = None;
        for c in &numeric_wanted {
            let (fi, ci) = located[*c];
            let cell = records[fi].as_ref().and_then(|r| r.get(ci)).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    row_values.insert(c, v);
                }
                _ => {
                    failure = Some(Error::BadCell {
                        row: row_no,
                        column: (*c).to_string(),
                        value: cell.to_string(),
                    });
                    break;
                }
            }
        }
        let label = if failure.is_none() {
            match &mapping.label {
                LabelSource::Column(c) => {
                    let (fi, ci) = located[c.as_str()];
                    let cell = records[fi].as_ref().and_then(|r| r.get(ci)).unwrap_or("").trim();
                    if cell.is_empty() {
                        failure = Some(Error::BadCell {
                            row: row_no,
                            column: c.clone(),
                            value: String::new(),
                        });
                        None
                    } else {
                        Some(cell.to_string())
                    }
                }
                LabelSource::OneHot(pairs) => {
                    let hot: Vec<&str> = pairs
                        .iter()
                        .filter(|(_, c)| row_values[c.as_str()] > 0.5)
                        .map(|(l, _)| l.as_str())
                        .collect();
                    if hot.len() == 1 {
                        Some(hot[0].to_string())
                    } else {
                        failure = Some(Error::BadCell {
                            row: row_no,
                            column: pairs.iter().map(|(_, c)| c.as_str()).collect::<Vec<_>>().join("|"),
                            value: format!("{} indicator(s) set", hot.len()),
                        });
                        None
                    }
                }
            }
        } else {
            None
        };
        match (failure, label) {
            (None, Some(label)) => {
                for (c, v) in &row_values {
                    numeric.get_mut(*c).expect("wanted column").push(*v);
                }
                labels.push(label);
            }
            (Some(err), _) => match policy {
                RowPolicy::Strict => return Err(err),
                RowPolicy::SkipInvalid => rows_rejected += 1,
            },
            (None, None) => unreachable!("label missing without a recorded failure"),
        }
    }
    if rows_read == 0 {
        return Err(Error::Empty("input has a header but no data rows".into()));
    }
    Ok(RawTable {
        numeric,
        labels,
        rows_read,
        rows_rejected,
    })
}

/// Fixed road codes first, unseen labels appended in first-appearance order.
pub fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<u32>, Vec<String>) {
    let mut map: Vec<String> = ROAD_LABELS.iter().map(|s| s.to_string()).collect();
    let mut index: BTreeMap<String, u32> =
        map.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    let codes = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            *index.entry(l.to_string()).or_insert_with(|| {
                map.push(l.to_string());
                (map.len() - 1) as u32
            })
        })
        .collect();
    (codes, map)
}

pub fn decode_labels(codes: &[u32], labels: &[String]) -> Vec<String> {
    codes.iter().map(|&c| labels[c as usize].clone()).collect()
}

pub fn reduce_features(raw: &RawTable, mapping: &ColumnMapping) -> Result<DataTable> {
    mapping.validate()?;
    let n = raw.n_rows();
    let mut specs = Vec::with_capacity(mapping.features.len() + 1);
    let mut columns = Vec::with_capacity(mapping.features.len() + 1);
    let fallback = TableSchema::pvs();
    for f in &mapping.features {
        let sources: Vec<&[f64]> = f
            .columns
            .iter()
            .map(|c| {
                raw.numeric
                    .get(c)
                    .map(Vec::as_slice)
                    .ok_or_else(|| Error::MissingColumn(c.clone()))
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = match f.aggregate {
            Aggregate::Passthrough => sources[0].to_vec(),
            Aggregate::AbsMean => {
                let k = sources.len() as f64;
                (0..n)
                    .map(|r| sources.iter().map(|s| s[r].abs()).sum::<f64>() / k)
                    .collect()
            }
        };
        let unit = fallback
            .index_of(&f.name)
            .map(|i| fallback.columns[i].unit.clone())
            .unwrap_or_else(|| "as-published".into());
        specs.push(ColumnSpec::new(f.name.clone(), ColumnKind::Continuous, unit));
        columns.push(Column::Continuous(values));
    }
    let (codes, labels) = encode_labels(&raw.labels);
    specs.push(ColumnSpec::new(TARGET_COLUMN, ColumnKind::Categorical, "code"));
    columns.push(Column::Categorical { codes, labels });
    DataTable::new(TableSchema::new(specs)?, columns)
}

/// Stratified holdout split on [`TARGET_COLUMN`].
pub fn split(table: &DataTable, holdout_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    split_stratified(table, TARGET_COLUMN, holdout_fraction, seed)
}

/// Per-class shuffles, with holdout counts apportioned by largest remainder
/// so the total equals `round(rows * fraction)`. Both halves keep the
/// original row order.
pub fn split_stratified(
    table: &DataTable,
    target: &str,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(DataTable, DataTable)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let codes = table.codes(target)?;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in codes.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    for (&code, rows) in &by_class {
        if rows.len() < 2 {
            return Err(Error::ClassTooSmall {
                code,
                count: rows.len(),
            });
        }
    }
    let total = ((codes.len() as f64) * holdout_fraction).round() as usize;
    let mut quota: Vec<(u32, usize, f64)> = by_class
        .iter()
        .map(|(&c, rows)| {
            let exact = rows.len() as f64 * holdout_fraction;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(quota.len() * 2) {
        if assigned >= total {
            break;
        }
        if quota[i].1 < by_class[&quota[i].0].len() - 1 {
            quota[i].1 += 1;
            assigned += 1;
        }
    }
    for q in &mut quota {
        let n = by_class[&q.0].len();
        q.1 = q.1.clamp(1, n - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut holdout = Vec::new();
    let mut train = Vec::new();
    for (code, take, _) in &quota {
        let mut rows = by_class[code].clone();
        rows.shuffle(&mut rng);
        holdout.extend_from_slice(&rows[..*take]);
        train.extend_from_slice(&rows[*take..]);
    }
    holdout.sort_unstable();
    train.sort_unstable();
    Ok((table.select_rows(&train), table.select_rows(&holdout)))
}

/// Deterministic subsample of at most `rows` rows, original order kept.
pub fn subsample(table: &DataTable, rows: usize, seed: u64) -> DataTable {
    if rows >= table.n_rows() {
        return table.clone();
    }
    let mut idx: Vec<usize> = (0..table.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(rows);
    idx.sort_unstable();
    table.select_rows(&idx)
}

struct Segment {
    road: u32,
    share: f64,
    speed: (f64, f64),
    acceleration: (f64, f64),
    gyro: (f64, f64),
    mag: (f64, f64),
}

const SEGMENTS: [Segment; 5] = [
    Segment { road: 0, share: 0.22, speed: (14.0, 4.0), acceleration: (3.9, 0.35), gyro: (3.5, 1.2), mag: (27.0, 3.0) },
    Segment { road: 1, share: 0.24, speed: (7.0, 2.5), acceleration: (4.9, 0.9), gyro: (8.5, 3.0), mag: (24.0, 4.0) },
    Segment { road: 2, share: 0.18, speed: (9.0, 3.0), acceleration: (4.4, 0.7), gyro: (6.5, 2.5), mag: (25.0, 3.5) },
    Segment { road: 1, share: 0.19, speed: (7.5, 2.5), acceleration: (4.8, 0.9), gyro: (8.0, 3.0), mag: (23.5, 4.0) },
    Segment { road: 0, share: 0.17, speed: (13.0, 4.0), acceleration: (4.0, 0.35), gyro: (3.8, 1.2), mag: (27.5, 3.0) },
];

// (latitude, longitude) turning points of the surrogate trip.
const WAYPOINTS: [(f64, f64); 6] = [
    (-27.7120, -51.1040),
    (-27.7000, -51.1000),
    (-27.6930, -51.1170),
    (-27.6850, -51.1190),
    (-27.6790, -51.1330),
    (-27.6720, -51.1360),
];

/// Rows per GPS fix: position and speed are held for this many samples.
const GPS_HOLD: usize = 5;

/// A trip-like stand-in for the processed PVS data: a piecewise-linear route
/// with a north-west trend crossing asphalt, cobblestone and dirt segments,
/// with per-segment speed and IMU distributions.
pub fn generate_surrogate(rows: usize, seed: u64) -> Result<DataTable> {
    if rows < 30 {
        return Err(Error::InvalidArgument(format!(
            "surrogate needs at least 30 rows, got {rows}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut counts: Vec<usize> = SEGMENTS
        .iter()
        .map(|s| (s.share * rows as f64).floor() as usize)
        .collect();
    let mut short = rows - counts.iter().sum::<usize>();
    let mut i = 0;
    while short > 0 {
        let k = counts.len();
        counts[i % k] += 1;
        short -= 1;
        i += 1;
    }

    let mut cols: [Vec<f64>; 6] = Default::default();
    let mut road = Vec::with_capacity(rows);
    for (seg, (spec, &n)) in SEGMENTS.iter().zip(&counts).enumerate() {
        let (a, b) = (WAYPOINTS[seg], WAYPOINTS[seg + 1]);
        let mut fix = (0.0, 0.0, 0.0);
        for j in 0..n {
            if j % GPS_HOLD == 0 {
                let u = (j as f64 + 0.5) / n as f64;
                let lat = a.0 + (b.0 - a.0) * u + 5e-5 * unit.sample(&mut rng);
                let lon = a.1 + (b.1 - a.1) * u + 5e-5 * unit.sample(&mut rng);
                let speed = (spec.speed.0 + spec.speed.1 * unit.sample(&mut rng)).abs();
                fix = (lat, lon, speed);
            }
            let draw = |rng: &mut ChaCha8Rng, (m, s): (f64, f64)| (m + s * unit.sample(rng)).abs();
            cols[0].push(fix.0);
            cols[1].push(fix.1);
            cols[2].push(fix.2);
            cols[3].push(draw(&mut rng, spec.acceleration));
            cols[4].push(draw(&mut rng, spec.gyro));
            cols[5].push(draw(&mut rng, spec.mag));
            road.push(spec.road);
        }
    }
    let mut columns: Vec<Column> = cols.into_iter().map(Column::Continuous).collect();
    columns.push(Column::Categorical {
        codes: road,
        labels: ROAD_LABELS.iter().map(|s| s.to_string()).collect(),
    });
    DataTable::new(TableSchema::pvs(), columns)
}
