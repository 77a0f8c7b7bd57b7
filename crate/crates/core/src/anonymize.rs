//! k-anonymity toolkit: generalization and suppression rules over text
//! tables, equivalence classes and homogeneity checks.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPRESSED: &str = "*";

/// Header plus rows of string cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if let Some(r) = rows.iter().position(|row| row.len() != headers.len()) {
            return Err(Error::Schema(format!(
                "row {r} has {} cells, header has {}",
                rows[r].len(),
                headers.len()
            )));
        }
        Ok(TextTable { headers, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::from_reader(&mut csv::Reader::from_reader(text.as_bytes()))
    }

    fn from_reader<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Self::new(headers, rows)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Keep,
    Suppress,
    /// Numeric bins `[edges[i], edges[i+1])` labelled `"lo--hi"`; with
    /// integer edges `hi` is the last integer inside the bin.
    Generalize { edges: Vec<f64> },
    Map { values: BTreeMap<String, String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub column: String,
    pub equals: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRule", into = "RawRule")]
pub struct ColumnRule {
    pub column: String,
    pub action: Action,
    /// Applies only where the anonymized value of another column matches.
    pub when: Option<Condition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ActionName {
    Keep,
    Suppress,
    Generalize,
    Map,
}

/// Flat on-disk form of a rule, e.g.
/// `{ column = "Age", action = "generalize", edges = [10, 30, 50] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    column: String,
    action: ActionName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    when: Option<Condition>,
}

impl TryFrom<RawRule> for ColumnRule {
    type Error = String;

    fn try_from(raw: RawRule) -> std::result::Result<Self, String> {
        let action = match (raw.action, raw.edges, raw.values) {
            (ActionName::Keep, None, None) => Action::Keep,
            (ActionName::Suppress, None, None) => Action::Suppress,
            (ActionName::Generalize, Some(edges), None) => Action::Generalize { edges },
            (ActionName::Map, None, Some(values)) => Action::Map { values },
            (a, _, _) => {
                return Err(format!(
                    "rule for {:?}: action {a:?} needs exactly its own parameters (edges for generalize, values for map)",
                    raw.column
                ))
            }
        };
        Ok(ColumnRule {
            column: raw.column,
            action,
            when: raw.when,
        })
    }
}

impl From<ColumnRule> for RawRule {
    fn from(rule: ColumnRule) -> Self {
        let (action, edges, values) = match rule.action {
            Action::Keep => (ActionName::Keep, None, None),
            Action::Suppress => (ActionName::Suppress, None, None),
            Action::Generalize { edges } => (ActionName::Generalize, Some(edges), None),
            Action::Map { values } => (ActionName::Map, None, Some(values)),
        };
        RawRule {
            column: rule.column,
            action,
            edges,
            values,
            when: rule.when,
        }
    }
}

impl ColumnRule {
    pub fn new(column: &str, action: Action) -> Self {
        ColumnRule {
            column: column.into(),
            action,
            when: None,
        }
    }

    pub fn when(mut self, column: &str, equals: &str) -> Self {
        self.when = Some(Condition {
            column: column.into(),
            equals: equals.into(),
        });
        self
    }
}

fn format_edge(v: f64) -> String {
    format!("{v}")
}

fn bin_label(lo: f64, hi: f64) -> String {
    if lo.fract() == 0.0 && hi.fract() == 0.0 {
        format!("{}--{}", format_edge(lo), format_edge(hi - 1.0))
    } else {
        format!("{}--{}", format_edge(lo), format_edge(hi))
    }
}

impl Action {
    fn validate(&self, column: &str) -> Result<()> {
        if let Action::Generalize { edges } = self {
            if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument(format!(
                    "bin edges for {column:?} must be at least two strictly increasing values"
                )));
            }
        }
        Ok(())
    }

    fn apply(&self, value: &str, row: usize, column: &str) -> Result<String> {
        match self {
            Action::Keep => Ok(value.to_string()),
            Action::Suppress => Ok(SUPPRESSED.to_string()),
            Action::Generalize { edges } => {
                let x: f64 = value.trim().parse().map_err(|_| Error::BadCell {
                    row,
                    column: column.to_string(),
                    value: value.to_string(),
                })?;
                edges
                    .windows(2)
                    .find(|w| w[0] <= x && x < w[1])
                    .map(|w| bin_label(w[0], w[1]))
                    .ok_or_else(|| Error::OutsideBins {
                        row,
                        column: column.to_string(),
                        value: value.to_string(),
                    })
            }
            Action::Map { values } => values.get(value).cloned().ok_or_else(|| Error::BadCell {
                row,
                column: column.to_string(),
                value: value.to_string(),
            }),
        }
    }

    fn only_coarsens(&self) -> bool {
        !matches!(self, Action::Map { .. })
    }
}

/// Applies `rules` cell by cell. Every column needs at least one rule; for
/// each cell the first rule whose condition holds wins, and a cell matching
/// none is kept. Conditions read the anonymized value of a column whose own
/// rules are unconditional.
pub fn apply_rules(table: &TextTable, rules: &[ColumnRule]) -> Result<TextTable> {
    let mut per_column: Vec<Vec<&ColumnRule>> = vec![Vec::new(); table.headers.len()];
    for rule in rules {
        rule.action.validate(&rule.column)?;
        per_column[table.column_index(&rule.column)?].push(rule);
    }
    if let Some(c) = per_column.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "no anonymization rule for column {:?}",
            table.headers[c]
        )));
    }
    let conditional: Vec<bool> = per_column
        .iter()
        .map(|rs| rs.iter().any(|r| r.when.is_some()))
        .collect();
    for rule in rules {
        if let Some(cond) = &rule.when {
            let c = table.column_index(&cond.column)?;
            if conditional[c] {
                return Err(Error::InvalidArgument(format!(
                    "rule for {:?} depends on {:?}, which itself has conditional rules",
                    rule.column, cond.column
                )));
            }
        }
    }

    let mut out = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let mut new_row = row.clone();
        // Unconditional columns first so conditions see final values.
        for pass in [false, true] {
            for (c, rs) in per_column.iter().enumerate() {
                if conditional[c] != pass {
                    continue;
                }
                let matching = rs.iter().find(|rule| match &rule.when {
                    None => true,
                    Some(cond) => {
                        let k = table.column_index(&cond.column).expect("checked above");
                        new_row[k] == cond.equals
                    }
                });
                if let Some(rule) = matching {
                    new_row[c] = rule.action.apply(&row[c], r, &table.headers[c])?;
                }
            }
        }
        out.push(new_row);
    }
    TextTable::new(table.headers.clone(), out)
}

/// True when every rule only generalizes or suppresses (never remaps).
pub fn rules_only_coarsen(rules: &[ColumnRule]) -> bool {
    rules.iter().all(|r| r.action.only_coarsens())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub values: Vec<String>,
    pub rows: Vec<usize>,
    pub size: usize,
}

/// Groups rows by their quasi-identifier tuple, in order of first
/// appearance; `k` is the smallest group.
pub fn k_of(table: &TextTable, quasi_identifiers: &[&str]) -> Result<(usize, Vec<EquivalenceClass>)> {
    if table.rows.is_empty() {
        return Err(Error::Empty("k-anonymity of an empty table".into()));
    }
    let cols = quasi_identifiers
        .iter()
        .map(|q| table.column_index(q))
        .collect::<Result<Vec<_>>>()?;
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut classes: Vec<EquivalenceClass> = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let key: Vec<String> = cols.iter().map(|&c| row[c].clone()).collect();
        let at = *index.entry(key.clone()).or_insert_with(|| {
            classes.push(EquivalenceClass {
                values: key,
                rows: Vec::new(),
                size: 0,
            });
            classes.len() - 1
        });
        classes[at].rows.push(r);
        classes[at].size += 1;
    }
    let k = classes.iter().map(|c| c.size).min().expect("non-empty table");
    Ok((k, classes))
}

/// Equivalence classes whose members all share one sensitive value.
pub fn homogeneity_check(
    table: &TextTable,
    quasi_identifiers: &[&str],
    sensitive: &str,
) -> Result<Vec<EquivalenceClass>> {
    let s = table.column_index(sensitive)?;
    if table.rows.is_empty() {
        return Ok(Vec::new());
    }
    let (_, classes) = k_of(table, quasi_identifiers)?;
    Ok(classes
        .into_iter()
        .filter(|c| c.rows.iter().all(|&r| table.rows[r][s] == table.rows[c.rows[0]][s]))
        .collect())
}
