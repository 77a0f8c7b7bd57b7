//! The pipeline stages behind each subcommand. Stages communicate only
//! through files under the output directory:
//!
//! ```text
//! out/data/processed.{csv,json}   prepare
//! out/model.tvae                  train (+ reports/loss_trace.json)
//! out/data/synthetic.{csv,json}   sample
//! out/reports/{fidelity,utility,privacy}.json   evaluate
//! out/reports/bundle.json, out/figures/*.svg, out/series/*.csv   report
//! ```

use std::path::{Path, PathBuf};

use drivesynth_core::anonymize::{apply_rules, homogeneity_check, k_of, EquivalenceClass, TextTable};
use drivesynth_core::data::{load_csv_joined, reduce_features, TableSidecar};
use drivesynth_core::fidelity::evaluate_fidelity;
use drivesynth_core::privacy::evaluate_privacy;
use drivesynth_core::utility::{trtr, tstr};
use drivesynth_core::{
    generate_surrogate, split, subsample, train_with_progress, DataTable, FidelityReport, LossTrace, PrivacyReport,
    TvaeModel, UtilityRun, TARGET_COLUMN,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, Overrides, Resolved, Seeds};
use crate::error::{CliError, CliResult};
use crate::figures::{self, FigureIndex};

pub const TOOL: &str = "drivesynth";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }
    pub fn processed(&self) -> PathBuf {
        self.root.join("data/processed.csv")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.root.join("data/synthetic.csv")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.tvae")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }
    pub fn anonymized(&self) -> PathBuf {
        self.root.join("data/anonymized.csv")
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| CliError::write(p, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str, hint: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::missing(what, path, hint))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn read_table(path: &Path, what: &str, hint: &str) -> CliResult<(DataTable, TableSidecar)> {
    if !path.is_file() {
        return Err(CliError::missing(what, path, hint));
    }
    Ok(DataTable::read_with_sidecar(path)?)
}

fn load_model(layout: &Layout) -> CliResult<TvaeModel> {
    let path = layout.model();
    if !path.is_file() {
        return Err(CliError::missing("model file", &path, "run `drivesynth train` first"));
    }
    Ok(TvaeModel::load(&path)?)
}

pub fn load_processed(layout: &Layout) -> CliResult<(DataTable, TableSidecar)> {
    read_table(&layout.processed(), "processed data", "run `drivesynth prepare` first")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub rows: usize,
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub path: String,
}

pub fn prepare(r: &Resolved) -> CliResult<PrepareSummary> {
    let layout = Layout::new(&r.out_dir);
    let (table, read, rejected) = match r.config.data.source {
        DataSource::Surrogate => {
            let t = generate_surrogate(r.config.data.rows, r.seeds.data)?;
            let n = t.n_rows();
            (t, n, 0)
        }
        DataSource::Csv => {
            let paths: Vec<&Path> = r.data_files.iter().map(PathBuf::as_path).collect();
            let raw = load_csv_joined(&paths, &r.config.mapping, r.row_policy())?;
            let t = reduce_features(&raw, &r.config.mapping)?;
            (t, raw.rows_read, raw.rows_rejected)
        }
    };
    let table = match r.config.data.max_rows {
        Some(m) => subsample(&table, m, r.seeds.data),
        None => table,
    };
    if table.n_rows() < 2 {
        return Err(CliError::Validation("prepared table has fewer than 2 rows".into()));
    }
    let path = layout.processed();
    ensure_parent(&path)?;
    table.write_with_sidecar(&path, &table.sidecar(read, rejected))?;
    Ok(PrepareSummary {
        rows: table.n_rows(),
        rows_read: read,
        rows_rejected: rejected,
        path: "data/processed.csv".into(),
    })
}

pub fn train(r: &Resolved, mut progress: impl FnMut(usize, f64)) -> CliResult<LossTrace> {
    let layout = Layout::new(&r.out_dir);
    let (table, _) = load_processed(&layout)?;
    let (model, trace) = train_with_progress(&table, &r.config.train, &mut progress)?;
    let path = layout.model();
    ensure_parent(&path)?;
    model.save(&path)?;
    write_json(&layout.report("loss_trace"), &trace)?;
    Ok(trace)
}

pub fn sample(r: &Resolved) -> CliResult<usize> {
    let layout = Layout::new(&r.out_dir);
    let model = load_model(&layout)?;
    let (real, _) = load_processed(&layout)?;
    let rows = r.config.sample.rows.unwrap_or(real.n_rows());
    let synth = model.sample(rows, r.seeds.sample)?;
    let path = layout.synthetic();
    ensure_parent(&path)?;
    synth.write_with_sidecar(&path, &synth.sidecar(rows, 0))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    /// Trained on the real training split, tested on the real holdout.
    pub trtr: UtilityRun,
    /// Trained on the synthetic table, tested on the full real table.
    pub tstr: UtilityRun,
    pub labels: Vec<String>,
}

pub struct Evaluation {
    pub fidelity: FidelityReport,
    pub utility: UtilityReport,
    pub privacy: PrivacyReport,
}

pub fn evaluate(r: &Resolved) -> CliResult<Evaluation> {
    let layout = Layout::new(&r.out_dir);
    load_model(&layout)?;
    let (real, _) = load_processed(&layout)?;
    let (synth, _) = read_table(&layout.synthetic(), "synthetic data", "run `drivesynth sample` first")?;
    if synth.n_rows() < 2 {
        return Err(CliError::Validation("evaluation needs at least 2 synthetic rows".into()));
    }
    let fidelity = evaluate_fidelity(&real, &synth)?;
    let (train_rows, holdout) = split(&real, r.config.split.holdout_fraction, r.seeds.split)?;
    let labels = real
        .column_by_name(TARGET_COLUMN)?
        .labels()
        .map(<[String]>::to_vec)
        .unwrap_or_default();
    let utility = UtilityReport {
        trtr: trtr(&train_rows, &holdout, &r.config.classifier)?,
        tstr: tstr(&synth, &real, &r.config.classifier)?,
        labels,
    };
    let privacy = evaluate_privacy(&real, &synth, &r.config.privacy)?;
    write_json(&layout.report("fidelity"), &fidelity)?;
    write_json(&layout.report("utility"), &utility)?;
    write_json(&layout.report("privacy"), &privacy)?;
    Ok(Evaluation {
        fidelity,
        utility,
        privacy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub real: usize,
    pub real_read: usize,
    pub real_rejected: usize,
    pub train_split: usize,
    pub holdout_split: usize,
    pub synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub overrides: OverrideRecord,
    pub seeds: SeedRecord,
    pub rows: RowCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub fast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub data: u64,
    pub split: u64,
    pub train: u64,
    pub sample: u64,
}

impl SeedRecord {
    fn new(master: u64, s: Seeds) -> Self {
        SeedRecord {
            master,
            data: s.data,
            split: s.split,
            train: s.train,
            sample: s.sample,
        }
    }
}

impl OverrideRecord {
    fn new(o: &Overrides) -> Self {
        OverrideRecord {
            seed: o.seed,
            rows: o.rows,
            fast: o.fast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub provenance: Provenance,
    pub fidelity: FidelityReport,
    pub utility: UtilityReport,
    pub privacy: PrivacyReport,
    pub loss_trace: LossTrace,
    pub figures: FigureIndex,
}

pub fn report(r: &Resolved) -> CliResult<ReportBundle> {
    let layout = Layout::new(&r.out_dir);
    let (real, real_side) = load_processed(&layout)?;
    let (synth, _) = read_table(&layout.synthetic(), "synthetic data", "run `drivesynth sample` first")?;
    let hint = "run `drivesynth evaluate` first";
    let fidelity: FidelityReport = read_json(&layout.report("fidelity"), "fidelity report", hint)?;
    let utility: UtilityReport = read_json(&layout.report("utility"), "utility report", hint)?;
    let privacy: PrivacyReport = read_json(&layout.report("privacy"), "privacy report", hint)?;
    let loss_trace: LossTrace = read_json(&layout.report("loss_trace"), "loss trace", "run `drivesynth train` first")?;

    let mut figs: Vec<figures::Figure> = fidelity.kde.iter().map(figures::kde_figure).collect();
    figs.push(figures::correlation_figure(&fidelity.correlation_real, "real"));
    figs.push(figures::correlation_figure(&fidelity.correlation_synthetic, "synthetic"));
    for (which, run) in [("trtr", &utility.trtr), ("tstr", &utility.tstr)] {
        let best = &run.results[run.best];
        figs.push(figures::confusion_figure(&best.report, &utility.labels, which, &best.name));
    }
    figs.push(figures::loss_figure(&loss_trace));
    let mut notes = Vec::new();
    let p = &r.config.privacy;
    match figures::geography_figure(&real, &synth, &p.latitude, &p.longitude, &privacy.trend)? {
        Some(f) => figs.push(f),
        None => notes.push("geography figure omitted: synthetic table is empty".to_string()),
    }
    let files = figures::write_figures(&layout.root, &figs)?;

    let bundle = ReportBundle {
        provenance: Provenance {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: r.config_sha256.clone(),
            overrides: OverrideRecord::new(&r.overrides),
            seeds: SeedRecord::new(r.config.seed, r.seeds),
            rows: RowCounts {
                real: real.n_rows(),
                real_read: real_side.rows_read,
                real_rejected: real_side.rows_rejected,
                train_split: utility.trtr.train_rows,
                holdout_split: utility.trtr.test_rows,
                synthetic: synth.n_rows(),
            },
        },
        fidelity,
        utility,
        privacy,
        loss_trace,
        figures: FigureIndex { files, notes },
    };
    write_json(&layout.report("bundle"), &bundle)?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymityReport {
    pub quasi_identifiers: Vec<String>,
    pub k_before: usize,
    pub k_after: usize,
    pub classes: Vec<EquivalenceClass>,
    pub homogeneous: Vec<EquivalenceClass>,
}

pub fn anonymize(r: &Resolved) -> CliResult<(String, AnonymityReport)> {
    let a = r
        .config
        .anonymize
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no [anonymize] section".into()))?;
    let input = r.anonymize_input.as_ref().expect("resolved with the section");
    let table = TextTable::read_csv(input)?;
    let out = apply_rules(&table, &a.rule)?;
    let qi: Vec<&str> = a.quasi_identifiers.iter().map(String::as_str).collect();
    let (k_before, _) = k_of(&table, &qi)?;
    let (k_after, classes) = k_of(&out, &qi)?;
    let homogeneous = match &a.sensitive {
        Some(s) => homogeneity_check(&out, &qi, s)?,
        None => Vec::new(),
    };
    let csv = out.to_csv_string()?;
    let layout = Layout::new(&r.out_dir);
    let path = layout.anonymized();
    ensure_parent(&path)?;
    std::fs::write(&path, &csv).map_err(|e| CliError::write(&path, e))?;
    let report = AnonymityReport {
        quasi_identifiers: a.quasi_identifiers.clone(),
        k_before,
        k_after,
        classes,
        homogeneous,
    };
    write_json(&layout.report("anonymity"), &report)?;
    Ok((csv, report))
}
