//! Pipeline configuration: a TOML file with every key checked, plus the
//! command-line and environment overrides.

use std::path::{Path, PathBuf};

use drivesynth_core::anonymize::ColumnRule;
use drivesynth_core::data::ColumnKind;
use drivesynth_core::privacy::PrivacyConfig;
use drivesynth_core::{ClassifierSpec, ColumnMapping, RowPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Relative data paths resolve against this directory when set.
pub const ENV_DATA: &str = "DRIVESYNTH_DATA";
/// Replaces `[output] dir`; `--out` still wins.
pub const ENV_OUT: &str = "DRIVESYNTH_OUT";

pub const FAST_EPOCHS: usize = 50;
pub const FAST_ROWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Deterministic trip-like table; no files needed.
    #[default]
    Surrogate,
    /// Raw CSV files describing the same rows, joined column-wise.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InvalidRows {
    Reject,
    #[default]
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub files: Vec<PathBuf>,
    /// Surrogate row count.
    pub rows: usize,
    /// Rows with unparseable cells: skip and count them, or fail.
    pub invalid_rows: InvalidRows,
    /// Optional cap; larger tables are subsampled deterministically.
    pub max_rows: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Surrogate,
            files: Vec::new(),
            rows: FAST_ROWS,
            invalid_rows: InvalidRows::Skip,
            max_rows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub holdout_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { holdout_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Defaults to the real row count.
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizeConfig {
    pub input: PathBuf,
    pub quasi_identifiers: Vec<String>,
    #[serde(default)]
    pub sensitive: Option<String>,
    pub rule: Vec<ColumnRule>,
}

fn default_classifiers() -> Vec<ClassifierSpec> {
    ClassifierSpec::defaults()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Every stage seed derives from this.
    pub seed: u64,
    pub data: DataConfig,
    pub output: OutputConfig,
    pub mapping: ColumnMapping,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    #[serde(default = "default_classifiers")]
    pub classifier: Vec<ClassifierSpec>,
    pub privacy: PrivacyConfig,
    pub anonymize: Option<AnonymizeConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            data: DataConfig::default(),
            output: OutputConfig::default(),
            mapping: ColumnMapping::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            classifier: default_classifiers(),
            privacy: PrivacyConfig::default(),
            anonymize: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rows: Option<usize>,
    pub fast: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub train: u64,
    pub sample: u64,
}

impl Seeds {
    fn derive(master: u64) -> Self {
        Seeds {
            data: master,
            split: master.wrapping_add(1),
            train: master.wrapping_add(2),
            sample: master.wrapping_add(3),
        }
    }
}

/// A validated config with paths resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: PipelineConfig,
    /// sha256 of the config file bytes.
    pub config_sha256: String,
    pub overrides: Overrides,
    pub seeds: Seeds,
    pub out_dir: PathBuf,
    pub data_files: Vec<PathBuf>,
    pub anonymize_input: Option<PathBuf>,
}

pub fn parse(text: &str) -> CliResult<PipelineConfig> {
    let raw: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
    if raw
        .get("train")
        .and_then(|t| t.as_table())
        .is_some_and(|t| t.contains_key("seed"))
    {
        return Err(CliError::Validation(
            "config: set the top-level `seed`; [train] seed is derived from it".into(),
        ));
    }
    toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message().trim())))
}

fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads, overrides, resolves and validates. `env` looks up environment
/// variables, so tests can pass their own.
pub fn load(path: &Path, overrides: Overrides, env: impl Fn(&str) -> Option<String>) -> CliResult<Resolved> {
    let bytes = std::fs::read(path).map_err(|_| CliError::missing("config file", path, "pass --config <path>"))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation(format!("config {} is not UTF-8", path.display())))?;
    let config = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    resolve(config, &base, hex::encode(Sha256::digest(&bytes)), overrides, env)
}

pub fn resolve(
    mut config: PipelineConfig,
    base: &Path,
    config_sha256: String,
    overrides: Overrides,
    env: impl Fn(&str) -> Option<String>,
) -> CliResult<Resolved> {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if overrides.fast {
        config.train.epochs = FAST_EPOCHS;
        config.data.max_rows = Some(config.data.max_rows.map_or(FAST_ROWS, |m| m.min(FAST_ROWS)));
    }
    if let Some(rows) = overrides.rows {
        config.sample.rows = Some(rows);
    }
    let seeds = Seeds::derive(config.seed);
    config.train.seed = seeds.train;

    let data_base = env(ENV_DATA).map(PathBuf::from).unwrap_or_else(|| base.to_path_buf());
    let data_files = config
        .data
        .files
        .iter()
        .map(|f| resolve_against(&data_base, f))
        .collect();
    let out_dir = match (&overrides.out, env(ENV_OUT)) {
        (Some(o), _) => o.clone(),
        (None, Some(e)) => PathBuf::from(e),
        (None, None) => resolve_against(base, &config.output.dir),
    };
    let anonymize_input = config
        .anonymize
        .as_ref()
        .map(|a| resolve_against(&data_base, &a.input));
    let resolved = Resolved {
        config,
        config_sha256,
        overrides,
        seeds,
        out_dir,
        data_files,
        anonymize_input,
    };
    resolved.validate()?;
    Ok(resolved)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(format!("config: {}", msg.into()))
}

impl Resolved {
    /// Static checks, so no stage fails part-way for a reason visible up
    /// front.
    pub fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        c.train.validate().map_err(|e| invalid(e.to_string()))?;
        c.mapping.validate().map_err(|e| invalid(e.to_string()))?;
        for spec in &c.classifier {
            spec.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if c.classifier.is_empty() {
            return Err(invalid("at least one [[classifier]] is required"));
        }
        let f = c.split.holdout_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid(format!("split.holdout_fraction must be in (0, 1), got {f}")));
        }
        if c.sample.rows == Some(0) {
            return Err(invalid("sample.rows must be at least 1"));
        }
        if c.data.max_rows.is_some_and(|m| m < 30) {
            return Err(invalid("data.max_rows must be at least 30"));
        }
        let p = &c.privacy;
        if !(p.cell_deg > 0.0 && p.cell_deg.is_finite()) {
            return Err(invalid("privacy.cell_deg must be positive"));
        }
        for (name, v) in [
            ("privacy.min_endpoint_m", p.min_endpoint_m),
            ("privacy.min_dcr_p5", p.min_dcr_p5),
            ("privacy.max_slope_difference", p.max_slope_difference),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a non-negative number")));
            }
        }
        let features = self.feature_names();
        for col in [&p.latitude, &p.longitude] {
            if !features.contains(col) {
                return Err(invalid(format!("privacy column {col:?} is not a feature")));
            }
        }
        match c.data.source {
            DataSource::Surrogate => {
                if !c.data.files.is_empty() {
                    return Err(invalid("data.files is only used with source = \"csv\""));
                }
                if c.data.rows < 30 {
                    return Err(invalid("data.rows must be at least 30 for the surrogate"));
                }
            }
            DataSource::Csv => {
                if self.data_files.is_empty() {
                    return Err(invalid("source = \"csv\" needs data.files"));
                }
                let mut headers = Vec::new();
                for f in &self.data_files {
                    if !f.is_file() {
                        return Err(CliError::missing("data file", f, "check data.files or DRIVESYNTH_DATA"));
                    }
                    headers.extend(drivesynth_core::data::read_headers(f)?);
                }
                c.mapping.check_headers(headers.iter().map(String::as_str))?;
            }
        }
        if let (Some(a), Some(input)) = (&c.anonymize, &self.anonymize_input) {
            if !input.is_file() {
                return Err(CliError::missing("anonymize input", input, "check anonymize.input"));
            }
            let headers = drivesynth_core::data::read_headers(input)?;
            let named = a
                .quasi_identifiers
                .iter()
                .chain(&a.sensitive)
                .chain(a.rule.iter().map(|r| &r.column));
            for col in named {
                if !headers.contains(col) {
                    return Err(invalid(format!("anonymize column {col:?} is not in {}", input.display())));
                }
            }
            if a.quasi_identifiers.is_empty() {
                return Err(invalid("anonymize.quasi_identifiers is empty"));
            }
        }
        Ok(())
    }

    /// Continuous feature names in table order (the target comes last).
    pub fn feature_names(&self) -> Vec<String> {
        match self.config.data.source {
            DataSource::Surrogate => drivesynth_core::TableSchema::pvs()
                .columns
                .into_iter()
                .filter(|c| c.kind == ColumnKind::Continuous)
                .map(|c| c.name)
                .collect(),
            DataSource::Csv => self.config.mapping.features.iter().map(|f| f.name.clone()).collect(),
        }
    }

    pub fn row_policy(&self) -> RowPolicy {
        match self.config.data.invalid_rows {
            InvalidRows::Reject => RowPolicy::Strict,
            InvalidRows::Skip => RowPolicy::SkipInvalid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    fn resolve_text(text: &str, o: Overrides) -> CliResult<Resolved> {
        resolve(parse(text)?, Path::new("/cfg"), String::new(), o, no_env)
    }

    #[test]
    fn defaults_follow_training_hyperparameters() {
        let r = resolve_text("", Overrides::default()).unwrap();
        let t = &r.config.train;
        assert_eq!((t.epochs, t.batch_size, t.embedding_dim), (200, 500, 128));
        assert_eq!((t.loss_factor, t.l2_scale), (2.0, 1e-5));
        assert_eq!(r.out_dir, PathBuf::from("/cfg/out"));
        assert_eq!(r.config.classifier, ClassifierSpec::defaults());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("sede = 3").is_err());
        assert!(parse("[train]\nepoch = 3").is_err());
        assert!(parse("[train]\nseed = 3").is_err());
        assert!(parse("[privacy]\nlatitud = \"x\"").is_err());
    }

    #[test]
    fn overrides_and_env() {
        let o = Overrides {
            seed: Some(9),
            out: None,
            rows: Some(10),
            fast: true,
        };
        let env = |k: &str| (k == ENV_OUT).then(|| "/elsewhere".to_string());
        let r = resolve(parse("seed = 1\n[data]\nrows = 50000").unwrap(), Path::new("/c"), String::new(), o, env)
            .unwrap();
        assert_eq!(r.config.seed, 9);
        assert_eq!(r.config.train.epochs, FAST_EPOCHS);
        assert_eq!(r.config.data.max_rows, Some(FAST_ROWS));
        assert_eq!(r.config.sample.rows, Some(10));
        assert_eq!(r.out_dir, PathBuf::from("/elsewhere"));
        assert_eq!(r.config.train.seed, r.seeds.train);
    }

    #[test]
    fn static_validation() {
        assert!(resolve_text("[split]\nholdout_fraction = 1.0", Overrides::default()).is_err());
        assert!(resolve_text("[data]\nsource = \"csv\"", Overrides::default()).is_err());
        assert!(resolve_text("[data]\nsource = \"csv\"\nfiles = [\"nope.csv\"]", Overrides::default()).is_err());
        assert!(resolve_text("[privacy]\nlatitude = \"lat\"", Overrides::default()).is_err());
        assert!(resolve_text("[[classifier]]\nkind = \"knn\"\nk = 0", Overrides::default()).is_err());
        assert!(resolve_text("[train]\nbatch_size = 0", Overrides::default()).is_err());
    }
}
