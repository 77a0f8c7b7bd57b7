//! Synthetic vehicular sensor tables: a tabular VAE trained on mode-normalized
//! columns, and fidelity, utility and privacy evaluation of its samples.

pub mod anonymize;
pub mod data;
pub mod error;
pub mod fidelity;
pub mod neighbors;
pub mod nn;
pub mod oracle;
pub mod privacy;
pub mod taxonomy;
pub mod transform;
pub mod tvae;
pub mod utility;

pub use anonymize::{apply_rules, homogeneity_check, k_of, Action, ColumnRule, EquivalenceClass, TextTable};
pub use data::{
    generate_surrogate, split, subsample, Column, ColumnKind, ColumnMapping, ColumnSpec, DataTable, RowPolicy,
    TableSchema, TableSidecar, TARGET_COLUMN,
};
pub use error::{Error, Result};
pub use fidelity::{evaluate_fidelity, FidelityReport};
pub use nn::{DenseLayer, Matrix};
pub use privacy::{evaluate_privacy, PrivacyConfig, PrivacyReport};
pub use taxonomy::{classify_priority, Category, CriteriaAssessment, Priority, Registry, SignalRecord};
pub use transform::{fit_transformer, ColumnTransformer, GmmParams, ModeAssignment};
pub use tvae::{train, train_with_progress, LossTrace, TrainConfig, TvaeModel};
pub use utility::{trtr, tstr, ClassificationReport, ClassifierSpec, UtilityRun};
