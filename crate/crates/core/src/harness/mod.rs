//! Configuration, experiment orchestration and reporting.

mod audit;
mod config;
mod failures;
mod model_dir;
mod predict;
mod report;
mod run;

pub use audit::{oracle_audit, Audit, AuditConfig, AuditRow};
pub use config::{ConfigMap, Experiment, Split, System, DEFAULTS};
pub use failures::{failure_report, SentenceMetric, SystemOutputs};
pub use model_dir::{is_complete, load_model_dir, train_model_dir, TrainedModel, TrainingRecord};
pub use predict::{append_prediction, file_stem, read_predictions, write_predictions, Decoder, Prediction};
pub use report::{merge_reports, render_table, Report, ReportRow, FOOTNOTES};
pub use run::{decode_all, run_experiment, RunSummary};
