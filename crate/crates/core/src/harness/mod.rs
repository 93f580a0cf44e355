//! Experiment orchestration: configs, runners, result tables and checks.

mod checks;
mod config;
mod experiments;
mod table;

pub use checks::{
    check_e1e2, check_ensemble, check_finetune, check_simulation, Check, AUROC_TARGETS,
    AUROC_TOLERANCE, CURVE_OVERLAP, E1_MIN_ACCURACY, E2_ACCURACY_BAND, ENSEMBLE_SLACK,
    FINETUNE_TARGETS, FINETUNE_TOLERANCE,
};
pub use config::{parse_config, parse_pairs, ExperimentConfig, ExperimentKind, OUT_ENV};
pub use experiments::{
    auroc_by_label, curve_file_name, member_name, model_path, run_e1e2, run_ensemble,
    run_finetune, run_score_external, run_simulate, subsets, FREEZE_POINTS, PROTOCOLS,
};
pub use table::{by_condition, median, seed_label, ResultRow, ResultTable, CSV_HEADER, MEDIAN};
