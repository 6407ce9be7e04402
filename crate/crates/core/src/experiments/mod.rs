//! Synthetic datasets, evaluation metrics and trade-off sweeps.

pub mod calibrate;
pub mod data;
pub mod io;
pub mod metrics;
pub mod sweep;

pub use calibrate::{calibrate_si_correlation, si_accuracy_for, si_only_accuracy, SiLookup};
pub use data::{gen_labeled_clusters, gen_markov_load, DatasetBatch, GeneratorKind, SynthConfig};
pub use io::{load_csv, save_csv, write_atomic};
pub use metrics::{balanced_accuracy, normalized_error, spearman};
pub use sweep::{
    load_results, prepare_data, run_point, save_results, sweep, train_point, PreparedData,
    RunMetadata, SweepConfig, SweepResults, TradeoffPoint,
};
