//! Benchmark harness: run configuration, tensor container and sweeps.

pub mod config;
pub mod sweep;
pub mod tensor_io;

pub use config::{OnInfeasible, ProblemSource, SweepConfig};
pub use sweep::{
    alignment_configs, run_alignment_ablation, run_iteration_ablation, run_sweep, write_alignment_csv,
    AlignmentRow, CsvRow, SweepOutput, SweepSummary, CSV_HEADER,
};
pub use tensor_io::{decode_tensors, encode_tensors, load_tensors, save_tensors};
