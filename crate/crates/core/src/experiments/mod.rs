//! Experiment harness: configuration, three-stage training, SNR sweeps,
//! standalone CSI enhancement and built-in self tests.

pub mod config;
pub mod csi_file;
pub mod enhance;
pub mod selftest;
pub mod sweep;
pub mod system;

pub use config::{DenoiserConfig, ExperimentConfig, ScheduleConfig, SweepConfig};
pub use enhance::cmd_enhance;
pub use selftest::{run_selftest, Check};
pub use sweep::{csv_string, run_sweep, run_sweep_with_threads, write_csv, SweepResult, SweepRow, CSV_HEADER};
pub use system::{cmd_train, load_system, save_system, train_system, Manifest, StageReports, TrainedSystem};
