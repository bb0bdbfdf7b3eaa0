//! Datasets, the two-stage training regime, checkpoints, evaluation and the
//! experiment matrix.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod matrix;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, sidecar_path, Sidecar, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{DatasetConfig, ExperimentConfig, GeometryConfig, Stage, TrainConfig, SMALL_TX_BEAM_SIGMA_DEG};
pub use dataset::{build_dataset, simulate_frame, sla_reference, DatasetSplit, Family, Frame, SplitName};
pub use evaluate::{display, evaluate_models, frame_metrics, Model};
pub use matrix::{default_cells, run_cell, run_experiment_matrix, CellOutcome, DIFFERENCE_SCALE};
pub use trainer::{
    augmented_frame, frame_index, train_stage1, train_stage1_from, train_stage2_joint, ArmOutcome, CurvePoint, Pipeline,
    ReconNetworkState, Stage1Outcome, Stage2Outcome, TrainState, Trainer,
};
