//! Training loop for every augmentation mode, including the adversarial one.

pub mod config;
pub mod run;
pub mod step;

pub use config::{Mode, NetOptions, TrainConfig, SEED_ENV};
pub use run::{
    audit_hygiene, predict_samples, run_kde_offline, train, EpochRecord, RunLog, StepRecord, Summary, Timings,
    TrainOutcome, EPOCHS_FILE, RUNLOG_FILE, SUMMARY_FILE,
};
pub use step::{
    discriminator_step, gather, joint_backward, partition_batch, train_step_adassm, train_step_gaussian,
    train_step_noaug, Networks, StepConfig,
};
