//! Configuration, data, checkpoints, training and evaluation entry points.

pub mod checkpoint;
pub mod config;
pub mod convert;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Mode, TrainConfig};
pub use convert::{convert_normalized, convert_wav, MelOutput};
pub use eval::{
    eval_robustness, eval_sv, robustness_report, score_trials, sv_report, ComparisonReport,
    EvalSet, RobustnessReport, SvReport, SNR_BANDS,
};
pub use manifest::{read_trials, write_trials, Manifest, Trial, Utterance};
pub use model::{raw_features, MelNorm, NoroModel, RawFeatures, UtteranceFeatures};
pub use synth::{synth_dataset, SynthOutput, SynthSpec};
pub use train::{fit_front_end, load_noise_dir, train, DataItem, Dataset, StepMetrics};
