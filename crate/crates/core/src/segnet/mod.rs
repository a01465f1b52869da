//! Promptable residual U-Net: layers, loss, training and inference.

mod gradcheck;
mod infer;
mod layers;
mod loss;
mod net;
mod params;
mod tensor;
mod train;
mod weights;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GradProbe};
pub use infer::{gaussian_weights, predict_full, predict_stack, window_starts, ConstantModel, PatchModel, SegModel, Segmenter, SlidingWindow, THRESHOLD};
pub use loss::{dice_ce_from_logits, dice_ce_loss, dice_ce_terms, mean_bce, soft_dice, LossTerms, DICE_EPS, PROB_CLIP};
pub use net::{sigmoid, ForwardCache, NetworkConfig, NormKind, UNet};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Float, Mat, Tensor};
pub use train::{
    poly_lr, sample_training_instance, train, EpochRecord, PromptWeights, TrainCase, TrainConfig, TrainHistory, TrainOutcome,
    TrainingInstance,
};
pub use weights::{load_weights, save_weights, ModelWeights, TrainingMetadata};

use crate::promptsim::PromptError;
use crate::volgrid::VolumeError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model expects {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("weights file: {0}")]
    Weights(String),
    #[error("config fingerprint mismatch: weights were trained with {found}, expected {expected}")]
    Fingerprint { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = SegError> = std::result::Result<T, E>;
