//! Sequence labeling with a deep encoder feeding a linear-chain CRF.
//!
//! The encoder is pretrained with stacked RBMs and a per-frame regression
//! stage, then the whole model is trained online: structured-perceptron
//! steps on the chain parameters, stochastic gradient steps on the encoder.

pub mod crf;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod math;
pub mod nn;
pub mod rbm;
pub mod trainer;

pub use crate::crf::{ChainPosteriors, CrfParams, EmissionTable};
pub use crate::dataset::{encode_onehot, split_folds, Dataset, FoldAssignment, LabelAlphabet, LabeledSequence};
pub use crate::error::{Error, Result};
pub use crate::nn::{EncoderWeights, TopLayer};
pub use crate::trainer::{ModelState, TrainConfig};
