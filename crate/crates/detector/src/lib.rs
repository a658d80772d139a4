//! Compact 1D residual network classifying purified pulse waves as AF or
//! non-AF, with hand-written backpropagation and Adam training.

pub mod arch;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod network;
pub mod ops;
pub mod train;

pub use arch::{Architecture, Layout};
pub use error::{DetectorError, Result};
pub use loss::loss_and_gradients;
pub use model::{zscore, Detection, DetectorModel, ModelMetadata, Verdict};
pub use train::{train, Dataset, EpochRecord, TrainConfig, TrainHistory};
