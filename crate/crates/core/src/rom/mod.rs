//! Offline assembly of the surrogate and online full-field prediction.
//!
//! Offline: training snapshots are projected onto the (zero-padded) reduced
//! basis, the autoencoder is fitted to the projected coordinates, and the
//! FFNN and LSTM are fitted to the frozen encoder latents. Online: the FFNN
//! supplies the first `w` latents, the LSTM rolls the rest out in closed
//! loop, and the decoder plus basis lift them back to the full field.

mod bundle;
mod metrics;
mod offline;

use thiserror::Error;

pub use bundle::{bundle_hash, Prediction, RomBundle};
pub use metrics::{nrmse, nrmse_series};
pub use offline::{fit_bundle, train_offline, OfflineReport, RomConfig, PAD_MULTIPLE};

use crate::bo::BoError;
use crate::io::IoError;
use crate::nn::NnError;
use crate::reduce::ReduceError;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent data: {0}")]
    Shape(String),
    #[error("true field is constant at time index {time_index}; nRMSE is undefined")]
    UndefinedNormalization { time_index: usize },
    #[error("stage `{stage}` failed: {source}")]
    Network {
        stage: &'static str,
        #[source]
        source: NnError,
    },
    #[error("sampling stage failed: {0}")]
    Bo(#[from] BoError),
    #[error("basis stage failed: {0}")]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl RomError {
    pub(crate) fn stage(stage: &'static str) -> impl Fn(NnError) -> RomError + Copy {
        move |source| RomError::Network { stage, source }
    }
}
