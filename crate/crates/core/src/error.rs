use thiserror::Error;

use crate::dataset::DataError;
use crate::ensemble::EnsembleError;
use crate::metrics::MetricError;
use crate::rankings::RankError;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("invalid experiment spec: {0}")]
    Spec(String),
}
