use thiserror::Error;

use crate::{adversary, compress, decoder, detect, graph, model, sim, tracker};

/// Any library failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Detect(#[from] detect::DetectError),
    #[error(transparent)]
    Compress(#[from] compress::CompressError),
    #[error(transparent)]
    Tracker(#[from] tracker::TrackerError),
    #[error(transparent)]
    Attack(#[from] adversary::AttackError),
    #[error(transparent)]
    Decode(#[from] decoder::DecodeError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}
