//! Genre classification from frame-level audio-encoder features.
//!
//! A clip is decoded and resampled to 16 kHz ([`audio`]), cut into 25 ms
//! windows with a 20 ms hop ([`framing`]) and turned into one feature row per
//! frame by an [`encoders::Encoder`]. Rows are cached in `.gpf` files
//! ([`store`]). A small MLP ([`mlp`]) classifies every frame, and the frame
//! distributions of a clip are fused into one genre ([`aggregation`]).
//! [`evaluation`] runs the three-fold protocol over a [`dataset`].

pub mod aggregation;
pub mod audio;
pub mod dataset;
pub mod encoders;
pub mod evaluation;
pub mod framing;
pub mod mlp;
pub mod rng;
pub mod store;
pub mod synthetic;

use thiserror::Error;

pub use aggregation::{aggregate, AggregationRule, ClipPrediction};
pub use audio::AudioClip;
pub use encoders::{Encoder, FeatureMatrix};
pub use framing::FrameSpec;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] audio::AudioError),
    #[error(transparent)]
    Framing(#[from] framing::FramingError),
    #[error(transparent)]
    Encoder(#[from] encoders::EncoderError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Mlp(#[from] mlp::MlpError),
    #[error(transparent)]
    Aggregation(#[from] aggregation::AggregationError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvaluationError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
