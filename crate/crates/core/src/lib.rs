//! Vision-based classification of binary executables.
//!
//! Binaries are rendered as grayscale images ([`imaging`]), collected into
//! labeled corpora with reproducible splits ([`corpus`]), and classified by
//! from-scratch baselines ([`baselines`]), a small CNN ([`smallcnn`]) or a
//! linear head over externally computed embeddings ([`transfer`]).
//! Predictions are scored with [`evaluate`], explained with super-pixel
//! surrogates ([`interpret`]) and blended with [`ensemble`].

mod codec;
pub mod error;
pub mod evaluate;
pub mod baselines;
pub mod corpus;
pub mod ensemble;
pub mod imaging;
pub mod interpret;
pub mod numerics;
pub mod pipeline;
pub mod smallcnn;
pub mod synth;
pub mod training;
pub mod transfer;

pub use baselines::{Classifier, ProbMatrix};
pub use error::{Error, Result};
