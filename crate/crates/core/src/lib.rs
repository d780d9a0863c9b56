//! Two-stage distillation of a black-box reranker into a dense retriever.
//!
//! A teacher orders each question's retrieved candidates. Stage 1 trains a
//! ranker on those orderings with ListMLE; stage 2 freezes the ranker and
//! trains the retriever to match its candidate distribution under KL.
//! Encoders are hashed embedding bags with hand-written gradients, generic
//! over `f32`/`f64`.

pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod numkit;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod teacher;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Encoder = encoder::EncoderModel<f64>;
pub type Index = corpus::CorpusIndex<f64>;
pub type Dist = numkit::Distribution<f64>;
pub type Outcome = experiment::ExperimentOutcome<f64>;
