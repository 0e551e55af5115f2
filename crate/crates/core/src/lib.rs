//! Cohort retrieval over longitudinal clinical records: a retrieval baseline,
//! a knowledge-base engine with a set-valued query language, a synthetic
//! benchmark generator and the evaluation harness comparing them.

pub mod cohort;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod http;
pub mod ids;
pub mod io;
pub mod kb;
pub mod num;
pub mod pipeline;
pub mod retrieval;
pub mod squerl;
pub mod synthgen;

pub use cohort::Cohort;
pub use num::Scalar;

pub type EmbeddingVector = embed::Embedding<f32>;
pub type VectorIndex = embed::DenseIndex<f32>;
pub type Prf = eval::PrfScores<f64>;
