//! Toolkit for subjective and objective quality assessment of AI-generated
//! audio-visual content.

pub mod dimension;
pub mod jsonl;
pub mod metrics;
pub mod seed;
pub mod subjective;
pub mod wav;
pub mod corpus;
pub mod dataset;
pub mod harness;
pub mod scorer;
pub mod study;

pub use dimension::{Dimension, PerDimension};
pub use dataset::{AgavItem, PairGroup, ScoreTriple};
pub use harness::{MetricReport, PairReport};
pub use subjective::{MosRecord, RatingRecord};
