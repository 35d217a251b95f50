//! Knowledge-graph conditioned image captioning.
//!
//! The crate covers the pipeline downstream of perception: a commonsense
//! graph store, retrofitted word vectors, expansion of detected object
//! labels into related terms, an LSTM caption generator trained with exact
//! gradients, beam-search decoding and caption metrics.

pub mod dataset;
pub mod decode;
pub mod error;
pub mod expansion;
pub mod kg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod retrofit;
pub mod text;
pub mod vectors;

pub use dataset::{Dataset, ImageRecord, Split, Vocabulary};
pub use decode::{beam_search, greedy_decode, DecodeConfig, Hypothesis};
pub use error::{Error, Result};
pub use expansion::{build_term_sets, DetectedObject, ExpansionConfig, TermSets};
pub use kg::{KnowledgeGraph, Term};
pub use metrics::{evaluate, EvalCorpus, EvalItem, MetricReport};
pub use retrofit::{retrofit, AlphaPolicy, BetaPolicy, RetrofitConfig};
pub use vectors::{cosine_distance, VectorStore};
