//! Semantic decoding for next-item recommendation.
//!
//! A recommender that emits one candidate set per request often spreads its
//! belief across items that mean the same thing to the user. This crate
//! groups such candidates by the cosine similarity of their logit vectors,
//! measures entropy over the groups rather than the items, and reranks with
//! a score that mixes each item's own probability with its group's
//! per-member mass.
//!
//! ```
//! use semdec::{decode, CandidateItem, DecodeRequest, UsdConfig};
//!
//! let req = DecodeRequest {
//!     request_id: "u1".into(),
//!     history: vec![],
//!     ground_truth: None,
//!     candidates: vec![
//!         CandidateItem::new("red-mug", vec![1.0, 0.0], 0.3),
//!         CandidateItem::new("crimson-mug", vec![0.98, 0.05], 0.3),
//!         CandidateItem::new("teapot", vec![0.0, 1.0], 0.4),
//!     ],
//! };
//! let ranked = decode(&req, &UsdConfig::default())?;
//! assert_eq!(ranked.items.len(), 3);
//! # Ok::<(), semdec::Error>(())
//! ```

pub mod baselines;
pub mod clustering;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod sampling;
pub mod synth;
pub mod token_model;
pub mod uncertainty;

pub use baselines::{Ranker, StrategyKind, StrategySpec};
pub use clustering::{cluster_candidates, cosine_similarity, SimilarityMatrix};
pub use config::{validate_config, EntropyNormalization, UsdConfig};
pub use decoder::{adaptive_temperature, decode, decode_traced, DecodeTrace};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use io::DecodeRecord;
pub use model::{
    validate_request, CandidateItem, ClusterSet, DecodeRequest, ItemId, LogitVector, RankedList, ScoredItem,
    SemanticCluster,
};
pub use synth::SynthSpec;
pub use uncertainty::{estimate, semantic_entropy};
