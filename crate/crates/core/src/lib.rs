//! Tooling for instruction-learning task definitions.
//!
//! The crate loads benchmark task files, builds ablated and baseline
//! definitions from content-category annotations, compresses definitions by
//! greedily pruning constituency-tree subtrees against a black-box scorer,
//! scores definitions with Rouge-L, and emits structured triplet definitions
//! together with meta-tuning instances.
//!
//! Data-parallel loops (per-task batches, per-instance scoring) go through
//! [`par`], which uses rayon when the `parallel` feature is enabled and falls
//! back to plain iterators otherwise.

pub mod ablation;
pub mod annotations;
pub mod cli;
pub mod corpus;
pub mod digest;
pub mod metrics;
pub mod par;
pub mod parse;
pub mod scorer;
pub mod stdc;
pub mod triplet;

pub use ablation::{AblatedDefinition, AblationKind, AblationSpec};
pub use annotations::{AnnotationSet, ContentCategory, RatingMatrix, Span};
pub use corpus::{Demonstration, ExampleSet, Instance, PromptTemplate, Task, TaskKind};
pub use metrics::{rouge_l, ScoreReport, TokenSeq};
pub use parse::{NodeId, ParseTree};
pub use scorer::{Scorer, ScorerConfig, ScoreRecord};
pub use stdc::{CompressionResult, HoldoutReport, StdcConfig};
pub use triplet::{MetaTuneInstance, TripletDefinition};
