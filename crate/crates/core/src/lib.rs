//! Toolkit for explainable content moderation with LLM classifiers.
//!
//! The crate covers the data and orchestration side of a two-stage recipe:
//!
//! 1. Each model is fine-tuned on a K-shot sample of explained posts, then
//!    prompted to justify *every* label for those posts. Explanations
//!    conditioned on the gold label become preferred completions, the rest
//!    become dispreferred ones, and the model is aligned on that synthetic
//!    preference data (DPO or KTO).
//! 2. Models are refined on each other's gold-conditioned explanations over a
//!    held-out set of shots, and explanation quality is judged by humans and
//!    by a style classifier.
//!
//! Modules map onto that flow: [`corpus`] (ingest, anonymize, split, sample),
//! [`prompting`] (templates and response parsing), [`backend`] (generation and
//! training providers), [`prefdata`] (preference data forging), [`pipeline`]
//! (stage orchestration) and [`evalkit`] (scoring, tables, votes, reports).

pub mod backend;
pub mod corpus;
pub mod digest;
pub mod evalkit;
pub mod pipeline;
pub mod prefdata;
pub mod prompting;

pub use backend::{Backend, BackendError, GenerationRequest, ModelRef, StageTag, TrainingSpec};
pub use corpus::{DatasetSplit, LabelSpace, LabeledExample, Post, ShotPool};
pub use evalkit::EvalReport;
pub use prefdata::{ListwiseRecord, PreferencePair};
pub use prompting::{ParsedResponse, RenderedPrompt};




