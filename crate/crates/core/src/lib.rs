//! Knowledge-graph question answering by LLM-guided beam search.
//!
//! The pipeline has three phases:
//!
//! 1. **Initialization** ([`linker`]): extract mentions from the question and
//!    link them to graph entities, producing the topic entity set.
//! 2. **Subgraph retrieval** ([`retrieval`]): iterated beam search over the
//!    graph, where at each frontier entity a [`selector`] picks up to K
//!    relations and then up to I neighbor entities per relation, assembling a
//!    question-specific knowledge subgraph and a fully scored decision trace.
//! 3. **Reasoning** ([`reasoner`]): serialize the subgraph into triplets,
//!    prompt a chat model to answer step by step, and parse the reply into an
//!    answer plus an explicit reasoning path checked against the subgraph.
//!
//! [`scoring`] turns the retrieval trace into per-step, per-path, and
//! whole-subgraph probabilities; [`eval`] runs datasets end to end and the
//! width/iteration ablation sweep.

pub mod error;
pub mod eval;
pub mod graph;
pub mod kg;
pub mod llm;
pub mod linker;
pub mod pipeline;
pub mod prompts;
pub mod reasoner;
pub mod retrieval;
pub mod scoring;
pub mod selector;
mod sync_util;
pub mod template;

pub use error::{Error, Result};
pub use graph::{Direction, EntityId, InMemoryGraph, RelationId, Triple, TripleObject};
pub use kg::{EntityCandidate, KgBackend, RelationCandidate};
pub use retrieval::{ExpansionConfig, KnowledgeSubgraph, RetrievalTrace};
pub use selector::{Question, Selector, SelectorDecision};
