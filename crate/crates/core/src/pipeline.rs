//! End-to-end wiring: topic extraction, entity linking, graph retrieval,
//! trace scoring, and reasoning behind one `answer` call.
//!
//! The pipeline borrows its components, so one backend, selector, and
//! completer can serve many questions (and many clones with different
//! width or iteration settings) without being rebuilt. Cloning a
//! [`Pipeline`] copies configuration only.

use crate::error::{Error, Result};
use crate::kg::KgBackend;
use crate::linker::{self, EmbedderPort, EmbeddingLinkConfig, TopicEntitySet};
use crate::llm::ChatCompleter;
use crate::prompts::PromptSet;
use crate::reasoner::{reason, Answer, ReasonerConfig};
use crate::retrieval::{retrieve_subgraph, ExpansionConfig, KnowledgeSubgraph, RetrievalTrace};
use crate::scoring::{attach_scores, subgraph_score, ScoringConfig};
use crate::selector::{Question, Selector};

/// Everything one answer needs. When `embedder` is present, topic mentions
/// link by embedding similarity with exact lookup as the per-mention
/// fallback; otherwise linking is exact label match only.
#[derive(Clone)]
pub struct Pipeline<'a> {
    pub backend: &'a dyn KgBackend,
    pub selector: &'a dyn Selector,
    pub completer: &'a dyn ChatCompleter,
    pub prompts: &'a PromptSet,
    pub embedder: Option<&'a dyn EmbedderPort>,
    pub embedding: EmbeddingLinkConfig,
    pub expansion: ExpansionConfig,
    pub scoring: ScoringConfig,
    pub reasoner: ReasonerConfig,
}

/// The full product of answering one question.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub answer: Answer,
    pub subgraph: KnowledgeSubgraph,
    pub trace: RetrievalTrace,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn KgBackend,
        selector: &'a dyn Selector,
        completer: &'a dyn ChatCompleter,
        prompts: &'a PromptSet,
    ) -> Self {
        Pipeline {
            backend,
            selector,
            completer,
            prompts,
            embedder: None,
            embedding: EmbeddingLinkConfig::default(),
            expansion: ExpansionConfig::default(),
            scoring: ScoringConfig::default(),
            reasoner: ReasonerConfig::default(),
        }
    }

    /// Extract topic mentions and link them to graph entities. Any failure
    /// here means the question never reached retrieval, which callers treat
    /// differently from a thin subgraph.
    pub fn link_topics(&self, q: &Question) -> Result<TopicEntitySet> {
        let mentions = self
            .selector
            .extract_topic_mentions(q)
            .map_err(|e| Error::InitializationFailure(format!("question {}: {e}", q.id)))?;
        if mentions.is_empty() {
            return Err(Error::InitializationFailure(format!(
                "question {}: no topic mentions found",
                q.id
            )));
        }
        match self.embedder {
            Some(embedder) => {
                linker::link_embedding(self.backend, embedder, &mentions, &self.embedding)
            }
            None => linker::link_exact(self.backend, &mentions),
        }
    }

    /// Link, retrieve, and score. The returned trace always carries scores.
    pub fn retrieve(&self, q: &Question) -> Result<(KnowledgeSubgraph, RetrievalTrace)> {
        let topics = self.link_topics(q)?;
        let (subgraph, mut trace) =
            retrieve_subgraph(self.backend, self.selector, q, &topics, &self.expansion)?;
        attach_scores(&mut trace, &self.scoring);
        Ok((subgraph, trace))
    }

    /// The whole run: retrieve a subgraph, then reason over it.
    pub fn answer(&self, q: &Question) -> Result<PipelineRun> {
        let (subgraph, trace) = self.retrieve(q)?;
        let scores = match &trace.scores {
            Some(s) => s.clone(),
            None => subgraph_score(&trace, &self.scoring),
        };
        let answer = reason(
            self.completer,
            &self.reasoner,
            q,
            &subgraph,
            &scores,
            self.prompts,
        )?;
        Ok(PipelineRun {
            answer,
            subgraph,
            trace,
        })
    }
}
