//! Linking question mentions to graph entities.
//!
//! Exact linking matches normalized labels and is the default. Embedding
//! linking ranks the backend's whole label universe by cosine similarity and
//! keeps the top matches above a threshold, falling back to exact matching
//! per mention when the vectors are unavailable or unconvincing.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityId;
use crate::kg::KgBackend;
use crate::sync_util::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMethod {
    Exact,
    Embedding,
}

/// How one topic entity was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub mention: String,
    pub method: LinkMethod,
    /// Cosine similarity for embedding links; 1.0 for exact matches.
    pub similarity: f64,
}

/// The linked topic entities, in mention order with duplicates removed, plus
/// provenance for each and the mentions that matched nothing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicEntitySet {
    pub entities: Vec<EntityId>,
    pub provenance: BTreeMap<String, LinkRecord>,
    pub unlinked: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TopicEntitySet {
    fn push(&mut self, entity: EntityId, record: LinkRecord) {
        if !self.provenance.contains_key(&entity.id) {
            self.provenance.insert(entity.id.clone(), record);
            self.entities.push(entity);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

fn fail_if_all_unlinked(set: TopicEntitySet, mentions: &[String]) -> Result<TopicEntitySet> {
    if set.is_empty() {
        return Err(Error::InitializationFailure(format!(
            "unmatched mentions: {}",
            mentions.join(", ")
        )));
    }
    Ok(set)
}

/// Link every mention by normalized-label equality. Mentions keep their
/// order; an entity hit by two mentions is credited to the first. Errors
/// only when nothing links at all.
pub fn link_exact(backend: &dyn KgBackend, mentions: &[String]) -> Result<TopicEntitySet> {
    let mut set = TopicEntitySet::default();
    for mention in mentions {
        let hits = backend.lookup_label(mention)?;
        if hits.is_empty() {
            set.unlinked.push(mention.clone());
            continue;
        }
        for entity in hits {
            set.push(
                entity,
                LinkRecord {
                    mention: mention.clone(),
                    method: LinkMethod::Exact,
                    similarity: 1.0,
                },
            );
        }
    }
    fail_if_all_unlinked(set, mentions)
}

/// A text-to-vector service.
pub trait EmbedderPort: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn name(&self) -> &'static str;
}

/// Cosine similarity of two vectors; 0 when either has zero norm or the
/// dimensions disagree.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingLinkConfig {
    /// Minimum cosine similarity for a link to count.
    pub threshold: f64,
    /// How many entities each mention may link to.
    pub top_m: usize,
}

impl Default for EmbeddingLinkConfig {
    fn default() -> Self {
        EmbeddingLinkConfig {
            threshold: 0.6,
            top_m: 1,
        }
    }
}

/// Link mentions by embedding similarity against the backend's label
/// universe. Per mention: embed it, rank every label by cosine, keep the top
/// `top_m` at or above `threshold`; when none qualify, retry that mention
/// with exact matching and note the fallback. An embedder transport failure
/// aborts the whole call.
pub fn link_embedding(
    backend: &dyn KgBackend,
    embedder: &dyn EmbedderPort,
    mentions: &[String],
    cfg: &EmbeddingLinkConfig,
) -> Result<TopicEntitySet> {
    if cfg.top_m == 0 {
        return Err(Error::Config("embedding link top_m must be at least 1".into()));
    }
    let universe = backend.label_entries()?;
    let mut label_vecs: Vec<(usize, Vec<f64>)> = Vec::with_capacity(universe.len());
    for (idx, (_, label)) in universe.iter().enumerate() {
        label_vecs.push((idx, embedder.embed(label)?));
    }

    let mut set = TopicEntitySet::default();
    for mention in mentions {
        let mv = embedder.embed(mention)?;
        let mut ranked: Vec<(f64, usize)> = label_vecs
            .iter()
            .map(|(idx, lv)| (cosine(&mv, lv), *idx))
            .filter(|(sim, _)| *sim >= cfg.threshold)
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| universe[a.1].0.id.cmp(&universe[b.1].0.id))
        });
        ranked.truncate(cfg.top_m);

        if ranked.is_empty() {
            let hits = backend.lookup_label(mention)?;
            if hits.is_empty() {
                set.unlinked.push(mention.clone());
            } else {
                set.notes.push(format!(
                    "mention {mention:?} fell back to exact matching; no embedding above {}",
                    cfg.threshold
                ));
                for entity in hits {
                    set.push(
                        entity,
                        LinkRecord {
                            mention: mention.clone(),
                            method: LinkMethod::Exact,
                            similarity: 1.0,
                        },
                    );
                }
            }
            continue;
        }
        for (sim, idx) in ranked {
            set.push(
                universe[idx].0.clone(),
                LinkRecord {
                    mention: mention.clone(),
                    method: LinkMethod::Embedding,
                    similarity: sim,
                },
            );
        }
    }
    fail_if_all_unlinked(set, mentions)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key; never the key
    /// itself.
    #[serde(default)]
    pub api_key_env: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> u64 {
    60
}

fn default_in_flight() -> usize {
    4
}

/// Embedder over an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    cfg: HttpEmbedderConfig,
    http: reqwest::blocking::Client,
    gate: Arc<Semaphore>,
}

#[derive(Serialize)]
struct EmbedWireRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedWireResponse {
    data: Vec<EmbedWireItem>,
}

#[derive(Deserialize)]
struct EmbedWireItem {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Arc::new(Semaphore::new(cfg.max_in_flight.max(1)));
        Ok(HttpEmbedder { cfg, http, gate })
    }
}

impl EmbedderPort for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let _slot = self.gate.acquire();
        let mut req = self.http.post(&self.cfg.base_url).json(&EmbedWireRequest {
            model: &self.cfg.model,
            input: text,
        });
        if !self.cfg.api_key_env.is_empty() {
            if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| Error::Embedder(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Embedder(format!(
                "embedding endpoint returned {}",
                resp.status()
            )));
        }
        let body: EmbedWireResponse = resp
            .json()
            .map_err(|e| Error::Embedder(format!("malformed embedding response: {e}")))?;
        body.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| Error::Embedder("embedding response carried no vectors".into()))
    }

    fn name(&self) -> &'static str {
        "http"
    }
}
