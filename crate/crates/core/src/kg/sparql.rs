//! SPARQL endpoint backend: query templates, the HTTP client, and id/IRI
//! mapping.
//!
//! Templates keep the backend portable across graphs. Both shipped defaults
//! use a `VALUES` clause to pin the focus entity to either the subject or the
//! object variable, so one template text serves both directions: the
//! `{direction}` placeholder is bound to the variable name `s` (outgoing) or
//! `o` (incoming), and the client reads the opposite column.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, RelationId, TripleObject};
use crate::kg::{EntityCandidate, KgBackend, RelationCandidate};
use crate::sync_util::Semaphore;
use crate::template;

/// Which search a template serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    RelationSearch,
    EntitySearch,
}

/// A query template with `{entity}`, `{relation}`, `{direction}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub kind: TemplateKind,
    pub text: String,
}

pub const DEFAULT_RELATION_TEMPLATE: &str =
    "SELECT DISTINCT ?r WHERE { ?s ?r ?o . VALUES ?{direction} { {entity} } }";

pub const DEFAULT_ENTITY_TEMPLATE: &str =
    "SELECT DISTINCT ?s ?o WHERE { ?s {relation} ?o . VALUES ?{direction} { {entity} } }";

impl QueryTemplate {
    pub fn new(kind: TemplateKind, text: impl Into<String>) -> Result<Self> {
        let t = QueryTemplate {
            kind,
            text: text.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_file(kind: TemplateKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        QueryTemplate::new(kind, text.trim_end().to_string())
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        let text = match kind {
            TemplateKind::RelationSearch => DEFAULT_RELATION_TEMPLATE,
            TemplateKind::EntitySearch => DEFAULT_ENTITY_TEMPLATE,
        };
        QueryTemplate {
            kind,
            text: text.to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        let names = template::placeholders(&self.text);
        let has = |n: &str| names.iter().any(|x| x == n);
        match self.kind {
            TemplateKind::RelationSearch if !has("entity") => Err(Error::Config(
                "relation search template must contain {entity}".into(),
            )),
            TemplateKind::EntitySearch if !(has("entity") && has("relation")) => Err(Error::Config(
                "entity search template must contain {entity} and {relation}".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Exact textual substitution of every placeholder.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        template::render(&self.text, bindings)
    }
}

/// Connection settings for a SPARQL endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgEndpointConfig {
    pub base_url: String,
    /// Request timeout; must be positive.
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Base backoff; doubles per retry.
    pub backoff_ms: u64,
    /// Deterministic per-search candidate cap (sorted by id).
    pub max_candidates: usize,
    pub max_in_flight: usize,
    /// Prefix joined to bare entity ids to form IRIs, and stripped from
    /// returned IRIs. Bare ids without a prefix use `urn:kg:`.
    pub entity_iri_prefix: Option<String>,
    pub relation_iri_prefix: Option<String>,
    /// POST the query instead of passing it as a GET parameter.
    pub use_post: bool,
    /// Name of an environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<TemplateKind, QueryTemplate>,
}

impl Default for KgEndpointConfig {
    fn default() -> Self {
        KgEndpointConfig {
            base_url: String::new(),
            timeout_secs: 30.0,
            max_retries: 3,
            backoff_ms: 250,
            max_candidates: 200,
            max_in_flight: 4,
            entity_iri_prefix: None,
            relation_iri_prefix: None,
            use_post: false,
            auth_token_env: None,
            templates: BTreeMap::new(),
        }
    }
}

impl KgEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("sparql endpoint base_url is empty".into()));
        }
        if self.timeout_secs <= 0.0 {
            return Err(Error::Config("sparql endpoint timeout must be > 0".into()));
        }
        for t in self.templates.values() {
            t.validate()?;
        }
        Ok(())
    }

    fn template(&self, kind: TemplateKind) -> QueryTemplate {
        self.templates
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| QueryTemplate::default_for(kind))
    }
}

const FALLBACK_PREFIX: &str = "urn:kg:";

/// One cell of a SPARQL JSON result row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparqlValue {
    #[serde(rename = "type")]
    pub kind: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datatype: Option<String>,
}

pub type ResultRow = BTreeMap<String, SparqlValue>;

/// Blocking SPARQL-over-HTTP client with retries and an in-flight cap.
pub struct SparqlClient {
    cfg: KgEndpointConfig,
    http: reqwest::blocking::Client,
    gate: Semaphore,
}

impl SparqlClient {
    pub fn new(cfg: KgEndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Semaphore::new(cfg.max_in_flight);
        Ok(SparqlClient { cfg, http, gate })
    }

    /// Run a query and parse the standard JSON results encoding into rows.
    /// Transient failures (HTTP 429/5xx, transport errors) are retried with
    /// exponential backoff up to `max_retries`.
    pub fn execute(&self, query: &str) -> Result<Vec<ResultRow>> {
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.send(query) {
                Ok(body) => return parse_results(&body),
                Err(RequestFailure::Fatal(e)) => return Err(e),
                Err(RequestFailure::Transient(msg)) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(Error::Transport(format!(
                            "{} (after {} attempts)",
                            msg,
                            attempt + 1
                        )));
                    }
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::debug!("sparql retry {}: {}", attempt + 1, msg);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }

    fn send(&self, query: &str) -> std::result::Result<String, RequestFailure> {
        let mut req = if self.cfg.use_post {
            self.http
                .post(&self.cfg.base_url)
                .form(&[("query", query)])
        } else {
            self.http.get(&self.cfg.base_url).query(&[("query", query)])
        };
        req = req.header("Accept", "application/sparql-results+json");
        if let Some(var) = &self.cfg.auth_token_env {
            if let Ok(token) = std::env::var(var) {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
        }
        let resp = req
            .send()
            .map_err(|e| RequestFailure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            resp.text()
                .map_err(|e| RequestFailure::Transient(e.to_string()))
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(RequestFailure::Transient(format!("http status {status}")))
        } else {
            Err(RequestFailure::Fatal(Error::Transport(format!(
                "http status {status}"
            ))))
        }
    }
}

enum RequestFailure {
    Transient(String),
    Fatal(Error),
}

fn parse_results(body: &str) -> Result<Vec<ResultRow>> {
    let doc: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::MalformedResponse(e.to_string()))?;
    let bindings = doc
        .pointer("/results/bindings")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::MalformedResponse("missing results.bindings".into()))?;
    let mut rows = Vec::with_capacity(bindings.len());
    for b in bindings {
        let obj = b
            .as_object()
            .ok_or_else(|| Error::MalformedResponse("binding is not an object".into()))?;
        let mut row = ResultRow::new();
        for (var, cell) in obj {
            let value: SparqlValue = serde_json::from_value(cell.clone())
                .map_err(|e| Error::MalformedResponse(format!("binding {var}: {e}")))?;
            row.insert(var.clone(), value);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// [`KgBackend`] over a SPARQL endpoint. Label lookups come from an optional
/// local label dump, since public endpoints cannot enumerate labels cheaply.
pub struct SparqlBackend {
    client: SparqlClient,
    relation_template: QueryTemplate,
    entity_template: QueryTemplate,
    label_index: BTreeMap<String, BTreeSet<EntityId>>,
    label_entries: Vec<(EntityId, String)>,
}

impl SparqlBackend {
    pub fn new(cfg: KgEndpointConfig) -> Result<Self> {
        let relation_template = cfg.template(TemplateKind::RelationSearch);
        let entity_template = cfg.template(TemplateKind::EntitySearch);
        relation_template.validate()?;
        entity_template.validate()?;
        Ok(SparqlBackend {
            client: SparqlClient::new(cfg)?,
            relation_template,
            entity_template,
            label_index: BTreeMap::new(),
            label_entries: Vec::new(),
        })
    }

    /// Load an `id<TAB>label` dump to answer label lookups locally.
    pub fn with_label_dump(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::MalformedLine {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let e = EntityId::with_label(fields[0].trim(), fields[1].trim());
            self.label_index
                .entry(crate::graph::normalize_label(fields[1].trim()))
                .or_default()
                .insert(e.clone());
            self.label_entries.push((e, fields[1].trim().to_string()));
        }
        Ok(self)
    }

    fn cfg(&self) -> &KgEndpointConfig {
        &self.client.cfg
    }

    fn entity_prefix(&self) -> &str {
        self.cfg()
            .entity_iri_prefix
            .as_deref()
            .unwrap_or(FALLBACK_PREFIX)
    }

    fn relation_prefix(&self) -> &str {
        self.cfg()
            .relation_iri_prefix
            .as_deref()
            .unwrap_or(FALLBACK_PREFIX)
    }

    fn entity_term(&self, id: &str) -> String {
        if id.contains("://") || id.starts_with("urn:") {
            format!("<{id}>")
        } else {
            format!("<{}{}>", self.entity_prefix(), id)
        }
    }

    fn relation_term(&self, id: &str) -> String {
        if id.contains("://") || id.starts_with("urn:") {
            format!("<{id}>")
        } else {
            format!("<{}{}>", self.relation_prefix(), id)
        }
    }

    fn strip(&self, iri: &str, prefix: &str) -> String {
        iri.strip_prefix(prefix).unwrap_or(iri).to_string()
    }

    fn direction_var(dir: Direction) -> &'static str {
        match dir {
            Direction::Outgoing => "s",
            Direction::Incoming => "o",
        }
    }

    fn object_from(&self, v: &SparqlValue) -> TripleObject {
        if v.kind == "uri" {
            TripleObject::Entity(EntityId::new(self.strip(&v.value, self.entity_prefix())))
        } else {
            match &v.datatype {
                Some(dt) => TripleObject::typed_literal(&v.value, dt),
                None => TripleObject::literal(&v.value),
            }
        }
    }
}

impl KgBackend for SparqlBackend {
    fn search_relations(&self, e: &EntityId) -> Result<BTreeSet<RelationCandidate>> {
        let mut out = BTreeSet::new();
        for dir in [Direction::Outgoing, Direction::Incoming] {
            let bindings: BTreeMap<&str, String> = [
                ("entity", self.entity_term(&e.id)),
                ("direction", Self::direction_var(dir).to_string()),
            ]
            .into_iter()
            .collect();
            let query = self.relation_template.render(&bindings)?;
            for row in self.client.execute(&query)? {
                if let Some(cell) = row.get("r") {
                    let id = self.strip(&cell.value, self.relation_prefix());
                    out.insert(RelationCandidate::new(RelationId::new(id), dir));
                }
            }
        }
        Ok(out.into_iter().take(self.cfg().max_candidates).collect())
    }

    fn search_entities(
        &self,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
    ) -> Result<BTreeSet<EntityCandidate>> {
        let bindings: BTreeMap<&str, String> = [
            ("entity", self.entity_term(&e.id)),
            ("relation", self.relation_term(&r.id)),
            ("direction", Self::direction_var(dir).to_string()),
        ]
        .into_iter()
        .collect();
        let query = self.entity_template.render(&bindings)?;
        let result_var = match dir {
            Direction::Outgoing => "o",
            Direction::Incoming => "s",
        };
        let mut out = BTreeSet::new();
        for row in self.client.execute(&query)? {
            if let Some(cell) = row.get(result_var) {
                out.insert(EntityCandidate::new(self.object_from(cell)));
            }
        }
        Ok(out.into_iter().take(self.cfg().max_candidates).collect())
    }

    fn lookup_label(&self, label: &str) -> Result<BTreeSet<EntityId>> {
        Ok(self
            .label_index
            .get(&crate::graph::normalize_label(label))
            .cloned()
            .unwrap_or_default())
    }

    fn label_entries(&self) -> Result<Vec<(EntityId, String)>> {
        if self.label_entries.is_empty() {
            return Err(Error::Config(
                "sparql backend has no label dump; configure one for linking".into(),
            ));
        }
        Ok(self.label_entries.clone())
    }

    fn name(&self) -> &'static str {
        "sparql"
    }
}
