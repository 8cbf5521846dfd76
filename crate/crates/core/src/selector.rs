//! Candidate selection: which mentions, relations, and entities the search
//! should pursue.
//!
//! Three implementations share one interface. [`LexicalSelector`] is a pure
//! token-overlap ranker, useful offline and as the fallback when a model
//! reply cannot be parsed. [`OracleSelector`] follows planted gold paths and
//! bounds best-case retrieval in tests. [`LlmSelector`] asks a chat model to
//! score candidates and normalizes whatever comes back.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, RelationId, TripleObject};
use crate::kg::{EntityCandidate, RelationCandidate};
use crate::llm::{ChatCompleter, ChatMessage, LlmRequest};
use crate::prompts::PromptSet;

/// A question posed to the pipeline. Gold answers ride along only for
/// evaluation; nothing in retrieval or reasoning reads them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let q = Question {
            id: id.into(),
            text: text.into(),
            gold_answers: None,
        };
        if q.text.trim().is_empty() {
            return Err(Error::Config(format!("question {} has empty text", q.id)));
        }
        Ok(q)
    }
}

/// One scored pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub id: String,
    pub score: f64,
}

/// The outcome of one selection: scores normalized to sum 1, ordered by
/// descending score with ascending-id tie breaks, at most the requested cap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectorDecision {
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl SelectorDecision {
    pub fn empty() -> Self {
        SelectorDecision::default()
    }

    /// Build a decision from raw (id, score) pairs: unknown ids are dropped,
    /// scores clipped to [0,1], the top `cap` kept, and the survivors
    /// renormalized. An all-zero mass becomes uniform.
    pub fn normalized(
        raw: Vec<(String, f64)>,
        offered: &BTreeSet<String>,
        cap: usize,
        rationale: Option<String>,
    ) -> Self {
        let mut seen = BTreeSet::new();
        let mut items: Vec<(String, f64)> = raw
            .into_iter()
            .filter(|(id, s)| offered.contains(id) && s.is_finite() && seen.insert(id.clone()))
            .map(|(id, s)| (id, s.clamp(0.0, 1.0)))
            .collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        items.truncate(cap);
        if items.is_empty() {
            return SelectorDecision {
                choices: Vec::new(),
                rationale,
            };
        }
        let mass: f64 = items.iter().map(|(_, s)| s).sum();
        let choices = if mass > 0.0 {
            items
                .into_iter()
                .map(|(id, s)| Choice { id, score: s / mass })
                .collect()
        } else {
            let uniform = 1.0 / items.len() as f64;
            items
                .into_iter()
                .map(|(id, _)| Choice { id, score: uniform })
                .collect()
        };
        SelectorDecision { choices, rationale }
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.choices.iter().find(|c| c.id == id).map(|c| c.score)
    }

    /// Check the type's invariants against the offered candidate set; used
    /// by property tests and debug assertions.
    pub fn check_invariants(&self, offered: &BTreeSet<String>, cap: usize) -> Result<()> {
        if self.choices.len() > cap {
            return Err(Error::Selector(format!(
                "{} choices exceed cap {cap}",
                self.choices.len()
            )));
        }
        for c in &self.choices {
            if !offered.contains(&c.id) {
                return Err(Error::Selector(format!("choice {} was not offered", c.id)));
            }
            if !(0.0..=1.0 + 1e-9).contains(&c.score) {
                return Err(Error::Selector(format!(
                    "choice {} score {} outside [0,1]",
                    c.id, c.score
                )));
            }
        }
        if !self.choices.is_empty() {
            let sum: f64 = self.choices.iter().map(|c| c.score).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Selector(format!("scores sum to {sum}, not 1")));
            }
        }
        for w in self.choices.windows(2) {
            let ordered = w[0].score > w[1].score
                || (w[0].score == w[1].score && w[0].id < w[1].id);
            if !ordered {
                return Err(Error::Selector(format!(
                    "choices out of order at {} / {}",
                    w[0].id, w[1].id
                )));
            }
        }
        Ok(())
    }
}

/// Casefolded alphanumeric tokens of a string.
fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token-set overlap (intersection over union) between two strings, in
/// [0,1]. Equal non-empty strings score 1; disjoint token sets score 0.
pub fn lexical_score(question_text: &str, item_label: &str) -> f64 {
    let a = tokens(question_text);
    let b = tokens(item_label);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// The decision interface the retrieval loop calls into.
pub trait Selector: Send + Sync {
    /// 1..8 distinct non-empty mention strings to link into topic entities.
    fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>>;

    /// Score and keep at most `k` of the offered relations around `e`.
    fn filter_relations(
        &self,
        q: &Question,
        e: &EntityId,
        candidates: &[RelationCandidate],
        k: usize,
    ) -> Result<SelectorDecision>;

    /// Score and keep at most `i` of the entities reached from `e` via `r`.
    fn filter_entities(
        &self,
        q: &Question,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
        candidates: &[EntityCandidate],
        i: usize,
    ) -> Result<SelectorDecision>;

    fn name(&self) -> &'static str;
}

pub(crate) fn require_width(k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::Selector(format!("{what} width must be at least 1")));
    }
    Ok(())
}

const STOPWORDS: &[&str] = &[
    "a", "am", "an", "and", "are", "as", "at", "be", "been", "being", "by", "can", "could",
    "did", "do", "does", "for", "from", "had", "has", "have", "here", "how", "in", "is", "it",
    "its", "many", "may", "might", "much", "must", "no", "not", "now", "of", "on", "or",
    "shall", "should", "that", "the", "there", "these", "this", "those", "to", "was", "were",
    "what", "when", "where", "which", "who", "whom", "whose", "why", "will", "with", "would",
];

fn is_stopword(word: &str) -> bool {
    let lowered = word.to_lowercase();
    STOPWORDS.binary_search(&lowered.as_str()).is_ok()
}

fn strip_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Mention extraction without a model: maximal runs of capitalized words
/// (stopword edges trimmed) plus double-quoted spans, in order of
/// appearance; when the question has neither, the longest non-stopword
/// tokens stand in.
pub fn lexical_mentions(text: &str) -> Vec<String> {
    let mut found: Vec<(usize, String)> = Vec::new();

    // Double-quoted spans.
    let mut rest = text;
    let mut base = 0usize;
    while let Some(open) = rest.find('"') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('"') else { break };
        let inner = after[..close].trim();
        if !inner.is_empty() {
            found.push((base + open, inner.to_string()));
        }
        let consumed = open + close + 2;
        base += consumed;
        rest = &rest[consumed..];
    }

    // Maximal capitalized runs.
    let mut run: Vec<&str> = Vec::new();
    let mut run_start = 0usize;
    let flush = |run: &mut Vec<&str>, start: usize, found: &mut Vec<(usize, String)>| {
        while run.first().is_some_and(|w| is_stopword(w)) {
            run.remove(0);
        }
        while run.last().is_some_and(|w| is_stopword(w)) {
            run.pop();
        }
        if !run.is_empty() {
            found.push((start, run.join(" ")));
        }
        run.clear();
    };
    let mut offset = 0usize;
    for raw in text.split_whitespace() {
        let pos = text[offset..].find(raw).map(|p| p + offset).unwrap_or(offset);
        offset = pos + raw.len();
        let word = strip_punct(raw);
        let capitalized = word.chars().next().is_some_and(|c| c.is_uppercase());
        if capitalized {
            if run.is_empty() {
                run_start = pos;
            }
            run.push(word);
        } else {
            flush(&mut run, run_start, &mut found);
        }
    }
    flush(&mut run, run_start, &mut found);

    found.sort_by_key(|f| f.0);
    let mut seen = BTreeSet::new();
    let mut mentions: Vec<String> = found
        .into_iter()
        .map(|(_, m)| m)
        .filter(|m| seen.insert(m.to_lowercase()))
        .take(8)
        .collect();

    if mentions.is_empty() {
        // Content-word fallback: longest first, appearance order on ties.
        let mut words: Vec<&str> = text
            .split_whitespace()
            .map(strip_punct)
            .filter(|w| !w.is_empty() && !is_stopword(w))
            .collect();
        words.sort_by_key(|w| std::cmp::Reverse(w.len()));
        let mut seen = BTreeSet::new();
        mentions = words
            .into_iter()
            .map(str::to_string)
            .filter(|w| seen.insert(w.to_lowercase()))
            .take(8)
            .collect();
    }
    if mentions.is_empty() {
        let whole = text.trim();
        if !whole.is_empty() {
            mentions.push(whole.to_string());
        }
    }
    mentions
}

fn relation_key_set(candidates: &[RelationCandidate]) -> BTreeSet<String> {
    candidates.iter().map(|c| c.key()).collect()
}

fn entity_key_set(candidates: &[EntityCandidate]) -> BTreeSet<String> {
    candidates.iter().map(|c| c.key()).collect()
}

/// Pure token-overlap selector; the deterministic stand-in for a model.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalSelector;

impl LexicalSelector {
    fn score_relations(q: &Question, candidates: &[RelationCandidate]) -> Vec<(String, f64)> {
        candidates
            .iter()
            .map(|c| (c.key(), lexical_score(&q.text, &c.relation.display_label())))
            .collect()
    }

    fn score_entities(q: &Question, candidates: &[EntityCandidate]) -> Vec<(String, f64)> {
        candidates
            .iter()
            .map(|c| (c.key(), lexical_score(&q.text, &c.object.display_label())))
            .collect()
    }
}

impl Selector for LexicalSelector {
    fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>> {
        Ok(lexical_mentions(&q.text))
    }

    fn filter_relations(
        &self,
        q: &Question,
        _e: &EntityId,
        candidates: &[RelationCandidate],
        k: usize,
    ) -> Result<SelectorDecision> {
        require_width(k, "relation")?;
        Ok(SelectorDecision::normalized(
            Self::score_relations(q, candidates),
            &relation_key_set(candidates),
            k,
            None,
        ))
    }

    fn filter_entities(
        &self,
        q: &Question,
        _e: &EntityId,
        _r: &RelationId,
        _dir: Direction,
        candidates: &[EntityCandidate],
        i: usize,
    ) -> Result<SelectorDecision> {
        require_width(i, "entity")?;
        Ok(SelectorDecision::normalized(
            Self::score_entities(q, candidates),
            &entity_key_set(candidates),
            i,
            None,
        ))
    }

    fn name(&self) -> &'static str {
        "lexical"
    }
}

/// One hop of a gold path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleStep {
    pub relation: String,
    pub direction: Direction,
    pub target: TripleObject,
}

/// A gold path: the entity to start from plus the hops to follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OraclePath {
    pub start: String,
    pub steps: Vec<OracleStep>,
}

/// Gold paths for one question, keyed by exact id or a text fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OraclePlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_contains: Option<String>,
    pub paths: Vec<OraclePath>,
}

/// Test selector that follows planted gold paths exactly: gold candidates
/// get uniform mass, everything else is rejected, and off-path calls return
/// empty decisions. Questions without a plan degrade to lexical behavior.
#[derive(Debug, Clone, Default)]
pub struct OracleSelector {
    plans: Vec<OraclePlan>,
}

impl OracleSelector {
    pub fn new(plans: Vec<OraclePlan>) -> Self {
        OracleSelector { plans }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let plans: Vec<OraclePlan> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("plan file {}: {e}", path.display())))?;
        Ok(OracleSelector { plans })
    }

    fn plan_for(&self, q: &Question) -> Option<&OraclePlan> {
        self.plans.iter().find(|p| {
            p.question_id.as_deref() == Some(q.id.as_str())
                || p.question_contains
                    .as_deref()
                    .is_some_and(|frag| q.text.contains(frag))
        })
    }

    /// Every (entity the walker stands at, step to take) pair across the
    /// plan's paths. A literal target ends its path.
    fn steps_at<'a>(plan: &'a OraclePlan, entity: &str) -> Vec<&'a OracleStep> {
        let mut out = Vec::new();
        for path in &plan.paths {
            let mut current = path.start.as_str();
            for step in &path.steps {
                if current == entity {
                    out.push(step);
                }
                match &step.target {
                    TripleObject::Entity(e) => current = &e.id,
                    TripleObject::Literal(_) => break,
                }
            }
        }
        out
    }
}

impl Selector for OracleSelector {
    fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>> {
        match self.plan_for(q) {
            Some(plan) => {
                let mut seen = BTreeSet::new();
                let mentions: Vec<String> = plan
                    .paths
                    .iter()
                    .map(|p| EntityId::new(&p.start).display_label())
                    .filter(|m| seen.insert(m.clone()))
                    .take(8)
                    .collect();
                if mentions.is_empty() {
                    return Err(Error::Selector(format!(
                        "plan for question {} has no paths",
                        q.id
                    )));
                }
                Ok(mentions)
            }
            None => Ok(lexical_mentions(&q.text)),
        }
    }

    fn filter_relations(
        &self,
        q: &Question,
        e: &EntityId,
        candidates: &[RelationCandidate],
        k: usize,
    ) -> Result<SelectorDecision> {
        require_width(k, "relation")?;
        let Some(plan) = self.plan_for(q) else {
            return LexicalSelector.filter_relations(q, e, candidates, k);
        };
        let gold: BTreeSet<(String, Direction)> = Self::steps_at(plan, &e.id)
            .into_iter()
            .map(|s| (s.relation.clone(), s.direction))
            .collect();
        let raw: Vec<(String, f64)> = candidates
            .iter()
            .filter(|c| gold.contains(&(c.relation.id.clone(), c.direction)))
            .map(|c| (c.key(), 1.0))
            .collect();
        Ok(SelectorDecision::normalized(
            raw,
            &relation_key_set(candidates),
            k,
            None,
        ))
    }

    fn filter_entities(
        &self,
        q: &Question,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
        candidates: &[EntityCandidate],
        i: usize,
    ) -> Result<SelectorDecision> {
        require_width(i, "entity")?;
        let Some(plan) = self.plan_for(q) else {
            return LexicalSelector.filter_entities(q, e, r, dir, candidates, i);
        };
        let gold: BTreeSet<String> = Self::steps_at(plan, &e.id)
            .into_iter()
            .filter(|s| s.relation == r.id && s.direction == dir)
            .map(|s| s.target.key())
            .collect();
        let raw: Vec<(String, f64)> = candidates
            .iter()
            .filter(|c| gold.contains(&c.key()))
            .map(|c| (c.key(), 1.0))
            .collect();
        Ok(SelectorDecision::normalized(
            raw,
            &entity_key_set(candidates),
            i,
            None,
        ))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmSelectorConfig {
    pub model: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
    /// Candidate lists longer than this are pre-pruned by lexical score
    /// before the model sees them.
    pub prompt_budget: usize,
}

impl Default for LlmSelectorConfig {
    fn default() -> Self {
        LlmSelectorConfig {
            model: String::new(),
            temperature: 0.4,
            seed: None,
            max_tokens: 1024,
            prompt_budget: 60,
        }
    }
}

/// Model-backed selector. Replies must be a JSON array of
/// `{"id": ..., "score": ...}`; one corrective reprompt is attempted before
/// falling back to lexical scores, and the fallback is recorded on the
/// decision.
pub struct LlmSelector {
    completer: Arc<dyn ChatCompleter>,
    cfg: LlmSelectorConfig,
    prompts: PromptSet,
}

#[derive(Deserialize)]
struct ScoredId {
    id: String,
    score: f64,
}

impl LlmSelector {
    pub fn new(completer: Arc<dyn ChatCompleter>, cfg: LlmSelectorConfig, prompts: PromptSet) -> Self {
        LlmSelector {
            completer,
            cfg,
            prompts,
        }
    }

    fn request(&self, messages: Vec<ChatMessage>) -> LlmRequest {
        LlmRequest {
            model: self.cfg.model.clone(),
            messages,
            temperature: self.cfg.temperature,
            seed: self.cfg.seed,
            max_tokens: self.cfg.max_tokens,
        }
    }

    /// Parse a scored-id array out of a reply. `Ok` may be empty (the model
    /// judged nothing relevant); `Err` means unusable.
    fn parse_scored(
        reply: &str,
        offered: &BTreeSet<String>,
    ) -> std::result::Result<Vec<(String, f64)>, String> {
        let attempt = |text: &str| serde_json::from_str::<Vec<ScoredId>>(text.trim()).ok();
        let parsed = attempt(reply).or_else(|| {
            let start = reply.find('[')?;
            let end = reply.rfind(']')?;
            if start < end {
                attempt(&reply[start..=end])
            } else {
                None
            }
        });
        let Some(items) = parsed else {
            return Err("reply is not a JSON array of {id, score}".into());
        };
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let known: Vec<(String, f64)> = items
            .into_iter()
            .filter(|x| offered.contains(&x.id))
            .map(|x| (x.id, x.score))
            .collect();
        if known.is_empty() {
            // The model invented ids; a reprompt quoting the real ones helps.
            return Err("no listed id matches an offered candidate".into());
        }
        Ok(known)
    }

    /// Budget-prune, prompt, parse with one corrective retry, fall back to
    /// lexical scores. Returns the raw scored pairs plus trace notes.
    #[allow(clippy::type_complexity)]
    fn scored_via_llm(
        &self,
        user_prompt_for: &dyn Fn(&str) -> Result<String>,
        rendered: Vec<(String, String, f64)>, // (key, description, lexical score)
        offered: &BTreeSet<String>,
    ) -> Result<(Vec<(String, f64)>, Vec<String>)> {
        let mut notes = Vec::new();
        let mut shown = rendered;
        if shown.len() > self.cfg.prompt_budget {
            let total = shown.len();
            shown.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
            shown.truncate(self.cfg.prompt_budget);
            notes.push(format!(
                "pruned candidate list from {total} to {} by lexical score before prompting",
                self.cfg.prompt_budget
            ));
        }
        shown.sort_by(|a, b| a.0.cmp(&b.0));
        let block: String = shown
            .iter()
            .map(|(key, desc, _)| format!("{key} | {desc}"))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = user_prompt_for(&block)?;

        let first = self.completer.complete(&self.request(vec![ChatMessage::user(&prompt)]))?;
        if first.attempts > 1 {
            notes.push(format!("completion took {} attempts", first.attempts));
        }
        match Self::parse_scored(&first.content, offered) {
            Ok(scored) => Ok((scored, notes)),
            Err(reason) => {
                let corrective = format!(
                    "Your previous reply could not be used: {reason}. Reply with only a JSON \
                     array of objects of the form {{\"id\": \"<candidate id>\", \"score\": \
                     <number between 0 and 1>}}, using only the candidate ids listed, with \
                     scores summing to 1."
                );
                let retry = self.completer.complete(&self.request(vec![
                    ChatMessage::user(&prompt),
                    ChatMessage::assistant(&first.content),
                    ChatMessage::user(corrective),
                ]))?;
                match Self::parse_scored(&retry.content, offered) {
                    Ok(scored) => {
                        notes.push("reply parsed after one corrective reprompt".into());
                        Ok((scored, notes))
                    }
                    Err(second_reason) => {
                        notes.push(format!(
                            "lexical fallback: reply unusable after corrective reprompt ({second_reason})"
                        ));
                        Err(Error::UnparseableReply(notes.join("; ")))
                    }
                }
            }
        }
    }

    fn join_notes(notes: Vec<String>) -> Option<String> {
        if notes.is_empty() {
            None
        } else {
            Some(notes.join("; "))
        }
    }
}

impl Selector for LlmSelector {
    fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>> {
        let bindings: std::collections::BTreeMap<&str, String> =
            [("question", q.text.clone())].into_iter().collect();
        let prompt = crate::template::render(&self.prompts.extraction, &bindings)?;

        let parse = |reply: &str| -> Vec<String> {
            let mut seen = BTreeSet::new();
            reply
                .lines()
                .map(|l| {
                    l.trim()
                        .trim_start_matches(['-', '*', '•'])
                        .trim_start_matches(|c: char| c.is_ascii_digit())
                        .trim_start_matches(['.', ')', ':'])
                        .trim()
                        .trim_matches('"')
                        .to_string()
                })
                .filter(|m| !m.is_empty() && seen.insert(m.to_lowercase()))
                .take(8)
                .collect()
        };

        let first = self.completer.complete(&self.request(vec![ChatMessage::user(&prompt)]))?;
        let mentions = parse(&first.content);
        if !mentions.is_empty() {
            return Ok(mentions);
        }
        let corrective = "Your previous reply listed no usable mentions. Reply with one \
                          mention per line, copied exactly from the question, and nothing else."
            .to_string();
        let retry = self.completer.complete(&self.request(vec![
            ChatMessage::user(&prompt),
            ChatMessage::assistant(&first.content),
            ChatMessage::user(corrective),
        ]))?;
        let mentions = parse(&retry.content);
        if mentions.is_empty() {
            return Err(Error::UnparseableReply(
                "mention extraction produced no mentions after one reprompt".into(),
            ));
        }
        Ok(mentions)
    }

    fn filter_relations(
        &self,
        q: &Question,
        e: &EntityId,
        candidates: &[RelationCandidate],
        k: usize,
    ) -> Result<SelectorDecision> {
        require_width(k, "relation")?;
        if candidates.is_empty() {
            return Ok(SelectorDecision::empty());
        }
        let offered = relation_key_set(candidates);
        let rendered: Vec<(String, String, f64)> = candidates
            .iter()
            .map(|c| {
                (
                    c.key(),
                    c.display(),
                    lexical_score(&q.text, &c.relation.display_label()),
                )
            })
            .collect();
        let build = |block: &str| -> Result<String> {
            let bindings: std::collections::BTreeMap<&str, String> = [
                ("question", q.text.clone()),
                ("entity", e.display_label()),
                ("candidates", block.to_string()),
                ("k", k.to_string()),
            ]
            .into_iter()
            .collect();
            crate::template::render(&self.prompts.relation_filter, &bindings)
        };
        match self.scored_via_llm(&build, rendered, &offered) {
            Ok((scored, notes)) => Ok(SelectorDecision::normalized(
                scored,
                &offered,
                k,
                Self::join_notes(notes),
            )),
            Err(Error::UnparseableReply(notes)) => {
                let mut d = LexicalSelector.filter_relations(q, e, candidates, k)?;
                d.rationale = Some(notes);
                Ok(d)
            }
            Err(e) => Err(e),
        }
    }

    fn filter_entities(
        &self,
        q: &Question,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
        candidates: &[EntityCandidate],
        i: usize,
    ) -> Result<SelectorDecision> {
        require_width(i, "entity")?;
        if candidates.is_empty() {
            return Ok(SelectorDecision::empty());
        }
        let offered = entity_key_set(candidates);
        let rendered: Vec<(String, String, f64)> = candidates
            .iter()
            .map(|c| {
                let mut desc = c.object.display_label();
                if c.object.is_literal() {
                    desc.push_str(" [literal]");
                }
                (c.key(), desc, lexical_score(&q.text, &c.object.display_label()))
            })
            .collect();
        let build = |block: &str| -> Result<String> {
            let bindings: std::collections::BTreeMap<&str, String> = [
                ("question", q.text.clone()),
                ("entity", e.display_label()),
                (
                    "relation",
                    format!(
                        "{} ({})",
                        r.display_label(),
                        match dir {
                            Direction::Outgoing => "outgoing",
                            Direction::Incoming => "incoming",
                        }
                    ),
                ),
                ("candidates", block.to_string()),
                ("k", i.to_string()),
            ]
            .into_iter()
            .collect();
            crate::template::render(&self.prompts.entity_filter, &bindings)
        };
        match self.scored_via_llm(&build, rendered, &offered) {
            Ok((scored, notes)) => Ok(SelectorDecision::normalized(
                scored,
                &offered,
                i,
                Self::join_notes(notes),
            )),
            Err(Error::UnparseableReply(notes)) => {
                let mut d = LexicalSelector.filter_entities(q, e, r, dir, candidates, i)?;
                d.rationale = Some(notes);
                Ok(d)
            }
            Err(e) => Err(e),
        }
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}
