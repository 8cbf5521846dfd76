//! The answering phase: serialize the retrieved subgraph into triplets,
//! prompt a chat model to reason step by step, and parse its structured
//! reply.
//!
//! Replies follow a fixed three-field format: an `Answer:` line, an
//! `Output 1:` explanation, and an `Output 2:` reasoning path written as a
//! chain of parenthesized steps. The path is checked against the subgraph
//! step by step; steps the model added from its own knowledge are flagged,
//! never merged into the subgraph.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_label, TripleObject};
use crate::llm::{ChatCompleter, ChatMessage, LlmRequest};
use crate::prompts::PromptSet;
use crate::retrieval::KnowledgeSubgraph;
use crate::scoring::{combined_answer_score, SubgraphScore};
use crate::selector::Question;
use crate::template;

/// Fixed system message; the user half comes from the template file.
pub const SYSTEM_TEXT: &str = "You answer questions using the knowledge triplets provided by \
the user, combined with your own knowledge. Think step by step and reply only in the exact \
format the user requests.";

/// Sentinel triplet block for an empty subgraph.
pub const EMPTY_SUBGRAPH_SENTINEL: &str = "(no retrieved knowledge)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub model: String,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Optional few-shot exemplar text file, prepended to the user prompt.
    /// The shipped templates are zero-shot.
    pub exemplar_file: Option<PathBuf>,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            model: String::new(),
            max_tokens: 2048,
            seed: None,
            exemplar_file: None,
        }
    }
}

/// One unit of the model's reasoning path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    /// The unit as written by the model, parens and all.
    pub raw: String,
    /// Dash-split components: subject/relation/object for a full step,
    /// fewer for truncated units like a bare terminal node.
    pub parts: Vec<String>,
    /// Whether the step matches a subgraph triple. Partial units are never
    /// matched.
    pub in_subgraph: bool,
}

/// The parsed reasoning reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer_text: String,
    pub explanation: String,
    pub path: Vec<PathStep>,
    pub combined_score: f64,
}

fn render_triple_line(t: &crate::graph::Triple) -> String {
    format!(
        "({} - {} - {})",
        t.subject.display_label(),
        t.relation.display_label(),
        t.object.display_label()
    )
}

/// The triplet block: one line per subgraph triple in discovery order, or
/// the sentinel when the subgraph is empty.
pub fn render_triplets(g: &KnowledgeSubgraph) -> String {
    if g.is_empty() {
        return EMPTY_SUBGRAPH_SENTINEL.to_string();
    }
    g.triples()
        .map(render_triple_line)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Render the question and subgraph into the chat prompt.
pub fn build_reasoning_prompt(
    q: &Question,
    g: &KnowledgeSubgraph,
    template_text: &str,
) -> Result<ReasoningPrompt> {
    let bindings: std::collections::BTreeMap<&str, String> = [
        ("question", q.text.clone()),
        ("triplets", render_triplets(g)),
    ]
    .into_iter()
    .collect();
    Ok(ReasoningPrompt {
        system: SYSTEM_TEXT.to_string(),
        user: template::render(template_text, &bindings)?,
    })
}

/// Find `marker` and return the text after it, or None.
fn after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.find(marker).map(|i| &text[i + marker.len()..])
}

fn parse_path(chain: &str) -> Vec<PathStep> {
    chain
        .split("->")
        .map(|unit| {
            let trimmed = unit.trim().trim_end_matches('.').trim();
            (unit, trimmed)
        })
        .filter(|(_, trimmed)| !trimmed.is_empty())
        .map(|(_, trimmed)| {
            let inner = trimmed
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .unwrap_or(trimmed);
            let parts: Vec<String> = inner
                .splitn(3, '-')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect();
            PathStep {
                raw: trimmed.to_string(),
                parts,
                in_subgraph: false,
            }
        })
        .collect()
}

/// Parse a structured reply. The answer is the text after the first
/// `Answer:` up to the next line break or output marker; the explanation is
/// the `Output 1:` body; the path is the `Output 2:` chain split on `->`.
/// Only a missing `Answer:` is a parse failure.
pub fn parse_answer(reply: &str) -> Result<Answer> {
    let after_answer = after(reply, "Answer:")
        .ok_or_else(|| Error::UnparseableReply("reply has no Answer: line".into()))?;
    let mut cut = after_answer.len();
    for stop in ["\n", "Output 1:", "Output 2:"] {
        if let Some(i) = after_answer.find(stop) {
            cut = cut.min(i);
        }
    }
    let answer_text = after_answer[..cut].trim().to_string();
    if answer_text.is_empty() {
        return Err(Error::UnparseableReply("Answer: line is empty".into()));
    }

    let explanation = match after(reply, "Output 1:") {
        Some(rest) => match rest.find("Output 2:") {
            Some(i) => rest[..i].trim().to_string(),
            None => rest.trim().to_string(),
        },
        None => String::new(),
    };
    let path = after(reply, "Output 2:").map(parse_path).unwrap_or_default();

    Ok(Answer {
        answer_text,
        explanation,
        path,
        combined_score: 0.0,
    })
}

/// Names a triple component can answer to: label and id for entities, text
/// for literals.
fn component_names(g: &KnowledgeSubgraph) -> Vec<[BTreeSet<String>; 3]> {
    g.triples()
        .map(|t| {
            let mut subject = BTreeSet::new();
            subject.insert(normalize_label(&t.subject.display_label()));
            subject.insert(normalize_label(&t.subject.id));
            let mut relation = BTreeSet::new();
            relation.insert(normalize_label(&t.relation.display_label()));
            relation.insert(normalize_label(&t.relation.id));
            let mut object = BTreeSet::new();
            match &t.object {
                TripleObject::Entity(e) => {
                    object.insert(normalize_label(&e.display_label()));
                    object.insert(normalize_label(&e.id));
                }
                TripleObject::Literal(l) => {
                    object.insert(normalize_label(&l.text));
                }
            }
            [subject, relation, object]
        })
        .collect()
}

/// Flag each full path step that names a subgraph triple, tolerating
/// label-vs-id and whitespace differences; partial steps stay unflagged.
pub fn flag_path_against_subgraph(path: &mut [PathStep], g: &KnowledgeSubgraph) {
    let names = component_names(g);
    for step in path.iter_mut() {
        if step.parts.len() != 3 {
            step.in_subgraph = false;
            continue;
        }
        let wanted: Vec<String> = step.parts.iter().map(|p| normalize_label(p)).collect();
        step.in_subgraph = names.iter().any(|[s, r, o]| {
            s.contains(&wanted[0]) && r.contains(&wanted[1]) && o.contains(&wanted[2])
        });
    }
}

/// Ask the reasoning model about `q` over `g` and parse its reply. Runs at
/// temperature 0 with one corrective reprompt on parse failure; the final
/// score multiplies a unit reasoning confidence into the subgraph total.
pub fn reason(
    completer: &dyn ChatCompleter,
    cfg: &ReasonerConfig,
    q: &Question,
    g: &KnowledgeSubgraph,
    sg: &SubgraphScore,
    prompts: &PromptSet,
) -> Result<Answer> {
    let prompt = build_reasoning_prompt(q, g, &prompts.reasoning)?;
    let mut user = prompt.user.clone();
    if let Some(path) = &cfg.exemplar_file {
        let exemplars = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        user = format!("{exemplars}\n\n{user}");
    }

    let request = |messages: Vec<ChatMessage>| LlmRequest {
        model: cfg.model.clone(),
        messages,
        temperature: 0.0,
        seed: cfg.seed,
        max_tokens: cfg.max_tokens,
    };

    let base = vec![ChatMessage::system(&prompt.system), ChatMessage::user(&user)];
    let first = completer.complete(&request(base.clone()))?;
    let parsed = match parse_answer(&first.content) {
        Ok(a) => a,
        Err(first_err) => {
            let corrective = format!(
                "Your previous reply could not be parsed ({first_err}). Reply again in exactly \
                 the requested format: an \"Answer:\" line, an \"Output 1:\" explanation, and \
                 an \"Output 2:\" reasoning path."
            );
            let mut retry_messages = base;
            retry_messages.push(ChatMessage::assistant(&first.content));
            retry_messages.push(ChatMessage::user(corrective));
            let retry = completer.complete(&request(retry_messages))?;
            parse_answer(&retry.content)?
        }
    };

    let mut answer = parsed;
    flag_path_against_subgraph(&mut answer.path, g);
    answer.combined_score = combined_answer_score(1.0, sg);
    Ok(answer)
}

#[cfg(test)]
pub(crate) const Q1_REPLY: &str = "Answer:29 Output 1: Based on the given knowledge triplets and my \
knowledge, the second oldest dog in the world is Bluey. Bluey was born on June 7, 1910, and \
died on November 14, 1939. Therefore, Bluey lived for 29 years. Output 2:(Bluey-date of \
birth-1910-06-07T00:00:00Z)->(Bluey-date of death-1939-11-14T00:00:00Z)->(Bluey-lived for \
29 years).";

#[cfg(test)]
pub(crate) const Q2_REPLY: &str = "Answer: People Power Party Output 1: Based on the given knowledge \
triplets and my knowledge, Yoon Suk Yeol is the head of government in South Korea and a \
member of the People Power Party. Therefore, the ruling party of the government now in South \
Korea is the People Power Party. Output 2: (South Korea-head of government-Yoon Suk \
Yeol)->(Yoon Suk Yeol-member of political party-People Power Party)->(People Power Party).";
