//! Chat model access: the request/response types, the completer trait, and a
//! scripted implementation for offline runs.
//!
//! Every call site goes through [`ChatCompleter`], so the pipeline never
//! cares whether replies come from a live endpoint ([`gateway::HttpGateway`]),
//! a canned script ([`ScriptedCompleter`]), or a test double.

pub mod gateway;
pub mod stub;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One turn of a chat conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// A complete, self-contained completion request. Everything that can change
/// the reply is in here, which is what makes caching by content sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::Config("completion request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

fn default_finish_reason() -> String {
    "stop".into()
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    #[serde(default = "default_finish_reason")]
    pub finish_reason: String,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// HTTP attempts the call actually took, 1 when no retry fired. Replays
    /// from cache report the original call's count.
    #[serde(default = "one")]
    pub attempts: u32,
}

/// Content hash identifying a request. Two requests share a key exactly when
/// every reply-relevant field matches.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn of(req: &LlmRequest) -> Self {
        // Field order is fixed by the struct declaration, so the JSON bytes
        // are a canonical encoding.
        let bytes = serde_json::to_vec(req).expect("request serializes");
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        CacheKey(hex)
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Anything that can answer a chat request.
pub trait ChatCompleter: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse>;
    fn name(&self) -> &'static str;
}

/// One canned rule: fires when every `requires` string appears somewhere in
/// the concatenated user-role content of the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub requires: Vec<String>,
    pub reply: String,
}

/// Deterministic completer driven by substring rules; first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedCompleter {
    pub rules: Vec<ScriptRule>,
    pub default_reply: String,
}

impl ScriptedCompleter {
    pub fn new(rules: Vec<ScriptRule>, default_reply: impl Into<String>) -> Self {
        ScriptedCompleter {
            rules,
            default_reply: default_reply.into(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("script file {}: {e}", path.display()))
        })
    }
}

fn approx_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

impl ChatCompleter for ScriptedCompleter {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse> {
        let haystack: String = req
            .messages
            .iter()
            .filter(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let reply = self
            .rules
            .iter()
            .find(|r| r.requires.iter().all(|s| haystack.contains(s.as_str())))
            .map(|r| r.reply.clone())
            .unwrap_or_else(|| self.default_reply.clone());
        Ok(LlmResponse {
            usage: TokenUsage {
                prompt_tokens: req.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
                completion_tokens: approx_tokens(&reply),
            },
            content: reply,
            finish_reason: "stop".into(),
            model: Some(req.model.clone()),
            attempts: 1,
        })
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> LlmRequest {
        LlmRequest {
            model: "test-model".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(user)],
            temperature: 0.0,
            seed: Some(7),
            max_tokens: 64,
        }
    }

    #[test]
    fn cache_key_is_deterministic() {
        assert_eq!(CacheKey::of(&req("hello")), CacheKey::of(&req("hello")));
    }

    #[test]
    fn cache_key_tracks_every_field() {
        let base = req("hello");
        let mut other = base.clone();
        other.model = "other".into();
        assert_ne!(CacheKey::of(&base), CacheKey::of(&other));

        let mut other = base.clone();
        other.temperature = 0.5;
        assert_ne!(CacheKey::of(&base), CacheKey::of(&other));

        let mut other = base.clone();
        other.seed = Some(8);
        assert_ne!(CacheKey::of(&base), CacheKey::of(&other));

        let mut other = base.clone();
        other.seed = None;
        assert_ne!(CacheKey::of(&base), CacheKey::of(&other));

        let mut other = base.clone();
        other.max_tokens = 65;
        assert_ne!(CacheKey::of(&base), CacheKey::of(&other));

        assert_ne!(CacheKey::of(&base), CacheKey::of(&req("hellp")));
    }

    #[test]
    fn scripted_first_match_wins() {
        let s = ScriptedCompleter::new(
            vec![
                ScriptRule {
                    requires: vec!["alpha".into(), "beta".into()],
                    reply: "both".into(),
                },
                ScriptRule {
                    requires: vec!["alpha".into()],
                    reply: "just alpha".into(),
                },
            ],
            "none",
        );
        assert_eq!(s.complete(&req("alpha beta")).unwrap().content, "both");
        assert_eq!(s.complete(&req("alpha x")).unwrap().content, "just alpha");
        assert_eq!(s.complete(&req("gamma")).unwrap().content, "none");
    }

    #[test]
    fn scripted_ignores_system_content() {
        let s = ScriptedCompleter::new(
            vec![ScriptRule {
                requires: vec!["sys".into()],
                reply: "matched system".into(),
            }],
            "default",
        );
        // "sys" only appears in the system message, so the rule must not fire.
        assert_eq!(s.complete(&req("user text")).unwrap().content, "default");
    }

    #[test]
    fn scripted_counts_tokens() {
        let s = ScriptedCompleter::new(vec![], "two words");
        let resp = s.complete(&req("three word prompt")).unwrap();
        assert_eq!(resp.usage.completion_tokens, 2);
        assert_eq!(resp.usage.prompt_tokens, 4); // "sys" + 3 user words
        assert_eq!(resp.finish_reason, "stop");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_request() -> impl Strategy<Value = LlmRequest> {
            (
                "[a-z]{1,8}",
                proptest::collection::vec(
                    ("(user|system|assistant)", "[ -~]{0,40}"),
                    1..4,
                ),
                0.0f64..=2.0,
                proptest::option::of(proptest::num::u64::ANY),
                1u32..4096,
            )
                .prop_map(|(model, msgs, temperature, seed, max_tokens)| LlmRequest {
                    model,
                    messages: msgs
                        .into_iter()
                        .map(|(role, content)| ChatMessage { role, content })
                        .collect(),
                    temperature,
                    seed,
                    max_tokens,
                })
        }

        proptest! {
            // Flipping any single field must change the key; an untouched
            // clone must not.
            #[test]
            fn key_tracks_single_field_flips(req in arb_request(), which in 0usize..5) {
                let mut other = req.clone();
                match which {
                    0 => other.model.push('x'),
                    1 => other.messages[0].content.push('x'),
                    2 => {
                        other.temperature = if other.temperature > 1.0 {
                            other.temperature - 0.5
                        } else {
                            other.temperature + 0.5
                        }
                    }
                    3 => {
                        other.seed = match other.seed {
                            Some(s) => Some(s.wrapping_add(1)),
                            None => Some(0),
                        }
                    }
                    _ => other.max_tokens += 1,
                }
                prop_assert_ne!(CacheKey::of(&req), CacheKey::of(&other));
                prop_assert_eq!(CacheKey::of(&req), CacheKey::of(&req.clone()));
            }
        }
    }
}
