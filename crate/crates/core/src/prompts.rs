//! The shipped prompt texts and their file-override mechanism.
//!
//! Defaults are compiled in; any of the four can be replaced by pointing the
//! corresponding config path at a UTF-8 file with the same placeholders.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template;

pub const DEFAULT_EXTRACTION: &str = include_str!("../prompts/extraction.txt");
pub const DEFAULT_RELATION_FILTER: &str = include_str!("../prompts/relation_filter.txt");
pub const DEFAULT_ENTITY_FILTER: &str = include_str!("../prompts/entity_filter.txt");
pub const DEFAULT_REASONING: &str = include_str!("../prompts/reasoning.txt");

/// Optional per-template override paths, as they appear in config files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_filter: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_filter: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<PathBuf>,
}

/// The four prompt texts a run actually uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub extraction: String,
    pub relation_filter: String,
    pub entity_filter: String,
    pub reasoning: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            extraction: DEFAULT_EXTRACTION.to_string(),
            relation_filter: DEFAULT_RELATION_FILTER.to_string(),
            entity_filter: DEFAULT_ENTITY_FILTER.to_string(),
            reasoning: DEFAULT_REASONING.to_string(),
        }
    }
}

fn read_template(path: &Path, required: &[&str]) -> Result<String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let names = template::placeholders(&text);
    for want in required {
        if !names.iter().any(|n| n == want) {
            return Err(Error::Config(format!(
                "template {} lacks the {{{want}}} placeholder",
                path.display()
            )));
        }
    }
    Ok(text)
}

impl PromptSet {
    /// Defaults with any configured file overrides applied. Overrides are
    /// checked for the placeholders each template must carry.
    pub fn load(paths: &PromptPaths) -> Result<Self> {
        let mut set = PromptSet::default();
        if let Some(p) = &paths.extraction {
            set.extraction = read_template(p, &["question"])?;
        }
        if let Some(p) = &paths.relation_filter {
            set.relation_filter = read_template(p, &["question", "entity", "candidates", "k"])?;
        }
        if let Some(p) = &paths.entity_filter {
            set.entity_filter =
                read_template(p, &["question", "entity", "relation", "candidates", "k"])?;
        }
        if let Some(p) = &paths.reasoning {
            set.reasoning = read_template(p, &["question", "triplets"])?;
        }
        Ok(set)
    }
}
