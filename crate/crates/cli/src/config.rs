//! Layered run configuration: built-in defaults, then the config file,
//! then environment variables, then command-line flags, last writer wins.
//!
//! Input paths written in the config file (graph, plan, script, templates)
//! resolve relative to the file's own directory so a config bundle can be
//! invoked from anywhere; output and cache directories resolve relative to
//! the working directory because they belong to the invocation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use kgbeam_core::error::{Error, Result};
use kgbeam_core::kg::sparql::KgEndpointConfig;
use kgbeam_core::linker::{EmbeddingLinkConfig, HttpEmbedderConfig};
use kgbeam_core::llm::gateway::LlmGatewayConfig;
use kgbeam_core::prompts::PromptPaths;
use kgbeam_core::reasoner::ReasonerConfig;
use kgbeam_core::retrieval::ExpansionConfig;
use kgbeam_core::scoring::{EntityMass, RootWeighting, ScoringConfig};
use kgbeam_core::selector::LlmSelectorConfig;

pub const ENV_KG_BASE_URL: &str = "KGBEAM_KG_BASE_URL";
pub const ENV_LLM_BASE_URL: &str = "KGBEAM_LLM_BASE_URL";
pub const ENV_CACHE_DIR: &str = "KGBEAM_CACHE_DIR";

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub base_url: Option<String>,
    pub entity_iri_prefix: Option<String>,
    pub relation_iri_prefix: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub max_candidates: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub use_post: Option<bool>,
    pub auth_token_env: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorSection {
    pub kind: Option<String>,
    pub plan: Option<PathBuf>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub prompt_budget: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub kind: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub script: Option<PathBuf>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkingSection {
    pub method: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub threshold: Option<f64>,
    pub top_m: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    pub relation_width: Option<usize>,
    pub entity_width: Option<usize>,
    pub iterations: Option<usize>,
    pub expansion_temperature: Option<f64>,
    pub max_frontier: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    pub entity_mass: Option<EntityMass>,
    pub root_weighting: Option<RootWeighting>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningSection {
    pub model: Option<String>,
    pub max_tokens: Option<u32>,
    pub exemplar_file: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub selector: SelectorSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub linking: LinkingSection,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub reasoning: ReasoningSection,
    #[serde(default)]
    pub templates: PromptPaths,
    #[serde(default)]
    pub run: RunSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }
}

/// Values from command-line flags; `None` means the flag was not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub backend: Option<String>,
    pub graph: Option<PathBuf>,
    pub kg_base_url: Option<String>,
    pub selector: Option<String>,
    pub plan: Option<PathBuf>,
    pub llm: Option<String>,
    pub llm_base_url: Option<String>,
    pub script: Option<PathBuf>,
    pub relation_width: Option<usize>,
    pub entity_width: Option<usize>,
    pub iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

/// The fully merged configuration a command runs with.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub backend_kind: String,
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub kg: KgEndpointConfig,
    pub selector_kind: String,
    pub plan: Option<PathBuf>,
    pub selector_llm: LlmSelectorConfig,
    pub llm_kind: String,
    pub script: Option<PathBuf>,
    pub gateway: LlmGatewayConfig,
    pub link_method: String,
    pub embedding: EmbeddingLinkConfig,
    pub embedder_http: HttpEmbedderConfig,
    pub expansion: ExpansionConfig,
    pub scoring: ScoringConfig,
    pub reasoner: ReasonerConfig,
    pub templates: PromptPaths,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub parallelism: Option<usize>,
}

fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if let Some(v) = value {
        *slot = Some(v);
    }
}

/// Merge defaults, file, environment, and flags into one [`Resolved`].
/// `base_dir` is the config file's directory; input paths from the file are
/// rebased onto it. `env` supplies environment lookups so tests can inject.
pub fn resolve(
    file: FileConfig,
    base_dir: &Path,
    env: &dyn Fn(&str) -> Option<String>,
    ov: &Overrides,
) -> Result<Resolved> {
    let mut kg = KgEndpointConfig::default();
    set(&mut kg.base_url, file.backend.base_url);
    set(&mut kg.timeout_secs, file.backend.timeout_secs);
    set(&mut kg.max_retries, file.backend.max_retries);
    set(&mut kg.backoff_ms, file.backend.backoff_ms);
    set(&mut kg.max_candidates, file.backend.max_candidates);
    set(&mut kg.max_in_flight, file.backend.max_in_flight);
    set(&mut kg.use_post, file.backend.use_post);
    set_opt(&mut kg.entity_iri_prefix, file.backend.entity_iri_prefix);
    set_opt(&mut kg.relation_iri_prefix, file.backend.relation_iri_prefix);
    set_opt(&mut kg.auth_token_env, file.backend.auth_token_env);
    set(&mut kg.base_url, env(ENV_KG_BASE_URL));
    set(&mut kg.base_url, ov.kg_base_url.clone());

    let mut selector_llm = LlmSelectorConfig::default();
    set(&mut selector_llm.model, file.selector.model);
    set(&mut selector_llm.temperature, file.selector.temperature);
    set(&mut selector_llm.max_tokens, file.selector.max_tokens);
    set(&mut selector_llm.prompt_budget, file.selector.prompt_budget);

    let mut gateway = LlmGatewayConfig::default();
    set(&mut gateway.base_url, file.llm.base_url);
    set_opt(&mut gateway.api_key_env, file.llm.api_key_env);
    set(&mut gateway.timeout_secs, file.llm.timeout_secs);
    set(&mut gateway.max_retries, file.llm.max_retries);
    set(&mut gateway.backoff_ms, file.llm.backoff_ms);
    set(&mut gateway.max_in_flight, file.llm.max_in_flight);
    set(&mut gateway.base_url, env(ENV_LLM_BASE_URL));
    set(&mut gateway.base_url, ov.llm_base_url.clone());

    let mut embedding = EmbeddingLinkConfig::default();
    set(&mut embedding.threshold, file.linking.threshold);
    set(&mut embedding.top_m, file.linking.top_m);
    let mut embedder_http = HttpEmbedderConfig {
        base_url: String::new(),
        api_key_env: String::new(),
        model: String::new(),
        timeout_secs: 60,
        max_in_flight: 4,
    };
    set(&mut embedder_http.base_url, file.linking.base_url);
    set(&mut embedder_http.api_key_env, file.linking.api_key_env);
    set(&mut embedder_http.model, file.linking.model);
    set(&mut embedder_http.timeout_secs, file.linking.timeout_secs);
    set(&mut embedder_http.max_in_flight, file.linking.max_in_flight);

    let mut expansion = ExpansionConfig::default();
    set(&mut expansion.relation_width, file.expansion.relation_width);
    set(&mut expansion.entity_width, file.expansion.entity_width);
    set(&mut expansion.iterations, file.expansion.iterations);
    set(
        &mut expansion.expansion_temperature,
        file.expansion.expansion_temperature,
    );
    set(&mut expansion.max_frontier, file.expansion.max_frontier);
    set(&mut expansion.relation_width, ov.relation_width);
    set(&mut expansion.entity_width, ov.entity_width);
    set(&mut expansion.iterations, ov.iterations);

    let mut scoring = ScoringConfig::default();
    set(&mut scoring.entity_mass, file.scoring.entity_mass);
    set(&mut scoring.root_weighting, file.scoring.root_weighting);

    let mut reasoner = ReasonerConfig::default();
    set(&mut reasoner.model, file.reasoning.model);
    set(&mut reasoner.max_tokens, file.reasoning.max_tokens);
    set_opt(
        &mut reasoner.exemplar_file,
        file.reasoning.exemplar_file.map(|p| rebase(base_dir, p)),
    );

    let mut templates = file.templates;
    for slot in [
        &mut templates.extraction,
        &mut templates.relation_filter,
        &mut templates.entity_filter,
        &mut templates.reasoning,
    ] {
        if let Some(p) = slot.take() {
            *slot = Some(rebase(base_dir, p));
        }
    }

    let mut output_dir = PathBuf::from("runs");
    set(&mut output_dir, file.run.output_dir);
    set(&mut output_dir, ov.output_dir.clone());

    let mut cache_dir = PathBuf::from(".kgbeam-cache");
    set(&mut cache_dir, file.run.cache_dir);
    set(&mut cache_dir, env(ENV_CACHE_DIR).map(PathBuf::from));
    set(&mut cache_dir, ov.cache_dir.clone());

    let mut backend_kind = "memory".to_string();
    set(&mut backend_kind, file.backend.kind);
    set(&mut backend_kind, ov.backend.clone());

    let mut selector_kind = "lexical".to_string();
    set(&mut selector_kind, file.selector.kind);
    set(&mut selector_kind, ov.selector.clone());

    let mut llm_kind = "http".to_string();
    set(&mut llm_kind, file.llm.kind);
    set(&mut llm_kind, ov.llm.clone());

    let mut link_method = "exact".to_string();
    set(&mut link_method, file.linking.method);

    let mut graph = file.backend.graph.map(|p| rebase(base_dir, p));
    set_opt(&mut graph, ov.graph.clone());
    let labels = file.backend.labels.map(|p| rebase(base_dir, p));
    let mut plan = file.selector.plan.map(|p| rebase(base_dir, p));
    set_opt(&mut plan, ov.plan.clone());
    let mut script = file.llm.script.map(|p| rebase(base_dir, p));
    set_opt(&mut script, ov.script.clone());

    let mut parallelism = file.run.parallelism;
    set_opt(&mut parallelism, ov.parallelism);
    let mut seed = file.run.seed;
    set_opt(&mut seed, ov.seed);
    selector_llm.seed = seed;
    reasoner.seed = seed;

    let resolved = Resolved {
        backend_kind,
        graph,
        labels,
        kg,
        selector_kind,
        plan,
        selector_llm,
        llm_kind,
        script,
        gateway,
        link_method,
        embedding,
        embedder_http,
        expansion,
        scoring,
        reasoner,
        templates,
        output_dir,
        cache_dir,
        parallelism,
    };
    resolved.validate()?;
    Ok(resolved)
}

impl Resolved {
    /// Structural checks that need no file access beyond existence of
    /// referenced inputs. Component construction performs the rest.
    fn validate(&self) -> Result<()> {
        match self.backend_kind.as_str() {
            "memory" | "sparql" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown backend kind {other:?}; expected \"memory\" or \"sparql\""
                )))
            }
        }
        match self.selector_kind.as_str() {
            "lexical" | "oracle" | "llm" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown selector kind {other:?}; expected \"lexical\", \"oracle\", or \"llm\""
                )))
            }
        }
        match self.llm_kind.as_str() {
            "http" | "script" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown llm kind {other:?}; expected \"http\" or \"script\""
                )))
            }
        }
        match self.link_method.as_str() {
            "exact" | "embedding" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown linking method {other:?}; expected \"exact\" or \"embedding\""
                )))
            }
        }
        self.expansion.validate()?;
        for (what, path) in [
            ("backend graph", &self.graph),
            ("backend labels", &self.labels),
            ("selector plan", &self.plan),
            ("llm script", &self.script),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "{what} file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}
