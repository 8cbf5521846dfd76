//! Command-line front end for the retrieval and reasoning engine.
//!
//! Subcommands: `ask` answers one question end to end, `retrieve` stops
//! after subgraph construction, `eval` scores a JSONL dataset, `sweep` runs
//! an eval grid over beam widths and iteration counts, `cache` inspects or
//! clears the LLM disk cache.
//!
//! Exit codes: 0 success, 2 configuration or input errors, 3 when no
//! question mention links to the graph, 4 for pipeline failures. Errors are
//! printed to stdout as a single JSON object.

mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use config::{resolve, FileConfig, Overrides, Resolved};
use kgbeam_core::error::{Error, Result};
use kgbeam_core::eval::{
    load_dataset, render_sweep_svg, run_eval, run_sweep, sample_records, sanitize_file_stem,
};
use kgbeam_core::graph::InMemoryGraph;
use kgbeam_core::kg::sparql::SparqlBackend;
use kgbeam_core::kg::{InMemoryBackend, KgBackend};
use kgbeam_core::linker::{EmbedderPort, EmbeddingLinkConfig, HttpEmbedder};
use kgbeam_core::llm::gateway::{clear_disk_cache, disk_cache_usage, HttpGateway};
use kgbeam_core::llm::{ChatCompleter, LlmRequest, LlmResponse, ScriptedCompleter};
use kgbeam_core::pipeline::Pipeline;
use kgbeam_core::prompts::PromptSet;
use kgbeam_core::reasoner::ReasonerConfig;
use kgbeam_core::retrieval::ExpansionConfig;
use kgbeam_core::scoring::{path_breakdown, ScoringConfig};
use kgbeam_core::selector::{LexicalSelector, LlmSelector, OracleSelector, Question, Selector};

#[derive(Parser)]
#[command(name = "kgbeam", version, about = "Graph-guided question answering")]
struct Cli {
    /// Config file (TOML). Input paths inside it resolve relative to its
    /// directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Knowledge backend: "memory" or "sparql".
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Graph TSV for the memory backend.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// SPARQL endpoint URL (also KGBEAM_KG_BASE_URL).
    #[arg(long, global = true)]
    kg_base_url: Option<String>,

    /// Beam selector: "lexical", "oracle", or "llm".
    #[arg(long, global = true)]
    selector: Option<String>,
    /// Gold-path plan file for the oracle selector.
    #[arg(long, global = true)]
    plan: Option<PathBuf>,

    /// Completion provider: "http" or "script".
    #[arg(long, global = true)]
    llm: Option<String>,
    /// Chat-completions endpoint URL (also KGBEAM_LLM_BASE_URL).
    #[arg(long, global = true)]
    llm_base_url: Option<String>,
    /// Canned-replies file for the script provider.
    #[arg(long, global = true)]
    script: Option<PathBuf>,

    /// Relations kept per expanded entity.
    #[arg(long, global = true)]
    relation_width: Option<usize>,
    /// Entities kept per kept relation.
    #[arg(long, global = true)]
    entity_width: Option<usize>,
    /// Expansion waves to run.
    #[arg(long, global = true)]
    iterations: Option<usize>,

    /// Directory for reports, traces, and plots.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// LLM disk cache directory (also KGBEAM_CACHE_DIR).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Worker threads for dataset evaluation.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Seed forwarded to model calls that accept one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and write its retrieval trace.
    Ask {
        question: String,
        /// Question id used in the trace filename.
        #[arg(long, default_value = "q")]
        id: String,
    },
    /// Build the subgraph for one question without reasoning over it.
    Retrieve {
        question: String,
        #[arg(long, default_value = "q")]
        id: String,
        /// Include the per-path score breakdown.
        #[arg(long)]
        scores: bool,
    },
    /// Score a JSONL dataset and write report.json.
    Eval {
        dataset: PathBuf,
        /// Evaluate only a seeded random sample of this size.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
    },
    /// Run an eval per (width, iterations, seed) cell and write sweep.csv.
    Sweep {
        dataset: PathBuf,
        /// Relation widths: "1..3" (inclusive) or "1,2,3".
        #[arg(long, default_value = "1..3")]
        widths: String,
        /// Iteration counts, same syntax as --widths.
        #[arg(long, default_value = "1..3")]
        iters: String,
        /// Model seeds, same syntax as --widths.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Also render sweep.svg (accuracy vs width, one line per
        /// iteration count).
        #[arg(long)]
        plot: bool,
    },
    /// Inspect or clear the LLM disk cache.
    Cache {
        #[command(subcommand)]
        op: CacheOp,
    },
}

#[derive(Subcommand)]
enum CacheOp {
    /// Print entry count and total size as JSON.
    Stats,
    /// Delete all cache entries.
    Clear,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend.clone(),
            graph: self.graph.clone(),
            kg_base_url: self.kg_base_url.clone(),
            selector: self.selector.clone(),
            plan: self.plan.clone(),
            llm: self.llm.clone(),
            llm_base_url: self.llm_base_url.clone(),
            script: self.script.clone(),
            relation_width: self.relation_width,
            entity_width: self.entity_width,
            iterations: self.iterations,
            output_dir: self.output_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            parallelism: self.parallelism,
            seed: self.seed,
        }
    }
}

/// Placeholder for commands that never call a model; fails loudly if one
/// sneaks a completion in anyway.
struct NoCompleter;

impl ChatCompleter for NoCompleter {
    fn complete(&self, _req: &LlmRequest) -> Result<LlmResponse> {
        Err(Error::Config(
            "this command was configured without a language model".into(),
        ))
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

/// Owns the trait objects a [`Pipeline`] borrows.
struct Components {
    backend: Box<dyn KgBackend>,
    selector: Box<dyn Selector>,
    completer: Arc<dyn ChatCompleter>,
    embedder: Option<Box<dyn EmbedderPort>>,
    prompts: PromptSet,
    embedding: EmbeddingLinkConfig,
    expansion: ExpansionConfig,
    scoring: ScoringConfig,
    reasoner: ReasonerConfig,
}

impl Components {
    fn build(res: &Resolved, need_completer: bool) -> Result<Self> {
        let prompts = PromptSet::load(&res.templates)?;

        let backend: Box<dyn KgBackend> = match res.backend_kind.as_str() {
            "memory" => {
                let graph_path = res.graph.as_ref().ok_or_else(|| {
                    Error::Config(
                        "memory backend needs a graph file (set [backend].graph or --graph)"
                            .into(),
                    )
                })?;
                let graph = match &res.labels {
                    Some(labels) => InMemoryGraph::load_tsv_with_labels(graph_path, labels)?,
                    None => InMemoryGraph::load_tsv(graph_path)?,
                };
                Box::new(InMemoryBackend::new(graph))
            }
            "sparql" => {
                if res.kg.base_url.is_empty() {
                    return Err(Error::Config(
                        "sparql backend needs an endpoint (set [backend].base_url, \
                         KGBEAM_KG_BASE_URL, or --kg-base-url)"
                            .into(),
                    ));
                }
                let be = SparqlBackend::new(res.kg.clone())?;
                let be = match &res.labels {
                    Some(labels) => be.with_label_dump(labels)?,
                    None => be,
                };
                Box::new(be)
            }
            other => unreachable!("backend kind {other:?} passed validation"),
        };

        // The llm selector needs a completer even when the command itself
        // never reasons.
        let completer: Arc<dyn ChatCompleter> = if need_completer
            || res.selector_kind == "llm"
        {
            match res.llm_kind.as_str() {
                "script" => {
                    let path = res.script.as_ref().ok_or_else(|| {
                        Error::Config(
                            "script provider needs a replies file (set [llm].script or --script)"
                                .into(),
                        )
                    })?;
                    Arc::new(ScriptedCompleter::from_json_file(path)?)
                }
                "http" => {
                    if res.gateway.base_url.is_empty() {
                        return Err(Error::Config(
                            "http provider needs an endpoint (set [llm].base_url, \
                             KGBEAM_LLM_BASE_URL, or --llm-base-url)"
                                .into(),
                        ));
                    }
                    let mut cfg = res.gateway.clone();
                    cfg.cache_dir = Some(res.cache_dir.clone());
                    Arc::new(HttpGateway::new(cfg)?)
                }
                other => unreachable!("llm kind {other:?} passed validation"),
            }
        } else {
            Arc::new(NoCompleter)
        };

        let selector: Box<dyn Selector> = match res.selector_kind.as_str() {
            "lexical" => Box::new(LexicalSelector),
            "oracle" => {
                let path = res.plan.as_ref().ok_or_else(|| {
                    Error::Config(
                        "oracle selector needs a plan file (set [selector].plan or --plan)".into(),
                    )
                })?;
                Box::new(OracleSelector::from_json_file(path)?)
            }
            "llm" => Box::new(LlmSelector::new(
                Arc::clone(&completer),
                res.selector_llm.clone(),
                prompts.clone(),
            )),
            other => unreachable!("selector kind {other:?} passed validation"),
        };

        let embedder: Option<Box<dyn EmbedderPort>> = match res.link_method.as_str() {
            "exact" => None,
            "embedding" => {
                if res.embedder_http.base_url.is_empty() || res.embedder_http.model.is_empty() {
                    return Err(Error::Config(
                        "embedding linker needs [linking].base_url and [linking].model".into(),
                    ));
                }
                Some(Box::new(HttpEmbedder::new(res.embedder_http.clone())?))
            }
            other => unreachable!("linking method {other:?} passed validation"),
        };

        Ok(Components {
            backend,
            selector,
            completer,
            embedder,
            prompts,
            embedding: res.embedding.clone(),
            expansion: res.expansion.clone(),
            scoring: res.scoring,
            reasoner: res.reasoner.clone(),
        })
    }

    fn pipeline(&self) -> Pipeline<'_> {
        let mut p = Pipeline::new(
            self.backend.as_ref(),
            self.selector.as_ref(),
            self.completer.as_ref(),
            &self.prompts,
        );
        p.embedder = self.embedder.as_deref();
        p.embedding = self.embedding.clone();
        p.expansion = self.expansion.clone();
        p.scoring = self.scoring;
        p.reasoner = self.reasoner.clone();
        p
    }
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Pipeline(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_output_dir(res: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&res.output_dir)
        .map_err(|e| Error::io(res.output_dir.display().to_string(), e))
}

fn cmd_ask(res: &Resolved, id: &str, question: &str) -> Result<()> {
    let comps = Components::build(res, true)?;
    let pipeline = comps.pipeline();
    let q = Question::new(id, question)?;
    let run = pipeline.answer(&q)?;
    ensure_output_dir(res)?;
    let trace_path = res
        .output_dir
        .join(format!("trace-{}.json", sanitize_file_stem(id)));
    write_json_pretty(&trace_path, &run.trace)?;
    let text = serde_json::to_string_pretty(&run.answer)
        .map_err(|e| Error::Pipeline(format!("serializing answer: {e}")))?;
    println!("{text}");
    eprintln!("trace written to {}", trace_path.display());
    Ok(())
}

fn cmd_retrieve(res: &Resolved, id: &str, question: &str, scores: bool) -> Result<()> {
    let comps = Components::build(res, false)?;
    let pipeline = comps.pipeline();
    let q = Question::new(id, question)?;
    let (subgraph, trace) = pipeline.retrieve(&q)?;
    ensure_output_dir(res)?;
    let trace_path = res
        .output_dir
        .join(format!("trace-{}.json", sanitize_file_stem(id)));
    write_json_pretty(&trace_path, &trace)?;
    let mut doc = serde_json::json!({ "subgraph": subgraph, "trace": trace });
    if scores {
        doc["paths"] = serde_json::to_value(path_breakdown(&trace))
            .map_err(|e| Error::Pipeline(format!("serializing path breakdown: {e}")))?;
    }
    println!("{doc:#}");
    eprintln!("trace written to {}", trace_path.display());
    Ok(())
}

fn cmd_eval(res: &Resolved, dataset: &Path, sample: Option<usize>, sample_seed: u64) -> Result<()> {
    let comps = Components::build(res, true)?;
    let pipeline = comps.pipeline();
    let mut records = load_dataset(dataset)?;
    if let Some(n) = sample {
        records = sample_records(records, n, sample_seed);
    }
    let report = run_eval(&pipeline, &records, Some(&res.output_dir))?;
    let (correct, total) = report.hits_fraction();
    println!("hits@1 {:.3} ({correct}/{total})", report.hits_at_1);
    eprintln!(
        "report written to {}",
        res.output_dir.join("report.json").display()
    );
    Ok(())
}

/// Accepts "2", "1,2,3", or an inclusive range "1..3" / "1..=3".
fn parse_u64_list(spec: &str, what: &str) -> Result<Vec<u64>> {
    let bad = |detail: &str| Error::Config(format!("{what} spec {spec:?}: {detail}"));
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: u64 = a.trim().parse().map_err(|_| bad("bad range start"))?;
        let hi: u64 = b.trim().parse().map_err(|_| bad("bad range end"))?;
        if lo > hi {
            return Err(bad("range start exceeds end"));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad("bad number")))
        .collect()
}

fn parse_usize_list(spec: &str, what: &str) -> Result<Vec<usize>> {
    Ok(parse_u64_list(spec, what)?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    res: &Resolved,
    dataset: &Path,
    widths: &str,
    iters: &str,
    seeds: &str,
    plot: bool,
) -> Result<()> {
    let widths = parse_usize_list(widths, "widths")?;
    let iters = parse_usize_list(iters, "iters")?;
    let seeds = parse_u64_list(seeds, "seeds")?;
    let comps = Components::build(res, true)?;
    let pipeline = comps.pipeline();
    let records = load_dataset(dataset)?;
    let grid = run_sweep(
        &pipeline,
        &records,
        &widths,
        &iters,
        &seeds,
        Some(&res.output_dir),
    )?;
    for cell in &grid.cells {
        println!(
            "K={} N={} seed={} hits@1 {:.3} ({}/{})",
            cell.relation_width,
            cell.iterations,
            cell.seed,
            cell.hits_at_1,
            cell.correct_count,
            cell.total
        );
    }
    if plot {
        let svg_path = res.output_dir.join("sweep.svg");
        std::fs::write(&svg_path, render_sweep_svg(&grid))
            .map_err(|e| Error::io(svg_path.display().to_string(), e))?;
        eprintln!("plot written to {}", svg_path.display());
    }
    eprintln!(
        "grid written to {}",
        res.output_dir.join("sweep.csv").display()
    );
    Ok(())
}

fn cmd_cache(res: &Resolved, op: &CacheOp) -> Result<()> {
    let dir = &res.cache_dir;
    let doc = match op {
        CacheOp::Stats => {
            let (files, bytes) = if dir.is_dir() {
                disk_cache_usage(dir)?
            } else {
                (0, 0)
            };
            serde_json::json!({
                "cache_dir": dir.display().to_string(),
                "files": files,
                "bytes": bytes,
            })
        }
        CacheOp::Clear => {
            let removed = if dir.is_dir() { clear_disk_cache(dir)? } else { 0 };
            serde_json::json!({
                "cache_dir": dir.display().to_string(),
                "removed": removed,
            })
        }
    };
    println!("{doc:#}");
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::MalformedLine { .. }
        | Error::MissingBinding { .. }
        | Error::Io { .. } => 2,
        Error::InitializationFailure(_) => 3,
        _ => 4,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        3 => "initialization_failure",
        _ => "pipeline",
    }
}

fn run(cli: &Cli) -> Result<()> {
    let (file, base_dir) = match &cli.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (FileConfig::load(p)?, base)
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    let env = |key: &str| std::env::var(key).ok().filter(|v| !v.is_empty());
    let res = resolve(file, &base_dir, &env, &cli.overrides())?;
    if let Some(n) = res.parallelism {
        // Ignore the error when a pool already exists; size is best-effort.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match &cli.command {
        Command::Ask { question, id } => cmd_ask(&res, id, question),
        Command::Retrieve {
            question,
            id,
            scores,
        } => cmd_retrieve(&res, id, question, *scores),
        Command::Eval {
            dataset,
            sample,
            sample_seed,
        } => cmd_eval(&res, dataset, *sample, *sample_seed),
        Command::Sweep {
            dataset,
            widths,
            iters,
            seeds,
            plot,
        } => cmd_sweep(&res, dataset, widths, iters, seeds, *plot),
        Command::Cache { op } => cmd_cache(&res, op),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init()
        .ok();
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let doc = serde_json::json!({
                "error": {
                    "kind": error_kind(&e),
                    "message": e.to_string(),
                    "exit_code": code,
                }
            });
            println!("{doc:#}");
            code
        }
    };
    std::process::exit(code);
}
