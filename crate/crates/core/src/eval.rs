//! Batch evaluation: JSONL datasets, exact-match scoring, deterministic
//! run reports, and width/iteration sweeps.
//!
//! Reports are built to be byte-identical across repeated runs of the same
//! configuration, so wall-clock timings live in a sidecar file rather than
//! in the report itself. The module also ships a synthetic planted-path
//! suite whose per-cell sweep outcomes are exactly predictable from the
//! construction, which is what makes width and iteration effects testable
//! without a live model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, InMemoryGraph, RelationId, Triple, TripleObject};
use crate::kg::{EntityCandidate, RelationCandidate};
use crate::llm::{ScriptRule, ScriptedCompleter};
use crate::pipeline::Pipeline;
use crate::reasoner::reason;
use crate::retrieval::ExpansionConfig;
use crate::scoring::ScoringConfig;
use crate::selector::{require_width, Question, Selector, SelectorDecision};

/// Version tag for the answer-normalization rules, recorded in every report
/// so scores from different rule revisions are never compared silently.
pub const ANSWER_NORMALIZATION_VERSION: &str = "answers.norm.v1";

/// One dataset question: an id, the text, and every alias that counts as a
/// correct answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

impl DatasetRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question text is empty".into());
        }
        if self.answers.is_empty() {
            return Err("answers list is empty".into());
        }
        if self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err("answers list contains an empty alias".into());
        }
        Ok(())
    }
}

/// Parse a JSONL dataset: one object per non-blank line with keys
/// `id`/`question`/`answers`. Errors carry the 1-based line number.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: origin.to_string(),
            line: idx + 1,
            message,
        };
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        rec.validate().map_err(malformed)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Keep `count` records chosen by a seeded sampler, preserving file order.
/// A count at or above the dataset size keeps everything.
pub fn sample_records(records: Vec<DatasetRecord>, count: usize, seed: u64) -> Vec<DatasetRecord> {
    if count >= records.len() {
        return records;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, records.len(), count);
    let mut keep = vec![false; records.len()];
    for i in chosen {
        keep[i] = true;
    }
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

fn canonical_number(s: &str) -> Option<String> {
    let x: f64 = s.parse().ok()?;
    if !x.is_finite() {
        return None;
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        Some(format!("{}", x as i64))
    } else {
        Some(format!("{x}"))
    }
}

/// The pinned exact-match normalization: casefold, strip punctuation off
/// both ends, collapse whitespace, drop one leading English article when
/// more text follows, and canonicalize purely numeric answers so integer
/// formatting differences ("29" vs "29.0") never count as a miss.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let mut tokens: Vec<&str> = stripped.split_whitespace().collect();
    if tokens.len() > 1 && matches!(tokens[0], "a" | "an" | "the") {
        tokens.remove(0);
    }
    let joined = tokens.join(" ");
    canonical_number(&joined).unwrap_or(joined)
}

/// Exact match after normalization against any gold alias.
pub fn hits_at_1(prediction: &str, gold: &[String]) -> bool {
    let p = normalize_answer(prediction);
    gold.iter().any(|a| normalize_answer(a) == p)
}

/// One question's result inside a report. `elapsed` never serializes; the
/// timings sidecar carries it instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub id: String,
    pub question: String,
    pub prediction: String,
    pub correct: bool,
    pub subgraph_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub elapsed: Option<Duration>,
}

/// Aggregate of one evaluation run. `hits_at_1` is `correct_count / total`
/// computed from the integer pair, which stays available for exact
/// arithmetic; `empty` flags the vacuous 0/0 case, reported as 0.0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub normalization: String,
    pub backend: String,
    pub selector: String,
    pub completer: String,
    pub expansion: ExpansionConfig,
    pub scoring: ScoringConfig,
    pub outcomes: Vec<QuestionOutcome>,
    pub correct_count: usize,
    pub total: usize,
    pub empty: bool,
    pub hits_at_1: f64,
}

impl RunReport {
    pub fn hits_fraction(&self) -> (usize, usize) {
        (self.correct_count, self.total)
    }
}

/// Replace anything outside `[A-Za-z0-9._-]` so an id is safe in a filename.
pub fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn failed_outcome(rec: &DatasetRecord, err: &Error, started: Instant) -> QuestionOutcome {
    QuestionOutcome {
        id: rec.id.clone(),
        question: rec.question.clone(),
        prediction: String::new(),
        correct: false,
        subgraph_size: 0,
        trace_file: None,
        error: Some(err.to_string()),
        elapsed: Some(started.elapsed()),
    }
}

fn evaluate_one(
    pipeline: &Pipeline,
    idx: usize,
    rec: &DatasetRecord,
    out_dir: Option<&Path>,
) -> Result<QuestionOutcome> {
    let started = Instant::now();
    let mut q = match Question::new(&rec.id, &rec.question) {
        Ok(q) => q,
        Err(e) => return Ok(failed_outcome(rec, &e, started)),
    };
    q.gold_answers = Some(rec.answers.clone());

    let (subgraph, trace) = match pipeline.retrieve(&q) {
        Ok(pair) => pair,
        Err(e) => return Ok(failed_outcome(rec, &e, started)),
    };

    let trace_file = match out_dir {
        Some(dir) => {
            let name = format!("trace-{idx:04}-{}.json", sanitize_file_stem(&rec.id));
            let path = dir.join(&name);
            let mut json = serde_json::to_string_pretty(&trace)
                .map_err(|e| Error::Pipeline(format!("trace for {}: {e}", rec.id)))?;
            json.push('\n');
            std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
            Some(name)
        }
        None => None,
    };

    let scores = match &trace.scores {
        Some(s) => s.clone(),
        None => crate::scoring::subgraph_score(&trace, &pipeline.scoring),
    };
    let mut outcome = match reason(
        pipeline.completer,
        &pipeline.reasoner,
        &q,
        &subgraph,
        &scores,
        pipeline.prompts,
    ) {
        Ok(ans) => QuestionOutcome {
            id: rec.id.clone(),
            question: rec.question.clone(),
            correct: hits_at_1(&ans.answer_text, &rec.answers),
            prediction: ans.answer_text,
            subgraph_size: subgraph.entries().len(),
            trace_file: None,
            error: None,
            elapsed: None,
        },
        Err(e) => {
            let mut o = failed_outcome(rec, &e, started);
            o.subgraph_size = subgraph.entries().len();
            o
        }
    };
    outcome.trace_file = trace_file;
    outcome.elapsed = Some(started.elapsed());
    Ok(outcome)
}

/// Evaluate every record through the pipeline. Per-question failures are
/// recorded as incorrect with an error note and never abort the run; only
/// environment-level problems (an unwritable output directory) do. Results
/// keep dataset order regardless of completion order, and when `out_dir` is
/// given the report, every trace, and a timings sidecar are written there.
pub fn run_eval(
    pipeline: &Pipeline,
    dataset: &[DatasetRecord],
    out_dir: Option<&Path>,
) -> Result<RunReport> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let outcomes: Vec<QuestionOutcome> = dataset
        .par_iter()
        .enumerate()
        .map(|(idx, rec)| evaluate_one(pipeline, idx, rec, out_dir))
        .collect::<Result<Vec<_>>>()?;

    let correct_count = outcomes.iter().filter(|o| o.correct).count();
    let total = outcomes.len();
    let report = RunReport {
        normalization: ANSWER_NORMALIZATION_VERSION.to_string(),
        backend: pipeline.backend.name().to_string(),
        selector: pipeline.selector.name().to_string(),
        completer: pipeline.completer.name().to_string(),
        expansion: pipeline.expansion.clone(),
        scoring: pipeline.scoring,
        outcomes,
        correct_count,
        total,
        empty: total == 0,
        hits_at_1: if total == 0 {
            0.0
        } else {
            correct_count as f64 / total as f64
        },
    };

    if let Some(dir) = out_dir {
        let path = dir.join("report.json");
        let mut json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Pipeline(format!("report: {e}")))?;
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;

        let mut csv = String::from("id,elapsed_ms\n");
        for o in &report.outcomes {
            let ms = o
                .elapsed
                .map(|d| d.as_millis().to_string())
                .unwrap_or_default();
            csv.push_str(&format!("{},{ms}\n", sanitize_file_stem(&o.id)));
        }
        let tpath = dir.join("timings.csv");
        std::fs::write(&tpath, csv).map_err(|e| Error::io(tpath.display().to_string(), e))?;
    }
    Ok(report)
}

/// One sweep cell: a (relation width, iteration count, seed) triple and the
/// accuracy measured there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub relation_width: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hits_at_1: f64,
    pub correct_count: usize,
    pub total: usize,
}

/// All cells of a sweep, in (width, iterations, seed) order, covering the
/// requested ranges exactly once.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, relation_width: usize, iterations: usize, seed: u64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| {
            c.relation_width == relation_width && c.iterations == iterations && c.seed == seed
        })
    }

    /// Mean accuracy over every seed at one (width, iterations) point.
    pub fn mean_accuracy(&self, relation_width: usize, iterations: usize) -> Option<f64> {
        let scores: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.relation_width == relation_width && c.iterations == iterations)
            .map(|c| c.hits_at_1)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    /// CSV with one row per cell: K,N,seed,hits_at_1,n_questions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,N,seed,hits_at_1,n_questions\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.relation_width, c.iterations, c.seed, c.hits_at_1, c.total
            ));
        }
        out
    }
}

/// Run one evaluation per (width, iterations, seed) cell, varying nothing
/// else. The seed lands in the reasoner request (deterministic completers
/// ignore it). With an output directory, each cell writes under its own
/// subdirectory and the grid CSV lands at the top.
pub fn run_sweep(
    base: &Pipeline,
    dataset: &[DatasetRecord],
    widths: &[usize],
    iterations: &[usize],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<SweepGrid> {
    if widths.is_empty() || iterations.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one width, one iteration count, and one seed".into(),
        ));
    }
    let mut grid = SweepGrid::default();
    for &k in widths {
        for &n in iterations {
            for &seed in seeds {
                let mut cell_pipeline = base.clone();
                cell_pipeline.expansion.relation_width = k;
                cell_pipeline.expansion.iterations = n;
                cell_pipeline.reasoner.seed = Some(seed);
                let cell_dir: Option<PathBuf> =
                    out_dir.map(|d| d.join(format!("cell-k{k}-n{n}-s{seed}")));
                let report = run_eval(&cell_pipeline, dataset, cell_dir.as_deref())?;
                grid.cells.push(SweepCell {
                    relation_width: k,
                    iterations: n,
                    seed,
                    hits_at_1: report.hits_at_1,
                    correct_count: report.correct_count,
                    total: report.total,
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("sweep.csv");
        std::fs::write(&path, grid.to_csv())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(grid)
}

const SWEEP_COLORS: &[&str] = &["#1b6ca8", "#d1495b", "#2e933c", "#8662c7", "#c77f24"];

/// Render the sweep as a standalone SVG line chart: mean accuracy over
/// seeds on the y axis, relation width on the x axis, one line per
/// iteration count. Deterministic for a given grid.
pub fn render_sweep_svg(grid: &SweepGrid) -> String {
    let widths: Vec<usize> = grid
        .cells
        .iter()
        .map(|c| c.relation_width)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let iters: Vec<usize> = grid
        .cells
        .iter()
        .map(|c| c.iterations)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (56.0, 140.0, 28.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_at = |i: usize| {
        if widths.len() <= 1 {
            left + pw / 2.0
        } else {
            left + pw * i as f64 / (widths.len() - 1) as f64
        }
    };
    let y_at = |acc: f64| top + (1.0 - acc) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"18\" font-size=\"14\">hits@1 by relation width</text>\n"
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_at(tick);
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{tick}</text>\n",
            left + pw,
            left - 6.0,
            y + 4.0
        ));
    }
    for (i, k) in widths.iter().enumerate() {
        let x = x_at(i);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">K={k}</text>\n",
            top + ph + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">relation width</text>\n",
        left + pw / 2.0,
        h - 12.0
    ));
    for (li, n) in iters.iter().enumerate() {
        let color = SWEEP_COLORS[li % SWEEP_COLORS.len()];
        let points: Vec<String> = widths
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| {
                grid.mean_accuracy(k, *n)
                    .map(|acc| format!("{:.1},{:.1}", x_at(i), y_at(acc)))
            })
            .collect();
        if points.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                points.join(" ")
            ));
        }
        for p in &points {
            let (x, y) = p.split_once(',').unwrap();
            svg.push_str(&format!(
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = top + 16.0 * li as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.1}\" y=\"{:.1}\">N={n}</text>\n",
            left + pw + 12.0,
            left + pw + 34.0,
            left + pw + 40.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Selector driven by a fixed relation score table keyed by directional
/// candidate key ("out:rel" or "in:rel"): relations rank by their table
/// score with unlisted ones at zero, and entities all get uniform mass.
/// Deterministic, so the effect of the width cap is exactly the table
/// order. Keys are directional because an entity's incoming copy of a
/// relation would otherwise inherit the outgoing score and steal a slot.
#[derive(Debug, Clone, Default)]
pub struct RankedSelector {
    pub mentions: Vec<String>,
    pub relation_scores: BTreeMap<String, f64>,
}

impl Selector for RankedSelector {
    fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>> {
        if self.mentions.is_empty() {
            return Err(Error::Selector(format!(
                "no mentions configured for question {}",
                q.id
            )));
        }
        Ok(self.mentions.clone())
    }

    fn filter_relations(
        &self,
        _q: &Question,
        _e: &EntityId,
        candidates: &[RelationCandidate],
        k: usize,
    ) -> Result<SelectorDecision> {
        require_width(k, "relation")?;
        let offered: BTreeSet<String> = candidates.iter().map(|c| c.key()).collect();
        let raw: Vec<(String, f64)> = candidates
            .iter()
            .map(|c| {
                let key = c.key();
                let score = self.relation_scores.get(&key).copied().unwrap_or(0.0);
                (key, score)
            })
            .collect();
        Ok(SelectorDecision::normalized(
            raw,
            &offered,
            k,
            Some("fixed ranking table".into()),
        ))
    }

    fn filter_entities(
        &self,
        _q: &Question,
        _e: &EntityId,
        _r: &RelationId,
        _dir: Direction,
        candidates: &[EntityCandidate],
        i: usize,
    ) -> Result<SelectorDecision> {
        require_width(i, "entity")?;
        let offered: BTreeSet<String> = candidates.iter().map(|c| c.key()).collect();
        let raw: Vec<(String, f64)> = candidates.iter().map(|c| (c.key(), 1.0)).collect();
        Ok(SelectorDecision::normalized(
            raw,
            &offered,
            i,
            Some("uniform over reached entities".into()),
        ))
    }

    fn name(&self) -> &'static str {
        "ranked-table"
    }
}

/// Scripted reasoner for synthetic suites: replies with a record's first
/// gold alias when both the question text and that alias appear in the
/// prompt. The alias only reaches the prompt through retrieved triplets, so
/// correctness tracks retrieval exactly.
pub fn gold_echo_completer(records: &[DatasetRecord]) -> ScriptedCompleter {
    let rules = records
        .iter()
        .filter(|r| !r.answers.is_empty())
        .map(|r| ScriptRule {
            requires: vec![r.question.clone(), r.answers[0].clone()],
            reply: format!("Answer: {}", r.answers[0]),
        })
        .collect();
    ScriptedCompleter::new(rules, "Answer: unknown")
}

/// Parameters of one planted-path task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    /// Hops from the start entity to the goal.
    pub path_len: usize,
    /// Distractor relations offered alongside the gold hop at every chain
    /// entity; each leads to a dead-end leaf.
    pub branching: usize,
    /// 0-based rank of the gold hop in the relation score table at every
    /// decision point. Rank r means r distractors outscore it.
    pub gold_rank: usize,
}

/// A generated planted-path task: the graph, the question, and the score
/// table that fixes the gold hop's rank. By construction the goal is
/// retrieved iff the width keeps at least `gold_rank + 1` relations and the
/// iteration budget covers `path_len` hops.
#[derive(Debug, Clone)]
pub struct PlantedCase {
    pub graph: InMemoryGraph,
    pub record: DatasetRecord,
    pub relation_scores: BTreeMap<String, f64>,
    pub start_label: String,
    pub goal_label: String,
}

pub fn planted_case(spec: &PlantedSpec) -> Result<PlantedCase> {
    if spec.path_len == 0 {
        return Err(Error::Config("planted path needs at least one hop".into()));
    }
    if spec.gold_rank > spec.branching {
        return Err(Error::Config(format!(
            "gold rank {} needs at least that many distractors, got {}",
            spec.gold_rank, spec.branching
        )));
    }
    let start_label = "probe start".to_string();
    let goal_label = "PT-9000".to_string();
    let stage = |i: usize| -> EntityId {
        if i == 0 {
            EntityId::with_label("p_start", &start_label)
        } else if i == spec.path_len {
            EntityId::with_label("p_goal", &goal_label)
        } else {
            EntityId::with_label(format!("p_s{i}"), format!("probe stage {i}"))
        }
    };

    let mut triples = Vec::new();
    let mut relation_scores = BTreeMap::new();
    let rank_score = |rank: usize| 1.0 / (1.0 + rank as f64);
    for i in 0..spec.path_len {
        let hop = format!("hop{i}");
        relation_scores.insert(format!("out:{hop}"), rank_score(spec.gold_rank));
        triples.push(Triple::new(
            stage(i),
            RelationId::new(&hop),
            TripleObject::Entity(stage(i + 1)),
        ));
        for j in 0..spec.branching {
            let rel = format!("noise{i}x{j}");
            let rank = if j < spec.gold_rank { j } else { j + 1 };
            relation_scores.insert(format!("out:{rel}"), rank_score(rank));
            triples.push(Triple::new(
                stage(i),
                RelationId::new(&rel),
                TripleObject::entity(format!("p_off{i}x{j}")),
            ));
        }
    }

    Ok(PlantedCase {
        graph: InMemoryGraph::from_triples(triples),
        record: DatasetRecord {
            id: "planted".into(),
            question: "Where does the marked chain end?".into(),
            answers: vec![goal_label.clone()],
        },
        relation_scores,
        start_label,
        goal_label,
    })
}

impl PlantedCase {
    /// The selector that realizes this case's planted ranking.
    pub fn selector(&self) -> RankedSelector {
        RankedSelector {
            mentions: vec![self.start_label.clone()],
            relation_scores: self.relation_scores.clone(),
        }
    }
}
