//! Iterated beam search over the knowledge graph.
//!
//! Retrieval runs a fixed number of expansion waves over a frontier of
//! entities. In each wave, every frontier entity is expanded: the backend
//! lists its relations, the selector keeps at most K of them, the backend
//! lists the objects behind each kept relation, and the selector keeps at
//! most I of those. Kept pairs become triples of the growing subgraph;
//! newly seen entities form the next frontier. Every decision is recorded
//! in a trace rich enough to replay the run and to score it afterwards.
//!
//! An entity is expanded at most once across the whole retrieval, tracked by
//! a global visited set, so two-cycles cannot bounce the frontier forever.
//! Literals terminate their branch. Entities selected in the last wave join
//! the subgraph but are never expanded.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, Triple, TripleObject};
use crate::kg::{EntityCandidate, KgBackend, RelationCandidate};
use crate::linker::TopicEntitySet;
use crate::selector::{Question, Selector, SelectorDecision};

/// Trace format version; bump on breaking schema changes.
pub const TRACE_SCHEMA_VERSION: &str = "kgbeam.trace.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// K: relations kept per expanded entity.
    pub relation_width: usize,
    /// I: entities kept per kept relation.
    pub entity_width: usize,
    /// N: expansion waves.
    pub iterations: usize,
    /// Sampling temperature handed to model-backed selectors.
    pub expansion_temperature: f64,
    /// Frontier size cap; overflow is truncated by descending score.
    pub max_frontier: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            relation_width: 3,
            entity_width: 10,
            iterations: 2,
            expansion_temperature: 0.4,
            max_frontier: 64,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.relation_width == 0 || self.entity_width == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "relation width, entity width, and iterations must all be at least 1".into(),
            ));
        }
        if self.max_frontier == 0 {
            return Err(Error::Config("max frontier must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.expansion_temperature) {
            return Err(Error::Config(format!(
                "expansion temperature {} outside [0, 2]",
                self.expansion_temperature
            )));
        }
        Ok(())
    }
}

/// Where a subgraph triple came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleProvenance {
    /// 0-based expansion wave.
    pub iteration: usize,
    /// Id of the entity whose expansion produced the triple.
    pub source_entity: String,
    pub relation_score: f64,
    pub entity_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphEntry {
    pub triple: Triple,
    pub provenance: TripleProvenance,
}

/// The retrieved subgraph: triples in discovery order, first provenance
/// wins, plus the topic entities retrieval started from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KnowledgeSubgraph {
    pub topics: TopicEntitySet,
    entries: Vec<SubgraphEntry>,
    #[serde(skip)]
    index: BTreeSet<Triple>,
}

impl KnowledgeSubgraph {
    pub fn new(topics: TopicEntitySet) -> Self {
        KnowledgeSubgraph {
            topics,
            entries: Vec::new(),
            index: BTreeSet::new(),
        }
    }

    /// Insert a triple; returns false (and keeps the first provenance) when
    /// it is already present.
    pub fn insert(&mut self, triple: Triple, provenance: TripleProvenance) -> bool {
        if !self.index.insert(triple.clone()) {
            return false;
        }
        self.entries.push(SubgraphEntry { triple, provenance });
        true
    }

    pub fn entries(&self) -> &[SubgraphEntry] {
        &self.entries
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.entries.iter().map(|e| &e.triple)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.index.contains(t)
    }

    /// True iff `key` is the id of a subject or entity object, or the exact
    /// text of a literal object, of some triple.
    pub fn contains_entity(&self, key: &str) -> bool {
        self.entries.iter().any(|e| {
            e.triple.subject.id == key
                || match &e.triple.object {
                    TripleObject::Entity(o) => o.id == key,
                    TripleObject::Literal(l) => l.text == key,
                }
        })
    }
}

impl<'de> Deserialize<'de> for KnowledgeSubgraph {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Wire {
            topics: TopicEntitySet,
            entries: Vec<SubgraphEntry>,
        }
        let wire = Wire::deserialize(deserializer)?;
        let index = wire.entries.iter().map(|e| e.triple.clone()).collect();
        Ok(KnowledgeSubgraph {
            topics: wire.topics,
            entries: wire.entries,
            index,
        })
    }
}

/// One kept relation and the entity selection made under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationExpansion {
    /// The relation candidate key (`out:...` / `in:...`).
    pub relation: String,
    pub offered: Vec<EntityCandidate>,
    pub decision: SelectorDecision,
}

/// Everything that happened when one entity was expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// 0-based expansion wave.
    pub iteration: usize,
    pub entity: EntityId,
    pub offered_relations: Vec<RelationCandidate>,
    pub relation_decision: SelectorDecision,
    pub expansions: Vec<RelationExpansion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// The full decision log of one retrieval. Serializations are canonical:
/// equal runs produce equal bytes, so wall-clock timing stays out of the
/// serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub schema_version: String,
    pub question: Question,
    pub config: ExpansionConfig,
    pub topics: Vec<EntityId>,
    pub records: Vec<DecisionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    /// Scores attached after the fact; see the scoring module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<crate::scoring::SubgraphScore>,
    #[serde(skip)]
    pub elapsed: Option<Duration>,
}

impl RetrievalTrace {
    /// The record for `entity` at wave `n`, if that entity was expanded then.
    pub fn record_at(&self, entity_id: &str, n: usize) -> Option<&DecisionRecord> {
        self.records
            .iter()
            .find(|r| r.iteration == n && r.entity.id == entity_id)
    }
}

/// What one entity expansion produced, before merging.
struct ExpansionOutcome {
    record: DecisionRecord,
    new_triples: Vec<(Triple, TripleProvenance)>,
    /// Selected non-literal neighbors with their selection scores.
    grown: Vec<(EntityId, f64)>,
    errors: Vec<String>,
}

fn expand_entity(
    backend: &dyn KgBackend,
    selector: &dyn Selector,
    q: &Question,
    e: &EntityId,
    n: usize,
    cfg: &ExpansionConfig,
) -> ExpansionOutcome {
    let mut out = ExpansionOutcome {
        record: DecisionRecord {
            iteration: n,
            entity: e.clone(),
            offered_relations: Vec::new(),
            relation_decision: SelectorDecision::empty(),
            expansions: Vec::new(),
            notes: Vec::new(),
        },
        new_triples: Vec::new(),
        grown: Vec::new(),
        errors: Vec::new(),
    };
    let record = &mut out.record;

    let offered: Vec<RelationCandidate> = match backend.search_relations(e) {
        Ok(set) => set.into_iter().collect(),
        Err(err) => {
            out.errors
                .push(format!("wave {n}, entity {}: relation search failed: {err}", e.id));
            record.notes.push("relation search failed".into());
            return out;
        }
    };
    record.offered_relations = offered.clone();
    if offered.is_empty() {
        return out;
    }

    record.relation_decision =
        match selector.filter_relations(q, e, &offered, cfg.relation_width) {
            Ok(d) => d,
            Err(err) => {
                out.errors
                    .push(format!("wave {n}, entity {}: relation selection failed: {err}", e.id));
                record.notes.push("relation selection failed".into());
                return out;
            }
        };

    let by_key: BTreeMap<String, &RelationCandidate> =
        offered.iter().map(|c| (c.key(), c)).collect();

    let choices = record.relation_decision.choices.clone();
    for choice in &choices {
        // The decision invariant guarantees the key is among the offered.
        let cand = by_key[&choice.id];
        let entities: Vec<EntityCandidate> =
            match backend.search_entities(e, &cand.relation, cand.direction) {
                Ok(set) => set.into_iter().collect(),
                Err(err) => {
                    out.errors.push(format!(
                        "wave {n}, entity {}, relation {}: entity search failed: {err}",
                        e.id, choice.id
                    ));
                    record.expansions.push(RelationExpansion {
                        relation: choice.id.clone(),
                        offered: Vec::new(),
                        decision: SelectorDecision::empty(),
                    });
                    continue;
                }
            };
        let decision = if entities.is_empty() {
            SelectorDecision::empty()
        } else {
            match selector.filter_entities(
                q,
                e,
                &cand.relation,
                cand.direction,
                &entities,
                cfg.entity_width,
            ) {
                Ok(d) => d,
                Err(err) => {
                    out.errors.push(format!(
                        "wave {n}, entity {}, relation {}: entity selection failed: {err}",
                        e.id, choice.id
                    ));
                    SelectorDecision::empty()
                }
            }
        };

        let by_obj: BTreeMap<String, &EntityCandidate> =
            entities.iter().map(|c| (c.key(), c)).collect();
        for picked in &decision.choices {
            let object = by_obj[&picked.id].object.clone();
            let triple = match cand.direction {
                crate::graph::Direction::Outgoing => {
                    Triple::new(e.clone(), cand.relation.clone(), object.clone())
                }
                crate::graph::Direction::Incoming => match &object {
                    TripleObject::Entity(subject) => Triple::new(
                        subject.clone(),
                        cand.relation.clone(),
                        TripleObject::Entity(e.clone()),
                    ),
                    TripleObject::Literal(_) => {
                        record
                            .notes
                            .push(format!("skipped literal subject under {}", choice.id));
                        continue;
                    }
                },
            };
            out.new_triples.push((
                triple,
                TripleProvenance {
                    iteration: n,
                    source_entity: e.id.clone(),
                    relation_score: choice.score,
                    entity_score: picked.score,
                },
            ));
            if let TripleObject::Entity(next) = object {
                out.grown.push((next, picked.score));
            }
        }
        record.expansions.push(RelationExpansion {
            relation: choice.id.clone(),
            offered: entities,
            decision,
        });
    }
    out
}

/// Run the beam search from `topics` and return the retrieved subgraph with
/// its decision trace. Backend and selector failures are recorded in the
/// trace and leave partial progress; only precondition violations error.
pub fn retrieve_subgraph(
    backend: &dyn KgBackend,
    selector: &dyn Selector,
    q: &Question,
    topics: &TopicEntitySet,
    cfg: &ExpansionConfig,
) -> Result<(KnowledgeSubgraph, RetrievalTrace)> {
    cfg.validate()?;
    if topics.is_empty() {
        return Err(Error::Pipeline(
            "retrieval requires at least one topic entity".into(),
        ));
    }
    let started = std::time::Instant::now();

    let mut g = KnowledgeSubgraph::new(topics.clone());
    let mut trace = RetrievalTrace {
        schema_version: TRACE_SCHEMA_VERSION.to_string(),
        question: q.clone(),
        config: cfg.clone(),
        topics: topics.entities.clone(),
        records: Vec::new(),
        truncations: Vec::new(),
        errors: Vec::new(),
        scores: None,
        elapsed: None,
    };

    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut queued = BTreeSet::new();
    let frontier: Vec<(EntityId, f64)> = topics
        .entities
        .iter()
        .filter(|e| queued.insert(e.id.clone()))
        .map(|e| (e.clone(), 1.0))
        .collect();
    let mut frontier = frontier;

    for n in 0..cfg.iterations {
        if frontier.is_empty() {
            break;
        }
        if frontier.len() > cfg.max_frontier {
            frontier.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
            let dropped: Vec<String> = frontier[cfg.max_frontier..]
                .iter()
                .map(|(e, _)| e.id.clone())
                .collect();
            frontier.truncate(cfg.max_frontier);
            trace.truncations.push(format!(
                "wave {n}: frontier truncated to {}; dropped {}",
                cfg.max_frontier,
                dropped.join(", ")
            ));
        }
        frontier.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        for (e, _) in &frontier {
            visited.insert(e.id.clone());
        }

        // Expansions are independent; merge order restores determinism.
        let outcomes: Vec<ExpansionOutcome> = frontier
            .par_iter()
            .map(|(e, _)| expand_entity(backend, selector, q, e, n, cfg))
            .collect();

        let mut next: BTreeMap<String, (EntityId, f64)> = BTreeMap::new();
        for outcome in outcomes {
            trace.records.push(outcome.record);
            trace.errors.extend(outcome.errors);
            for (triple, prov) in outcome.new_triples {
                g.insert(triple, prov);
            }
            for (entity, score) in outcome.grown {
                if visited.contains(&entity.id) {
                    continue;
                }
                next.entry(entity.id.clone())
                    .and_modify(|slot| slot.1 = slot.1.max(score))
                    .or_insert((entity, score));
            }
        }
        frontier = next.into_values().collect();
    }

    trace.elapsed = Some(started.elapsed());
    Ok((g, trace))
}

/// True iff `key` names a subject, entity object, or literal text in `g`.
pub fn subgraph_contains_entity(g: &KnowledgeSubgraph, key: &str) -> bool {
    g.contains_entity(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Direction;
    use crate::kg::InMemoryBackend;
    use crate::linker::link_exact;
    use crate::selector::{
        LexicalSelector, OraclePath, OraclePlan, OracleSelector, OracleStep,
    };

    fn toy_backend() -> InMemoryBackend {
        InMemoryBackend::new(crate::graph::toy_dogs_graph())
    }

    #[test]
    fn shipped_schema_names_the_current_trace_version() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/trace-schema.json");
        let text = std::fs::read_to_string(path).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["$id"], TRACE_SCHEMA_VERSION);
        assert_eq!(
            doc["properties"]["schema_version"]["const"],
            TRACE_SCHEMA_VERSION
        );
    }

    fn topics_for(backend: &InMemoryBackend, mentions: &[&str]) -> TopicEntitySet {
        let mentions: Vec<String> = mentions.iter().map(|m| m.to_string()).collect();
        link_exact(backend, &mentions).unwrap()
    }

    fn party_plan() -> OraclePlan {
        OraclePlan {
            question_id: Some("q2".into()),
            question_contains: None,
            paths: vec![OraclePath {
                start: "South_Korea".into(),
                steps: vec![
                    OracleStep {
                        relation: "head_of_government".into(),
                        direction: Direction::Outgoing,
                        target: TripleObject::entity("Yoon_Suk_Yeol"),
                    },
                    OracleStep {
                        relation: "member_of_political_party".into(),
                        direction: Direction::Outgoing,
                        target: TripleObject::entity("People_Power_Party"),
                    },
                ],
            }],
        }
    }

    fn lifespan_plan() -> OraclePlan {
        OraclePlan {
            question_id: Some("q1".into()),
            question_contains: None,
            paths: vec![
                OraclePath {
                    start: "Bluey".into(),
                    steps: vec![OracleStep {
                        relation: "date_of_birth".into(),
                        direction: Direction::Outgoing,
                        target: TripleObject::literal("1910-06-07T00:00:00Z"),
                    }],
                },
                OraclePath {
                    start: "Bluey".into(),
                    steps: vec![OracleStep {
                        relation: "date_of_death".into(),
                        direction: Direction::Outgoing,
                        target: TripleObject::literal("1939-11-14T00:00:00Z"),
                    }],
                },
            ],
        }
    }

    #[test]
    fn two_hop_chain_retrieved_exactly() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["South Korea"]);
        let q = Question::new("q2", "What is the ruling party of the government now in South Korea?")
            .unwrap();
        let sel = OracleSelector::new(vec![party_plan()]);
        let (g, trace) =
            retrieve_subgraph(&backend, &sel, &q, &topics, &ExpansionConfig::default()).unwrap();

        assert_eq!(g.len(), 2);
        let t: Vec<&Triple> = g.triples().collect();
        assert_eq!(t[0].subject.id, "South_Korea");
        assert_eq!(t[0].relation.id, "head_of_government");
        assert_eq!(t[0].object.key(), "Yoon_Suk_Yeol");
        assert_eq!(t[1].subject.id, "Yoon_Suk_Yeol");
        assert_eq!(t[1].relation.id, "member_of_political_party");
        assert_eq!(t[1].object.key(), "People_Power_Party");
        assert!(g.contains_entity("People_Power_Party"));
        assert!(trace.errors.is_empty());
    }

    #[test]
    fn one_wave_collects_both_date_literals() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["Bluey"]);
        let q = Question::new("q1", "How many years did the second oldest dog in the world live?")
            .unwrap();
        let sel = OracleSelector::new(vec![lifespan_plan()]);
        let cfg = ExpansionConfig {
            iterations: 1,
            ..ExpansionConfig::default()
        };
        let (g, trace) = retrieve_subgraph(&backend, &sel, &q, &topics, &cfg).unwrap();

        assert_eq!(g.len(), 2);
        assert!(g.contains_entity("1910-06-07T00:00:00Z"));
        assert!(g.contains_entity("1939-11-14T00:00:00Z"));
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].entity.id, "Bluey");
    }

    #[test]
    fn literals_never_reach_the_frontier() {
        // Same run with two waves: the literals end their branches, so the
        // second wave never happens.
        let backend = toy_backend();
        let topics = topics_for(&backend, &["Bluey"]);
        let q = Question::new("q1", "dog lifespan").unwrap();
        let sel = OracleSelector::new(vec![OraclePlan {
            question_id: Some("q1".into()),
            ..lifespan_plan()
        }]);
        let (_, trace) =
            retrieve_subgraph(&backend, &sel, &q, &topics, &ExpansionConfig::default()).unwrap();
        assert!(trace.records.iter().all(|r| r.iteration == 0));
    }

    #[test]
    fn isolated_topic_yields_empty_subgraph() {
        let backend = toy_backend();
        let mut topics = TopicEntitySet::default();
        topics.entities.push(EntityId::new("hermit"));
        let q = Question::new("q", "anything").unwrap();
        let (g, trace) =
            retrieve_subgraph(&backend, &LexicalSelector, &q, &topics, &ExpansionConfig::default())
                .unwrap();
        assert!(g.is_empty());
        assert_eq!(trace.records.len(), 1);
        assert!(trace.records[0].offered_relations.is_empty());
        assert!(trace.records[0].relation_decision.is_empty());
    }

    #[test]
    fn empty_topics_rejected() {
        let backend = toy_backend();
        let q = Question::new("q", "anything").unwrap();
        let err = retrieve_subgraph(
            &backend,
            &LexicalSelector,
            &q,
            &TopicEntitySet::default(),
            &ExpansionConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pipeline(_)));
    }

    #[test]
    fn incoming_selection_preserves_edge_direction() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["Yoon Suk Yeol"]);
        let q = Question::new("qin", "who leads").unwrap();
        let sel = OracleSelector::new(vec![OraclePlan {
            question_id: Some("qin".into()),
            question_contains: None,
            paths: vec![OraclePath {
                start: "Yoon_Suk_Yeol".into(),
                steps: vec![OracleStep {
                    relation: "head_of_government".into(),
                    direction: Direction::Incoming,
                    target: TripleObject::entity("South_Korea"),
                }],
            }],
        }]);
        let cfg = ExpansionConfig {
            iterations: 1,
            ..ExpansionConfig::default()
        };
        let (g, _) = retrieve_subgraph(&backend, &sel, &q, &topics, &cfg).unwrap();
        assert_eq!(g.len(), 1);
        let t = g.triples().next().unwrap();
        // Stored as the true edge, not an inverted synthetic one.
        assert_eq!(t.subject.id, "South_Korea");
        assert_eq!(t.object.key(), "Yoon_Suk_Yeol");
    }

    /// Selector with a fixed relation preference order, for planted-path
    /// tests: ranked[0] scores highest.
    struct RankedRelations {
        ranking: Vec<String>,
    }

    impl Selector for RankedRelations {
        fn extract_topic_mentions(&self, q: &Question) -> Result<Vec<String>> {
            Ok(vec![q.text.clone()])
        }

        fn filter_relations(
            &self,
            _q: &Question,
            _e: &EntityId,
            candidates: &[RelationCandidate],
            k: usize,
        ) -> Result<SelectorDecision> {
            let offered: BTreeSet<String> = candidates.iter().map(|c| c.key()).collect();
            let raw: Vec<(String, f64)> = candidates
                .iter()
                .map(|c| {
                    let key = c.key();
                    let rank = self.ranking.iter().position(|r| *r == key);
                    let score = match rank {
                        Some(i) => 1.0 / (i + 1) as f64,
                        None => 0.001,
                    };
                    (key, score)
                })
                .collect();
            Ok(SelectorDecision::normalized(raw, &offered, k, None))
        }

        fn filter_entities(
            &self,
            _q: &Question,
            _e: &EntityId,
            _r: &crate::graph::RelationId,
            _dir: Direction,
            candidates: &[EntityCandidate],
            i: usize,
        ) -> Result<SelectorDecision> {
            let offered: BTreeSet<String> = candidates.iter().map(|c| c.key()).collect();
            let raw: Vec<(String, f64)> =
                candidates.iter().map(|c| (c.key(), 1.0)).collect();
            Ok(SelectorDecision::normalized(raw, &offered, i, None))
        }

        fn name(&self) -> &'static str {
            "ranked"
        }
    }

    fn planted_two_hop() -> InMemoryBackend {
        let tsv = "\
start\tdistractor_rel\tdead_end
start\tgold_rel\tmid
mid\tgold_rel_2\tanswer
dead_end\tfiller_rel\tnowhere
";
        InMemoryBackend::new(
            crate::graph::InMemoryGraph::parse_tsv(tsv, "planted.tsv", &BTreeMap::new()).unwrap(),
        )
    }

    #[test]
    fn beam_width_one_misses_second_ranked_gold_path() {
        // The noisy selector ranks the distractor above the gold relation, so
        // K=1 follows only the distractor while K=2 keeps both.
        let backend = planted_two_hop();
        let sel = RankedRelations {
            ranking: vec!["out:distractor_rel".into(), "out:gold_rel".into()],
        };
        let mut topics = TopicEntitySet::default();
        topics.entities.push(backend.graph().entity("start").unwrap());
        let q = Question::new("qp", "find the answer").unwrap();

        let narrow = ExpansionConfig {
            relation_width: 1,
            ..ExpansionConfig::default()
        };
        let (g1, _) = retrieve_subgraph(&backend, &sel, &q, &topics, &narrow).unwrap();
        assert!(!g1.contains_entity("answer"));

        let wide = ExpansionConfig {
            relation_width: 2,
            ..ExpansionConfig::default()
        };
        let (g2, _) = retrieve_subgraph(&backend, &sel, &q, &topics, &wide).unwrap();
        assert!(g2.contains_entity("answer"));
    }

    #[test]
    fn cycles_do_not_reexpand() {
        let tsv = "a\tknows\tb\nb\tknows\ta\n";
        let backend = InMemoryBackend::new(
            crate::graph::InMemoryGraph::parse_tsv(tsv, "cycle.tsv", &BTreeMap::new()).unwrap(),
        );
        let mut topics = TopicEntitySet::default();
        topics.entities.push(EntityId::new("a"));
        let q = Question::new("qc", "who knows whom").unwrap();
        let cfg = ExpansionConfig {
            iterations: 4,
            ..ExpansionConfig::default()
        };
        let (g, trace) = retrieve_subgraph(&backend, &LexicalSelector, &q, &topics, &cfg).unwrap();

        let expanded: Vec<&str> = trace.records.iter().map(|r| r.entity.id.as_str()).collect();
        assert_eq!(expanded, vec!["a", "b"]);
        // Both edge directions of the 2-cycle are legitimate triples.
        assert!(g.len() <= 2);
    }

    #[test]
    fn frontier_truncation_is_recorded_and_bounds_next_wave() {
        let mut tsv = String::new();
        for i in 0..30 {
            tsv.push_str(&format!("hub\tspoke\tleaf{i:02}\n"));
        }
        let backend = InMemoryBackend::new(
            crate::graph::InMemoryGraph::parse_tsv(&tsv, "star.tsv", &BTreeMap::new()).unwrap(),
        );
        let mut topics = TopicEntitySet::default();
        topics.entities.push(EntityId::new("hub"));
        let q = Question::new("qs", "leaf").unwrap();
        let cfg = ExpansionConfig {
            relation_width: 1,
            entity_width: 30,
            iterations: 2,
            max_frontier: 5,
            ..ExpansionConfig::default()
        };
        let (_, trace) = retrieve_subgraph(&backend, &LexicalSelector, &q, &topics, &cfg).unwrap();

        assert_eq!(trace.truncations.len(), 1);
        assert!(trace.truncations[0].starts_with("wave 1"));
        let second_wave = trace.records.iter().filter(|r| r.iteration == 1).count();
        assert_eq!(second_wave, 5);
    }

    #[test]
    fn last_wave_selections_join_subgraph_unexpanded() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["South Korea"]);
        let q = Question::new("q2", "ruling party").unwrap();
        let sel = OracleSelector::new(vec![OraclePlan {
            question_id: Some("q2".into()),
            ..party_plan()
        }]);
        let cfg = ExpansionConfig {
            iterations: 1,
            ..ExpansionConfig::default()
        };
        let (g, trace) = retrieve_subgraph(&backend, &sel, &q, &topics, &cfg).unwrap();
        // Yoon was selected in the only wave: in the subgraph, not expanded.
        assert!(g.contains_entity("Yoon_Suk_Yeol"));
        assert!(!g.contains_entity("People_Power_Party"));
        assert!(trace.record_at("Yoon_Suk_Yeol", 1).is_none());
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn equal_runs_serialize_identically() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["South Korea"]);
        let q = Question::new("qd", "ruling party of South Korea").unwrap();
        let run = || {
            let (g, mut trace) = retrieve_subgraph(
                &backend,
                &LexicalSelector,
                &q,
                &topics,
                &ExpansionConfig::default(),
            )
            .unwrap();
            trace.elapsed = None;
            (
                serde_json::to_string(&g).unwrap(),
                serde_json::to_string(&trace).unwrap(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn subgraph_round_trips_through_json() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["South Korea"]);
        let q = Question::new("q2", "ruling party").unwrap();
        let sel = OracleSelector::new(vec![party_plan()]);
        let (g, _) =
            retrieve_subgraph(&backend, &sel, &q, &topics, &ExpansionConfig::default()).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: KnowledgeSubgraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        // The rebuilt index answers membership queries.
        assert!(back.contains(g.triples().next().unwrap()));
    }

    /// Selector that replays a recorded trace, proving the trace carries
    /// every decision needed to rebuild the subgraph.
    struct TraceReplayer {
        records: Vec<DecisionRecord>,
    }

    impl TraceReplayer {
        fn record_for(&self, e: &EntityId) -> Option<&DecisionRecord> {
            self.records.iter().find(|r| r.entity.id == e.id)
        }
    }

    impl Selector for TraceReplayer {
        fn extract_topic_mentions(&self, _q: &Question) -> Result<Vec<String>> {
            Err(Error::Selector("replayer has no mentions".into()))
        }

        fn filter_relations(
            &self,
            _q: &Question,
            e: &EntityId,
            _candidates: &[RelationCandidate],
            _k: usize,
        ) -> Result<SelectorDecision> {
            Ok(self
                .record_for(e)
                .map(|r| r.relation_decision.clone())
                .unwrap_or_default())
        }

        fn filter_entities(
            &self,
            _q: &Question,
            e: &EntityId,
            r: &crate::graph::RelationId,
            dir: Direction,
            _candidates: &[EntityCandidate],
            _i: usize,
        ) -> Result<SelectorDecision> {
            let key = RelationCandidate::new(r.clone(), dir).key();
            Ok(self
                .record_for(e)
                .and_then(|rec| rec.expansions.iter().find(|x| x.relation == key))
                .map(|x| x.decision.clone())
                .unwrap_or_default())
        }

        fn name(&self) -> &'static str {
            "replay"
        }
    }

    #[test]
    fn replaying_a_trace_reconstructs_the_subgraph() {
        let backend = toy_backend();
        let topics = topics_for(&backend, &["South Korea"]);
        let q = Question::new("q2", "ruling party of the government in South Korea").unwrap();
        let (g, trace) = retrieve_subgraph(
            &backend,
            &LexicalSelector,
            &q,
            &topics,
            &ExpansionConfig::default(),
        )
        .unwrap();

        let replayer = TraceReplayer {
            records: trace.records.clone(),
        };
        let (g2, _) =
            retrieve_subgraph(&backend, &replayer, &q, &topics, &trace.config).unwrap();
        assert_eq!(
            serde_json::to_string(&g).unwrap(),
            serde_json::to_string(&g2).unwrap()
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random small graphs as TSV text: entity-to-entity and
        /// entity-to-literal edges over compact id spaces.
        fn arb_graph_tsv() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                (0u8..12, 0u8..5, 0u8..14, proptest::bool::ANY),
                1..60,
            )
            .prop_map(|edges| {
                let mut out = String::new();
                for (s, r, o, literal) in edges {
                    if literal {
                        out.push_str(&format!("e{s}\tr{r}\t\"lit {o}\"\n"));
                    } else {
                        out.push_str(&format!("e{s}\tr{r}\te{o}\n"));
                    }
                }
                out
            })
        }

        fn backend_from(tsv: &str) -> InMemoryBackend {
            InMemoryBackend::new(
                crate::graph::InMemoryGraph::parse_tsv(tsv, "gen.tsv", &BTreeMap::new()).unwrap(),
            )
        }

        /// Undirected BFS distances from the topic over the full graph.
        fn distances(backend: &InMemoryBackend, from: &str) -> BTreeMap<String, usize> {
            let mut dist = BTreeMap::new();
            dist.insert(from.to_string(), 0usize);
            let mut queue = std::collections::VecDeque::from([from.to_string()]);
            while let Some(cur) = queue.pop_front() {
                let d = dist[&cur];
                let e = EntityId::new(&cur);
                for dir in [Direction::Outgoing, Direction::Incoming] {
                    for (_, obj) in backend.graph().neighbors(&e, dir) {
                        if let TripleObject::Entity(next) = obj {
                            if !dist.contains_key(&next.id) {
                                dist.insert(next.id.clone(), d + 1);
                                queue.push_back(next.id);
                            }
                        }
                    }
                }
            }
            dist
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn beam_invariants_hold(
                tsv in arb_graph_tsv(),
                k in 1usize..4,
                i in 1usize..5,
                n in 1usize..4,
            ) {
                let backend = backend_from(&tsv);
                let Some(start) = backend.graph().entity("e0") else {
                    return Ok(());
                };
                let mut topics = TopicEntitySet::default();
                topics.entities.push(start);
                let q = Question::new("qp", "r0 lit").unwrap();
                let cfg = ExpansionConfig {
                    relation_width: k,
                    entity_width: i,
                    iterations: n,
                    ..ExpansionConfig::default()
                };
                let (g, trace) =
                    retrieve_subgraph(&backend, &LexicalSelector, &q, &topics, &cfg).unwrap();

                // Beam caps.
                for rec in &trace.records {
                    prop_assert!(rec.relation_decision.choices.len() <= k);
                    for exp in &rec.expansions {
                        prop_assert!(exp.decision.choices.len() <= i);
                    }
                }
                // No re-expansion.
                let mut seen = BTreeSet::new();
                for rec in &trace.records {
                    prop_assert!(seen.insert(rec.entity.id.clone()),
                        "entity {} expanded twice", rec.entity.id);
                }
                // Subset soundness.
                for t in g.triples() {
                    prop_assert!(backend.graph().contains(t), "fabricated triple {t}");
                }
                // Reachability within n hops.
                let dist = distances(&backend, "e0");
                for t in g.triples() {
                    prop_assert!(dist.get(&t.subject.id).copied().unwrap_or(usize::MAX) <= n);
                    if let TripleObject::Entity(o) = &t.object {
                        prop_assert!(dist.get(&o.id).copied().unwrap_or(usize::MAX) <= n);
                    }
                }
            }

            // A planted gold path within the beam budget is always fully
            // recovered by the oracle, whatever noise surrounds it.
            #[test]
            fn oracle_recovers_planted_paths(
                tsv_noise in arb_graph_tsv(),
                len in 1usize..4,
            ) {
                let mut tsv = tsv_noise;
                for step in 0..len {
                    tsv.push_str(&format!("g{step}\tgr{step}\tg{next}\n", next = step + 1));
                }
                // Noise edges at the gold entities too.
                tsv.push_str("g0\tr0\te0\n");
                let backend = backend_from(&tsv);

                let plan = OraclePlan {
                    question_id: Some("qg".into()),
                    question_contains: None,
                    paths: vec![OraclePath {
                        start: "g0".into(),
                        steps: (0..len)
                            .map(|s| OracleStep {
                                relation: format!("gr{s}"),
                                direction: Direction::Outgoing,
                                target: TripleObject::entity(format!("g{}", s + 1)),
                            })
                            .collect(),
                    }],
                };
                let sel = OracleSelector::new(vec![plan]);
                let mut topics = TopicEntitySet::default();
                topics.entities.push(EntityId::new("g0"));
                let q = Question::new("qg", "follow the gold path").unwrap();
                let cfg = ExpansionConfig {
                    relation_width: 1,
                    entity_width: 1,
                    iterations: len,
                    ..ExpansionConfig::default()
                };
                let (g, _) = retrieve_subgraph(&backend, &sel, &q, &topics, &cfg).unwrap();

                prop_assert_eq!(g.len(), len);
                for step in 0..len {
                    let gold_entity = format!("g{}", step + 1);
                    prop_assert!(g.contains_entity(&gold_entity), "missing {}", gold_entity);
                }
            }
        }
    }
}
