//! Probabilistic scoring of retrieval traces.
//!
//! Every selector decision carries normalized scores, so a trace induces a
//! probability-like mass over the retrieved subgraph. The single-step score
//! `t1` multiplies a relation's score by the entity mass chosen under it;
//! the cumulative score `t2` extends `t1` down every selected continuation,
//! weighting each successor by its own selection score; the subgraph score
//! sums `t2` over the topic entities' first-wave relations. Branches that
//! were never expanded (literals, re-visited entities, last-wave picks)
//! terminate with factor one, so their mass is exactly their path product.
//!
//! All functions are pure over an immutable trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, RelationId, TripleObject};
use crate::retrieval::{DecisionRecord, RelationExpansion, RetrievalTrace};

/// How entity selections aggregate into a step score: total selected mass
/// (the default, preserving the sum-over-paths reading) or the best single
/// pick (best-path semantics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityMass {
    #[default]
    Sum,
    Max,
}

/// How per-topic aggregates combine into the total: averaged over topics
/// (keeps the total in [0,1]) or summed literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootWeighting {
    #[default]
    Uniform,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub entity_mass: EntityMass,
    pub root_weighting: RootWeighting,
}

/// One relation expansion step and its single-step score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
    pub relation_score: f64,
    /// Aggregated mass of the entities chosen under this relation.
    pub entity_score: f64,
    pub t1: f64,
}

/// Aggregate score of a whole retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphScore {
    pub config: ScoringConfig,
    /// Unweighted per-topic-entity aggregate, keyed by entity id.
    pub per_topic: BTreeMap<String, f64>,
    pub total: f64,
}

/// One root-to-leaf decision path with its score product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    /// Rendered hops, `entity -[key]-> object`.
    pub steps: Vec<String>,
    pub product: f64,
}

struct TraceIndex<'a> {
    by_entity_wave: BTreeMap<(&'a str, usize), &'a DecisionRecord>,
}

impl<'a> TraceIndex<'a> {
    fn new(trace: &'a RetrievalTrace) -> Self {
        let mut by_entity_wave = BTreeMap::new();
        for rec in &trace.records {
            by_entity_wave.insert((rec.entity.id.as_str(), rec.iteration), rec);
        }
        TraceIndex { by_entity_wave }
    }

    fn record(&self, entity_id: &str, n: usize) -> Option<&'a DecisionRecord> {
        self.by_entity_wave.get(&(entity_id, n)).copied()
    }
}

fn expansion_for<'a>(rec: &'a DecisionRecord, key: &str) -> Option<&'a RelationExpansion> {
    rec.expansions.iter().find(|x| x.relation == key)
}

fn entity_mass(exp: &RelationExpansion, cfg: &ScoringConfig) -> f64 {
    match cfg.entity_mass {
        EntityMass::Sum => exp.decision.choices.iter().map(|c| c.score).sum(),
        EntityMass::Max => exp
            .decision
            .choices
            .iter()
            .map(|c| c.score)
            .fold(0.0, f64::max),
    }
}

/// `t1` for one directional relation key at one record.
fn t1_key(rec: &DecisionRecord, key: &str, cfg: &ScoringConfig) -> Option<f64> {
    let rel_score = rec.relation_decision.score_of(key)?;
    let mass = expansion_for(rec, key).map(|x| entity_mass(x, cfg)).unwrap_or(0.0);
    Some(rel_score * mass)
}

/// Cumulative score of one directional step: the relation's score times the
/// aggregated mass of `entity score × continuation` over its chosen
/// entities. A successor without a record at the next wave contributes
/// continuation 1 (its mass stops at the step itself).
fn t2_key(idx: &TraceIndex, rec: &DecisionRecord, key: &str, cfg: &ScoringConfig) -> Option<f64> {
    let rel_score = rec.relation_decision.score_of(key)?;
    let Some(exp) = expansion_for(rec, key) else {
        return Some(0.0);
    };
    let objects: BTreeMap<String, &TripleObject> =
        exp.offered.iter().map(|c| (c.key(), &c.object)).collect();

    let continuation = |choice_id: &str| -> f64 {
        let entity_id = match objects.get(choice_id) {
            Some(TripleObject::Entity(e)) => e.id.as_str(),
            _ => return 1.0, // literal or unknown: branch ends here
        };
        match idx.record(entity_id, rec.iteration + 1) {
            // An expanded successor that chose nothing dangles like one
            // that was never expanded.
            Some(next) if !next.relation_decision.is_empty() => next
                .relation_decision
                .choices
                .iter()
                .filter_map(|c| t2_key(idx, next, &c.id, cfg))
                .sum(),
            _ => 1.0,
        }
    };

    let terms = exp
        .decision
        .choices
        .iter()
        .map(|c| c.score * continuation(&c.id));
    let mass = match cfg.entity_mass {
        EntityMass::Sum => terms.sum::<f64>(),
        EntityMass::Max => terms.fold(0.0, f64::max),
    };
    Some(rel_score * mass)
}

fn directional_keys(r: &RelationId) -> [String; 2] {
    [format!("out:{}", r.id), format!("in:{}", r.id)]
}

/// Single-step score for `(e, r)`: the relation-selection score times the
/// entity mass chosen under it, summed over the directional variants the
/// trace actually contains. Errors when the trace never expanded `e` over
/// `r` in either direction.
pub fn t1(trace: &RetrievalTrace, e: &EntityId, r: &RelationId, cfg: &ScoringConfig) -> Result<f64> {
    let rec = trace
        .records
        .iter()
        .find(|rec| rec.entity.id == e.id)
        .ok_or_else(|| unknown_step(e, r))?;
    let found: Vec<f64> = directional_keys(r)
        .iter()
        .filter_map(|key| t1_key(rec, key, cfg))
        .collect();
    if found.is_empty() {
        return Err(unknown_step(e, r));
    }
    Ok(found.into_iter().sum())
}

/// Cumulative score for `(e, r)` expanded at wave `n`, summed over the
/// directional variants present.
pub fn t2(
    trace: &RetrievalTrace,
    e: &EntityId,
    r: &RelationId,
    n: usize,
    cfg: &ScoringConfig,
) -> Result<f64> {
    let idx = TraceIndex::new(trace);
    let rec = idx.record(&e.id, n).ok_or_else(|| unknown_step(e, r))?;
    let found: Vec<f64> = directional_keys(r)
        .iter()
        .filter_map(|key| t2_key(&idx, rec, key, cfg))
        .collect();
    if found.is_empty() {
        return Err(unknown_step(e, r));
    }
    Ok(found.into_iter().sum())
}

fn unknown_step(e: &EntityId, r: &RelationId) -> Error {
    Error::UnknownTraceStep {
        entity: e.id.clone(),
        relation: r.id.clone(),
    }
}

/// Every recorded step with its `t1`, in trace order.
pub fn step_scores(trace: &RetrievalTrace, cfg: &ScoringConfig) -> Vec<StepScore> {
    let mut out = Vec::new();
    for rec in &trace.records {
        for choice in &rec.relation_decision.choices {
            let Some(cand) = rec.offered_relations.iter().find(|c| c.key() == choice.id) else {
                continue;
            };
            let mass = expansion_for(rec, &choice.id)
                .map(|x| entity_mass(x, cfg))
                .unwrap_or(0.0);
            out.push(StepScore {
                entity: rec.entity.clone(),
                relation: cand.relation.clone(),
                direction: cand.direction,
                relation_score: choice.score,
                entity_score: mass,
                t1: choice.score * mass,
            });
        }
    }
    out
}

/// Score the whole retrieval: per topic entity, the sum of `t2` over its
/// first-wave relation choices; in total, those aggregates averaged
/// (uniform weighting, the default) or summed (unit weighting).
pub fn subgraph_score(trace: &RetrievalTrace, cfg: &ScoringConfig) -> SubgraphScore {
    let idx = TraceIndex::new(trace);
    let mut per_topic = BTreeMap::new();
    for topic in &trace.topics {
        let aggregate = match idx.record(&topic.id, 0) {
            Some(rec) => rec
                .relation_decision
                .choices
                .iter()
                .filter_map(|c| t2_key(&idx, rec, &c.id, cfg))
                .sum(),
            None => 0.0,
        };
        per_topic.insert(topic.id.clone(), aggregate);
    }
    let raw: f64 = per_topic.values().sum();
    let total = match cfg.root_weighting {
        RootWeighting::Uniform if !per_topic.is_empty() => raw / per_topic.len() as f64,
        _ => raw,
    };
    SubgraphScore {
        config: *cfg,
        per_topic,
        total,
    }
}

/// Compute and embed the score block in the trace.
pub fn attach_scores(trace: &mut RetrievalTrace, cfg: &ScoringConfig) {
    trace.scores = Some(subgraph_score(trace, cfg));
}

/// Probability-style combination of reasoning confidence with the
/// subgraph's retrieval mass; both factors are expected in [0,1].
pub fn combined_answer_score(reasoning_confidence: f64, sg: &SubgraphScore) -> f64 {
    debug_assert!((0.0..=1.0).contains(&reasoning_confidence));
    reasoning_confidence * sg.total
}

/// Materialize every selected root-to-leaf decision path with its product
/// of per-step `relation score × entity score`. With sum entity mass and
/// unit root weighting, the products sum to the subgraph total.
pub fn path_breakdown(trace: &RetrievalTrace) -> Vec<ScoredPath> {
    let idx = TraceIndex::new(trace);
    let mut paths = Vec::new();
    for topic in &trace.topics {
        let Some(rec) = idx.record(&topic.id, 0) else {
            continue;
        };
        walk_paths(&idx, rec, Vec::new(), 1.0, &mut paths);
    }
    paths
}

fn walk_paths(
    idx: &TraceIndex,
    rec: &DecisionRecord,
    prefix: Vec<String>,
    product: f64,
    out: &mut Vec<ScoredPath>,
) {
    for choice in &rec.relation_decision.choices {
        let Some(exp) = expansion_for(rec, &choice.id) else {
            continue;
        };
        let objects: BTreeMap<String, &TripleObject> =
            exp.offered.iter().map(|c| (c.key(), &c.object)).collect();
        for picked in &exp.decision.choices {
            let mut steps = prefix.clone();
            steps.push(format!(
                "{} -[{}]-> {}",
                rec.entity.id, choice.id, picked.id
            ));
            let p = product * choice.score * picked.score;
            let successor = objects
                .get(&picked.id)
                .and_then(|obj| obj.as_entity())
                .and_then(|e| idx.record(&e.id, rec.iteration + 1));
            match successor {
                Some(next) if !next.relation_decision.is_empty() => {
                    walk_paths(idx, next, steps, p, out);
                }
                _ => out.push(ScoredPath { steps, product: p }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{ExpansionConfig, TRACE_SCHEMA_VERSION};
    use crate::selector::{Choice, Question, SelectorDecision};

    /// Hand-built trace scaffolding: records are wired directly, bypassing
    /// retrieval, so scores need not be normalized.
    struct TraceBuilder {
        records: Vec<DecisionRecord>,
        topics: Vec<EntityId>,
    }

    impl TraceBuilder {
        fn new(topics: &[&str]) -> Self {
            TraceBuilder {
                records: Vec::new(),
                topics: topics.iter().map(|t| EntityId::new(*t)).collect(),
            }
        }

        /// Record `entity` at `wave` choosing outgoing `relation` with
        /// `rel_score`, selecting `entities` as (id, score, is_literal).
        fn step(
            mut self,
            wave: usize,
            entity: &str,
            relation: &str,
            rel_score: f64,
            entities: &[(&str, f64, bool)],
        ) -> Self {
            let key = format!("out:{relation}");
            let offered: Vec<crate::kg::EntityCandidate> = entities
                .iter()
                .map(|(id, _, lit)| {
                    crate::kg::EntityCandidate::new(if *lit {
                        TripleObject::literal(*id)
                    } else {
                        TripleObject::entity(*id)
                    })
                })
                .collect();
            let decision = SelectorDecision {
                choices: entities
                    .iter()
                    .map(|(id, score, lit)| Choice {
                        id: if *lit {
                            format!("\"{id}\"")
                        } else {
                            id.to_string()
                        },
                        score: *score,
                    })
                    .collect(),
                rationale: None,
            };
            let expansion = RelationExpansion {
                relation: key.clone(),
                offered,
                decision,
            };
            // Merge into an existing record for the same (entity, wave).
            if let Some(rec) = self
                .records
                .iter_mut()
                .find(|r| r.entity.id == entity && r.iteration == wave)
            {
                rec.relation_decision.choices.push(Choice {
                    id: key,
                    score: rel_score,
                });
                rec.expansions.push(expansion);
            } else {
                self.records.push(DecisionRecord {
                    iteration: wave,
                    entity: EntityId::new(entity),
                    offered_relations: Vec::new(),
                    relation_decision: SelectorDecision {
                        choices: vec![Choice {
                            id: key,
                            score: rel_score,
                        }],
                        rationale: None,
                    },
                    expansions: vec![expansion],
                    notes: Vec::new(),
                });
            }
            self
        }

        fn build(self) -> RetrievalTrace {
            RetrievalTrace {
                schema_version: TRACE_SCHEMA_VERSION.into(),
                question: Question::new("t", "test").unwrap(),
                config: ExpansionConfig::default(),
                topics: self.topics,
                records: self.records,
                truncations: Vec::new(),
                errors: Vec::new(),
                scores: None,
                elapsed: None,
            }
        }
    }

    fn cfg() -> ScoringConfig {
        ScoringConfig::default()
    }

    #[test]
    fn t1_identity_step() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 1.0, &[("b", 1.0, false)])
            .build();
        let got = t1(&trace, &EntityId::new("a"), &RelationId::new("r"), &cfg()).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn t1_is_relation_times_mass() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 0.6, &[("b", 0.7, false), ("c", 0.3, false)])
            .build();
        let got = t1(&trace, &EntityId::new("a"), &RelationId::new("r"), &cfg()).unwrap();
        assert!((got - 0.6).abs() < 1e-12, "0.6 × (0.7 + 0.3) = 0.6, got {got}");
    }

    #[test]
    fn t1_zero_entities_annihilates() {
        let trace = TraceBuilder::new(&["a"]).step(0, "a", "r", 0.9, &[]).build();
        let got = t1(&trace, &EntityId::new("a"), &RelationId::new("r"), &cfg()).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn t1_max_mode_takes_best_entity() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 0.5, &[("b", 0.7, false), ("c", 0.3, false)])
            .build();
        let max_cfg = ScoringConfig {
            entity_mass: EntityMass::Max,
            ..cfg()
        };
        let got = t1(&trace, &EntityId::new("a"), &RelationId::new("r"), &max_cfg).unwrap();
        assert!((got - 0.35).abs() < 1e-12);
    }

    #[test]
    fn t1_unknown_step_errors() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 1.0, &[("b", 1.0, false)])
            .build();
        let err = t1(&trace, &EntityId::new("a"), &RelationId::new("ghost"), &cfg()).unwrap_err();
        assert!(matches!(err, Error::UnknownTraceStep { .. }));
        let err = t1(&trace, &EntityId::new("ghost"), &RelationId::new("r"), &cfg()).unwrap_err();
        assert!(matches!(err, Error::UnknownTraceStep { .. }));
    }

    #[test]
    fn t2_two_step_chain_multiplies() {
        // a -r1(0.5)-> b -r2(0.4)-> c, all entity scores 1.
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r1", 0.5, &[("b", 1.0, false)])
            .step(1, "b", "r2", 0.4, &[("c", 1.0, false)])
            .build();
        let got = t2(&trace, &EntityId::new("a"), &RelationId::new("r1"), 0, &cfg()).unwrap();
        assert!((got - 0.2).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn t2_terminal_step_equals_t1() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 0.5, &[("lit", 0.8, true)])
            .build();
        let c = cfg();
        let e = EntityId::new("a");
        let r = RelationId::new("r");
        assert_eq!(t2(&trace, &e, &r, 0, &c).unwrap(), t1(&trace, &e, &r, &c).unwrap());
    }

    #[test]
    fn t2_weights_divergent_continuations_by_entity_score() {
        // a -r(1.0)-> {b: 0.5, c: 0.5}; b continues with mass 0.4, c dangles.
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 1.0, &[("b", 0.5, false), ("c", 0.5, false)])
            .step(1, "b", "r2", 0.4, &[("d", 1.0, false)])
            .build();
        let got = t2(&trace, &EntityId::new("a"), &RelationId::new("r"), 0, &cfg()).unwrap();
        // 1.0 × (0.5 × 0.4 + 0.5 × 1) = 0.7
        assert!((got - 0.7).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn branching_normalized_trace_totals_one() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r1", 0.6, &[("b", 1.0, false)])
            .step(0, "a", "r2", 0.4, &[("c", 1.0, false)])
            .build();
        let sg = subgraph_score(&trace, &cfg());
        assert!((sg.total - 1.0).abs() < 1e-12, "got {}", sg.total);
        assert_eq!(sg.per_topic.len(), 1);
    }

    #[test]
    fn empty_trace_scores_zero() {
        let trace = TraceBuilder::new(&["a"]).build();
        let sg = subgraph_score(&trace, &cfg());
        assert_eq!(sg.total, 0.0);
        assert_eq!(sg.per_topic["a"], 0.0);
    }

    #[test]
    fn uniform_weighting_averages_topics() {
        let trace = TraceBuilder::new(&["a", "x"])
            .step(0, "a", "r", 1.0, &[("b", 1.0, false)])
            .step(0, "x", "r", 0.5, &[("y", 1.0, false)])
            .build();
        let uniform = subgraph_score(&trace, &cfg());
        assert!((uniform.total - 0.75).abs() < 1e-12);
        let unit = subgraph_score(
            &trace,
            &ScoringConfig {
                root_weighting: RootWeighting::Unit,
                ..cfg()
            },
        );
        assert!((unit.total - 1.5).abs() < 1e-12);
    }

    #[test]
    fn directional_variants_sum_in_public_ops() {
        // Entity expanded over the same relation id in both directions.
        let mut trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 0.5, &[("b", 1.0, false)])
            .build();
        trace.records[0].relation_decision.choices.push(Choice {
            id: "in:r".into(),
            score: 0.25,
        });
        trace.records[0].expansions.push(RelationExpansion {
            relation: "in:r".into(),
            offered: vec![crate::kg::EntityCandidate::new(TripleObject::entity("z"))],
            decision: SelectorDecision {
                choices: vec![Choice {
                    id: "z".into(),
                    score: 1.0,
                }],
                rationale: None,
            },
        });
        let got = t1(&trace, &EntityId::new("a"), &RelationId::new("r"), &cfg()).unwrap();
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn combined_score_multiplies() {
        let sg = SubgraphScore {
            config: cfg(),
            per_topic: BTreeMap::new(),
            total: 0.5,
        };
        assert_eq!(combined_answer_score(0.8, &sg), 0.4);
        assert_eq!(combined_answer_score(0.0, &sg), 0.0);
        let one = SubgraphScore { total: 1.0, ..sg };
        assert_eq!(combined_answer_score(1.0, &one), 1.0);
    }

    #[test]
    fn oracle_run_on_toy_graph_scores_one() {
        use crate::kg::InMemoryBackend;
        use crate::linker::link_exact;
        use crate::retrieval::retrieve_subgraph;
        use crate::selector::{OraclePath, OraclePlan, OracleSelector, OracleStep};

        let backend = InMemoryBackend::new(crate::graph::toy_dogs_graph());
        let topics = link_exact(&backend, &["South Korea".to_string()]).unwrap();
        let q = Question::new("q2", "ruling party").unwrap();
        let sel = OracleSelector::new(vec![OraclePlan {
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
        }]);
        let (_, trace) =
            retrieve_subgraph(&backend, &sel, &q, &topics, &ExpansionConfig::default()).unwrap();
        let sg = subgraph_score(&trace, &cfg());
        assert!((sg.total - 1.0).abs() < 1e-9, "got {}", sg.total);
    }

    #[test]
    fn path_breakdown_sums_to_unit_total() {
        let trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r1", 0.6, &[("b", 0.5, false), ("c", 0.5, false)])
            .step(0, "a", "r2", 0.4, &[("lit", 1.0, true)])
            .step(1, "b", "r3", 1.0, &[("d", 1.0, false)])
            .build();
        let paths = path_breakdown(&trace);
        let sum: f64 = paths.iter().map(|p| p.product).sum();
        let unit = subgraph_score(
            &trace,
            &ScoringConfig {
                root_weighting: RootWeighting::Unit,
                ..cfg()
            },
        );
        assert!((sum - unit.total).abs() < 1e-12);
        // Paths: a-r1-b-r3-d, a-r1-c, a-r2-"lit".
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().any(|p| p.steps.len() == 2));
    }

    #[test]
    fn attach_scores_embeds_block() {
        let mut trace = TraceBuilder::new(&["a"])
            .step(0, "a", "r", 1.0, &[("b", 1.0, false)])
            .build();
        attach_scores(&mut trace, &cfg());
        let json = serde_json::to_value(&trace).unwrap();
        assert!(json.get("scores").is_some());
        assert_eq!(json["scores"]["total"], serde_json::json!(1.0));
    }

    mod properties {
        use super::*;
        use crate::kg::InMemoryBackend;
        use crate::linker::TopicEntitySet;
        use crate::retrieval::retrieve_subgraph;
        use crate::selector::LexicalSelector;
        use proptest::prelude::*;
        use std::collections::BTreeSet;

        /// Independent oracle: explicitly materialize every root-to-leaf
        /// decision path and sum the products of its step factors.
        fn brute_force_total(trace: &RetrievalTrace) -> f64 {
            let mut total = 0.0;
            let mut roots = BTreeSet::new();
            for topic in &trace.topics {
                if !roots.insert(topic.id.clone()) {
                    continue;
                }
                let Some(rec) = trace
                    .records
                    .iter()
                    .find(|r| r.iteration == 0 && r.entity.id == topic.id)
                else {
                    continue;
                };
                total += paths_from(trace, rec, 1.0);
            }
            total
        }

        fn paths_from(trace: &RetrievalTrace, rec: &DecisionRecord, acc: f64) -> f64 {
            let mut sum = 0.0;
            for rel in &rec.relation_decision.choices {
                let Some(exp) = rec.expansions.iter().find(|x| x.relation == rel.id) else {
                    continue;
                };
                for ent in &exp.decision.choices {
                    let factor = acc * rel.score * ent.score;
                    let succ = exp
                        .offered
                        .iter()
                        .find(|c| c.key() == ent.id)
                        .and_then(|c| c.object.as_entity())
                        .and_then(|e| {
                            trace.records.iter().find(|r| {
                                r.iteration == rec.iteration + 1 && r.entity.id == e.id
                            })
                        });
                    match succ {
                        Some(next) => {
                            // A successor whose own decision list is empty
                            // still terminates the path with its factor.
                            let below = paths_from(trace, next, factor);
                            sum += if has_any_choice(next) { below } else { factor };
                        }
                        None => sum += factor,
                    }
                }
            }
            sum
        }

        fn has_any_choice(rec: &DecisionRecord) -> bool {
            !rec.relation_decision.choices.is_empty()
        }

        fn arb_graph_tsv() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                (0u8..10, 0u8..4, 0u8..12, proptest::bool::ANY),
                1..50,
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

        fn trace_for(tsv: &str, k: usize, i: usize, n: usize) -> Option<RetrievalTrace> {
            let graph =
                crate::graph::InMemoryGraph::parse_tsv(tsv, "gen.tsv", &std::collections::BTreeMap::new())
                    .ok()?;
            let backend = InMemoryBackend::new(graph);
            let start = backend.graph().entity("e0")?;
            let mut topics = TopicEntitySet::default();
            topics.entities.push(start);
            let q = Question::new("qs", "r0 lit e1").unwrap();
            let cfg = ExpansionConfig {
                relation_width: k,
                entity_width: i,
                iterations: n,
                ..ExpansionConfig::default()
            };
            retrieve_subgraph(&backend, &LexicalSelector, &q, &topics, &cfg)
                .ok()
                .map(|(_, t)| t)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn total_matches_brute_force_and_stays_in_range(
                tsv in arb_graph_tsv(),
                k in 1usize..4,
                i in 1usize..4,
                n in 1usize..4,
            ) {
                let Some(trace) = trace_for(&tsv, k, i, n) else { return Ok(()); };
                let sg = subgraph_score(&trace, &ScoringConfig::default());
                prop_assert!(sg.total >= -1e-9 && sg.total <= 1.0 + 1e-9,
                    "total {} out of range", sg.total);
                let brute = brute_force_total(&trace);
                prop_assert!((sg.total - brute).abs() < 1e-9,
                    "t2 total {} != brute force {}", sg.total, brute);
            }

            #[test]
            fn zeroing_a_step_never_increases_total(
                tsv in arb_graph_tsv(),
                pick in proptest::num::usize::ANY,
            ) {
                let Some(trace) = trace_for(&tsv, 3, 3, 3) else { return Ok(()); };
                let baseline = subgraph_score(&trace, &ScoringConfig::default()).total;

                let mut steps: Vec<(usize, usize)> = Vec::new();
                for (ri, rec) in trace.records.iter().enumerate() {
                    for ci in 0..rec.relation_decision.choices.len() {
                        steps.push((ri, ci));
                    }
                }
                prop_assume!(!steps.is_empty());
                let (ri, ci) = steps[pick % steps.len()];
                let mut zeroed = trace.clone();
                zeroed.records[ri].relation_decision.choices[ci].score = 0.0;
                let after = subgraph_score(&zeroed, &ScoringConfig::default()).total;
                prop_assert!(after <= baseline + 1e-12,
                    "zeroing raised {} -> {}", baseline, after);
            }

            #[test]
            fn shared_subgraph_factor_preserves_answer_ranking(
                confidences in proptest::collection::vec(0.0f64..1.0, 2..8),
                total in 0.01f64..1.0,
            ) {
                let sg = SubgraphScore {
                    config: ScoringConfig::default(),
                    per_topic: BTreeMap::new(),
                    total,
                };
                let mut by_conf: Vec<usize> = (0..confidences.len()).collect();
                by_conf.sort_by(|a, b| confidences[*b].total_cmp(&confidences[*a]));
                let combined: Vec<f64> = confidences
                    .iter()
                    .map(|c| combined_answer_score(*c, &sg))
                    .collect();
                let mut by_combined: Vec<usize> = (0..combined.len()).collect();
                by_combined.sort_by(|a, b| combined[*b].total_cmp(&combined[*a]));
                prop_assert_eq!(by_conf, by_combined);
            }
        }
    }
}
