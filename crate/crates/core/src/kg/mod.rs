//! The uniform knowledge-graph query interface: a relation searcher that
//! returns every bidirectional relation at an entity, and an entity searcher
//! that returns every object reachable over one relation.
//!
//! Two implementations ship: [`InMemoryBackend`] over the local triple store,
//! and [`sparql::SparqlBackend`] driving any SPARQL endpoint through query
//! templates. [`stub::SparqlStubServer`] serves an in-memory graph over HTTP
//! for offline runs and backend-equivalence tests.

pub mod sparql;
pub mod stub;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Direction, EntityId, InMemoryGraph, RelationId, TripleObject};

/// One relation reachable from an entity, with the direction it was seen in.
/// A relation present in both directions yields two candidates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationCandidate {
    pub relation: RelationId,
    pub direction: Direction,
}

impl RelationCandidate {
    pub fn new(relation: RelationId, direction: Direction) -> Self {
        RelationCandidate {
            relation,
            direction,
        }
    }

    /// Stable id used in selector decisions: `out:<id>` or `in:<id>`.
    pub fn key(&self) -> String {
        match self.direction {
            Direction::Outgoing => format!("out:{}", self.relation.id),
            Direction::Incoming => format!("in:{}", self.relation.id),
        }
    }

    /// Human rendering offered to selectors.
    pub fn display(&self) -> String {
        match self.direction {
            Direction::Outgoing => format!("{} (outgoing)", self.relation.display_label()),
            Direction::Incoming => format!("{} (incoming)", self.relation.display_label()),
        }
    }
}

/// One object reachable from an entity over a fixed relation and direction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub object: TripleObject,
}

impl EntityCandidate {
    pub fn new(object: TripleObject) -> Self {
        EntityCandidate { object }
    }

    pub fn key(&self) -> String {
        self.object.key()
    }
}

/// A queryable knowledge graph. Implementations must be safe for concurrent
/// queries.
pub trait KgBackend: Send + Sync {
    /// All `(relation, direction)` pairs touching `e`, both directions.
    fn search_relations(&self, e: &EntityId) -> Result<BTreeSet<RelationCandidate>>;

    /// All objects `o` with `(e -> r -> o)` for `Outgoing`, or all subjects
    /// `s` with `(s -> r -> e)` for `Incoming`.
    fn search_entities(
        &self,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
    ) -> Result<BTreeSet<EntityCandidate>>;

    /// Entities whose normalized label matches the query.
    fn lookup_label(&self, label: &str) -> Result<BTreeSet<EntityId>>;

    /// The `(entity, label)` universe for embedding-based linking.
    fn label_entries(&self) -> Result<Vec<(EntityId, String)>>;

    /// Short backend identifier for reports ("memory", "sparql").
    fn name(&self) -> &'static str;
}

/// Backend over a loaded [`InMemoryGraph`].
pub struct InMemoryBackend {
    graph: InMemoryGraph,
}

impl InMemoryBackend {
    pub fn new(graph: InMemoryGraph) -> Self {
        InMemoryBackend { graph }
    }

    pub fn graph(&self) -> &InMemoryGraph {
        &self.graph
    }
}

impl KgBackend for InMemoryBackend {
    fn search_relations(&self, e: &EntityId) -> Result<BTreeSet<RelationCandidate>> {
        let mut out = BTreeSet::new();
        for dir in [Direction::Outgoing, Direction::Incoming] {
            for (r, _) in self.graph.neighbors(e, dir) {
                out.insert(RelationCandidate::new(r, dir));
            }
        }
        Ok(out)
    }

    fn search_entities(
        &self,
        e: &EntityId,
        r: &RelationId,
        dir: Direction,
    ) -> Result<BTreeSet<EntityCandidate>> {
        Ok(self
            .graph
            .neighbors(e, dir)
            .into_iter()
            .filter(|(rel, _)| rel == r)
            .map(|(_, obj)| EntityCandidate::new(obj))
            .collect())
    }

    fn lookup_label(&self, label: &str) -> Result<BTreeSet<EntityId>> {
        Ok(self.graph.lookup_by_label(label))
    }

    fn label_entries(&self) -> Result<Vec<(EntityId, String)>> {
        Ok(self.graph.label_entries())
    }

    fn name(&self) -> &'static str {
        "memory"
    }
}
