//! Domain types for entities, relations, and triples, plus the in-memory
//! triple store with its TSV loader.
//!
//! A graph is a set of directed labeled edges `subject -> relation -> object`.
//! Objects are either entities or terminal literals (dates, numbers, quoted
//! strings); literals never become expansion frontier members. After loading,
//! a graph is immutable and safe to share across threads.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An entity identifier: an opaque non-empty string plus an optional
/// human-readable label. Two `EntityId`s are equal iff their id strings are
/// byte-equal; the label never participates in comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityId {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId {
            id: id.into(),
            label: None,
        }
    }

    pub fn with_label(id: impl Into<String>, label: impl Into<String>) -> Self {
        EntityId {
            id: id.into(),
            label: Some(label.into()),
        }
    }

    /// Label when present, otherwise the id with underscores read as spaces.
    pub fn display_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| default_label(&self.id))
    }
}

impl PartialEq for EntityId {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for EntityId {}
impl PartialOrd for EntityId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for EntityId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.id.cmp(&other.id)
    }
}
impl Hash for EntityId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}
impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// A relation identifier; equality by id, like [`EntityId`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationId {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RelationId {
    pub fn new(id: impl Into<String>) -> Self {
        RelationId {
            id: id.into(),
            label: None,
        }
    }

    pub fn display_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| default_label(&self.id))
    }
}

impl PartialEq for RelationId {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for RelationId {}
impl PartialOrd for RelationId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for RelationId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.id.cmp(&other.id)
    }
}
impl Hash for RelationId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}
impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Edge direction relative to a focus entity: `Outgoing` when the entity is
/// the subject, `Incoming` when it is the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outgoing,
    Incoming,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Outgoing => f.write_str("outgoing"),
            Direction::Incoming => f.write_str("incoming"),
        }
    }
}

/// A literal value with an optional datatype IRI.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LiteralValue {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datatype: Option<String>,
}

/// The object position of a triple: another entity, or a terminal literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TripleObject {
    Entity(EntityId),
    Literal(LiteralValue),
}

impl TripleObject {
    pub fn entity(id: impl Into<String>) -> Self {
        TripleObject::Entity(EntityId::new(id))
    }

    pub fn literal(text: impl Into<String>) -> Self {
        TripleObject::Literal(LiteralValue {
            text: text.into(),
            datatype: None,
        })
    }

    pub fn typed_literal(text: impl Into<String>, datatype: impl Into<String>) -> Self {
        TripleObject::Literal(LiteralValue {
            text: text.into(),
            datatype: Some(datatype.into()),
        })
    }

    pub fn as_entity(&self) -> Option<&EntityId> {
        match self {
            TripleObject::Entity(e) => Some(e),
            TripleObject::Literal(_) => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, TripleObject::Literal(_))
    }

    /// Stable string key identifying this object in selector decisions and
    /// traces. Entities use their raw id; literals are wrapped in quotes so
    /// the two spaces cannot collide.
    pub fn key(&self) -> String {
        match self {
            TripleObject::Entity(e) => e.id.clone(),
            TripleObject::Literal(l) => format!("\"{}\"", l.text),
        }
    }

    /// Human-readable rendering: entity label or bare literal text.
    pub fn display_label(&self) -> String {
        match self {
            TripleObject::Entity(e) => e.display_label(),
            TripleObject::Literal(l) => l.text.clone(),
        }
    }
}

/// One fact edge `subject -> relation -> object`. Immutable once created.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: TripleObject,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: TripleObject) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} - {} - {})",
            self.subject.display_label(),
            self.relation.display_label(),
            self.object.display_label()
        )
    }
}

/// Derived label: underscores read as spaces.
pub fn default_label(id: &str) -> String {
    id.replace('_', " ")
}

/// Label normalization shared by the label index and entity linking:
/// casefold, trim, treat underscores as spaces, collapse whitespace runs.
pub fn normalize_label(s: &str) -> String {
    let lowered = s.to_lowercase().replace('_', " ");
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn datetime_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:\d{2})?$")
            .expect("datetime regex")
    })
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}$").expect("date regex"))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?$").expect("number regex")
    })
}

const XSD_DATETIME: &str = "http://www.w3.org/2001/XMLSchema#dateTime";
const XSD_DATE: &str = "http://www.w3.org/2001/XMLSchema#date";
const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
const XSD_DECIMAL: &str = "http://www.w3.org/2001/XMLSchema#decimal";

/// Classify a TSV object field. A field is a literal iff it is wrapped in
/// double quotes or matches an ISO-8601 date/datetime or a decimal-number
/// pattern; everything else is an entity reference.
pub fn parse_object_field(field: &str) -> TripleObject {
    if field.len() >= 2 && field.starts_with('"') && field.ends_with('"') {
        return TripleObject::literal(&field[1..field.len() - 1]);
    }
    if datetime_re().is_match(field) {
        return TripleObject::typed_literal(field, XSD_DATETIME);
    }
    if date_re().is_match(field) {
        return TripleObject::typed_literal(field, XSD_DATE);
    }
    if number_re().is_match(field) {
        let datatype = if field.contains('.') || field.contains('e') || field.contains('E') {
            XSD_DECIMAL
        } else {
            XSD_INTEGER
        };
        return TripleObject::typed_literal(field, datatype);
    }
    TripleObject::entity(field)
}

/// An immutable in-memory triple store with forward, reverse, and label
/// indexes. Duplicate triples collapse silently: the store is a set.
#[derive(Debug, Default, Clone)]
pub struct InMemoryGraph {
    triples: BTreeSet<Triple>,
    forward: BTreeMap<EntityId, BTreeMap<RelationId, BTreeSet<TripleObject>>>,
    reverse: BTreeMap<EntityId, BTreeMap<RelationId, BTreeSet<EntityId>>>,
    labels: BTreeMap<String, BTreeSet<EntityId>>,
    explicit_labels: BTreeMap<String, String>,
}

impl InMemoryGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a graph from already-parsed triples.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut g = InMemoryGraph::new();
        for t in triples {
            g.insert(t);
        }
        g
    }

    /// Load a graph from a TSV file: one `subject<TAB>relation<TAB>object`
    /// triple per line, `#` comment lines and blank lines ignored. An empty
    /// file yields an empty graph.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_tsv(&text, &path.display().to_string(), &BTreeMap::new())
    }

    /// [`InMemoryGraph::load_tsv`] plus an explicit `id<TAB>label` file.
    pub fn load_tsv_with_labels(
        path: impl AsRef<Path>,
        labels_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let labels_path = labels_path.as_ref();
        let label_text = std::fs::read_to_string(labels_path)
            .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
        let labels = parse_label_file(&label_text, &labels_path.display().to_string())?;
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_tsv(&text, &path.display().to_string(), &labels)
    }

    /// Parse TSV text, attaching labels from `labels` (id -> label) or the
    /// underscores-to-spaces default.
    pub fn parse_tsv(text: &str, origin: &str, labels: &BTreeMap<String, String>) -> Result<Self> {
        let mut g = InMemoryGraph {
            explicit_labels: labels.clone(),
            ..InMemoryGraph::default()
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let (s, r, o) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if s.is_empty() || r.is_empty() || o.is_empty() {
                return Err(Error::MalformedLine {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: "empty field".to_string(),
                });
            }
            let subject = g.labeled_entity(s);
            let relation = RelationId::with_default_label(r);
            let object = match parse_object_field(o) {
                TripleObject::Entity(e) => TripleObject::Entity(g.labeled_entity(&e.id)),
                lit => lit,
            };
            g.insert(Triple::new(subject, relation, object));
        }
        Ok(g)
    }

    fn labeled_entity(&self, id: &str) -> EntityId {
        let label = self
            .explicit_labels
            .get(id)
            .cloned()
            .unwrap_or_else(|| default_label(id));
        EntityId::with_label(id, label)
    }

    fn insert(&mut self, t: Triple) {
        if !self.triples.insert(t.clone()) {
            return;
        }
        self.index_entity(&t.subject);
        if let TripleObject::Entity(obj) = &t.object {
            self.index_entity(obj);
            self.reverse
                .entry(obj.clone())
                .or_default()
                .entry(t.relation.clone())
                .or_default()
                .insert(t.subject.clone());
        }
        self.forward
            .entry(t.subject.clone())
            .or_default()
            .entry(t.relation.clone())
            .or_default()
            .insert(t.object.clone());
    }

    fn index_entity(&mut self, e: &EntityId) {
        self.labels
            .entry(normalize_label(&e.display_label()))
            .or_default()
            .insert(e.clone());
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    /// All `(relation, object)` pairs with `e` as subject (`Outgoing`) or as
    /// entity-valued object (`Incoming`). Unknown entities yield the empty
    /// set. For `Incoming`, the returned objects are the triple subjects.
    pub fn neighbors(
        &self,
        e: &EntityId,
        dir: Direction,
    ) -> BTreeSet<(RelationId, TripleObject)> {
        match dir {
            Direction::Outgoing => self
                .forward
                .get(e)
                .map(|rels| {
                    rels.iter()
                        .flat_map(|(r, objs)| objs.iter().map(move |o| (r.clone(), o.clone())))
                        .collect()
                })
                .unwrap_or_default(),
            Direction::Incoming => self
                .reverse
                .get(e)
                .map(|rels| {
                    rels.iter()
                        .flat_map(|(r, subs)| {
                            subs.iter()
                                .map(move |s| (r.clone(), TripleObject::Entity(s.clone())))
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    /// All entities whose normalized label equals the normalized query.
    pub fn lookup_by_label(&self, label: &str) -> BTreeSet<EntityId> {
        self.labels
            .get(&normalize_label(label))
            .cloned()
            .unwrap_or_default()
    }

    /// Every `(entity, display label)` pair in the graph; the candidate
    /// universe for embedding-based linking.
    pub fn label_entries(&self) -> Vec<(EntityId, String)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.triples {
            for e in std::iter::once(&t.subject).chain(t.object.as_entity()) {
                if seen.insert(e.clone()) {
                    out.push((e.clone(), e.display_label()));
                }
            }
        }
        out
    }

    /// The entity carrying this id, if present in any triple.
    pub fn entity(&self, id: &str) -> Option<EntityId> {
        let probe = EntityId::new(id);
        if self.forward.contains_key(&probe) {
            return self.forward.keys().find(|e| e.id == id).cloned();
        }
        if self.reverse.contains_key(&probe) {
            return self.reverse.keys().find(|e| e.id == id).cloned();
        }
        None
    }
}

impl PartialEq for InMemoryGraph {
    fn eq(&self, other: &Self) -> bool {
        self.triples == other.triples
    }
}
impl Eq for InMemoryGraph {}

impl RelationId {
    fn with_default_label(id: &str) -> Self {
        RelationId {
            id: id.to_string(),
            label: Some(default_label(id)),
        }
    }
}

fn parse_label_file(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::MalformedLine {
                path: origin.to_string(),
                line: idx + 1,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        out.insert(fields[0].trim().to_string(), fields[1].trim().to_string());
    }
    Ok(out)
}

/// Five-triple fixture shared by tests across the crate.
#[cfg(test)]
pub(crate) const TOY_DOGS: &str = "\
# five facts behind the demo questions
Bluey\tdate_of_birth\t1910-06-07T00:00:00Z
Bluey\tdate_of_death\t1939-11-14T00:00:00Z
Bluey\tinstance_of\tdog
South_Korea\thead_of_government\tYoon_Suk_Yeol
Yoon_Suk_Yeol\tmember_of_political_party\tPeople_Power_Party
";

#[cfg(test)]
pub(crate) fn toy_dogs_graph() -> InMemoryGraph {
    InMemoryGraph::parse_tsv(TOY_DOGS, "toy-dogs.tsv", &BTreeMap::new()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dogs() -> InMemoryGraph {
        toy_dogs_graph()
    }

    #[test]
    fn loads_five_triples() {
        assert_eq!(toy_dogs().len(), 5);
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let g = InMemoryGraph::parse_tsv("", "empty.tsv", &BTreeMap::new()).unwrap();
        assert_eq!(g.len(), 0);
        assert!(g.is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let line = "a\tr\tb\n";
        let text = line.repeat(3);
        let g = InMemoryGraph::parse_tsv(&text, "dup.tsv", &BTreeMap::new()).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "a\tr\tb\nbad line\n";
        let err = InMemoryGraph::parse_tsv(text, "bad.tsv", &BTreeMap::new()).unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn neighbors_outgoing_bluey() {
        // Oracle: exhaustive scan of the 5-triple fixture.
        let g = toy_dogs();
        let got = g.neighbors(&EntityId::new("Bluey"), Direction::Outgoing);
        let want: BTreeSet<_> = [
            (
                RelationId::new("date_of_birth"),
                TripleObject::typed_literal("1910-06-07T00:00:00Z", XSD_DATETIME),
            ),
            (
                RelationId::new("date_of_death"),
                TripleObject::typed_literal("1939-11-14T00:00:00Z", XSD_DATETIME),
            ),
            (RelationId::new("instance_of"), TripleObject::entity("dog")),
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn neighbors_incoming_bluey_is_empty() {
        let g = toy_dogs();
        assert!(g
            .neighbors(&EntityId::new("Bluey"), Direction::Incoming)
            .is_empty());
    }

    #[test]
    fn neighbors_unknown_entity_is_empty() {
        let g = toy_dogs();
        assert!(g
            .neighbors(&EntityId::new("unknown-entity"), Direction::Outgoing)
            .is_empty());
    }

    #[test]
    fn lookup_by_label_normalizes() {
        let g = toy_dogs();
        let want: BTreeSet<_> = [EntityId::new("South_Korea")].into_iter().collect();
        assert_eq!(g.lookup_by_label("south korea"), want);
        assert_eq!(g.lookup_by_label("SOUTH  KOREA"), want);
        assert_eq!(g.lookup_by_label(" south_korea "), want);
        assert!(g.lookup_by_label("atlantis").is_empty());
    }

    #[test]
    fn literal_detection() {
        assert!(parse_object_field("1910-06-07T00:00:00Z").is_literal());
        assert!(parse_object_field("1910-06-07").is_literal());
        assert!(parse_object_field("29").is_literal());
        assert!(parse_object_field("-3.5e2").is_literal());
        assert!(parse_object_field("\"quoted entity-looking text\"").is_literal());
        assert!(!parse_object_field("dog").is_literal());
        assert!(!parse_object_field("Q884").is_literal());
        // Quoting is the escape hatch: quoted numbers stay plain literals.
        match parse_object_field("\"29\"") {
            TripleObject::Literal(l) => {
                assert_eq!(l.text, "29");
                assert!(l.datatype.is_none());
            }
            _ => panic!("expected literal"),
        }
    }

    #[test]
    fn loading_is_order_independent() {
        let text = TOY_DOGS;
        let mut lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        let g1 = InMemoryGraph::parse_tsv(&lines.join("\n"), "a", &BTreeMap::new()).unwrap();
        lines.reverse();
        let g2 = InMemoryGraph::parse_tsv(&lines.join("\n"), "b", &BTreeMap::new()).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn forward_reverse_round_trip() {
        // For every triple, both endpoints recover it via neighbors().
        let g = toy_dogs();
        for t in g.triples() {
            let fwd = g.neighbors(&t.subject, Direction::Outgoing);
            assert!(fwd.contains(&(t.relation.clone(), t.object.clone())));
            if let TripleObject::Entity(obj) = &t.object {
                let rev = g.neighbors(obj, Direction::Incoming);
                assert!(rev.contains(&(
                    t.relation.clone(),
                    TripleObject::Entity(t.subject.clone())
                )));
            }
        }
    }

    #[test]
    fn explicit_label_file_wins() {
        let labels: BTreeMap<String, String> =
            [("South_Korea".to_string(), "Republic of Korea".to_string())]
                .into_iter()
                .collect();
        let g = InMemoryGraph::parse_tsv(TOY_DOGS, "toy", &labels).unwrap();
        let hits = g.lookup_by_label("republic of korea");
        assert_eq!(hits.len(), 1);
        assert!(g.lookup_by_label("south korea").is_empty());
    }

    #[test]
    fn entity_lookup_by_id() {
        let g = toy_dogs();
        let e = g.entity("Yoon_Suk_Yeol").unwrap();
        assert_eq!(e.display_label(), "Yoon Suk Yeol");
        assert!(g.entity("nope").is_none());
    }
}
