//! Triple files, the indexed knowledge graph, and the classification
//! population derived from it.
//!
//! A triple file holds one `head\trelation\ttail` fact per line. Labels are
//! interned into [`EntityId`] / [`RelationId`] vocabularies in
//! first-appearance order by [`build_graph`], which gives every downstream
//! tie-break ("vocabulary order") a concrete meaning.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label of the catch-all class appended after the top-K target tails.
pub const OTHER_LABEL: &str = "OTHER";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Malformed { line: usize, found: usize },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown relation id {0}")]
    UnknownRelationId(u32),
    #[error("empty population: no entity is the head of a `{0}` triple")]
    EmptyPopulation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A triple as read from disk, before interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Ordered label vocabulary with reverse lookup.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parses a triple file. Empty lines (including a bare `\r`) are skipped.
pub fn parse_triples(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| KgError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_triples(BufReader::new(file)).map_err(|e| match e {
        KgError::Io { source, .. } => KgError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn read_triples<R: BufRead>(reader: R) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                line: idx + 1,
                found: fields.len(),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Writes the graph's triples in insertion order, one per line.
pub fn write_triples(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| KgError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for t in kg.triples() {
        writeln!(
            w,
            "{}\t{}\t{}",
            kg.entity_label(t.head),
            kg.relation_label(t.relation),
            kg.entity_label(t.tail)
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Interned, deduplicated, indexed triple store. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    by_head: HashMap<EntityId, Vec<(RelationId, EntityId)>>,
    by_head_relation: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    by_relation_tail: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

/// Interns labels in first-appearance order (head, relation, tail per
/// triple) and drops duplicate facts.
pub fn build_graph<I>(triples: I) -> KnowledgeGraph
where
    I: IntoIterator<Item = RawTriple>,
{
    let mut kg = KnowledgeGraph::default();
    let mut seen = HashSet::new();
    for raw in triples {
        let head = EntityId(kg.entities.intern(&raw.head));
        let relation = RelationId(kg.relations.intern(&raw.relation));
        let tail = EntityId(kg.entities.intern(&raw.tail));
        let t = Triple { head, relation, tail };
        if !seen.insert(t) {
            continue;
        }
        kg.triples.push(t);
        kg.by_head.entry(head).or_default().push((relation, tail));
        kg.by_head_relation.entry((head, relation)).or_default().push(tail);
        kg.by_relation_tail.entry((relation, tail)).or_default().push(head);
    }
    kg
}

impl KnowledgeGraph {
    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn require_relation(&self, label: &str) -> Result<RelationId> {
        self.relation(label)
            .ok_or_else(|| KgError::UnknownRelation(label.to_owned()))
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0)
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails(t.head, t.relation).contains(&t.tail)
    }

    /// `(relation, tail)` pairs with `head` as subject, in insertion order.
    pub fn outgoing(&self, head: EntityId) -> &[(RelationId, EntityId)] {
        self.by_head.get(&head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_head_relation
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.by_relation_tail
            .get(&(relation, tail))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn check_relation(&self, relation: RelationId) -> Result<()> {
        if relation.index() < self.relations.len() {
            Ok(())
        } else {
            Err(KgError::UnknownRelationId(relation.0))
        }
    }
}

/// The entities being classified, plus the relations to audit over them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    pub entities: Vec<EntityId>,
    pub target_relation: RelationId,
    pub candidate_sensitive: Vec<RelationId>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Every head of a `target_relation` triple, ordered by entity id. The
/// target relation is removed from the candidate list if present.
pub fn human_subgraph(
    kg: &KnowledgeGraph,
    target_relation: RelationId,
    candidate_sensitive: &[RelationId],
) -> Result<Population> {
    kg.check_relation(target_relation)?;
    for &r in candidate_sensitive {
        kg.check_relation(r)?;
    }
    let mut heads: Vec<EntityId> = kg
        .triples()
        .iter()
        .filter(|t| t.relation == target_relation)
        .map(|t| t.head)
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if heads.is_empty() {
        return Err(KgError::EmptyPopulation(
            kg.relation_label(target_relation).to_owned(),
        ));
    }
    heads.sort_unstable();
    let mut candidates = Vec::new();
    for &r in candidate_sensitive {
        if r != target_relation && !candidates.contains(&r) {
            candidates.push(r);
        }
    }
    Ok(Population {
        entities: heads,
        target_relation,
        candidate_sensitive: candidates,
    })
}

/// Number of population entities holding each tail of `relation`. An
/// entity with several distinct tails counts once towards each.
pub fn tail_distribution(
    kg: &KnowledgeGraph,
    relation: RelationId,
    over: &Population,
) -> Result<BTreeMap<EntityId, usize>> {
    kg.check_relation(relation)?;
    let mut counts = BTreeMap::new();
    for &e in &over.entities {
        let mut tails = kg.tails(e, relation).to_vec();
        tails.sort_unstable();
        tails.dedup();
        for t in tails {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Tails sorted by descending count, ties by vocabulary order.
fn ranked_tails(counts: &BTreeMap<EntityId, usize>) -> Vec<(EntityId, usize)> {
    let mut ranked: Vec<(EntityId, usize)> = counts.iter().map(|(&t, &c)| (t, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Tails of `relation` held by at least `min_count` population entities,
/// most frequent first. A `min_count` of 0 behaves like 1.
pub fn filter_rare_tails(
    kg: &KnowledgeGraph,
    relation: RelationId,
    min_count: usize,
    over: &Population,
) -> Result<Vec<(EntityId, usize)>> {
    let counts = tail_distribution(kg, relation, over)?;
    Ok(ranked_tails(&counts)
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Tail(EntityId),
    Other,
}

/// Target classes (top-K tails then `OTHER`) and each entity's class.
#[derive(Debug, Clone)]
pub struct LabelMap {
    classes: Vec<ClassLabel>,
    assignment: HashMap<EntityId, usize>,
}

impl LabelMap {
    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn other_index(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn class_of(&self, entity: EntityId) -> Option<usize> {
        self.assignment.get(&entity).copied()
    }

    pub fn class_names(&self, kg: &KnowledgeGraph) -> Vec<String> {
        self.classes
            .iter()
            .map(|c| match c {
                ClassLabel::Tail(t) => kg.entity_label(*t).to_owned(),
                ClassLabel::Other => OTHER_LABEL.to_owned(),
            })
            .collect()
    }

    /// Entity count per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &c in self.assignment.values() {
            counts[c] += 1;
        }
        counts
    }
}

/// Keeps the `k` most frequent target tails and relabels everything else
/// as `OTHER`. Each entity gets its own most frequent tail (population
/// frequency, ties by vocabulary order), or `OTHER` if that tail is not
/// among the kept classes.
pub fn prepare_labels(
    kg: &KnowledgeGraph,
    target_relation: RelationId,
    k: usize,
    over: &Population,
) -> Result<LabelMap> {
    if k == 0 {
        return Err(KgError::InvalidArgument("K must be at least 1".into()));
    }
    if over.is_empty() {
        return Err(KgError::EmptyPopulation(
            kg.relation_label(target_relation).to_owned(),
        ));
    }
    let counts = tail_distribution(kg, target_relation, over)?;
    let ranked = ranked_tails(&counts);
    let mut classes: Vec<ClassLabel> = ranked
        .iter()
        .take(k)
        .map(|&(t, _)| ClassLabel::Tail(t))
        .collect();
    classes.push(ClassLabel::Other);
    let class_index: HashMap<EntityId, usize> = classes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c {
            ClassLabel::Tail(t) => Some((*t, i)),
            ClassLabel::Other => None,
        })
        .collect();
    let other = classes.len() - 1;

    let mut assignment = HashMap::with_capacity(over.len());
    for &e in &over.entities {
        let best = kg
            .tails(e, target_relation)
            .iter()
            .copied()
            .max_by(|a, b| counts[a].cmp(&counts[b]).then(b.cmp(a)));
        let class = best
            .and_then(|t| class_index.get(&t).copied())
            .unwrap_or(other);
        assignment.insert(e, class);
    }
    Ok(LabelMap { classes, assignment })
}

/// One-vs-rest binarization of a sensitive relation at one tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitiveGrouping {
    pub relation: RelationId,
    pub tail: EntityId,
    /// Entities holding `(e, relation, tail)`.
    pub in_group: Vec<EntityId>,
    /// Entities holding `relation` only with other tails.
    pub out_group: Vec<EntityId>,
}

impl SensitiveGrouping {
    /// Entities without `relation` fall in neither group.
    pub fn new(kg: &KnowledgeGraph, relation: RelationId, tail: EntityId, over: &Population) -> Self {
        let mut in_group = Vec::new();
        let mut out_group = Vec::new();
        for &e in &over.entities {
            let tails = kg.tails(e, relation);
            if tails.is_empty() {
                continue;
            }
            if tails.contains(&tail) {
                in_group.push(e);
            } else {
                out_group.push(e);
            }
        }
        Self {
            relation,
            tail,
            in_group,
            out_group,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            relation: self.relation,
            tail: self.tail,
            in_group: self.out_group.clone(),
            out_group: self.in_group.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<EntityId>,
    pub test: Vec<EntityId>,
}

/// Seeded split stratified by class. Each class sends
/// `round(test_fraction * size)` members to test, but always keeps at least
/// one in train; singleton classes go entirely to train.
pub fn split_population(
    pop: &Population,
    labels: &LabelMap,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(KgError::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if pop.len() < 2 {
        return Err(KgError::InvalidArgument(
            "need at least 2 entities to split".into(),
        ));
    }
    let mut strata: Vec<Vec<EntityId>> = vec![Vec::new(); labels.num_classes()];
    for &e in &pop.entities {
        let class = labels.class_of(e).ok_or_else(|| {
            KgError::InvalidArgument(format!("entity {} has no class assignment", e.0))
        })?;
        strata[class].push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in strata {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_test = ((test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}
