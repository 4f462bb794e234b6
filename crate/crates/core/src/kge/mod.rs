//! Knowledge-graph embeddings: storage, scoring, training, ranking
//! evaluation and the on-disk format.

mod eval;
mod io;
mod score;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub use eval::{evaluate_hits_at_k, rank_of_tail, HitsReport};
pub use io::{load_embeddings, save_embeddings, EmbeddingHeader};
pub use score::ScoreGrads;
pub use train::{train_embeddings, train_embeddings_on, Loss, TrainConfig};

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("unsupported model `{0}`")]
    UnsupportedModel(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("vector length {found} does not match expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    BadRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: bad header: {message}")]
    BadHeader { path: String, message: String },
    #[error("embedding has no vector for {kind} `{label}`")]
    MissingLabel { kind: &'static str, label: String },
}

pub type Result<T, E = KgeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
    RotatE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::RotatE,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::TransE => "TRANSE",
            ModelKind::DistMult => "DISTMULT",
            ModelKind::ComplEx => "COMPLEX",
            ModelKind::RotatE => "ROTATE",
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, ModelKind::ComplEx | ModelKind::RotatE)
    }

    /// Number of reals stored per entity for `dim` coordinates.
    pub fn entity_width(self, dim: usize) -> usize {
        if self.is_complex() {
            2 * dim
        } else {
            dim
        }
    }

    /// Number of reals stored per relation; RotatE keeps one phase per
    /// complex coordinate.
    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * dim,
            _ => dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TRANSE" => Ok(ModelKind::TransE),
            "DISTMULT" => Ok(ModelKind::DistMult),
            "COMPLEX" => Ok(ModelKind::ComplEx),
            "ROTATE" => Ok(ModelKind::RotatE),
            _ => Err(KgeError::UnsupportedModel(s.to_owned())),
        }
    }
}

/// Distance norm used by TransE. Other models ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// Entity and relation vectors for one model, indexed by the owning
/// graph's [`EntityId`] / [`RelationId`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    model: ModelKind,
    dim: usize,
    norm: Norm,
    entity_labels: Vec<String>,
    relation_labels: Vec<String>,
    entity_data: Vec<f64>,
    relation_data: Vec<f64>,
}

impl EmbeddingSet {
    /// Builds a set from row-major data, checking widths and finiteness.
    pub fn from_parts(
        model: ModelKind,
        dim: usize,
        norm: Norm,
        entity_labels: Vec<String>,
        relation_labels: Vec<String>,
        entity_data: Vec<f64>,
        relation_data: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KgeError::InvalidConfig("dim must be positive".into()));
        }
        let ew = model.entity_width(dim);
        let rw = model.relation_width(dim);
        if entity_data.len() != entity_labels.len() * ew {
            return Err(KgeError::DimMismatch {
                expected: entity_labels.len() * ew,
                found: entity_data.len(),
            });
        }
        if relation_data.len() != relation_labels.len() * rw {
            return Err(KgeError::DimMismatch {
                expected: relation_labels.len() * rw,
                found: relation_data.len(),
            });
        }
        if entity_data.iter().any(|v| !v.is_finite()) {
            return Err(KgeError::NonFinite("entity vectors".into()));
        }
        if relation_data.iter().any(|v| !v.is_finite()) {
            return Err(KgeError::NonFinite("relation vectors".into()));
        }
        Ok(Self {
            model,
            dim,
            norm,
            entity_labels,
            relation_labels,
            entity_data,
            relation_data,
        })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn entity_width(&self) -> usize {
        self.model.entity_width(self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.model.relation_width(self.dim)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn entity(&self, id: EntityId) -> Result<&[f64]> {
        let w = self.entity_width();
        self.entity_data
            .get(id.index() * w..(id.index() + 1) * w)
            .ok_or(KgeError::UnknownEntity(id.0))
    }

    pub fn relation(&self, id: RelationId) -> Result<&[f64]> {
        let w = self.relation_width();
        self.relation_data
            .get(id.index() * w..(id.index() + 1) * w)
            .ok_or(KgeError::UnknownRelation(id.0))
    }

    pub(crate) fn entity_data_mut(&mut self) -> &mut [f64] {
        &mut self.entity_data
    }

    pub(crate) fn relation_data_mut(&mut self) -> &mut [f64] {
        &mut self.relation_data
    }

    pub(crate) fn entity_data(&self) -> &[f64] {
        &self.entity_data
    }

    pub(crate) fn relation_data(&self) -> &[f64] {
        &self.relation_data
    }

    /// φ(h, r, t); higher means more plausible.
    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        Ok(score::score(
            self.model,
            self.norm,
            self.entity(h)?,
            self.relation(r)?,
            self.entity(t)?,
        ))
    }

    /// φ with an arbitrary head vector in entity storage layout.
    pub fn score_with_head(&self, head: &[f64], r: RelationId, t: EntityId) -> Result<f64> {
        self.check_entity_len(head)?;
        Ok(score::score(
            self.model,
            self.norm,
            head,
            self.relation(r)?,
            self.entity(t)?,
        ))
    }

    /// ∂φ/∂h in entity storage layout.
    pub fn grad_score_wrt_head(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<Vec<f64>> {
        self.grad_wrt_head_vector(self.entity(h)?, r, t)
    }

    pub fn grad_wrt_head_vector(&self, head: &[f64], r: RelationId, t: EntityId) -> Result<Vec<f64>> {
        self.check_entity_len(head)?;
        Ok(score::grads(self.model, self.norm, head, self.relation(r)?, self.entity(t)?).head)
    }

    /// Partial gradients with respect to all three arguments.
    pub fn score_grads(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<ScoreGrads> {
        Ok(score::grads(
            self.model,
            self.norm,
            self.entity(h)?,
            self.relation(r)?,
            self.entity(t)?,
        ))
    }

    fn check_entity_len(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.entity_width() {
            Ok(())
        } else {
            Err(KgeError::DimMismatch {
                expected: self.entity_width(),
                found: v.len(),
            })
        }
    }

    /// Reorders rows to match `kg`'s vocabularies, so that its ids index
    /// this set. Extra rows are dropped; missing labels are an error.
    pub fn aligned_to(&self, kg: &KnowledgeGraph) -> Result<Self> {
        let by_label = |labels: &[String]| -> std::collections::HashMap<String, usize> {
            labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
        };
        let ents = by_label(&self.entity_labels);
        let rels = by_label(&self.relation_labels);
        let ew = self.entity_width();
        let rw = self.relation_width();
        let mut entity_data = Vec::with_capacity(kg.num_entities() * ew);
        for label in kg.entities().labels() {
            let row = *ents.get(label).ok_or_else(|| KgeError::MissingLabel {
                kind: "entity",
                label: label.clone(),
            })?;
            entity_data.extend_from_slice(&self.entity_data[row * ew..(row + 1) * ew]);
        }
        let mut relation_data = Vec::with_capacity(kg.num_relations() * rw);
        for label in kg.relations().labels() {
            let row = *rels.get(label).ok_or_else(|| KgeError::MissingLabel {
                kind: "relation",
                label: label.clone(),
            })?;
            relation_data.extend_from_slice(&self.relation_data[row * rw..(row + 1) * rw]);
        }
        Ok(Self {
            model: self.model,
            dim: self.dim,
            norm: self.norm,
            entity_labels: kg.entities().labels().to_vec(),
            relation_labels: kg.relations().labels().to_vec(),
            entity_data,
            relation_data,
        })
    }
}

pub fn score(emb: &EmbeddingSet, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    emb.score(h, r, t)
}

pub fn grad_score_wrt_head(
    emb: &EmbeddingSet,
    h: EntityId,
    r: RelationId,
    t: EntityId,
) -> Result<Vec<f64>> {
    emb.grad_score_wrt_head(h, r, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, RawTriple};

    pub(crate) fn tiny(model: ModelKind, ents: &[&[f64]], rels: &[&[f64]]) -> EmbeddingSet {
        let dim = if model.is_complex() {
            ents[0].len() / 2
        } else {
            ents[0].len()
        };
        EmbeddingSet::from_parts(
            model,
            dim,
            Norm::L2,
            (0..ents.len()).map(|i| format!("e{i}")).collect(),
            (0..rels.len()).map(|i| format!("r{i}")).collect(),
            ents.concat(),
            rels.concat(),
        )
        .unwrap()
    }

    #[test]
    fn worked_score_examples() {
        let e = tiny(ModelKind::TransE, &[&[1.0, 0.0], &[1.0, 1.0]], &[&[0.0, 1.0]]);
        assert_eq!(score(&e, EntityId(0), RelationId(0), EntityId(1)).unwrap(), 0.0);
        let e = tiny(ModelKind::DistMult, &[&[1.0, 2.0], &[2.0, 1.0]], &[&[1.0, 1.0]]);
        assert_eq!(score(&e, EntityId(0), RelationId(0), EntityId(1)).unwrap(), 4.0);
        assert_eq!(
            grad_score_wrt_head(&e, EntityId(0), RelationId(0), EntityId(1)).unwrap(),
            vec![2.0, 1.0]
        );
    }

    #[test]
    fn unknown_ids() {
        let e = tiny(ModelKind::DistMult, &[&[1.0]], &[&[1.0]]);
        assert!(matches!(
            e.score(EntityId(3), RelationId(0), EntityId(0)),
            Err(KgeError::UnknownEntity(3))
        ));
        assert!(matches!(
            e.score(EntityId(0), RelationId(1), EntityId(0)),
            Err(KgeError::UnknownRelation(1))
        ));
    }

    #[test]
    fn rejects_bad_parts() {
        let labels = vec!["a".to_owned()];
        assert!(EmbeddingSet::from_parts(ModelKind::TransE, 0, Norm::L2, labels.clone(), vec![], vec![], vec![]).is_err());
        assert!(matches!(
            EmbeddingSet::from_parts(ModelKind::ComplEx, 2, Norm::L2, labels.clone(), vec![], vec![0.0; 2], vec![]),
            Err(KgeError::DimMismatch { expected: 4, found: 2 })
        ));
        assert!(matches!(
            EmbeddingSet::from_parts(ModelKind::TransE, 1, Norm::L2, labels, vec![], vec![f64::NAN], vec![]),
            Err(KgeError::NonFinite(_))
        ));
    }

    #[test]
    fn model_tags_parse() {
        for m in ModelKind::ALL {
            assert_eq!(m.tag().parse::<ModelKind>().unwrap(), m);
        }
        let err = "CONVE".parse::<ModelKind>().unwrap_err();
        assert_eq!(err.to_string(), "unsupported model `CONVE`");
    }

    #[test]
    fn alignment_follows_graph_vocabulary() {
        let kg = build_graph([RawTriple::new("b", "r", "a")]);
        let e = EmbeddingSet::from_parts(
            ModelKind::DistMult,
            1,
            Norm::L2,
            vec!["a".into(), "b".into(), "extra".into()],
            vec!["r".into()],
            vec![1.0, 2.0, 3.0],
            vec![5.0],
        )
        .unwrap();
        let aligned = e.aligned_to(&kg).unwrap();
        assert_eq!(aligned.entity(kg.entity("b").unwrap()).unwrap(), &[2.0]);
        assert_eq!(aligned.entity(kg.entity("a").unwrap()).unwrap(), &[1.0]);
        assert_eq!(aligned.num_entities(), 2);

        let kg2 = build_graph([RawTriple::new("zzz", "r", "a")]);
        assert!(matches!(e.aligned_to(&kg2), Err(KgeError::MissingLabel { .. })));
    }
}
