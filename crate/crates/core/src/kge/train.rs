use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{score, EmbeddingSet, KgeError, ModelKind, Norm, Result};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Loss {
    /// `max(0, margin - φ(pos) + φ(neg))`
    Margin,
    /// `softplus(-φ(pos)) + softplus(φ(neg))`
    Logistic,
}

impl Loss {
    /// Margin ranking for the distance models, logistic for the bilinear ones.
    pub fn default_for(model: ModelKind) -> Self {
        match model {
            ModelKind::TransE | ModelKind::RotatE => Loss::Margin,
            ModelKind::DistMult | ModelKind::ComplEx => Loss::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `None` picks [`Loss::default_for`] the model.
    pub loss: Option<Loss>,
    pub norm: Norm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TransE,
            dim: 64,
            epochs: 100,
            learning_rate: 0.01,
            margin: 1.0,
            negatives_per_positive: 1,
            batch_size: 256,
            seed: 0,
            loss: None,
            norm: Norm::L2,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> Loss {
        self.loss.unwrap_or_else(|| Loss::default_for(self.model))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Seeded initialization: uniform in `±6/√dim`, RotatE phases in `[0, 2π)`.
pub(crate) fn initialize(kg: &KnowledgeGraph, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<EmbeddingSet> {
    let bound = 6.0 / (cfg.dim as f64).sqrt();
    let ew = cfg.model.entity_width(cfg.dim);
    let rw = cfg.model.relation_width(cfg.dim);
    let entity_data: Vec<f64> = (0..kg.num_entities() * ew)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let relation_data: Vec<f64> = (0..kg.num_relations() * rw)
        .map(|_| match cfg.model {
            ModelKind::RotatE => rng.random_range(0.0..TAU),
            _ => rng.random_range(-bound..bound),
        })
        .collect();
    EmbeddingSet::from_parts(
        cfg.model,
        cfg.dim,
        cfg.norm,
        kg.entities().labels().to_vec(),
        kg.relations().labels().to_vec(),
        entity_data,
        relation_data,
    )
}

#[derive(Clone, Copy)]
enum Slot {
    Entity(usize),
    Relation(usize),
}

/// Pending additive updates for one mini-batch. Gradients inside a batch
/// are all taken at the batch-start parameters and applied in insertion
/// order, which keeps training bitwise reproducible.
struct Pending {
    slots: Vec<(Slot, usize)>,
    values: Vec<f64>,
}

impl Pending {
    fn push(&mut self, slot: Slot, coef: f64, grad: &[f64]) {
        self.slots.push((slot, self.values.len()));
        self.values.extend(grad.iter().map(|g| coef * g));
    }

    fn apply(&mut self, emb: &mut EmbeddingSet) {
        let ew = emb.entity_width();
        let rw = emb.relation_width();
        for &(slot, start) in &self.slots {
            let (data, row, w) = match slot {
                Slot::Entity(row) => (emb.entity_data_mut(), row, ew),
                Slot::Relation(row) => (emb.relation_data_mut(), row, rw),
            };
            for (p, g) in data[row * w..(row + 1) * w].iter_mut().zip(&self.values[start..start + w]) {
                *p += g;
            }
        }
        self.slots.clear();
        self.values.clear();
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mini-batch SGD with uniform negative sampling: each negative replaces
/// the head or the tail (probability ½ each) with a different random
/// entity. Per-example gradients within a batch are summed.
pub fn train_embeddings(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<EmbeddingSet> {
    train_embeddings_on(kg, kg.triples(), cfg)
}

/// Trains on `triples` only, with one vector per entity and relation of
/// `kg` (for example the train split of a graph built from all splits).
pub fn train_embeddings_on(kg: &KnowledgeGraph, triples: &[Triple], cfg: &TrainConfig) -> Result<EmbeddingSet> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(KgeError::InvalidConfig("cannot train on an empty graph".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = initialize(kg, cfg, &mut rng)?;
    let n_ent = kg.num_entities();
    let loss = cfg.loss();
    let lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut pending = Pending {
        slots: Vec::new(),
        values: Vec::new(),
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for &idx in batch {
                let pos = triples[idx];
                for _ in 0..cfg.negatives_per_positive {
                    let mut neg = pos;
                    let corrupt_head = rng.random_bool(0.5);
                    let original = if corrupt_head { pos.head } else { pos.tail };
                    let mut e = rng.random_range(0..n_ent);
                    if n_ent > 1 {
                        while e == original.index() {
                            e = rng.random_range(0..n_ent);
                        }
                    }
                    let e = crate::kg::EntityId(e as u32);
                    if corrupt_head {
                        neg.head = e;
                    } else {
                        neg.tail = e;
                    }

                    let sp = emb.score(pos.head, pos.relation, pos.tail)?;
                    let sn = emb.score(neg.head, neg.relation, neg.tail)?;
                    let (dp, dn) = match loss {
                        Loss::Margin => {
                            if cfg.margin - sp + sn > 0.0 {
                                (-1.0, 1.0)
                            } else {
                                continue;
                            }
                        }
                        Loss::Logistic => (-sigmoid(-sp), sigmoid(sn)),
                    };
                    for (triple, dl) in [(pos, dp), (neg, dn)] {
                        let g = score::grads(
                            emb.model(),
                            emb.norm(),
                            emb.entity(triple.head)?,
                            emb.relation(triple.relation)?,
                            emb.entity(triple.tail)?,
                        );
                        let coef = -lr * dl;
                        pending.push(Slot::Entity(triple.head.index()), coef, &g.head);
                        pending.push(Slot::Relation(triple.relation.index()), coef, &g.relation);
                        pending.push(Slot::Entity(triple.tail.index()), coef, &g.tail);
                    }
                }
            }
            pending.apply(&mut emb);
        }
    }
    if emb.entity_data().iter().chain(emb.relation_data()).any(|v| !v.is_finite()) {
        return Err(KgeError::NonFinite(
            "trained parameters (lower the learning rate)".into(),
        ));
    }
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, RawTriple};
    use crate::kge::evaluate_hits_at_k;

    fn chain(n: usize) -> KnowledgeGraph {
        build_graph((0..n - 1).map(|i| RawTriple::new(format!("e{i}"), "next", format!("e{}", i + 1))))
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let kg = chain(5);
        let cfg = TrainConfig {
            epochs: 0,
            dim: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let trained = train_embeddings(&kg, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(trained, initialize(&kg, &cfg, &mut rng).unwrap());
    }

    #[test]
    fn zero_dim_rejected() {
        let cfg = TrainConfig {
            dim: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_embeddings(&chain(3), &cfg), Err(KgeError::InvalidConfig(_))));
    }

    #[test]
    fn empty_graph_rejected() {
        let kg = build_graph(Vec::new());
        assert!(train_embeddings(&kg, &TrainConfig::default()).is_err());
    }

    #[test]
    fn initialization_ranges() {
        let kg = chain(6);
        for model in ModelKind::ALL {
            let cfg = TrainConfig {
                model,
                dim: 9,
                epochs: 0,
                ..TrainConfig::default()
            };
            let e = train_embeddings(&kg, &cfg).unwrap();
            assert!(e.entity_data().iter().all(|v| v.abs() <= 2.0));
            if model == ModelKind::RotatE {
                assert!(e.relation_data().iter().all(|&p| (0.0..TAU).contains(&p)));
                assert_eq!(e.relation_width(), 9);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let kg = chain(8);
        for model in ModelKind::ALL {
            let cfg = TrainConfig {
                model,
                dim: 8,
                epochs: 5,
                batch_size: 3,
                seed: 11,
                ..TrainConfig::default()
            };
            let a = train_embeddings(&kg, &cfg).unwrap();
            let b = train_embeddings(&kg, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn every_model_learns_a_small_chain() {
        let kg = chain(10);
        for model in ModelKind::ALL {
            let cfg = TrainConfig {
                model,
                dim: 16,
                epochs: 300,
                batch_size: 4,
                learning_rate: 0.05,
                seed: 5,
                ..TrainConfig::default()
            };
            let emb = train_embeddings(&kg, &cfg).unwrap();
            let before = train_embeddings(&kg, &TrainConfig { epochs: 0, ..cfg.clone() }).unwrap();
            let hits = |e: &EmbeddingSet| evaluate_hits_at_k(e, kg.triples(), &[3]).unwrap().hits(3).unwrap();
            assert!(
                hits(&emb) >= hits(&before),
                "{model:?}: {} < {}",
                hits(&emb),
                hits(&before)
            );
        }
    }
}
