use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, KgeError, Result};
use crate::kg::Triple;

/// Tail-prediction hits@k under raw ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsReport {
    pub hits: BTreeMap<usize, f64>,
    pub num_triples: usize,
    /// Always `"raw"`: other true tails are not filtered out of the ranking.
    pub ranking: String,
    /// Always `"pessimistic"`: the true tail ranks after every tie.
    pub ties: String,
}

impl HitsReport {
    pub fn hits(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

/// 1-based rank of the true tail among all entities by φ(h, r, ·), counting
/// every other entity that scores at least as high.
pub fn rank_of_tail(emb: &EmbeddingSet, triple: &Triple) -> Result<usize> {
    let truth = emb.score(triple.head, triple.relation, triple.tail)?;
    let head = emb.entity(triple.head)?;
    let mut rank = 1;
    for e in 0..emb.num_entities() {
        if e == triple.tail.index() {
            continue;
        }
        let s = emb.score_with_head(head, triple.relation, crate::kg::EntityId(e as u32))?;
        if s >= truth {
            rank += 1;
        }
    }
    Ok(rank)
}

pub fn evaluate_hits_at_k(emb: &EmbeddingSet, test: &[Triple], ks: &[usize]) -> Result<HitsReport> {
    if test.is_empty() {
        return Err(KgeError::EmptyTestSet);
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(KgeError::InvalidConfig("k must be positive".into()));
    }
    let ranks = test
        .iter()
        .map(|t| rank_of_tail(emb, t))
        .collect::<Result<Vec<_>>>()?;
    let hits = ks
        .iter()
        .map(|&k| {
            let n = ranks.iter().filter(|&&r| r <= k).count();
            (k, n as f64 / ranks.len() as f64)
        })
        .collect();
    Ok(HitsReport {
        hits,
        num_triples: test.len(),
        ranking: "raw".into(),
        ties: "pessimistic".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, RelationId};
    use crate::kge::{ModelKind, Norm};

    fn distmult(ents: &[f64]) -> EmbeddingSet {
        EmbeddingSet::from_parts(
            ModelKind::DistMult,
            1,
            Norm::L2,
            (0..ents.len()).map(|i| format!("e{i}")).collect(),
            vec!["r".into()],
            ents.to_vec(),
            vec![1.0],
        )
        .unwrap()
    }

    fn t(h: u32, tail: u32) -> Triple {
        Triple {
            head: EntityId(h),
            relation: RelationId(0),
            tail: EntityId(tail),
        }
    }

    #[test]
    fn unique_maximum_is_a_hit() {
        // Head e0 = 1: φ(e0, r, e0) = 1 < φ(e0, r, e1) = 2.
        let emb = distmult(&[1.0, 2.0]);
        let r = evaluate_hits_at_k(&emb, &[t(0, 1)], &[1]).unwrap();
        assert_eq!(r.hits(1), Some(1.0));
    }

    #[test]
    fn second_of_three() {
        // Head e0 = 1: tail scores are 1, 2, 3; the true tail e1 is 2nd.
        let emb = distmult(&[1.0, 2.0, 3.0]);
        assert_eq!(rank_of_tail(&emb, &t(0, 1)).unwrap(), 2);
        let r = evaluate_hits_at_k(&emb, &[t(0, 1)], &[1, 2, 3]).unwrap();
        assert_eq!(r.hits(1), Some(0.0));
        assert_eq!(r.hits(2), Some(1.0));
        assert_eq!(r.hits(3), Some(1.0));
    }

    #[test]
    fn ties_rank_pessimistically() {
        let emb = distmult(&[1.0, 1.0, 1.0]);
        assert_eq!(rank_of_tail(&emb, &t(0, 1)).unwrap(), 3);
    }

    #[test]
    fn k_at_least_entity_count_is_full() {
        let emb = distmult(&[0.3, -0.2, 0.9, 0.1]);
        let test = [t(0, 1), t(1, 2), t(3, 0)];
        let r = evaluate_hits_at_k(&emb, &test, &[4, 10]).unwrap();
        assert_eq!(r.hits(4), Some(1.0));
        assert_eq!(r.hits(10), Some(1.0));
    }

    #[test]
    fn empty_test_set_errors() {
        let emb = distmult(&[1.0]);
        assert!(matches!(evaluate_hits_at_k(&emb, &[], &[1]), Err(KgeError::EmptyTestSet)));
        assert!(evaluate_hits_at_k(&emb, &[t(0, 0)], &[0]).is_err());
    }
}
