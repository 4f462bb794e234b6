use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::kg::{EntityId, RelationId};
use crate::kge::EmbeddingSet;

/// h′ = h + α ∇ₕφ(h, s, t_dir): one ascent step that makes `(h, s, t_dir)`
/// more plausible.
pub fn translate_head(
    emb: &EmbeddingSet,
    head: EntityId,
    sensitive: RelationId,
    direction_tail: EntityId,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(MetricsError::NegativeAlpha(alpha));
    }
    let h = emb.entity(head)?;
    let g = emb.grad_score_wrt_head(head, sensitive, direction_tail)?;
    Ok(h.iter().zip(&g).map(|(x, d)| x + alpha * d).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLRow {
    pub target_tail: EntityId,
    pub target_label: String,
    /// Mean over heads of φ(h′, rᵢ, t) − φ(h, rᵢ, t). Positive means moving
    /// towards the direction tail makes `t` more plausible.
    pub mean_tl: f64,
    pub mean_abs_tl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLTable {
    pub sensitive_relation: RelationId,
    pub sensitive_label: String,
    pub direction_tail: EntityId,
    pub direction_label: String,
    pub target_relation: RelationId,
    pub alpha: f64,
    pub num_heads: usize,
    pub rows: Vec<TLRow>,
}

impl TLTable {
    /// Mean |TL| over every (target tail, head) pair.
    pub fn mean_abs(&self) -> f64 {
        self.rows.iter().map(|r| r.mean_abs_tl).sum::<f64>() / self.rows.len() as f64
    }

    /// The `n` target tails with the largest mean TL, highest first.
    pub fn top(&self, n: usize) -> Vec<&TLRow> {
        let mut rows: Vec<&TLRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.mean_tl.total_cmp(&a.mean_tl).then(a.target_tail.cmp(&b.target_tail)));
        rows.truncate(n);
        rows
    }
}

/// Translational likelihood of each target tail, averaged over `heads`.
pub fn tlb(
    emb: &EmbeddingSet,
    sensitive: RelationId,
    direction_tail: EntityId,
    target_relation: RelationId,
    target_tails: &[EntityId],
    heads: &[EntityId],
    alpha: f64,
) -> Result<TLTable> {
    if heads.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if target_tails.is_empty() {
        return Err(MetricsError::NoTargetTails);
    }
    let mut sum = vec![0.0; target_tails.len()];
    let mut sum_abs = vec![0.0; target_tails.len()];
    for &h in heads {
        let translated = translate_head(emb, h, sensitive, direction_tail, alpha)?;
        let original = emb.entity(h)?;
        for (i, &t) in target_tails.iter().enumerate() {
            let tl = emb.score_with_head(&translated, target_relation, t)?
                - emb.score_with_head(original, target_relation, t)?;
            sum[i] += tl;
            sum_abs[i] += tl.abs();
        }
    }
    let n = heads.len() as f64;
    let label = |e: EntityId| emb.entity_labels()[e.index()].clone();
    let rows = target_tails
        .iter()
        .enumerate()
        .map(|(i, &t)| TLRow {
            target_tail: t,
            target_label: label(t),
            mean_tl: sum[i] / n,
            mean_abs_tl: sum_abs[i] / n,
        })
        .collect();
    Ok(TLTable {
        sensitive_relation: sensitive,
        sensitive_label: emb.relation_labels()[sensitive.index()].clone(),
        direction_tail,
        direction_label: label(direction_tail),
        target_relation,
        alpha,
        num_heads: heads.len(),
        rows,
    })
}

/// All of `entities` if there are at most `cap`, otherwise a seeded sample
/// of `cap` of them. The result keeps the input order.
pub fn sample_heads(entities: &[EntityId], cap: usize, seed: u64) -> Vec<EntityId> {
    if entities.len() <= cap {
        return entities.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, entities.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| entities[i]).collect()
}
