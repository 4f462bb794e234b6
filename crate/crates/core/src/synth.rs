//! Synthetic graphs with a planted correlation between a sensitive relation
//! and the target relation, and the bias a Bayes-optimal classifier would
//! show on them.
//!
//! Every person gets exactly one sensitive tail `s<j>`, one target tail
//! `p<k>` and one tail per decoy relation. Group sizes follow the sensitive
//! marginals, and within group `j` exactly `round(ρ·n_j)` members get the
//! matched target `p<j mod q>`; the rest are spread over the other targets.
//! Decoy tails are drawn independently of everything else.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{build_graph, KnowledgeGraph, RawTriple};
use crate::kge::{EmbeddingSet, ModelKind, Norm};

pub const SENSITIVE_RELATION: &str = "sensitive";
pub const TARGET_RELATION: &str = "target";

#[derive(Debug, Error)]
#[error("invalid synth config: {0}")]
pub struct SynthError(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingMode {
    /// `separation · onehot(group)` plus unit Gaussian noise, so that group
    /// membership is linearly separable.
    GroupSeparated,
    /// Unit Gaussian noise only.
    Random,
    /// Emit the graph alone, for training embeddings on it.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_entities: usize,
    /// Marginal probability of each sensitive tail.
    pub sensitive_probs: Vec<f64>,
    pub target_tails: usize,
    /// P(matched target | sensitive tail).
    pub rho: f64,
    pub decoy_relations: usize,
    pub embedding_mode: EmbeddingMode,
    pub embedding_dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 5000,
            sensitive_probs: vec![0.5, 0.5],
            target_tails: 2,
            rho: 0.95,
            decoy_relations: 2,
            embedding_mode: EmbeddingMode::GroupSeparated,
            embedding_dim: 128,
            separation: 4.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError(m));
        if self.n_entities < 10 {
            return bad(format!("n_entities must be at least 10, got {}", self.n_entities));
        }
        if self.sensitive_probs.len() < 2 {
            return bad("need at least 2 sensitive tails".into());
        }
        if self.sensitive_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("sensitive probabilities must be non-negative".into());
        }
        let sum: f64 = self.sensitive_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("sensitive probabilities sum to {sum}, not 1"));
        }
        if self.target_tails < 2 {
            return bad("need at least 2 target tails".into());
        }
        if !(0.5..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0.5, 1], got {}", self.rho));
        }
        if self.embedding_mode != EmbeddingMode::None {
            if self.embedding_dim < self.sensitive_probs.len() {
                return bad("embedding_dim must be at least the number of sensitive tails".into());
            }
            if !(self.separation.is_finite() && self.separation >= 0.0) {
                return bad("separation must be non-negative".into());
            }
        }
        Ok(())
    }

    /// Target tail favoured by sensitive tail `j`.
    pub fn matched_target(&self, j: usize) -> usize {
        j % self.target_tails
    }

    /// P(target = k | sensitive = j).
    fn conditional(&self, j: usize, k: usize) -> f64 {
        if k == self.matched_target(j) {
            self.rho
        } else {
            (1.0 - self.rho) / (self.target_tails - 1) as f64
        }
    }
}

/// Largest-remainder apportionment of `n` by `probs`.
fn group_sizes(n: usize, probs: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let missing = n - sizes.iter().sum::<usize>();
    for &j in order.iter().take(missing) {
        sizes[j] += 1;
    }
    sizes
}

pub fn person_label(i: usize) -> String {
    format!("person{i}")
}

pub fn sensitive_label(j: usize) -> String {
    format!("s{j}")
}

pub fn target_label(k: usize) -> String {
    format!("p{k}")
}

pub fn generate(cfg: &SynthConfig) -> Result<(KnowledgeGraph, Option<EmbeddingSet>), SynthError> {
    cfg.validate()?;
    let n = cfg.n_entities;
    let q = cfg.target_tails;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sizes = group_sizes(n, &cfg.sensitive_probs);
    let mut group: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &s)| std::iter::repeat_n(j, s))
        .collect();
    group.shuffle(&mut rng);

    let mut target = vec![0usize; n];
    for (j, &size) in sizes.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| group[i] == j).collect();
        let matched = cfg.matched_target(j);
        let n_matched = (cfg.rho * size as f64).round() as usize;
        let others: Vec<usize> = (0..q).filter(|&k| k != matched).collect();
        let mut draws: Vec<usize> = std::iter::repeat_n(matched, n_matched)
            .chain((0..size - n_matched).map(|i| others[i % others.len()]))
            .collect();
        draws.shuffle(&mut rng);
        for (&i, k) in members.iter().zip(draws) {
            target[i] = k;
        }
    }

    let mut raw = Vec::with_capacity(n * (2 + cfg.decoy_relations));
    for i in 0..n {
        let p = person_label(i);
        raw.push(RawTriple::new(&p, SENSITIVE_RELATION, sensitive_label(group[i])));
        raw.push(RawTriple::new(&p, TARGET_RELATION, target_label(target[i])));
        for d in 0..cfg.decoy_relations {
            let tail = format!("d{d}_{}", rng.random_range(0..2u8));
            raw.push(RawTriple::new(&p, format!("decoy{d}"), tail));
        }
    }
    let kg = build_graph(raw);

    let emb = match cfg.embedding_mode {
        EmbeddingMode::None => None,
        mode => {
            let dim = cfg.embedding_dim;
            let mut noise = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
            let mut entity_data = noise(kg.num_entities() * dim);
            let relation_data = noise(kg.num_relations() * dim);
            if mode == EmbeddingMode::GroupSeparated {
                for (i, &j) in group.iter().enumerate() {
                    let id = kg.entity(&person_label(i)).expect("person interned");
                    entity_data[id.index() * dim + j] += cfg.separation;
                }
            }
            Some(
                EmbeddingSet::from_parts(
                    ModelKind::TransE,
                    dim,
                    Norm::L2,
                    kg.entities().labels().to_vec(),
                    kg.relations().labels().to_vec(),
                    entity_data,
                    relation_data,
                )
                .expect("widths match by construction"),
            )
        }
    };
    Ok((kg, emb))
}

/// Aggregated DPD of the Bayes classifier ŷ = argmax P(target | sensitive)
/// over the one-vs-rest binarizations of the sensitive relation, evaluated
/// on the generating distribution.
pub fn analytic_dpd(cfg: &SynthConfig) -> f64 {
    let m = cfg.sensitive_probs.len();
    let q = cfg.target_tails;
    // Argmax with ties to the lowest index.
    let bayes: Vec<usize> = (0..m)
        .map(|j| {
            (0..q).fold(0, |best, k| if cfg.conditional(j, k) > cfg.conditional(j, best) { k } else { best })
        })
        .collect();
    let per_tail: Vec<f64> = (0..m)
        .map(|i| {
            let rest: f64 = (0..m).filter(|&j| j != i).map(|j| cfg.sensitive_probs[j]).sum();
            (0..q)
                .map(|a| {
                    let p1 = if bayes[i] == a { 1.0 } else { 0.0 };
                    let p0 = (0..m)
                        .filter(|&j| j != i && bayes[j] == a)
                        .map(|j| cfg.sensitive_probs[j])
                        .sum::<f64>()
                        / rest;
                    (p1 - p0).abs()
                })
                .sum()
        })
        .collect();
    per_tail.iter().sum::<f64>() / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64, n: usize) -> SynthConfig {
        SynthConfig {
            n_entities: n,
            rho,
            embedding_dim: 8,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    fn conditional_rate(kg: &KnowledgeGraph, sensitive: &str, target: &str) -> f64 {
        let s_rel = kg.relation(SENSITIVE_RELATION).unwrap();
        let t_rel = kg.relation(TARGET_RELATION).unwrap();
        let s = kg.entity(sensitive).unwrap();
        let t = kg.entity(target).unwrap();
        let members = kg.heads(s_rel, s);
        let hits = members.iter().filter(|&&e| kg.tails(e, t_rel) == [t]).count();
        hits as f64 / members.len() as f64
    }

    #[test]
    fn full_correlation_is_deterministic() {
        let (kg, _) = generate(&small(1.0, 100)).unwrap();
        assert_eq!(conditional_rate(&kg, "s1", "p1"), 1.0);
        assert_eq!(conditional_rate(&kg, "s0", "p0"), 1.0);
    }

    #[test]
    fn half_correlation_is_independent() {
        let (kg, _) = generate(&small(0.5, 2000)).unwrap();
        let gap = conditional_rate(&kg, "s1", "p1") - conditional_rate(&kg, "s0", "p1");
        assert!(gap.abs() < 0.01, "{gap}");
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = small(0.8, 200);
        let (a, ea) = generate(&cfg).unwrap();
        let (b, eb) = generate(&cfg).unwrap();
        assert_eq!(a.triples(), b.triples());
        assert_eq!(a.entities().labels(), b.entities().labels());
        assert_eq!(ea, eb);
        let (c, _) = generate(&SynthConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.triples(), c.triples());
    }

    #[test]
    fn shape_of_the_graph() {
        let cfg = small(0.7, 50);
        let (kg, emb) = generate(&cfg).unwrap();
        assert_eq!(kg.triples().len(), 50 * 4);
        assert_eq!(kg.num_relations(), 4);
        let emb = emb.unwrap();
        assert_eq!(emb.num_entities(), kg.num_entities());
        assert_eq!(emb.dim(), 8);
        let none = generate(&SynthConfig { embedding_mode: EmbeddingMode::None, ..cfg }).unwrap();
        assert!(none.1.is_none());
    }

    #[test]
    fn separated_embeddings_carry_the_group() {
        let cfg = SynthConfig {
            separation: 10.0,
            ..small(0.7, 100)
        };
        let (kg, emb) = generate(&cfg).unwrap();
        let emb = emb.unwrap();
        let s_rel = kg.relation(SENSITIVE_RELATION).unwrap();
        for i in 0..100 {
            let e = kg.entity(&person_label(i)).unwrap();
            let j = if kg.tails(e, s_rel) == [kg.entity("s0").unwrap()] { 0 } else { 1 };
            let v = emb.entity(e).unwrap();
            assert!(v[j] > v[1 - j], "person{i}");
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&small(0.4, 100)).is_err());
        assert!(generate(&small(1.1, 100)).is_err());
        assert!(generate(&small(0.9, 9)).is_err());
        let bad_probs = SynthConfig {
            sensitive_probs: vec![0.5, 0.6],
            ..small(0.9, 100)
        };
        assert!(generate(&bad_probs).is_err());
    }

    #[test]
    fn quotas_are_exact() {
        assert_eq!(group_sizes(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(group_sizes(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(group_sizes(7, &[1.0 / 3.0; 3]).iter().sum::<usize>(), 7);
    }

    /// Enumerates both labels for the deterministic Bayes rule of each
    /// group: ŷ(s0) = p0, ŷ(s1) = p1 gives |1 − 0| + |0 − 1| per tail.
    #[test]
    fn bayes_rule_dpd() {
        assert_eq!(analytic_dpd(&small(0.5, 100)), 0.0);
        assert_eq!(analytic_dpd(&small(1.0, 100)), 2.0);
        assert_eq!(analytic_dpd(&small(0.95, 100)), 2.0);
        assert_eq!(analytic_dpd(&small(0.51, 100)), 2.0);
        // Three groups over two targets: s0 and s2 both predict p0.
        let three = SynthConfig {
            sensitive_probs: vec![0.25, 0.25, 0.5],
            ..small(0.9, 100)
        };
        // tail s0: p0 vs others {s1: p1 (1/3), s2: p0 (2/3)}: |1−2/3| + |0−1/3| = 2/3
        // tail s1: p1 vs {s0, s2} all p0: 2
        // tail s2: p0 vs {s0: p0, s1: p1} half each: 1
        assert!((analytic_dpd(&three) - (2.0 / 3.0 + 2.0 + 1.0) / 3.0).abs() < 1e-12);
    }
}
