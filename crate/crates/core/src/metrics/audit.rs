use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::parity::{dpd_binary, ppd_binary, BinaryBiasScore};
use super::translation::{sample_heads, tlb, TLTable};
use super::{Measure, MetricsError, Result};
use crate::clf::{ClassifierMetrics, PredictionTable};
use crate::kg::{filter_rare_tails, tail_distribution, KnowledgeGraph, Population, SensitiveGrouping};
use crate::kge::{EmbeddingSet, HitsReport};

/// Mean of the per-tail scores; `None` for an empty list.
pub fn aggregate(per_tail: &[f64]) -> Option<f64> {
    if per_tail.is_empty() {
        None
    } else {
        Some(per_tail.iter().sum::<f64>() / per_tail.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub measures: Vec<Measure>,
    /// Tails held by fewer population entities are not audited.
    pub min_tail_count: usize,
    pub alpha: f64,
    pub head_sample_cap: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            measures: Measure::ALL.to_vec(),
            min_tail_count: 10,
            alpha: 0.1,
            head_sample_cap: 2000,
            seed: 0,
        }
    }
}

/// Mean of the defined per-tail scores. `value` is `None` when no tail was
/// defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub value: Option<f64>,
    pub defined_tails: usize,
    pub tails: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailCount {
    pub tail: String,
    pub count: usize,
}

/// DPD or PPD at one tail. Exactly one of `score` and `undefined` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryEntry {
    pub tail: String,
    /// Population group sizes; the score records how many were predicted.
    pub in_group: usize,
    pub out_group: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<BinaryBiasScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlbEntry {
    pub tail: String,
    /// Mean |TL| over target tails and sampled heads.
    pub score: f64,
    pub table: TLTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationStatus {
    Scored,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: String,
    pub status: RelationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub admissible_tails: Vec<TailCount>,
    #[serde(default)]
    pub scores: BTreeMap<Measure, AggregateScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dpd: Vec<BinaryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ppd: Vec<BinaryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tlb: Vec<TlbEntry>,
}

impl RelationReport {
    pub fn score(&self, measure: Measure) -> Option<f64> {
        self.scores.get(&measure).and_then(|s| s.value)
    }
}

/// Audit results for one embedding model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAudit {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits: Option<HitsReport>,
    pub relations: Vec<RelationReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasReport {
    pub measures: Vec<Measure>,
    pub models: Vec<ModelAudit>,
    pub provenance: BTreeMap<String, Value>,
    /// Seconds since the Unix epoch; the only field that varies between
    /// otherwise identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl BiasReport {
    pub fn merge(&mut self, other: BiasReport) {
        for m in other.measures {
            if !self.measures.contains(&m) {
                self.measures.push(m);
            }
        }
        self.models.extend(other.models);
        self.provenance.extend(other.provenance);
    }

    pub fn is_empty(&self) -> bool {
        self.models.iter().all(|m| m.relations.is_empty())
    }
}

/// Scores every candidate relation of `pop` under each requested measure.
///
/// Groupings are formed over the whole population; DPD and PPD are then
/// evaluated over the entities of `predictions`. `emb` must be indexed by
/// `kg`'s ids.
pub fn audit(
    kg: &KnowledgeGraph,
    emb: &EmbeddingSet,
    pop: &Population,
    predictions: Option<&PredictionTable>,
    cfg: &AuditConfig,
) -> Result<BiasReport> {
    if cfg.measures.is_empty() {
        return Err(MetricsError::NoMeasures);
    }
    if let Some(&m) = cfg.measures.iter().find(|m| m.needs_classifier()) {
        if predictions.is_none() {
            return Err(MetricsError::MissingPredictions(m));
        }
    }
    let wants_tlb = cfg.measures.contains(&Measure::Tlb);
    let heads = sample_heads(&pop.entities, cfg.head_sample_cap, cfg.seed);
    let target_tails: Vec<_> = tail_distribution(kg, pop.target_relation, pop)?
        .into_keys()
        .collect();

    let mut relations = Vec::new();
    for &rel in &pop.candidate_sensitive {
        let admissible = filter_rare_tails(kg, rel, cfg.min_tail_count, pop)?;
        let mut report = RelationReport {
            relation: kg.relation_label(rel).to_owned(),
            status: RelationStatus::Scored,
            note: None,
            admissible_tails: admissible
                .iter()
                .map(|&(t, count)| TailCount {
                    tail: kg.entity_label(t).to_owned(),
                    count,
                })
                .collect(),
            scores: BTreeMap::new(),
            dpd: Vec::new(),
            ppd: Vec::new(),
            tlb: Vec::new(),
        };
        if admissible.len() < 2 {
            report.status = RelationStatus::Skipped;
            report.note = Some(format!(
                "{} admissible tail(s) with at least {} holders; 2 are needed",
                admissible.len(),
                cfg.min_tail_count
            ));
            relations.push(report);
            continue;
        }
        for &measure in &cfg.measures {
            let mut values = Vec::new();
            match measure {
                Measure::Dpd | Measure::Ppd => {
                    let table = predictions.expect("checked above");
                    let f = if measure == Measure::Dpd { dpd_binary } else { ppd_binary };
                    let mut entries = Vec::new();
                    for &(tail, _) in &admissible {
                        let grouping = SensitiveGrouping::new(kg, rel, tail, pop);
                        let mut entry = BinaryEntry {
                            tail: kg.entity_label(tail).to_owned(),
                            in_group: grouping.in_group.len(),
                            out_group: grouping.out_group.len(),
                            score: None,
                            undefined: None,
                        };
                        match f(table, &grouping) {
                            Ok(s) => {
                                values.push(s.total);
                                entry.score = Some(s);
                            }
                            Err(e @ MetricsError::EmptyGroup(_)) => entry.undefined = Some(e.to_string()),
                            Err(e) => return Err(e),
                        }
                        entries.push(entry);
                    }
                    if measure == Measure::Dpd {
                        report.dpd = entries;
                    } else {
                        report.ppd = entries;
                    }
                }
                Measure::Tlb => {
                    for &(tail, _) in &admissible {
                        let table = tlb(emb, rel, tail, pop.target_relation, &target_tails, &heads, cfg.alpha)?;
                        let score = table.mean_abs();
                        values.push(score);
                        report.tlb.push(TlbEntry {
                            tail: kg.entity_label(tail).to_owned(),
                            score,
                            table,
                        });
                    }
                }
            }
            report.scores.insert(
                measure,
                AggregateScore {
                    value: aggregate(&values),
                    defined_tails: values.len(),
                    tails: admissible.len(),
                },
            );
        }
        relations.push(report);
    }
    if relations.iter().all(|r| r.status == RelationStatus::Skipped) {
        return Err(MetricsError::NoAdmissibleRelation);
    }

    let mut provenance = BTreeMap::new();
    provenance.insert("min_tail_count".into(), json!(cfg.min_tail_count));
    provenance.insert("tail_filter_scope".into(), json!("population"));
    provenance.insert("grouping_scope".into(), json!("population"));
    provenance.insert(
        "binarization".into(),
        json!("one-vs-rest per tail; holders of the tail are s=1 even if they hold others, non-holders of the relation are excluded"),
    );
    if wants_tlb {
        provenance.insert("tlb_alpha".into(), json!(cfg.alpha));
        provenance.insert("tlb_head_sample_cap".into(), json!(cfg.head_sample_cap));
        provenance.insert("tlb_heads_sampled".into(), json!(heads.len()));
        provenance.insert("tlb_target_tails".into(), json!(target_tails.len()));
        provenance.insert("tlb_step".into(), json!("gradient ascent on the sensitive triple score"));
        provenance.insert("tlb_aggregation".into(), json!("mean |TL| over target tails and sampled heads"));
    }
    if let Some(t) = predictions {
        provenance.insert("predicted_entities".into(), json!(t.len()));
    }
    Ok(BiasReport {
        measures: cfg.measures.clone(),
        models: vec![ModelAudit {
            model: emb.model().tag().to_owned(),
            classifier: None,
            hits: None,
            relations,
        }],
        provenance,
        timestamp: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clf::{PredictionRow, PredictionTable};
    use crate::kg::{build_graph, human_subgraph, prepare_labels, RawTriple};
    use crate::kge::{ModelKind, Norm};

    #[test]
    fn aggregate_is_the_mean() {
        assert_eq!(aggregate(&[0.2, 0.4]), Some(0.30000000000000004));
        assert_eq!(aggregate(&[0.127]), Some(0.127));
        assert_eq!(aggregate(&[]), None);
    }

    proptest::proptest! {
        #[test]
        fn constant_list_aggregates_to_the_constant(c in 0.0f64..4.0, n in 1usize..200) {
            let v = aggregate(&vec![c; n]).unwrap();
            proptest::prop_assert!((v - c).abs() <= 1e-12 * c.max(1.0));
        }
    }

    /// 40 people with a profession, gender over two tails, a single-tail
    /// relation and a relation held by nobody in the population.
    fn world() -> (KnowledgeGraph, Population, EmbeddingSet) {
        let mut raw = Vec::new();
        for i in 0..40 {
            let p = format!("p{i}");
            raw.push(RawTriple::new(&p, "profession", if i % 4 == 0 { "nurse" } else { "actor" }));
            raw.push(RawTriple::new(&p, "gender", if i % 2 == 0 { "female" } else { "male" }));
            raw.push(RawTriple::new(&p, "species", "human"));
        }
        raw.push(RawTriple::new("cat", "colour", "black"));
        let kg = build_graph(raw);
        let rels: Vec<_> = ["gender", "species", "colour"]
            .iter()
            .map(|r| kg.relation(r).unwrap())
            .collect();
        let pop = human_subgraph(&kg, kg.relation("profession").unwrap(), &rels).unwrap();
        let dim = 2;
        let emb = EmbeddingSet::from_parts(
            ModelKind::TransE,
            dim,
            Norm::L2,
            kg.entities().labels().to_vec(),
            kg.relations().labels().to_vec(),
            (0..kg.num_entities() * dim).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect(),
            (0..kg.num_relations() * dim).map(|i| ((i * 31) % 5) as f64 / 5.0).collect(),
        )
        .unwrap();
        (kg, pop, emb)
    }

    fn constant_predictions(kg: &KnowledgeGraph, pop: &Population) -> PredictionTable {
        let labels = prepare_labels(kg, pop.target_relation, 5, pop).unwrap();
        PredictionTable::new(
            labels.class_names(kg),
            pop.entities
                .iter()
                .map(|&e| PredictionRow {
                    entity: e,
                    truth: labels.class_of(e).unwrap(),
                    predicted: 0,
                })
                .collect(),
        )
    }

    #[test]
    fn constant_classifier_and_skip_rules() {
        let (kg, pop, emb) = world();
        let table = constant_predictions(&kg, &pop);
        let cfg = AuditConfig {
            min_tail_count: 5,
            ..AuditConfig::default()
        };
        let report = audit(&kg, &emb, &pop, Some(&table), &cfg).unwrap();
        let rels = &report.models[0].relations;
        assert_eq!(rels.len(), 3);
        assert_eq!(rels[0].relation, "gender");
        assert_eq!(rels[0].status, RelationStatus::Scored);
        assert_eq!(rels[0].score(Measure::Dpd), Some(0.0));
        assert_eq!(rels[0].dpd.len(), 2);
        assert!(rels[0].score(Measure::Tlb).unwrap() >= 0.0);
        assert_eq!(rels[0].tlb[0].table.rows.len(), 2);
        for skipped in &rels[1..] {
            assert_eq!(skipped.status, RelationStatus::Skipped);
            assert!(skipped.scores.is_empty());
        }
    }

    #[test]
    fn groups_missing_from_predictions_are_undefined() {
        let (kg, pop, emb) = world();
        let mut table = constant_predictions(&kg, &pop);
        // Keep only women among the predicted entities.
        let female = kg.entity("female").unwrap();
        let gender = kg.relation("gender").unwrap();
        table.rows.retain(|r| kg.tails(r.entity, gender).contains(&female));
        let cfg = AuditConfig {
            measures: vec![Measure::Dpd, Measure::Ppd],
            min_tail_count: 5,
            ..AuditConfig::default()
        };
        let report = audit(&kg, &emb, &pop, Some(&table), &cfg).unwrap();
        let g = &report.models[0].relations[0];
        assert!(g.dpd.iter().all(|e| e.undefined.is_some() && e.score.is_none()));
        let agg = g.scores[&Measure::Dpd];
        assert_eq!((agg.value, agg.defined_tails, agg.tails), (None, 0, 2));
        assert!(g.tlb.is_empty());
    }

    #[test]
    fn nothing_admissible_is_an_error() {
        let (kg, pop, emb) = world();
        let cfg = AuditConfig {
            measures: vec![Measure::Tlb],
            min_tail_count: 100,
            ..AuditConfig::default()
        };
        assert!(matches!(
            audit(&kg, &emb, &pop, None, &cfg),
            Err(MetricsError::NoAdmissibleRelation)
        ));
    }

    #[test]
    fn parity_measures_need_predictions() {
        let (kg, pop, emb) = world();
        assert!(matches!(
            audit(&kg, &emb, &pop, None, &AuditConfig::default()),
            Err(MetricsError::MissingPredictions(Measure::Dpd))
        ));
    }

    #[test]
    fn zero_alpha_gives_zero_tlb() {
        let (kg, pop, emb) = world();
        let cfg = AuditConfig {
            measures: vec![Measure::Tlb],
            min_tail_count: 5,
            alpha: 0.0,
            ..AuditConfig::default()
        };
        let report = audit(&kg, &emb, &pop, None, &cfg).unwrap();
        assert_eq!(report.models[0].relations[0].score(Measure::Tlb), Some(0.0));
        assert!(!report.provenance.contains_key("predicted_entities"));
    }
}
