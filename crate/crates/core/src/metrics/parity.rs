use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::clf::{PredictionRow, PredictionTable};
use crate::kg::{EntityId, RelationId, SensitiveGrouping};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelValue {
    pub label: String,
    pub value: f64,
    /// Set when a conditional probability had no support in one of the
    /// groups, so the label contributes 0 structurally rather than by
    /// measured parity.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_support: bool,
}

/// A parity distance for one binarized sensitive attribute (s = 1 means the
/// entity holds `tail`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryBiasScore {
    pub relation: RelationId,
    pub tail: EntityId,
    /// Group members that appear in the prediction table.
    pub in_group_size: usize,
    pub out_group_size: usize,
    pub per_label: Vec<LabelValue>,
    pub total: f64,
}

fn split_rows<'a>(
    table: &'a PredictionTable,
    grouping: &SensitiveGrouping,
) -> Result<(Vec<&'a PredictionRow>, Vec<&'a PredictionRow>)> {
    let ins: HashSet<EntityId> = grouping.in_group.iter().copied().collect();
    let outs: HashSet<EntityId> = grouping.out_group.iter().copied().collect();
    let g1: Vec<_> = table.rows.iter().filter(|r| ins.contains(&r.entity)).collect();
    let g0: Vec<_> = table.rows.iter().filter(|r| outs.contains(&r.entity)).collect();
    if g1.is_empty() {
        return Err(MetricsError::EmptyGroup("s=1"));
    }
    if g0.is_empty() {
        return Err(MetricsError::EmptyGroup("s=0"));
    }
    Ok((g1, g0))
}

fn num_labels(table: &PredictionTable) -> usize {
    table
        .rows
        .iter()
        .map(|r| r.truth.max(r.predicted) + 1)
        .max()
        .unwrap_or(0)
        .max(table.classes.len())
}

fn label_name(table: &PredictionTable, a: usize) -> String {
    table.classes.get(a).cloned().unwrap_or_else(|| a.to_string())
}

fn finish(
    grouping: &SensitiveGrouping,
    g1: usize,
    g0: usize,
    per_label: Vec<LabelValue>,
) -> BinaryBiasScore {
    let total = per_label.iter().map(|l| l.value).sum();
    BinaryBiasScore {
        relation: grouping.relation,
        tail: grouping.tail,
        in_group_size: g1,
        out_group_size: g0,
        per_label,
        total,
    }
}

/// Σₐ |P[ŷ=a | s=1] − P[ŷ=a | s=0]| over the table's entities.
pub fn dpd_binary(table: &PredictionTable, grouping: &SensitiveGrouping) -> Result<BinaryBiasScore> {
    let (g1, g0) = split_rows(table, grouping)?;
    let c = num_labels(table);
    let mut n1 = vec![0usize; c];
    let mut n0 = vec![0usize; c];
    g1.iter().for_each(|r| n1[r.predicted] += 1);
    g0.iter().for_each(|r| n0[r.predicted] += 1);
    let per_label = (0..c)
        .map(|a| LabelValue {
            label: label_name(table, a),
            value: (n1[a] as f64 / g1.len() as f64 - n0[a] as f64 / g0.len() as f64).abs(),
            empty_support: false,
        })
        .collect();
    Ok(finish(grouping, g1.len(), g0.len(), per_label))
}

/// Σₐ |P[ŷ=a | y=a, s=1] − P[ŷ=a | y=a, s=0]|. A label whose true class is
/// absent from either group contributes 0 and is flagged.
pub fn ppd_binary(table: &PredictionTable, grouping: &SensitiveGrouping) -> Result<BinaryBiasScore> {
    let (g1, g0) = split_rows(table, grouping)?;
    let c = num_labels(table);
    let recall_counts = |rows: &[&PredictionRow]| {
        let mut support = vec![0usize; c];
        let mut hit = vec![0usize; c];
        for r in rows {
            support[r.truth] += 1;
            if r.predicted == r.truth {
                hit[r.truth] += 1;
            }
        }
        (support, hit)
    };
    let (s1, h1) = recall_counts(&g1);
    let (s0, h0) = recall_counts(&g0);
    let per_label = (0..c)
        .map(|a| {
            let empty = s1[a] == 0 || s0[a] == 0;
            let value = if empty {
                0.0
            } else {
                (h1[a] as f64 / s1[a] as f64 - h0[a] as f64 / s0[a] as f64).abs()
            };
            LabelValue {
                label: label_name(table, a),
                value,
                empty_support: empty,
            }
        })
        .collect();
    Ok(finish(grouping, g1.len(), g0.len(), per_label))
}
