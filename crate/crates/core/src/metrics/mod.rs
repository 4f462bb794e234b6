//! Bias measures over a trained classifier's predictions (demographic and
//! predictive parity distance) and directly over embeddings (translational
//! likelihood bias), their aggregation over the tails of a sensitive
//! relation, and the per-relation audit that ties them together.

mod audit;
mod parity;
mod translation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{
    aggregate, audit, AggregateScore, AuditConfig, BiasReport, BinaryEntry, ModelAudit,
    RelationReport, RelationStatus, TailCount, TlbEntry,
};
pub use parity::{dpd_binary, ppd_binary, BinaryBiasScore, LabelValue};
pub use translation::{sample_heads, tlb, translate_head, TLRow, TLTable};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("the {0} group has no members among the predicted entities")]
    EmptyGroup(&'static str),
    #[error("step size must be finite and non-negative, got {0}")]
    NegativeAlpha(f64),
    #[error("empty head sample")]
    EmptySample,
    #[error("empty target tail list")]
    NoTargetTails,
    #[error("no candidate relation has at least 2 admissible tails")]
    NoAdmissibleRelation,
    #[error("{0} requested but no prediction table was supplied")]
    MissingPredictions(Measure),
    #[error("at least one measure must be requested")]
    NoMeasures,
    #[error(transparent)]
    Embedding(#[from] crate::kge::KgeError),
    #[error(transparent)]
    Graph(#[from] crate::kg::KgError),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    /// Demographic parity distance.
    Dpd,
    /// Predictive parity distance.
    Ppd,
    /// Translational likelihood bias.
    Tlb,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Dpd, Measure::Ppd, Measure::Tlb];

    pub fn tag(self) -> &'static str {
        match self {
            Measure::Dpd => "DPD",
            Measure::Ppd => "PPD",
            Measure::Tlb => "TLB",
        }
    }

    /// Whether the measure is computed from classifier predictions.
    pub fn needs_classifier(self) -> bool {
        matches!(self, Measure::Dpd | Measure::Ppd)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "DPD" => Ok(Measure::Dpd),
            "PPD" => Ok(Measure::Ppd),
            "TLB" => Ok(Measure::Tlb),
            _ => Err(format!("unknown measure `{s}` (expected DPD, PPD or TLB)")),
        }
    }
}
