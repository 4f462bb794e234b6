//! Rendering a [`BiasReport`] as JSON, a CSV relation × measure matrix, or
//! markdown tables: aggregated scores per model, scores per relation across
//! models, and the target tails most moved by translating towards each of a
//! relation's two most common tails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{BiasReport, Measure, ModelAudit, RelationReport, RelationStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            _ => Err(format!("unknown format `{s}` (expected csv, json or md)")),
        }
    }
}

pub const UNDEFINED: &str = "undefined";
pub const SKIPPED: &str = "skipped";

pub fn render_json(report: &BiasReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn cell(rel: &RelationReport, m: Measure) -> Option<String> {
    if rel.status == RelationStatus::Skipped {
        return Some(SKIPPED.into());
    }
    let agg = rel.scores.get(&m)?;
    Some(agg.value.map_or_else(|| UNDEFINED.into(), |v| v.to_string()))
}

/// One row per (model, relation) and one column per measure. Measures that
/// were not requested have no column.
pub fn render_csv(report: &BiasReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_owned(), "relation".into(), "status".into()];
    header.extend(report.measures.iter().map(|m| m.tag().to_owned()));
    w.write_record(&header).expect("in-memory write");
    for model in &report.models {
        for rel in &model.relations {
            let mut row = vec![
                model.model.clone(),
                rel.relation.clone(),
                match rel.status {
                    RelationStatus::Scored => "scored".into(),
                    RelationStatus::Skipped => SKIPPED.into(),
                },
            ];
            row.extend(report.measures.iter().map(|&m| cell(rel, m).unwrap_or_default()));
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn fmt_score(rel: &RelationReport, m: Measure) -> String {
    match cell(rel, m) {
        Some(s) if s == SKIPPED || s == UNDEFINED => s,
        Some(_) => format!("{:.3}", rel.score(m).unwrap()),
        None => String::new(),
    }
}

/// Scored relations by descending `m`, undefined after them, skipped last.
fn ranked(model: &ModelAudit, m: Measure) -> Vec<&RelationReport> {
    let mut rels: Vec<&RelationReport> = model.relations.iter().collect();
    let key = |r: &RelationReport| match (r.status, r.score(m)) {
        (RelationStatus::Scored, Some(v)) => (0, -v),
        (RelationStatus::Scored, None) => (1, 0.0),
        (RelationStatus::Skipped, _) => (2, 0.0),
    };
    rels.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.relation.cmp(&b.relation))
    });
    rels
}

fn table_header(out: &mut String, cols: &[String]) {
    writeln!(out, "| {} |", cols.join(" | ")).unwrap();
    let rule: Vec<&str> = cols
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { "---" } else { "---:" })
        .collect();
    writeln!(out, "|{}|", rule.join("|")).unwrap();
}

pub fn render_markdown(report: &BiasReport, top_n: usize) -> String {
    let mut out = String::from("# Bias scores\n\n");
    if let Some(t) = report.provenance.get("target_relation").and_then(|v| v.as_str()) {
        writeln!(out, "Target relation: `{t}`\n").unwrap();
    }
    if report.is_empty() {
        out.push_str("No relation was scored.\n\n");
        if let Some(note) = report.provenance.get("note").and_then(|v| v.as_str()) {
            writeln!(out, "{note}\n").unwrap();
        }
    }
    let Some(&first) = report.measures.first() else {
        return out;
    };

    for model in report.models.iter().filter(|m| !m.relations.is_empty()) {
        writeln!(out, "## Aggregated scores, {}\n", model.model).unwrap();
        let mut cols = vec!["Relation".to_owned()];
        cols.extend(report.measures.iter().map(|m| m.tag().to_owned()));
        table_header(&mut out, &cols);
        for rel in ranked(model, first) {
            let cells: Vec<String> = report.measures.iter().map(|&m| fmt_score(rel, m)).collect();
            writeln!(out, "| {} | {} |", rel.relation, cells.join(" | ")).unwrap();
        }
        out.push('\n');
        if let Some(c) = &model.classifier {
            writeln!(
                out,
                "Classifier accuracy {:.3}, balanced accuracy {:.3} over {} test entities.\n",
                c.accuracy, c.balanced_accuracy, c.num_rows
            )
            .unwrap();
        }
    }

    let scored: Vec<&ModelAudit> = report.models.iter().filter(|m| !m.relations.is_empty()).collect();
    if scored.len() > 1 {
        for &m in &report.measures {
            writeln!(out, "## {m} by embedding\n").unwrap();
            let mut cols = vec!["Relation".to_owned()];
            cols.extend(scored.iter().map(|a| a.model.clone()));
            table_header(&mut out, &cols);
            let mut names: Vec<&str> = Vec::new();
            for a in &scored {
                for r in &a.relations {
                    if !names.contains(&r.relation.as_str()) {
                        names.push(&r.relation);
                    }
                }
            }
            for name in names {
                let cells: Vec<String> = scored
                    .iter()
                    .map(|a| {
                        a.relations
                            .iter()
                            .find(|r| r.relation == name)
                            .map_or_else(String::new, |r| fmt_score(r, m))
                    })
                    .collect();
                writeln!(out, "| {name} | {} |", cells.join(" | ")).unwrap();
            }
            out.push('\n');
        }
    }

    if report.measures.contains(&Measure::Tlb) && top_n > 0 {
        for model in &scored {
            for rel in model.relations.iter().filter(|r| r.tlb.len() >= 2) {
                let (a, b) = (&rel.tlb[0], &rel.tlb[1]);
                writeln!(
                    out,
                    "## Highest translational likelihood, {}, {}\n",
                    model.model, rel.relation
                )
                .unwrap();
                table_header(
                    &mut out,
                    &[
                        "#".to_owned(),
                        format!("towards {}", a.tail),
                        format!("towards {}", b.tail),
                    ],
                );
                let (ta, tb) = (a.table.top(top_n), b.table.top(top_n));
                for i in 0..ta.len().max(tb.len()) {
                    let show = |rows: &[&crate::metrics::TLRow]| {
                        rows.get(i)
                            .map_or_else(String::new, |r| format!("{} ({:.3})", r.target_label, r.mean_tl))
                    };
                    writeln!(out, "| {} | {} | {} |", i + 1, show(&ta), show(&tb)).unwrap();
                }
                out.push('\n');
            }
        }
    }

    if !report.provenance.is_empty() {
        out.push_str("## Provenance\n\n");
        for (k, v) in &report.provenance {
            writeln!(out, "- {k}: {v}").unwrap();
        }
    }
    out
}

/// Writes `report.<ext>` for each format into `out_dir`, creating it if
/// needed, and returns the paths written.
pub fn emit_report(
    report: &BiasReport,
    formats: &[ReportFormat],
    out_dir: &Path,
    top_n: usize,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = out_dir.join(format!("report.{}", f.extension()));
        let body = match f {
            ReportFormat::Json => render_json(report),
            ReportFormat::Csv => render_csv(report),
            ReportFormat::Md => render_markdown(report, top_n),
        };
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
