//! Two-file embedding format: a JSON header (`<stem>.json`) and a TSV body
//! (`<stem>.tsv`) with one `label\tv1 v2 ... vn` row per entity, then per
//! relation. Values are written with 17 significant digits so that a save
//! followed by a load reproduces every bit.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, KgeError, ModelKind, Norm, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub model: String,
    pub dim: usize,
    pub entity_count: usize,
    pub relation_count: usize,
    #[serde(default, skip_serializing_if = "is_l2")]
    pub norm: Norm,
}

fn is_l2(n: &Norm) -> bool {
    *n == Norm::L2
}

/// `foo`, `foo.json` and `foo.tsv` all name the same pair of files.
fn file_pair(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("tsv") => path.with_extension(""),
        _ => path.to_owned(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("tsv"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KgeError + '_ {
    move |source| KgeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Returns the header and body paths written.
pub fn save_embeddings(emb: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let (header_path, body_path) = file_pair(path.as_ref());
    for label in emb.entity_labels().iter().chain(emb.relation_labels()) {
        if label.contains(['\t', '\n', '\r']) {
            return Err(KgeError::InvalidConfig(format!(
                "label {label:?} contains a tab or newline"
            )));
        }
    }
    let header = EmbeddingHeader {
        model: emb.model().tag().to_owned(),
        dim: emb.dim(),
        entity_count: emb.num_entities(),
        relation_count: emb.num_relations(),
        norm: emb.norm(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&header_path, json + "\n").map_err(io_err(&header_path))?;

    let file = File::create(&body_path).map_err(io_err(&body_path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    let rows = emb
        .entity_labels()
        .iter()
        .zip(emb.entity_data().chunks(emb.entity_width()))
        .chain(
            emb.relation_labels()
                .iter()
                .zip(emb.relation_data().chunks(emb.relation_width())),
        );
    for (label, values) in rows {
        line.clear();
        line.push_str(label);
        line.push('\t');
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v:.16e}").expect("write to string");
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(&body_path))?;
    }
    w.flush().map_err(io_err(&body_path))?;
    Ok((header_path, body_path))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let (header_path, body_path) = file_pair(path.as_ref());
    let text = fs::read_to_string(&header_path).map_err(io_err(&header_path))?;
    let header: EmbeddingHeader = serde_json::from_str(&text).map_err(|e| KgeError::BadHeader {
        path: header_path.display().to_string(),
        message: e.to_string(),
    })?;
    let model: ModelKind = header.model.parse()?;
    if header.dim == 0 {
        return Err(KgeError::BadHeader {
            path: header_path.display().to_string(),
            message: "dim must be positive".into(),
        });
    }
    let ew = model.entity_width(header.dim);
    let rw = model.relation_width(header.dim);
    let body_name = body_path.display().to_string();
    let bad_row = |row: usize, message: String| KgeError::BadRow {
        path: body_name.clone(),
        row,
        message,
    };

    let reader = BufReader::new(File::open(&body_path).map_err(io_err(&body_path))?);
    let mut entity_labels = Vec::with_capacity(header.entity_count);
    let mut relation_labels = Vec::with_capacity(header.relation_count);
    let mut entity_data = Vec::with_capacity(header.entity_count * ew);
    let mut relation_data = Vec::with_capacity(header.relation_count * rw);
    let mut rows = 0;
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(io_err(&body_path))?;
        if line.is_empty() {
            continue;
        }
        let (label, values) = line
            .split_once('\t')
            .ok_or_else(|| bad_row(row, "missing tab after label".into()))?;
        let is_entity = rows < header.entity_count;
        if rows >= header.entity_count + header.relation_count {
            return Err(bad_row(row, "more rows than the header declares".into()));
        }
        let expected = if is_entity { ew } else { rw };
        let parsed = values
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| bad_row(row, format!("cannot parse `{s}` as a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if parsed.len() != expected {
            return Err(bad_row(
                row,
                format!("expected {expected} values, found {}", parsed.len()),
            ));
        }
        if is_entity {
            entity_labels.push(label.to_owned());
            entity_data.extend(parsed);
        } else {
            relation_labels.push(label.to_owned());
            relation_data.extend(parsed);
        }
        rows += 1;
    }
    if rows != header.entity_count + header.relation_count {
        return Err(bad_row(
            rows + 1,
            format!(
                "header declares {} rows, body has {rows}",
                header.entity_count + header.relation_count
            ),
        ));
    }
    EmbeddingSet::from_parts(
        model,
        header.dim,
        header.norm,
        entity_labels,
        relation_labels,
        entity_data,
        relation_data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(model: ModelKind, dim: usize, values: &[f64]) -> EmbeddingSet {
        let ew = model.entity_width(dim);
        let rw = model.relation_width(dim);
        let n_ent = 3;
        let mut it = values.iter().cycle().copied();
        EmbeddingSet::from_parts(
            model,
            dim,
            Norm::L2,
            (0..n_ent).map(|i| format!("/m/0{i}")).collect(),
            vec!["/people/person/gender".into(), "r2".into()],
            (&mut it).take(n_ent * ew).collect(),
            it.take(2 * rw).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb = sample(ModelKind::ComplEx, 2, &[0.1, -1.0 / 3.0, 1e-300, 12345.678, -0.0]);
        let (h, b) = save_embeddings(&emb, dir.path().join("complex")).unwrap();
        assert!(h.ends_with("complex.json") && b.ends_with("complex.tsv"));
        assert_eq!(load_embeddings(&b).unwrap(), emb);
        assert_eq!(load_embeddings(dir.path().join("complex")).unwrap(), emb);
    }

    #[test]
    fn short_row_reports_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("e");
        fs::write(
            stem.with_extension("json"),
            r#"{"model":"TRANSE","dim":4,"entity_count":2,"relation_count":0}"#,
        )
        .unwrap();
        fs::write(stem.with_extension("tsv"), "a\t1 2 3 4\nb\t1 2 3\n").unwrap();
        let err = load_embeddings(&stem).unwrap_err();
        assert!(matches!(err, KgeError::BadRow { row: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_model_tag() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("e");
        fs::write(
            stem.with_extension("json"),
            r#"{"model":"CONVE","dim":4,"entity_count":0,"relation_count":0}"#,
        )
        .unwrap();
        fs::write(stem.with_extension("tsv"), "").unwrap();
        let err = load_embeddings(&stem).unwrap_err();
        assert!(err.to_string().contains("unsupported model"));
    }

    #[test]
    fn row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("e");
        fs::write(
            stem.with_extension("json"),
            r#"{"model":"DISTMULT","dim":1,"entity_count":2,"relation_count":1}"#,
        )
        .unwrap();
        fs::write(stem.with_extension("tsv"), "a\t1\nb\t2\n").unwrap();
        assert!(load_embeddings(&stem).is_err());
    }

    #[test]
    fn l1_norm_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb = EmbeddingSet::from_parts(
            ModelKind::TransE,
            1,
            Norm::L1,
            vec!["a".into()],
            vec!["r".into()],
            vec![0.5],
            vec![0.25],
        )
        .unwrap();
        let (h, _) = save_embeddings(&emb, dir.path().join("l1")).unwrap();
        assert!(fs::read_to_string(h).unwrap().contains("\"norm\": \"L1\""));
        assert_eq!(load_embeddings(dir.path().join("l1")).unwrap().norm(), Norm::L1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_finite_values_round_trip(
            model in prop::sample::select(ModelKind::ALL.to_vec()),
            values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..24),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let emb = sample(model, 3, &values);
            save_embeddings(&emb, dir.path().join("p")).unwrap();
            let back = load_embeddings(dir.path().join("p")).unwrap();
            let bits = |e: &EmbeddingSet| e.entity_data().iter().chain(e.relation_data()).map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&emb));
        }
    }
}
