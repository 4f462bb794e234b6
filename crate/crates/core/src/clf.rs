//! Target-relation classifier over entity embeddings.
//!
//! Multinomial logistic regression (default) or a ReLU MLP, both fit by
//! full-batch gradient descent on class-weighted cross-entropy over
//! standardized features. Training is deterministic: logistic weights start
//! at zero and MLP weights come from a seeded Glorot-uniform draw.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, LabelMap};
use crate::kge::EmbeddingSet;

#[derive(Debug, Error)]
pub enum ClfError {
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("degenerate labels: the training set contains a single class")]
    DegenerateLabels,
    #[error("entity {0} has no class assignment")]
    Unlabeled(u32),
    #[error("entity {0} has no embedding")]
    MissingEmbedding(u32),
    #[error("input dimension {found} does not match classifier dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty prediction table")]
    EmptyTable,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {message}")]
    CsvRow { row: usize, message: String },
}

pub type Result<T, E = ClfError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassifierKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassWeighting {
    None,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// Hidden layer widths; only read for [`ClassifierKind::Mlp`].
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Logistic,
            hidden_sizes: vec![64],
            epochs: 300,
            learning_rate: 0.1,
            class_weighting: ClassWeighting::Balanced,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ClfError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ClfError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.kind == ClassifierKind::Mlp
            && (self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0))
        {
            return Err(ClfError::InvalidConfig(
                "MLP hidden sizes must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    /// `x` is `n × inputs`; returns `n × outputs`.
    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.outputs];
        for i in 0..n {
            let xi = &x[i * self.inputs..(i + 1) * self.inputs];
            for o in 0..self.outputs {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out[i * self.outputs + o] =
                    self.bias[o] + w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    config: ClassifierConfig,
    num_classes: usize,
    input_dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<Dense>,
}

impl Classifier {
    /// An untrained logistic model with all parameters zero.
    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        Self {
            config: ClassifierConfig::default(),
            num_classes,
            input_dim,
            mean: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            layers: vec![Dense::zeros(input_dim, num_classes)],
        }
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn standardize(&self, x: &mut [f64]) {
        for row in x.chunks_mut(self.input_dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Returns the activations of every layer, the first being the input.
    fn forward_all(&self, x: Vec<f64>, n: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().unwrap(), n);
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Class logits for one raw (unstandardized) feature vector.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim {
            return Err(ClfError::DimMismatch {
                expected: self.input_dim,
                found: features.len(),
            });
        }
        let mut x = features.to_vec();
        self.standardize(&mut x);
        Ok(self.forward_all(x, 1).pop().unwrap())
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let logits = self.logits(features)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

fn gather_features(emb: &EmbeddingSet, entities: &[EntityId]) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(entities.len() * emb.entity_width());
    for &e in entities {
        x.extend_from_slice(emb.entity(e).map_err(|_| ClfError::MissingEmbedding(e.0))?);
    }
    Ok(x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn train_classifier(
    emb: &EmbeddingSet,
    train_entities: &[EntityId],
    labels: &LabelMap,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    if train_entities.is_empty() {
        return Err(ClfError::EmptyTrainSet);
    }
    let y = train_entities
        .iter()
        .map(|&e| labels.class_of(e).ok_or(ClfError::Unlabeled(e.0)))
        .collect::<Result<Vec<usize>>>()?;
    let c = labels.num_classes();
    let mut counts = vec![0usize; c];
    for &k in &y {
        counts[k] += 1;
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(ClfError::DegenerateLabels);
    }
    let n = y.len();
    let weights: Vec<f64> = match cfg.class_weighting {
        ClassWeighting::None => vec![1.0; n],
        ClassWeighting::Balanced => y
            .iter()
            .map(|&k| n as f64 / (present as f64 * counts[k] as f64))
            .collect(),
    };

    let d = emb.entity_width();
    let mut x = gather_features(emb, train_entities)?;
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks(d) {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 0.0 { sd } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = match cfg.kind {
        ClassifierKind::Logistic => vec![Dense::zeros(d, c)],
        ClassifierKind::Mlp => {
            let mut sizes = vec![d];
            sizes.extend(&cfg.hidden_sizes);
            sizes.push(c);
            sizes
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], &mut rng))
                .collect()
        }
    };
    let mut model = Classifier {
        config: cfg.clone(),
        num_classes: c,
        input_dim: d,
        mean,
        scale,
        layers,
    };
    model.standardize(&mut x);

    for _ in 0..cfg.epochs {
        let acts = model.forward_all(x.clone(), n);
        // delta = w_i (softmax - onehot) / n, the gradient of the weighted mean loss
        let mut delta = acts.last().unwrap().clone();
        for (i, row) in delta.chunks_mut(c).enumerate() {
            softmax_in_place(row);
            row[y[i]] -= 1.0;
            row.iter_mut().for_each(|v| *v *= weights[i] / n as f64);
        }
        for li in (0..model.layers.len()).rev() {
            let input = &acts[li];
            let layer = &model.layers[li];
            let (ins, outs) = (layer.inputs, layer.outputs);
            let mut gw = vec![0.0; ins * outs];
            let mut gb = vec![0.0; outs];
            for i in 0..n {
                let di = &delta[i * outs..(i + 1) * outs];
                let xi = &input[i * ins..(i + 1) * ins];
                for o in 0..outs {
                    gb[o] += di[o];
                    let g = &mut gw[o * ins..(o + 1) * ins];
                    for (gv, xv) in g.iter_mut().zip(xi) {
                        *gv += di[o] * xv;
                    }
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; n * ins];
                for i in 0..n {
                    let di = &delta[i * outs..(i + 1) * outs];
                    let pi = &mut prev[i * ins..(i + 1) * ins];
                    for o in 0..outs {
                        let w = &layer.weights[o * ins..(o + 1) * ins];
                        for (p, wv) in pi.iter_mut().zip(w) {
                            *p += di[o] * wv;
                        }
                    }
                    // ReLU derivative on the stored post-activation
                    for (p, a) in pi.iter_mut().zip(&input[i * ins..(i + 1) * ins]) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
            let layer = &mut model.layers[li];
            for (w, g) in layer.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub entity: EntityId,
    pub truth: usize,
    pub predicted: usize,
}

/// True and predicted class per test entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub classes: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn new(classes: Vec<String>, rows: Vec<PredictionRow>) -> Self {
        Self { classes, rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// CSV with header `entity,true,predicted`, using entity labels and
    /// class names.
    pub fn write_csv<W: Write>(&self, writer: W, kg: &KnowledgeGraph) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["entity", "true", "predicted"])?;
        for r in &self.rows {
            w.write_record([
                kg.entity_label(r.entity),
                &self.classes[r.truth],
                &self.classes[r.predicted],
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, kg: &KnowledgeGraph, classes: Vec<String>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let class_index = |name: &str, row: usize| {
            classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| ClfError::CsvRow {
                    row,
                    message: format!("unknown class `{name}`"),
                })
        };
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            if rec.len() != 3 {
                return Err(ClfError::CsvRow {
                    row,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let entity = kg.entity(&rec[0]).ok_or_else(|| ClfError::CsvRow {
                row,
                message: format!("unknown entity `{}`", &rec[0]),
            })?;
            rows.push(PredictionRow {
                entity,
                truth: class_index(&rec[1], row)?,
                predicted: class_index(&rec[2], row)?,
            });
        }
        Ok(Self { classes, rows })
    }
}

pub fn predict_table(
    clf: &Classifier,
    emb: &EmbeddingSet,
    test_entities: &[EntityId],
    labels: &LabelMap,
    class_names: Vec<String>,
) -> Result<PredictionTable> {
    if emb.entity_width() != clf.input_dim() {
        return Err(ClfError::DimMismatch {
            expected: clf.input_dim(),
            found: emb.entity_width(),
        });
    }
    let rows = test_entities
        .iter()
        .map(|&e| {
            let truth = labels.class_of(e).ok_or(ClfError::Unlabeled(e.0))?;
            let x = emb.entity(e).map_err(|_| ClfError::MissingEmbedding(e.0))?;
            Ok(PredictionRow {
                entity: e,
                truth,
                predicted: clf.predict(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable::new(class_names, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub num_rows: usize,
    pub num_classes: usize,
}

/// Balanced accuracy averages recall over the classes present among the
/// true labels.
pub fn evaluate_classifier(table: &PredictionTable) -> Result<ClassifierMetrics> {
    if table.is_empty() {
        return Err(ClfError::EmptyTable);
    }
    let c = table
        .classes
        .len()
        .max(table.rows.iter().map(|r| r.truth.max(r.predicted) + 1).max().unwrap_or(0));
    let mut support = vec![0usize; c];
    let mut correct = vec![0usize; c];
    for r in &table.rows {
        support[r.truth] += 1;
        if r.truth == r.predicted {
            correct[r.truth] += 1;
        }
    }
    let total_correct: usize = correct.iter().sum();
    let recalls: Vec<f64> = support
        .iter()
        .zip(&correct)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &k)| k as f64 / s as f64)
        .collect();
    Ok(ClassifierMetrics {
        accuracy: total_correct as f64 / table.len() as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        num_rows: table.len(),
        num_classes: recalls.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_graph, human_subgraph, prepare_labels, RawTriple};
    use crate::kge::{ModelKind, Norm};

    /// 100 entities, half labelled A at the all-ones vector and half B at
    /// the all-minus-ones vector.
    pub(crate) fn separable(dim: usize) -> (KnowledgeGraph, EmbeddingSet, LabelMap, Vec<EntityId>) {
        let mut raw = Vec::new();
        for i in 0..50 {
            raw.push(RawTriple::new(format!("a{i}"), "profession", "A"));
            raw.push(RawTriple::new(format!("b{i}"), "profession", "B"));
        }
        let kg = build_graph(raw);
        let prof = kg.relation("profession").unwrap();
        let pop = human_subgraph(&kg, prof, &[]).unwrap();
        let labels = prepare_labels(&kg, prof, 2, &pop).unwrap();
        let mut data = Vec::new();
        for label in kg.entities().labels() {
            let v = match label.chars().next() {
                Some('a') => 1.0,
                Some('b') => -1.0,
                _ => 0.0,
            };
            data.extend(std::iter::repeat_n(v, dim));
        }
        let emb = EmbeddingSet::from_parts(
            ModelKind::DistMult,
            dim,
            Norm::L2,
            kg.entities().labels().to_vec(),
            kg.relations().labels().to_vec(),
            data,
            vec![0.0; dim],
        )
        .unwrap();
        (kg, emb, labels, pop.entities)
    }

    #[test]
    fn separable_training_accuracy_is_one() {
        let (kg, emb, labels, pop) = separable(4);
        for kind in [ClassifierKind::Logistic, ClassifierKind::Mlp] {
            let cfg = ClassifierConfig {
                kind,
                hidden_sizes: vec![8],
                ..ClassifierConfig::default()
            };
            let clf = train_classifier(&emb, &pop, &labels, &cfg).unwrap();
            let table = predict_table(&clf, &emb, &pop, &labels, labels.class_names(&kg)).unwrap();
            assert!(table.rows.iter().all(|r| r.truth == r.predicted), "{kind:?}");
            assert_eq!(evaluate_classifier(&table).unwrap().accuracy, 1.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (_, emb, labels, pop) = separable(3);
        let cfg = ClassifierConfig {
            kind: ClassifierKind::Mlp,
            hidden_sizes: vec![5],
            epochs: 20,
            seed: 9,
            ..ClassifierConfig::default()
        };
        let a = train_classifier(&emb, &pop, &labels, &cfg).unwrap();
        let b = train_classifier(&emb, &pop, &labels, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_single_class_training_sets() {
        let (kg, emb, labels, _) = separable(2);
        let cfg = ClassifierConfig::default();
        assert!(matches!(
            train_classifier(&emb, &[], &labels, &cfg),
            Err(ClfError::EmptyTrainSet)
        ));
        let only_a: Vec<EntityId> = (0..10).map(|i| kg.entity(&format!("a{i}")).unwrap()).collect();
        assert!(matches!(
            train_classifier(&emb, &only_a, &labels, &cfg),
            Err(ClfError::DegenerateLabels)
        ));
    }

    #[test]
    fn zero_model_predicts_first_class() {
        let (kg, emb, labels, pop) = separable(3);
        let clf = Classifier::zeros(3, labels.num_classes());
        let table = predict_table(&clf, &emb, &pop, &labels, labels.class_names(&kg)).unwrap();
        assert!(table.rows.iter().all(|r| r.predicted == 0));
    }

    #[test]
    fn empty_test_set_gives_empty_table() {
        let (kg, emb, labels, pop) = separable(2);
        let clf = train_classifier(&emb, &pop, &labels, &ClassifierConfig::default()).unwrap();
        let table = predict_table(&clf, &emb, &[], &labels, labels.class_names(&kg)).unwrap();
        assert!(table.is_empty());
        assert!(matches!(evaluate_classifier(&table), Err(ClfError::EmptyTable)));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (kg, emb, labels, pop) = separable(2);
        let clf = Classifier::zeros(5, labels.num_classes());
        assert!(matches!(
            predict_table(&clf, &emb, &pop, &labels, labels.class_names(&kg)),
            Err(ClfError::DimMismatch { expected: 5, found: 2 })
        ));
    }

    fn table(pairs: &[(usize, usize)]) -> PredictionTable {
        PredictionTable::new(
            vec!["A".into(), "B".into()],
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(truth, predicted))| PredictionRow {
                    entity: EntityId(i as u32),
                    truth,
                    predicted,
                })
                .collect(),
        )
    }

    #[test]
    fn hand_counted_metrics() {
        let m = evaluate_classifier(&table(&[(0, 0), (0, 1), (1, 1)])).unwrap();
        assert_eq!(m.accuracy, 2.0 / 3.0);
        assert_eq!(m.balanced_accuracy, 0.75);

        let m = evaluate_classifier(&table(&[(0, 0), (1, 1)])).unwrap();
        assert_eq!((m.accuracy, m.balanced_accuracy), (1.0, 1.0));

        let m = evaluate_classifier(&table(&[(1, 1), (1, 1)])).unwrap();
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.num_classes, 1);
    }

    #[test]
    fn balanced_table_has_equal_accuracies() {
        let m = evaluate_classifier(&table(&[(0, 0), (0, 1), (1, 1), (1, 0), (0, 0), (1, 1)])).unwrap();
        assert!((m.accuracy - m.balanced_accuracy).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let (kg, emb, labels, pop) = separable(2);
        let clf = train_classifier(&emb, &pop, &labels, &ClassifierConfig::default()).unwrap();
        let names = labels.class_names(&kg);
        let t = predict_table(&clf, &emb, &pop[..6], &labels, names.clone()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &kg).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("entity,true,predicted\n"));
        assert_eq!(PredictionTable::read_csv(buf.as_slice(), &kg, names).unwrap(), t);
    }
}
