//! The end-to-end run: triples → population → labels → embeddings →
//! classifier → audit → report, driven by one JSON [`RunConfig`].

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clf::{
    evaluate_classifier, predict_table, train_classifier, Classifier, ClassifierConfig, ClfError,
    PredictionTable,
};
use crate::kg::{
    build_graph, human_subgraph, parse_triples, prepare_labels, split_population, KgError,
    KnowledgeGraph, LabelMap, Population, RawTriple, RelationId, Split, Triple,
};
use crate::kge::{
    evaluate_hits_at_k, load_embeddings, train_embeddings_on, EmbeddingSet, KgeError, TrainConfig,
};
use crate::metrics::{audit, AuditConfig, BiasReport, Measure, MetricsError, ModelAudit};
use crate::report::{emit_report, ReportFormat};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Unreadable or unsuitable input data.
    Data,
    Internal,
}

/// A failure in one named stage of the run.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub source: Box<dyn StdError + Send + Sync>,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl StdError for PipelineError {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        Some(self.source.as_ref())
    }
}

impl PipelineError {
    pub fn new(stage: &'static str, kind: ErrorKind, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        Self {
            stage,
            kind,
            source: source.into(),
        }
    }

    pub fn usage(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, ErrorKind::Usage, message.into())
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

fn kg_kind(e: &KgError) -> ErrorKind {
    match e {
        KgError::InvalidArgument(_) => ErrorKind::Usage,
        _ => ErrorKind::Data,
    }
}

fn kge_kind(e: &KgeError) -> ErrorKind {
    match e {
        KgeError::InvalidConfig(_) => ErrorKind::Usage,
        KgeError::NonFinite(_) | KgeError::UnknownEntity(_) | KgeError::UnknownRelation(_) => ErrorKind::Internal,
        _ => ErrorKind::Data,
    }
}

fn clf_kind(e: &ClfError) -> ErrorKind {
    match e {
        ClfError::InvalidConfig(_) => ErrorKind::Usage,
        ClfError::EmptyTrainSet | ClfError::DegenerateLabels | ClfError::Csv(_) | ClfError::CsvRow { .. } => {
            ErrorKind::Data
        }
        _ => ErrorKind::Internal,
    }
}

impl<T> Stage<T> for Result<T, KgError> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, kg_kind(&e), e))
    }
}

impl<T> Stage<T> for Result<T, KgeError> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, kge_kind(&e), e))
    }
}

impl<T> Stage<T> for Result<T, ClfError> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, clf_kind(&e), e))
    }
}

impl<T> Stage<T> for Result<T, MetricsError> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| {
            let kind = match &e {
                MetricsError::Graph(g) => kg_kind(g),
                MetricsError::NoMeasures | MetricsError::NegativeAlpha(_) => ErrorKind::Usage,
                _ => ErrorKind::Internal,
            };
            PipelineError::new(stage, kind, e)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Tab-separated triple files. Embeddings are trained on `train` only.
    Files {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        valid: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
    Synth(SynthConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensitiveRelations {
    /// Every relation held by enough of the population, except the target.
    Auto(Keyword),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Train(TrainConfig),
    /// A saved embedding file pair.
    Path(PathBuf),
    /// The embeddings emitted by the synthetic generator.
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Rows per direction in the translational likelihood tables.
    pub top_n: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("kgbias-out"),
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md],
            top_n: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub target_relation: String,
    pub sensitive_relations: SensitiveRelations,
    /// Minimum fraction of the population holding a relation for "auto"
    /// discovery to keep it.
    pub auto_min_coverage: f64,
    /// Number of target tails kept as classes before `OTHER`.
    pub k: usize,
    pub min_tail_count: usize,
    pub measures: Vec<Measure>,
    pub embeddings: Vec<EmbeddingSource>,
    pub classifier: ClassifierConfig,
    /// Use a saved classifier instead of training one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_path: Option<PathBuf>,
    pub test_fraction: f64,
    pub tlb_alpha: f64,
    pub tlb_head_sample_cap: usize,
    /// Cutoffs for hits@k on the test triples; empty to skip.
    pub hits_at: Vec<usize>,
    pub hits_sample_cap: usize,
    pub output: OutputConfig,
    /// Every random choice in the run is derived from this.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Files {
                train: PathBuf::from("data/FB15k-237/train.txt"),
                valid: Some(PathBuf::from("data/FB15k-237/valid.txt")),
                test: Some(PathBuf::from("data/FB15k-237/test.txt")),
            },
            target_relation: "/people/person/profession".into(),
            sensitive_relations: SensitiveRelations::Auto(Keyword::Auto),
            auto_min_coverage: 0.02,
            k: 5,
            min_tail_count: 10,
            measures: Measure::ALL.to_vec(),
            embeddings: vec![EmbeddingSource::Train(TrainConfig::default())],
            classifier: ClassifierConfig::default(),
            classifier_path: None,
            test_fraction: 0.2,
            tlb_alpha: 0.1,
            tlb_head_sample_cap: 2000,
            hits_at: vec![1, 3, 10],
            hits_sample_cap: 1000,
            output: OutputConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::new("config", ErrorKind::Usage, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::usage("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| PipelineError::usage("config", format!("{}: {}", path.display(), e.source)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::usage("config", m));
        if self.measures.is_empty() {
            return bad("at least one measure is required");
        }
        if self.target_relation.is_empty() {
            return bad("target_relation must be named");
        }
        if self.embeddings.is_empty() {
            return bad("at least one embedding source is required");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tlb_alpha.is_finite() && self.tlb_alpha >= 0.0) {
            return bad("tlb_alpha must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.auto_min_coverage) {
            return bad("auto_min_coverage must lie in [0, 1]");
        }
        if self.classifier_path.is_some() && self.embeddings.len() > 1 {
            return bad("classifier_path needs exactly one embedding source");
        }
        let synth_data = matches!(self.data, DataSource::Synth(_));
        if !synth_data && self.embeddings.contains(&EmbeddingSource::Synth) {
            return bad("the synth embedding source needs a synth data source");
        }
        Ok(())
    }

    pub fn needs_classifier(&self) -> bool {
        self.measures.iter().any(|m| m.needs_classifier())
    }
}

/// Seed for an independent random stream, derived from the global seed.
pub fn derive_seed(global: u64, stream: u64) -> u64 {
    let mut z = global ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SYNTH: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_CLASSIFIER: u64 = 3;
const STREAM_HEADS: u64 = 4;
const STREAM_HITS: u64 = 5;
const STREAM_KGE: u64 = 16;

pub struct Dataset {
    pub kg: KnowledgeGraph,
    pub train: Vec<Triple>,
    pub test: Vec<Triple>,
    pub synth_embeddings: Option<EmbeddingSet>,
}

fn resolve(kg: &KnowledgeGraph, raw: &[RawTriple]) -> Vec<Triple> {
    raw.iter()
        .filter_map(|t| {
            Some(Triple {
                head: kg.entity(&t.head)?,
                relation: kg.relation(&t.relation)?,
                tail: kg.entity(&t.tail)?,
            })
        })
        .collect()
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Files { train, valid, test } => {
            let train_raw = parse_triples(train).stage("parse")?;
            let valid_raw = valid.as_ref().map(parse_triples).transpose().stage("parse")?;
            let test_raw = test.as_ref().map(parse_triples).transpose().stage("parse")?;
            let all = train_raw
                .iter()
                .chain(valid_raw.iter().flatten())
                .chain(test_raw.iter().flatten())
                .cloned();
            let kg = build_graph(all);
            let train = resolve(&kg, &train_raw);
            let test = test_raw.map(|t| resolve(&kg, &t)).unwrap_or_default();
            Ok(Dataset {
                kg,
                train,
                test,
                synth_embeddings: None,
            })
        }
        DataSource::Synth(sc) => {
            let sc = SynthConfig {
                seed: derive_seed(cfg.seed, STREAM_SYNTH),
                ..sc.clone()
            };
            let (kg, emb) = generate(&sc).map_err(|e| PipelineError::new("synth", ErrorKind::Usage, e))?;
            let train = kg.triples().to_vec();
            Ok(Dataset {
                kg,
                train,
                test: Vec::new(),
                synth_embeddings: emb,
            })
        }
    }
}

/// Population over the target relation with the configured candidate
/// sensitive relations.
pub fn population(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Population> {
    let target = kg.require_relation(&cfg.target_relation).stage("population")?;
    let candidates: Vec<RelationId> = match &cfg.sensitive_relations {
        SensitiveRelations::List(names) => names
            .iter()
            .map(|n| kg.require_relation(n))
            .collect::<Result<_, _>>()
            .stage("population")?,
        SensitiveRelations::Auto(_) => (0..kg.num_relations() as u32).map(RelationId).collect(),
    };
    let mut pop = human_subgraph(kg, target, &candidates).stage("population")?;
    if let SensitiveRelations::Auto(_) = cfg.sensitive_relations {
        let needed = cfg.auto_min_coverage * pop.len() as f64;
        let entities = pop.entities.clone();
        pop.candidate_sensitive.retain(|&r| {
            let holders = entities.iter().filter(|&&e| !kg.tails(e, r).is_empty()).count();
            holders as f64 >= needed && holders > 0
        });
    }
    Ok(pop)
}

/// Embedding sets in configuration order, each indexed by `data.kg`'s ids,
/// with a description of where each came from.
pub fn obtain_embeddings(cfg: &RunConfig, data: &Dataset) -> Result<Vec<(EmbeddingSet, String)>> {
    let mut out = Vec::new();
    for (i, source) in cfg.embeddings.iter().enumerate() {
        match source {
            EmbeddingSource::Train(tc) => {
                let tc = TrainConfig {
                    seed: derive_seed(cfg.seed, STREAM_KGE + i as u64),
                    ..tc.clone()
                };
                let emb = train_embeddings_on(&data.kg, &data.train, &tc).stage("embeddings")?;
                out.push((emb, format!("trained {} dim {} for {} epochs", tc.model, tc.dim, tc.epochs)));
            }
            EmbeddingSource::Path(p) => {
                let emb = load_embeddings(p).stage("embeddings")?;
                let emb = emb.aligned_to(&data.kg).stage("embeddings")?;
                out.push((emb, format!("loaded from {}", p.display())));
            }
            EmbeddingSource::Synth => {
                let emb = data.synth_embeddings.clone().ok_or_else(|| {
                    PipelineError::usage("embeddings", "the synth generator emitted no embeddings (embedding_mode NONE)")
                })?;
                out.push((emb, "synthetic".into()));
            }
        }
    }
    Ok(out)
}

pub struct Prepared {
    pub population: Population,
    pub labels: LabelMap,
    pub split: Split,
}

pub fn prepare(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Prepared> {
    let population = population(cfg, kg)?;
    let labels = prepare_labels(kg, population.target_relation, cfg.k, &population).stage("labels")?;
    let split = split_population(&population, &labels, cfg.test_fraction, derive_seed(cfg.seed, STREAM_SPLIT))
        .stage("split")?;
    Ok(Prepared {
        population,
        labels,
        split,
    })
}

pub fn fit_classifier(cfg: &RunConfig, emb: &EmbeddingSet, prep: &Prepared, index: usize) -> Result<Classifier> {
    if let Some(path) = &cfg.classifier_path {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new("classifier", ErrorKind::Data, format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text)
            .map_err(|e| PipelineError::new("classifier", ErrorKind::Data, format!("{}: {e}", path.display())));
    }
    let cc = ClassifierConfig {
        seed: derive_seed(cfg.seed, STREAM_CLASSIFIER + 1000 * index as u64),
        ..cfg.classifier.clone()
    };
    train_classifier(emb, &prep.split.train, &prep.labels, &cc).stage("classifier")
}

pub fn predictions(
    clf: &Classifier,
    emb: &EmbeddingSet,
    kg: &KnowledgeGraph,
    prep: &Prepared,
) -> Result<PredictionTable> {
    predict_table(clf, emb, &prep.split.test, &prep.labels, prep.labels.class_names(kg)).stage("classifier")
}

/// Runs every stage and returns the report, without a timestamp.
pub fn run(cfg: &RunConfig) -> Result<BiasReport> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let kg = &data.kg;
    let gated = cfg.needs_classifier();
    let prep = if gated {
        prepare(cfg, kg)?
    } else {
        let population = population(cfg, kg)?;
        let labels = prepare_labels(kg, population.target_relation, cfg.k, &population).stage("labels")?;
        Prepared {
            population,
            labels,
            split: Split {
                train: Vec::new(),
                test: Vec::new(),
            },
        }
    };
    let embeddings = obtain_embeddings(cfg, &data)?;

    let mut provenance: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    provenance.insert("seed".into(), json!(cfg.seed));
    provenance.insert("target_relation".into(), json!(cfg.target_relation));
    provenance.insert("k".into(), json!(cfg.k));
    provenance.insert("classes".into(), json!(prep.labels.class_names(kg)));
    provenance.insert("class_counts".into(), json!(prep.labels.class_counts()));
    provenance.insert("population_size".into(), json!(prep.population.len()));
    provenance.insert("population_rule".into(), json!("heads of the target relation"));
    provenance.insert(
        "target_label_rule".into(),
        json!("most frequent target tail in the population, ties by vocabulary order"),
    );
    provenance.insert(
        "candidate_relations".into(),
        json!(prep
            .population
            .candidate_sensitive
            .iter()
            .map(|&r| kg.relation_label(r))
            .collect::<Vec<_>>()),
    );
    provenance.insert(
        "sensitive_selection".into(),
        match &cfg.sensitive_relations {
            SensitiveRelations::Auto(_) => json!(format!("auto, held by at least {} of the population", cfg.auto_min_coverage)),
            SensitiveRelations::List(_) => json!("explicit"),
        },
    );
    provenance.insert(
        "embeddings".into(),
        json!(embeddings.iter().map(|(_, s)| s.as_str()).collect::<Vec<_>>()),
    );
    provenance.insert("classifier_trained".into(), json!(gated && cfg.classifier_path.is_none()));
    if gated {
        provenance.insert("test_fraction".into(), json!(cfg.test_fraction));
        provenance.insert("split".into(), json!({"train": prep.split.train.len(), "test": prep.split.test.len(), "stratified": true}));
        provenance.insert("prediction_scope".into(), json!("test split"));
        provenance.insert("classifier".into(), serde_json::to_value(&cfg.classifier).expect("serializes"));
        if let Some(p) = &cfg.classifier_path {
            provenance.insert("classifier_path".into(), json!(p.display().to_string()));
        }
    }

    let audit_cfg = AuditConfig {
        measures: cfg.measures.clone(),
        min_tail_count: cfg.min_tail_count,
        alpha: cfg.tlb_alpha,
        head_sample_cap: cfg.tlb_head_sample_cap,
        seed: derive_seed(cfg.seed, STREAM_HEADS),
    };
    let mut report = BiasReport {
        measures: cfg.measures.clone(),
        models: Vec::new(),
        provenance,
        timestamp: None,
    };
    for (i, (emb, _)) in embeddings.iter().enumerate() {
        let (table, metrics) = if gated {
            let clf = fit_classifier(cfg, emb, &prep, i)?;
            let table = predictions(&clf, emb, kg, &prep)?;
            let metrics = evaluate_classifier(&table).stage("classifier")?;
            (Some(table), Some(metrics))
        } else {
            (None, None)
        };
        let hits = if cfg.hits_at.is_empty() || data.test.is_empty() {
            None
        } else {
            let sample = sample_triples(&data.test, cfg.hits_sample_cap, derive_seed(cfg.seed, STREAM_HITS));
            Some(evaluate_hits_at_k(emb, &sample, &cfg.hits_at).stage("embeddings")?)
        };
        match audit(kg, emb, &prep.population, table.as_ref(), &audit_cfg) {
            Ok(mut part) => {
                let model = &mut part.models[0];
                model.classifier = metrics;
                model.hits = hits;
                report.merge(part);
            }
            Err(MetricsError::NoAdmissibleRelation) => {
                report.provenance.insert(
                    "note".into(),
                    json!(format!(
                        "no candidate relation has at least 2 tails held by {} or more population entities",
                        cfg.min_tail_count
                    )),
                );
                report.models.push(ModelAudit {
                    model: emb.model().tag().to_owned(),
                    classifier: metrics,
                    hits,
                    relations: Vec::new(),
                });
            }
            Err(e) => return Err(e).stage("audit"),
        }
    }
    Ok(report)
}

fn sample_triples(triples: &[Triple], cap: usize, seed: u64) -> Vec<Triple> {
    if triples.len() <= cap {
        return triples.to_vec();
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, triples.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| triples[i]).collect()
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// [`run`], then write the report in every configured format. Returns the
/// files written.
pub fn execute(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut report = run(cfg)?;
    report.timestamp = Some(unix_now());
    emit_report(&report, &cfg.output.formats, &cfg.output.dir, cfg.output.top_n)
        .map_err(|e| PipelineError::new("report", ErrorKind::Data, format!("{}: {e}", cfg.output.dir.display())))
}
