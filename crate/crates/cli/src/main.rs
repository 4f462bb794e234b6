//! `kgbias`: train embeddings and a classifier, audit sensitive relations
//! and write ranked bias-score reports.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors, 3 for
//! internal errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use kgbias::kg::write_triples;
use kgbias::kge::{save_embeddings, EmbeddingSet};
use kgbias::metrics::BiasReport;
use kgbias::pipeline::{
    self, DataSource, EmbeddingSource, ErrorKind, PipelineError, RunConfig, SensitiveRelations,
};
use kgbias::report::{emit_report, ReportFormat};
use kgbias::synth::{self, EmbeddingMode, SynthConfig};

#[derive(Parser)]
#[command(name = "kgbias", version, about = "Bias auditing for knowledge-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured embeddings and save them.
    TrainEmbeddings {
        #[command(flatten)]
        common: Common,
    },
    /// Train the target classifier and save it with its test predictions.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole pipeline and write the bias report.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Report format; repeat for several.
        #[arg(long = "format", value_name = "csv|json|md")]
        formats: Vec<ReportFormat>,
    },
    /// Write a synthetic graph with a planted bias, its embeddings and a
    /// ready-to-run configuration.
    Synth {
        /// JSON synth configuration; defaults are used if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Render a saved JSON report in other formats.
    Report {
        /// A `report.json` written by `audit`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "format", value_name = "csv|json|md")]
        formats: Vec<ReportFormat>,
        /// Rows per direction in translational likelihood tables.
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Print the default run configuration (or a synthetic one).
    Defaults {
        #[arg(long)]
        synth: bool,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

fn data_error(e: anyhow::Error) -> Failure {
    Failure { code: 2, error: e }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::TrainEmbeddings { common } => train_embeddings(&load(&common)?),
        Command::TrainClassifier { common } => train_classifier(&load(&common)?),
        Command::Audit { common, formats } => {
            let mut cfg = load(&common)?;
            if !formats.is_empty() {
                cfg.output.formats = formats;
            }
            for path in pipeline::execute(&cfg)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Synth {
            config,
            seed,
            out,
            rho,
            n,
        } => {
            let mut cfg = match config {
                Some(p) => read_json::<SynthConfig>(&p).map_err(|error| Failure { code: 1, error })?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = rho {
                cfg.rho = r;
            }
            if let Some(n) = n {
                cfg.n_entities = n;
            }
            write_synth(&cfg, &out)
        }
        Command::Report {
            input,
            out,
            formats,
            top_n,
        } => {
            let report: BiasReport = read_json(&input).map_err(data_error)?;
            let formats = if formats.is_empty() { vec![ReportFormat::Md] } else { formats };
            let written = emit_report(&report, &formats, &out, top_n)
                .with_context(|| format!("writing to {}", out.display()))
                .map_err(data_error)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Defaults { synth } => {
            let cfg = if synth { synth_run_config(SynthConfig::default()) } else { RunConfig::default() };
            print!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(data_error)
}

fn save(emb: &EmbeddingSet, stem: &Path) -> Outcome {
    let (header, body) = save_embeddings(emb, stem).map_err(|e| data_error(e.into()))?;
    println!("{}\n{}", header.display(), body.display());
    Ok(())
}

fn train_embeddings(cfg: &RunConfig) -> Outcome {
    let data = pipeline::load_dataset(cfg)?;
    let only_trained = RunConfig {
        embeddings: cfg
            .embeddings
            .iter()
            .filter(|s| matches!(s, EmbeddingSource::Train(_)))
            .cloned()
            .collect(),
        ..cfg.clone()
    };
    if only_trained.embeddings.is_empty() {
        return Err(Failure {
            code: 1,
            error: anyhow!("the configuration has no `train` embedding source"),
        });
    }
    let embeddings = pipeline::obtain_embeddings(&only_trained, &data)?;
    create_dir(&cfg.output.dir)?;
    for (i, (emb, _)) in embeddings.iter().enumerate() {
        let stem = cfg
            .output
            .dir
            .join(format!("embeddings-{i}-{}", emb.model().tag().to_ascii_lowercase()));
        save(emb, &stem)?;
    }
    Ok(())
}

fn train_classifier(cfg: &RunConfig) -> Outcome {
    let data = pipeline::load_dataset(cfg)?;
    let prep = pipeline::prepare(cfg, &data.kg)?;
    let first = RunConfig {
        embeddings: cfg.embeddings[..1].to_vec(),
        ..cfg.clone()
    };
    let (emb, _) = pipeline::obtain_embeddings(&first, &data)?.remove(0);
    let clf = pipeline::fit_classifier(cfg, &emb, &prep, 0)?;
    let table = pipeline::predictions(&clf, &emb, &data.kg, &prep)?;
    let metrics = kgbias::clf::evaluate_classifier(&table).map_err(|e| data_error(e.into()))?;

    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let clf_path = dir.join("classifier.json");
    let json = serde_json::to_string(&clf).map_err(|e| Failure {
        code: 3,
        error: e.into(),
    })?;
    fs::write(&clf_path, json)
        .with_context(|| format!("writing {}", clf_path.display()))
        .map_err(data_error)?;
    let pred_path = dir.join("predictions.csv");
    let file = fs::File::create(&pred_path)
        .with_context(|| format!("creating {}", pred_path.display()))
        .map_err(data_error)?;
    table.write_csv(file, &data.kg).map_err(|e| data_error(e.into()))?;
    println!("{}\n{}", clf_path.display(), pred_path.display());
    println!(
        "accuracy {:.4} balanced accuracy {:.4} over {} test entities",
        metrics.accuracy, metrics.balanced_accuracy, metrics.num_rows
    );
    Ok(())
}

fn synth_run_config(sc: SynthConfig) -> RunConfig {
    let has_embeddings = sc.embedding_mode != EmbeddingMode::None;
    RunConfig {
        data: DataSource::Synth(sc),
        target_relation: synth::TARGET_RELATION.into(),
        sensitive_relations: SensitiveRelations::Auto(pipeline::Keyword::Auto),
        embeddings: if has_embeddings {
            vec![EmbeddingSource::Synth]
        } else {
            RunConfig::default().embeddings
        },
        ..RunConfig::default()
    }
}

fn write_synth(cfg: &SynthConfig, out: &Path) -> Outcome {
    let (kg, emb) = synth::generate(cfg).map_err(|e| Failure {
        code: 1,
        error: e.into(),
    })?;
    create_dir(out)?;
    let triples = out.join("triples.tsv");
    write_triples(&triples, &kg).map_err(|e| data_error(e.into()))?;
    println!("{}", triples.display());

    let mut run = RunConfig {
        data: DataSource::Files {
            train: triples,
            valid: None,
            test: None,
        },
        target_relation: synth::TARGET_RELATION.into(),
        ..RunConfig::default()
    };
    run.output.dir = out.join("report");
    if let Some(emb) = &emb {
        let stem = out.join("embeddings");
        save(emb, &stem)?;
        run.embeddings = vec![EmbeddingSource::Path(stem)];
    }
    let run_path = out.join("run.json");
    fs::write(&run_path, run.to_json())
        .with_context(|| format!("writing {}", run_path.display()))
        .map_err(data_error)?;
    println!("{}", run_path.display());
    Ok(())
}
