use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use medvqa_core::corpus::{
    load_corpus, read_jsonl, write_jsonl, AnswerVocabulary, DatasetSplit, Language, SplitName,
    TextVocab, UnkPolicy, DEFAULT_RATIOS, IMAGES_FILE,
};
use medvqa_core::encoders::{pretrain, Checkpoint, ModelConfig, PretrainConfig};
use medvqa_core::model::META_ANSWERS;
use medvqa_core::synth::{
    merge_corpora, read_reports, synthesize, FindingLexicon, SynthesisStats, TemplateSet,
};
use medvqa_core::trainer::{
    build_model, compile_report, curves_csv, evaluate, train, Dataset, EvalReport, RunSummary,
    TrainConfig,
};
use medvqa_core::VqaModel;
use serde::{Deserialize, Serialize};

const DATA_DIR_ENV: &str = "MEDVQA_DATA_DIR";

#[derive(Parser)]
#[command(name = "medvqa", version, about = "Joint-embedding medical VQA toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate QA pairs from radiology reports.
    Synth {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Image records; derived from report metadata when absent.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Finding lexicon JSON (built-in lexicon when absent).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Template JSON (built-in templates when absent).
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write image records; defaults to images.jsonl beside --out.
        #[arg(long)]
        images_out: Option<PathBuf>,
        /// Optional synthesis statistics JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Merge corpora given as TAG=DIR into one namespaced corpus.
    Merge {
        #[arg(long = "source", num_args = 1.., required = true)]
        sources: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Corpus root (defaults to $MEDVQA_DATA_DIR).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Split file (defaults to split.json beside the checkpoint).
        #[arg(long)]
        split_file: Option<PathBuf>,
    },
    /// Contrastive pretraining of the encoders on corpus image/text pairs.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Combine report.json files of several runs into one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a checkpoint over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SplitSettings {
    ratios: [f64; 3],
    seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 0,
        }
    }
}

/// `medvqa train` configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Corpus root; relative paths resolve against $MEDVQA_DATA_DIR.
    corpus: PathBuf,
    out: PathBuf,
    #[serde(default = "english")]
    language: Option<Language>,
    #[serde(default)]
    split: SplitSettings,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
}

/// `medvqa pretrain` configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PretrainRunConfig {
    corpus: PathBuf,
    out: PathBuf,
    #[serde(default = "english")]
    language: Option<Language>,
    #[serde(default)]
    split: SplitSettings,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    pretrain: PretrainConfig,
}

fn english() -> Option<Language> {
    Some(Language::En)
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(root: &Path, language: Option<Language>, model: &ModelConfig, split: &SplitSettings) -> Result<Dataset> {
    let corpus = load_corpus(root, language)?;
    log::info!(
        "corpus {}: {} images, {} pairs",
        root.display(),
        corpus.images.len(),
        corpus.pairs.len()
    );
    Ok(Dataset::load(
        root,
        corpus,
        model.image_side,
        model.image_channels,
        split.ratios,
        split.seed,
    )?)
}

fn cmd_synth(
    reports: &[PathBuf],
    images: Option<&Path>,
    lexicon: Option<&Path>,
    templates: Option<&Path>,
    out: &Path,
    images_out: Option<&Path>,
    stats: Option<&Path>,
) -> Result<()> {
    let lexicon = match lexicon {
        Some(p) => FindingLexicon::load(&resolve(p))?,
        None => FindingLexicon::builtin(),
    };
    let templates = match templates {
        Some(p) => TemplateSet::load(&resolve(p))?,
        None => TemplateSet::builtin(),
    };
    let mut all = Vec::new();
    for path in reports {
        all.extend(read_reports(&resolve(path))?);
    }
    let records = images.map(|p| read_jsonl(&resolve(p))).transpose()?;
    let corpus = synthesize(&all, records.as_deref(), &lexicon, &templates)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl(out, &corpus.pairs)?;
    let images_out = images_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_file_name(IMAGES_FILE));
    write_jsonl(&images_out, &corpus.images)?;
    let summary = SynthesisStats::of("synthesized", &corpus);
    if let Some(path) = stats {
        write_json(path, &summary)?;
    }
    println!(
        "{} reports -> {} pairs over {} images",
        all.len(),
        summary.total_pairs,
        summary.total_images
    );
    Ok(())
}

fn cmd_merge(sources: &[String], out: &Path) -> Result<()> {
    let mut loaded = Vec::new();
    for s in sources {
        let Some((tag, dir)) = s.split_once('=') else {
            bail!("--source expects TAG=DIR, got `{s}`");
        };
        loaded.push((tag.to_string(), load_corpus(&resolve(Path::new(dir)), None)?));
    }
    let (corpus, stats) = merge_corpora(&loaded)?;
    corpus.write(out)?;
    write_json(&out.join("stats.json"), &stats)?;
    println!(
        "{} pairs over {} images ({} duplicates removed); copy or link each source's images under {}/<tag>/",
        stats.total_pairs,
        stats.total_images,
        stats.duplicates_removed,
        out.display()
    );
    Ok(())
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg: RunConfig = read_json(config_path)?;
    let root = resolve(&cfg.corpus);
    let data = load_dataset(&root, cfg.language, &cfg.model, &cfg.split)?;
    let (model, answers) = build_model(&data, &cfg.model, &cfg.train)?;
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    data.split.save(&out.join("split.json"))?;
    answers.save(&out.join("vocab.json"))?;
    let (train_n, val_n, test_n) = data.split.sizes();
    log::info!("split: {train_n} train / {val_n} val / {test_n} test images");

    let outcome = train(model, answers, &data, &cfg.train)?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome
        .model
        .to_checkpoint(Some(&outcome.answers))?
        .save(&out.join("final.ckpt"))?;
    std::fs::write(out.join("curves.csv"), curves_csv(&outcome.curves))?;

    let best = VqaModel::from_checkpoint(&outcome.best)?;
    let accuracy = |which| -> Result<Option<f64>> {
        let pairs = data.pairs(which);
        if pairs.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&best, &outcome.answers, &pairs, &data)?.accuracy))
    };
    let report = EvalReport {
        rows: vec![RunSummary {
            image_encoder: cfg.model.image_label(),
            text_encoder: cfg.model.text_label(),
            val_accuracy: accuracy(SplitName::Val)?,
            test_accuracy: accuracy(SplitName::Test)?,
        }],
        curves: outcome.curves.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    let table = compile_report(std::slice::from_ref(&report));
    std::fs::write(out.join("table.csv"), table.to_csv())?;
    std::fs::write(out.join("table.txt"), table.to_text())?;
    println!("best epoch {}", outcome.best_epoch);
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, which: SplitName, corpus: Option<&Path>, split_file: Option<&Path>) -> Result<()> {
    let checkpoint = resolve(checkpoint);
    let ck = Checkpoint::load(&checkpoint)?;
    let model = VqaModel::from_checkpoint(&ck)?;
    let answers: Vec<String> = serde_json::from_value(
        ck.meta
            .get(META_ANSWERS)
            .cloned()
            .context("checkpoint does not record its answer vocabulary")?,
    )?;
    let answers = AnswerVocabulary::from_answers(answers, UnkPolicy::Reject)?;
    let root = match corpus {
        Some(p) => resolve(p),
        None => PathBuf::from(
            std::env::var_os(DATA_DIR_ENV).context("pass --corpus or set MEDVQA_DATA_DIR")?,
        ),
    };
    let split_path = split_file
        .map(resolve)
        .unwrap_or_else(|| checkpoint.with_file_name("split.json"));
    let split = DatasetSplit::load(&split_path)
        .with_context(|| format!("reading split {}", split_path.display()))?;
    let corpus = load_corpus(&root, Some(Language::En))?;
    let images = medvqa_core::corpus::load_image_tensors(
        &root,
        &corpus.images,
        model.config.image_side,
        model.config.image_channels,
    )?;
    let data = Dataset::new(corpus, images, split)?;
    let result = evaluate(&model, &answers, &data.pairs(which), &data)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn cmd_pretrain(config_path: &Path) -> Result<()> {
    let cfg: PretrainRunConfig = read_json(config_path)?;
    let root = resolve(&cfg.corpus);
    let data = load_dataset(&root, cfg.language, &cfg.model, &cfg.split)?;
    let pairs = data.pairs(SplitName::Train);
    // Caption text is the question followed by its answer.
    let captions: Vec<String> = pairs
        .iter()
        .map(|p| format!("{} {}", p.question, p.answer))
        .collect();
    let vocab = TextVocab::build(captions.iter().map(String::as_str));
    let mut examples = Vec::with_capacity(pairs.len());
    for (p, caption) in pairs.iter().zip(&captions) {
        examples.push((
            data.image(&p.image_id)?.clone(),
            medvqa_core::corpus::tokenize(caption, &vocab, cfg.model.max_len),
        ));
    }
    let outcome = pretrain(&examples, &cfg.model, &vocab, &cfg.pretrain)?;
    if let Some(dir) = cfg.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    outcome.checkpoint.save(&cfg.out)?;
    println!(
        "contrastive loss {:.4} -> {:.4} over {} steps",
        outcome.initial_loss,
        outcome.final_loss,
        outcome.losses.len()
    );
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let reports: Vec<EvalReport> = runs.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let table = compile_report(&reports);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("table.csv"), table.to_csv())?;
    std::fs::write(out.join("table.txt"), table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_serve(checkpoint: &Path, vocab: &Path, host: IpAddr, port: u16) -> Result<()> {
    let service = medvqa_server::Service::load(&resolve(checkpoint), &resolve(vocab))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = medvqa_server::bind(SocketAddr::new(host, port)).await?;
        println!(
            "serving {} on http://{}",
            service.model_id,
            listener.local_addr()?
        );
        medvqa_server::serve(Arc::new(service), listener).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            reports,
            images,
            lexicon,
            templates,
            out,
            images_out,
            stats,
        } => cmd_synth(
            &reports,
            images.as_deref(),
            lexicon.as_deref(),
            templates.as_deref(),
            &out,
            images_out.as_deref(),
            stats.as_deref(),
        ),
        Command::Merge { sources, out } => cmd_merge(&sources, &out),
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            checkpoint,
            split,
            corpus,
            split_file,
        } => cmd_eval(&checkpoint, split, corpus.as_deref(), split_file.as_deref()),
        Command::Pretrain { config } => cmd_pretrain(&config),
        Command::Report { runs, out } => cmd_report(&runs, &out),
        Command::Serve {
            checkpoint,
            vocab,
            port,
            host,
        } => cmd_serve(&checkpoint, &vocab, host, port),
    }
}
