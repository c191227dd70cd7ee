//! `pfe`: corpus generation, training, sampling and evaluation.
//!
//! Every command is a pure function of its inputs, config and seed, so two
//! runs with the same arguments write byte-identical files.

pub mod corpus;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pfe_core::config::RunConfig;
use pfe_core::io::{read_checkpoint, write_checkpoint, EmbeddingTag};
use pfe_core::metrics::{cosine_similarity, fad_score};
use pfe_core::prompt::{full_prompt, ImpressionSchema};
use pfe_core::rng::hash_str;
use pfe_core::synthdata::{generate_corpus, Split, SynthWorld};
use pfe_core::system::{ablation, SystemKind, TrainedSystem};

use corpus::{condition_id, load_config, read_embeddings, read_records, write_embeddings, CorpusDir};

pub const THREADS_ENV: &str = "PFE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pfe", version, about = "Prompt-conditioned speaker embedding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (records, ground-truth embeddings, manifest).
    GenCorpus(GenCorpusArgs),
    /// Train one system on a corpus's training split.
    Train(TrainArgs),
    /// Sample embeddings for every record in a JSONL file.
    Generate(GenerateArgs),
    /// Score generated embeddings, or run the prompt-portion ablation.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `world_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write into an existing directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_system)]
    pub system: SystemKind,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Model and training config; defaults to the corpus's own config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Impression records, one JSON object per line.
    #[arg(long)]
    pub records: PathBuf,
    /// Draws per record (discriminative systems always emit one).
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// EMB1 output; the sidecar goes next to it as `<out>.tags.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Fad,
    Similarity,
    Ablation,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Generated EMB1 file (fad, similarity).
    #[arg(long, required_if_eq_any = [("mode", "fad"), ("mode", "similarity")])]
    pub generated: Option<PathBuf>,
    /// Trained system (ablation).
    #[arg(long, required_if_eq("mode", "ablation"))]
    pub checkpoint: Option<PathBuf>,
    /// Background split for fad.
    #[arg(long, value_parser = parse_split, default_value = "heldout")]
    pub split: Split,
    /// CSV report.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_system(s: &str) -> std::result::Result<SystemKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = SystemKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    corpus::SPLITS
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| "expected train, heldout or eval".to_string())
}

/// Sizes the global rayon pool from `PFE_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

pub fn cmd_gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.world_seed = seed;
    }
    if args.out.exists() && !args.force {
        bail!("{} already exists; pass --force to overwrite", args.out.display());
    }
    let schema = ImpressionSchema::builtin();
    let world = SynthWorld::new(config.world(&schema), schema.clone())?;
    let corpus = generate_corpus(&world, &config.split_sizes())?;
    let manifest = corpus::write_corpus(&args.out, &config, &corpus, &schema)?;
    for s in &manifest.splits {
        eprintln!("{}: {} speakers", s.name, s.speakers);
    }
    Ok(())
}

pub fn default_loss_log(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.csv")
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let corpus = CorpusDir::open(&args.corpus)?;
    let mut config = match &args.config {
        Some(p) => load_config(p)?,
        None => corpus.config.clone(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let train = corpus.split(Split::Train)?;
    let schema = ImpressionSchema::builtin();
    let (system, log) = TrainedSystem::train(args.system, config.system(), &schema, &train.records, &train.embeddings)
        .with_context(|| format!("training {}", args.system))?;
    if let Some(bad) = log.iter().find(|r| !r.loss.is_finite()) {
        bail!("training {} diverged: {} loss is {} at epoch {}", args.system, bad.stage, bad.loss, bad.epoch);
    }

    let mut w = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    write_checkpoint(&mut w, &system.to_checkpoint()?)?;
    w.flush()?;

    let mut csv = String::from("stage,epoch,loss\n");
    for row in &log {
        writeln!(csv, "{},{},{}", row.stage, row.epoch, row.loss)?;
    }
    let log_path = args.loss_log.clone().unwrap_or_else(|| default_loss_log(&args.out));
    fs::write(&log_path, csv).with_context(|| format!("writing {}", log_path.display()))?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        eprintln!("{}: loss {} -> {}", args.system, first.loss, last.loss);
    }
    Ok(())
}

pub fn load_system(path: &Path) -> Result<TrainedSystem> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let ckpt = read_checkpoint(&mut r).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainedSystem::from_checkpoint(ckpt, &ImpressionSchema::builtin())?)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    ensure!(args.n > 0, "--n must be positive");
    let system = load_system(&args.checkpoint)?;
    let records = read_records(&args.records)?;
    let schema = ImpressionSchema::builtin();
    if !system.kind.is_generative() && args.n > 1 {
        eprintln!(
            "warning: {} is deterministic; writing one embedding per record instead of {}",
            system.kind, args.n
        );
    }
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for r in &records {
        r.validate(&schema)?;
        let prompt = full_prompt(&schema, r)?;
        let cond = condition_id(&schema, r)?;
        for e in system.generate(&prompt, args.n, args.seed, hash_str(&r.speaker_id))? {
            tags.push(EmbeddingTag {
                index: rows.len(),
                speaker_id: r.speaker_id.clone(),
                condition_id: cond.clone(),
            });
            rows.push(e.values);
        }
    }
    write_embeddings(&args.out, system.dim, &rows, &tags)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let corpus = CorpusDir::open(&args.corpus)?;
    let csv = match args.mode {
        EvalMode::Fad => {
            let generated = read_generated(args, &corpus)?;
            let background = corpus.split(args.split)?.embeddings;
            let score = fad_score(&background, &generated.rows)?;
            format!(
                "metric,split,background,generated,value\nfad,{},{},{},{}\n",
                args.split.name(),
                background.len(),
                generated.rows.len(),
                score
            )
        }
        EvalMode::Similarity => similarity_report(&read_generated(args, &corpus)?, &corpus)?,
        EvalMode::Ablation => {
            let path = args.checkpoint.as_ref().context("ablation needs --checkpoint")?;
            let system = load_system(path)?;
            ensure!(
                system.dim == corpus.manifest.dim,
                "checkpoint has d = {}, corpus has d = {}",
                system.dim,
                corpus.manifest.dim
            );
            let eval = corpus.split(Split::Eval)?;
            let rows = ablation(
                &system,
                &ImpressionSchema::builtin(),
                &eval.records,
                &eval.embeddings,
                &corpus.config.ablation_seeds,
            )?;
            let mut csv = String::from("system,portion,mean_similarity\n");
            for row in rows {
                writeln!(csv, "{},{},{}", system.kind, row.portion, row.mean_similarity)?;
            }
            csv
        }
    };
    fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))
}

struct Generated {
    rows: Vec<Vec<f64>>,
    tags: Vec<EmbeddingTag>,
}

fn read_generated(args: &EvaluateArgs, corpus: &CorpusDir) -> Result<Generated> {
    let path = args.generated.as_ref().context("this mode needs --generated")?;
    let (dim, rows, tags) = read_embeddings(path)?;
    ensure!(
        dim == corpus.manifest.dim,
        "{} has d = {dim}, corpus has d = {}",
        path.display(),
        corpus.manifest.dim
    );
    Ok(Generated { rows, tags })
}

/// Per-speaker mean cosine against ground truth, then the mean over speakers.
fn similarity_report(generated: &Generated, corpus: &CorpusDir) -> Result<String> {
    let splits = corpus::SPLITS
        .into_iter()
        .map(|s| corpus.split(s))
        .collect::<Result<Vec<_>>>()?;
    let mut truth = HashMap::new();
    for s in &splits {
        for (r, e) in s.records.iter().zip(&s.embeddings) {
            truth.insert(r.speaker_id.as_str(), e);
        }
    }
    // speakers in first-appearance order
    let mut order: Vec<&str> = Vec::new();
    let mut per: HashMap<&str, (usize, f64)> = HashMap::new();
    for (row, tag) in generated.rows.iter().zip(&generated.tags) {
        let id = tag.speaker_id.as_str();
        let gt = truth
            .get(id)
            .with_context(|| format!("speaker {id} is not in the corpus"))?;
        let c = cosine_similarity(row, gt)?;
        let slot = per.entry(id).or_insert_with(|| {
            order.push(id);
            (0, 0.0)
        });
        slot.0 += 1;
        slot.1 += c;
    }
    ensure!(!order.is_empty(), "no generated embeddings");
    let mut csv = String::from("speaker_id,draws,mean_cosine\n");
    let mut total = 0.0;
    for id in &order {
        let (n, s) = per[id];
        total += s / n as f64;
        writeln!(csv, "{id},{n},{}", s / n as f64)?;
    }
    writeln!(csv, "all,{},{}", generated.rows.len(), total / order.len() as f64)?;
    Ok(csv)
}
