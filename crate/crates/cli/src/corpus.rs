//! On-disk corpus layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/config.toml            resolved run config used to generate
//! <dir>/<split>.jsonl          impression records
//! <dir>/<split>.emb1           ground-truth embeddings, row i = record i
//! <dir>/<split>.tags.jsonl     EMB1 sidecar
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use pfe_core::config::RunConfig;
use pfe_core::io::{read_emb1, read_tags_jsonl, write_emb1, write_tags_jsonl, EmbeddingTag};
use pfe_core::prompt::{full_prompt, read_records_jsonl, write_records_jsonl, ImpressionRecord, ImpressionSchema};
use pfe_core::rng::hash_str;
use pfe_core::synthdata::{Split, SynthCorpus};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const SPLITS: [Split; 3] = [Split::Train, Split::Heldout, Split::Eval];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub world_seed: u64,
    pub splits: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub speakers: usize,
    pub records: String,
    pub embeddings: String,
    pub tags: String,
}

/// Records and ground truth of one split, row-aligned.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub records: Vec<ImpressionRecord>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Stable id of the prompt a record renders to.
pub fn condition_id(schema: &ImpressionSchema, record: &ImpressionRecord) -> Result<String> {
    Ok(format!("{:016x}", hash_str(full_prompt(schema, record)?.text())))
}

/// `x.emb1` → `x.tags.jsonl`
pub fn sidecar_path(emb1: &Path) -> PathBuf {
    emb1.with_extension("tags.jsonl")
}

pub fn write_embeddings(path: &Path, dim: usize, rows: &[Vec<f64>], tags: &[EmbeddingTag]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_emb1(&mut w, dim, rows)?;
    w.flush()?;
    let side = sidecar_path(path);
    let mut w = BufWriter::new(File::create(&side).with_context(|| format!("creating {}", side.display()))?);
    write_tags_jsonl(&mut w, tags)?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f64>>, Vec<EmbeddingTag>)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let (dim, rows) = read_emb1(&mut r).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar_path(path);
    let tags = read_tags_jsonl(BufReader::new(
        File::open(&side).with_context(|| format!("opening {}", side.display()))?,
    ))
    .with_context(|| format!("reading {}", side.display()))?;
    ensure!(
        tags.len() == rows.len(),
        "{} has {} rows but its sidecar has {} tags",
        path.display(),
        rows.len(),
        tags.len()
    );
    Ok((dim, rows, tags))
}

pub fn read_records(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_corpus(dir: &Path, config: &RunConfig, corpus: &SynthCorpus, schema: &ImpressionSchema) -> Result<Manifest> {
    let dim = corpus.dim().context("empty corpus")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut splits = Vec::new();
    for split in SPLITS {
        let name = split.name();
        let records = corpus.records(split);
        let embeddings = corpus.embeddings(split);
        let entry = SplitEntry {
            name: name.to_string(),
            speakers: records.len(),
            records: format!("{name}.jsonl"),
            embeddings: format!("{name}.emb1"),
            tags: format!("{name}.tags.jsonl"),
        };
        let mut w = BufWriter::new(File::create(dir.join(&entry.records))?);
        write_records_jsonl(&mut w, &records)?;
        w.flush()?;
        let tags = records
            .iter()
            .enumerate()
            .map(|(index, r)| {
                Ok(EmbeddingTag {
                    index,
                    speaker_id: r.speaker_id.clone(),
                    condition_id: condition_id(schema, r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_embeddings(&dir.join(&entry.embeddings), dim, &embeddings, &tags)?;
        splits.push(entry);
    }
    let manifest = Manifest {
        dim,
        world_seed: config.world_seed,
        splits,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join(CONFIG), config.to_toml_string())?;
    Ok(manifest)
}

/// A corpus directory written by [`write_corpus`].
pub struct CorpusDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub config: RunConfig,
}

impl CorpusDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path)
            .with_context(|| format!("{} is not a corpus directory", dir.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
        let config = load_config(&dir.join(CONFIG))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            config,
        })
    }

    fn entry(&self, split: Split) -> Result<&SplitEntry> {
        match self.manifest.splits.iter().find(|s| s.name == split.name()) {
            Some(e) => Ok(e),
            None => bail!("corpus manifest has no {} split", split.name()),
        }
    }

    pub fn split(&self, split: Split) -> Result<SplitData> {
        let entry = self.entry(split)?;
        let records = read_records(&self.dir.join(&entry.records))?;
        let (dim, embeddings, tags) = read_embeddings(&self.dir.join(&entry.embeddings))?;
        ensure!(dim == self.manifest.dim, "{} has d = {dim}, manifest says {}", entry.embeddings, self.manifest.dim);
        ensure!(
            records.len() == embeddings.len() && records.len() == entry.speakers,
            "{} split is inconsistent: {} records, {} embeddings, manifest {}",
            entry.name,
            records.len(),
            embeddings.len(),
            entry.speakers
        );
        for (r, t) in records.iter().zip(&tags) {
            ensure!(r.speaker_id == t.speaker_id, "{} rows are not aligned with its records", entry.embeddings);
        }
        Ok(SplitData { records, embeddings })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
}
