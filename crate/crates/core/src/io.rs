//! Binary file formats.
//!
//! Embedding sets (`EMB1`): magic, u32 count, u32 dim, then `count × dim`
//! little-endian f64. A JSONL sidecar carries one [`EmbeddingTag`] per row.
//!
//! Checkpoints (`PFE1`): magic, u32 metadata length and UTF-8 JSON metadata,
//! u32 block count, every block's dims, then every block's parameters as
//! little-endian f64 in block and layer order (weights row-major, then bias;
//! adapters store `A` then `B`).

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Activation, Layer, Matrix, MlpParams};
use crate::prompt::LoraAdapter;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFE1";

const BLOCK_MLP: u8 = 1;
const BLOCK_LORA: u8 = 2;

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    Ok(read_exact(r, 1, what)?[0])
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let b = read_exact(r, 8, what)?;
    Ok(f64::from_le_bytes(b.try_into().unwrap()))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = read_exact(r, n * 8, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got = read_exact(r, 4, "magic")?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

/// Rows must share one length; an empty set needs `dim` explicitly.
pub fn write_emb1<W: Write>(w: &mut W, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&to_u32(rows.len(), "count")?.to_le_bytes())?;
    w.write_all(&to_u32(dim, "dim")?.to_le_bytes())?;
    for row in rows {
        crate::error::check_len("embedding row", dim, row.len())?;
        write_f64s(w, row)?;
    }
    Ok(())
}

/// Returns `(dim, rows)`.
pub fn read_emb1<R: Read>(r: &mut R) -> Result<(usize, Vec<Vec<f64>>)> {
    expect_magic(r, EMB_MAGIC)?;
    let count = read_u32(r, "count")? as usize;
    let dim = read_u32(r, "dim")? as usize;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let row = read_f64s(r, dim, "embedding row")?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding file entry".into()));
        }
        rows.push(row);
    }
    expect_eof(r)?;
    Ok((dim, rows))
}

/// One sidecar line per embedding row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingTag {
    pub index: usize,
    pub speaker_id: String,
    pub condition_id: String,
}

pub fn write_tags_jsonl<W: Write>(w: &mut W, tags: &[EmbeddingTag]) -> Result<()> {
    for t in tags {
        serde_json::to_writer(&mut *w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tags_jsonl<R: BufRead>(r: R) -> Result<Vec<EmbeddingTag>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tag: EmbeddingTag = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("sidecar line {}: {e}", lineno + 1)))?;
        if tag.index != out.len() {
            return Err(Error::Format(format!(
                "sidecar line {} has index {}, expected {}",
                lineno + 1,
                tag.index,
                out.len()
            )));
        }
        out.push(tag);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamBlock {
    Mlp(MlpParams),
    Lora(LoraAdapter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    /// Free-form JSON describing how to rebuild the model around the blocks.
    pub metadata: String,
    pub blocks: Vec<ParamBlock>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &CheckpointFile) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let meta = ckpt.metadata.as_bytes();
    w.write_all(&to_u32(meta.len(), "metadata length")?.to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&to_u32(ckpt.blocks.len(), "block count")?.to_le_bytes())?;
    for block in &ckpt.blocks {
        match block {
            ParamBlock::Mlp(p) => {
                w.write_all(&[BLOCK_MLP])?;
                w.write_all(&to_u32(p.layers().len(), "layer count")?.to_le_bytes())?;
                for l in p.layers() {
                    w.write_all(&to_u32(l.in_dim(), "layer input")?.to_le_bytes())?;
                    w.write_all(&to_u32(l.out_dim(), "layer output")?.to_le_bytes())?;
                    w.write_all(&[l.activation.tag()])?;
                }
            }
            ParamBlock::Lora(a) => {
                w.write_all(&[BLOCK_LORA])?;
                w.write_all(&to_u32(a.rank(), "rank")?.to_le_bytes())?;
                w.write_all(&to_u32(a.in_dim(), "adapter input")?.to_le_bytes())?;
                w.write_all(&to_u32(a.out_dim(), "adapter output")?.to_le_bytes())?;
                w.write_all(&a.alpha().to_le_bytes())?;
            }
        }
    }
    for block in &ckpt.blocks {
        match block {
            ParamBlock::Mlp(p) => {
                for l in p.layers() {
                    write_f64s(w, l.weight.data())?;
                    write_f64s(w, &l.bias)?;
                }
            }
            ParamBlock::Lora(a) => {
                write_f64s(w, a.a.data())?;
                write_f64s(w, a.b.data())?;
            }
        }
    }
    Ok(())
}

enum BlockShape {
    Mlp(Vec<(usize, usize, Activation)>),
    Lora { rank: usize, inp: usize, out: usize, alpha: f64 },
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<CheckpointFile> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let meta_len = read_u32(r, "metadata length")? as usize;
    let metadata = String::from_utf8(read_exact(r, meta_len, "metadata")?)
        .map_err(|e| Error::Format(format!("metadata is not UTF-8: {e}")))?;
    let n_blocks = read_u32(r, "block count")?;
    let mut shapes = Vec::new();
    for _ in 0..n_blocks {
        match read_u8(r, "block kind")? {
            BLOCK_MLP => {
                let n = read_u32(r, "layer count")?;
                let mut layers = Vec::new();
                for _ in 0..n {
                    let i = read_u32(r, "layer input")? as usize;
                    let o = read_u32(r, "layer output")? as usize;
                    let act = Activation::from_tag(read_u8(r, "activation")?)?;
                    layers.push((i, o, act));
                }
                shapes.push(BlockShape::Mlp(layers));
            }
            BLOCK_LORA => {
                let rank = read_u32(r, "rank")? as usize;
                let inp = read_u32(r, "adapter input")? as usize;
                let out = read_u32(r, "adapter output")? as usize;
                let alpha = read_f64(r, "alpha")?;
                shapes.push(BlockShape::Lora { rank, inp, out, alpha });
            }
            other => return Err(Error::Format(format!("unknown block kind {other}"))),
        }
    }
    let mut blocks = Vec::new();
    for shape in shapes {
        blocks.push(match shape {
            BlockShape::Mlp(layers) => {
                let mut built = Vec::new();
                for (i, o, activation) in layers {
                    let weight = Matrix::from_vec(o, i, read_f64s(r, o * i, "weights")?)?;
                    let bias = read_f64s(r, o, "bias")?;
                    built.push(Layer {
                        weight,
                        bias,
                        activation,
                    });
                }
                ParamBlock::Mlp(MlpParams::new(built)?)
            }
            BlockShape::Lora { rank, inp, out, alpha } => {
                let a = Matrix::from_vec(rank, inp, read_f64s(r, rank * inp, "adapter A")?)?;
                let b = Matrix::from_vec(out, rank, read_f64s(r, out * rank, "adapter B")?)?;
                ParamBlock::Lora(LoraAdapter::from_parts(rank, alpha, a, b)?)
            }
        });
    }
    expect_eof(r)?;
    Ok(CheckpointFile { metadata, blocks })
}
