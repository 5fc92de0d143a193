//! Embedding index over a fixed document collection.
//!
//! On-disk layout of a knowledge-base directory:
//!
//! * `documents.jsonl`: one `{"id":u32,"url":str,"text":str}` object per line,
//!   row `i` of the matrix belongs to line `i`.
//! * `vectors.bin`: magic `FCKBVEC1` (8 bytes), row count (u64 LE), dim
//!   (u32 LE), then `rows * dim` f32 LE values, row-major.
//!
//! While a build is in progress the directory also holds `vectors.partial`
//! (rows written so far, raw f32 LE) and `build.json` (dim and rows done).

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCKBVEC1";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";
const PARTIAL_FILE: &str = "vectors.partial";
const CHECKPOINT_FILE: &str = "build.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbDocument {
    pub id: u32,
    pub url: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    documents: Vec<KbDocument>,
    dim: usize,
    vectors: Vec<f32>,
    norms: Vec<f64>,
}

fn norm(row: &[f32]) -> f64 {
    row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector has zero length.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    dot / (na * nb)
}

impl KnowledgeBase {
    pub fn new(documents: Vec<KbDocument>, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::KnowledgeBase("dimension must be positive".into()));
        }
        if vectors.len() != documents.len() * dim {
            return Err(Error::KnowledgeBase(format!(
                "{} documents but {} values for dim {dim}",
                documents.len(),
                vectors.len()
            )));
        }
        let norms = vectors.chunks(dim).map(norm).collect();
        Ok(Self {
            documents,
            dim,
            vectors,
            norms,
        })
    }

    pub fn from_rows(documents: Vec<KbDocument>, rows: Vec<Vec<f32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::KnowledgeBase(format!(
                "row {bad} has length {} instead of {dim}",
                rows[bad].len()
            )));
        }
        Self::new(documents, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn documents(&self) -> &[KbDocument] {
        &self.documents
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` most cosine-similar documents, best first; equal scores are
    /// ordered by ascending document id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(&KbDocument, f64)>> {
        if self.is_empty() {
            return Err(Error::KnowledgeBase("knowledge base is empty".into()));
        }
        if k > self.len() {
            return Err(Error::KnowledgeBase(format!(
                "k = {k} exceeds the {} indexed documents",
                self.len()
            )));
        }
        if query.len() != self.dim {
            return Err(Error::KnowledgeBase(format!(
                "query has dim {} but the index has {}",
                query.len(),
                self.dim
            )));
        }
        let qn = norm(query);
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let denom = qn * self.norms[i];
                let s = if denom == 0.0 {
                    0.0
                } else {
                    self.row(i)
                        .iter()
                        .zip(query)
                        .map(|(x, y)| *x as f64 * *y as f64)
                        .sum::<f64>()
                        / denom
                };
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.documents[a.0].id.cmp(&self.documents[b.0].id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (&self.documents[i], s))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_documents(&dir.join(DOCUMENTS_FILE), &self.documents)?;
        let mut w = BufWriter::new(File::create(dir.join(VECTORS_FILE))?);
        write_header(&mut w, self.len() as u64, self.dim as u32)?;
        for v in &self.vectors {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let docs_path = dir.join(DOCUMENTS_FILE);
        if !docs_path.exists() {
            return Err(Error::KnowledgeBase(format!("{} not found", docs_path.display())));
        }
        let documents = read_documents(&docs_path)?;
        let mut r = BufReader::new(File::open(dir.join(VECTORS_FILE))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::KnowledgeBase("vector file has the wrong magic bytes".into()));
        }
        let mut rows = [0u8; 8];
        r.read_exact(&mut rows)?;
        let mut dim = [0u8; 4];
        r.read_exact(&mut dim)?;
        let (rows, dim) = (u64::from_le_bytes(rows) as usize, u32::from_le_bytes(dim) as usize);
        if rows != documents.len() {
            return Err(Error::KnowledgeBase(format!(
                "{rows} vectors for {} documents",
                documents.len()
            )));
        }
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != rows * dim * 4 {
            return Err(Error::KnowledgeBase("vector file is truncated".into()));
        }
        let vectors = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(documents, dim, vectors)
    }
}

fn write_header(w: &mut impl Write, rows: u64, dim: u32) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())
}

fn write_documents(path: &Path, docs: &[KbDocument]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_documents(path: &Path) -> Result<Vec<KbDocument>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CorpusLine {
    #[serde(default)]
    url: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    url2text: Option<Vec<String>>,
}

/// Reads a JSONL corpus of `{url, text}` or `{url, url2text: [..]}` lines.
/// Documents are numbered from 0 in file order; blank documents are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<KbDocument>> {
    let file = File::open(path).map_err(|_| Error::DatasetNotFound(path.to_path_buf()))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::SchemaMismatch(format!("{} line {}: {e}", path.display(), n + 1)))?;
        let text = match (parsed.text, parsed.url2text) {
            (Some(t), _) => t,
            (None, Some(parts)) => parts.join("\n"),
            (None, None) => {
                return Err(Error::SchemaMismatch(format!(
                    "{} line {}: no text field",
                    path.display(),
                    n + 1
                )));
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        docs.push(KbDocument {
            id: docs.len() as u32,
            url: parsed.url,
            text,
        });
    }
    if docs.is_empty() {
        return Err(Error::SchemaMismatch(format!("{} holds no documents", path.display())));
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Checkpoint {
    dim: usize,
    rows_done: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildStats {
    pub documents: usize,
    pub embedded_now: usize,
    pub resumed_from: usize,
}

/// Embeds `documents` in batches and writes the index to `dir`. If a previous
/// build of the same documents was interrupted, embedding resumes after the
/// last completed batch. On error the checkpoint is left in place.
pub fn build_index<F>(documents: &[KbDocument], dir: &Path, batch_size: usize, mut embed: F) -> Result<BuildStats>
where
    F: FnMut(&[String]) -> Result<Vec<Vec<f32>>>,
{
    if documents.is_empty() {
        return Err(Error::KnowledgeBase("cannot index an empty corpus".into()));
    }
    fs::create_dir_all(dir)?;
    let docs_path = dir.join(DOCUMENTS_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let partial_path = dir.join(PARTIAL_FILE);

    let mut ckpt: Option<Checkpoint> = None;
    if ckpt_path.exists() && docs_path.exists() && read_documents(&docs_path)? == documents {
        ckpt = Some(serde_json::from_str(&fs::read_to_string(&ckpt_path)?)?);
    } else {
        write_documents(&docs_path, documents)?;
        let _ = fs::remove_file(&partial_path);
        let _ = fs::remove_file(&ckpt_path);
    }
    let resumed_from = ckpt.map_or(0, |c| c.rows_done);
    if let Some(c) = ckpt {
        let keep = (c.rows_done * c.dim * 4) as u64;
        let f = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(false)
            .open(&partial_path)?;
        f.set_len(keep)?;
    }
    let mut partial = OpenOptions::new().create(true).append(true).open(&partial_path)?;

    let batch_size = batch_size.max(1);
    let mut done = resumed_from;
    while done < documents.len() {
        let end = (done + batch_size).min(documents.len());
        let texts: Vec<String> = documents[done..end].iter().map(|d| d.text.clone()).collect();
        let rows = embed(&texts)?;
        if rows.len() != texts.len() {
            return Err(Error::EmbedderUnavailable(format!(
                "{} vectors for {} texts",
                rows.len(),
                texts.len()
            )));
        }
        let dim = ckpt.map_or_else(|| rows[0].len(), |c| c.dim);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::EmbedderUnavailable(
                "embedding dimension changed within a build".into(),
            ));
        }
        let mut buf = Vec::with_capacity(rows.len() * dim * 4);
        for v in rows.iter().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        partial.write_all(&buf)?;
        partial.sync_data()?;
        done = end;
        let c = Checkpoint { dim, rows_done: done };
        fs::write(&ckpt_path, serde_json::to_vec(&c)?)?;
        ckpt = Some(c);
    }
    drop(partial);

    let dim = ckpt.map(|c| c.dim).expect("at least one batch ran or was resumed");
    let body = fs::read(&partial_path)?;
    let mut out = BufWriter::new(File::create(dir.join(VECTORS_FILE))?);
    write_header(&mut out, documents.len() as u64, dim as u32)?;
    out.write_all(&body)?;
    out.flush()?;
    fs::remove_file(&partial_path)?;
    fs::remove_file(&ckpt_path)?;
    Ok(BuildStats {
        documents: documents.len(),
        embedded_now: documents.len() - resumed_from,
        resumed_from,
    })
}
