//! Caption datastore: ingestion, unit-normalized embeddings and the binary
//! index file.
//!
//! A store is assembled with a [`StoreBuilder`] (single writer) and then
//! frozen into an immutable [`EmbeddingStore`]. Frozen stores are `Sync` and
//! can be shared by any number of concurrent readers.
//!
//! Index file layout (all integers little-endian):
//!
//! ```text
//! "RAGC" | version: u16 | manifest_len: u32 | manifest JSON
//!        | vectors: count * dimension * f32
//!        | entries_len: u64 | entries JSON array
//!        | checksum: u64  (xxh3-64 of every preceding byte)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, Xxh3};

use crate::provider::{Gateway, ProviderError};

pub const INDEX_MAGIC: &[u8; 4] = b"RAGC";
pub const INDEX_VERSION: u16 = 1;
/// Texts without a precomputed vector are embedded in chunks of this size.
pub const EMBED_BATCH_SIZE: usize = 256;

const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error("no captions ingested")]
    Empty,
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("provider mismatch: store built with `{store}`, query from `{query}`")]
    ProviderMismatch { store: String, query: String },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("cannot save an empty store")]
    SaveEmpty,
    #[error("record {record} has no embedding and no provider was given")]
    MissingEmbedding { record: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatastoreEntry {
    pub id: u64,
    pub text: String,
    pub language: String,
    pub source: String,
}

/// A unit-length vector plus the norm it had before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    norm: f32,
}

impl Embedding {
    /// Wraps a vector that is already unit length (within 1e-5), such as a
    /// row read back from an index.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, StoreError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return normalize(&values);
        }
        Ok(Embedding {
            values,
            norm: norm as f32,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    /// Euclidean norm of the raw vector this embedding was built from.
    pub fn raw_norm(&self) -> f32 {
        self.norm
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Embedding) -> f64 {
        crate::knn::dot_f64(&self.values, &other.values)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Scales `raw` to unit Euclidean length.
pub fn normalize(raw: &[f32]) -> Result<Embedding, StoreError> {
    let norm = l2_norm(raw);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(StoreError::DegenerateEmbedding);
    }
    let values = raw.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
    Ok(Embedding {
        values,
        norm: norm as f32,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub dimension: usize,
    pub count: usize,
    pub provider_id: String,
    /// Unix seconds. Honors `SOURCE_DATE_EPOCH` when set.
    pub created_at: u64,
    /// xxh3-64 of the little-endian vector block, lowercase hex.
    pub checksum: String,
}

/// Current time in unix seconds, or `SOURCE_DATE_EPOCH` when it is set.
pub fn timestamp_now() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionFormat {
    Jsonl,
    CocoJson,
}

impl std::str::FromStr for CaptionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CaptionFormat::Jsonl),
            "coco-json" => Ok(CaptionFormat::CocoJson),
            other => Err(format!("unknown caption format `{other}` (expected jsonl or coco-json)")),
        }
    }
}

impl std::fmt::Display for CaptionFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaptionFormat::Jsonl => "jsonl",
            CaptionFormat::CocoJson => "coco-json",
        })
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    language: Option<String>,
    embedding: Option<Vec<f32>>,
}

#[derive(Deserialize)]
struct CocoAnnotations {
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    #[allow(dead_code)]
    image_id: serde_json::Value,
    caption: String,
}

/// One parsed caption before embedding.
#[derive(Debug, Clone)]
pub struct CaptionRecord {
    pub text: String,
    pub language: Option<String>,
    pub embedding: Option<Vec<f32>>,
}

/// Parses a caption corpus without touching any store.
pub fn read_captions(path: &Path, format: CaptionFormat) -> Result<Vec<CaptionRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let records = match format {
        CaptionFormat::Jsonl => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                    record: i + 1,
                    message: e.to_string(),
                })?;
                out.push((i + 1, rec.text, rec.language, rec.embedding));
            }
            out
        }
        CaptionFormat::CocoJson => {
            let doc: CocoAnnotations =
                serde_json::from_reader(BufReader::new(file)).map_err(|e| StoreError::Parse {
                    record: e.line(),
                    message: e.to_string(),
                })?;
            doc.annotations
                .into_iter()
                .enumerate()
                .map(|(i, a)| (i, a.caption, None, None))
                .collect()
        }
    };
    let mut out = Vec::with_capacity(records.len());
    for (record, text, language, embedding) in records {
        if text.trim().is_empty() {
            return Err(StoreError::Parse {
                record,
                message: "empty caption".into(),
            });
        }
        out.push(CaptionRecord {
            text,
            language,
            embedding,
        });
    }
    if out.is_empty() {
        return Err(StoreError::Empty);
    }
    Ok(out)
}

/// Mutable, single-writer store under construction.
#[derive(Debug, Clone)]
pub struct StoreBuilder {
    dimension: usize,
    provider_id: String,
    entries: Vec<DatastoreEntry>,
    vectors: Vec<f32>,
}

impl StoreBuilder {
    pub fn new(dimension: usize, provider_id: impl Into<String>) -> Self {
        assert!(dimension > 0, "store dimension must be positive");
        StoreBuilder {
            dimension,
            provider_id: provider_id.into(),
            entries: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatastoreEntry] {
        &self.entries
    }

    /// Appends one caption with a raw vector; the vector is normalized here.
    pub fn push(
        &mut self,
        text: impl Into<String>,
        language: impl Into<String>,
        source: impl Into<String>,
        raw: &[f32],
    ) -> Result<u64, StoreError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(StoreError::Parse {
                record: self.entries.len(),
                message: "empty caption".into(),
            });
        }
        if raw.len() != self.dimension {
            return Err(StoreError::Dimension {
                expected: self.dimension,
                actual: raw.len(),
            });
        }
        let emb = normalize(raw)?;
        let id = self.entries.len() as u64;
        self.vectors.extend_from_slice(emb.values());
        self.entries.push(DatastoreEntry {
            id,
            text,
            language: language.into(),
            source: source.into(),
        });
        Ok(id)
    }

    /// Appends every caption of `path`. Records lacking an `embedding` field
    /// are embedded through `gateway` in chunks of [`EMBED_BATCH_SIZE`].
    /// Returns the number of entries added.
    pub fn ingest_captions(
        &mut self,
        path: &Path,
        format: CaptionFormat,
        source_tag: &str,
        language: &str,
        gateway: Option<&Gateway>,
    ) -> Result<usize, StoreError> {
        let records = read_captions(path, format)?;
        self.ingest_records(records, source_tag, language, gateway)
    }

    pub fn ingest_records(
        &mut self,
        records: Vec<CaptionRecord>,
        source_tag: &str,
        language: &str,
        gateway: Option<&Gateway>,
    ) -> Result<usize, StoreError> {
        if records.is_empty() {
            return Err(StoreError::Empty);
        }
        if let Some(gw) = gateway {
            let manifest = gw.manifest();
            if manifest.provider_id != self.provider_id {
                return Err(StoreError::ProviderMismatch {
                    store: self.provider_id.clone(),
                    query: manifest.provider_id.clone(),
                });
            }
        }

        // Fill in missing vectors first so a provider failure leaves the
        // builder untouched.
        let missing: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.embedding.is_none())
            .map(|(i, _)| i)
            .collect();
        let mut fetched: Vec<Option<Vec<f32>>> = vec![None; records.len()];
        if !missing.is_empty() {
            let gw = gateway.ok_or(StoreError::MissingEmbedding { record: missing[0] + 1 })?;
            for chunk in missing.chunks(EMBED_BATCH_SIZE) {
                let texts: Vec<String> = chunk.iter().map(|&i| records[i].text.clone()).collect();
                let embs = gw.embed_texts(&texts)?;
                for (&i, emb) in chunk.iter().zip(embs) {
                    fetched[i] = Some(emb.into_values());
                }
            }
        }

        let mut staged = self.clone();
        for (i, (rec, fetched)) in records.into_iter().zip(fetched).enumerate() {
            let vector = rec.embedding.or(fetched).expect("vector filled above");
            let lang = rec.language.unwrap_or_else(|| language.to_string());
            staged
                .push(rec.text, lang, source_tag, &vector)
                .map_err(|e| match e {
                    StoreError::Dimension { expected, actual } => StoreError::Parse {
                        record: i + 1,
                        message: format!("embedding has dimension {actual}, expected {expected}"),
                    },
                    other => other,
                })?;
        }
        let added = staged.len() - self.len();
        *self = staged;
        Ok(added)
    }

    pub fn freeze(self) -> EmbeddingStore {
        EmbeddingStore {
            dimension: self.dimension,
            provider_id: self.provider_id,
            created_at: timestamp_now(),
            entries: self.entries,
            vectors: self.vectors,
        }
    }
}

/// Immutable store. Rows are unit-length f32 vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    provider_id: String,
    created_at: u64,
    entries: Vec<DatastoreEntry>,
    vectors: Vec<f32>,
}

impl EmbeddingStore {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatastoreEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u64) -> Option<&DatastoreEntry> {
        self.entries.get(id as usize)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        let start = id as usize * self.dimension;
        self.vectors.get(start..start + self.dimension)
    }

    /// Rejects queries produced by a different embedding provider.
    pub fn check_provider(&self, provider_id: &str) -> Result<(), StoreError> {
        if provider_id != self.provider_id {
            return Err(StoreError::ProviderMismatch {
                store: self.provider_id.clone(),
                query: provider_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            dimension: self.dimension,
            count: self.entries.len(),
            provider_id: self.provider_id.clone(),
            created_at: self.created_at,
            checksum: format!("{:016x}", xxh3_64(vector_bytes(&self.vectors).as_ref())),
        }
    }

    pub fn save_index(&self, path: &Path) -> Result<StoreManifest, StoreError> {
        if self.is_empty() {
            return Err(StoreError::SaveEmpty);
        }
        let manifest = self.manifest();
        let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let entries_json = serde_json::to_vec(&self.entries).expect("entries serialize");

        let file = File::create(path).map_err(io_err(path))?;
        let mut out = HashingWriter::new(BufWriter::with_capacity(1 << 20, file));
        let write = |out: &mut HashingWriter<_>, bytes: &[u8]| out.write_all(bytes);
        (|| -> std::io::Result<()> {
            write(&mut out, INDEX_MAGIC)?;
            write(&mut out, &INDEX_VERSION.to_le_bytes())?;
            write(&mut out, &(manifest_json.len() as u32).to_le_bytes())?;
            write(&mut out, &manifest_json)?;
            write(&mut out, vector_bytes(&self.vectors).as_ref())?;
            write(&mut out, &(entries_json.len() as u64).to_le_bytes())?;
            write(&mut out, &entries_json)?;
            let digest = out.digest();
            out.inner.write_all(&digest.to_le_bytes())?;
            out.inner.flush()
        })()
        .map_err(io_err(path))?;
        Ok(manifest)
    }

    /// Loads and verifies an index. `expected_dimension`, when given, must
    /// match the file.
    pub fn load_index(path: &Path, expected_dimension: Option<usize>) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::from_index_bytes(&bytes, expected_dimension)
    }

    pub fn from_index_bytes(bytes: &[u8], expected_dimension: Option<usize>) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::Corrupt(m.to_string());
        if bytes.len() < 4 + 2 + 4 + 8 {
            return Err(corrupt("file too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        if xxh3_64(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }

        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(4).ok_or_else(|| corrupt("truncated magic"))? != INDEX_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes(cur.array().ok_or_else(|| corrupt("truncated version"))?);
        if version != INDEX_VERSION {
            return Err(StoreError::Corrupt(format!("unsupported format version {version}")));
        }
        let mlen = u32::from_le_bytes(cur.array().ok_or_else(|| corrupt("truncated manifest"))?) as usize;
        let manifest: StoreManifest = serde_json::from_slice(
            cur.take(mlen).ok_or_else(|| corrupt("truncated manifest"))?,
        )
        .map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;

        if let Some(expected) = expected_dimension {
            if expected != manifest.dimension {
                return Err(StoreError::Dimension {
                    expected,
                    actual: manifest.dimension,
                });
            }
        }
        if manifest.dimension == 0 {
            return Err(corrupt("zero dimension"));
        }

        let vlen = manifest
            .count
            .checked_mul(manifest.dimension)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("vector block size overflows"))?;
        let vblock = cur.take(vlen).ok_or_else(|| corrupt("truncated vector block"))?;
        if format!("{:016x}", xxh3_64(vblock)) != manifest.checksum {
            return Err(corrupt("vector block checksum mismatch"));
        }
        let vectors: Vec<f32> = vblock
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let elen = u64::from_le_bytes(cur.array().ok_or_else(|| corrupt("truncated entry block"))?) as usize;
        let entries: Vec<DatastoreEntry> =
            serde_json::from_slice(cur.take(elen).ok_or_else(|| corrupt("truncated entry block"))?)
                .map_err(|e| StoreError::Corrupt(format!("entries: {e}")))?;
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        if entries.len() != manifest.count {
            return Err(corrupt("entry count disagrees with manifest"));
        }
        if entries.iter().enumerate().any(|(i, e)| e.id != i as u64) {
            return Err(corrupt("entry ids are not dense"));
        }

        Ok(EmbeddingStore {
            dimension: manifest.dimension,
            provider_id: manifest.provider_id,
            created_at: manifest.created_at,
            entries,
            vectors,
        })
    }
}

fn vector_bytes(v: &[f32]) -> std::borrow::Cow<'_, [u8]> {
    if cfg!(target_endian = "little") {
        // SAFETY: f32 has no padding and any bit pattern is a valid u8.
        std::borrow::Cow::Borrowed(unsafe {
            std::slice::from_raw_parts(v.as_ptr().cast::<u8>(), std::mem::size_of_val(v))
        })
    } else {
        std::borrow::Cow::Owned(v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Xxh3,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        HashingWriter {
            inner,
            hasher: Xxh3::new(),
        }
    }

    fn write_all(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)
    }

    fn digest(&self) -> u64 {
        self.hasher.digest()
    }
}
