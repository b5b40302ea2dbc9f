//! Corpus ingestion and the on-disk corpus directory.
//!
//! A corpus directory holds:
//!
//! - `index.kfe`: surviving keyframe vectors keyed by canonical id, row order
//! - `keyframes.json`: id and timestamp per row
//! - `metadata.jsonl`: metadata snapshot
//! - `dedup_report.json`
//! - `corpus.json`: dimension and ASR window

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Embedding, KeyframeId};
use crate::dedup::{dedup, DedupConfig, DedupItem, DedupReport};
use crate::index::{IndexError, VectorIndex};
use crate::kfe::{KfeError, KfeFile};
use crate::metadata::{parse_jsonl, MetadataError, MetadataLine, MetadataStore, DEFAULT_TAU_ASR};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("format error: {0}")]
    Format(String),
    #[error("metadata references keyframe {0} which has no embedding")]
    DanglingMetadata(String),
    #[error("keyframe {0} has an embedding but no metadata record")]
    MissingMetadata(String),
    #[error("dimension mismatch: corpus expects {expected}, file has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<KfeError> for IngestError {
    fn from(e: KfeError) -> Self {
        match e {
            KfeError::Format(m) => IngestError::Format(m),
            KfeError::Io(source) => IngestError::Io {
                path: PathBuf::new(),
                source,
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Expected embedding dimension; `None` accepts the file's.
    pub dim: Option<usize>,
    pub dedup: DedupConfig,
    pub tau_asr: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            dim: None,
            dedup: DedupConfig::default(),
            tau_asr: DEFAULT_TAU_ASR,
        }
    }
}

/// A searchable corpus: vector index, metadata store and the dedup report
/// produced when it was ingested.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub index: VectorIndex,
    pub store: MetadataStore,
    pub report: DedupReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusInfo {
    dim: usize,
    count: usize,
    tau_asr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyframeRow {
    id: KeyframeId,
    timestamp_s: f64,
}

/// Validates, deduplicates and indexes precomputed embeddings and metadata.
/// Nothing is returned unless every step succeeds.
pub fn ingest(kfe: KfeFile, lines: Vec<MetadataLine>, cfg: &IngestConfig) -> Result<Corpus, IngestError> {
    if let Some(expected) = cfg.dim {
        if kfe.dim != expected {
            return Err(IngestError::DimensionMismatch {
                expected,
                got: kfe.dim,
            });
        }
    }
    let dim = kfe.dim;
    let mut vectors: HashMap<KeyframeId, Embedding> = HashMap::with_capacity(kfe.len());
    for (key, v) in kfe.records {
        let id = KeyframeId::parse(&key).map_err(|e| IngestError::Format(e.to_string()))?;
        let e = Embedding::normalized(v)
            .map_err(|e| IngestError::Format(format!("vector for {key}: {e}")))?;
        vectors.insert(id, e);
    }

    let mut store = MetadataStore::from_lines(lines, cfg.tau_asr)?;
    let mut dangling: Vec<String> = store
        .keyframes()
        .filter(|(id, _)| !vectors.contains_key(id))
        .map(|(id, _)| id.render())
        .collect();
    dangling.sort();
    if let Some(first) = dangling.into_iter().next() {
        return Err(IngestError::DanglingMetadata(first));
    }
    let mut missing: Vec<String> = vectors
        .keys()
        .filter(|id| store.get(id).is_none())
        .map(|id| id.render())
        .collect();
    missing.sort();
    if let Some(first) = missing.into_iter().next() {
        return Err(IngestError::MissingMetadata(first));
    }

    let mut ordered: Vec<(&KeyframeId, f64)> = store
        .keyframes()
        .map(|(id, k)| (id, k.timestamp_s))
        .collect();
    ordered.sort_by(|a, b| a.0.video.cmp(&b.0.video).then(a.1.total_cmp(&b.1)));
    let items: Vec<DedupItem<'_>> = ordered
        .iter()
        .map(|(id, ts)| DedupItem {
            id,
            timestamp_s: *ts,
            hash: store.get(id).and_then(|k| k.phash),
            embedding: vectors[*id].as_slice(),
        })
        .collect();
    let (report, survivors) = dedup(&items, cfg.dedup, Execution::available());
    let rows: Vec<(KeyframeId, f64, Embedding)> = survivors
        .iter()
        .map(|&i| {
            let id = items[i].id.clone();
            let e = vectors[&id].clone();
            (id, items[i].timestamp_s, e)
        })
        .collect();
    let keep: HashSet<KeyframeId> = rows.iter().map(|r| r.0.clone()).collect();
    drop(items);
    let index = VectorIndex::build(dim, rows)?;
    store.retain(&keep);
    Ok(Corpus {
        index,
        store,
        report,
    })
}

/// Reads a KFE embeddings file and a metadata JSONL file, then [`ingest`]s them.
pub fn ingest_files(
    embeddings: impl AsRef<Path>,
    metadata: impl AsRef<Path>,
    cfg: &IngestConfig,
) -> Result<Corpus, IngestError> {
    let embeddings = embeddings.as_ref();
    let metadata = metadata.as_ref();
    let kfe = KfeFile::read(embeddings).map_err(|e| match e {
        KfeError::Io(source) => IngestError::Io {
            path: embeddings.to_path_buf(),
            source,
        },
        KfeError::Format(m) => IngestError::Format(format!("{}: {m}", embeddings.display())),
    })?;
    let f = fs::File::open(metadata).map_err(io_err(metadata))?;
    let lines = parse_jsonl(BufReader::new(f))?;
    ingest(kfe, lines, cfg)
}

impl Corpus {
    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Writes the corpus to `dir`, replacing any previous contents in one
    /// rename so readers never see a partial directory.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IngestError> {
        let dir = dir.as_ref();
        let parent = dir
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let name = dir
            .file_name()
            .ok_or_else(|| IngestError::Format(format!("invalid corpus dir {}", dir.display())))?
            .to_string_lossy()
            .to_string();
        let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        self.write_files(&staging)?;

        let backup = parent.join(format!(".{name}.old-{}", std::process::id()));
        let had_previous = dir.exists();
        if had_previous {
            fs::rename(dir, &backup).map_err(io_err(dir))?;
        }
        if let Err(e) = fs::rename(&staging, dir) {
            if had_previous {
                let _ = fs::rename(&backup, dir);
            }
            return Err(io_err(dir)(e));
        }
        if had_previous {
            fs::remove_dir_all(&backup).map_err(io_err(&backup))?;
        }
        Ok(())
    }

    fn write_files(&self, dir: &Path) -> Result<(), IngestError> {
        let p = dir.join("index.kfe");
        self.index.to_kfe().write(&p).map_err(|e| match e {
            KfeError::Io(source) => IngestError::Io { path: p.clone(), source },
            KfeError::Format(m) => IngestError::Format(m),
        })?;
        let rows: Vec<KeyframeRow> = self
            .index
            .keyframes()
            .iter()
            .map(|k| KeyframeRow {
                id: k.id.clone(),
                timestamp_s: k.timestamp_s,
            })
            .collect();
        write_json(&dir.join("keyframes.json"), &rows)?;
        write_json(&dir.join("dedup_report.json"), &self.report)?;
        write_json(
            &dir.join("corpus.json"),
            &CorpusInfo {
                dim: self.index.dim(),
                count: self.index.len(),
                tau_asr: self.store.tau_asr(),
            },
        )?;
        let p = dir.join("metadata.jsonl");
        let f = fs::File::create(&p).map_err(io_err(&p))?;
        let mut w = std::io::BufWriter::new(f);
        self.store.write_jsonl(&mut w).map_err(io_err(&p))?;
        use std::io::Write;
        w.flush().map_err(io_err(&p))?;
        Ok(())
    }

    /// Loads a corpus directory written by [`save`](Self::save).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref();
        let info: CorpusInfo = read_json(&dir.join("corpus.json"))?;
        let rows: Vec<KeyframeRow> = read_json(&dir.join("keyframes.json"))?;
        let report: DedupReport = read_json(&dir.join("dedup_report.json"))?;
        let kfe_path = dir.join("index.kfe");
        let kfe = KfeFile::read(&kfe_path).map_err(|e| match e {
            KfeError::Io(source) => IngestError::Io { path: kfe_path.clone(), source },
            KfeError::Format(m) => IngestError::Format(m),
        })?;
        if kfe.dim != info.dim {
            return Err(IngestError::DimensionMismatch {
                expected: info.dim,
                got: kfe.dim,
            });
        }
        if kfe.len() != rows.len() || rows.len() != info.count {
            return Err(IngestError::Format(format!(
                "index has {} rows, keyframe table {}, corpus.json {}",
                kfe.len(),
                rows.len(),
                info.count
            )));
        }
        let mut index_rows = Vec::with_capacity(rows.len());
        for ((key, v), row) in kfe.records.into_iter().zip(rows) {
            if key != row.id.render() {
                return Err(IngestError::Format(format!(
                    "row order mismatch: index has {key}, table has {}",
                    row.id
                )));
            }
            let e = Embedding::new(v).map_err(|e| IngestError::Format(e.to_string()))?;
            index_rows.push((row.id, row.timestamp_s, e));
        }
        let index = VectorIndex::build(info.dim, index_rows)?;
        let p = dir.join("metadata.jsonl");
        let f = fs::File::open(&p).map_err(io_err(&p))?;
        let store = MetadataStore::from_lines(parse_jsonl(BufReader::new(f))?, info.tau_asr)?;
        Ok(Self {
            index,
            store,
            report,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| IngestError::Format(e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| IngestError::Format(format!("{}: {e}", path.display())))
}

/// Reads only the dedup report of a saved corpus.
pub fn read_dedup_report(dir: impl AsRef<Path>) -> Result<DedupReport, IngestError> {
    read_json(&dir.as_ref().join("dedup_report.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::KeyframeLine;
    use crate::phash::PerceptualHash;

    fn line(id: &KeyframeId, t: f64, hash: u64) -> MetadataLine {
        MetadataLine::Keyframe(KeyframeLine {
            id: id.clone(),
            timestamp: t,
            ocr: String::new(),
            caption: format!("frame {}", id.frame_index),
            objects: vec![],
            phash: Some(PerceptualHash(hash)),
        })
    }

    /// Ten keyframes across two videos; frames 3 and 7 duplicate their
    /// predecessors exactly.
    fn fixture() -> (KfeFile, Vec<MetadataLine>) {
        let mut kfe = KfeFile::new(4);
        let mut lines = Vec::new();
        for i in 0..10u32 {
            let video = if i < 5 { "A" } else { "B" };
            let id = KeyframeId::new(video, i);
            let dup = i == 3 || i == 7;
            let base = if dup { i - 1 } else { i };
            let mut v = vec![0.0f32; 4];
            v[(base % 4) as usize] = 1.0;
            v[((base + 1) % 4) as usize] = base as f32 * 0.1;
            kfe.push(id.render(), v).unwrap();
            let hash = (base as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            lines.push(line(&id, i as f64, hash));
        }
        (kfe, lines)
    }

    #[test]
    fn counts_add_up() {
        let (kfe, lines) = fixture();
        let c = ingest(kfe, lines, &IngestConfig::default()).unwrap();
        assert_eq!(c.index.len(), 8);
        assert_eq!(c.report.kept, 8);
        assert_eq!(c.report.total(), 10);
        assert_eq!(c.store.len(), 8);
    }

    #[test]
    fn dangling_metadata_names_key() {
        let (kfe, mut lines) = fixture();
        lines.push(line(&KeyframeId::new("Z", 9), 1.0, 0));
        match ingest(kfe, lines, &IngestConfig::default()) {
            Err(IngestError::DanglingMetadata(k)) => assert_eq!(k, "Z/0009"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (kfe, lines) = fixture();
        let cfg = IngestConfig {
            dim: Some(512),
            ..Default::default()
        };
        assert!(matches!(
            ingest(kfe, lines, &cfg),
            Err(IngestError::DimensionMismatch { expected: 512, got: 4 })
        ));
    }

    #[test]
    fn missing_metadata() {
        let (kfe, mut lines) = fixture();
        lines.pop();
        assert!(matches!(
            ingest(kfe, lines, &IngestConfig::default()),
            Err(IngestError::MissingMetadata(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let (kfe, lines) = fixture();
        let c = ingest(kfe, lines, &IngestConfig::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("corpus");
        c.save(&dir).unwrap();
        // saving again replaces in place
        c.save(&dir).unwrap();
        let back = Corpus::load(&dir).unwrap();
        assert_eq!(back.index.len(), c.index.len());
        assert_eq!(back.report, c.report);
        for k in c.index.keyframes() {
            let r = back.index.row(&k.id).unwrap();
            assert_eq!(back.index.vector(r), c.index.vector(k.embedding_row));
        }
        assert_eq!(back.store.to_lines(), c.store.to_lines());
        assert_eq!(read_dedup_report(&dir).unwrap(), c.report);
        let leftovers: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
