//! Exact cosine k-NN over unit-normalized keyframe embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Embedding, Keyframe, KeyframeId, VideoId};
use crate::kfe::KfeFile;
use crate::par::{self, Execution};

/// Unit-norm tolerance for stored rows.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate keyframe {0}")]
    DuplicateKeyframe(String),
    #[error("row for {0} is not unit-normalized (norm {1})")]
    NotNormalized(String, f64),
    #[error("timestamps of video {0} do not increase with frame index")]
    NonMonotonic(String),
    #[error("invalid timestamp for {0}")]
    InvalidTimestamp(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHit {
    pub keyframe: KeyframeId,
    pub score: f64,
}

/// Dot product accumulated in `f64` in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(a.as_slice(), b.as_slice()) / denom)
}

/// Ranking order used everywhere hits are sorted: score descending, then
/// canonical id string ascending.
pub fn hit_order(a_score: f64, a_label: &str, b_score: f64, b_label: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_label.cmp(b_label))
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    data: Vec<f32>,
    keyframes: Vec<Keyframe>,
    labels: Vec<String>,
    row_of: HashMap<KeyframeId, usize>,
    by_video: BTreeMap<VideoId, Vec<usize>>,
    exec: Execution,
}

impl VectorIndex {
    /// Builds an index from `(id, timestamp, unit embedding)` rows. Row order is
    /// preserved; per-video row lists are sorted by timestamp.
    pub fn build(
        dim: usize,
        rows: impl IntoIterator<Item = (KeyframeId, f64, Embedding)>,
    ) -> Result<Self, IndexError> {
        let mut data = Vec::new();
        let mut keyframes = Vec::new();
        let mut labels = Vec::new();
        let mut row_of = HashMap::new();
        let mut by_video: BTreeMap<VideoId, Vec<usize>> = BTreeMap::new();
        for (row, (id, ts, emb)) in rows.into_iter().enumerate() {
            if emb.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: emb.dim(),
                });
            }
            let norm = emb.norm();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(IndexError::NotNormalized(id.render(), norm));
            }
            if !ts.is_finite() || ts < 0.0 {
                return Err(IndexError::InvalidTimestamp(id.render()));
            }
            if row_of.insert(id.clone(), row).is_some() {
                return Err(IndexError::DuplicateKeyframe(id.render()));
            }
            data.extend_from_slice(emb.as_slice());
            labels.push(id.render());
            by_video.entry(id.video.clone()).or_default().push(row);
            keyframes.push(Keyframe {
                id,
                timestamp_s: ts,
                embedding_row: row,
            });
        }
        for (video, rows) in by_video.iter_mut() {
            rows.sort_by(|&a, &b| {
                keyframes[a]
                    .timestamp_s
                    .total_cmp(&keyframes[b].timestamp_s)
                    .then(keyframes[a].id.frame_index.cmp(&keyframes[b].id.frame_index))
            });
            for w in rows.windows(2) {
                let (a, b) = (&keyframes[w[0]], &keyframes[w[1]]);
                if !(a.timestamp_s < b.timestamp_s && a.id.frame_index < b.id.frame_index) {
                    return Err(IndexError::NonMonotonic(video.to_string()));
                }
            }
        }
        Ok(Self {
            dim,
            data,
            keyframes,
            labels,
            row_of,
            by_video,
            exec: Execution::available(),
        })
    }

    /// Overrides how scoring scans are executed.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn keyframe(&self, row: usize) -> &Keyframe {
        &self.keyframes[row]
    }

    pub fn label(&self, row: usize) -> &str {
        &self.labels[row]
    }

    pub fn row(&self, id: &KeyframeId) -> Option<usize> {
        self.row_of.get(id).copied()
    }

    pub fn timestamp(&self, id: &KeyframeId) -> Option<f64> {
        self.row(id).map(|r| self.keyframes[r].timestamp_s)
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn embedding(&self, id: &KeyframeId) -> Option<Embedding> {
        self.row(id)
            .map(|r| Embedding::new(self.vector(r).to_vec()).expect("stored rows are finite"))
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoId> {
        self.by_video.keys()
    }

    /// Rows of a video in timestamp order.
    pub fn video_rows(&self, video: &VideoId) -> Option<&[usize]> {
        self.by_video.get(video).map(Vec::as_slice)
    }

    fn check_query(&self, query: &Embedding) -> Result<(), IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(())
    }

    /// Similarity of `query` to every row, in row order.
    pub fn score_all(&self, query: &Embedding) -> Result<Vec<f64>, IndexError> {
        self.check_query(query)?;
        let q = query.as_slice();
        Ok(par::map_range(self.exec, self.len(), |r| dot(q, self.vector(r))))
    }

    /// Similarity of `query` to the given rows, in the given order.
    pub fn score_rows(&self, query: &Embedding, rows: &[usize]) -> Result<Vec<f64>, IndexError> {
        self.check_query(query)?;
        let q = query.as_slice();
        Ok(par::map_slice(self.exec, rows, |&r| dot(q, self.vector(r))))
    }

    /// Top-`k` rows by descending cosine, ties broken by canonical id.
    pub fn search(
        &self,
        query: &Embedding,
        k: usize,
        restrict: Option<&HashSet<KeyframeId>>,
    ) -> Result<Vec<ScoredHit>, IndexError> {
        Ok(self
            .search_rows(query, k, restrict)?
            .into_iter()
            .map(|(row, score)| ScoredHit {
                keyframe: self.keyframes[row].id.clone(),
                score,
            })
            .collect())
    }

    /// Like [`search`](Self::search) but returns `(row, score)` pairs.
    pub fn search_rows(
        &self,
        query: &Embedding,
        k: usize,
        restrict: Option<&HashSet<KeyframeId>>,
    ) -> Result<Vec<(usize, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        self.check_query(query)?;
        let q = query.as_slice();
        let mut scored: Vec<(usize, f64)> = match restrict {
            None => par::map_range(self.exec, self.len(), |r| (r, dot(q, self.vector(r)))),
            Some(set) => {
                let mut rows: Vec<usize> = set.iter().filter_map(|id| self.row(id)).collect();
                rows.sort_unstable();
                par::map_slice(self.exec, &rows, |&r| (r, dot(q, self.vector(r))))
            }
        };
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            hit_order(a.1, &self.labels[a.0], b.1, &self.labels[b.0])
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored)
    }

    /// Every keyframe of `video` with its similarity to `query`, time-ordered.
    pub fn scores_for_video(
        &self,
        query: &Embedding,
        video: &VideoId,
    ) -> Result<Vec<(KeyframeId, f64)>, IndexError> {
        let rows = self
            .video_rows(video)
            .ok_or_else(|| IndexError::UnknownVideo(video.to_string()))?;
        let scores = self.score_rows(query, rows)?;
        Ok(rows
            .iter()
            .zip(scores)
            .map(|(&r, s)| (self.keyframes[r].id.clone(), s))
            .collect())
    }

    /// Up to `2 * span + 1` keyframes of `video` centred on `frame`.
    pub fn filmstrip(
        &self,
        video: &VideoId,
        frame: u32,
        span: usize,
    ) -> Result<Vec<&Keyframe>, IndexError> {
        let rows = self
            .video_rows(video)
            .ok_or_else(|| IndexError::UnknownVideo(video.to_string()))?;
        let pos = rows
            .iter()
            .position(|&r| self.keyframes[r].id.frame_index == frame)
            .ok_or_else(|| {
                IndexError::UnknownKeyframe(KeyframeId::new(video.as_str(), frame).render())
            })?;
        let lo = pos.saturating_sub(span);
        let hi = (pos + span + 1).min(rows.len());
        Ok(rows[lo..hi].iter().map(|&r| &self.keyframes[r]).collect())
    }

    /// Rows as a KFE file keyed by canonical id, in row order.
    pub fn to_kfe(&self) -> KfeFile {
        let mut f = KfeFile::new(self.dim);
        for (r, label) in self.labels.iter().enumerate() {
            f.records.push((label.clone(), self.vector(r).to_vec()));
        }
        f
    }
}
