//! Shared domain types: keyframe identifiers, embeddings, decomposed queries,
//! metadata records, candidate segments and event paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("malformed keyframe id {0:?}: {1}")]
    MalformedId(String, &'static str),
    #[error("query has no events")]
    NoEvents,
    #[error("event {0} is blank")]
    BlankEvent(usize),
    #[error("invalid event path: {0}")]
    InvalidPath(String),
    #[error("embedding has non-finite component at {0}")]
    NonFinite(usize),
    #[error("embedding has zero norm")]
    ZeroNorm,
}

/// Opaque video identifier such as `V0001`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VideoId(pub String);

impl VideoId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A keyframe is addressed by its video and its frame index. The canonical
/// rendering is `{video}/{frame_index}` with the index zero-padded to at least
/// four digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyframeId {
    pub video: VideoId,
    pub frame_index: u32,
}

impl KeyframeId {
    pub fn new(video: impl Into<String>, frame_index: u32) -> Self {
        Self {
            video: VideoId(video.into()),
            frame_index,
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        // The video part may itself contain '/', so split on the last one.
        let (video, frame) = s
            .rsplit_once('/')
            .ok_or_else(|| CorpusError::MalformedId(s.to_string(), "missing '/' separator"))?;
        if video.is_empty() {
            return Err(CorpusError::MalformedId(s.to_string(), "empty video part"));
        }
        if frame.is_empty() || !frame.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CorpusError::MalformedId(s.to_string(), "non-numeric frame index"));
        }
        let frame_index = frame
            .parse::<u32>()
            .map_err(|_| CorpusError::MalformedId(s.to_string(), "frame index out of range"))?;
        Ok(Self::new(video, frame_index))
    }
}

impl fmt::Display for KeyframeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:04}", self.video, self.frame_index)
    }
}

impl FromStr for KeyframeId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for KeyframeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeyframeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One indexed keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub timestamp_s: f64,
    pub embedding_row: usize,
}

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Wraps raw components, rejecting non-finite values.
    pub fn new(values: Vec<f32>) -> Result<Self, CorpusError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Wraps and L2-normalizes raw components.
    pub fn normalized(values: Vec<f32>) -> Result<Self, CorpusError> {
        let mut e = Self::new(values)?;
        e.normalize()?;
        Ok(e)
    }

    pub fn normalize(&mut self) -> Result<(), CorpusError> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(CorpusError::ZeroNorm);
        }
        for v in &mut self.0 {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

/// A query split into a free-text context and an ordered list of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedQuery {
    pub context: String,
    pub events: Vec<String>,
}

impl DecomposedQuery {
    pub fn new(context: impl Into<String>, events: Vec<String>) -> Result<Self, CorpusError> {
        let q = Self {
            context: context.into(),
            events: events.into_iter().map(|e| e.trim().to_string()).collect(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.events.is_empty() {
            return Err(CorpusError::NoEvents);
        }
        if let Some(i) = self.events.iter().position(|e| e.trim().is_empty()) {
            return Err(CorpusError::BlankEvent(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrSpan {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

/// Per-keyframe metadata plus the ASR spans of its owning video.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub ocr_text: String,
    pub caption: String,
    pub objects: Vec<String>,
}

/// A ranked candidate segment `(start, end, video)` with its score slots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSegment {
    pub video: VideoId,
    pub start: KeyframeId,
    pub end: KeyframeId,
    pub start_s: f64,
    pub end_s: f64,
    pub boundary_score: f64,
    pub context_score: Option<f64>,
    /// False when the context scorer was unavailable for this segment.
    pub context_scored: bool,
    /// Raw sum of per-event similarities; `None` when no feasible path exists.
    pub event_score: Option<f64>,
    /// Event score mapped into `[0, 1]` as `(event_score / n + 1) / 2`.
    pub event_score_norm: Option<f64>,
    pub final_score: Option<f64>,
    pub best_path: Option<EventPath>,
}

impl CandidateSegment {
    pub fn new(
        start: KeyframeId,
        start_s: f64,
        end: KeyframeId,
        end_s: f64,
        boundary_score: f64,
    ) -> Self {
        debug_assert_eq!(start.video, end.video);
        Self {
            video: start.video.clone(),
            start,
            end,
            start_s,
            end_s,
            boundary_score,
            context_score: None,
            context_scored: false,
            event_score: None,
            event_score_norm: None,
            final_score: None,
            best_path: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A temporally ordered keyframe sequence, one keyframe per event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventPath {
    keyframes: Vec<KeyframeId>,
    timestamps: Vec<f64>,
    per_event_scores: Vec<f64>,
}

impl EventPath {
    /// Builds a path, checking one video, strictly increasing timestamps and
    /// consecutive gaps of at most `tau_s`.
    pub fn new(
        keyframes: Vec<KeyframeId>,
        timestamps: Vec<f64>,
        per_event_scores: Vec<f64>,
        tau_s: f64,
    ) -> Result<Self, CorpusError> {
        let n = keyframes.len();
        if n == 0 || timestamps.len() != n || per_event_scores.len() != n {
            return Err(CorpusError::InvalidPath(format!(
                "length mismatch: {} keyframes, {} timestamps, {} scores",
                n,
                timestamps.len(),
                per_event_scores.len()
            )));
        }
        let video = &keyframes[0].video;
        if let Some(k) = keyframes.iter().find(|k| &k.video != video) {
            return Err(CorpusError::InvalidPath(format!("{k} is not in video {video}")));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if gap.is_nan() || gap <= 0.0 {
                return Err(CorpusError::InvalidPath(format!(
                    "timestamps not increasing at {}: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
            if gap > tau_s {
                return Err(CorpusError::InvalidPath(format!(
                    "gap {gap} at {} exceeds tau {tau_s}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            keyframes,
            timestamps,
            per_event_scores,
        })
    }

    pub fn keyframes(&self) -> &[KeyframeId] {
        &self.keyframes
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn per_event_scores(&self) -> &[f64] {
        &self.per_event_scores
    }

    pub fn total_score(&self) -> f64 {
        self.per_event_scores.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}
