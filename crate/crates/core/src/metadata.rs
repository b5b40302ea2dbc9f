//! Keyframe metadata store: OCR text, captions, detected objects and per-video
//! ASR transcripts, with inverted indexes for filtering and a hybrid join that
//! re-ranks vector hits by metadata relevance.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{AsrSpan, KeyframeId, MetadataRecord, VideoId};
use crate::index::{hit_order, ScoredHit};
use crate::phash::PerceptualHash;
use crate::text::tokenize;

pub const DEFAULT_TAU_ASR: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetadataError {
    #[error("filter has no clauses")]
    EmptyFilter,
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(String),
    #[error("segment endpoints {0} and {1} are in different videos")]
    CrossVideo(String, String),
    #[error("invalid weights ({0}, {1}): must be non-negative and sum to 1")]
    InvalidWeights(f64, f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate keyframe {0}")]
    Duplicate(String),
    #[error("invalid ASR span in video {0}: start > end or non-finite")]
    InvalidSpan(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Per-modality metadata predicate. Clauses combine with AND; token lists
/// require every token; `objects_any` requires at least one label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetadataFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ocr_contains: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_contains: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objects_any: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asr_contains: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub videos: Option<Vec<VideoId>>,
}

fn tokens_of(list: &Option<Vec<String>>) -> Option<Vec<String>> {
    let tokens: Vec<String> = list.as_ref()?.iter().flat_map(|s| tokenize(s)).collect();
    (!tokens.is_empty()).then_some(tokens)
}

fn normalize_label(s: &str) -> String {
    tokenize(s).join(" ")
}

/// A filter with its token clauses normalized. Empty lists count as absent.
#[derive(Debug, Clone)]
struct Compiled {
    ocr: Option<Vec<String>>,
    caption: Option<Vec<String>>,
    objects: Option<HashSet<String>>,
    asr: Option<Vec<String>>,
    videos: Option<HashSet<VideoId>>,
}

impl Compiled {
    fn new(f: &MetadataFilter) -> Self {
        let objects = f.objects_any.as_ref().map(|l| {
            l.iter()
                .map(|s| normalize_label(s))
                .filter(|s| !s.is_empty())
                .collect::<HashSet<_>>()
        });
        Self {
            ocr: tokens_of(&f.ocr_contains),
            caption: tokens_of(&f.caption_contains),
            objects: objects.filter(|s| !s.is_empty()),
            asr: tokens_of(&f.asr_contains),
            videos: f
                .videos
                .as_ref()
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().cloned().collect()),
        }
    }

    fn clause_count(&self) -> usize {
        [
            self.ocr.is_some(),
            self.caption.is_some(),
            self.objects.is_some(),
            self.asr.is_some(),
            self.videos.is_some(),
        ]
        .iter()
        .filter(|p| **p)
        .count()
    }
}

impl MetadataFilter {
    pub fn clause_count(&self) -> usize {
        Compiled::new(self).clause_count()
    }

    pub fn is_empty(&self) -> bool {
        self.clause_count() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedHit {
    pub keyframe: KeyframeId,
    pub similarity: f64,
    pub meta_relevance: f64,
    pub final_score: f64,
}

/// Weights of the similarity and metadata terms in [`MetadataStore::hybrid_join`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JoinWeights {
    pub sim: f64,
    pub meta: f64,
}

impl Default for JoinWeights {
    fn default() -> Self {
        Self { sim: 0.7, meta: 0.3 }
    }
}

impl JoinWeights {
    pub fn new(sim: f64, meta: f64) -> Result<Self, MetadataError> {
        let ok = sim >= 0.0 && meta >= 0.0 && ((sim + meta) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(MetadataError::InvalidWeights(sim, meta));
        }
        Ok(Self { sim, meta })
    }
}

/// Metadata of a candidate segment handed to the context scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaBundle {
    pub start_caption: String,
    pub end_caption: String,
    pub speech: String,
    pub video: VideoId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredKeyframe {
    pub timestamp_s: f64,
    pub record: MetadataRecord,
    pub phash: Option<PerceptualHash>,
}

/// One line of the metadata JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetadataLine {
    Keyframe(KeyframeLine),
    Video(VideoLine),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeLine {
    pub id: KeyframeId,
    pub timestamp: f64,
    #[serde(default)]
    pub ocr: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phash: Option<PerceptualHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoLine {
    pub video: VideoId,
    pub asr: Vec<AsrSpan>,
}

/// Parses metadata JSONL. Blank lines are skipped.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<MetadataLine>, MetadataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| MetadataError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| MetadataError::Parse { line: line_no, msg };
        let value: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let parsed = if value.get("id").is_some() {
            serde_json::from_value(value).map(MetadataLine::Keyframe)
        } else if value.get("video").is_some() {
            serde_json::from_value(value).map(MetadataLine::Video)
        } else {
            return Err(err("object has neither \"id\" nor \"video\"".into()));
        };
        out.push(parsed.map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

type Postings = HashMap<String, Vec<KeyframeId>>;

#[derive(Debug, Clone, Default)]
pub struct MetadataStore {
    keyframes: BTreeMap<KeyframeId, StoredKeyframe>,
    asr: BTreeMap<VideoId, Vec<AsrSpan>>,
    ocr_index: Postings,
    caption_index: Postings,
    objects_index: Postings,
    asr_index: HashMap<String, BTreeSet<VideoId>>,
    tau_asr: f64,
}

fn add_postings(index: &mut Postings, tokens: impl IntoIterator<Item = String>, id: &KeyframeId) {
    let unique: BTreeSet<String> = tokens.into_iter().collect();
    for t in unique {
        index.entry(t).or_default().push(id.clone());
    }
}

impl MetadataStore {
    pub fn new(tau_asr: f64) -> Self {
        Self {
            tau_asr,
            ..Default::default()
        }
    }

    /// Builds a store and its inverted indexes from parsed JSONL lines.
    pub fn from_lines(
        lines: impl IntoIterator<Item = MetadataLine>,
        tau_asr: f64,
    ) -> Result<Self, MetadataError> {
        let mut store = Self::new(tau_asr);
        for line in lines {
            match line {
                MetadataLine::Keyframe(k) => {
                    let id = k.id.clone();
                    if store
                        .keyframes
                        .insert(
                            k.id,
                            StoredKeyframe {
                                timestamp_s: k.timestamp,
                                record: MetadataRecord {
                                    ocr_text: k.ocr,
                                    caption: k.caption,
                                    objects: k.objects,
                                },
                                phash: k.phash,
                            },
                        )
                        .is_some()
                    {
                        return Err(MetadataError::Duplicate(id.render()));
                    }
                }
                MetadataLine::Video(v) => {
                    let mut spans = v.asr;
                    if spans
                        .iter()
                        .any(|s| !(s.start.is_finite() && s.end.is_finite() && s.start <= s.end))
                    {
                        return Err(MetadataError::InvalidSpan(v.video.to_string()));
                    }
                    store.asr.entry(v.video).or_default().append(&mut spans);
                }
            }
        }
        store.rebuild_indexes();
        Ok(store)
    }

    fn rebuild_indexes(&mut self) {
        self.ocr_index.clear();
        self.caption_index.clear();
        self.objects_index.clear();
        self.asr_index.clear();
        for spans in self.asr.values_mut() {
            spans.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        }
        for (id, k) in &self.keyframes {
            add_postings(&mut self.ocr_index, tokenize(&k.record.ocr_text), id);
            add_postings(&mut self.caption_index, tokenize(&k.record.caption), id);
            add_postings(
                &mut self.objects_index,
                k.record.objects.iter().map(|o| normalize_label(o)),
                id,
            );
        }
        for (video, spans) in &self.asr {
            for span in spans {
                for t in tokenize(&span.text) {
                    self.asr_index.entry(t).or_default().insert(video.clone());
                }
            }
        }
        // Postings sorted by canonical id string.
        for index in [&mut self.ocr_index, &mut self.caption_index, &mut self.objects_index] {
            for list in index.values_mut() {
                list.sort_by_cached_key(|id| id.render());
            }
        }
    }

    /// Keeps only the given keyframes (used after deduplication).
    pub fn retain(&mut self, keep: &HashSet<KeyframeId>) {
        self.keyframes.retain(|id, _| keep.contains(id));
        self.rebuild_indexes();
    }

    pub fn tau_asr(&self) -> f64 {
        self.tau_asr
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn get(&self, id: &KeyframeId) -> Option<&StoredKeyframe> {
        self.keyframes.get(id)
    }

    pub fn keyframes(&self) -> impl Iterator<Item = (&KeyframeId, &StoredKeyframe)> {
        self.keyframes.iter()
    }

    pub fn asr_spans(&self, video: &VideoId) -> &[AsrSpan] {
        self.asr.get(video).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Snapshot lines: keyframes in id order, then videos with ASR.
    pub fn to_lines(&self) -> Vec<MetadataLine> {
        let mut out: Vec<MetadataLine> = self
            .keyframes
            .iter()
            .map(|(id, k)| {
                MetadataLine::Keyframe(KeyframeLine {
                    id: id.clone(),
                    timestamp: k.timestamp_s,
                    ocr: k.record.ocr_text.clone(),
                    caption: k.record.caption.clone(),
                    objects: k.record.objects.clone(),
                    phash: k.phash,
                })
            })
            .collect();
        out.extend(self.asr.iter().map(|(video, spans)| {
            MetadataLine::Video(VideoLine {
                video: video.clone(),
                asr: spans.clone(),
            })
        }));
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for line in self.to_lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn postings_all(index: &Postings, tokens: &[String]) -> HashSet<KeyframeId> {
        let mut lists: Vec<&Vec<KeyframeId>> = Vec::with_capacity(tokens.len());
        for t in tokens {
            match index.get(t) {
                Some(l) => lists.push(l),
                None => return HashSet::new(),
            }
        }
        lists.sort_by_key(|l| l.len());
        let mut acc: HashSet<KeyframeId> = lists[0].iter().cloned().collect();
        for l in &lists[1..] {
            let s: HashSet<&KeyframeId> = l.iter().collect();
            acc.retain(|id| s.contains(id));
        }
        acc
    }

    /// Whether every token appears in one ASR span containing `t`, or in the
    /// concatenation of spans overlapping `[t - tau_asr, t + tau_asr]`.
    fn asr_matches(&self, video: &VideoId, t: f64, tokens: &[String]) -> bool {
        let spans = self.asr_spans(video);
        let covers = |set: &HashSet<String>| tokens.iter().all(|tok| set.contains(tok));
        for s in spans.iter().filter(|s| s.start <= t && t <= s.end) {
            if covers(&tokenize(&s.text).into_iter().collect()) {
                return true;
            }
        }
        let (lo, hi) = (t - self.tau_asr, t + self.tau_asr);
        let window: HashSet<String> = spans
            .iter()
            .filter(|s| s.start <= hi && s.end >= lo)
            .flat_map(|s| tokenize(&s.text))
            .collect();
        covers(&window)
    }

    /// Per-clause outcome for one keyframe: `(matched, present)`.
    fn clause_matches(&self, id: &KeyframeId, c: &Compiled) -> (usize, usize) {
        let present = c.clause_count();
        let Some(k) = self.keyframes.get(id) else {
            return (0, present);
        };
        let mut matched = 0;
        let has_all = |text: &str, tokens: &[String]| {
            let set: HashSet<String> = tokenize(text).into_iter().collect();
            tokens.iter().all(|t| set.contains(t))
        };
        if let Some(tokens) = &c.ocr {
            matched += has_all(&k.record.ocr_text, tokens) as usize;
        }
        if let Some(tokens) = &c.caption {
            matched += has_all(&k.record.caption, tokens) as usize;
        }
        if let Some(labels) = &c.objects {
            matched += k
                .record
                .objects
                .iter()
                .any(|o| labels.contains(&normalize_label(o))) as usize;
        }
        if let Some(tokens) = &c.asr {
            matched += self.asr_matches(&id.video, k.timestamp_s, tokens) as usize;
        }
        if let Some(videos) = &c.videos {
            matched += videos.contains(&id.video) as usize;
        }
        (matched, present)
    }

    /// Whether a single keyframe passes every present clause.
    pub fn matches(&self, id: &KeyframeId, f: &MetadataFilter) -> Result<bool, MetadataError> {
        let c = Compiled::new(f);
        if c.clause_count() == 0 {
            return Err(MetadataError::EmptyFilter);
        }
        let (m, p) = self.clause_matches(id, &c);
        Ok(m == p)
    }

    /// Fraction of the filter's clauses a keyframe satisfies.
    pub fn relevance(&self, id: &KeyframeId, f: &MetadataFilter) -> f64 {
        let c = Compiled::new(f);
        let (m, p) = self.clause_matches(id, &c);
        if p == 0 {
            0.0
        } else {
            m as f64 / p as f64
        }
    }

    /// Subset of `candidates` whose metadata passes every clause of `f`.
    pub fn filter<'a>(
        &self,
        candidates: impl IntoIterator<Item = &'a KeyframeId>,
        f: &MetadataFilter,
    ) -> Result<BTreeSet<KeyframeId>, MetadataError> {
        let c = Compiled::new(f);
        if c.clause_count() == 0 {
            return Err(MetadataError::EmptyFilter);
        }
        // Narrow with postings before the per-keyframe checks.
        let mut allowed: Option<HashSet<KeyframeId>> = None;
        let mut narrow = |set: HashSet<KeyframeId>| {
            allowed = Some(match allowed.take() {
                None => set,
                Some(mut a) => {
                    a.retain(|id| set.contains(id));
                    a
                }
            });
        };
        if let Some(tokens) = &c.ocr {
            narrow(Self::postings_all(&self.ocr_index, tokens));
        }
        if let Some(tokens) = &c.caption {
            narrow(Self::postings_all(&self.caption_index, tokens));
        }
        if let Some(labels) = &c.objects {
            narrow(
                labels
                    .iter()
                    .filter_map(|l| self.objects_index.get(l))
                    .flatten()
                    .cloned()
                    .collect(),
            );
        }
        let asr_videos: Option<BTreeSet<VideoId>> = c.asr.as_ref().map(|tokens| {
            let mut sets = tokens.iter().map(|t| self.asr_index.get(t));
            let first = sets.next().flatten().cloned().unwrap_or_default();
            sets.fold(first, |acc, s| match s {
                Some(s) => acc.intersection(s).cloned().collect(),
                None => BTreeSet::new(),
            })
        });

        let mut out = BTreeSet::new();
        for id in candidates {
            if let Some(a) = &allowed {
                if !a.contains(id) {
                    continue;
                }
            }
            if let Some(v) = &c.videos {
                if !v.contains(&id.video) {
                    continue;
                }
            }
            if let Some(vs) = &asr_videos {
                if !vs.contains(&id.video) {
                    continue;
                }
            }
            let Some(k) = self.keyframes.get(id) else {
                continue;
            };
            if let Some(tokens) = &c.asr {
                if !self.asr_matches(&id.video, k.timestamp_s, tokens) {
                    continue;
                }
            }
            out.insert(id.clone());
        }
        Ok(out)
    }

    /// Joins vector hits with metadata. Hits failing `filter` are dropped;
    /// survivors are scored `w.sim * (score + 1) / 2 + w.meta * relevance`,
    /// where relevance is the clause-match fraction against `boost` (falling
    /// back to `filter`). Without either, relevance is 0 for every hit.
    pub fn hybrid_join(
        &self,
        hits: &[ScoredHit],
        filter: Option<&MetadataFilter>,
        boost: Option<&MetadataFilter>,
        weights: JoinWeights,
    ) -> Result<Vec<JoinedHit>, MetadataError> {
        JoinWeights::new(weights.sim, weights.meta)?;
        let filter = filter.filter(|f| !f.is_empty());
        let passing: Option<BTreeSet<KeyframeId>> = match filter {
            Some(f) => Some(self.filter(hits.iter().map(|h| &h.keyframe), f)?),
            None => None,
        };
        let relevance_filter = boost.filter(|b| !b.is_empty()).or(filter);
        let mut out: Vec<(String, JoinedHit)> = hits
            .iter()
            .filter(|h| passing.as_ref().is_none_or(|p| p.contains(&h.keyframe)))
            .map(|h| {
                let meta = relevance_filter.map_or(0.0, |f| self.relevance(&h.keyframe, f));
                let final_score = weights.sim * (h.score + 1.0) / 2.0 + weights.meta * meta;
                (
                    h.keyframe.render(),
                    JoinedHit {
                        keyframe: h.keyframe.clone(),
                        similarity: h.score,
                        meta_relevance: meta,
                        final_score,
                    },
                )
            })
            .collect();
        out.sort_by(|(la, a), (lb, b)| hit_order(a.final_score, la, b.final_score, lb));
        Ok(out.into_iter().map(|(_, h)| h).collect())
    }

    /// Captions of both endpoints plus the ASR text overlapping the segment.
    pub fn metadata_for_segment(
        &self,
        start: &KeyframeId,
        end: &KeyframeId,
    ) -> Result<MetaBundle, MetadataError> {
        let s = self
            .keyframes
            .get(start)
            .ok_or_else(|| MetadataError::UnknownKeyframe(start.render()))?;
        let e = self
            .keyframes
            .get(end)
            .ok_or_else(|| MetadataError::UnknownKeyframe(end.render()))?;
        if start.video != end.video {
            return Err(MetadataError::CrossVideo(start.render(), end.render()));
        }
        let (t0, t1) = (s.timestamp_s.min(e.timestamp_s), s.timestamp_s.max(e.timestamp_s));
        let speech = self
            .asr_spans(&start.video)
            .iter()
            .filter(|span| span.start <= t1 && span.end >= t0)
            .map(|span| span.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(MetaBundle {
            start_caption: s.record.caption.clone(),
            end_caption: e.record.caption.clone(),
            speech,
            video: start.video.clone(),
        })
    }
}
