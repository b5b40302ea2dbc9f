//! Multi-event temporal retrieval.
//!
//! A query is a context plus an ordered list of events `E1..En`. The pipeline:
//!
//! 1. decompose the raw query (or take it pre-structured);
//! 2. seed candidate segments from the best matches of `E1`, pair each seed
//!    with the best `En` match later in the same video within `(n-1) * tau`,
//!    and keep the top `M` by boundary score; score each segment's metadata
//!    against the context;
//! 3. align the intermediate events inside each segment with a beam search
//!    over time-ordered keyframes, gaps at most `tau`;
//! 4. fuse the normalized event score with the context score and rank.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, ContextScorer, QueryDecomposer};
use crate::corpus::{CandidateSegment, CorpusError, DecomposedQuery, Embedding, EventPath, KeyframeId};
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::index::{IndexError, ScoredHit, VectorIndex};
use crate::metadata::MetadataStore;
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum TrakeError {
    #[error("need at least 2 events for segment retrieval, got {0}")]
    TooFewEvents(usize),
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no feasible event path")]
    NoFeasiblePath,
    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),
    #[error("a raw query needs a decomposer, none is configured")]
    DecomposerMissing,
    #[error(transparent)]
    Query(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(IndexError),
}

impl From<IndexError> for TrakeError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EmptyIndex => TrakeError::EmptyIndex,
            other => TrakeError::Index(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrakeConfig {
    /// Maximum gap between consecutive events, seconds.
    pub tau_s: f64,
    /// Candidate segments kept after boundary scoring.
    pub top_m: usize,
    pub beam_width: usize,
    /// Weight of the event score in the final fusion.
    pub alpha: f64,
    /// Seeds drawn from the first event's nearest neighbours.
    pub knn_k: usize,
    /// Same-video segments overlapping more than this fraction of the shorter
    /// one are collapsed after ranking.
    pub overlap_threshold: f64,
    /// Concurrent context-scorer calls.
    pub max_inflight: usize,
}

impl Default for TrakeConfig {
    fn default() -> Self {
        Self {
            tau_s: 30.0,
            top_m: 100,
            beam_width: 5,
            alpha: 0.7,
            knn_k: 500,
            overlap_threshold: 0.5,
            max_inflight: 4,
        }
    }
}

impl TrakeConfig {
    pub fn validate(&self) -> Result<(), TrakeError> {
        let bad = |m: &str| Err(TrakeError::InvalidConfig(m.to_string()));
        if !(self.tau_s > 0.0 && self.tau_s.is_finite()) {
            return bad("tau must be positive");
        }
        if self.top_m == 0 {
            return bad("top_m must be at least 1");
        }
        if self.beam_width == 0 {
            return bad("beam width must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return bad("overlap threshold must be in [0, 1]");
        }
        Ok(())
    }

    /// Longest allowed segment for an `n`-event query.
    pub fn max_span(&self, n: usize) -> f64 {
        n.saturating_sub(1) as f64 * self.tau_s
    }
}

/// Event embeddings of a decomposed query, in event order.
#[derive(Debug, Clone)]
pub struct QueryEmbeddings {
    events: Vec<Embedding>,
}

impl QueryEmbeddings {
    pub fn embed(q: &DecomposedQuery, embedder: &dyn EmbeddingProvider) -> Result<Self, TrakeError> {
        q.validate()?;
        let events = q
            .events
            .iter()
            .map(|e| embedder.embed_text(e))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { events })
    }

    pub fn from_embeddings(events: Vec<Embedding>) -> Self {
        Self { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, j: usize) -> &Embedding {
        &self.events[j]
    }

    fn first(&self) -> &Embedding {
        &self.events[0]
    }

    fn last(&self) -> &Embedding {
        &self.events[self.events.len() - 1]
    }
}

// ---------------------------------------------------------------------------
// Ordering helpers

/// Descending by score, then earlier start, then start id, then end id.
fn segment_order(
    a_score: f64,
    a: &CandidateSegment,
    a_labels: (&str, &str),
    b_score: f64,
    b: &CandidateSegment,
    b_labels: (&str, &str),
) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.start_s.total_cmp(&b.start_s))
        .then_with(|| a_labels.0.cmp(b_labels.0))
        .then_with(|| a_labels.1.cmp(b_labels.1))
}

fn sort_segments_by(segments: &mut [CandidateSegment], key: impl Fn(&CandidateSegment) -> Option<f64>) {
    let mut keyed: Vec<(Option<f64>, String, String, usize)> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| (key(s), s.start.render(), s.end.render(), i))
        .collect();
    keyed.sort_by(|a, b| {
        let (sa, sb) = (&segments[a.3], &segments[b.3]);
        match (a.0, b.0) {
            (Some(x), Some(y)) => segment_order(x, sa, (&a.1, &a.2), y, sb, (&b.1, &b.2)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => segment_order(0.0, sa, (&a.1, &a.2), 0.0, sb, (&b.1, &b.2)),
        }
    });
    let order: Vec<usize> = keyed.into_iter().map(|k| k.3).collect();
    let mut taken: Vec<Option<CandidateSegment>> = segments.iter().cloned().map(Some).collect();
    for (slot, i) in segments.iter_mut().zip(order) {
        *slot = taken[i].take().expect("each index once");
    }
}

// ---------------------------------------------------------------------------
// Stage 2: candidate segments

/// Candidate segments for a query of at least two events.
pub fn generate_candidates(
    q: &DecomposedQuery,
    cfg: &TrakeConfig,
    index: &VectorIndex,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<CandidateSegment>, TrakeError> {
    cfg.validate()?;
    q.validate()?;
    if q.len() < 2 {
        return Err(TrakeError::TooFewEvents(q.len()));
    }
    let qe = QueryEmbeddings::embed(q, embedder)?;
    generate_candidates_with(&qe, cfg, index)
}

/// [`generate_candidates`] with the event embeddings already computed.
pub fn generate_candidates_with(
    qe: &QueryEmbeddings,
    cfg: &TrakeConfig,
    index: &VectorIndex,
) -> Result<Vec<CandidateSegment>, TrakeError> {
    let n = qe.len();
    if n < 2 {
        return Err(TrakeError::TooFewEvents(n));
    }
    if index.is_empty() {
        return Err(TrakeError::EmptyIndex);
    }
    let seeds = index.search_rows(qe.first(), cfg.knn_k, None)?;
    let last_scores = index.score_all(qe.last())?;
    let max_span = cfg.max_span(n);

    let found: Vec<Option<CandidateSegment>> = par::map_slice(index.execution(), &seeds, |&(r1, s1)| {
        let k1 = index.keyframe(r1);
        let rows = index.video_rows(&k1.id.video)?;
        let t1 = k1.timestamp_s;
        let from = rows.partition_point(|&r| index.keyframe(r).timestamp_s <= t1);
        let mut best: Option<(usize, f64)> = None;
        for &r in &rows[from..] {
            let dt = index.keyframe(r).timestamp_s - t1;
            if !(dt > 0.0 && dt <= max_span) {
                break;
            }
            // rows are time-ordered, so strict improvement keeps the earliest
            if best.is_none_or(|(_, s)| last_scores[r] > s) {
                best = Some((r, last_scores[r]));
            }
        }
        let (rn, sn) = best?;
        let kn = index.keyframe(rn);
        Some(CandidateSegment::new(
            k1.id.clone(),
            t1,
            kn.id.clone(),
            kn.timestamp_s,
            s1 + sn,
        ))
    });
    let mut segments: Vec<CandidateSegment> = found.into_iter().flatten().collect();
    sort_segments_by(&mut segments, |s| Some(s.boundary_score));
    segments.truncate(cfg.top_m);
    Ok(segments)
}

// ---------------------------------------------------------------------------
// Context scoring

/// Clamps a raw 0-100 judgement and maps it to `[0, 1]`.
pub fn normalize_context(raw: i64) -> f64 {
    raw.clamp(0, 100) as f64 / 100.0
}

/// Context score of one segment; `None` when the scorer or the segment's
/// metadata is unavailable.
pub fn context_score(
    segment: &CandidateSegment,
    q: &DecomposedQuery,
    scorer: &dyn ContextScorer,
    store: &MetadataStore,
) -> Option<f64> {
    let meta = store.metadata_for_segment(&segment.start, &segment.end).ok()?;
    match scorer.score(&meta, &q.context, &q.events) {
        Ok(raw) => Some(normalize_context(raw)),
        Err(AdapterError::ScorerUnavailable(_)) | Err(_) => None,
    }
}

/// Writes the context score into each segment. Unavailable scores become 0
/// with `context_scored = false`.
pub fn score_contexts(
    segments: &mut [CandidateSegment],
    q: &DecomposedQuery,
    scorer: &dyn ContextScorer,
    store: &MetadataStore,
    cfg: &TrakeConfig,
    exec: Execution,
) {
    let scores = par::map_slice_bounded(exec, cfg.max_inflight.max(1), segments, |s| {
        context_score(s, q, scorer, store)
    });
    for (s, c) in segments.iter_mut().zip(scores) {
        s.context_scored = c.is_some();
        s.context_score = Some(c.unwrap_or(0.0));
    }
}

// ---------------------------------------------------------------------------
// Stage 3: event alignment

/// Similarities of the intermediate events `E2..E(n-1)` over a set of rows.
#[derive(Debug, Clone, Default)]
pub struct InteriorScores {
    /// `per_event[j]` holds `row -> sim(E(j+2), row)`.
    per_event: Vec<HashMap<usize, f64>>,
}

impl InteriorScores {
    pub fn compute(qe: &QueryEmbeddings, index: &VectorIndex, rows: &[usize]) -> Result<Self, TrakeError> {
        let n = qe.len();
        let mut per_event = Vec::with_capacity(n.saturating_sub(2));
        for j in 1..n.saturating_sub(1) {
            let scores = index.score_rows(qe.event(j), rows)?;
            per_event.push(rows.iter().copied().zip(scores).collect());
        }
        Ok(Self { per_event })
    }

    fn get(&self, event: usize, row: usize) -> Option<f64> {
        self.per_event.get(event)?.get(&row).copied()
    }
}

/// Rows of every keyframe inside the given segments (endpoints included),
/// ascending and without duplicates.
pub fn filtered_corpus(segments: &[CandidateSegment], index: &VectorIndex) -> Vec<usize> {
    let mut rows = BTreeSet::new();
    for s in segments {
        if let Some(vrows) = index.video_rows(&s.video) {
            rows.extend(vrows.iter().copied().filter(|&r| {
                let t = index.keyframe(r).timestamp_s;
                t >= s.start_s && t <= s.end_s
            }));
        }
    }
    rows.into_iter().collect()
}

/// Best assignment found by [`beam_align`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Chosen interior keyframe per intermediate event, as indices into the
    /// interior arrays.
    pub interior: Vec<usize>,
    /// Per-event similarities `SimScore_1..SimScore_n`.
    pub per_event: Vec<f64>,
    /// Sum of `per_event`, accumulated in event order.
    pub total: f64,
}

#[derive(Debug, Clone)]
struct Partial {
    last: Option<usize>,
    time: f64,
    score: f64,
    path: Vec<usize>,
}

fn partial_order(a: &Partial, b: &Partial) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.path.cmp(&b.path))
}

/// Beam search over the interior keyframes of one segment.
///
/// `times` must be strictly increasing and lie strictly between `start_time`
/// and `end_time`. `scores[j][i]` is the similarity of intermediate event `j`
/// to interior keyframe `i`. Partial paths ending at the same keyframe are
/// merged keeping the best, so a beam at least as wide as `times` is exact.
#[allow(clippy::too_many_arguments)]
pub fn beam_align(
    start_time: f64,
    start_score: f64,
    end_time: f64,
    end_score: f64,
    times: &[f64],
    scores: &[Vec<f64>],
    tau_s: f64,
    beam_width: usize,
) -> Option<Alignment> {
    let steps = scores.len();
    let mut beam = vec![Partial {
        last: None,
        time: start_time,
        score: start_score,
        path: Vec::new(),
    }];
    for (j, event_scores) in scores.iter().enumerate() {
        let remaining = steps - j - 1;
        let mut best_at: HashMap<usize, Partial> = HashMap::new();
        for p in &beam {
            let from = p.last.map_or(0, |l| l + 1);
            for i in from..times.len() {
                let t = times[i];
                let gap = t - p.time;
                if gap > tau_s {
                    break;
                }
                if gap.is_nan() || gap <= 0.0 {
                    continue;
                }
                // the rest of the path must still fit before the end keyframe
                if times.len() - 1 - i < remaining || end_time - t > (remaining + 1) as f64 * tau_s {
                    continue;
                }
                let mut path = p.path.clone();
                path.push(i);
                let cand = Partial {
                    last: Some(i),
                    time: t,
                    score: p.score + event_scores[i],
                    path,
                };
                match best_at.get(&i) {
                    Some(cur) if partial_order(cur, &cand) != Ordering::Greater => {}
                    _ => {
                        best_at.insert(i, cand);
                    }
                }
            }
        }
        let mut next: Vec<Partial> = best_at.into_values().collect();
        next.sort_by(partial_order);
        next.truncate(beam_width);
        if next.is_empty() {
            return None;
        }
        beam = next;
    }
    let best = beam
        .into_iter()
        .filter(|p| {
            let gap = end_time - p.time;
            gap > 0.0 && gap <= tau_s
        })
        .map(|mut p| {
            p.score += end_score;
            p
        })
        .min_by(partial_order)?;
    let mut per_event = Vec::with_capacity(steps + 2);
    per_event.push(start_score);
    per_event.extend(best.path.iter().enumerate().map(|(j, &i)| scores[j][i]));
    per_event.push(end_score);
    Some(Alignment {
        interior: best.path,
        per_event,
        total: best.score,
    })
}

/// Aligns all events inside `segment`. Returns the best path and the raw
/// event score. Interior similarities come from `interior` when given,
/// otherwise they are computed for the segment's own keyframes.
pub fn align_events(
    segment: &CandidateSegment,
    qe: &QueryEmbeddings,
    cfg: &TrakeConfig,
    index: &VectorIndex,
    interior: Option<&InteriorScores>,
) -> Result<(EventPath, f64), TrakeError> {
    let n = qe.len();
    if n < 2 {
        return Err(TrakeError::TooFewEvents(n));
    }
    let r1 = index
        .row(&segment.start)
        .ok_or_else(|| IndexError::UnknownKeyframe(segment.start.render()))?;
    let rn = index
        .row(&segment.end)
        .ok_or_else(|| IndexError::UnknownKeyframe(segment.end.render()))?;
    let (t1, tn) = (index.keyframe(r1).timestamp_s, index.keyframe(rn).timestamp_s);
    let s1 = crate::index::dot(qe.first().as_slice(), index.vector(r1));
    let sn = crate::index::dot(qe.last().as_slice(), index.vector(rn));
    let rows: Vec<usize> = index
        .video_rows(&segment.video)
        .ok_or_else(|| IndexError::UnknownVideo(segment.video.to_string()))?
        .iter()
        .copied()
        .filter(|&r| {
            let t = index.keyframe(r).timestamp_s;
            t > t1 && t < tn
        })
        .collect();
    let local;
    let interior = match interior {
        Some(s) => s,
        None => {
            local = InteriorScores::compute(qe, index, &rows)?;
            &local
        }
    };
    let times: Vec<f64> = rows.iter().map(|&r| index.keyframe(r).timestamp_s).collect();
    let scores: Vec<Vec<f64>> = (0..n - 2)
        .map(|j| {
            rows.iter()
                .map(|&r| interior.get(j, r).ok_or(TrakeError::NoFeasiblePath))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let a = beam_align(t1, s1, tn, sn, &times, &scores, cfg.tau_s, cfg.beam_width)
        .ok_or(TrakeError::NoFeasiblePath)?;
    let mut ids: Vec<KeyframeId> = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    ids.push(segment.start.clone());
    ts.push(t1);
    for &i in &a.interior {
        ids.push(index.keyframe(rows[i]).id.clone());
        ts.push(times[i]);
    }
    ids.push(segment.end.clone());
    ts.push(tn);
    let path = EventPath::new(ids, ts, a.per_event, cfg.tau_s)?;
    Ok((path, a.total))
}

// ---------------------------------------------------------------------------
// Stage 4: fusion

/// Maps a raw event score of an `n`-event path into `[0, 1]`.
pub fn normalize_event(event_score: f64, n: usize) -> f64 {
    (event_score / n as f64 + 1.0) / 2.0
}

/// Fills `final_score` and sorts. Segments without an event path get no
/// final score and rank after every scored one.
pub fn rerank(mut segments: Vec<CandidateSegment>, n: usize, alpha: f64) -> Vec<CandidateSegment> {
    for s in &mut segments {
        s.event_score_norm = s.event_score.map(|e| normalize_event(e, n));
        let context = s.context_score.unwrap_or(0.0);
        s.final_score = s.event_score_norm.map(|e| alpha * e + (1.0 - alpha) * context);
    }
    sort_segments_by(&mut segments, |s| s.final_score);
    segments
}

/// Fraction of the shorter segment covered by the overlap of the two.
pub fn overlap_fraction(a: &CandidateSegment, b: &CandidateSegment) -> f64 {
    if a.video != b.video {
        return 0.0;
    }
    let inter = a.end_s.min(b.end_s) - a.start_s.max(b.start_s);
    let shorter = a.duration().min(b.duration());
    if inter <= 0.0 || shorter <= 0.0 {
        0.0
    } else {
        inter / shorter
    }
}

/// Drops segments overlapping an earlier-ranked one of the same video by more
/// than `threshold`.
pub fn suppress_overlaps(ranked: Vec<CandidateSegment>, threshold: f64) -> Vec<CandidateSegment> {
    let mut kept: Vec<CandidateSegment> = Vec::with_capacity(ranked.len());
    for s in ranked {
        if kept.iter().all(|k| overlap_fraction(k, &s) <= threshold) {
            kept.push(s);
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Pipeline

/// Query input: free text for a decomposer, or already structured.
#[derive(Debug, Clone, PartialEq)]
pub enum TrakeQuery {
    Raw(String),
    Structured(DecomposedQuery),
}

pub struct TrakeDeps<'a> {
    pub index: &'a VectorIndex,
    pub store: &'a MetadataStore,
    pub embedder: &'a dyn EmbeddingProvider,
    pub scorer: &'a dyn ContextScorer,
    pub decomposer: Option<&'a dyn QueryDecomposer>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrakeResult {
    pub query: DecomposedQuery,
    /// Single-event queries fall back to plain keyframe search; the hits are
    /// in `hits` and `segments` is empty.
    pub degenerate: bool,
    pub segments: Vec<CandidateSegment>,
    pub hits: Vec<ScoredHit>,
}

pub fn trake(query: TrakeQuery, cfg: &TrakeConfig, deps: &TrakeDeps<'_>) -> Result<TrakeResult, TrakeError> {
    cfg.validate()?;
    let q = match query {
        TrakeQuery::Structured(q) => {
            q.validate()?;
            q
        }
        TrakeQuery::Raw(raw) => deps
            .decomposer
            .ok_or(TrakeError::DecomposerMissing)?
            .decompose(&raw)
            .map_err(|e| TrakeError::DecompositionFailed(e.to_string()))?,
    };
    let index = deps.index;
    if index.is_empty() {
        return Err(TrakeError::EmptyIndex);
    }
    let qe = QueryEmbeddings::embed(&q, deps.embedder)?;
    let n = q.len();
    if n == 1 {
        let hits = index.search(qe.first(), cfg.top_m, None)?;
        return Ok(TrakeResult {
            query: q,
            degenerate: true,
            segments: Vec::new(),
            hits,
        });
    }

    let mut segments = generate_candidates_with(&qe, cfg, index)?;
    let exec = index.execution();
    score_contexts(&mut segments, &q, deps.scorer, deps.store, cfg, exec);

    let kf_rows = filtered_corpus(&segments, index);
    let interior = InteriorScores::compute(&qe, index, &kf_rows)?;
    let aligned = par::map_slice(exec, &segments, |s| align_events(s, &qe, cfg, index, Some(&interior)).ok());
    for (s, a) in segments.iter_mut().zip(aligned) {
        if let Some((path, score)) = a {
            s.event_score = Some(score);
            s.best_path = Some(path);
        }
    }
    let ranked = rerank(segments, n, cfg.alpha);
    Ok(TrakeResult {
        query: q,
        degenerate: false,
        segments: suppress_overlaps(ranked, cfg.overlap_threshold),
        hits: Vec::new(),
    })
}
