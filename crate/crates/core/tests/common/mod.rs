//! Random corpus generators and brute-force oracles. The oracles are written
//! from the definitions of each operation and share no code with the
//! library beyond its data types.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use madt_core::corpus::AsrSpan;
use madt_core::metadata::{KeyframeLine, MetadataLine, VideoLine};
use madt_core::{Embedding, KeyframeId, MetadataFilter, VideoId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Row = (KeyframeId, f64, Embedding);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Embedding {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if let Ok(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

/// `videos` videos of `per_video` keyframes each. Gaps between consecutive
/// keyframes are multiples of `gap_unit` (1 to `max_units` units), so gaps
/// exactly equal to a multiple-of-unit tau occur.
pub fn random_rows(
    rng: &mut impl Rng,
    videos: usize,
    per_video: usize,
    dim: usize,
    gap_unit: f64,
    max_units: u32,
) -> Vec<Row> {
    let mut rows = Vec::with_capacity(videos * per_video);
    for v in 0..videos {
        let mut t = rng.gen_range(0..4) as f64 * gap_unit;
        for i in 0..per_video {
            rows.push((
                KeyframeId::new(format!("V{v:03}"), (i * 10) as u32),
                t,
                random_unit(rng, dim),
            ));
            t += rng.gen_range(1..=max_units) as f64 * gap_unit;
        }
    }
    rows.shuffle(rng);
    rows
}

/// Dot product accumulated in f64 from the first component to the last.
pub fn oracle_dot(a: &Embedding, b: &Embedding) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

pub fn oracle_cos(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        ab += *x as f64 * *y as f64;
        aa += *x as f64 * *x as f64;
        bb += *y as f64 * *y as f64;
    }
    ab / (aa * bb).sqrt()
}

/// Full sort by score descending, then canonical id ascending; first `k`.
pub fn oracle_top_k(rows: &[Row], q: &Embedding, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, _, e)| (id.render(), oracle_dot(q, e)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// A candidate segment as the oracle sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegment {
    pub start: String,
    pub end: String,
    pub start_s: f64,
    pub boundary: f64,
}

/// All keyframes as seeds; for each, the end keyframe of the same video at
/// most `(n-1)*tau` later maximising similarity to the last event (earliest
/// on ties); sorted by boundary score, start time, start id, end id; top `m`.
pub fn oracle_candidates(
    rows: &[Row],
    first: &Embedding,
    last: &Embedding,
    n: usize,
    tau: f64,
    m: usize,
) -> Vec<OracleSegment> {
    let span = (n - 1) as f64 * tau;
    let mut out = Vec::new();
    for (id1, t1, e1) in rows {
        let mut best: Option<(&KeyframeId, f64, f64)> = None;
        for (idn, tn, en) in rows {
            if idn.video != id1.video {
                continue;
            }
            let dt = tn - t1;
            if !(dt > 0.0 && dt <= span) {
                continue;
            }
            let s = oracle_dot(last, en);
            let better = match best {
                None => true,
                Some((_, bt, bs)) => s > bs || (s == bs && *tn < bt),
            };
            if better {
                best = Some((idn, *tn, s));
            }
        }
        if let Some((idn, _, sn)) = best {
            out.push(OracleSegment {
                start: id1.render(),
                end: idn.render(),
                start_s: *t1,
                boundary: oracle_dot(first, e1) + sn,
            });
        }
    }
    out.sort_by(|a, b| {
        b.boundary
            .partial_cmp(&a.boundary)
            .unwrap()
            .then(a.start_s.partial_cmp(&b.start_s).unwrap())
            .then_with(|| a.start.cmp(&b.start))
            .then_with(|| a.end.cmp(&b.end))
    });
    out.truncate(m);
    out
}

/// Best total over every strictly increasing choice of one interior
/// keyframe per intermediate event with all gaps in `(0, tau]`.
/// `scores[j][i]`: intermediate event `j` against interior keyframe `i`.
pub fn oracle_best_path(
    start: (f64, f64),
    end: (f64, f64),
    times: &[f64],
    scores: &[Vec<f64>],
    tau: f64,
) -> Option<f64> {
    #[allow(clippy::too_many_arguments)]
    fn go(
        j: usize,
        from: usize,
        prev_t: f64,
        acc: f64,
        end: (f64, f64),
        times: &[f64],
        scores: &[Vec<f64>],
        tau: f64,
    ) -> Option<f64> {
        if j == scores.len() {
            let gap = end.0 - prev_t;
            return (gap > 0.0 && gap <= tau).then_some(acc + end.1);
        }
        let mut best: Option<f64> = None;
        for i in from..times.len() {
            let gap = times[i] - prev_t;
            if !(gap > 0.0 && gap <= tau) {
                continue;
            }
            if let Some(v) = go(j + 1, i + 1, times[i], acc + scores[j][i], end, times, scores, tau) {
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        best
    }
    go(0, 0, start.0, start.1, end, times, scores, tau)
}

/// Checks the temporal constraints of every returned segment and path.
pub fn check_temporal(
    segments: &[madt_core::CandidateSegment],
    n: usize,
    tau: f64,
) -> Result<(), String> {
    for s in segments {
        let span = s.end_s - s.start_s;
        if !(span > 0.0 && span <= (n - 1) as f64 * tau) {
            return Err(format!("segment {}..{} spans {span}", s.start, s.end));
        }
        if s.start.video != s.video || s.end.video != s.video {
            return Err(format!("segment {}..{} crosses videos", s.start, s.end));
        }
        if let Some(p) = &s.best_path {
            if p.keyframes().len() != n || p.timestamps().len() != n {
                return Err(format!("path of length {} for {n} events", p.keyframes().len()));
            }
            if p.keyframes()[0] != s.start || p.keyframes()[n - 1] != s.end {
                return Err("path endpoints differ from the segment".into());
            }
            if p.keyframes().iter().any(|k| k.video != s.video) {
                return Err("path leaves the segment's video".into());
            }
            for w in p.timestamps().windows(2) {
                let gap = w[1] - w[0];
                if !(gap > 0.0 && gap <= tau) {
                    return Err(format!("path gap {gap} outside (0, {tau}]"));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metadata

pub const WORDS: &[&str] = &[
    "red", "blue", "car", "bridge", "goal", "river", "night", "crowd", "sale", "news", "fire", "boat",
];
pub const LABELS: &[&str] = &["car", "person", "boat", "traffic light", "dog", "bus"];

fn words(rng: &mut impl Rng, max: usize) -> String {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Metadata lines for `rows`: random OCR, captions, labels and ASR spans.
pub fn random_metadata(rng: &mut impl Rng, rows: &[Row]) -> Vec<MetadataLine> {
    let mut lines = Vec::new();
    let mut videos: BTreeSet<VideoId> = BTreeSet::new();
    let mut t_max: f64 = 0.0;
    for (id, t, _) in rows {
        videos.insert(id.video.clone());
        t_max = t_max.max(*t);
        let n_labels = rng.gen_range(0..=2);
        lines.push(MetadataLine::Keyframe(KeyframeLine {
            id: id.clone(),
            timestamp: *t,
            ocr: words(rng, 3),
            caption: words(rng, 5),
            objects: (0..n_labels).map(|_| LABELS.choose(rng).unwrap().to_string()).collect(),
            phash: None,
        }));
    }
    for v in videos {
        let n_spans = rng.gen_range(0..6);
        let asr = (0..n_spans)
            .map(|_| {
                let start = rng.gen_range(0.0..t_max.max(1.0));
                AsrSpan {
                    start,
                    end: start + rng.gen_range(0.0..20.0),
                    text: words(rng, 4),
                }
            })
            .collect();
        lines.push(MetadataLine::Video(VideoLine { video: v, asr }));
    }
    lines
}

/// A filter with each clause present with probability one half (at least
/// one clause present).
pub fn random_filter(rng: &mut impl Rng, videos: &[VideoId]) -> MetadataFilter {
    loop {
        let mut f = MetadataFilter::default();
        let pick = |rng: &mut dyn rand::RngCore, k: usize| -> Vec<String> {
            (0..k).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
        };
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(1..=2);
            f.ocr_contains = Some(pick(rng, k));
        }
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(1..=2);
            f.caption_contains = Some(pick(rng, k));
        }
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(1..=2);
            f.objects_any = Some((0..k).map(|_| LABELS.choose(rng).unwrap().to_string()).collect());
        }
        if rng.gen_bool(0.4) {
            f.asr_contains = Some(pick(rng, 1));
        }
        if rng.gen_bool(0.3) && !videos.is_empty() {
            let k = rng.gen_range(1..=videos.len().min(2));
            f.videos = Some(videos.choose_multiple(rng, k).cloned().collect());
        }
        let present = [
            f.ocr_contains.is_some(),
            f.caption_contains.is_some(),
            f.objects_any.is_some(),
            f.asr_contains.is_some(),
            f.videos.is_some(),
        ];
        if present.iter().any(|p| *p) {
            return f;
        }
    }
}

fn word_set(text: &str) -> HashSet<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Per-record predicate scan. Generated text is lowercase ASCII separated
/// by single spaces, so whitespace splitting is a faithful tokenizer here.
pub fn oracle_filter(lines: &[MetadataLine], f: &MetadataFilter, tau_asr: f64) -> BTreeSet<KeyframeId> {
    let spans_of = |video: &VideoId| -> Vec<&AsrSpan> {
        lines
            .iter()
            .filter_map(|l| match l {
                MetadataLine::Video(v) if &v.video == video => Some(v.asr.iter()),
                _ => None,
            })
            .flatten()
            .collect()
    };
    let mut out = BTreeSet::new();
    for line in lines {
        let MetadataLine::Keyframe(k) = line else {
            continue;
        };
        let mut ok = true;
        if let Some(toks) = &f.ocr_contains {
            let have = word_set(&k.ocr);
            ok &= toks.iter().all(|t| have.contains(t));
        }
        if let Some(toks) = &f.caption_contains {
            let have = word_set(&k.caption);
            ok &= toks.iter().all(|t| have.contains(t));
        }
        if let Some(labels) = &f.objects_any {
            ok &= k.objects.iter().any(|o| labels.contains(o));
        }
        if let Some(toks) = &f.asr_contains {
            // every span overlapping [t - tau, t + tau], words pooled
            let (lo, hi) = (k.timestamp - tau_asr, k.timestamp + tau_asr);
            let mut have = HashSet::new();
            for s in spans_of(&k.id.video) {
                if s.end >= lo && s.start <= hi {
                    have.extend(word_set(&s.text));
                }
            }
            ok &= toks.iter().all(|t| have.contains(t));
        }
        if let Some(vs) = &f.videos {
            ok &= vs.contains(&k.id.video);
        }
        if ok {
            out.insert(k.id.clone());
        }
    }
    out
}

/// Descending order of `keys` (ties by index), as a permutation.
pub fn argsort_desc(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}
