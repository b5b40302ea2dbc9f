//! Two-stage near-duplicate removal within each video: perceptual hash
//! distance to the previous kept keyframe, then embedding cosine against all
//! kept keyframes of the same video. The earliest keyframe always wins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{KeyframeId, VideoId};
use crate::index::dot;
use crate::par::{self, Execution};
use crate::phash::PerceptualHash;

pub const DEFAULT_PHASH_THRESHOLD: u32 = 8;
pub const DEFAULT_COS_THRESHOLD: f64 = 0.965;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupStage {
    Phash,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropPair {
    pub dropped: KeyframeId,
    pub survivor: KeyframeId,
    pub stage: DedupStage,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub kept: usize,
    pub dropped_phash: usize,
    pub dropped_cosine: usize,
    pub drop_pairs: Vec<DropPair>,
}

impl DedupReport {
    pub fn total(&self) -> usize {
        self.kept + self.dropped_phash + self.dropped_cosine
    }
}

/// One keyframe as seen by [`dedup`].
#[derive(Debug, Clone, Copy)]
pub struct DedupItem<'a> {
    pub id: &'a KeyframeId,
    pub timestamp_s: f64,
    pub hash: Option<PerceptualHash>,
    pub embedding: &'a [f32],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub phash_threshold: u32,
    pub cos_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            phash_threshold: DEFAULT_PHASH_THRESHOLD,
            cos_threshold: DEFAULT_COS_THRESHOLD,
        }
    }
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

enum Outcome {
    Keep,
    Drop(usize, DedupStage),
}

fn dedup_video(items: &[DedupItem<'_>], order: &[usize], cfg: DedupConfig) -> Vec<(usize, Outcome)> {
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(order.len());
    for &i in order {
        let item = &items[i];
        if let Some(&prev) = kept.last() {
            if let (Some(h), Some(ph)) = (item.hash, items[prev].hash) {
                if h.hamming(ph) <= cfg.phash_threshold {
                    out.push((i, Outcome::Drop(prev, DedupStage::Phash)));
                    continue;
                }
            }
        }
        let closest = kept
            .iter()
            .map(|&k| (k, cos(item.embedding, items[k].embedding)))
            .filter(|(_, c)| *c > cfg.cos_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match closest {
            Some((k, _)) => out.push((i, Outcome::Drop(k, DedupStage::Cosine))),
            None => {
                kept.push(i);
                out.push((i, Outcome::Keep));
            }
        }
    }
    out
}

/// Returns the report and the indices (into `items`) of the survivors in
/// (video, timestamp) order.
pub fn dedup(items: &[DedupItem<'_>], cfg: DedupConfig, exec: Execution) -> (DedupReport, Vec<usize>) {
    let mut by_video: BTreeMap<&VideoId, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_video.entry(&item.id.video).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_video
        .into_values()
        .map(|mut v| {
            v.sort_by(|&a, &b| items[a].timestamp_s.total_cmp(&items[b].timestamp_s));
            v
        })
        .collect();
    let results = par::map_slice(exec, &groups, |order| dedup_video(items, order, cfg));

    let mut report = DedupReport::default();
    let mut survivors = Vec::new();
    for (i, outcome) in results.into_iter().flatten() {
        match outcome {
            Outcome::Keep => {
                report.kept += 1;
                survivors.push(i);
            }
            Outcome::Drop(by, stage) => {
                match stage {
                    DedupStage::Phash => report.dropped_phash += 1,
                    DedupStage::Cosine => report.dropped_cosine += 1,
                }
                report.drop_pairs.push(DropPair {
                    dropped: items[i].id.clone(),
                    survivor: items[by].id.clone(),
                    stage,
                });
            }
        }
    }
    (report, survivors)
}
