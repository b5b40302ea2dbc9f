//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! an independent brute-force oracle at the stated tolerance. Exits non-zero
//! if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use common::*;
use madt_core::adapters::{AdapterError, ContextScorer, StubContextScorer};
use madt_core::dedup::{dedup, DedupConfig, DedupItem};
use madt_core::embedding::{EmbeddingError, EmbeddingProvider};
use madt_core::kfe::{KfeError, KfeFile};
use madt_core::metadata::{MetaBundle, MetadataStore};
use madt_core::phash::PerceptualHash;
use madt_core::trake::{
    align_events, generate_candidates_with, normalize_context, rerank, score_contexts, trake,
    QueryEmbeddings, TrakeDeps, TrakeQuery,
};
use madt_core::{
    CandidateSegment, DecomposedQuery, Embedding, Execution, KeyframeId, TrakeConfig, VectorIndex,
    VideoId,
};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn build(rows: &[Row]) -> VectorIndex {
    VectorIndex::build(rows[0].2.dim(), rows.iter().cloned())
        .expect("valid rows")
        .with_execution(Execution::available())
}

// ---------------------------------------------------------------------------

fn knn_exactness() -> Outcome {
    const CORPORA: u64 = 20;
    const QUERIES: usize = 50;
    let mut elapsed = Duration::ZERO;
    let mut checked = 0;
    for c in 0..CORPORA {
        let mut r = rng(1000 + c);
        let rows = random_rows(&mut r, 20, 50, 64, 1.0, 3);
        assert_eq!(rows.len(), 1000);
        let queries: Vec<Embedding> = (0..QUERIES).map(|_| random_unit(&mut r, 64)).collect();
        let t0 = Instant::now();
        let index = build(&rows);
        let results: Vec<Vec<String>> = queries
            .iter()
            .map(|q| {
                index
                    .search(q, 10, None)
                    .unwrap()
                    .into_iter()
                    .map(|h| h.keyframe.render())
                    .collect()
            })
            .collect();
        elapsed += t0.elapsed();
        for (q, got) in queries.iter().zip(results) {
            let want: Vec<String> = oracle_top_k(&rows, q, 10).into_iter().map(|x| x.0).collect();
            ensure(got == want, || format!("corpus {c}: {got:?} != {want:?}"))?;
            checked += 1;
        }
    }
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked}/{checked} queries identical, {:.3} s", elapsed.as_secs_f64()))
}

/// One video of up to 12 keyframes, a random segment in it and `n` events.
fn beam_instance(r: &mut impl Rng) -> (Vec<Row>, Vec<Embedding>, CandidateSegment, f64, usize) {
    let k = r.gen_range(4..=12);
    let n = r.gen_range(3..=5);
    let mut t = 0.0;
    let rows: Vec<Row> = (0..k)
        .map(|i| {
            let row = (KeyframeId::new("V", i as u32), t, random_unit(r, 8));
            t += r.gen_range(1..=3) as f64;
            row
        })
        .collect();
    let a = r.gen_range(0..k - 1);
    let b = r.gen_range(a + 1..k);
    let seg = CandidateSegment::new(rows[a].0.clone(), rows[a].1, rows[b].0.clone(), rows[b].1, 0.0);
    let ev = (0..n).map(|_| random_unit(r, 8)).collect();
    let tau = r.gen_range(3..=6) as f64;
    (rows, ev, seg, tau, b - a - 1)
}

fn oracle_event_score(rows: &[Row], ev: &[Embedding], seg: &CandidateSegment, tau: f64) -> Option<f64> {
    let n = ev.len();
    let find = |id: &KeyframeId| rows.iter().find(|r| &r.0 == id).unwrap();
    let (s, e) = (find(&seg.start), find(&seg.end));
    let interior: Vec<&Row> = rows.iter().filter(|r| r.1 > s.1 && r.1 < e.1).collect();
    let times: Vec<f64> = interior.iter().map(|r| r.1).collect();
    let scores: Vec<Vec<f64>> = (1..n - 1)
        .map(|j| interior.iter().map(|r| oracle_dot(&ev[j], &r.2)).collect())
        .collect();
    oracle_best_path(
        (s.1, oracle_dot(&ev[0], &s.2)),
        (e.1, oracle_dot(&ev[n - 1], &e.2)),
        &times,
        &scores,
        tau,
    )
}

fn beam_admissibility() -> Outcome {
    let mut r = rng(2000);
    let (mut feasible, mut narrow_found) = (0, 0);
    for i in 0..200 {
        let (rows, ev, seg, tau, interior) = beam_instance(&mut r);
        let index = build(&rows);
        let qe = QueryEmbeddings::from_embeddings(ev.clone());
        let want = oracle_event_score(&rows, &ev, &seg, tau);
        let wide = TrakeConfig {
            tau_s: tau,
            beam_width: interior.max(1),
            ..Default::default()
        };
        let got = align_events(&seg, &qe, &wide, &index, None).ok().map(|(_, s)| s);
        match (got, want) {
            (Some(g), Some(w)) => {
                ensure((g - w).abs() <= 1e-9, || format!("instance {i}: beam {g} vs oracle {w}"))?;
                feasible += 1;
            }
            (None, None) => {}
            (g, w) => return Err(format!("instance {i}: beam {g:?} vs oracle {w:?}")),
        }
        for b in [1, 2] {
            let narrow = TrakeConfig {
                beam_width: b,
                ..wide
            };
            if let Ok((_, s)) = align_events(&seg, &qe, &narrow, &index, None) {
                let w = want.ok_or_else(|| format!("instance {i}: b={b} found a path the oracle did not"))?;
                ensure(s <= w, || format!("instance {i}: b={b} scored {s} > oracle {w}"))?;
                narrow_found += 1;
            }
        }
    }
    ensure(feasible >= 50, || format!("only {feasible} feasible instances"))?;
    Ok(format!(
        "200 instances ({feasible} feasible) exact at 1e-9; {narrow_found} narrow-beam paths all <= oracle"
    ))
}

/// Maps event texts to fixed embeddings.
struct MapEmbedder {
    dim: usize,
    map: HashMap<String, Embedding>,
}

impl EmbeddingProvider for MapEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.map.get(text).cloned().ok_or_else(|| EmbeddingError::UnknownKey(text.into()))
    }
    fn embed_image(&self, _: &[u8]) -> Result<Embedding, EmbeddingError> {
        Err(EmbeddingError::Unavailable("text only".into()))
    }
}

fn temporal_soundness() -> Outcome {
    let mut r = rng(3000);
    let (mut queries, mut segments, mut paths) = (0, 0, 0);
    for c in 0..100 {
        let rows = random_rows(&mut r, 6, 30, 8, 0.5, 8);
        let index = build(&rows);
        let store = MetadataStore::from_lines(random_metadata(&mut r, &rows), 15.0).unwrap();
        for _ in 0..10 {
            let n = r.gen_range(2..=5);
            let names: Vec<String> = (0..n).map(|j| format!("event {j}")).collect();
            let embedder = MapEmbedder {
                dim: 8,
                map: names.iter().cloned().map(|s| (s, random_unit(&mut r, 8))).collect(),
            };
            let cfg = TrakeConfig {
                tau_s: r.gen_range(1..=10) as f64 * 0.5,
                beam_width: r.gen_range(1..=8),
                top_m: r.gen_range(5..=100),
                knn_k: r.gen_range(10..=180),
                alpha: r.gen_range(0.0..=1.0),
                ..Default::default()
            };
            let res = trake(
                TrakeQuery::Structured(DecomposedQuery::new("red car", names).unwrap()),
                &cfg,
                &TrakeDeps {
                    index: &index,
                    store: &store,
                    embedder: &embedder,
                    scorer: &StubContextScorer,
                    decomposer: None,
                },
            )
            .map_err(|e| format!("corpus {c}: {e}"))?;
            check_temporal(&res.segments, n, cfg.tau_s).map_err(|e| format!("corpus {c}: {e}"))?;
            queries += 1;
            segments += res.segments.len();
            paths += res.segments.iter().filter(|s| s.best_path.is_some()).count();
        }
    }
    Ok(format!("{queries} queries, {segments} segments, {paths} paths, 0 violations"))
}

fn candidate_equivalence() -> Outcome {
    let mut r = rng(4000);
    let mut compared = 0;
    for c in 0..30 {
        let videos = r.gen_range(1..=10);
        let per_video = r.gen_range(2..=50);
        let rows = random_rows(&mut r, videos, per_video, 16, 1.0, 6);
        assert!(rows.len() <= 500);
        let index = build(&rows);
        for _ in 0..10 {
            let n = r.gen_range(2..=5);
            let ev: Vec<Embedding> = (0..n).map(|_| random_unit(&mut r, 16)).collect();
            let cfg = TrakeConfig {
                tau_s: r.gen_range(1..=8) as f64,
                knn_k: rows.len(),
                top_m: r.gen_range(1..=150),
                ..Default::default()
            };
            let got = generate_candidates_with(&QueryEmbeddings::from_embeddings(ev.clone()), &cfg, &index)
                .map_err(|e| e.to_string())?;
            let want = oracle_candidates(&rows, &ev[0], &ev[n - 1], n, cfg.tau_s, cfg.top_m);
            let got_ids: Vec<(String, String)> = got.iter().map(|s| (s.start.render(), s.end.render())).collect();
            let want_ids: Vec<(String, String)> = want.iter().map(|s| (s.start.clone(), s.end.clone())).collect();
            ensure(got_ids == want_ids, || format!("corpus {c}: ordering differs"))?;
            for (g, w) in got.iter().zip(&want) {
                ensure(g.boundary_score == w.boundary, || format!("corpus {c}: boundary score differs"))?;
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} queries on 30 corpora (<= 500 keyframes): identical sets and ordering"))
}

/// Returns a fixed raw score for every segment.
struct FixedScorer(i64);

impl ContextScorer for FixedScorer {
    fn score(&self, _: &MetaBundle, _: &str, _: &[String]) -> Result<i64, AdapterError> {
        Ok(self.0)
    }
}

fn fusion_invariants() -> Outcome {
    let mut r = rng(5000);
    for trial in 0..500 {
        let m = r.gen_range(1..40);
        let n = r.gen_range(2..=5);
        let segs: Vec<CandidateSegment> = (0..m)
            .map(|i| {
                let mut s = CandidateSegment::new(
                    KeyframeId::new("V", 2 * i),
                    i as f64,
                    KeyframeId::new("V", 2 * i + 1),
                    i as f64 + 1.0,
                    0.0,
                );
                s.event_score = Some(r.gen_range(-(n as f64)..=n as f64));
                s.context_score = Some(normalize_context(r.gen_range(-20..=120)));
                s
            })
            .collect();
        let order = |v: &[CandidateSegment]| v.iter().map(|s| s.start.clone()).collect::<Vec<_>>();
        let event_norm: Vec<f64> = segs.iter().map(|s| (s.event_score.unwrap() / n as f64 + 1.0) / 2.0).collect();
        let context: Vec<f64> = segs.iter().map(|s| s.context_score.unwrap()).collect();
        let by = |keys: &[f64]| argsort_desc(keys).into_iter().map(|i| segs[i].start.clone()).collect::<Vec<_>>();
        ensure(order(&rerank(segs.clone(), n, 1.0)) == by(&event_norm), || format!("trial {trial}: alpha=1"))?;
        ensure(order(&rerank(segs.clone(), n, 0.0)) == by(&context), || format!("trial {trial}: alpha=0"))?;
    }
    ensure(normalize_context(-5) == 0.0, || "raw -5".into())?;
    ensure(normalize_context(130) == 1.0, || "raw 130".into())?;
    for raw in -1000..=1000 {
        let c = normalize_context(raw);
        ensure((0.0..=1.0).contains(&c), || format!("raw {raw} -> {c}"))?;
    }
    // clamping also holds through the scoring stage
    let mut rr = rng(5001);
    let rows = random_rows(&mut rr, 2, 10, 8, 1.0, 2);
    let store = MetadataStore::from_lines(random_metadata(&mut rr, &rows), 15.0).unwrap();
    let index = build(&rows);
    let ev: Vec<Embedding> = (0..2).map(|_| random_unit(&mut rr, 8)).collect();
    let cfg = TrakeConfig { tau_s: 5.0, ..Default::default() };
    let q = DecomposedQuery::new("ctx", vec!["a".into(), "b".into()]).unwrap();
    for (raw, want) in [(-5, 0.0), (130, 1.0)] {
        let mut segs = generate_candidates_with(&QueryEmbeddings::from_embeddings(ev.clone()), &cfg, &index).unwrap();
        score_contexts(&mut segs, &q, &FixedScorer(raw), &store, &cfg, Execution::available());
        ensure(!segs.is_empty() && segs.iter().all(|s| s.context_score == Some(want)), || {
            format!("scorer raw {raw} not clamped to {want}")
        })?;
    }
    Ok("500 random rankings argsort-equal at alpha=1 and alpha=0; clamps -5 -> 0, 130 -> 1".into())
}

fn dedup_guarantees() -> Outcome {
    let cfg = DedupConfig::default();
    let (mut inputs, mut dropped) = (0, 0);
    for c in 0..100 {
        let mut r = rng(6000 + c);
        let mut frames: Vec<(KeyframeId, f64, Option<PerceptualHash>, Embedding)> = Vec::new();
        for v in 0..r.gen_range(1..=4) {
            let shots: Vec<(Embedding, u64)> = (0..r.gen_range(1..6)).map(|_| (random_unit(&mut r, 16), r.gen())).collect();
            for i in 0..r.gen_range(1..=40) {
                let (base, h) = &shots[r.gen_range(0..shots.len())];
                let noise = r.gen_range(0.0..0.5f32);
                let v2: Vec<f32> = base.as_slice().iter().map(|x| x + noise * r.gen_range(-0.3..0.3f32)).collect();
                let mut hash = *h;
                for _ in 0..r.gen_range(0..14) {
                    hash ^= 1 << r.gen_range(0..64);
                }
                frames.push((
                    KeyframeId::new(format!("V{v}"), i),
                    i as f64 * 0.5,
                    r.gen_bool(0.85).then_some(PerceptualHash(hash)),
                    Embedding::normalized(v2).unwrap(),
                ));
            }
        }
        let items: Vec<DedupItem<'_>> = frames
            .iter()
            .map(|f| DedupItem { id: &f.0, timestamp_s: f.1, hash: f.2, embedding: f.3.as_slice() })
            .collect();
        let (report, survivors) = dedup(&items, cfg, Execution::available());
        ensure(report.total() == frames.len(), || format!("corpus {c}: counts {} != {}", report.total(), frames.len()))?;
        inputs += frames.len();
        dropped += frames.len() - report.kept;

        let mut by_video: BTreeMap<&VideoId, Vec<usize>> = BTreeMap::new();
        for &i in &survivors {
            by_video.entry(&frames[i].0.video).or_default().push(i);
        }
        for kept in by_video.values_mut() {
            kept.sort_by(|&a, &b| frames[a].1.partial_cmp(&frames[b].1).unwrap());
            for (x, &a) in kept.iter().enumerate() {
                for &b in &kept[x + 1..] {
                    let cos = oracle_cos(frames[a].3.as_slice(), frames[b].3.as_slice());
                    ensure(cos <= cfg.cos_threshold, || {
                        format!("corpus {c}: {} and {} co-survive at cosine {cos}", frames[a].0, frames[b].0)
                    })?;
                }
            }
            for w in kept.windows(2) {
                if let (Some(a), Some(b)) = (frames[w[0]].2, frames[w[1]].2) {
                    ensure((a.0 ^ b.0).count_ones() > cfg.phash_threshold, || {
                        format!("corpus {c}: consecutive survivors within Hamming {}", cfg.phash_threshold)
                    })?;
                }
            }
        }
        let kept_items: Vec<DedupItem<'_>> = survivors.iter().map(|&i| items[i]).collect();
        let (again, _) = dedup(&kept_items, cfg, Execution::Sequential);
        ensure(again.kept == kept_items.len(), || format!("corpus {c}: second pass dropped frames"))?;
    }
    Ok(format!("100 corpora, {inputs} keyframes, {dropped} dropped; no violations; idempotent; counts sum"))
}

fn filter_correctness() -> Outcome {
    let mut checks = 0;
    let mut non_empty = 0;
    for c in 0..100 {
        let mut r = rng(7000 + c);
        let (videos, per_video) = (r.gen_range(1..=6), r.gen_range(1..=40));
        let rows = random_rows(&mut r, videos, per_video, 4, 1.5, 6);
        let lines = random_metadata(&mut r, &rows);
        let store = MetadataStore::from_lines(lines.clone(), 15.0).unwrap();
        let videos: Vec<VideoId> = rows.iter().map(|x| x.0.video.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        for _ in 0..20 {
            let f = random_filter(&mut r, &videos);
            let got = store.filter(rows.iter().map(|x| &x.0), &f).map_err(|e| e.to_string())?;
            let want = oracle_filter(&lines, &f, 15.0);
            ensure(got == want, || format!("corpus {c}: filter {f:?}: {} vs {}", got.len(), want.len()))?;
            checks += 1;
            non_empty += (!want.is_empty()) as usize;
        }
    }
    Ok(format!("{checks} filters on 100 corpora equal the naive scan ({non_empty} non-empty)"))
}

fn cross_surface() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_madt");
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(bin)
            .args(args)
            .env_remove("MADT_CORPUS_DIR")
            .env_remove("MADT_CONFIG")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        Ok(o.stdout)
    };
    run(&[
        "ingest",
        "--embeddings",
        fixture.join("embeddings.kfe").to_str().unwrap(),
        "--metadata",
        fixture.join("metadata.jsonl").to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
    ])?;
    let corpus = corpus.to_str().unwrap();

    let mut server = Command::new(bin)
        .args(["serve", "--corpus", corpus, "--port", "0"])
        .env_remove("MADT_CONFIG")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let url = line.trim().trim_start_matches("listening on ").to_string();

    let queries: [(&str, &[&str], Option<f64>); 3] = [
        ("a football match", &["kickoff at the centre circle", "striker shoots at goal", "goal scored the net ripples"], None),
        ("cooking", &["chop onions", "fry in the pan", "serve pasta"], Some(12.0)),
        ("festival night", &["fireworks", "lanterns on the water"], None),
    ];
    let ids = |v: &Value| -> Vec<(String, String, Vec<String>)> {
        v["segments"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                let path = s["best_path"]["keyframes"]
                    .as_array()
                    .map(|a| a.iter().map(|k| k.as_str().unwrap().to_string()).collect())
                    .unwrap_or_default();
                (s["start"].as_str().unwrap().into(), s["end"].as_str().unwrap().into(), path)
            })
            .collect()
    };
    let client = reqwest::blocking::Client::new();
    let mut result = Ok(());
    let mut total = 0;
    for (context, events, tau) in queries {
        let mut args = vec!["trake", "--corpus", corpus, "--context", context, "--format", "json"];
        for e in events {
            args.extend(["--event", e]);
        }
        let tau_s = tau.map(|t| t.to_string());
        if let Some(t) = &tau_s {
            args.extend(["--tau", t]);
        }
        let cli: Value = serde_json::from_slice(&run(&args)?).map_err(|e| e.to_string())?;
        let mut body = serde_json::json!({"context": context, "events": events});
        if let Some(t) = tau {
            body["tau"] = t.into();
        }
        let http: Value = client
            .post(format!("{url}/trake"))
            .json(&body)
            .send()
            .and_then(|r| r.json())
            .map_err(|e| e.to_string())?;
        let (a, b) = (ids(&cli), ids(&http));
        total += a.len();
        if a != b || a.is_empty() {
            result = Err(format!("query {context:?}: CLI {a:?} vs HTTP {b:?}"));
            break;
        }
    }
    let _ = server.kill();
    let _ = server.wait();
    result.map(|_| format!("3 queries, {total} segments with identical ids and paths"))
}

fn kfe_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(9000);
    let specials = [0.0f32, -0.0, f32::INFINITY, f32::NEG_INFINITY, f32::MIN_POSITIVE / 2.0, f32::MAX, f32::from_bits(0x7fc0_1234)];
    let mut vectors = 0;
    for i in 0..100 {
        let dim = r.gen_range(1..=96);
        let mut f = KfeFile::new(dim);
        for j in 0..r.gen_range(0..40) {
            let v: Vec<f32> = (0..dim)
                .map(|_| {
                    if r.gen_bool(0.1) {
                        specials[r.gen_range(0..specials.len())]
                    } else {
                        f32::from_bits(r.gen())
                    }
                })
                .collect();
            f.push(format!("V{i}_ảnh/{j:04}"), v).unwrap();
        }
        let path = dir.path().join(format!("{i}.kfe"));
        f.write(&path).map_err(|e| e.to_string())?;
        let back = KfeFile::read(&path).map_err(|e| e.to_string())?;
        ensure(back.dim == f.dim && back.records.len() == f.records.len(), || format!("file {i}: shape"))?;
        for ((ka, va), (kb, vb)) in f.records.iter().zip(&back.records) {
            ensure(ka == kb, || format!("file {i}: key {ka} vs {kb}"))?;
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure(bits(va) == bits(vb), || format!("file {i}: bits differ for {ka}"))?;
            vectors += 1;
        }
        ensure(std::fs::read(&path).unwrap() == back.encode().unwrap(), || format!("file {i}: re-encode differs"))?;
    }

    let mut good = KfeFile::new(2);
    good.push("V/0001", vec![1.0, 2.0]).unwrap();
    let bytes = good.encode().unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"KFE2");
    let mut bad_dim = bytes.clone();
    bad_dim[4..8].copy_from_slice(&0u32.to_le_bytes());
    let mut count_high = bytes.clone();
    count_high[8..16].copy_from_slice(&2u64.to_le_bytes());
    let mut count_low = bytes.clone();
    count_low[8..16].copy_from_slice(&0u64.to_le_bytes());
    for (name, b) in [("magic", bad_magic), ("dim", bad_dim), ("count+1", count_high), ("count-1", count_low)] {
        ensure(matches!(KfeFile::decode(&b), Err(KfeError::Format(_))), || format!("malformed {name} accepted"))?;
    }
    Ok(format!("100 files, {vectors} vectors bit-exact; bad magic/dim/count rejected with a format error"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("k-NN exactness", knn_exactness),
        ("beam-search admissibility", beam_admissibility),
        ("temporal-constraint soundness", temporal_soundness),
        ("candidate-generation equivalence", candidate_equivalence),
        ("fusion invariants", fusion_invariants),
        ("dedup", dedup_guarantees),
        ("hybrid filter correctness", filter_correctness),
        ("cross-surface consistency", cross_surface),
        ("KFE format round-trip", kfe_round_trip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
