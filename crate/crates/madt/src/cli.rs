//! Command-line interface. Exit codes: 0 success, 1 internal error,
//! 2 usage or invalid input, 3 corpus problems, 4 adapter unavailable.

use std::ffi::OsString;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use madt_core::adapters::ImageSearchConfig;
use madt_core::dedup::DedupReport;
use madt_core::ingest::{ingest, read_dedup_report, IngestConfig};
use madt_core::kfe::KfeFile;
use madt_core::metadata::{parse_jsonl, MetadataLine};
use madt_core::phash::phash_bytes;
use madt_core::{Execution, KeyframeId, MetadataFilter, TrakeResult, VideoId};

use crate::config::AppConfig;
use crate::engine::{self, thumbnail_file, Adapters, EngineError, SearchHit, SearchMode, SearchRequest, Snapshot, TrakeRequest};
use crate::service::{self, AppState};

#[derive(Parser, Debug)]
#[command(name = "madt", version, about = "Multi-event temporal video retrieval")]
pub struct Cli {
    /// TOML or JSON configuration file
    #[arg(long, global = true, env = "MADT_CONFIG")]
    config: Option<PathBuf>,
    /// Run scans and per-segment work on one thread
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a corpus directory from a KFE embedding file and metadata JSONL
    Ingest {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        phash_threshold: Option<u32>,
        #[arg(long)]
        cos_threshold: Option<f64>,
        /// Expected embedding dimension
        #[arg(long)]
        dim: Option<usize>,
        /// ASR window half-width, seconds
        #[arg(long)]
        tau_asr: Option<f64>,
        /// Compute missing perceptual hashes from `{dir}/{video}/{frame:04}.png|jpg`
        #[arg(long)]
        thumbnails: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed on stdout
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        thumbnails: Option<PathBuf>,
        /// Directory for the offline image search (one subdirectory per token)
        #[arg(long)]
        image_search_dir: Option<PathBuf>,
    },
    /// Keyframe search by text or by a corpus keyframe id
    Search {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, conflicts_with = "image_ref", required_unless_present = "image_ref")]
        text: Option<String>,
        /// Canonical keyframe id whose embedding is the query
        #[arg(long)]
        image_ref: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long = "ocr")]
        ocr: Vec<String>,
        #[arg(long = "caption")]
        caption: Vec<String>,
        #[arg(long = "object")]
        objects: Vec<String>,
        #[arg(long = "asr")]
        asr: Vec<String>,
        #[arg(long = "video")]
        videos: Vec<String>,
        #[arg(long = "include")]
        include: Vec<KeyframeId>,
        #[arg(long = "exclude")]
        exclude: Vec<KeyframeId>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Temporal multi-event search
    Trake {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "")]
        context: String,
        /// One event description, in order; repeat for each event
        #[arg(long = "event")]
        events: Vec<String>,
        /// File with one event per line
        #[arg(long)]
        events_file: Option<PathBuf>,
        /// Free-text query for the decomposer, used when no events are given
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        top_m: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Show the near-duplicate removal report of a corpus
    DedupReport {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Write the bundled demo inputs (embeddings, metadata, thumbnails, images)
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn corpus_err(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 3,
        message: msg.to_string(),
    }
}

fn usage_err(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: msg.to_string(),
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError {
        code: 1,
        message: e.to_string(),
    }
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::available()
    }
}

fn corpus_dir(flag: Option<PathBuf>, cfg: &AppConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.corpus_dir.clone())
        .ok_or_else(|| usage_err("no corpus directory: pass --corpus or set MADT_CORPUS_DIR"))
}

fn open(flag: Option<PathBuf>, cfg: &AppConfig, exec: Execution) -> Result<Snapshot, CliError> {
    let dir = corpus_dir(flag, cfg)?;
    Snapshot::open(&dir, cfg, exec).map_err(|e| corpus_err(format!("{}: {e}", dir.display())))
}

fn write_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| io_err(e.into()))?;
    writeln!(out).map_err(io_err)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = AppConfig::load(cli.config.as_deref()).map_err(usage_err)?;
    let exec = execution(cli.sequential);
    match cli.command {
        Command::Ingest {
            embeddings,
            metadata,
            out: out_dir,
            phash_threshold,
            cos_threshold,
            dim,
            tau_asr,
            thumbnails,
            format,
        } => {
            let mut icfg = IngestConfig {
                dim,
                dedup: cfg.dedup,
                tau_asr: tau_asr.unwrap_or(cfg.tau_asr),
            };
            if let Some(t) = phash_threshold {
                icfg.dedup.phash_threshold = t;
            }
            if let Some(c) = cos_threshold {
                icfg.dedup.cos_threshold = c;
            }
            let kfe = KfeFile::read(&embeddings)
                .map_err(|e| corpus_err(format!("{}: {e}", embeddings.display())))?;
            let file = std::fs::File::open(&metadata)
                .map_err(|e| corpus_err(format!("{}: {e}", metadata.display())))?;
            let mut lines = parse_jsonl(io::BufReader::new(file))
                .map_err(|e| corpus_err(format!("{}: {e}", metadata.display())))?;
            if let Some(dir) = &thumbnails {
                fill_hashes(&mut lines, dir)?;
            }
            let corpus = ingest(kfe, lines, &icfg).map_err(corpus_err)?;
            corpus.save(&out_dir).map_err(corpus_err)?;
            match format {
                Format::Json => write_json(out, &corpus.report),
                Format::Table => {
                    writeln!(out, "corpus written to {}", out_dir.display()).map_err(io_err)?;
                    report_table(out, &corpus.report)
                }
            }
        }
        Command::Serve {
            corpus,
            host,
            port,
            thumbnails,
            image_search_dir,
        } => {
            if let Some(c) = corpus {
                cfg.corpus_dir = Some(c);
            }
            if let Some(t) = thumbnails {
                cfg.thumbnails_dir = Some(t);
            }
            if let Some(d) = image_search_dir {
                cfg.image_search = ImageSearchConfig::Fixture { dir: d };
            }
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| usage_err(format!("bad address {host}:{port}: {e}")))?;
            let state = match AppState::from_config(cfg, exec) {
                Ok(s) => s,
                Err(e) => return Err(corpus_err(e)),
            };
            serve_forever(state, addr, out)
        }
        Command::Search {
            corpus,
            text,
            image_ref,
            k,
            ocr,
            caption,
            objects,
            asr,
            videos,
            include,
            exclude,
            format,
        } => {
            let snap = open(corpus, &cfg, exec)?;
            let non_empty = |v: Vec<String>| (!v.is_empty()).then_some(v);
            let filter = MetadataFilter {
                ocr_contains: non_empty(ocr),
                caption_contains: non_empty(caption),
                objects_any: non_empty(objects),
                asr_contains: non_empty(asr),
                videos: non_empty(videos).map(|v| v.into_iter().map(VideoId::new).collect()),
            };
            let req = SearchRequest {
                mode: if image_ref.is_some() {
                    SearchMode::ImageRef
                } else {
                    SearchMode::Text
                },
                text,
                image_key: image_ref,
                filter: (!filter.is_empty()).then_some(filter),
                boost: None,
                k,
                include_ids: (!include.is_empty()).then_some(include),
                exclude_ids: exclude,
                weights: None,
            };
            let hits = engine::search(&snap, &cfg, &req, &|_| None)?;
            match format {
                Format::Json => write_json(out, &hits),
                Format::Table => hits_table(out, &hits),
            }
        }
        Command::Trake {
            corpus,
            context,
            mut events,
            events_file,
            query,
            tau,
            alpha,
            top_m,
            beam,
            knn_k,
            format,
        } => {
            if let Some(path) = events_file {
                let f = std::fs::File::open(&path)
                    .map_err(|e| usage_err(format!("{}: {e}", path.display())))?;
                for line in io::BufReader::new(f).lines() {
                    let line = line.map_err(io_err)?;
                    if !line.trim().is_empty() {
                        events.push(line.trim().to_string());
                    }
                }
            }
            let req = TrakeRequest {
                context,
                events,
                query,
                tau,
                alpha,
                top_m,
                beam,
                knn_k,
            };
            // validate parameters before touching the corpus
            req.effective_config(&cfg.trake)?;
            let snap = open(corpus, &cfg, exec)?;
            let adapters = Adapters::from_config(&cfg)?;
            let result = engine::run_trake(&snap, &adapters, &cfg, &req)?;
            match format {
                Format::Json => write_json(out, &result),
                Format::Table => trake_table(out, &result),
            }
        }
        Command::DedupReport { corpus, format } => {
            let dir = corpus_dir(corpus, &cfg)?;
            let report = read_dedup_report(&dir)
                .map_err(|e| corpus_err(format!("{}: {e}", dir.display())))?;
            match format {
                Format::Json => write_json(out, &report),
                Format::Table => report_table(out, &report),
            }
        }
        Command::Fixture { out: dir } => {
            madt_core::fixture::demo_corpus().write(&dir).map_err(io_err)?;
            writeln!(out, "demo inputs written to {}", dir.display()).map_err(io_err)
        }
    }
}

/// Fills absent perceptual hashes from thumbnail images, where present.
fn fill_hashes(lines: &mut [MetadataLine], dir: &Path) -> Result<(), CliError> {
    for line in lines.iter_mut() {
        if let MetadataLine::Keyframe(k) = line {
            if k.phash.is_some() {
                continue;
            }
            if let Some(path) = thumbnail_file(dir, &k.id) {
                let bytes = std::fs::read(&path).map_err(io_err)?;
                let hash = phash_bytes(&bytes)
                    .map_err(|e| corpus_err(format!("{}: {e}", path.display())))?;
                k.phash = Some(hash);
            }
        }
    }
    Ok(())
}

fn serve_forever(state: AppState, addr: SocketAddr, out: &mut dyn Write) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(io_err)?;
        let bound = listener.local_addr().map_err(io_err)?;
        writeln!(out, "listening on http://{bound}").map_err(io_err)?;
        out.flush().map_err(io_err)?;
        service::serve(Arc::new(state), listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io_err)
    })
}

fn hits_table(out: &mut dyn Write, hits: &[SearchHit]) -> Result<(), CliError> {
    writeln!(out, "{:>4}  {:<24} {:>9} {:>8} {:>8} {:>8}", "rank", "keyframe", "time_s", "sim", "meta", "score")
        .map_err(io_err)?;
    for (i, h) in hits.iter().enumerate() {
        writeln!(
            out,
            "{:>4}  {:<24} {:>9.2} {:>8.4} {:>8.4} {:>8.4}",
            i + 1,
            h.id.render(),
            h.timestamp_s,
            h.similarity,
            h.meta_relevance,
            h.score
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn trake_table(out: &mut dyn Write, r: &TrakeResult) -> Result<(), CliError> {
    writeln!(out, "context: {}", r.query.context).map_err(io_err)?;
    for (i, e) in r.query.events.iter().enumerate() {
        writeln!(out, "event {}: {e}", i + 1).map_err(io_err)?;
    }
    if r.degenerate {
        let hits: Vec<SearchHit> = r
            .hits
            .iter()
            .map(|h| SearchHit {
                id: h.keyframe.clone(),
                video: h.keyframe.video.clone(),
                frame_index: h.keyframe.frame_index,
                timestamp_s: f64::NAN,
                similarity: h.score,
                meta_relevance: 0.0,
                score: h.score,
                thumbnail: None,
            })
            .collect();
        return hits_table(out, &hits);
    }
    writeln!(
        out,
        "{:>4}  {:<10} {:>15} {:>8} {:>8} {:>8}  path",
        "rank", "video", "span_s", "final", "event", "context"
    )
    .map_err(io_err)?;
    for (i, s) in r.segments.iter().enumerate() {
        let path = s.best_path.as_ref().map_or_else(
            || "(no feasible path)".to_string(),
            |p| {
                p.keyframes()
                    .iter()
                    .map(|k| k.render())
                    .collect::<Vec<_>>()
                    .join(" -> ")
            },
        );
        writeln!(
            out,
            "{:>4}  {:<10} {:>7.1}-{:<7.1} {:>8} {:>8} {:>8}  {path}",
            i + 1,
            s.video.as_str(),
            s.start_s,
            s.end_s,
            fmt_opt(s.final_score),
            fmt_opt(s.event_score_norm),
            if s.context_scored {
                fmt_opt(s.context_score)
            } else {
                "n/a".to_string()
            },
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn report_table(out: &mut dyn Write, r: &DedupReport) -> Result<(), CliError> {
    writeln!(
        out,
        "kept {}  dropped by phash {}  dropped by cosine {}  total {}",
        r.kept,
        r.dropped_phash,
        r.dropped_cosine,
        r.total()
    )
    .map_err(io_err)?;
    for p in &r.drop_pairs {
        writeln!(out, "  {:<24} ~ {:<24} ({:?})", p.dropped.render(), p.survivor.render(), p.stage)
            .map_err(io_err)?;
    }
    Ok(())
}
