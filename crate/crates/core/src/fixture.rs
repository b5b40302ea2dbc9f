//! Deterministic demo corpus: six short videos described by scripted
//! captions, embedded with the stub embedder. Used by the CLI's `fixture`
//! command, the service tests and the acceptance suite.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{AsrSpan, KeyframeId, VideoId};
use crate::embedding::stub_embed_text;
use crate::kfe::KfeFile;
use crate::metadata::{KeyframeLine, MetadataLine, VideoLine};
use crate::phash::{phash64, GrayImage};

pub const DEMO_DIM: usize = 64;
pub const DEMO_SEED: u64 = 7;
/// Seconds between consecutive shots of a demo video.
pub const SHOT_SPACING_S: f64 = 4.0;

struct Shot {
    caption: &'static str,
    objects: &'static [&'static str],
    ocr: &'static str,
    speech: &'static str,
    /// 0: single keyframe; 1: adds a pixel-level duplicate; 2: adds a
    /// re-encoded duplicate with a different image but the same content
    dup: u8,
}

const fn shot(
    caption: &'static str,
    objects: &'static [&'static str],
    ocr: &'static str,
    speech: &'static str,
    dup: u8,
) -> Shot {
    Shot {
        caption,
        objects,
        ocr,
        speech,
        dup,
    }
}

const VIDEOS: &[(&str, &[Shot])] = &[
    (
        "V0001",
        &[
            shot("players walk onto the pitch", &["person"], "", "welcome to the final", 1),
            shot("kickoff at the centre circle", &["person", "ball"], "0-0", "and we are under way", 0),
            shot("midfielder passes the ball", &["person", "ball"], "0-0", "", 2),
            shot("striker shoots at goal", &["person", "ball"], "0-0", "he shoots", 0),
            shot("goalkeeper dives but misses", &["person", "ball"], "", "", 0),
            shot("goal scored the net ripples", &["ball", "net"], "1-0", "goal what a strike", 1),
            shot("players celebrate the goal", &["person"], "1-0", "the crowd goes wild", 0),
            shot("crowd cheers in the stadium", &["person"], "1-0", "", 0),
        ],
    ),
    (
        "V0002",
        &[
            shot("chef chops onions on a board", &["person", "knife"], "", "first chop the onions", 0),
            shot("oil heats in a pan", &["pan"], "", "", 1),
            shot("onions fry in the pan", &["pan"], "", "fry until golden", 0),
            shot("chef adds tomatoes to the pan", &["person", "pan"], "", "now the tomatoes", 2),
            shot("tomato sauce simmers", &["pan"], "", "", 0),
            shot("pasta is served on a plate", &["plate", "fork"], "BON APPETIT", "enjoy", 0),
        ],
    ),
    (
        "V0003",
        &[
            shot("news anchor in the studio", &["person"], "BREAKING NEWS", "good evening", 0),
            shot("aerial view of Nhat Tan bridge", &["bridge"], "cầu Nhật Tân", "the bridge opened today", 1),
            shot("traffic crosses the bridge", &["car", "bridge"], "", "", 0),
            shot("reporter interviews a driver", &["person", "car"], "", "it saves me an hour", 0),
            shot("map of the city", &[], "HA NOI", "", 0),
            shot("anchor closes the broadcast", &["person"], "", "good night", 0),
        ],
    ),
    (
        "V0004",
        &[
            shot("crowd cheers in the stadium", &["person"], "", "", 0),
            shot("goal scored the net ripples", &["ball", "net"], "0-1", "an early goal", 0),
            shot("referee shows a yellow card", &["person", "card"], "0-1", "", 1),
            shot("kickoff at the centre circle", &["person", "ball"], "0-1", "we restart", 0),
            shot("players walk off the pitch", &["person"], "FULL TIME", "", 0),
        ],
    ),
    (
        "V0005",
        &[
            shot("fireworks over the river", &["fireworks"], "", "happy new year", 0),
            shot("lanterns float on the water", &["lantern"], "", "", 0),
            shot("dragon dance in the street", &["person"], "", "drums are playing", 2),
            shot("children hold lanterns", &["person", "lantern"], "", "", 0),
            shot("crowd watches the fireworks", &["person", "fireworks"], "", "", 0),
        ],
    ),
    (
        "V0006",
        &[
            shot("motorbikes wait at a traffic light", &["motorbike", "traffic light"], "", "", 0),
            shot("traffic light turns green", &["traffic light"], "", "", 1),
            shot("motorbikes cross the intersection", &["motorbike"], "", "rush hour again", 0),
            shot("a bus stops at the station", &["bus"], "SALE 50%", "", 0),
            shot("passengers board the bus", &["person", "bus"], "", "mind the gap", 0),
        ],
    ),
];

/// Images offered by the fixture image search, per query token.
const SEARCH_IMAGES: &[(&str, usize)] = &[("bridge", 3), ("fireworks", 2), ("lantern", 1)];

/// A generated demo corpus, before ingestion.
pub struct DemoCorpus {
    pub embeddings: KfeFile,
    pub metadata: Vec<MetadataLine>,
    /// PNG thumbnails keyed by keyframe.
    pub thumbnails: Vec<(KeyframeId, Vec<u8>)>,
    /// PNG images for the fixture image search, keyed by token directory.
    pub search_images: Vec<(String, String, Vec<u8>)>,
}

fn seed_bytes(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// 48x48 grayscale image whose structure derives from `text`.
fn scene_image(text: &str) -> GrayImage {
    let s = seed_bytes(text);
    let (w, h) = (48usize, 48usize);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let bx = x * 4 / w;
            let by = y * 4 / h;
            let block = s[(by * 4 + bx) % 32] as f64;
            let grad = (x as f64 * s[16] as f64 / 255.0) + (y as f64 * s[17] as f64 / 255.0);
            px.push((block * 0.7 + grad * 1.5).min(255.0).round());
        }
    }
    GrayImage::new(w, h, px).expect("non-empty")
}

fn png(img: &GrayImage) -> Vec<u8> {
    let buf: Vec<u8> = (0..img.height())
        .flat_map(|y| (0..img.width()).map(move |x| (y, x)))
        .map(|(y, x)| img.get(x, y).clamp(0.0, 255.0) as u8)
        .collect();
    let gray = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer matches dimensions");
    let mut out = io::Cursor::new(Vec::new());
    gray.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn demo_corpus() -> DemoCorpus {
    let mut embeddings = KfeFile::new(DEMO_DIM);
    let mut metadata = Vec::new();
    let mut thumbnails = Vec::new();
    for (video, shots) in VIDEOS {
        let mut asr = Vec::new();
        let mut frame = 0u32;
        for (i, s) in shots.iter().enumerate() {
            let t0 = i as f64 * SHOT_SPACING_S;
            let text = format!("{} {}", s.caption, s.objects.join(" "));
            let vector = stub_embed_text(&text, DEMO_DIM, DEMO_SEED)
                .expect("valid dimension")
                .into_vec();
            let base = scene_image(&format!("{video}/{}", s.caption));
            let mut frames = vec![(t0, base.clone(), vector.clone())];
            match s.dup {
                1 => {
                    let mut copy = base.clone();
                    copy.set(5, 5, (copy.get(5, 5) + 1.0).min(255.0));
                    frames.push((t0 + 1.5, copy, vector.clone()));
                }
                2 => {
                    let other = scene_image(&format!("{video}/{} reencoded", s.caption));
                    frames.push((t0 + 1.5, other, vector.clone()));
                }
                _ => {}
            }
            for (t, img, v) in frames {
                let id = KeyframeId::new(*video, frame);
                frame += 25;
                embeddings
                    .push(id.render(), v)
                    .expect("vector has demo dimension");
                metadata.push(MetadataLine::Keyframe(KeyframeLine {
                    id: id.clone(),
                    timestamp: t,
                    ocr: s.ocr.to_string(),
                    caption: s.caption.to_string(),
                    objects: s.objects.iter().map(|o| o.to_string()).collect(),
                    phash: Some(phash64(&img)),
                }));
                thumbnails.push((id, png(&img)));
            }
            if !s.speech.is_empty() {
                asr.push(AsrSpan {
                    start: t0,
                    end: t0 + 3.0,
                    text: s.speech.to_string(),
                });
            }
        }
        metadata.push(MetadataLine::Video(VideoLine {
            video: VideoId::new(*video),
            asr,
        }));
    }
    let search_images = SEARCH_IMAGES
        .iter()
        .flat_map(|(token, count)| {
            (0..*count).map(move |i| {
                let name = format!("{:02}.png", i + 1);
                (token.to_string(), name, png(&scene_image(&format!("search {token} {i}"))))
            })
        })
        .collect();
    DemoCorpus {
        embeddings,
        metadata,
        thumbnails,
        search_images,
    }
}

impl DemoCorpus {
    /// Writes `embeddings.kfe`, `metadata.jsonl`, `thumbnails/` and
    /// `images/` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.embeddings
            .write(dir.join("embeddings.kfe"))
            .map_err(|e| io::Error::other(e.to_string()))?;
        let mut f = io::BufWriter::new(fs::File::create(dir.join("metadata.jsonl"))?);
        for line in &self.metadata {
            serde_json::to_writer(&mut f, line)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        for (id, bytes) in &self.thumbnails {
            let vdir = dir.join("thumbnails").join(id.video.as_str());
            fs::create_dir_all(&vdir)?;
            fs::write(vdir.join(format!("{:04}.png", id.frame_index)), bytes)?;
        }
        for (token, name, bytes) in &self.search_images {
            let tdir = dir.join("images").join(token);
            fs::create_dir_all(&tdir)?;
            fs::write(tdir.join(name), bytes)?;
        }
        Ok(())
    }
}
