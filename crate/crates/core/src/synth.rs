//! Deterministic synthetic search corpus in which clicks are driven by how
//! close an image's dominant colour is to the colour named in the query.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clicklog::{ImageMeta, ImpressionRecord, ImpressionResult};
use crate::colour::RgbColour;
use crate::error::{Error, Result};
use crate::histogram::PixelImage;

pub const COLOUR_WORDS: [(&str, RgbColour); 16] = [
    ("red", RgbColour::new(220, 30, 30)),
    ("green", RgbColour::new(40, 170, 60)),
    ("blue", RgbColour::new(30, 70, 210)),
    ("yellow", RgbColour::new(240, 220, 40)),
    ("orange", RgbColour::new(245, 140, 20)),
    ("purple", RgbColour::new(130, 50, 170)),
    ("pink", RgbColour::new(245, 150, 190)),
    ("brown", RgbColour::new(130, 80, 40)),
    ("black", RgbColour::new(20, 20, 20)),
    ("white", RgbColour::new(240, 240, 240)),
    ("grey", RgbColour::new(128, 128, 128)),
    ("teal", RgbColour::new(0, 128, 128)),
    ("navy", RgbColour::new(20, 30, 110)),
    ("maroon", RgbColour::new(120, 10, 30)),
    ("beige", RgbColour::new(225, 210, 170)),
    ("lime", RgbColour::new(160, 230, 50)),
];

pub const OBJECT_WORDS: [&str; 40] = [
    "car", "ball", "flower", "dress", "house", "cup", "bird", "chair", "door", "shirt", "umbrella", "bicycle",
    "balloon", "hat", "shoe", "bag", "lamp", "sofa", "wall", "boat", "kite", "book", "candle", "bottle", "pen",
    "scarf", "bowl", "truck", "jacket", "vase", "towel", "pillow", "fence", "bench", "mug", "tie", "glove",
    "curtain", "rug", "clock",
];

const FILLER_WORDS: [&str; 8] = ["photo", "closeup", "studio", "outdoor", "vintage", "modern", "detail", "isolated"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub colour_words: usize,
    pub object_words: usize,
    /// Queries generated per colour word: the bare colour first, then
    /// colour-object pairs.
    pub queries_per_concept: usize,
    /// Images displayed per impression.
    pub images_per_query: usize,
    /// Clicks drawn per impression.
    pub clicks_per_query: usize,
    /// Click sharpness: an image is clicked with weight `exp(-beta * d)` where
    /// `d` is the LUV distance between its dominant colour and the query colour.
    pub beta: f64,
    /// Share of displayed images whose dominant colour is the query colour.
    pub on_colour_fraction: f64,
    /// Per-channel jitter applied to an image's dominant colour.
    pub colour_jitter: u8,
    /// Per-pixel noise around the dominant colour.
    pub pixel_noise: u8,
    /// Upper bound on the share of pixels drawn from an unrelated colour.
    pub max_secondary_fraction: f64,
    /// Each query's colour is lightened or darkened by a factor drawn
    /// uniformly from `[-shade_spread, shade_spread]`, so text alone does not
    /// pin down the exact shade users want.
    pub shade_spread: f64,
    pub image_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            colour_words: 11,
            object_words: 30,
            queries_per_concept: 30,
            images_per_query: 12,
            clicks_per_query: 5,
            beta: 0.1,
            on_colour_fraction: 0.4,
            colour_jitter: 25,
            pixel_noise: 6,
            max_secondary_fraction: 0.1,
            shade_spread: 0.0,
            image_size: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.colour_words == 0 || self.colour_words > COLOUR_WORDS.len() {
            return bad("colour_words must be between 1 and 16");
        }
        if self.object_words == 0 || self.object_words > OBJECT_WORDS.len() {
            return bad("object_words must be between 1 and 40");
        }
        if self.queries_per_concept == 0 || self.images_per_query == 0 || self.clicks_per_query == 0 || self.image_size == 0 {
            return bad("counts must be at least 1");
        }
        if self.queries_per_concept > 1 + self.object_words * (1 + FILLER_WORDS.len()) {
            return bad("queries_per_concept exceeds the distinct queries available per colour word");
        }
        if self.clicks_per_query > self.images_per_query {
            return bad("cannot click more images than are displayed");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.on_colour_fraction)
            || !(0.0..=1.0).contains(&self.max_secondary_fraction)
            || !(0.0..=1.0).contains(&self.shade_spread)
        {
            return bad("fractions must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One generated catalog image.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub meta: ImageMeta,
    pub pixels: PixelImage,
    pub dominant: RgbColour,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthQuery {
    pub query: String,
    pub colour_word: String,
    pub colour: RgbColour,
}

/// Two independent impression logs over the same queries: `history` feeds
/// colour labels, `ranking` feeds ranker training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub queries: Vec<SynthQuery>,
    pub images: Vec<SynthImage>,
    pub history: Vec<ImpressionRecord>,
    pub ranking: Vec<ImpressionRecord>,
}

impl SynthCorpus {
    pub fn catalog(&self) -> Vec<ImageMeta> {
        self.images.iter().map(|i| i.meta.clone()).collect()
    }
}

fn jitter(c: RgbColour, amount: u8, rng: &mut impl Rng) -> RgbColour {
    let a = amount as i32;
    let ch = |v: u8, rng: &mut dyn rand::RngCore| (v as i32 + rng.gen_range(-a..=a)).clamp(0, 255) as u8;
    RgbColour::new(ch(c.r, rng), ch(c.g, rng), ch(c.b, rng))
}

/// Moves each channel toward white for `t > 0` or toward black for `t < 0`.
pub fn shade(c: RgbColour, t: f64) -> RgbColour {
    let t = t.clamp(-1.0, 1.0);
    RgbColour::from_channels(c.channels().map(|v| if t >= 0.0 { v + (255.0 - v) * t } else { v * (1.0 + t) }))
}

fn random_colour(rng: &mut impl Rng) -> RgbColour {
    RgbColour::new(rng.gen(), rng.gen(), rng.gen())
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    images: Vec<SynthImage>,
}

impl Generator<'_> {
    fn image(&mut self, dominant: RgbColour, object: &str) -> String {
        let cfg = self.cfg;
        let rng = &mut self.rng;
        let n = cfg.image_size * cfg.image_size;
        let secondary = (rng.gen_range(0.0..=cfg.max_secondary_fraction) * n as f64).round() as usize;
        let other = random_colour(rng);
        let mut pixels: Vec<RgbColour> = (0..n)
            .map(|i| if i < secondary { other } else { jitter(dominant, cfg.pixel_noise, rng) })
            .collect();
        pixels.shuffle(rng);
        let id = format!("img{:06}", self.images.len());
        let filler = FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())];
        let meta = ImageMeta {
            image_id: id.clone(),
            tags: vec![object.to_string(), filler.to_string()],
            caption: format!("a {filler} {object}"),
            path: Some(format!("{id}.png")),
        };
        let pixels = PixelImage::new(cfg.image_size, cfg.image_size, pixels).expect("sizes agree");
        self.images.push(SynthImage { meta, pixels, dominant });
        id
    }

    fn impression(&mut self, q: &SynthQuery, colours: &[(&str, RgbColour)], objects: &[&str]) -> ImpressionRecord {
        let cfg = self.cfg;
        let object = q.query.split(' ').skip(1).last().map(str::to_string);
        let target = q.colour.to_luv();
        let mut shown = Vec::with_capacity(cfg.images_per_query);
        for _ in 0..cfg.images_per_query {
            let base = if self.rng.gen_bool(cfg.on_colour_fraction) {
                q.colour
            } else {
                let others: Vec<RgbColour> =
                    colours.iter().filter(|(w, _)| *w != q.colour_word).map(|(_, c)| *c).collect();
                others.choose(&mut self.rng).copied().unwrap_or_else(|| random_colour(&mut self.rng))
            };
            let dominant = jitter(base, cfg.colour_jitter, &mut self.rng);
            let obj = object.clone().unwrap_or_else(|| objects[self.rng.gen_range(0..objects.len())].to_string());
            let id = self.image(dominant, &obj);
            shown.push((id, dominant.to_luv().distance_squared(&target).sqrt()));
        }
        let distances: Vec<f64> = shown.iter().map(|(_, d)| *d).collect();
        let clicked = sample_clicks(&distances, cfg.beta, cfg.clicks_per_query, &mut self.rng);
        ImpressionRecord {
            query: q.query.clone(),
            results: shown
                .into_iter()
                .enumerate()
                .map(|(i, (image_id, _))| ImpressionResult {
                    image_id,
                    position: i + 1,
                    clicked: clicked.contains(&i),
                })
                .collect(),
        }
    }
}

/// Draws `k` distinct indices; each step picks a remaining index with
/// probability proportional to `exp(-beta * distance)`. Weights are taken
/// relative to the nearest remaining index so large `beta` cannot underflow.
pub fn sample_clicks(distances: &[f64], beta: f64, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..distances.len()).collect();
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k && !remaining.is_empty() {
        let nearest = remaining.iter().map(|&i| distances[i]).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                let gap = distances[i] - nearest;
                if gap <= 0.0 { 1.0 } else { (-beta * gap).exp() }
            })
            .collect();
        let mut u = rng.gen_range(0.0..weights.iter().sum::<f64>());
        let mut pos = remaining.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                pos = j;
                break;
            }
            u -= w;
        }
        picked.push(remaining.remove(pos));
    }
    picked.sort_unstable();
    picked
}

/// Queries in generation order: for each colour word, the bare word, then
/// colour-object pairs, then colour-descriptor-object triples.
pub fn synth_queries(cfg: &SynthConfig) -> Vec<SynthQuery> {
    let colours = &COLOUR_WORDS[..cfg.colour_words];
    let objects = &OBJECT_WORDS[..cfg.object_words];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ade);
    let mut out = Vec::new();
    for &(word, base) in colours {
        let pairs = objects.iter().map(|obj| format!("{word} {obj}"));
        let triples = FILLER_WORDS
            .iter()
            .flat_map(|f| objects.iter().map(move |obj| format!("{word} {f} {obj}")));
        let texts = std::iter::once(word.to_string())
            .chain(pairs)
            .chain(triples)
            .take(cfg.queries_per_concept);
        for query in texts {
            let t = if cfg.shade_spread > 0.0 {
                rng.gen_range(-cfg.shade_spread..=cfg.shade_spread)
            } else {
                0.0
            };
            out.push(SynthQuery {
                query,
                colour_word: word.to_string(),
                colour: shade(base, t),
            });
        }
    }
    out
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let colours = &COLOUR_WORDS[..cfg.colour_words];
    let objects = &OBJECT_WORDS[..cfg.object_words];
    let queries = synth_queries(cfg);
    let mut gen = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        images: Vec::new(),
    };
    let history = queries.iter().map(|q| gen.impression(q, colours, objects)).collect();
    let ranking = queries.iter().map(|q| gen.impression(q, colours, objects)).collect();
    Ok(SynthCorpus {
        queries,
        images: gen.images,
        history,
        ranking,
    })
}
