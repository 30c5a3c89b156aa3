//! Clicked-vs-not ranking: a query trunk and image features fused by an MLP
//! into a relevance score, trained with a pairwise RankNet loss. Colour
//! enters either as raw histograms or as a single distance feature, and a
//! joint trainer adds a colour head on the query trunk.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clicklog::{preprocess_query, query_key, ImageMeta, ImpressionRecord};
use crate::distance::{distance_gradient, distance_gradient_wrt_first, distance_value, DistanceKind};
use crate::encoder::QueryTrunk;
use crate::error::{check_len, Error, Result};
use crate::histogram::{ColourHistogram, PixelImage};
use crate::nn::{
    embed_tokens, sgd_step, softmax, softmax_backward, BiLstmTrace, Checkpoint, DenseCache, DenseStack,
    EmbeddingProvider, EmbeddingSpec, Embeddings, Matrix, Parameters, TrainConfig,
};
use crate::palette::{Palette, DEFAULT_BINS};

pub const RANKER_KIND: &str = "ranker";
pub const JOINT_KIND: &str = "joint";
/// Probability that a skipped image is kept as a training negative.
pub const KEEP_SKIPPED: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FeatureVariant {
    Baseline,
    /// Query colour and image histogram appended as `2B` raw inputs.
    PlusColourRepr,
    /// A single `D(query colour, image histogram)` input.
    PlusColourDistance(DistanceKind),
}

impl FeatureVariant {
    pub fn extra_width(self, bins: usize) -> usize {
        match self {
            FeatureVariant::Baseline => 0,
            FeatureVariant::PlusColourRepr => 2 * bins,
            FeatureVariant::PlusColourDistance(_) => 1,
        }
    }

    pub fn uses_colour(self) -> bool {
        self != FeatureVariant::Baseline
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureVariant::Baseline => f.write_str("baseline"),
            FeatureVariant::PlusColourRepr => f.write_str("repr"),
            FeatureVariant::PlusColourDistance(k) => write!(f, "dist:{k}"),
        }
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FeatureVariant::Baseline),
            "repr" => Ok(FeatureVariant::PlusColourRepr),
            _ => match s.strip_prefix("dist:") {
                Some(kind) => Ok(FeatureVariant::PlusColourDistance(kind.parse()?)),
                None => Err(Error::InvalidConfig(format!(
                    "unknown variant `{s}` (expected baseline, repr or dist:<kl|hi|luv>)"
                ))),
            },
        }
    }
}

impl From<FeatureVariant> for String {
    fn from(v: FeatureVariant) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for FeatureVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Per-image inputs to the ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub content: Vec<f64>,
    pub caption_embed: Vec<f64>,
    pub tag_embed: Vec<f64>,
    pub histogram: ColourHistogram,
}

impl ImageFeatures {
    pub fn width(&self) -> usize {
        self.content.len() + self.caption_embed.len() + self.tag_embed.len()
    }
}

/// Source of image content vectors.
#[derive(Debug, Clone)]
pub enum ContentProvider {
    /// Colour histogram followed by a fixed random projection of the image
    /// downsampled to `grid x grid` RGB cells.
    HistogramProjection { grid: usize, projection: Matrix },
    /// Vectors supplied by an external embedder, keyed by image id.
    Precomputed { dim: usize, table: HashMap<String, Vec<f64>> },
}

/// Serialisable description of a [`ContentProvider`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentSpec {
    Projection { dims: usize, grid: usize, seed: u64 },
    /// Text file of `image_id v_1 ... v_n` lines.
    Precomputed { path: PathBuf },
}

impl Default for ContentSpec {
    fn default() -> Self {
        ContentSpec::Projection {
            dims: 64,
            grid: 4,
            seed: 0,
        }
    }
}

impl ContentProvider {
    pub fn from_spec(spec: &ContentSpec) -> Result<Self> {
        match spec {
            ContentSpec::Projection { dims, grid, seed } => {
                if *dims == 0 || *grid == 0 {
                    return Err(Error::InvalidConfig("content projection needs dims and grid ≥ 1".into()));
                }
                Ok(Self::histogram_projection(*dims, *grid, *seed))
            }
            ContentSpec::Precomputed { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let (dim, table) = parse_vectors(&text, &path.display().to_string())?;
                Ok(ContentProvider::Precomputed { dim, table })
            }
        }
    }

    pub fn histogram_projection(dims: usize, grid: usize, seed: u64) -> Self {
        let inputs = grid * grid * 3;
        let bound = (3.0 / inputs as f64).sqrt();
        let projection = Matrix::uniform(dims, inputs, bound, &mut ChaCha8Rng::seed_from_u64(seed));
        ContentProvider::HistogramProjection { grid, projection }
    }

    pub fn dim(&self, bins: usize) -> usize {
        match self {
            ContentProvider::HistogramProjection { projection, .. } => bins + projection.rows(),
            ContentProvider::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn content(&self, id: &str, image: Option<&PixelImage>, hist: &ColourHistogram) -> Result<Vec<f64>> {
        match self {
            ContentProvider::HistogramProjection { grid, projection } => {
                let img = image.ok_or_else(|| Error::InvalidImage(format!("no pixels for image `{id}`")))?;
                let cells = downsample(img, *grid);
                let mut out = hist.weights().to_vec();
                let mut proj = vec![0.0; projection.rows()];
                projection.matvec(&cells, &mut proj);
                out.extend(proj);
                Ok(out)
            }
            ContentProvider::Precomputed { dim, table } => {
                let v = table
                    .get(id)
                    .ok_or_else(|| Error::InvalidImage(format!("no content vector for image `{id}`")))?;
                check_len(*dim, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

/// Parses `id v_1 ... v_n` lines; every vector must have the same length.
pub fn parse_vectors(text: &str, origin: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut table = HashMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let v = parts
            .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::format(origin, n + 1, "expected finite numbers after the id"))?;
        if *dim.get_or_insert(v.len()) != v.len() || v.is_empty() {
            return Err(Error::format(origin, n + 1, format!("vector has {} values, expected {}", v.len(), dim.unwrap_or(0))));
        }
        if table.insert(id.to_string(), v).is_some() {
            return Err(Error::format(origin, n + 1, format!("duplicate id `{id}`")));
        }
    }
    let dim = dim.ok_or_else(|| Error::format(origin, 1, "no vectors"))?;
    Ok((dim, table))
}

/// Mean RGB (scaled to `[0, 1]`) over a `grid x grid` partition of the image.
pub fn downsample(img: &PixelImage, grid: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let span = |i: usize, n: usize| {
        let a = (i * n / grid).min(n - 1);
        let b = ((i + 1) * n / grid).max(a + 1).min(n);
        a..b
    };
    let mut out = Vec::with_capacity(grid * grid * 3);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut sum = [0.0; 3];
            let mut count = 0.0;
            for y in span(gy, h) {
                for x in span(gx, w) {
                    let c = img.pixel(x, y).channels();
                    for k in 0..3 {
                        sum[k] += c[k];
                    }
                    count += 1.0;
                }
            }
            out.extend(sum.map(|s| s / (255.0 * count)));
        }
    }
    out
}

/// Mean of the word vectors of `texts`; zero when there are no tokens.
pub fn mean_embedding<S: AsRef<str>>(texts: &[S], provider: &dyn EmbeddingProvider) -> Vec<f64> {
    let tokens: Vec<String> = texts.iter().flat_map(|t| preprocess_query(t.as_ref())).collect();
    let mut mean = vec![0.0; provider.dim()];
    if tokens.is_empty() {
        return mean;
    }
    for v in embed_tokens(&tokens, provider) {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = tokens.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

pub type FeatureStore = HashMap<String, ImageFeatures>;

/// Builds features for every catalog entry that has a histogram.
pub fn build_features(
    catalog: &[ImageMeta],
    images: &HashMap<String, PixelImage>,
    hists: &HashMap<String, ColourHistogram>,
    content: &ContentProvider,
    provider: &dyn EmbeddingProvider,
) -> Result<FeatureStore> {
    let mut store = FeatureStore::new();
    for meta in catalog {
        let Some(hist) = hists.get(&meta.image_id) else { continue };
        let features = ImageFeatures {
            content: content.content(&meta.image_id, images.get(&meta.image_id), hist)?,
            caption_embed: mean_embedding(&[&meta.caption], provider),
            tag_embed: mean_embedding(&meta.tags, provider),
            histogram: hist.clone(),
        };
        store.insert(meta.image_id.clone(), features);
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub embedding: EmbeddingSpec,
    pub hidden: usize,
    /// Hidden widths of the fusion stack; a single linear score unit follows.
    pub fusion: Vec<usize>,
    pub bins: usize,
    pub content: ContentSpec,
    /// Width of [`ImageFeatures::width`].
    pub image_width: usize,
    pub variant: FeatureVariant,
    pub seed: u64,
}

impl RankerConfig {
    /// Full-scale defaults. `image_width` is the content dimension plus
    /// twice the word-embedding dimension.
    pub fn new(embedding: EmbeddingSpec, content: ContentSpec, image_width: usize, variant: FeatureVariant) -> Self {
        RankerConfig {
            embedding,
            hidden: 300,
            fusion: vec![512, 128],
            bins: DEFAULT_BINS,
            content,
            image_width,
            variant,
            seed: 0,
        }
    }

    fn fusion_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![2 * self.hidden + self.image_width + self.variant.extra_width(self.bins)];
        sizes.extend(&self.fusion);
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalRanker {
    config: RankerConfig,
    pub trunk: QueryTrunk,
    pub fusion: DenseStack,
}

/// Forward state for one query scored against a list of images.
pub struct QueryScores {
    trunk: BiLstmTrace,
    colour: Option<Vec<f64>>,
    images: Vec<(DenseCache, Option<Vec<f64>>)>,
    pub scores: Vec<f64>,
}

/// Gradients flowing out of a scoring pass into its query-side inputs.
pub struct QueryInputGrads {
    pub trunk_output: Vec<f64>,
    pub colour: Option<Vec<f64>>,
}

impl CrossModalRanker {
    pub fn new(config: RankerConfig) -> Result<Self> {
        let embeddings = Arc::new(Embeddings::from_spec(&config.embedding)?);
        Self::with_embeddings(config, embeddings)
    }

    pub fn with_embeddings(config: RankerConfig, embeddings: Arc<Embeddings>) -> Result<Self> {
        if config.hidden == 0 || config.bins < 2 {
            return Err(Error::InvalidConfig("ranker needs hidden ≥ 1 and bins ≥ 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trunk = QueryTrunk::new(embeddings, config.hidden, &mut rng);
        let fusion = DenseStack::new(&config.fusion_sizes(), &mut rng)?;
        Ok(CrossModalRanker { config, trunk, fusion })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn variant(&self) -> FeatureVariant {
        self.config.variant
    }

    /// Scores `images` for a query whose embedded tokens are `seq`.
    pub fn score_query(
        &self,
        seq: &[Vec<f64>],
        colour: Option<&[f64]>,
        images: &[&ImageFeatures],
        palette: &Palette,
    ) -> Result<QueryScores> {
        let trunk = self.trunk.encode(seq)?;
        self.score_with_trunk(trunk, colour, images, palette)
    }

    fn score_with_trunk(
        &self,
        trunk: BiLstmTrace,
        colour: Option<&[f64]>,
        images: &[&ImageFeatures],
        palette: &Palette,
    ) -> Result<QueryScores> {
        let mut caches = Vec::with_capacity(images.len());
        let mut scores = Vec::with_capacity(images.len());
        for img in images {
            let (x, dist) = self.fusion_input(trunk.output(), colour, img, palette)?;
            let cache = self.fusion.forward(&x)?;
            scores.push(cache.output()[0]);
            caches.push((cache, dist));
        }
        Ok(QueryScores {
            trunk,
            colour: colour.map(<[f64]>::to_vec),
            images: caches,
            scores,
        })
    }

    /// Fusion input for one image, plus the gradient of the distance feature
    /// with respect to the query colour when that variant is active.
    fn fusion_input(
        &self,
        qfeat: &[f64],
        colour: Option<&[f64]>,
        img: &ImageFeatures,
        palette: &Palette,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let cfg = &self.config;
        check_len(cfg.image_width, img.width())?;
        let mut x = Vec::with_capacity(self.fusion.input_dim());
        x.extend_from_slice(qfeat);
        x.extend_from_slice(&img.content);
        x.extend_from_slice(&img.caption_embed);
        x.extend_from_slice(&img.tag_embed);
        if !cfg.variant.uses_colour() {
            return Ok((x, None));
        }
        let colour = colour.ok_or_else(|| Error::MissingLabel("query colour required by variant".into()))?;
        check_len(cfg.bins, colour.len())?;
        check_len(cfg.bins, img.histogram.len())?;
        let hist = img.histogram.weights();
        match cfg.variant {
            FeatureVariant::PlusColourDistance(kind) => {
                x.push(distance_value(kind, colour, hist, palette)?);
                Ok((x, Some(distance_gradient_wrt_first(kind, colour, hist, palette)?)))
            }
            _ => {
                x.extend_from_slice(colour);
                x.extend_from_slice(hist);
                Ok((x, None))
            }
        }
    }

    /// Accumulates fusion gradients for `dscores` into `grads` and returns the
    /// gradients on the query-side inputs. The trunk itself is not updated.
    pub fn backward_fusion(&self, pass: &QueryScores, dscores: &[f64], grads: &mut Self) -> QueryInputGrads {
        let q = self.trunk.output_dim();
        let bins = self.config.bins;
        let base = self.fusion.input_dim() - self.config.variant.extra_width(bins);
        let mut dq = vec![0.0; q];
        let mut dcolour = pass.colour.as_ref().map(|c| vec![0.0; c.len()]);
        for ((cache, dist), &ds) in pass.images.iter().zip(dscores) {
            if ds == 0.0 {
                continue;
            }
            let dx = self.fusion.backward(cache, &[ds], &mut grads.fusion);
            for (a, b) in dq.iter_mut().zip(&dx[..q]) {
                *a += b;
            }
            if let Some(dc) = dcolour.as_mut() {
                match self.config.variant {
                    FeatureVariant::PlusColourRepr => {
                        for (a, b) in dc.iter_mut().zip(&dx[base..base + bins]) {
                            *a += b;
                        }
                    }
                    FeatureVariant::PlusColourDistance(_) => {
                        let g = dist.as_ref().expect("distance gradient cached");
                        let df = dx[base];
                        for (a, b) in dc.iter_mut().zip(g) {
                            *a += df * b;
                        }
                    }
                    FeatureVariant::Baseline => {}
                }
            }
        }
        QueryInputGrads {
            trunk_output: dq,
            colour: dcolour,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let config = serde_json::to_value(&self.config).expect("config serialises");
        Checkpoint::capture(RANKER_KIND, config, self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: RankerConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::format("checkpoint", 3, format!("bad ranker config: {e}")))?;
        let mut model = Self::new(config)?;
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load_kind(path, RANKER_KIND)?)
    }
}

impl Parameters for CrossModalRanker {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.trunk.params();
        p.extend(self.fusion.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.trunk.params_mut();
        p.extend(self.fusion.params_mut());
        p
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(1/m²) Σ −ln σ(s_j − s_k)` over clicked `j` and unclicked `k`, with its
/// gradient with respect to each score.
pub fn ranknet_loss_and_grad(scores: &[f64], clicked: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len(scores.len(), clicked.len())?;
    let m = scores.len();
    if !clicked.iter().any(|&c| c) || clicked.iter().all(|&c| c) {
        return Err(Error::DegenerateQuery);
    }
    let norm = 1.0 / (m * m) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for j in (0..m).filter(|&j| clicked[j]) {
        for k in (0..m).filter(|&k| !clicked[k]) {
            let diff = scores[j] - scores[k];
            loss += softplus(-diff);
            let g = -sigmoid(-diff) * norm;
            grad[j] += g;
            grad[k] -= g;
        }
    }
    Ok((loss * norm, grad))
}

pub fn ranknet_loss(scores: &[f64], clicked: &[bool]) -> Result<f64> {
    ranknet_loss_and_grad(scores, clicked).map(|(l, _)| l)
}

/// One query of ranking data: embedded tokens, displayed images with click
/// flags and, for colour variants, the query colour.
#[derive(Debug, Clone)]
pub struct RankingQuery {
    pub query: String,
    pub seq: Vec<Vec<f64>>,
    pub images: Vec<(String, bool)>,
    pub colour: Option<ColourHistogram>,
    /// Target for the joint trainer's colour loss.
    pub label: Option<ColourHistogram>,
}

/// Turns impression records into ranking queries. `colours` supplies the
/// query colour feature and `labels` the joint colour target, both keyed by
/// preprocessed query.
pub fn build_ranking_queries(
    records: &[ImpressionRecord],
    colours: Option<&HashMap<String, ColourHistogram>>,
    labels: Option<&HashMap<String, ColourHistogram>>,
    provider: &dyn EmbeddingProvider,
) -> Vec<RankingQuery> {
    records
        .iter()
        .map(|r| {
            let key = query_key(&r.query);
            RankingQuery {
                seq: embed_tokens(&preprocess_query(&key), provider),
                images: r.results.iter().map(|x| (x.image_id.clone(), x.clicked)).collect(),
                colour: colours.and_then(|c| c.get(&key).cloned()),
                label: labels.and_then(|c| c.get(&key).cloned()),
                query: key,
            }
        })
        .collect()
}

/// Keeps clicked images; each skipped image survives with probability
/// [`KEEP_SKIPPED`] and is otherwise replaced by a uniformly drawn catalog image.
pub fn sample_training_negatives(images: &[(String, bool)], catalog: &[String], rng: &mut impl Rng) -> Vec<(String, bool)> {
    images
        .iter()
        .map(|(id, clicked)| {
            if *clicked || catalog.is_empty() || rng.gen_bool(KEEP_SKIPPED) {
                (id.clone(), *clicked)
            } else {
                (catalog[rng.gen_range(0..catalog.len())].clone(), false)
            }
        })
        .collect()
}

/// Seeded form of [`sample_training_negatives`] for a single record.
pub fn sample_training_negatives_seeded(record: &ImpressionRecord, catalog: &[String], seed: u64) -> Vec<(String, bool)> {
    let images: Vec<(String, bool)> = record.results.iter().map(|r| (r.image_id.clone(), r.clicked)).collect();
    sample_training_negatives(&images, catalog, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn lookup<'a>(features: &'a FeatureStore, ids: &[(String, bool)]) -> Result<Vec<&'a ImageFeatures>> {
    ids.iter()
        .map(|(id, _)| {
            features
                .get(id)
                .ok_or_else(|| Error::MissingHistogram(id.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub auc: f64,
    pub map: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    pub auc: f64,
    pub ap: f64,
    pub rr: f64,
}

/// AUC, average precision and reciprocal rank for one query, or `None` when
/// every image is clicked or none is. Ties in AUC count one half; rank order
/// is by descending score, then position.
pub fn query_metrics(scores: &[f64], clicked: &[bool]) -> Option<(f64, f64, f64)> {
    let pos: Vec<f64> = scores.iter().zip(clicked).filter(|(_, &c)| c).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(clicked).filter(|(_, &c)| !c).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut concordant = 0.0;
    for p in &pos {
        for n in &neg {
            concordant += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    let auc = concordant / (pos.len() * neg.len()) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut ap, mut rr) = (0.0, 0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if clicked[i] {
            hits += 1.0;
            ap += hits / (rank + 1) as f64;
            if rr == 0.0 {
                rr = 1.0 / (rank + 1) as f64;
            }
        }
    }
    Some((auc, ap / pos.len() as f64, rr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub metrics: RankingMetrics,
    pub per_query: Vec<QueryMetrics>,
    /// Queries skipped because all or none of their images were clicked.
    pub excluded: usize,
}

impl RankingReport {
    pub fn from_scores(queries: &[(String, Vec<f64>, Vec<bool>)]) -> Self {
        let mut per_query = Vec::new();
        let mut excluded = 0;
        for (q, s, c) in queries {
            match query_metrics(s, c) {
                Some((auc, ap, rr)) => per_query.push(QueryMetrics {
                    query: q.clone(),
                    auc,
                    ap,
                    rr,
                }),
                None => excluded += 1,
            }
        }
        let n = per_query.len().max(1) as f64;
        let metrics = RankingMetrics {
            auc: per_query.iter().map(|m| m.auc).sum::<f64>() / n,
            map: per_query.iter().map(|m| m.ap).sum::<f64>() / n,
            mrr: per_query.iter().map(|m| m.rr).sum::<f64>() / n,
        };
        RankingReport {
            metrics,
            per_query,
            excluded,
        }
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self, label: &str) -> String {
        let m = &self.metrics;
        format!(
            "{label}.auc={:?}\n{label}.map={:?}\n{label}.mrr={:?}\n{label}.queries={}\n{label}.excluded={}\n",
            m.auc,
            m.map,
            m.mrr,
            self.per_query.len(),
            self.excluded
        )
    }

    /// Per-query metric vectors for external paired significance tests.
    pub fn per_query_tsv(&self) -> String {
        let mut out = String::from("query\tauc\tap\trr\n");
        for q in &self.per_query {
            let _ = writeln!(out, "{}\t{:?}\t{:?}\t{:?}", q.query, q.auc, q.ap, q.rr);
        }
        out
    }
}

/// Text table with one row per model.
pub fn metrics_table(rows: &[(String, RankingMetrics)]) -> String {
    let mut out = String::from("model\tAUC\tMAP\tMRR\n");
    for (name, m) in rows {
        let _ = writeln!(out, "{name}\t{:.4}\t{:.4}\t{:.4}", m.auc, m.map, m.mrr);
    }
    out
}

/// Anything that can score the images of a ranking query.
pub trait QueryScorer: Sync {
    fn scores(&self, q: &RankingQuery, images: &[&ImageFeatures], palette: &Palette) -> Result<Vec<f64>>;
}

impl QueryScorer for CrossModalRanker {
    fn scores(&self, q: &RankingQuery, images: &[&ImageFeatures], palette: &Palette) -> Result<Vec<f64>> {
        let colour = q.colour.as_ref().map(|c| c.weights());
        Ok(self.score_query(&q.seq, colour, images, palette)?.scores)
    }
}

/// Scores every query in parallel and averages per-query metrics.
pub fn evaluate_ranking(
    scorer: &dyn QueryScorer,
    test: &[RankingQuery],
    features: &FeatureStore,
    palette: &Palette,
) -> Result<RankingReport> {
    let scored = test
        .par_iter()
        .map(|q| {
            let imgs = lookup(features, &q.images)?;
            let s = scorer.scores(q, &imgs, palette)?;
            Ok((q.query.clone(), s, q.images.iter().map(|(_, c)| *c).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingReport::from_scores(&scored))
}

#[derive(Debug, Clone)]
pub struct TrainedRanker<M> {
    pub model: M,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation MAP after each epoch.
    pub validation_map: Vec<f64>,
    pub best_epoch: usize,
    /// Query presentations skipped because sampling left no clicked or no
    /// unclicked image.
    pub skipped: usize,
}

/// A model trained one query at a time with SGD.
trait QueryStep: Clone + Parameters + QueryScorer {
    fn step_loss(&self, q: &RankingQuery, ids: &[(String, bool)], features: &FeatureStore, palette: &Palette, grads: &mut Self) -> Result<f64>;
}

fn train_per_query<M: QueryStep>(
    mut model: M,
    train: &[RankingQuery],
    validation: &[RankingQuery],
    features: &FeatureStore,
    palette: &Palette,
    cfg: &TrainConfig,
) -> Result<TrainedRanker<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training queries"));
    }
    let mut catalog: Vec<String> = features.keys().cloned().collect();
    catalog.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = model.zeroed();
    let mut train_loss = Vec::new();
    let mut validation_map = Vec::new();
    let mut skipped = 0;
    let mut best: Option<(f64, usize, M)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut used) = (0.0, 0usize);
        for &i in &order {
            let q = &train[i];
            let ids = sample_training_negatives(&q.images, &catalog, &mut rng);
            if !ids.iter().any(|(_, c)| *c) || ids.iter().all(|(_, c)| *c) {
                skipped += 1;
                continue;
            }
            grads.fill_zero();
            total += model.step_loss(q, &ids, features, palette, &mut grads)?;
            used += 1;
            sgd_step(&mut model, &grads, cfg.learning_rate)?;
        }
        if !model.all_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at epoch {}; lower the learning rate",
                epoch + 1
            )));
        }
        let mean = total / used.max(1) as f64;
        train_loss.push(mean);
        let select = if validation.is_empty() {
            -mean
        } else {
            let map = evaluate_ranking(&model, validation, features, palette)?.metrics.map;
            validation_map.push(map);
            map
        };
        if best.as_ref().is_none_or(|(b, _, _)| select > *b) {
            best = Some((select, epoch, model.clone()));
        }
        log::debug!("epoch {}: loss {mean:.6} select {select:.6}", epoch + 1);
    }
    let (_, best_epoch, model) = best.ok_or_else(|| Error::InvalidConfig("epochs must be at least 1".into()))?;
    Ok(TrainedRanker {
        model,
        train_loss,
        validation_map,
        best_epoch,
        skipped,
    })
}

impl QueryStep for CrossModalRanker {
    fn step_loss(&self, q: &RankingQuery, ids: &[(String, bool)], features: &FeatureStore, palette: &Palette, grads: &mut Self) -> Result<f64> {
        let imgs = lookup(features, ids)?;
        let clicked: Vec<bool> = ids.iter().map(|(_, c)| *c).collect();
        let colour = q.colour.as_ref().map(|c| c.weights());
        if self.variant().uses_colour() && colour.is_none() {
            return Err(Error::MissingLabel(q.query.clone()));
        }
        let pass = self.score_query(&q.seq, colour, &imgs, palette)?;
        let (loss, ds) = ranknet_loss_and_grad(&pass.scores, &clicked)?;
        let dq = self.backward_fusion(&pass, &ds, grads);
        self.trunk.lstm.backward(&pass.trunk, &dq.trunk_output, &mut grads.trunk.lstm);
        Ok(loss)
    }
}

/// Per-query SGD on the RankNet loss with resampled negatives each epoch;
/// keeps the epoch with the best validation MAP.
pub fn train_ranker(
    train: &[RankingQuery],
    validation: &[RankingQuery],
    features: &FeatureStore,
    palette: &Palette,
    config: &RankerConfig,
    cfg: &TrainConfig,
) -> Result<TrainedRanker<CrossModalRanker>> {
    let model = CrossModalRanker::new(config.clone())?;
    train_per_query(model, train, validation, features, palette, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub alpha: f64,
    pub colour_kind: DistanceKind,
    pub train: TrainConfig,
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        self.train.validate()
    }

    pub fn colour_weight(&self) -> f64 {
        1.0 / (1.0 + self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JointModelConfig {
    ranker: RankerConfig,
    head: Vec<usize>,
    alpha: f64,
    colour_kind: DistanceKind,
}

/// Ranker plus a colour head reading the shared query trunk. The head's
/// prediction feeds the ranker's colour input.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub ranker: CrossModalRanker,
    pub head: DenseStack,
    alpha: f64,
    colour_kind: DistanceKind,
}

pub struct JointPass {
    scores: QueryScores,
    head: DenseCache,
    probs: Vec<f64>,
}

impl JointModel {
    pub fn new(ranker_config: RankerConfig, head: &[usize], jc: &JointConfig) -> Result<Self> {
        jc.validate()?;
        let ranker = CrossModalRanker::new(ranker_config)?;
        let mut sizes = vec![ranker.trunk.output_dim()];
        sizes.extend(head);
        sizes.push(ranker.config.bins);
        let mut rng = ChaCha8Rng::seed_from_u64(ranker.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let head = DenseStack::new(&sizes, &mut rng)?;
        Ok(JointModel {
            ranker,
            head,
            alpha: jc.alpha,
            colour_kind: jc.colour_kind,
        })
    }

    pub fn colour_weight(&self) -> f64 {
        1.0 / (1.0 + self.alpha)
    }

    pub fn forward(&self, seq: &[Vec<f64>], images: &[&ImageFeatures], palette: &Palette) -> Result<JointPass> {
        let trunk = self.ranker.trunk.encode(seq)?;
        let head = self.head.forward(trunk.output())?;
        let probs = softmax(head.output());
        let scores = self.ranker.score_with_trunk(trunk, Some(&probs), images, palette)?;
        Ok(JointPass { scores, head, probs })
    }

    pub fn predict_colour(&self, raw: &str) -> Result<ColourHistogram> {
        let trunk = self.ranker.trunk.encode(&self.ranker.trunk.embed_query(raw))?;
        let head = self.head.forward(trunk.output())?;
        ColourHistogram::new(softmax(head.output()))
    }

    /// Combined loss `ranknet + D(label, head) / (1 + alpha)` and its gradient.
    pub fn loss_and_grad(
        &self,
        seq: &[Vec<f64>],
        images: &[&ImageFeatures],
        clicked: &[bool],
        label: &[f64],
        palette: &Palette,
        grads: &mut Self,
    ) -> Result<f64> {
        let pass = self.forward(seq, images, palette)?;
        let (rank_loss, ds) = ranknet_loss_and_grad(&pass.scores.scores, clicked)?;
        let w = self.colour_weight();
        let colour_loss = distance_value(self.colour_kind, label, &pass.probs, palette)?;
        let dq = self.ranker.backward_fusion(&pass.scores, &ds, &mut grads.ranker);
        let mut dprobs = distance_gradient(self.colour_kind, label, &pass.probs, palette)?;
        dprobs.iter_mut().for_each(|g| *g *= w);
        if let Some(dc) = &dq.colour {
            for (a, b) in dprobs.iter_mut().zip(dc) {
                *a += b;
            }
        }
        let dz = softmax_backward(&pass.probs, &dprobs);
        let mut dtrunk = self.head.backward(&pass.head, &dz, &mut grads.head);
        for (a, b) in dtrunk.iter_mut().zip(&dq.trunk_output) {
            *a += b;
        }
        self.ranker.trunk.lstm.backward(&pass.scores.trunk, &dtrunk, &mut grads.ranker.trunk.lstm);
        Ok(rank_loss + w * colour_loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let cfg = JointModelConfig {
            ranker: self.ranker.config.clone(),
            head: self.head.layers[..self.head.layers.len() - 1].iter().map(|l| l.output_dim()).collect(),
            alpha: self.alpha,
            colour_kind: self.colour_kind,
        };
        Checkpoint::capture(JOINT_KIND, serde_json::to_value(cfg).expect("config serialises"), self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: JointModelConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::format("checkpoint", 3, format!("bad joint config: {e}")))?;
        let jc = JointConfig {
            alpha: cfg.alpha,
            colour_kind: cfg.colour_kind,
            train: TrainConfig::default(),
        };
        let mut model = Self::new(cfg.ranker, &cfg.head, &jc)?;
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load_kind(path, JOINT_KIND)?)
    }
}

impl Parameters for JointModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.ranker.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.ranker.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

impl QueryScorer for JointModel {
    fn scores(&self, q: &RankingQuery, images: &[&ImageFeatures], palette: &Palette) -> Result<Vec<f64>> {
        Ok(self.forward(&q.seq, images, palette)?.scores.scores)
    }
}

impl crate::encoder::ColourPredictor for JointModel {
    fn predict(&self, query: &str) -> Result<ColourHistogram> {
        self.predict_colour(query)
    }
}

impl QueryStep for JointModel {
    fn step_loss(&self, q: &RankingQuery, ids: &[(String, bool)], features: &FeatureStore, palette: &Palette, grads: &mut Self) -> Result<f64> {
        let imgs = lookup(features, ids)?;
        let clicked: Vec<bool> = ids.iter().map(|(_, c)| *c).collect();
        let label = q.label.as_ref().ok_or_else(|| Error::MissingLabel(q.query.clone()))?;
        self.loss_and_grad(&q.seq, &imgs, &clicked, label.weights(), palette, grads)
    }
}

/// Trains ranker and colour head together; the ranker sees the head's
/// predicted colour. Every training query needs a colour label.
pub fn train_joint(
    train: &[RankingQuery],
    validation: &[RankingQuery],
    features: &FeatureStore,
    palette: &Palette,
    ranker_config: &RankerConfig,
    head: &[usize],
    jc: &JointConfig,
) -> Result<TrainedRanker<JointModel>> {
    if let Some(q) = train.iter().find(|q| q.label.is_none()) {
        return Err(Error::MissingLabel(q.query.clone()));
    }
    let model = JointModel::new(ranker_config.clone(), head, jc)?;
    train_per_query(model, train, validation, features, palette, &jc.train)
}
