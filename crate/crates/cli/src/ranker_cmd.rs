use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chromalog::clicklog::{filter_queries, query_key, read_catalog, read_impressions, split_dataset, DatasetSplit, ImageMeta, ImpressionRecord};
use chromalog::distance::DistanceKind;
use chromalog::histogram::{ColourHistogram, HistogramTable, PixelImage};
use chromalog::nn::{Checkpoint, Embeddings, EmbeddingSpec, EmbeddingProvider};
use chromalog::palette::Palette;
use chromalog::pipeline::{label_map, table_to_map};
use chromalog::ranker::{
    build_features, build_ranking_queries, evaluate_ranking, metrics_table, train_joint, train_ranker, ContentProvider,
    ContentSpec, CrossModalRanker, FeatureStore, FeatureVariant, JointConfig, JointModel, QueryScorer, RankerConfig,
    RankingQuery, TrainedRanker, JOINT_KIND, RANKER_KIND,
};
use chromalog::{Error, Result};
use clap::{Args, Subcommand};

use crate::encoder_cmd::{load_labels, load_predictor, EmbeddingArgs};
use crate::images::read_png;
use crate::util::{create_dir, parse_named, Widths, read_split, write_text, Ctx};
use crate::TrainArgs;

#[derive(Debug, Subcommand)]
pub enum RankerCmd {
    /// Train one feature variant with RankNet.
    Train(TrainRankerArgs),
    /// Train the ranker and a colour head together.
    Joint(JointArgs),
    /// AUC/MAP/MRR of one or more ranker or joint checkpoints on the test split.
    Eval(EvalArgs),
}

/// Inputs shared by every ranker command.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Impression log used for ranking (JSON lines).
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Histogram table of the catalog images.
    #[arg(long)]
    hists: PathBuf,
    /// Directory of catalog PNGs; needed by the projection content features.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    palette: PathBuf,
    /// Split JSON; when absent the log's queries are split with `--split-seed`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Query colour table (same format as `labels` output) for colour variants.
    #[arg(long, conflicts_with = "colour_model")]
    colours: Option<PathBuf>,
    /// Encoder checkpoint whose predictions serve as query colours.
    #[arg(long)]
    colour_model: Option<PathBuf>,
}

/// Content feature source.
#[derive(Debug, Args)]
pub struct ContentArgs {
    /// Precomputed `image_id v_1 ... v_n` vectors instead of the projection.
    #[arg(long)]
    content_vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    content_dims: usize,
    #[arg(long, default_value_t = 4)]
    content_grid: usize,
    #[arg(long, default_value_t = 0)]
    content_seed: u64,
}

impl ContentArgs {
    fn spec(&self, ctx: &Ctx) -> ContentSpec {
        match &self.content_vectors {
            Some(p) => ContentSpec::Precomputed { path: ctx.path(p) },
            None => ContentSpec::Projection {
                dims: self.content_dims,
                grid: self.content_grid,
                seed: self.content_seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "baseline")]
    variant: FeatureVariant,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    #[command(flatten)]
    content: ContentArgs,
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    /// Hidden widths of the fusion network, comma separated.
    #[arg(long, default_value = "512,128")]
    fusion: Widths,
}

#[derive(Debug, Args)]
pub struct TrainRankerArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training loss and validation MAP as TSV.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JointArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Colour labels for the training queries.
    #[arg(long)]
    labels: PathBuf,
    /// Colour loss weight is 1 / (1 + alpha).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value = "kl")]
    objective: DistanceKind,
    /// Hidden widths of the colour head, comma separated.
    #[arg(long, default_value = "1024,512")]
    head: Widths,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint as `NAME=PATH`; repeat to compare models.
    #[arg(long = "model", required = true, value_parser = parse_named)]
    models: Vec<(String, PathBuf)>,
    /// Write `name.metric=value` lines here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-query metric TSVs, one per model.
    #[arg(long)]
    per_query: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, cmd: RankerCmd) -> Result<u8> {
    match cmd {
        RankerCmd::Train(a) => train(ctx, a),
        RankerCmd::Joint(a) => joint(ctx, a),
        RankerCmd::Eval(a) => eval(ctx, a),
    }
}

/// Loaded ranking inputs, independent of any model.
struct RankingData {
    palette: Palette,
    records: Vec<ImpressionRecord>,
    catalog: Vec<ImageMeta>,
    hists: HashMap<String, ColourHistogram>,
    images: HashMap<String, PixelImage>,
    split: DatasetSplit,
    colours: Option<HashMap<String, ColourHistogram>>,
}

fn load_images(dir: &Path, catalog: &[ImageMeta]) -> Result<HashMap<String, PixelImage>> {
    let mut out = HashMap::new();
    for meta in catalog {
        let file = meta.path.clone().unwrap_or_else(|| format!("{}.png", meta.image_id));
        let path = dir.join(file);
        match read_png(&path) {
            Ok(img) => {
                out.insert(meta.image_id.clone(), img);
            }
            Err(e) => log::warn!("no pixels for {}: {e}", meta.image_id),
        }
    }
    Ok(out)
}

impl RankingData {
    fn load(ctx: &Ctx, a: &DataArgs, need_pixels: bool) -> Result<Self> {
        let palette = Palette::load(&ctx.path(&a.palette))?;
        let records = filter_queries(&read_impressions(&ctx.path(&a.log))?);
        let catalog = read_catalog(&ctx.path(&a.catalog))?;
        let table = HistogramTable::load(&ctx.path(&a.hists))?;
        if table.bins() != palette.len() {
            return Err(Error::LengthMismatch {
                expected: palette.len(),
                actual: table.bins(),
            });
        }
        let images = match (&a.images, need_pixels) {
            (Some(dir), true) => load_images(&ctx.path(dir), &catalog)?,
            (None, true) => {
                return Err(Error::InvalidConfig("projection content features need --images".into()));
            }
            _ => HashMap::new(),
        };
        let split = match &a.split {
            Some(p) => read_split(&ctx.path(p))?,
            None => {
                let keys: Vec<String> = records.iter().map(|r| query_key(&r.query)).collect();
                split_dataset(&keys, a.split_seed)?
            }
        };
        let colours = if let Some(p) = &a.colours {
            Some(label_map(&load_labels(&ctx.path(p))?))
        } else if let Some(p) = &a.colour_model {
            let model = load_predictor(&ctx.path(p))?;
            let mut m = HashMap::new();
            for r in &records {
                let key = query_key(&r.query);
                let h = model.predict(&key)?;
                m.insert(key, h);
            }
            Some(m)
        } else {
            None
        };
        Ok(RankingData {
            palette,
            records,
            catalog,
            hists: table_to_map(&table),
            images,
            split,
            colours,
        })
    }

    fn features(&self, content: &ContentSpec, provider: &dyn EmbeddingProvider) -> Result<FeatureStore> {
        let content = ContentProvider::from_spec(content)?;
        build_features(&self.catalog, &self.images, &self.hists, &content, provider)
    }

    fn queries(
        &self,
        keys: &[String],
        labels: Option<&HashMap<String, ColourHistogram>>,
        provider: &dyn EmbeddingProvider,
    ) -> Vec<RankingQuery> {
        let wanted: BTreeSet<String> = keys.iter().map(|k| query_key(k)).collect();
        let records: Vec<ImpressionRecord> =
            self.records.iter().filter(|r| wanted.contains(&query_key(&r.query))).cloned().collect();
        build_ranking_queries(&records, self.colours.as_ref(), labels, provider)
    }
}

fn needs_pixels(content: &ContentSpec) -> bool {
    matches!(content, ContentSpec::Projection { .. })
}

fn ranker_config(ctx: &Ctx, m: &ModelArgs, bins: usize, seed: u64) -> Result<(RankerConfig, Embeddings)> {
    let embedding: EmbeddingSpec = m.embedding.spec(ctx);
    let embeddings = Embeddings::from_spec(&embedding)?;
    let content = m.content.spec(ctx);
    let content_dim = ContentProvider::from_spec(&content)?.dim(bins);
    let config = RankerConfig {
        embedding,
        hidden: m.hidden,
        fusion: m.fusion.0.clone(),
        bins,
        image_width: content_dim + 2 * embeddings.dim(),
        content,
        variant: m.variant,
        seed,
    };
    Ok((config, embeddings))
}

fn curves_tsv<M>(t: &TrainedRanker<M>) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalidation_map\n");
    for (e, l) in t.train_loss.iter().enumerate() {
        let v = t.validation_map.get(e).map_or("-".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(out, "{}\t{l:?}\t{v}", e + 1);
    }
    out
}

fn report_training<M>(ctx: &Ctx, t: &TrainedRanker<M>, curves: Option<&PathBuf>) -> Result<()> {
    if let Some(c) = curves {
        write_text(&ctx.path(c), &curves_tsv(t))?;
    }
    if t.skipped > 0 {
        log::info!("{} query presentations skipped after negative sampling", t.skipped);
    }
    println!(
        "best_epoch {}\ttrain_loss {:.6}\tvalidation_map {}",
        t.best_epoch + 1,
        t.train_loss[t.best_epoch],
        t.validation_map.get(t.best_epoch).map_or("-".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

fn train(ctx: &Ctx, a: TrainRankerArgs) -> Result<u8> {
    let content = a.model.content.spec(ctx);
    let data = RankingData::load(ctx, &a.data, needs_pixels(&content))?;
    if a.model.variant.uses_colour() && data.colours.is_none() {
        return Err(Error::InvalidConfig(format!(
            "variant {} needs --colours or --colour-model",
            a.model.variant
        )));
    }
    let (config, embeddings) = ranker_config(ctx, &a.model, data.palette.len(), a.train.seed)?;
    let features = data.features(&config.content, &embeddings)?;
    let train_q = data.queries(&data.split.train, None, &embeddings);
    let val_q = data.queries(&data.split.validation, None, &embeddings);
    let trained = train_ranker(&train_q, &val_q, &features, &data.palette, &config, &a.train.config())?;
    trained.model.save(&ctx.path(&a.out))?;
    report_training(ctx, &trained, a.curves.as_ref())?;
    Ok(0)
}

fn joint(ctx: &Ctx, a: JointArgs) -> Result<u8> {
    let content = a.model.content.spec(ctx);
    let data = RankingData::load(ctx, &a.data, needs_pixels(&content))?;
    let labels = label_map(&load_labels(&ctx.path(&a.labels))?);
    let (config, embeddings) = ranker_config(ctx, &a.model, data.palette.len(), a.train.seed)?;
    let features = data.features(&config.content, &embeddings)?;
    let train_q = data.queries(&data.split.train, Some(&labels), &embeddings);
    let val_q = data.queries(&data.split.validation, Some(&labels), &embeddings);
    let jc = JointConfig {
        alpha: a.alpha,
        colour_kind: a.objective,
        train: a.train.config(),
    };
    let trained = train_joint(&train_q, &val_q, &features, &data.palette, &config, &a.head.0, &jc)?;
    trained.model.save(&ctx.path(&a.out))?;
    report_training(ctx, &trained, a.curves.as_ref())?;
    Ok(0)
}

enum LoadedScorer {
    Ranker(CrossModalRanker),
    Joint(JointModel),
}

impl LoadedScorer {
    fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        match ck.kind.as_str() {
            RANKER_KIND => Ok(LoadedScorer::Ranker(CrossModalRanker::from_checkpoint(&ck)?)),
            JOINT_KIND => Ok(LoadedScorer::Joint(JointModel::from_checkpoint(&ck)?)),
            other => Err(Error::InvalidConfig(format!(
                "{}: checkpoint kind `{other}` is not a ranker",
                path.display()
            ))),
        }
    }

    fn ranker(&self) -> &CrossModalRanker {
        match self {
            LoadedScorer::Ranker(r) => r,
            LoadedScorer::Joint(j) => &j.ranker,
        }
    }

    fn scorer(&self) -> &dyn QueryScorer {
        match self {
            LoadedScorer::Ranker(r) => r,
            LoadedScorer::Joint(j) => j,
        }
    }

    /// Whether the model reads the query colour from the input data.
    fn needs_colours(&self) -> bool {
        matches!(self, LoadedScorer::Ranker(r) if r.variant().uses_colour())
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<u8> {
    let mut models = Vec::new();
    for (name, path) in &a.models {
        models.push((name.clone(), LoadedScorer::load(&ctx.path(path))?));
    }
    let pixels = models.iter().any(|(_, m)| needs_pixels(&m.ranker().config().content));
    let data = RankingData::load(ctx, &a.data, pixels)?;
    let mut rows = Vec::new();
    let mut kv = String::new();
    if let Some(dir) = &a.per_query {
        create_dir(&ctx.path(dir))?;
    }
    for (name, model) in &models {
        if model.needs_colours() && data.colours.is_none() {
            return Err(Error::InvalidConfig(format!("model {name} needs --colours or --colour-model")));
        }
        let cfg = model.ranker().config();
        let embeddings = model.ranker().trunk.embeddings().clone();
        let features = data.features(&cfg.content, embeddings.as_ref())?;
        let test = data.queries(&data.split.test, None, embeddings.as_ref());
        let report = evaluate_ranking(model.scorer(), &test, &features, &data.palette)?;
        kv.push_str(&report.to_key_values(name));
        if let Some(dir) = &a.per_query {
            write_text(&ctx.path(dir).join(format!("{name}.tsv")), &report.per_query_tsv())?;
        }
        rows.push((name.clone(), report.metrics));
    }
    print!("{}", metrics_table(&rows));
    if let Some(out) = &a.out {
        write_text(&ctx.path(out), &kv)?;
    }
    Ok(0)
}
