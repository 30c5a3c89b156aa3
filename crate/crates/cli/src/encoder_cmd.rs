use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chromalog::clicklog::{labels_from_table, query_key, QueryColourLabel};
use chromalog::distance::DistanceKind;
use chromalog::encoder::{
    evaluate_predictors, load_xkcd, train_encoder, xkcd_evaluate, ColourEncoderModel, ColourPredictor, EncoderConfig,
    PredictionDump, ENCODER_KIND,
};
use chromalog::histogram::HistogramTable;
use chromalog::nn::{Checkpoint, EmbeddingSpec};
use chromalog::palette::Palette;
use chromalog::ranker::{JointModel, JOINT_KIND};
use chromalog::svg::top_bins_svg;
use chromalog::{Error, Result};
use clap::{Args, Subcommand};

use crate::util::{create_dir, parse_named, Widths, read_split, write_text, Ctx};
use crate::TrainArgs;

#[derive(Debug, Subcommand)]
pub enum EncoderCmd {
    /// Train on one objective and keep the best validation checkpoint.
    Train(TrainEncoderArgs),
    /// Objective x metric matrix over the test split.
    Eval(EvalArgs),
    /// Write predicted histograms for queries.
    Predict(PredictArgs),
    /// Mean XKCD score of a model.
    Xkcd(XkcdArgs),
}

/// Where word vectors come from.
#[derive(Debug, Clone, Args)]
pub struct EmbeddingArgs {
    /// Whitespace-separated `token v_1 ... v_D` file; unknown tokens fall
    /// back to hashed vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Dimension of hashed vectors when no file is given.
    #[arg(long, default_value_t = 300)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub embedding_seed: u64,
}

impl EmbeddingArgs {
    pub fn spec(&self, ctx: &Ctx) -> EmbeddingSpec {
        match &self.embeddings {
            Some(p) => EmbeddingSpec::File {
                path: ctx.path(p),
                seed: self.embedding_seed,
            },
            None => EmbeddingSpec::Hash {
                dim: self.embedding_dim,
                seed: self.embedding_seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainEncoderArgs {
    /// Label table written by `labels`.
    #[arg(long)]
    labels: PathBuf,
    /// Split JSON written by `labels --split-out`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    #[arg(long, default_value = "kl")]
    objective: DistanceKind,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss curves as TSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// LSTM units per direction.
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    /// Hidden widths of the colour head, comma separated.
    #[arg(long, default_value = "1024,512")]
    head: Widths,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model per objective as `KIND=PATH`; repeat for each row.
    #[arg(long = "model", required = true, value_parser = parse_named)]
    models: Vec<(String, PathBuf)>,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// XKCD `name<TAB>#rrggbb` file for the extra column.
    #[arg(long)]
    xkcd: Option<PathBuf>,
    /// Also write the matrix as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// File with one query per line, read in addition to positional queries.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Prediction dump (`query<TAB>w_0 ... w_{B-1}`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one top-10 bin strip SVG per query.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
    query: Vec<String>,
}

#[derive(Debug, Args)]
pub struct XkcdArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    #[arg(long)]
    xkcd: PathBuf,
}

pub fn run(ctx: &Ctx, cmd: EncoderCmd) -> Result<u8> {
    match cmd {
        EncoderCmd::Train(a) => train(ctx, a),
        EncoderCmd::Eval(a) => eval(ctx, a),
        EncoderCmd::Predict(a) => predict(ctx, a),
        EncoderCmd::Xkcd(a) => xkcd(ctx, a),
    }
}

pub fn load_labels(path: &Path) -> Result<Vec<QueryColourLabel>> {
    Ok(labels_from_table(&HistogramTable::load(path)?))
}

/// Loads an encoder or joint checkpoint as a colour predictor.
pub fn load_predictor(path: &Path) -> Result<Box<dyn ColourPredictor>> {
    let ck = Checkpoint::load(path)?;
    match ck.kind.as_str() {
        ENCODER_KIND => Ok(Box::new(ColourEncoderModel::from_checkpoint(&ck)?)),
        JOINT_KIND => Ok(Box::new(JointModel::from_checkpoint(&ck)?)),
        other => Err(Error::InvalidConfig(format!(
            "{}: checkpoint kind `{other}` cannot predict colours",
            path.display()
        ))),
    }
}

fn subset(labels: &[QueryColourLabel], keys: &[String]) -> Vec<QueryColourLabel> {
    let wanted: BTreeSet<String> = keys.iter().map(|k| query_key(k)).collect();
    labels.iter().filter(|l| wanted.contains(&l.query)).cloned().collect()
}

fn train(ctx: &Ctx, a: TrainEncoderArgs) -> Result<u8> {
    let palette = Palette::load(&ctx.path(&a.palette))?;
    let labels = load_labels(&ctx.path(&a.labels))?;
    let split = read_split(&ctx.path(&a.split))?;
    let model_cfg = EncoderConfig {
        embedding: a.embedding.spec(ctx),
        hidden: a.hidden,
        head: a.head.0,
        bins: palette.len(),
        seed: a.train.seed,
    };
    let trained = train_encoder(&labels, &split, a.objective, &a.train.config(), &model_cfg, &palette)?;
    trained.model.save(&ctx.path(&a.out))?;
    if let Some(c) = a.curves {
        write_text(&ctx.path(&c), &trained.curves.to_tsv())?;
    }
    if trained.skipped_empty > 0 {
        log::warn!("{} training queries had no tokens and were skipped", trained.skipped_empty);
    }
    println!(
        "objective {}\tbest_epoch {}\ttrain {:.6}\tvalidation {}",
        a.objective,
        trained.best_epoch + 1,
        trained.best_train_loss(),
        trained.best_validation_loss().map_or("-".into(), |v| format!("{v:.6}"))
    );
    Ok(0)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<u8> {
    let palette = Palette::load(&ctx.path(&a.palette))?;
    let labels = load_labels(&ctx.path(&a.labels))?;
    let split = read_split(&ctx.path(&a.split))?;
    let test = subset(&labels, &split.test);
    let xkcd = a.xkcd.map(|p| load_xkcd(&ctx.path(&p))).transpose()?;
    let mut loaded = Vec::new();
    for (kind, path) in &a.models {
        let kind: DistanceKind = kind.parse()?;
        loaded.push((kind, load_predictor(&ctx.path(path))?));
    }
    let predictors: Vec<(DistanceKind, &dyn ColourPredictor)> = loaded.iter().map(|(k, p)| (*k, p.as_ref())).collect();
    let matrix = evaluate_predictors(&predictors, &test, &palette, xkcd.as_deref())?;
    let table = matrix.to_table();
    print!("{table}");
    if loaded.len() == DistanceKind::ALL.len() {
        println!("diagonal_dominant\t{}", matrix.diagonal_dominant());
    }
    if let Some(out) = a.out {
        write_text(&ctx.path(&out), &table)?;
    }
    Ok(0)
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<u8> {
    let palette = Palette::load(&ctx.path(&a.palette))?;
    let model = load_predictor(&ctx.path(&a.model))?;
    let mut queries = a.query;
    if let Some(p) = a.queries {
        let path = ctx.path(&p);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        queries.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    if queries.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let dump = PredictionDump::from_model(model.as_ref(), &queries)?;
    if let Some(h) = dump.entries.first().map(|(_, h)| h) {
        if h.len() != palette.len() {
            return Err(Error::LengthMismatch {
                expected: palette.len(),
                actual: h.len(),
            });
        }
    }
    match a.out {
        Some(out) => dump.save(&ctx.path(&out))?,
        None => print!("{}", dump.to_text()),
    }
    if let Some(dir) = a.svg_dir {
        let dir = ctx.path(&dir);
        create_dir(&dir)?;
        for (i, (q, h)) in dump.entries.iter().enumerate() {
            let name = format!("{i:04}_{}.svg", q.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
            write_text(&dir.join(name), &top_bins_svg(h, &palette, 10))?;
        }
    }
    Ok(0)
}

fn xkcd(ctx: &Ctx, a: XkcdArgs) -> Result<u8> {
    let palette = Palette::load(&ctx.path(&a.palette))?;
    let model = load_predictor(&ctx.path(&a.model))?;
    let entries = load_xkcd(&ctx.path(&a.xkcd))?;
    let score = xkcd_evaluate(model.as_ref(), &entries, &palette)?;
    println!("D_XKCD\t{score:.6}\tentries\t{}", entries.len());
    Ok(0)
}
