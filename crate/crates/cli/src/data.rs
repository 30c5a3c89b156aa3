use std::fmt::Write as _;
use std::path::PathBuf;

use chromalog::clicklog::{labels_to_table, read_impressions, split_dataset, write_catalog, write_impressions};
use chromalog::histogram::HistogramTable;
use chromalog::palette::{generate_palette, Palette, PaletteConfig, DEFAULT_BINS};
use chromalog::pipeline::{derive_labels, extract_histograms, table_to_map};
use chromalog::svg::palette_svg;
use chromalog::synth::{generate_corpus, SynthConfig};
use chromalog::Result;
use clap::{Args, Subcommand};

use crate::images::{image_id, list_pngs, read_png, write_png};
use crate::util::{create_dir, write_split, write_text, Ctx};
use crate::EXIT_PARTIAL;

#[derive(Debug, Subcommand)]
pub enum PaletteCmd {
    /// Generate the palette and write it as text.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 36)]
        hue_steps: usize,
        #[arg(long, default_value_t = 10)]
        chroma_steps: usize,
        #[arg(long, default_value_t = 16)]
        luminance_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a palette file as an SVG swatch grid.
    ExportSvg {
        #[arg(long)]
        palette: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        columns: usize,
    },
}

pub fn palette(ctx: &Ctx, cmd: PaletteCmd) -> Result<u8> {
    match cmd {
        PaletteCmd::Gen {
            out,
            bins,
            hue_steps,
            chroma_steps,
            luminance_steps,
            seed,
        } => {
            let cfg = PaletteConfig {
                bins,
                hue_steps,
                chroma_steps,
                luminance_steps,
                seed,
            };
            let p = generate_palette(&cfg)?;
            write_text(&ctx.path(&out), &p.to_text())?;
            log::info!("wrote {} bins to {}", p.len(), out.display());
        }
        PaletteCmd::ExportSvg { palette, out, columns } => {
            let p = Palette::load(&ctx.path(&palette))?;
            write_text(&ctx.path(&out), &palette_svg(&p, columns))?;
        }
    }
    Ok(0)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives images/, catalog.jsonl, history.jsonl,
    /// ranking.jsonl and truth.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 11)]
    colour_words: usize,
    #[arg(long, default_value_t = 30)]
    object_words: usize,
    #[arg(long, default_value_t = 30)]
    queries_per_concept: usize,
    #[arg(long, default_value_t = 12)]
    images_per_query: usize,
    #[arg(long, default_value_t = 5)]
    clicks_per_query: usize,
    /// Click sharpness; 0 makes clicks independent of colour.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.4)]
    on_colour_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    shade_spread: f64,
    #[arg(long, default_value_t = 8)]
    image_size: usize,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> Result<u8> {
    let cfg = SynthConfig {
        seed: a.seed,
        colour_words: a.colour_words,
        object_words: a.object_words,
        queries_per_concept: a.queries_per_concept,
        images_per_query: a.images_per_query,
        clicks_per_query: a.clicks_per_query,
        beta: a.beta,
        on_colour_fraction: a.on_colour_fraction,
        shade_spread: a.shade_spread,
        image_size: a.image_size,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg)?;
    let out = ctx.path(&a.out);
    let image_dir = out.join("images");
    create_dir(&image_dir)?;
    for img in &corpus.images {
        write_png(&image_dir.join(format!("{}.png", img.meta.image_id)), &img.pixels)?;
    }
    write_catalog(&out.join("catalog.jsonl"), &corpus.catalog())?;
    write_impressions(&out.join("history.jsonl"), &corpus.history)?;
    write_impressions(&out.join("ranking.jsonl"), &corpus.ranking)?;
    let mut truth = String::from("query\tcolour_word\tcolour\n");
    for q in &corpus.queries {
        let _ = writeln!(truth, "{}\t{}\t{}", q.query, q.colour_word, q.colour.hex());
    }
    write_text(&out.join("truth.tsv"), &truth)?;
    log::info!(
        "generated {} queries and {} images in {}",
        corpus.queries.len(),
        corpus.images.len(),
        out.display()
    );
    Ok(0)
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of PNG images; ids are file names without extension.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

pub fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<u8> {
    let palette = Palette::load(&ctx.path(&a.palette))?;
    let mut loaded = Vec::new();
    let mut skipped = 0;
    for path in list_pngs(&ctx.path(&a.images))? {
        match read_png(&path) {
            Ok(img) => loaded.push((image_id(&path), img)),
            Err(e) => {
                log::warn!("skipping unreadable image: {e}");
                skipped += 1;
            }
        }
    }
    let table = extract_histograms(&loaded, &palette, a.workers)?;
    table.save(&ctx.path(&a.out))?;
    log::info!("wrote {} histograms, skipped {skipped}", table.len());
    Ok(if skipped > 0 { EXIT_PARTIAL } else { 0 })
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    /// Impression log (JSON lines).
    #[arg(long)]
    log: PathBuf,
    /// Histogram table of the catalog images.
    #[arg(long)]
    hists: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a query-disjoint train/validation/test split as JSON.
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn labels(ctx: &Ctx, a: LabelsArgs) -> Result<u8> {
    let log = read_impressions(&ctx.path(&a.log))?;
    let hists = table_to_map(&HistogramTable::load(&ctx.path(&a.hists))?);
    let labels = derive_labels(&log, &hists)?;
    labels_to_table(&labels)?.save(&ctx.path(&a.out))?;
    log::info!("labelled {} of {} logged queries", labels.len(), log.len());
    if let Some(split_out) = a.split_out {
        let keys: Vec<String> = labels.iter().map(|l| l.query.clone()).collect();
        write_split(&ctx.path(&split_out), &split_dataset(&keys, a.seed)?)?;
    }
    Ok(0)
}
