//! Glue between the stages: parallel histogram extraction and label
//! derivation from click logs.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::clicklog::{compute_query_label, filter_queries, ImpressionRecord, QueryColourLabel};
use crate::error::{Error, Result};
use crate::histogram::{image_to_histogram, ColourHistogram, HistogramTable, PixelImage};
use crate::palette::Palette;
use crate::synth::SynthCorpus;

/// Histograms for `images` computed on `workers` threads. The table is keyed
/// by id, so its contents do not depend on the worker count.
pub fn extract_histograms(images: &[(String, PixelImage)], palette: &Palette, workers: usize) -> Result<HistogramTable> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let hists: Vec<ColourHistogram> =
        pool.install(|| images.par_iter().map(|(_, img)| image_to_histogram(img, palette)).collect());
    let mut table = HistogramTable::new(palette.len());
    for ((id, _), h) in images.iter().zip(hists) {
        table.insert(id.clone(), h)?;
    }
    Ok(table)
}

pub fn table_to_map(table: &HistogramTable) -> HashMap<String, ColourHistogram> {
    table.iter().map(|(k, h)| (k.clone(), h.clone())).collect()
}

/// Histogram of every generated image, keyed by id.
pub fn corpus_histograms(corpus: &SynthCorpus, palette: &Palette) -> HashMap<String, ColourHistogram> {
    corpus
        .images
        .par_iter()
        .map(|img| (img.meta.image_id.clone(), image_to_histogram(&img.pixels, palette)))
        .collect()
}

/// Filters `log` and labels each surviving query with its mean clicked histogram.
pub fn derive_labels(log: &[ImpressionRecord], hists: &HashMap<String, ColourHistogram>) -> Result<Vec<QueryColourLabel>> {
    filter_queries(log).iter().map(|r| compute_query_label(r, hists)).collect()
}

pub fn label_map(labels: &[QueryColourLabel]) -> HashMap<String, ColourHistogram> {
    labels.iter().map(|l| (l.query.clone(), l.label.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colour::RgbColour;
    use crate::palette::{generate_palette, PaletteConfig};

    #[test]
    fn extraction_ignores_worker_count() {
        let palette = generate_palette(&PaletteConfig::default()).unwrap();
        let images: Vec<(String, PixelImage)> = (0..20u8)
            .map(|i| {
                let px = (0..16).map(|j| RgbColour::new(i * 12, j * 15, 200 - i * 5)).collect();
                (format!("im{i:02}"), PixelImage::new(4, 4, px).unwrap())
            })
            .collect();
        let one = extract_histograms(&images, &palette, 1).unwrap();
        let four = extract_histograms(&images, &palette, 4).unwrap();
        assert_eq!(one.to_text(), four.to_text());
        let solid = vec![("s".to_string(), PixelImage::solid(3, 3, RgbColour::new(10, 200, 10)).unwrap())];
        let t = extract_histograms(&solid, &palette, 2).unwrap();
        assert_eq!(t.get("s").unwrap().weights().iter().filter(|&&w| w == 1.0).count(), 1);
    }
}
