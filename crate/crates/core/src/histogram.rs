//! Colour histograms over a palette, and the summary statistics derived from them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::colour::RgbColour;
use crate::error::{check_len, Error, Result};
use crate::palette::Palette;

/// Tolerance on the unit-sum invariant.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Ridge added to the chrominance covariance so it is always invertible.
pub const COVARIANCE_RIDGE: f64 = 1e-4;

const HEADER_PREFIX: &str = "chromalog-hist v1 B=";

/// A probability distribution over the bins of a palette.
#[derive(Debug, Clone, PartialEq)]
pub struct ColourHistogram {
    weights: Vec<f64>,
}

impl ColourHistogram {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("histogram"));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidHistogram(format!("weight {i} is {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidHistogram(format!("weights sum to {sum}")));
        }
        Ok(ColourHistogram { weights })
    }

    /// Normalises non-negative counts into a distribution.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidHistogram("counts sum to zero".into()));
        }
        ColourHistogram::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn one_hot(len: usize, k: usize) -> Self {
        assert!(k < len, "bin {k} out of range for {len} bins");
        let mut weights = vec![0.0; len];
        weights[k] = 1.0;
        ColourHistogram { weights }
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        ColourHistogram {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Bin indices sorted by decreasing mass (ties by index).
    pub fn top_bins(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

/// A decoded raster image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    pixels: Vec<RgbColour>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, pixels: Vec<RgbColour>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("{width}x{height} image has no pixels")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} image carries {} pixels",
                pixels.len()
            )));
        }
        Ok(PixelImage { width, height, pixels })
    }

    pub fn solid(width: usize, height: usize, c: RgbColour) -> Result<Self> {
        PixelImage::new(width, height, vec![c; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[RgbColour] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> RgbColour {
        self.pixels[y * self.width + x]
    }
}

/// Fraction of the image's pixels whose nearest palette colour is each bin.
pub fn image_to_histogram(img: &PixelImage, palette: &Palette) -> ColourHistogram {
    let mut counts = vec![0.0; palette.len()];
    let mut memo: HashMap<RgbColour, usize> = HashMap::new();
    for &px in img.pixels() {
        let k = *memo.entry(px).or_insert_with(|| palette.nearest_bin_rgb(px));
        counts[k] += 1.0;
    }
    let total = img.pixels().len() as f64;
    ColourHistogram {
        weights: counts.into_iter().map(|c| c / total).collect(),
    }
}

/// Elementwise arithmetic mean.
pub fn average_histograms(hs: &[ColourHistogram]) -> Result<ColourHistogram> {
    let first = hs.first().ok_or(Error::Empty("histogram list"))?;
    let mut sum = vec![0.0; first.len()];
    for h in hs {
        check_len(first.len(), h.len())?;
        for (s, w) in sum.iter_mut().zip(h.weights()) {
            *s += w;
        }
    }
    let n = hs.len() as f64;
    Ok(ColourHistogram {
        weights: sum.into_iter().map(|s| s / n).collect(),
    })
}

/// One-hot histogram at the bin nearest to `c`.
pub fn point_to_onehot(c: RgbColour, palette: &Palette) -> ColourHistogram {
    ColourHistogram::one_hot(palette.len(), palette.nearest_bin_rgb(c))
}

/// Luminance level/spread and a Gaussian summary of chrominance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuvSummary {
    /// Mass-weighted mean and standard deviation of bin lightness.
    pub lum: [f64; 2],
    /// Mass-weighted mean of bin `(u, v)`.
    pub mu: [f64; 2],
    /// Mass-weighted `(u, v)` covariance plus [`COVARIANCE_RIDGE`] on the diagonal.
    pub sigma: [[f64; 2]; 2],
}

pub fn histogram_to_luv_summary(h: &ColourHistogram, palette: &Palette) -> Result<LuvSummary> {
    check_len(palette.len(), h.len())?;
    Ok(summarise_weights(h.weights(), palette))
}

/// The summary as a function of raw weights. Training differentiates through
/// exactly this expression, so it does not renormalise.
pub(crate) fn summarise_weights(w: &[f64], palette: &Palette) -> LuvSummary {
    let bins = palette.bins();
    let mut mean_l = 0.0;
    let mut mu = [0.0; 2];
    for (wk, b) in w.iter().zip(bins) {
        mean_l += wk * b.luv.l;
        mu[0] += wk * b.luv.u;
        mu[1] += wk * b.luv.v;
    }
    let mut var_l = 0.0;
    let mut s = [[0.0; 2]; 2];
    for (wk, b) in w.iter().zip(bins) {
        let dl = b.luv.l - mean_l;
        let d = [b.luv.u - mu[0], b.luv.v - mu[1]];
        var_l += wk * dl * dl;
        s[0][0] += wk * d[0] * d[0];
        s[0][1] += wk * d[0] * d[1];
        s[1][1] += wk * d[1] * d[1];
    }
    s[1][0] = s[0][1];
    s[0][0] += COVARIANCE_RIDGE;
    s[1][1] += COVARIANCE_RIDGE;
    LuvSummary {
        lum: [mean_l, var_l.max(0.0).sqrt()],
        mu,
        sigma: s,
    }
}

/// Histograms keyed by image id or query text, in key order.
///
/// On disk: a `chromalog-hist v1 B=<n>` header, then `key<TAB>w_0 w_1 ...` per line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistogramTable {
    bins: usize,
    entries: BTreeMap<String, ColourHistogram>,
}

impl HistogramTable {
    pub fn new(bins: usize) -> Self {
        HistogramTable {
            bins,
            entries: BTreeMap::new(),
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn insert(&mut self, key: impl Into<String>, h: ColourHistogram) -> Result<()> {
        check_len(self.bins, h.len())?;
        let key = key.into();
        if key.contains('\t') || key.contains('\n') {
            return Err(Error::InvalidConfig(format!("histogram key {key:?} contains a tab or newline")));
        }
        self.entries.insert(key, h);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&ColourHistogram> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ColourHistogram)> {
        self.entries.iter()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER_PREFIX}{}\n", self.bins);
        for (key, h) in &self.entries {
            s.push_str(key);
            s.push('\t');
            for (i, w) in h.weights().iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{w:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::format(origin, 1, "missing header"))?;
        let bins: usize = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::format(origin, 1, format!("expected `{HEADER_PREFIX}<n>`")))?;
        let mut table = HistogramTable::new(bins);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, lineno, "expected `key<TAB>weights`"))?;
            let weights = parse_weights(rest, bins).map_err(|m| Error::format(origin, lineno, m))?;
            let h = ColourHistogram::new(weights).map_err(|e| Error::format(origin, lineno, e.to_string()))?;
            table.entries.insert(key.to_string(), h);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HistogramTable::parse(&text, &path.display().to_string())
    }
}

pub(crate) fn parse_weights(text: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let weights = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad weight {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if weights.len() != expected {
        return Err(format!("expected {expected} weights, found {}", weights.len()));
    }
    Ok(weights)
}
