//! The quantised colour space: a fixed set of bin centres that every pixel,
//! image and query is expressed against.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colour::{channels_to_luv, hcl_in_gamut, hcl_to_channels, HclColour, LuvColour, RgbColour};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 327;

/// Largest chroma the HCL model produces for 8-bit sRGB.
const MAX_CHROMA: f64 = 170.0;
/// Luminance of white in the HCL model.
const MAX_LUMINANCE: f64 = 127.5;

const HEADER_PREFIX: &str = "chromalog-palette v1 B=";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteConfig {
    pub bins: usize,
    pub hue_steps: usize,
    pub chroma_steps: usize,
    pub luminance_steps: usize,
    pub seed: u64,
}

impl Default for PaletteConfig {
    fn default() -> Self {
        PaletteConfig {
            bins: DEFAULT_BINS,
            hue_steps: 36,
            chroma_steps: 10,
            luminance_steps: 16,
            seed: 0,
        }
    }
}

impl PaletteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!("palette needs at least 2 bins, got {}", self.bins)));
        }
        if self.hue_steps == 0 || self.chroma_steps == 0 || self.luminance_steps == 0 {
            return Err(Error::InvalidConfig("grid resolutions must be at least 1".into()));
        }
        Ok(())
    }
}

/// One quantisation bin centre, stored in all three coordinate systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteBin {
    pub hcl: HclColour,
    pub luv: LuvColour,
    pub rgb: RgbColour,
}

impl PaletteBin {
    pub fn from_hcl(hcl: HclColour) -> Self {
        let channels = hcl_to_channels(hcl).map(|x| x.clamp(0.0, 255.0));
        PaletteBin {
            hcl,
            luv: channels_to_luv(channels),
            rgb: RgbColour::from_channels(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    bins: Vec<PaletteBin>,
    /// Bin indices sorted by LUV lightness, for pruned nearest-neighbour search.
    by_lightness: Vec<usize>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

/// In-gamut HCL grid points in generation order.
fn grid_candidates(cfg: &PaletteConfig) -> Vec<PaletteBin> {
    let mut out = Vec::new();
    for l in linspace(0.0, MAX_LUMINANCE, cfg.luminance_steps) {
        for c in linspace(0.0, MAX_CHROMA, cfg.chroma_steps) {
            // hue is meaningless on the grey axis
            let hue_steps = if c == 0.0 { 1 } else { cfg.hue_steps };
            for k in 0..hue_steps {
                let hcl = HclColour::new(360.0 * k as f64 / hue_steps as f64, c, l);
                if hcl_in_gamut(hcl) {
                    out.push(PaletteBin::from_hcl(hcl));
                }
            }
        }
    }
    out
}

/// Lays a uniform grid over HCL, drops out-of-gamut points and keeps exactly
/// `cfg.bins` of them by farthest-point subsampling in LUV.
pub fn generate_palette(cfg: &PaletteConfig) -> Result<Palette> {
    cfg.validate()?;
    let candidates = grid_candidates(cfg);
    if candidates.len() < cfg.bins {
        return Err(Error::GridTooCoarse {
            available: candidates.len(),
            requested: cfg.bins,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = rng.gen_range(0..candidates.len());
    let mut chosen = Vec::with_capacity(cfg.bins);
    let mut taken = vec![false; candidates.len()];
    let mut gap = vec![f64::INFINITY; candidates.len()];
    let mut next = start;
    while chosen.len() < cfg.bins {
        chosen.push(next);
        taken[next] = true;
        let anchor = candidates[next].luv;
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            gap[i] = gap[i].min(cand.luv.distance_squared(&anchor));
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, d)| gap[i] > d) {
                best = Some((i, gap[i]));
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    Ok(Palette::from_bins(chosen.into_iter().map(|i| candidates[i]).collect()))
}

impl Palette {
    pub fn from_bins(bins: Vec<PaletteBin>) -> Self {
        let mut by_lightness: Vec<usize> = (0..bins.len()).collect();
        by_lightness.sort_by(|&a, &b| bins[a].luv.l.total_cmp(&bins[b].luv.l).then(a.cmp(&b)));
        Palette { bins, by_lightness }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[PaletteBin] {
        &self.bins
    }

    pub fn bin(&self, k: usize) -> &PaletteBin {
        &self.bins[k]
    }

    pub fn nearest_bin(&self, c: HclColour) -> usize {
        let channels = hcl_to_channels(c).map(|x| x.clamp(0.0, 255.0));
        self.nearest_bin_luv(&channels_to_luv(channels))
    }

    pub fn nearest_bin_rgb(&self, c: RgbColour) -> usize {
        self.nearest_bin_luv(&c.to_luv())
    }

    /// Index of the bin centre closest to `target` in LUV, lowest index on ties.
    pub fn nearest_bin_luv(&self, target: &LuvColour) -> usize {
        assert!(!self.bins.is_empty(), "nearest_bin on an empty palette");
        let order = &self.by_lightness;
        let split = order.partition_point(|&k| self.bins[k].luv.l < target.l);
        let mut best = (usize::MAX, f64::INFINITY);
        // walk outwards in lightness; a bin whose lightness gap alone exceeds
        // the best distance cannot win
        let (mut lo, mut hi) = (split, split);
        while lo > 0 || hi < order.len() {
            let mut progressed = false;
            for side in [hi, lo.wrapping_sub(1)] {
                let Some(&k) = order.get(side) else { continue };
                let dl = self.bins[k].luv.l - target.l;
                if dl * dl > best.1 {
                    continue;
                }
                let d = self.bins[k].luv.distance_squared(target);
                if d < best.1 || (d == best.1 && k < best.0) {
                    best = (k, d);
                }
                progressed = true;
            }
            if !progressed {
                break;
            }
            hi += 1;
            lo = lo.saturating_sub(1);
        }
        best.0
    }

    pub fn median_chroma(&self) -> f64 {
        let mut c: Vec<f64> = self.bins.iter().map(|b| b.hcl.c).collect();
        c.sort_by(f64::total_cmp);
        let n = c.len();
        if n % 2 == 1 {
            c[n / 2]
        } else {
            0.5 * (c[n / 2 - 1] + c[n / 2])
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER_PREFIX}{}\n", self.bins.len());
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                s,
                "{i} {:?} {:?} {:?} {:?} {:?} {:?} {} {} {}",
                b.hcl.h, b.hcl.c, b.hcl.l, b.luv.l, b.luv.u, b.luv.v, b.rgb.r, b.rgb.g, b.rgb.b
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Palette> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::format(origin, 1, "missing header"))?;
        let count: usize = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::format(origin, 1, format!("expected `{HEADER_PREFIX}<n>`")))?;
        let mut bins = Vec::with_capacity(count);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 10 {
                return Err(Error::format(origin, lineno, format!("expected 10 fields, found {}", fields.len())));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|_| Error::format(origin, lineno, "bad bin index"))?;
            if index != bins.len() {
                return Err(Error::format(origin, lineno, format!("expected bin index {}", bins.len())));
            }
            let float = |j: usize| -> Result<f64> {
                fields[j]
                    .parse()
                    .map_err(|_| Error::format(origin, lineno, format!("bad number {:?}", fields[j])))
            };
            let byte = |j: usize| -> Result<u8> {
                fields[j]
                    .parse()
                    .map_err(|_| Error::format(origin, lineno, format!("bad channel {:?}", fields[j])))
            };
            bins.push(PaletteBin {
                hcl: HclColour {
                    h: float(1)?,
                    c: float(2)?,
                    l: float(3)?,
                },
                luv: LuvColour {
                    l: float(4)?,
                    u: float(5)?,
                    v: float(6)?,
                },
                rgb: RgbColour::new(byte(7)?, byte(8)?, byte(9)?),
            });
        }
        if bins.len() != count {
            return Err(Error::format(
                origin,
                text.lines().count(),
                format!("header declares {count} bins, found {}", bins.len()),
            ));
        }
        Ok(Palette::from_bins(bins))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Palette> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Palette::parse(&text, &path.display().to_string())
    }
}
