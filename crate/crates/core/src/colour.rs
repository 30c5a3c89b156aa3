//! Colour coordinate systems and the conversions between them.
//!
//! HCL follows the Sarifuddin & Missaoui model (hue in degrees, chroma and
//! luminance on the 0-255 RGB scale). LUV is CIE 1976 L*u*v* computed from
//! sRGB under the D65 white point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference luminance of the HCL model.
const HCL_Y0: f64 = 100.0;
/// Non-linearity exponent of the HCL model.
const HCL_GAMMA: f64 = 3.0;

/// sRGB (linear) to CIE XYZ, D65.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// An 8-bit sRGB colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RgbColour {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl RgbColour {
    pub const BLACK: RgbColour = RgbColour::new(0, 0, 0);
    pub const WHITE: RgbColour = RgbColour::new(255, 255, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        RgbColour { r, g, b }
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r as f64, self.g as f64, self.b as f64]
    }

    /// Round and clamp floating point channels on the 0-255 scale.
    pub fn from_channels(c: [f64; 3]) -> Self {
        let q = |x: f64| x.round().clamp(0.0, 255.0) as u8;
        RgbColour::new(q(c[0]), q(c[1]), q(c[2]))
    }

    pub fn to_hcl(self) -> HclColour {
        rgb_to_hcl(self)
    }

    pub fn to_luv(self) -> LuvColour {
        rgb_to_luv(self)
    }

    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.r, self.g, self.b)
    }
}

impl fmt::Display for RgbColour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl FromStr for RgbColour {
    type Err = Error;

    /// Parses `#rrggbb` (the leading `#` is optional).
    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches('#');
        let bad = || Error::InvalidConfig(format!("not a hex colour: {s:?}"));
        if digits.len() != 6 || !digits.is_ascii() {
            return Err(bad());
        }
        let channel = |i: usize| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| bad());
        Ok(RgbColour::new(channel(0)?, channel(2)?, channel(4)?))
    }
}

/// Hue (degrees, `[0, 360)`), chroma and luminance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HclColour {
    pub h: f64,
    pub c: f64,
    pub l: f64,
}

impl HclColour {
    /// Builds a colour, wrapping the hue into `[0, 360)`.
    pub fn new(h: f64, c: f64, l: f64) -> Self {
        HclColour {
            h: wrap_hue(h),
            c,
            l,
        }
    }

    pub fn to_rgb(self) -> RgbColour {
        hcl_to_rgb(self)
    }
}

/// CIE L*u*v* coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LuvColour {
    pub l: f64,
    pub u: f64,
    pub v: f64,
}

impl LuvColour {
    pub fn distance_squared(&self, other: &LuvColour) -> f64 {
        let dl = self.l - other.l;
        let du = self.u - other.u;
        let dv = self.v - other.v;
        dl * dl + du * du + dv * dv
    }
}

pub fn wrap_hue(h: f64) -> f64 {
    let w = h.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed angular difference `a - b` folded into `(-180, 180]`.
pub fn hue_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

pub fn rgb_to_hcl(c: RgbColour) -> HclColour {
    channels_to_hcl(c.channels())
}

/// HCL of floating point RGB channels on the 0-255 scale.
pub fn channels_to_hcl(rgb: [f64; 3]) -> HclColour {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max <= 0.0 {
        return HclColour {
            h: 0.0,
            c: 0.0,
            l: 0.0,
        };
    }
    let q = ((min / max) / HCL_Y0 * HCL_GAMMA).exp();
    let rg = r - g;
    let gb = g - b;
    let br = b - r;
    let l = (q * max + (1.0 - q) * min) / 2.0;
    let c = q * (rg.abs() + gb.abs() + br.abs()) / 3.0;

    let raw = if rg == 0.0 {
        if gb == 0.0 {
            0.0
        } else {
            90.0f64.copysign(gb)
        }
    } else {
        (gb / rg).atan().to_degrees()
    };
    let h = match (rg >= 0.0, gb >= 0.0) {
        (true, true) => 2.0 * raw / 3.0,
        (true, false) => 4.0 * raw / 3.0,
        (false, true) => 180.0 + 4.0 * raw / 3.0,
        (false, false) => 2.0 * raw / 3.0 - 180.0,
    };
    HclColour::new(h, c, l)
}

/// Clamped and rounded inverse of [`rgb_to_hcl`].
pub fn hcl_to_rgb(c: HclColour) -> RgbColour {
    RgbColour::from_channels(hcl_to_channels(c))
}

/// Exact inverse of the HCL transform, without clamping. Channels outside
/// `[0, 255]` mean the colour is outside the sRGB gamut.
pub fn hcl_to_channels(c: HclColour) -> [f64; 3] {
    let chroma = c.c.max(0.0);
    // 2L = min + Q (max - min) and 3C / 2 = Q (max - min), so min falls out directly.
    let min = 2.0 * c.l - 1.5 * chroma;
    let spread_q = 1.5 * chroma;
    if spread_q == 0.0 {
        return [min; 3];
    }
    // max = min + spread_q / Q(min / max); Q lies in [1, e^0.03] so this contracts fast.
    let mut max = min + spread_q;
    for _ in 0..64 {
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        let next = min + spread_q / (ratio / HCL_Y0 * HCL_GAMMA).exp();
        let done = (next - max).abs() <= 1e-13 * next.abs().max(1.0);
        max = next;
        if done {
            break;
        }
    }
    let span = max - min;

    let mut h = wrap_hue(c.h);
    if h > 180.0 {
        h -= 360.0;
    }
    // Invert the piecewise hue scaling back to the arctangent of (G-B)/(R-G).
    let (r, g, b);
    if (0.0..=60.0).contains(&h) {
        // R >= G >= B
        let t = (1.5 * h).to_radians().tan();
        let mid = if h >= 60.0 { max } else { (min + t * max) / (1.0 + t) };
        (r, g, b) = (max, mid, min);
    } else if (-120.0..0.0).contains(&h) {
        // R >= G, G < B
        let raw = 0.75 * h;
        if raw > -45.0 {
            let t = raw.to_radians().tan();
            (r, g, b) = (max, min, min - t * span);
        } else if raw <= -90.0 {
            (r, g, b) = (min, min, max);
        } else {
            let t = raw.to_radians().tan();
            (r, g, b) = (min + span / -t, min, max);
        }
    } else if h > 60.0 {
        // G > R, G >= B
        let raw = 0.75 * (h - 180.0);
        if raw <= -45.0 {
            let mid = if raw <= -90.0 {
                max
            } else {
                max + span / raw.to_radians().tan()
            };
            (r, g, b) = (mid, max, min);
        } else {
            let t = raw.to_radians().tan();
            (r, g, b) = (min, max, max + t * span);
        }
    } else {
        // R < G < B
        let raw = 1.5 * (h + 180.0);
        let t = raw.to_radians().tan();
        (r, g, b) = (min, (max + t * min) / (1.0 + t), max);
    }
    [r, g, b]
}

/// True when the HCL point maps inside the sRGB cube (with a small tolerance
/// for floating point error in the inverse).
pub fn hcl_in_gamut(c: HclColour) -> bool {
    hcl_to_channels(c)
        .iter()
        .all(|&x| x.is_finite() && (-1e-9..=255.0 + 1e-9).contains(&x))
}

pub fn rgb_to_luv(c: RgbColour) -> LuvColour {
    channels_to_luv(c.channels())
}

fn srgb_decode(v: f64) -> f64 {
    let v = (v / 255.0).clamp(0.0, 1.0);
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn xyz(linear: [f64; 3]) -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    [0, 1, 2].map(|i| m[i][0] * linear[0] + m[i][1] * linear[1] + m[i][2] * linear[2])
}

fn uv_chromaticity(x: [f64; 3]) -> Option<(f64, f64)> {
    let denom = x[0] + 15.0 * x[1] + 3.0 * x[2];
    (denom > 0.0).then(|| (4.0 * x[0] / denom, 9.0 * x[1] / denom))
}

/// LUV of floating point sRGB channels on the 0-255 scale.
pub fn channels_to_luv(rgb: [f64; 3]) -> LuvColour {
    let white = xyz([1.0; 3]);
    let p = xyz(rgb.map(srgb_decode));
    let y = p[1] / white[1];
    let eps = (6.0f64 / 29.0).powi(3);
    let l = if y <= eps {
        (29.0f64 / 3.0).powi(3) * y
    } else {
        116.0 * y.cbrt() - 16.0
    };
    match (uv_chromaticity(p), uv_chromaticity(white)) {
        (Some((up, vp)), Some((un, vn))) => LuvColour {
            l,
            u: 13.0 * l * (up - un),
            v: 13.0 * l * (vp - vn),
        },
        _ => LuvColour {
            l: 0.0,
            u: 0.0,
            v: 0.0,
        },
    }
}

pub fn hcl_to_luv(c: HclColour) -> LuvColour {
    channels_to_luv(hcl_to_channels(c).map(|x| x.clamp(0.0, 255.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn black_has_no_chroma_or_luminance() {
        let h = rgb_to_hcl(RgbColour::BLACK);
        assert_eq!(h.c, 0.0);
        assert_eq!(h.l, 0.0);
    }

    #[test]
    fn grey_axis_has_zero_chroma() {
        for v in [1u8, 64, 128, 200, 255] {
            assert_eq!(rgb_to_hcl(RgbColour::new(v, v, v)).c, 0.0);
        }
    }

    #[test]
    fn primary_hues_land_on_the_hue_wheel() {
        // pinned: pure red sits exactly on the 0 degree axis
        let red = rgb_to_hcl(RgbColour::new(255, 0, 0));
        assert_eq!(red.h, 0.0);
        assert!((red.c - 170.0).abs() < 1e-9);
        assert!((red.l - 127.5).abs() < 1e-9);
        let cases = [
            ((255, 255, 0), 60.0),
            ((0, 255, 0), 120.0),
            ((0, 255, 255), 180.0),
            ((0, 0, 255), 240.0),
            ((255, 0, 255), 300.0),
        ];
        for ((r, g, b), hue) in cases {
            let h = rgb_to_hcl(RgbColour::new(r, g, b)).h;
            assert!((h - hue).abs() < 1e-9, "{r},{g},{b}: {h}");
        }
    }

    #[test]
    fn white_luminance_is_half_scale() {
        let w = rgb_to_hcl(RgbColour::WHITE);
        assert_eq!(w.c, 0.0);
        assert!((w.l - 127.5).abs() < 1e-12);
    }

    #[test]
    fn round_trip_fixtures() {
        for c in [
            RgbColour::BLACK,
            RgbColour::new(200, 50, 50),
            RgbColour::WHITE,
            RgbColour::new(12, 250, 97),
            RgbColour::new(1, 0, 0),
        ] {
            let back = hcl_to_rgb(rgb_to_hcl(c));
            assert!(max_channel_diff(c, back) <= 1, "{c} -> {back}");
        }
        let white = hcl_to_rgb(HclColour::new(0.0, 0.0, 127.5));
        assert_eq!(white, RgbColour::WHITE);
    }

    #[test]
    fn out_of_gamut_hcl_is_clamped() {
        let c = HclColour::new(0.0, 170.0, 127.5 + 40.0);
        assert!(!hcl_in_gamut(c));
        let rgb = hcl_to_rgb(c);
        assert_eq!(rgb.r, 255);
    }

    #[test]
    fn luv_white_and_black() {
        let w = rgb_to_luv(RgbColour::WHITE);
        assert!((w.l - 100.0).abs() < 1e-3);
        assert!(w.u.abs() < 1e-3 && w.v.abs() < 1e-3);
        let k = rgb_to_luv(RgbColour::BLACK);
        assert_eq!((k.l, k.u, k.v), (0.0, 0.0, 0.0));
    }

    #[test]
    fn luv_lightness_monotone_in_green() {
        assert!(rgb_to_luv(RgbColour::new(0, 255, 0)).l > rgb_to_luv(RgbColour::new(0, 200, 0)).l);
    }

    #[test]
    fn hex_round_trip() {
        let c: RgbColour = "#1a2B3c".parse().unwrap();
        assert_eq!(c, RgbColour::new(0x1a, 0x2b, 0x3c));
        assert_eq!(c.hex(), "#1a2b3c");
        assert!("#12345".parse::<RgbColour>().is_err());
        assert!("zzzzzz".parse::<RgbColour>().is_err());
    }

    #[test]
    fn hue_difference_folds() {
        assert_eq!(hue_difference(350.0, 10.0), -20.0);
        assert_eq!(hue_difference(10.0, 350.0), 20.0);
        assert_eq!(wrap_hue(-1e-20), 0.0);
    }

    fn max_channel_diff(a: RgbColour, b: RgbColour) -> u8 {
        a.r.abs_diff(b.r).max(a.g.abs_diff(b.g)).max(a.b.abs_diff(b.b))
    }

    proptest! {
        #[test]
        fn rgb_hcl_round_trip_within_one(r: u8, g: u8, b: u8) {
            let c = RgbColour::new(r, g, b);
            let hcl = rgb_to_hcl(c);
            prop_assert!(hcl.c >= 0.0);
            prop_assert!((0.0..360.0).contains(&hcl.h));
            prop_assert!(max_channel_diff(c, hcl_to_rgb(hcl)) <= 1);
        }

        #[test]
        fn exact_inverse_is_tight(r: u8, g: u8, b: u8) {
            let c = RgbColour::new(r, g, b);
            let back = hcl_to_channels(rgb_to_hcl(c));
            for (x, y) in c.channels().iter().zip(back) {
                prop_assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", c, back);
            }
        }
    }
}
