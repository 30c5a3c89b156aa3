//! Query-image colour distances, the XKCD evaluation metric, and their
//! analytic gradients.
//!
//! Every distance is exposed twice: on [`ColourHistogram`]s for evaluation,
//! and on raw weight slices ([`distance_value`], [`distance_gradient`]) for
//! training, where the second argument is a model output being differentiated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::histogram::{summarise_weights, ColourHistogram, LuvSummary};
use crate::palette::Palette;

/// Mass added to every bin of the second argument of the KL divergence.
pub const KL_SMOOTHING: f64 = 1e-8;

/// Offset added to the absolute mean difference inside the Hellinger term.
pub const HELLINGER_MEAN_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DistanceKind {
    Kl,
    HistogramIntersection,
    Luv,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [DistanceKind::Kl, DistanceKind::HistogramIntersection, DistanceKind::Luv];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Kl => "kl",
            DistanceKind::HistogramIntersection => "hi",
            DistanceKind::Luv => "luv",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(DistanceKind::Kl),
            "hi" => Ok(DistanceKind::HistogramIntersection),
            "luv" => Ok(DistanceKind::Luv),
            other => Err(Error::InvalidConfig(format!("unknown distance {other:?} (expected kl, hi or luv)"))),
        }
    }
}

impl From<DistanceKind> for String {
    fn from(k: DistanceKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for DistanceKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A bivariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl From<&LuvSummary> for Gaussian2 {
    fn from(s: &LuvSummary) -> Self {
        Gaussian2 { mu: s.mu, sigma: s.sigma }
    }
}

pub fn d_kl(p: &ColourHistogram, q: &ColourHistogram) -> Result<f64> {
    check_len(p.len(), q.len())?;
    Ok(kl(p.weights(), q.weights()))
}

pub fn d_hi(p: &ColourHistogram, q: &ColourHistogram) -> Result<f64> {
    check_len(p.len(), q.len())?;
    Ok(hi(p.weights(), q.weights()))
}

pub fn d_luv(p: &ColourHistogram, q: &ColourHistogram, palette: &Palette) -> Result<f64> {
    check_len(p.len(), q.len())?;
    check_len(palette.len(), p.len())?;
    luv(p.weights(), q.weights(), palette)
}

/// Negative log-likelihood of the prediction at the bins where the label has mass.
pub fn d_xkcd(label: &ColourHistogram, pred: &ColourHistogram) -> Result<f64> {
    check_len(label.len(), pred.len())?;
    let mut total = 0.0;
    for (bin, (&p, &q)) in label.weights().iter().zip(pred.weights()).enumerate() {
        if p != 0.0 {
            if !(q > 0.0) {
                return Err(Error::NonPositivePrediction { bin, value: q });
            }
            total -= q.ln();
        }
    }
    Ok(total)
}

pub fn distance(kind: DistanceKind, p: &ColourHistogram, q: &ColourHistogram, palette: &Palette) -> Result<f64> {
    distance_value(kind, p.weights(), q.weights(), palette)
}

/// `D(p, q)` on raw weights.
pub fn distance_value(kind: DistanceKind, p: &[f64], q: &[f64], palette: &Palette) -> Result<f64> {
    check_len(p.len(), q.len())?;
    match kind {
        DistanceKind::Kl => Ok(kl(p, q)),
        DistanceKind::HistogramIntersection => Ok(hi(p, q)),
        DistanceKind::Luv => {
            check_len(palette.len(), p.len())?;
            luv(p, q, palette)
        }
    }
}

/// `dD(p, q) / dq_i`.
pub fn distance_gradient(kind: DistanceKind, p: &[f64], q: &[f64], palette: &Palette) -> Result<Vec<f64>> {
    check_len(p.len(), q.len())?;
    match kind {
        DistanceKind::Kl => Ok(p.iter().zip(q).map(|(&pi, &qi)| -pi / (qi + KL_SMOOTHING)).collect()),
        DistanceKind::HistogramIntersection => {
            // subgradient 0 at ties
            Ok(p.iter().zip(q).map(|(&pi, &qi)| if qi < pi { -1.0 } else { 0.0 }).collect())
        }
        DistanceKind::Luv => {
            check_len(palette.len(), p.len())?;
            luv_gradient(p, q, palette)
        }
    }
}

/// `dD(p, q) / dp_i`. Bins where `p` is zero use the gradient at the
/// smallest positive double.
pub fn distance_gradient_wrt_first(kind: DistanceKind, p: &[f64], q: &[f64], palette: &Palette) -> Result<Vec<f64>> {
    check_len(p.len(), q.len())?;
    match kind {
        DistanceKind::Kl => {
            let norm = smoothing_norm(q.len());
            Ok(p.iter()
                .zip(q)
                .map(|(&pi, &qi)| pi.max(f64::MIN_POSITIVE).ln() + 1.0 - ((qi + KL_SMOOTHING) / norm).ln())
                .collect())
        }
        // both are symmetric in their arguments
        DistanceKind::HistogramIntersection | DistanceKind::Luv => distance_gradient(kind, q, p, palette),
    }
}

fn smoothing_norm(len: usize) -> f64 {
    1.0 + len as f64 * KL_SMOOTHING
}

/// `sum_i p_i ln(p_i / q~_i)` with `q~ = (q + eps) / (1 + B eps)`. For a valid
/// histogram the denominator is exactly the smoothed sum; keeping it constant
/// makes the function (and so its gradient) well defined off the simplex.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    let norm = smoothing_norm(q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - ((qi + KL_SMOOTHING) / norm).ln()))
        .sum::<f64>()
}

fn hi(p: &[f64], q: &[f64]) -> f64 {
    1.0 - p.iter().zip(q).map(|(a, b)| a.min(*b)).sum::<f64>()
}

fn det(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn inverse(m: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let d = det(m);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::SingularCovariance(d));
    }
    Ok([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

fn mat_vec(m: &[[f64; 2]; 2], v: &[f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

struct HellingerParts {
    value: f64,
    /// `R exp(-E/8)`, i.e. `1 - value`.
    affinity: f64,
    mean_bar: [f64; 2],
    sigma_bar_inv: [[f64; 2]; 2],
}

fn hellinger_parts(p: &Gaussian2, q: &Gaussian2) -> Result<HellingerParts> {
    let mut sigma_bar = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            sigma_bar[a][b] = 0.5 * (p.sigma[a][b] + q.sigma[a][b]);
        }
    }
    let sigma_bar_inv = inverse(&sigma_bar)?;
    let dets = det(&p.sigma) * det(&q.sigma);
    if !(dets > 0.0) {
        return Err(Error::SingularCovariance(dets));
    }
    let mean_bar = [0, 1].map(|i| (p.mu[i] - q.mu[i]).abs() + HELLINGER_MEAN_OFFSET);
    let sm = mat_vec(&sigma_bar_inv, &mean_bar);
    let quad = mean_bar[0] * sm[0] + mean_bar[1] * sm[1];
    let ratio = dets.powf(0.25) / det(&sigma_bar).sqrt();
    let affinity = ratio * (-quad / 8.0).exp();
    Ok(HellingerParts {
        value: 1.0 - affinity,
        affinity,
        mean_bar,
        sigma_bar_inv,
    })
}

/// Closed-form Hellinger distance between two bivariate Gaussians, with the
/// mean difference taken as `|mu_p - mu_q| + 1` per coordinate.
pub fn hellinger_gauss2d(p: &Gaussian2, q: &Gaussian2) -> Result<f64> {
    Ok(hellinger_parts(p, q)?.value)
}

fn luminance_term(p: &LuvSummary, q: &LuvSummary) -> f64 {
    (p.lum[0] - q.lum[0]).powi(2) + (p.lum[1] - q.lum[1]).powi(2)
}

/// Squared luminance-feature distance times the chrominance Hellinger distance.
fn luv(p: &[f64], q: &[f64], palette: &Palette) -> Result<f64> {
    let sp = summarise_weights(p, palette);
    let sq = summarise_weights(q, palette);
    let h = hellinger_gauss2d(&Gaussian2::from(&sp), &Gaussian2::from(&sq))?;
    Ok(luminance_term(&sp, &sq) * h)
}

fn luv_gradient(p: &[f64], q: &[f64], palette: &Palette) -> Result<Vec<f64>> {
    let sp = summarise_weights(p, palette);
    let sq = summarise_weights(q, palette);
    let parts = hellinger_parts(&Gaussian2::from(&sp), &Gaussian2::from(&sq))?;
    let lum = luminance_term(&sp, &sq);

    // Hellinger term with respect to q's mean and (full, unsymmetrised) covariance
    let k = parts.affinity;
    let sinv = parts.sigma_bar_inv;
    let q_inv = inverse(&sq.sigma)?;
    let sm = mat_vec(&sinv, &parts.mean_bar);
    let mut g_sigma = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            g_sigma[a][b] = -k * (0.25 * q_inv[b][a] - 0.25 * sinv[b][a] + sm[a] * sm[b] / 16.0);
        }
    }
    let g_mu = [0, 1].map(|i| {
        let s = match sp.mu[i].partial_cmp(&sq.mu[i]) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => -1.0,
            _ => 0.0,
        };
        -0.25 * k * sm[i] * s
    });

    let total: f64 = q.iter().sum();
    let (mean_l, std_l) = (sq.lum[0], sq.lum[1]);
    let drift = [sq.mu[0] * (1.0 - total), sq.mu[1] * (1.0 - total)];
    let dl_mean = sp.lum[0] - sq.lum[0];
    let dl_std = sp.lum[1] - sq.lum[1];

    Ok(palette
        .bins()
        .iter()
        .map(|bin| {
            let lk = bin.luv.l;
            let dvar = (lk - mean_l).powi(2) - 2.0 * lk * mean_l * (1.0 - total);
            let dstd = if std_l > 0.0 { dvar / (2.0 * std_l) } else { 0.0 };
            let dlum = -2.0 * dl_mean * lk - 2.0 * dl_std * dstd;

            let x = [bin.luv.u, bin.luv.v];
            let d = [x[0] - sq.mu[0], x[1] - sq.mu[1]];
            let mut dh = g_mu[0] * x[0] + g_mu[1] * x[1];
            for a in 0..2 {
                for b in 0..2 {
                    dh += g_sigma[a][b] * (d[a] * d[b] - x[a] * drift[b] - drift[a] * x[b]);
                }
            }
            dlum * parts.value + lum * dh
        })
        .collect())
}
