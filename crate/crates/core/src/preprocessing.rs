//! Source image preparation: binarize, take the central 64x64 window and
//! reduce it to 32x32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BinaryImage, GrayImage, SYNTH_SIDE};

pub const CROP_SIDE: usize = 64;
/// Threshold used when Otsu has nothing to separate.
pub const OTSU_FALLBACK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "threshold", rename_all = "lowercase")]
pub enum BinarizeRule {
    Fixed(u8),
    Otsu,
}

impl std::str::FromStr for BinarizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "otsu" {
            return Ok(BinarizeRule::Otsu);
        }
        if let Some(t) = s.strip_prefix("fixed:") {
            return t.parse::<u8>().map(BinarizeRule::Fixed).map_err(|_| {
                Error::Parameter(format!("fixed threshold must be an integer in 0..=255, got {t:?}"))
            });
        }
        Err(Error::Parameter(format!("unknown binarize rule {s:?}, expected otsu or fixed:<t>")))
    }
}

impl std::fmt::Display for BinarizeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BinarizeRule::Fixed(t) => write!(f, "fixed:{t}"),
            BinarizeRule::Otsu => f.write_str("otsu"),
        }
    }
}

/// Which side of the threshold is ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Foreground iff `value <= threshold`.
    InkIsDark,
    /// Foreground iff `value > threshold`.
    InkIsBright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    GeometricCenter,
    ForegroundCentroid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub image: BinaryImage,
    pub threshold: u8,
    /// Set when Otsu was requested on a constant image and the fixed fallback applied.
    pub otsu_fallback: bool,
}

fn to_level(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// 256-bin histogram of a 0–255 image (values are rounded and clamped).
pub fn histogram(src: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in src.values() {
        hist[to_level(v) as usize] += 1;
    }
    hist
}

/// Otsu threshold over a 256-bin histogram: classes are `<= t` and `> t`.
///
/// When several thresholds reach the maximal between-class variance (e.g. a
/// two-level image), the midpoint of the first and last maximiser is taken.
/// Returns `None` if no threshold separates two non-empty classes.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best = f64::NEG_INFINITY;
    let mut first = None;
    let mut last = 0usize;
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    for t in 0..255usize {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mean0 = sum0 / w0 as f64;
        let mean1 = (total_sum - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mean0 - mean1).powi(2);
        if between > best {
            best = between;
            first = Some(t);
            last = t;
        } else if between == best {
            last = t;
        }
    }
    first.map(|f| ((f + last) / 2) as u8)
}

pub fn binarize(src: &GrayImage, rule: BinarizeRule, polarity: Polarity) -> Result<Binarized> {
    let (threshold, otsu_fallback) = match rule {
        BinarizeRule::Fixed(t) => (t, false),
        BinarizeRule::Otsu => match otsu_threshold(&histogram(src)) {
            Some(t) => (t, false),
            None => (OTSU_FALLBACK_THRESHOLD, true),
        },
    };
    let bits = src
        .values()
        .iter()
        .map(|&v| {
            let level = to_level(v);
            match polarity {
                Polarity::InkIsBright => level > threshold,
                Polarity::InkIsDark => level <= threshold,
            }
        })
        .collect();
    Ok(Binarized {
        image: BinaryImage::new(src.width(), src.height(), bits)?,
        threshold,
        otsu_fallback,
    })
}

/// Top-left corner `(row, col)` of the crop window.
pub fn crop_origin(src: &BinaryImage, mode: CropMode) -> Result<(usize, usize)> {
    let (w, h) = (src.width(), src.height());
    if w < CROP_SIDE || h < CROP_SIDE {
        return Err(Error::dimension(
            format!("at least {CROP_SIDE}x{CROP_SIDE}"),
            format!("{w}x{h}"),
        ));
    }
    let center = ((h - CROP_SIDE) / 2, (w - CROP_SIDE) / 2);
    match mode {
        CropMode::GeometricCenter => Ok(center),
        CropMode::ForegroundCentroid => {
            let (mut sr, mut sc, mut n) = (0u64, 0u64, 0u64);
            for r in 0..h {
                for c in 0..w {
                    if src.get(r, c) {
                        sr += r as u64;
                        sc += c as u64;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Ok(center);
            }
            let place = |sum: u64, limit: usize| {
                let centroid = sum as f64 / n as f64;
                let origin = (centroid + 0.5).floor() as i64 - (CROP_SIDE / 2) as i64;
                origin.clamp(0, (limit - CROP_SIDE) as i64) as usize
            };
            Ok((place(sr, h), place(sc, w)))
        }
    }
}

pub fn central_crop(src: &BinaryImage, mode: CropMode) -> Result<BinaryImage> {
    let (r0, c0) = crop_origin(src, mode)?;
    BinaryImage::from_fn(CROP_SIDE, CROP_SIDE, |r, c| src.get(r0 + r, c0 + c))
}

/// 64x64 to 32x32: an output pixel is foreground iff at least two of its
/// 2x2 source block are.
pub fn downsample_2x(src: &BinaryImage) -> Result<BinaryImage> {
    if src.width() != CROP_SIDE || src.height() != CROP_SIDE {
        return Err(Error::dimension(
            format!("{CROP_SIDE}x{CROP_SIDE}"),
            format!("{}x{}", src.width(), src.height()),
        ));
    }
    BinaryImage::from_fn(SYNTH_SIDE, SYNTH_SIDE, |r, c| {
        let block = [
            src.get(2 * r, 2 * c),
            src.get(2 * r, 2 * c + 1),
            src.get(2 * r + 1, 2 * c),
            src.get(2 * r + 1, 2 * c + 1),
        ];
        block.iter().filter(|&&b| b).count() >= 2
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub binarize: BinarizeRule,
    pub polarity: Polarity,
    pub crop: CropMode,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            binarize: BinarizeRule::Otsu,
            polarity: Polarity::InkIsDark,
            crop: CropMode::GeometricCenter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub binarized: Binarized,
    pub cropped: BinaryImage,
    pub reduced: BinaryImage,
}

/// Binarize, crop and downsample. A blank 64x64 crop is a degenerate mask.
pub fn preprocess(src: &GrayImage, params: &PreprocessParams) -> Result<Preprocessed> {
    let binarized = binarize(src, params.binarize, params.polarity)?;
    let cropped = central_crop(&binarized.image, params.crop)?;
    if cropped.foreground_count() == 0 {
        return Err(Error::DegenerateMask("cropped window has no foreground".into()));
    }
    let reduced = downsample_2x(&cropped)?;
    Ok(Preprocessed {
        binarized,
        cropped,
        reduced,
    })
}
