//! Statistical checks of the generated data.
//!
//! Kolmogorov–Smirnov tests use asymptotic critical values `c(alpha) / sqrt(n)`
//! (two-sample: `c(alpha) * sqrt((n + m) / (n m))`); callers are expected to
//! supply at least a thousand samples. Every check produces a [`TestReport`]
//! with `pass == (statistic < critical_value)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{sort_desc, DatasetManifest, GrayImage, SYNTH_SIDE};
use crate::randomness::{derive_stream, gaussian_vector};

/// Minimum images for a stationarity test.
pub const MIN_STATIONARITY_IMAGES: usize = 1_000;
/// Minimum expected count per chi-square bin.
pub const MIN_EXPECTED_PER_BIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_name: String,
    pub statistic: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub pass: bool,
    pub sample_size: usize,
}

impl TestReport {
    fn new(test_name: impl Into<String>, statistic: f64, critical_value: f64, alpha: f64, sample_size: usize) -> Self {
        Self {
            test_name: test_name.into(),
            statistic,
            critical_value,
            alpha,
            pass: statistic < critical_value,
            sample_size,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Asymptotic Kolmogorov coefficient `c(alpha)`.
///
/// The customary two-decimal table values are used for the usual levels;
/// anything else uses `sqrt(-ln(alpha / 2) / 2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    const TABLE: [(f64, f64); 6] = [
        (0.10, 1.22),
        (0.05, 1.36),
        (0.025, 1.48),
        (0.01, 1.63),
        (0.005, 1.73),
        (0.001, 1.95),
    ];
    TABLE
        .iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-12)
        .map(|&(_, c)| c)
        .unwrap_or_else(|| (-(alpha / 2.0).ln() / 2.0).sqrt())
}

/// CDF of N(mean, variance).
pub fn normal_cdf(mean: f64, variance: f64) -> impl Fn(f64) -> f64 + Sync {
    let sd = variance.sqrt();
    move |x| 0.5 * libm::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

fn sorted_ascending(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Parameter("samples contain NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    Ok(s)
}

/// `sup |F_n - F|` for sorted samples.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(Error::SampleSize("KS test needs at least one sample".into()));
    }
    let sorted = sorted_ascending(samples)?;
    let n = sorted.len();
    let d = ks_statistic_sorted(&sorted, cdf);
    Ok(TestReport::new("ks-one-sample", d, ks_coefficient(alpha) / (n as f64).sqrt(), alpha, n))
}

/// Two-sample KS distance, handling ties by stepping past equal values.
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted_ascending(a)?, sorted_ascending(b)?);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::SampleSize("two-sample KS needs non-empty samples".into()));
    }
    let d = ks_two_sample_statistic(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let critical = ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt();
    Ok(TestReport::new("ks-two-sample", d, critical, alpha, a.len() + b.len()))
}

/// Pearson statistic for given observed and expected counts, `bins - 1` dof.
pub fn chi_square_from_counts(observed: &[f64], expected: &[f64], alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Parameter("need matching observed/expected counts over at least two bins".into()));
    }
    if let Some((i, e)) = expected.iter().enumerate().find(|(_, &e)| e < MIN_EXPECTED_PER_BIN) {
        return Err(Error::Parameter(format!(
            "bin {i} expects {e:.2} < {MIN_EXPECTED_PER_BIN} samples; merge bins and retry"
        )));
    }
    let statistic: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (observed.len() - 1) as f64;
    let critical = ChiSquared::new(dof)
        .map_err(|e| Error::Parameter(e.to_string()))?
        .inverse_cdf(1.0 - alpha);
    let n = observed.iter().sum::<f64>().round() as usize;
    Ok(TestReport::new("chi-square", statistic, critical, alpha, n))
}

/// Chi-square goodness of fit over the bins `[edges[k], edges[k+1])`.
///
/// Outer edges may be infinite. Samples outside `[edges[0], edges[last])` are
/// ignored and the expected counts are taken conditional on the covered range.
pub fn chi_square_gof(samples: &[f64], edges: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<TestReport> {
    if edges.len() < 3 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter("bin edges must be strictly increasing with at least two bins".into()));
    }
    let bins = edges.len() - 1;
    let mut observed = vec![0.0; bins];
    for &x in samples {
        if x < edges[0] || x >= edges[bins] {
            continue;
        }
        // first edge strictly greater than x, minus one
        let k = edges.partition_point(|&e| e <= x) - 1;
        observed[k] += 1.0;
    }
    let covered: f64 = observed.iter().sum();
    let probs: Vec<f64> = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
    let mass: f64 = probs.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Parameter("bins carry no probability mass".into()));
    }
    let expected: Vec<f64> = probs.iter().map(|p| covered * p / mass).collect();
    chi_square_from_counts(&observed, &expected, alpha)
}

/// `bins + 1` edges splitting N(0, variance) into equal-probability bins.
pub fn normal_equiprobable_edges(bins: usize, variance: f64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend((1..bins).map(|k| normal.inverse_cdf(k as f64 / bins as f64)));
    edges.push(f64::INFINITY);
    Ok(edges)
}

/// A grid position `(row, col)`.
pub type Position = (usize, usize);

/// `count` distinct-position pairs drawn from a seeded stream.
pub fn random_position_pairs(seed: u64, count: usize) -> Vec<(Position, Position)> {
    let mut s = derive_stream(seed, u64::MAX);
    let n = (SYNTH_SIDE * SYNTH_SIDE) as u64;
    let pos = |i: u64| ((i as usize) / SYNTH_SIDE, (i as usize) % SYNTH_SIDE);
    (0..count)
        .map(|_| {
            let a = s.below(n);
            let mut b = s.below(n - 1);
            if b >= a {
                b += 1;
            }
            (pos(a), pos(b))
        })
        .collect()
}

/// Every unordered pair of distinct positions.
pub fn all_position_pairs() -> Vec<(Position, Position)> {
    let n = SYNTH_SIDE * SYNTH_SIDE;
    let pos = |i: usize| (i / SYNTH_SIDE, i % SYNTH_SIDE);
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (pos(a), pos(b)))).collect()
}

/// Two-sample KS between the value sequences at two positions, per pair.
pub fn stationarity_test(images: &[GrayImage], pairs: &[(Position, Position)], alpha: f64) -> Result<Vec<TestReport>> {
    check_alpha(alpha)?;
    if images.len() < MIN_STATIONARITY_IMAGES {
        return Err(Error::SampleSize(format!(
            "stationarity needs at least {MIN_STATIONARITY_IMAGES} images, got {}",
            images.len()
        )));
    }
    let column = |(r, c): Position| -> Result<Vec<f64>> {
        images
            .iter()
            .map(|img| {
                if r >= img.height() || c >= img.width() {
                    Err(Error::Parameter(format!("position ({r},{c}) outside the image")))
                } else {
                    Ok(f64::from(img.get(r, c)))
                }
            })
            .collect()
    };
    pairs
        .par_iter()
        .map(|&(p, q)| {
            let mut report = ks_two_sample(&column(p)?, &column(q)?, alpha)?;
            report.test_name = format!("stationarity ({},{}) vs ({},{})", p.0, p.1, q.0, q.1);
            Ok(report)
        })
        .collect()
}

/// Pass fraction and the individual reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub name: String,
    pub total: usize,
    pub passed: usize,
    pub reports: Vec<TestReport>,
}

impl BatchSummary {
    pub fn new(name: impl Into<String>, reports: Vec<TestReport>) -> Self {
        Self {
            name: name.into(),
            total: reports.len(),
            passed: reports.iter().filter(|r| r.pass).count(),
            reports,
        }
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }

    pub fn failed(&self) -> usize {
        self.total - self.passed
    }

    /// Failures tolerated when at least `min_fraction` must pass, widened
    /// to the count that genuine data exceeds with probability below `tail`.
    pub fn allowed_failures(&self, min_fraction: f64, tail: f64) -> usize {
        let alpha = self.reports.first().map_or(0.0, |r| r.alpha);
        let by_fraction = ((1.0 - min_fraction) * self.total as f64 + 1e-9).floor() as usize;
        by_fraction.max(binomial_failure_allowance(self.total, alpha, tail))
    }
}

/// Smallest `k` with `P(Binomial(n, alpha) > k) < tail`.
pub fn binomial_failure_allowance(n: usize, alpha: f64, tail: f64) -> usize {
    if n == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return 0;
    }
    let dist = Binomial::new(alpha, n as u64).expect("alpha checked above");
    (0..n).find(|&k| dist.sf(k as u64) < tail).unwrap_or(n)
}

/// One-sample KS of each image's 1024 values against N(0, variance).
pub fn per_image_ks(images: &[GrayImage], variance: f64, alpha: f64) -> Result<BatchSummary> {
    let cdf = normal_cdf(0.0, variance);
    let reports = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let samples: Vec<f64> = img.values().iter().map(|&v| f64::from(v)).collect();
            let mut r = ks_one_sample(&samples, &cdf, alpha)?;
            r.test_name = format!("ks image {i}");
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchSummary::new("per-image ks", reports))
}

pub fn pooled_values(images: &[GrayImage]) -> Vec<f64> {
    images
        .iter()
        .flat_map(|img| img.values().iter().map(|&v| f64::from(v)))
        .collect()
}

pub fn pooled_ks(images: &[GrayImage], variance: f64, alpha: f64) -> Result<TestReport> {
    let mut r = ks_one_sample(&pooled_values(images), normal_cdf(0.0, variance), alpha)?;
    r.test_name = "pooled ks".into();
    Ok(r)
}

/// Chi-square over equal-probability bins: one bin per 50 samples, at most `max_bins`.
pub fn pooled_chi_square(images: &[GrayImage], variance: f64, alpha: f64, max_bins: usize) -> Result<TestReport> {
    let samples = pooled_values(images);
    let bins = (samples.len() / 50).clamp(2, max_bins.max(2));
    let edges = normal_equiprobable_edges(bins, variance)?;
    let mut r = chi_square_gof(&samples, &edges, normal_cdf(0.0, variance), alpha)?;
    r.test_name = format!("pooled chi-square ({bins} bins)");
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub report: TestReport,
    /// Dataset indices whose values are not a permutation of their draws.
    pub mismatches: Vec<usize>,
}

/// Regenerates each record's Gaussian draws from `(global_seed, rng_stream_id)`
/// and checks that the image holds exactly that multiset (bit-for-bit).
pub fn audit_permutation(images: &[GrayImage], manifest: &DatasetManifest) -> Result<AuditReport> {
    if images.len() != manifest.records.len() {
        return Err(Error::Structural(format!(
            "dataset has {} images but the manifest lists {} records",
            images.len(),
            manifest.records.len()
        )));
    }
    let variance = manifest.parameters.variance;
    let mut mismatches: Vec<usize> = manifest
        .records
        .par_iter()
        .zip(images.par_iter())
        .filter_map(|(record, image)| {
            let mut stream = derive_stream(manifest.global_seed, record.rng_stream_id);
            let gv = match gaussian_vector(&mut stream, variance) {
                Ok(gv) => gv,
                Err(_) => return Some(record.index),
            };
            let got = sort_desc(image.values());
            let same = got.len() == gv.sorted_desc().len()
                && got.iter().zip(gv.sorted_desc()).all(|(a, b)| a.to_bits() == b.to_bits());
            (!same).then_some(record.index)
        })
        .collect();
    mismatches.sort_unstable();
    let report = TestReport::new("permutation audit", mismatches.len() as f64, 1.0, 0.0, images.len());
    Ok(AuditReport { report, mismatches })
}

/// Histogram with a Gaussian density overlay, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Expected count per bin under N(0, variance): `n * bin_width * pdf(center)`.
    pub curve: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,count,curve\n");
        for ((c, n), y) in self.centers().iter().zip(&self.counts).zip(&self.curve) {
            writeln!(out, "{c},{n},{y}").expect("writing to a String");
        }
        out
    }
}

/// Bins of width `bin_width` centred on multiples of the width, spanning the
/// data range padded out to at least `+/-4 sigma`.
pub fn histogram_export(image: &GrayImage, bin_width: f64, variance: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Parameter(format!("bin width must be positive, got {bin_width}")));
    }
    if !(variance > 0.0) {
        return Err(Error::Parameter(format!("variance must be positive, got {variance}")));
    }
    let values: Vec<f64> = image.values().iter().map(|&v| f64::from(v)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("histogram input contains non-finite values".into()));
    }
    let sigma = variance.sqrt();
    let lo = values.iter().cloned().fold(-4.0 * sigma, f64::min);
    let hi = values.iter().cloned().fold(4.0 * sigma, f64::max);
    let bin_of = |v: f64| (v / bin_width + 0.5).floor() as i64;
    let (k0, k1) = (bin_of(lo), bin_of(hi));
    let bins = (k1 - k0 + 1) as usize;
    let mut counts = vec![0usize; bins];
    for &v in &values {
        counts[(bin_of(v) - k0) as usize] += 1;
    }
    let edges: Vec<f64> = (0..=bins).map(|k| ((k0 + k as i64) as f64 - 0.5) * bin_width).collect();
    let n = values.len() as f64;
    let density = |x: f64| (-x * x / (2.0 * variance)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let curve = (0..bins)
        .map(|k| n * bin_width * density((k0 + k as i64) as f64 * bin_width))
        .collect();
    Ok(Histogram { edges, counts, curve })
}
