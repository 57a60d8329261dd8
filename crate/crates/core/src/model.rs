//! Domain types shared across the pipeline.
//!
//! Every image type is row-major with `(row, col)` addressing and the origin
//! at the top-left, matching the IDX layout. Types are immutable once built.

use serde::{Deserialize, Serialize};

use crate::dataset::GenerationParams;
use crate::error::{Error, Result};

/// Side length of every synthetic image.
pub const SYNTH_SIDE: usize = 32;
/// Number of pixels (and Gaussian draws) per synthetic image.
pub const SYNTH_PIXELS: usize = SYNTH_SIDE * SYNTH_SIDE;
pub const NUM_CLASSES: u8 = 10;

fn check_len(len: usize, width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Structural(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if len != width * height {
        return Err(Error::Structural(format!(
            "buffer length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

/// Real-valued grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_len(values.len(), width, height)?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Image over {background = false, foreground = true}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_len(bits.len(), width, height)?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground as 255 and background as 0.
    pub fn to_gray(&self) -> GrayImage {
        let values = self
            .bits
            .iter()
            .map(|&b| if b { 255.0 } else { 0.0 })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

/// One of the four mask regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Outside,
    OutsideBoundary,
    InsideBoundary,
    Inside,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::Outside,
        Region::OutsideBoundary,
        Region::InsideBoundary,
        Region::Inside,
    ];

    /// Order in which the descending-sorted Gaussian vector is split, and in
    /// which regions consume the random stream during placement.
    pub const FILL_ORDER: [Region; 4] = [
        Region::Outside,
        Region::InsideBoundary,
        Region::OutsideBoundary,
        Region::Inside,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Outside => "outside",
            Region::OutsideBoundary => "outside-boundary",
            Region::InsideBoundary => "inside-boundary",
            Region::Inside => "inside",
        }
    }

    pub fn is_foreground(self) -> bool {
        matches!(self, Region::InsideBoundary | Region::Inside)
    }
}

/// Four disjoint position sets covering a grid, stored as one label per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    width: usize,
    height: usize,
    labels: Vec<Region>,
    /// Indexed by [`Region::index`].
    region_sizes: [usize; 4],
}

impl RegionPartition {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> Region {
        self.labels[row * self.width + col]
    }

    pub fn size(&self, region: Region) -> usize {
        self.region_sizes[region.index()]
    }

    /// Sizes in the order outside, outside-boundary, inside-boundary, inside.
    pub fn region_sizes(&self) -> [usize; 4] {
        self.region_sizes
    }

    /// Row-major flat indices of every position carrying `region`.
    pub fn positions(&self, region: Region) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == region)
            .map(|(i, _)| i)
            .collect()
    }

    /// Binary image whose foreground is exactly `region`.
    pub fn region_mask(&self, region: Region) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == region).collect(),
        }
    }
}

pub fn partition_from_labels(
    labels: Vec<Region>,
    width: usize,
    height: usize,
) -> Result<RegionPartition> {
    check_len(labels.len(), width, height)?;
    let mut region_sizes = [0usize; 4];
    for l in &labels {
        region_sizes[l.index()] += 1;
    }
    Ok(RegionPartition {
        width,
        height,
        labels,
        region_sizes,
    })
}

/// The Gaussian draws behind one synthetic image, raw and sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVector {
    raw: Vec<f32>,
    sorted_desc: Vec<f32>,
}

impl GaussianVector {
    pub fn from_raw(raw: Vec<f32>) -> Result<Self> {
        if raw.len() != SYNTH_PIXELS {
            return Err(Error::Structural(format!(
                "gaussian vector needs {SYNTH_PIXELS} values, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("gaussian vector contains non-finite values".into()));
        }
        let sorted_desc = sort_desc(&raw);
        Ok(Self { raw, sorted_desc })
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    pub fn sorted_desc(&self) -> &[f32] {
        &self.sorted_desc
    }
}

pub(crate) fn sort_desc(values: &[f32]) -> Vec<f32> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Metadata for one dataset image. The pixels live in the image store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub index: usize,
    pub label: u8,
    pub split: Split,
    pub source_id: String,
    pub rng_stream_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: u8,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSource {
    pub class: u8,
    pub source_id: String,
    pub reason: String,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Everything needed to regenerate a dataset bit-for-bit from its sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub global_seed: u64,
    pub rng_algorithm: String,
    pub parameters: GenerationParams,
    pub counts: Vec<ClassCount>,
    pub rejected: Vec<RejectedSource>,
    pub records: Vec<DatasetRecord>,
}

impl DatasetManifest {
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}
