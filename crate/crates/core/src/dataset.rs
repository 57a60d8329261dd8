//! Dataset assembly: scan sources per class, build masks, synthesize every
//! record on its own indexed stream, and write or regenerate the result.
//!
//! Record order is all train records (class by class, ascending), then all
//! test records in the same class order. Record `i` uses stream id `i`, so the
//! pixels do not depend on scheduling or on the number of workers.

use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{analyze, BoundaryParams, EdgeMap};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    BinaryImage, ClassCount, DatasetManifest, DatasetRecord, GrayImage, RegionPartition, RejectedSource, Split,
    MANIFEST_FORMAT_VERSION, NUM_CLASSES,
};
use crate::preprocessing::{preprocess, PreprocessParams, Preprocessed};
use crate::randomness::{derive_stream, ALGORITHM_TAG};
use crate::source::SourceProvider;
use crate::synthesis::synthesize_image;

pub const DEFAULT_VARIANCE: f64 = 1024.0;
pub const DEFAULT_TRAIN_PER_CLASS: usize = 6_000;
pub const DEFAULT_TEST_PER_CLASS: usize = 1_000;
pub const DOWNSAMPLE_RULE: &str = "majority-2x2-ties-foreground";

/// Everything that affects pixel values, recorded verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub variance: f64,
    pub preprocess: PreprocessParams,
    pub downsample: String,
    pub boundary: BoundaryParams,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            variance: DEFAULT_VARIANCE,
            preprocess: PreprocessParams::default(),
            downsample: DOWNSAMPLE_RULE.to_string(),
            boundary: BoundaryParams::default(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Parameter(format!("variance must be positive, got {}", self.variance)));
        }
        if self.downsample != DOWNSAMPLE_RULE {
            return Err(Error::Parameter(format!("unsupported downsample rule {:?}", self.downsample)));
        }
        self.boundary.canny.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub global_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub classes: Vec<u8>,
    pub params: GenerationParams,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            train_per_class: DEFAULT_TRAIN_PER_CLASS,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            classes: (0..NUM_CLASSES).collect(),
            params: GenerationParams::default(),
        }
    }
}

impl BuildConfig {
    /// Sorted, de-duplicated classes, or an error if none or out of range.
    pub fn normalized_classes(&self) -> Result<Vec<u8>> {
        let mut classes = self.classes.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Parameter("at least one class is required".into()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= NUM_CLASSES) {
            return Err(Error::Parameter(format!("class {bad} is outside 0..=9")));
        }
        Ok(classes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Keep each record's 32x32 mask and partition in the output.
    pub keep_masks: bool,
}


/// Every intermediate of the mask pipeline for one source image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTrace {
    pub preprocessed: Preprocessed,
    pub edges: EdgeMap,
    pub partition: RegionPartition,
}

impl MaskTrace {
    /// The 32x32 binary digit the partition was built from.
    pub fn binary(&self) -> &BinaryImage {
        &self.preprocessed.reduced
    }
}

pub fn trace_source(image: &GrayImage, params: &GenerationParams) -> Result<MaskTrace> {
    let preprocessed = preprocess(image, &params.preprocess)?;
    let (edges, partition) = analyze(&preprocessed.reduced, &params.boundary)?;
    Ok(MaskTrace {
        preprocessed,
        edges,
        partition,
    })
}

/// Pixel data aligned with `manifest.records`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> (Vec<&GrayImage>, Vec<u8>) {
        self.manifest
            .records
            .iter()
            .zip(&self.images)
            .filter(|(r, _)| r.split == split)
            .map(|(r, img)| (img, r.label))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordMask {
    pub binary: BinaryImage,
    pub partition: RegionPartition,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: Dataset,
    /// Present when [`BuildOptions::keep_masks`] is set; aligned with the records.
    pub masks: Option<Vec<RecordMask>>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {jobs} workers: {e}")))
}

struct Accepted {
    source_id: String,
    mask: RecordMask,
}

/// Walks `class`'s sources in order and keeps the first `needed` usable ones.
/// Masks are computed in parallel batches; acceptance is sequential.
fn collect_class(
    source: &dyn SourceProvider,
    class: u8,
    needed: usize,
    params: &GenerationParams,
    rejected: &mut Vec<RejectedSource>,
) -> Result<Vec<Accepted>> {
    let ids = source.source_ids(class);
    let mut accepted = Vec::with_capacity(needed);
    let mut cursor = 0;
    while accepted.len() < needed && cursor < ids.len() {
        let remaining = needed - accepted.len();
        let batch_len = (remaining + remaining / 8 + 16).min(ids.len() - cursor);
        let batch = &ids[cursor..cursor + batch_len];
        let traces: Vec<Result<MaskTrace>> = batch
            .par_iter()
            .map(|id| source.load(id).and_then(|img| trace_source(&img, params)))
            .collect();
        for (id, trace) in batch.iter().zip(traces) {
            cursor += 1;
            match trace {
                Ok(t) => accepted.push(Accepted {
                    source_id: id.clone(),
                    mask: RecordMask {
                        binary: t.preprocessed.reduced,
                        partition: t.partition,
                    },
                }),
                Err(e) => {
                    warn!("class {class}: rejecting source {id}: {e}");
                    rejected.push(RejectedSource {
                        class,
                        source_id: id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            if accepted.len() == needed {
                break;
            }
        }
    }
    if accepted.len() < needed {
        return Err(Error::SourceExhausted {
            class,
            needed,
            found: accepted.len(),
        });
    }
    Ok(accepted)
}

pub fn build(config: &BuildConfig, source: &dyn SourceProvider, options: BuildOptions) -> Result<BuildOutput> {
    config.params.validate()?;
    let classes = config.normalized_classes()?;
    let pool = thread_pool(options.jobs)?;
    pool.install(|| build_in_pool(config, &classes, source, options))
}

fn build_in_pool(
    config: &BuildConfig,
    classes: &[u8],
    source: &dyn SourceProvider,
    options: BuildOptions,
) -> Result<BuildOutput> {
    let needed = config.train_per_class + config.test_per_class;
    let mut rejected = Vec::new();
    let mut per_class = Vec::with_capacity(classes.len());
    for &class in classes {
        per_class.push(collect_class(source, class, needed, &config.params, &mut rejected)?);
    }

    let mut records = Vec::with_capacity(needed * classes.len());
    let mut masks = Vec::with_capacity(records.capacity());
    for (split, range) in [
        (Split::Train, 0..config.train_per_class),
        (Split::Test, config.train_per_class..needed),
    ] {
        for (&class, accepted) in classes.iter().zip(&per_class) {
            for a in &accepted[range.clone()] {
                let index = records.len();
                records.push(DatasetRecord {
                    index,
                    label: class,
                    split,
                    source_id: a.source_id.clone(),
                    rng_stream_id: index as u64,
                });
                masks.push(a.mask.clone());
            }
        }
    }

    let images = synthesize_all(config.global_seed, config.params.variance, &records, &masks)?;
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        global_seed: config.global_seed,
        rng_algorithm: ALGORITHM_TAG.to_string(),
        parameters: config.params.clone(),
        counts: classes
            .iter()
            .map(|&class| ClassCount {
                class,
                train: config.train_per_class,
                test: config.test_per_class,
            })
            .collect(),
        rejected,
        records,
    };
    Ok(BuildOutput {
        dataset: Dataset { manifest, images },
        masks: options.keep_masks.then_some(masks),
    })
}

fn synthesize_all(
    seed: u64,
    variance: f64,
    records: &[DatasetRecord],
    masks: &[RecordMask],
) -> Result<Vec<GrayImage>> {
    records
        .par_iter()
        .zip(masks.par_iter())
        .map(|(record, mask)| {
            let mut stream = derive_stream(seed, record.rng_stream_id);
            synthesize_image(&mask.partition, &mut stream, variance).map(|(img, _)| img)
        })
        .collect()
}

/// Rebuilds the image store described by `manifest` from its sources.
pub fn regenerate(manifest: &DatasetManifest, source: &dyn SourceProvider, jobs: usize) -> Result<Vec<GrayImage>> {
    if manifest.rng_algorithm != ALGORITHM_TAG {
        return Err(Error::Regeneration(format!(
            "manifest uses generator {:?}, this build provides {ALGORITHM_TAG:?}",
            manifest.rng_algorithm
        )));
    }
    manifest.parameters.validate()?;
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        let masks: Vec<RecordMask> = manifest
            .records
            .par_iter()
            .map(|r| {
                let img = source
                    .load(&r.source_id)
                    .map_err(|e| Error::Regeneration(format!("record {}: {e}", r.index)))?;
                let t = trace_source(&img, &manifest.parameters)
                    .map_err(|e| Error::Regeneration(format!("record {} ({}): {e}", r.index, r.source_id)))?;
                Ok(RecordMask {
                    binary: t.preprocessed.reduced,
                    partition: t.partition,
                })
            })
            .collect::<Result<_>>()?;
        synthesize_all(manifest.global_seed, manifest.parameters.variance, &manifest.records, &masks)
    })
}

/// Writes float IDX, labels, the lossy u8 IDX and the manifest into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let quantizer = io::Quantizer::for_variance(dataset.manifest.parameters.variance);
    for (split, images_f, images_u8, labels_file) in [
        (Split::Train, io::TRAIN_IMAGES_FLOAT, io::TRAIN_IMAGES_U8, io::TRAIN_LABELS),
        (Split::Test, io::TEST_IMAGES_FLOAT, io::TEST_IMAGES_U8, io::TEST_LABELS),
    ] {
        let (images, labels) = dataset.split(split);
        let images: Vec<GrayImage> = images.into_iter().cloned().collect();
        io::write_idx_float(&images, &dir.join(images_f))?;
        io::write_idx_u8(&images, &dir.join(images_u8), &quantizer)?;
        io::write_idx_labels(&labels, &dir.join(labels_file))?;
    }
    io::write_manifest(&dataset.manifest, &dir.join(io::MANIFEST_FILE))
}

/// Reads a dataset directory written by [`write_dataset`] (float data only).
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = io::read_manifest(&dir.join(io::MANIFEST_FILE))?;
    let mut by_split = Vec::new();
    for (split, images_f, labels_file) in [
        (Split::Train, io::TRAIN_IMAGES_FLOAT, io::TRAIN_LABELS),
        (Split::Test, io::TEST_IMAGES_FLOAT, io::TEST_LABELS),
    ] {
        let images = io::read_idx_float(&dir.join(images_f))?;
        let labels = io::read_idx_labels(&dir.join(labels_file))?;
        let expected: Vec<u8> = manifest.split_records(split).map(|r| r.label).collect();
        if images.len() != expected.len() || labels != expected {
            return Err(Error::Structural(format!(
                "{split:?} files hold {} images / {} labels but the manifest lists {} records",
                images.len(),
                labels.len(),
                expected.len()
            )));
        }
        by_split.push((split, images.into_iter()));
    }
    let mut images = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let (_, iter) = by_split
            .iter_mut()
            .find(|(s, _)| *s == record.split)
            .expect("both splits loaded");
        images.push(iter.next().expect("lengths checked"));
    }
    Ok(Dataset { manifest, images })
}
